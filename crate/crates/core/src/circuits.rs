//! Gate-level building blocks: plaquette phases, transverse rotations,
//! ground-state preparation, Wilson operators and conditional evolution.
//!
//! Link `l` of the lattice is qubit `l`. Anything else (plaquette ancilla,
//! phase-estimation control) lives above the link block.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, LoopSpec};
use crate::statevector::{rx_matrix, GateOp, StateVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CircuitMode {
    /// CNOT ladder onto an ancilla, `Rz` on the ancilla, ladder back.
    GateFaithful,
    /// The same diagonal phase applied in one pass over the register.
    #[default]
    FusedDiagonal,
}

fn check_links(state: &StateVector, lat: &Lattice) -> Result<()> {
    if state.num_qubits() < lat.num_links() {
        return Err(Error::InsufficientQubits {
            needed: lat.num_links(),
            have: state.num_qubits(),
        });
    }
    Ok(())
}

fn check_extra(state: &StateVector, lat: &Lattice, q: usize) -> Result<()> {
    if q < lat.num_links() {
        return Err(Error::AncillaOverlap(q));
    }
    if q >= state.num_qubits() {
        return Err(Error::QubitOutOfRange {
            index: q,
            num_qubits: state.num_qubits(),
        });
    }
    Ok(())
}

fn cnot_ladder(state: &mut StateVector, links: &[usize], ancilla: usize) -> Result<()> {
    for &l in links {
        state.apply_gate(GateOp::Cnot {
            control: l,
            target: ancilla,
        })?;
    }
    Ok(())
}

/// `exp(-i theta Z_p)` for plaquette `p`, with the sign of `theta` reversed
/// when the ancilla holds `|1>`.
pub fn evolve_plaquette(
    state: &mut StateVector,
    lat: &Lattice,
    plaquette: usize,
    theta: f64,
    ancilla: usize,
    mode: CircuitMode,
) -> Result<()> {
    check_links(state, lat)?;
    let plaq = lat
        .plaquettes()
        .get(plaquette)
        .ok_or_else(|| Error::InvalidGeometry(format!("no plaquette {plaquette}")))?;
    if plaq.links.contains(&ancilla) {
        return Err(Error::AncillaOverlap(ancilla));
    }
    check_extra(state, lat, ancilla)?;
    match mode {
        CircuitMode::GateFaithful => {
            cnot_ladder(state, &plaq.links, ancilla)?;
            state.apply_gate(GateOp::Rz {
                target: ancilla,
                angle: -2.0 * theta,
            })?;
            let mut rev = plaq.links;
            rev.reverse();
            cnot_ladder(state, &rev, ancilla)
        }
        CircuitMode::FusedDiagonal => {
            let mask = lat.plaquette_mask(plaquette) | (1 << ancilla);
            let table = [
                Complex64::from_polar(1.0, theta),
                Complex64::from_polar(1.0, -theta),
            ];
            state.apply_diagonal(|i| ((i & mask).count_ones() & 1) as usize, &table);
            Ok(())
        }
    }
}

/// `exp(-i theta Z)` over all plaquettes, in ascending plaquette order.
///
/// `parity` names a qubit that reverses the sign of `theta` when set: the
/// ancilla in gate-faithful mode (required there), any qubit or none in
/// fused mode.
pub fn evolve_plaquettes(
    state: &mut StateVector,
    lat: &Lattice,
    theta: f64,
    parity: Option<usize>,
    mode: CircuitMode,
) -> Result<()> {
    check_links(state, lat)?;
    match mode {
        CircuitMode::GateFaithful => {
            let ancilla = parity.ok_or(Error::InsufficientQubits {
                needed: lat.num_links() + 1,
                have: state.num_qubits(),
            })?;
            for p in 0..lat.num_plaquettes() {
                evolve_plaquette(state, lat, p, theta, ancilla, mode)?;
            }
            Ok(())
        }
        CircuitMode::FusedDiagonal => {
            if let Some(q) = parity {
                check_extra(state, lat, q)?;
            }
            let np = lat.num_plaquettes();
            // Entry f (+ np + 1 when the parity bit is set) is the phase for
            // f odd plaquettes.
            let mut table = Vec::with_capacity(2 * (np + 1));
            for sign in [1.0, -1.0] {
                for f in 0..=np {
                    let z = 2.0 * f as f64 - np as f64;
                    table.push(Complex64::from_polar(1.0, -sign * theta * z));
                }
            }
            let counts = lat.flip_counts();
            let lmask = lat.link_mask();
            let pbit = parity.map_or(0, |q| 1usize << q);
            state.apply_diagonal(
                |i| counts[i & lmask] as usize + if i & pbit != 0 { np + 1 } else { 0 },
                &table,
            );
            Ok(())
        }
    }
}

/// `exp(-i g X dt)` with `X = -sum sigma^x`: `Rx(-2 g dt)` on every link.
pub fn evolve_transverse(state: &mut StateVector, lat: &Lattice, g: f64, dt: f64) -> Result<()> {
    check_links(state, lat)?;
    if !dt.is_finite() || !g.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite rotation g={g} dt={dt}"
        )));
    }
    state.apply_uniform(&lat.links(), rx_matrix(-2.0 * g * dt))
}

/// Projects the uniform superposition onto `Z_p = -1` for every plaquette.
/// Gate-faithful mode measures each plaquette parity onto `ancilla` and
/// keeps outcome 0; fused mode projects directly.
pub fn prepare_z_ground(
    state: &mut StateVector,
    lat: &Lattice,
    ancilla: Option<usize>,
    mode: CircuitMode,
) -> Result<()> {
    check_links(state, lat)?;
    state.hadamard_all(&lat.links())?;
    match mode {
        CircuitMode::GateFaithful => {
            let ancilla = ancilla.ok_or(Error::InsufficientQubits {
                needed: lat.num_links() + 1,
                have: state.num_qubits(),
            })?;
            check_extra(state, lat, ancilla)?;
            for plaq in lat.plaquettes() {
                cnot_ladder(state, &plaq.links, ancilla)?;
                state.collapse(ancilla, 0)?;
                let mut rev = plaq.links;
                rev.reverse();
                cnot_ladder(state, &rev, ancilla)?;
            }
            Ok(())
        }
        CircuitMode::FusedDiagonal => {
            let counts = lat.flip_counts();
            let lmask = lat.link_mask();
            let table = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
            state.apply_diagonal(|i| usize::from(counts[i & lmask] != 0), &table);
            state.normalize().map(|_| ())
        }
    }
}

/// All links in `|+>`, the ground state of `X`.
pub fn prepare_x_ground(state: &mut StateVector, lat: &Lattice) -> Result<()> {
    check_links(state, lat)?;
    state.hadamard_all(&lat.links())
}

/// Applies `prod_{l in loop} sigma^z_l`.
pub fn apply_wilson(state: &mut StateVector, contour: &LoopSpec) -> Result<()> {
    let mask = state.mask_of(&contour.links)?;
    state.apply_parity_sign(mask);
    Ok(())
}

/// Controlled-Z between `control` and every link.
fn cz_links(
    state: &mut StateVector,
    lat: &Lattice,
    control: usize,
    mode: CircuitMode,
) -> Result<()> {
    match mode {
        CircuitMode::GateFaithful => {
            for l in lat.links() {
                state.apply_all(&[
                    GateOp::Hadamard(l),
                    GateOp::Cnot { control, target: l },
                    GateOp::Hadamard(l),
                ])?;
            }
        }
        CircuitMode::FusedDiagonal => {
            let lmask = lat.link_mask();
            let cbit = 1usize << control;
            let table = [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)];
            state.apply_diagonal(
                |i| usize::from(i & cbit != 0 && (i & lmask).count_ones() & 1 == 1),
                &table,
            );
        }
    }
    Ok(())
}

fn conditional_z(
    state: &mut StateVector,
    lat: &Lattice,
    theta: f64,
    control: usize,
    ancilla: Option<usize>,
    mode: CircuitMode,
) -> Result<()> {
    match mode {
        CircuitMode::GateFaithful => {
            let a = ancilla.ok_or(Error::InsufficientQubits {
                needed: lat.num_links() + 2,
                have: state.num_qubits(),
            })?;
            let flip = GateOp::Cnot { control, target: a };
            state.apply_gate(flip)?;
            evolve_plaquettes(state, lat, theta, Some(a), mode)?;
            state.apply_gate(flip)
        }
        CircuitMode::FusedDiagonal => evolve_plaquettes(state, lat, theta, Some(control), mode),
    }
}

fn conditional_x(
    state: &mut StateVector,
    lat: &Lattice,
    g: f64,
    dt: f64,
    control: usize,
    mode: CircuitMode,
) -> Result<()> {
    cz_links(state, lat, control, mode)?;
    evolve_transverse(state, lat, g, dt)?;
    cz_links(state, lat, control, mode)
}

/// Symmetric Trotter approximation of `exp(-i H t)` when `control` is `|0>`
/// and `exp(+i H t)` when it is `|1>`, with `H = Z + g X`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_evolution(
    state: &mut StateVector,
    lat: &Lattice,
    g: f64,
    t: f64,
    n_steps: usize,
    control: usize,
    ancilla: Option<usize>,
    mode: CircuitMode,
) -> Result<()> {
    check_links(state, lat)?;
    check_extra(state, lat, control)?;
    if let Some(a) = ancilla {
        check_extra(state, lat, a)?;
        if a == control {
            return Err(Error::ControlIsTarget(a));
        }
    }
    if n_steps == 0 {
        return Err(Error::InvalidSchedule(
            "conditional evolution needs n_steps >= 1".into(),
        ));
    }
    let dt = t / n_steps as f64;
    conditional_z(state, lat, dt / 2.0, control, ancilla, mode)?;
    for step in 0..n_steps {
        conditional_x(state, lat, g, dt, control, mode)?;
        let theta = if step + 1 == n_steps { dt / 2.0 } else { dt };
        conditional_z(state, lat, theta, control, ancilla, mode)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    pub energy: f64,
    pub resolution: f64,
    /// Bits of the phase fraction, most significant first.
    pub bits: Vec<u8>,
    /// Smallest control-qubit coherence seen over all rounds. An
    /// eigenstate keeps it at 1 up to Trotter error.
    pub min_visibility: f64,
    pub multimodal: bool,
}

/// Visibility below which the input is reported as a superposition of
/// eigenstates.
pub const MULTIMODAL_VISIBILITY: f64 = 0.9;

/// Iterative single-control phase estimation of `H = Z + g X`.
///
/// `state` holds exactly the link qubits. Round `j` (least significant bit
/// first) runs the controlled evolution for `2^(j-1) t` with
/// `steps_per_t * 2^(j-1)` Trotter steps. The control picks up the relative
/// phase `exp(2 i E tau)`, so the energy is read as `pi * theta / t` with
/// `theta` in `[-1/2, 1/2)`.
pub fn phase_estimate(
    state: &StateVector,
    lat: &Lattice,
    g: f64,
    t: f64,
    precision_bits: usize,
    steps_per_t: usize,
    mode: CircuitMode,
) -> Result<PhaseEstimate> {
    if state.num_qubits() != lat.num_links() {
        return Err(Error::InvalidInput(format!(
            "phase estimation expects a {}-qubit link register, got {}",
            lat.num_links(),
            state.num_qubits()
        )));
    }
    if precision_bits == 0 || precision_bits > 20 || t <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "precision_bits={precision_bits}, t={t}"
        )));
    }
    let bound = lat.num_plaquettes() as f64 + g.abs() * lat.num_links() as f64;
    if bound * t >= PI / 2.0 {
        return Err(Error::PhaseWrap { bound, t });
    }
    let control = lat.num_links();
    let mut base = state.clone().append_zero_qubit()?;
    let ancilla = match mode {
        CircuitMode::GateFaithful => {
            base = base.append_zero_qubit()?;
            Some(control + 1)
        }
        CircuitMode::FusedDiagonal => None,
    };
    let cbit = 1usize << control;
    let mut bits = vec![0u8; precision_bits];
    let mut min_visibility = f64::INFINITY;
    for j in (1..=precision_bits).rev() {
        let reps = 1usize << (j - 1);
        let mut reg = base.clone();
        reg.apply_gate(GateOp::Hadamard(control))?;
        conditional_evolution(
            &mut reg,
            lat,
            g,
            t * reps as f64,
            steps_per_t * reps,
            control,
            ancilla,
            mode,
        )?;
        let amps = reg.amplitudes();
        let coherence: Complex64 = (0..amps.len())
            .filter(|i| i & cbit == 0)
            .map(|i| amps[i].conj() * amps[i | cbit])
            .sum();
        min_visibility = min_visibility.min(2.0 * coherence.norm());
        let tail: f64 = ((j + 1)..=precision_bits)
            .map(|l| bits[l - 1] as f64 * 0.5f64.powi((l - j + 1) as i32))
            .sum();
        reg.apply_gate(GateOp::Rz {
            target: control,
            angle: -2.0 * PI * tail,
        })?;
        reg.apply_gate(GateOp::Hadamard(control))?;
        bits[j - 1] = u8::from(reg.prob_zero(control)? < 0.5);
    }
    let mut theta: f64 = bits
        .iter()
        .enumerate()
        .map(|(k, &b)| b as f64 * 0.5f64.powi(k as i32 + 1))
        .sum();
    if theta >= 0.5 {
        theta -= 1.0;
    }
    Ok(PhaseEstimate {
        energy: PI * theta / t,
        resolution: PI / (t * (1u64 << precision_bits) as f64),
        bits,
        min_visibility,
        multimodal: min_visibility < MULTIMODAL_VISIBILITY,
    })
}
