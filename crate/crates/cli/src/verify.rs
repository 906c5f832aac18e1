//! Oracle-equivalence and invariant checks on the 2x2 torus.
//!
//! The Trotter-driven checks take the plaquette layer from an [`Engine`],
//! so a deliberately broken layer can be fed in to confirm they fail.

use std::ops::ControlFlow;

use serde::Serialize;
use z2sim::circuits::{evolve_plaquettes, evolve_transverse, phase_estimate, prepare_z_ground};
use z2sim::evolution::{run_adiabatic, RunOptions};
use z2sim::observables::{expect_plaquette_sum, fidelity, gauss_residual, thooft_values, Probe};
use z2sim::oracle::{
    exact_adiabatic, exact_evolve, ground_state, GroundStateOptions, SparseHamiltonian,
};
use z2sim::{AdiabaticSchedule, CircuitMode, DecompositionKind, Direction, Lattice, StateVector};

pub type ZLayer = fn(&mut StateVector, &Lattice, f64) -> z2sim::Result<()>;

#[derive(Clone, Copy)]
pub struct Engine {
    /// Applies `exp(-i theta Z)` to a link register.
    pub z_layer: ZLayer,
}

fn fused_layer(s: &mut StateVector, lat: &Lattice, theta: f64) -> z2sim::Result<()> {
    evolve_plaquettes(s, lat, theta, None, CircuitMode::FusedDiagonal)
}

impl Default for Engine {
    fn default() -> Self {
        Self {
            z_layer: fused_layer,
        }
    }
}

impl Engine {
    /// Symmetric substep `Z/2, gX, Z/2`.
    fn substep(&self, s: &mut StateVector, lat: &Lattice, g: f64, dt: f64) -> z2sim::Result<()> {
        (self.z_layer)(s, lat, dt / 2.0)?;
        evolve_transverse(s, lat, g, dt)?;
        (self.z_layer)(s, lat, dt / 2.0)
    }

    fn adiabatic(
        &self,
        s: &mut StateVector,
        lat: &Lattice,
        sch: &AdiabaticSchedule,
    ) -> z2sim::Result<()> {
        let dt = sch.t_step / sch.substeps as f64;
        for k in 1..=sch.num_steps {
            for m in 1..=sch.substeps {
                self.substep(s, lat, sch.coupling(k, m), dt)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> z2sim::Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult {
            name,
            passed,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn z_ground(lat: &Lattice) -> z2sim::Result<StateVector> {
    let mut s = StateVector::init_zero(lat.num_links())?;
    prepare_z_ground(&mut s, lat, None, CircuitMode::FusedDiagonal)?;
    Ok(s)
}

fn distance(a: &StateVector, b: &StateVector) -> f64 {
    a.amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn short_schedule() -> z2sim::Result<AdiabaticSchedule> {
    AdiabaticSchedule::new(
        0.5,
        0.05,
        0.5,
        40,
        DecompositionKind::Symmetric,
        Direction::ZToX,
    )
}

pub fn run_checks(engine: &Engine) -> Vec<CheckResult> {
    run_checks_with(engine, &GroundStateOptions::default())
}

/// Same as [`run_checks`] with explicit Lanczos settings.
pub fn run_checks_with(engine: &Engine, lanczos: &GroundStateOptions) -> Vec<CheckResult> {
    let lat = match Lattice::build(2, 2) {
        Ok(l) => l,
        Err(e) => {
            return vec![CheckResult {
                name: "lattice",
                passed: false,
                detail: e.to_string(),
            }]
        }
    };
    let lat = &lat;
    let mut out = Vec::new();

    out.push(check("hamiltonian-matvec", || {
        let h = SparseHamiltonian::build(lat, 0.7)?;
        let dense = h.dense()?;
        let x: Vec<f64> = (0..h.dimension())
            .map(|i| ((i * 29 % 97) as f64) / 97.0 - 0.5)
            .collect();
        let mut y = vec![0.0; x.len()];
        h.matvec(&x, &mut y);
        let dev = (0..x.len())
            .map(|i| {
                let d: f64 = (0..x.len()).map(|j| dense[(i, j)] * x[j]).sum();
                (d - y[i]).abs()
            })
            .fold(0.0, f64::max);
        Ok((dev <= 1e-12, format!("max deviation {dev:.1e}")))
    }));

    out.push(check("preparation", || {
        let s = z_ground(lat)?;
        let e = expect_plaquette_sum(&s, lat)?;
        let gauss = gauss_residual(&s, lat)?;
        let support = s.amplitudes().iter().filter(|a| a.norm() > 1e-12).count();
        let ok = (e + lat.num_plaquettes() as f64).abs() < 1e-12 && gauss < 1e-12 && support == 32;
        Ok((
            ok,
            format!("<Z> = {e}, gauss {gauss:.1e}, {support} amplitudes"),
        ))
    }));

    out.push(check("circuit-modes-agree", || {
        let sch = short_schedule()?;
        let mut fused = z_ground(lat)?;
        let mut gate = StateVector::init_zero(lat.num_links() + 1)?;
        prepare_z_ground(
            &mut gate,
            lat,
            Some(lat.num_links()),
            CircuitMode::GateFaithful,
        )?;
        let quiet = RunOptions {
            dos_every: 0,
            ..RunOptions::default()
        };
        run_adiabatic(&mut fused, lat, &sch, &quiet, |_| {
            Ok(ControlFlow::Continue(()))
        })?;
        let gate_opts = RunOptions {
            mode: CircuitMode::GateFaithful,
            ..quiet
        };
        run_adiabatic(&mut gate, lat, &sch, &gate_opts, |_| {
            Ok(ControlFlow::Continue(()))
        })?;
        let gate = gate.discard_top_qubit()?;
        let dev = fused.max_deviation(&gate);
        Ok((dev <= 1e-10, format!("max amplitude deviation {dev:.1e}")))
    }));

    out.push(check("trotter-vs-exact", || {
        let start = z_ground(lat)?;
        let (g, n) = (0.5, 64);
        let mut s = start.clone();
        for _ in 0..n {
            engine.substep(&mut s, lat, g, 1.0 / n as f64)?;
        }
        let exact = exact_evolve(&SparseHamiltonian::build(lat, g)?, &start, 1.0)?;
        let dev = distance(&s, &exact);
        Ok((
            dev <= 1e-3,
            format!("symmetric n = {n}: deviation {dev:.2e}"),
        ))
    }));

    out.push(check("piecewise-exact-adiabatic", || {
        let sch = short_schedule()?;
        let start = z_ground(lat)?;
        let mut s = start.clone();
        engine.adiabatic(&mut s, lat, &sch)?;
        let exact = exact_adiabatic(lat, &sch, &start)?;
        let dev = distance(&s, exact.last().expect("steps"));
        Ok((dev <= 1e-3, format!("deviation {dev:.2e}")))
    }));

    out.push(check("adiabatic-vs-ground-state", || {
        let sch = short_schedule()?;
        let mut s = z_ground(lat)?;
        engine.adiabatic(&mut s, lat, &sch)?;
        let gs = ground_state(lat, sch.g_final, lanczos)?;
        let f = fidelity(&s, &gs.to_state()?);
        let rec = Probe::new(lat)?.record(&s, lat, sch.g_final)?;
        let above = rec.expect_h >= gs.energy - 1e-9;
        Ok((
            f >= 0.99 && above,
            format!(
                "fidelity {f:.6}, <H> = {:.8} vs E0 = {:.8}",
                rec.expect_h, gs.energy
            ),
        ))
    }));

    out.push(check("gauge-and-sector", || {
        let sch = short_schedule()?;
        let mut s = z_ground(lat)?;
        engine.adiabatic(&mut s, lat, &sch)?;
        let gauss = gauss_residual(&s, lat)?;
        let v = thooft_values(&s, lat)?;
        let ok = gauss <= 1e-10 && v.iter().all(|x| (x - 1.0).abs() <= 1e-10);
        Ok((ok, format!("gauss {gauss:.1e}, 't Hooft {v:?}")))
    }));

    out.push(check("phase-estimation", || {
        let g = 0.3;
        let gs = ground_state(lat, g, lanczos)?;
        let state = gs.to_state()?;
        let t = 0.9 * std::f64::consts::FRAC_PI_2 / (4.0 + g * 8.0);
        let pe = phase_estimate(&state, lat, g, t, 8, 40, CircuitMode::FusedDiagonal)?;
        let err = (pe.energy - gs.energy).abs();
        Ok((
            err <= pe.resolution && !pe.multimodal,
            format!(
                "E = {:.6} vs {:.6}, resolution {:.1e}",
                pe.energy, gs.energy, pe.resolution
            ),
        ))
    }));

    out
}
