//! Stepwise adiabatic driver with first- and second-order Trotter splitting.
//!
//! Step `k` (1-based) runs `n` substeps of length `t_s / n`; substep `m`
//! uses coupling `(k - 1) g_s + m g_s / n`. Observables are taken after
//! every step, at coupling `k g_s`.

use std::io::{Read, Write};
use std::ops::ControlFlow;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuits::{evolve_plaquettes, evolve_transverse, CircuitMode};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::observables::{dos, Basis, DosHistogram, Probe, SweepRecord, SweepSeries};
use crate::statevector::StateVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecompositionKind {
    #[serde(rename = "asym")]
    Asymmetric,
    #[serde(rename = "sym")]
    Symmetric,
}

/// Which term is switched on. `XToZ` evolves `X + K Z` with `K` ramped
/// from zero; records then carry `g = 1 / K`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[default]
    #[serde(rename = "z-to-x")]
    ZToX,
    #[serde(rename = "x-to-z")]
    XToZ,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticSchedule {
    pub g_final: f64,
    pub g_step: f64,
    pub t_step: f64,
    pub substeps: usize,
    pub num_steps: usize,
    pub kind: DecompositionKind,
    pub direction: Direction,
}

impl AdiabaticSchedule {
    pub fn new(
        g_final: f64,
        g_step: f64,
        t_step: f64,
        substeps: usize,
        kind: DecompositionKind,
        direction: Direction,
    ) -> Result<Self> {
        if !(g_final > 0.0 && g_step > 0.0 && t_step > 0.0) || !g_final.is_finite() {
            return Err(Error::InvalidSchedule(format!(
                "need positive g_final, g_step and t_step (got {g_final}, {g_step}, {t_step})"
            )));
        }
        if substeps == 0 {
            return Err(Error::InvalidSchedule("substeps must be at least 1".into()));
        }
        let ratio = g_final / g_step;
        let num_steps = ratio.round();
        if num_steps < 1.0 || (ratio - num_steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidSchedule(format!(
                "g_final / g_step = {ratio} is not a positive integer"
            )));
        }
        Ok(Self {
            g_final,
            g_step,
            t_step,
            substeps,
            num_steps: num_steps as usize,
            kind,
            direction,
        })
    }

    /// Coupling increment per substep.
    pub fn delta(&self) -> f64 {
        self.g_step / self.substeps as f64
    }

    /// Coupling of substep `m` in step `k`, both 1-based.
    pub fn coupling(&self, k: usize, m: usize) -> f64 {
        (k - 1) as f64 * self.g_step + m as f64 * self.delta()
    }

    /// Ramped coupling at the end of step `k`.
    pub fn step_coupling(&self, k: usize) -> f64 {
        k as f64 * self.g_step
    }

    /// Coupling `g` of `H = Z + g X` that the state after step `k` targets.
    pub fn record_coupling(&self, k: usize) -> f64 {
        match self.direction {
            Direction::ZToX => self.step_coupling(k),
            Direction::XToZ => 1.0 / self.step_coupling(k),
        }
    }

    pub fn total_time(&self) -> f64 {
        self.num_steps as f64 * self.t_step
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub dim: usize,
    pub size: usize,
    pub schedule: AdiabaticSchedule,
}

/// Name, d, L, g_final, g_step, t_step, substeps, kind.
type PresetRow = (
    &'static str,
    usize,
    usize,
    f64,
    f64,
    f64,
    usize,
    DecompositionKind,
);

fn preset_table() -> Vec<PresetRow> {
    use DecompositionKind::*;
    vec![
        ("paper-d3-sym", 3, 2, 2.0, 0.001, 0.1, 200, Symmetric),
        ("paper-d2-sym", 2, 3, 2.0, 0.001, 0.2, 5000, Symmetric),
        ("paper-d3-asym", 3, 2, 2.0, 0.001, 0.01, 500, Asymmetric),
        ("paper-d2-asym", 2, 3, 2.0, 0.001, 0.02, 500, Asymmetric),
        ("desk-d2", 2, 3, 2.0, 0.01, 0.2, 100, Symmetric),
        ("desk-d3", 3, 2, 2.0, 0.02, 0.1, 50, Symmetric),
    ]
}

pub fn presets() -> Vec<Preset> {
    preset_table()
        .into_iter()
        .map(|(name, dim, size, gf, gs, ts, n, kind)| Preset {
            name,
            dim,
            size,
            schedule: AdiabaticSchedule::new(gf, gs, ts, n, kind, Direction::ZToX)
                .expect("preset schedules are valid"),
        })
        .collect()
}

pub fn preset(name: &str) -> Result<Preset> {
    presets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown preset {name:?}")))
}

/// Register layout shared by the Trotter kernels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Register {
    pub mode: CircuitMode,
    /// Plaquette ancilla, required in gate-faithful mode.
    pub ancilla: Option<usize>,
}

impl Register {
    /// Layout for a register holding the links plus, in gate-faithful mode,
    /// one ancilla directly above them.
    pub fn for_lattice(lat: &Lattice, mode: CircuitMode) -> Self {
        Self {
            mode,
            ancilla: (mode == CircuitMode::GateFaithful).then_some(lat.num_links()),
        }
    }

    pub fn num_qubits(&self, lat: &Lattice) -> usize {
        lat.num_links() + usize::from(self.ancilla.is_some())
    }

    fn z(&self, state: &mut StateVector, lat: &Lattice, theta: f64) -> Result<()> {
        evolve_plaquettes(state, lat, theta, self.ancilla, self.mode)
    }
}

fn apply_split(
    state: &mut StateVector,
    lat: &Lattice,
    reg: Register,
    direction: Direction,
    term: Term,
    coupling: f64,
    dt: f64,
) -> Result<()> {
    // `Term::Fixed` is the term whose coefficient stays 1.
    match (direction, term) {
        (Direction::ZToX, Term::Fixed) | (Direction::XToZ, Term::Ramped) => {
            reg.z(state, lat, coupling * dt)
        }
        (Direction::ZToX, Term::Ramped) | (Direction::XToZ, Term::Fixed) => {
            evolve_transverse(state, lat, coupling, dt)
        }
    }
}

#[derive(Clone, Copy)]
enum Term {
    Fixed,
    Ramped,
}

/// One Trotter substep of `exp(-i (A + g B) dt)`, where `A` is the fixed
/// term. Asymmetric: `B` first, then `A`. Symmetric: `A/2`, `B`, `A/2`.
#[allow(clippy::too_many_arguments)]
pub fn substep(
    state: &mut StateVector,
    lat: &Lattice,
    g: f64,
    dt: f64,
    kind: DecompositionKind,
    direction: Direction,
    reg: Register,
) -> Result<()> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::InvalidSchedule(format!("substep length {dt}")));
    }
    match kind {
        DecompositionKind::Asymmetric => {
            apply_split(state, lat, reg, direction, Term::Ramped, g, dt)?;
            apply_split(state, lat, reg, direction, Term::Fixed, 1.0, dt)
        }
        DecompositionKind::Symmetric => {
            apply_split(state, lat, reg, direction, Term::Fixed, 1.0, dt / 2.0)?;
            apply_split(state, lat, reg, direction, Term::Ramped, g, dt)?;
            apply_split(state, lat, reg, direction, Term::Fixed, 1.0, dt / 2.0)
        }
    }
}

/// All substeps of step `k`. In the symmetric case adjacent half steps of
/// the fixed term are merged, so a step costs `n + 1` fixed-term layers.
pub fn run_step(
    state: &mut StateVector,
    lat: &Lattice,
    schedule: &AdiabaticSchedule,
    k: usize,
    reg: Register,
) -> Result<()> {
    let n = schedule.substeps;
    let dt = schedule.t_step / n as f64;
    let dir = schedule.direction;
    match schedule.kind {
        DecompositionKind::Asymmetric => {
            for m in 1..=n {
                substep(
                    state,
                    lat,
                    schedule.coupling(k, m),
                    dt,
                    schedule.kind,
                    dir,
                    reg,
                )?;
            }
        }
        DecompositionKind::Symmetric => {
            apply_split(state, lat, reg, dir, Term::Fixed, 1.0, dt / 2.0)?;
            for m in 1..=n {
                apply_split(
                    state,
                    lat,
                    reg,
                    dir,
                    Term::Ramped,
                    schedule.coupling(k, m),
                    dt,
                )?;
                let len = if m == n { dt / 2.0 } else { dt };
                apply_split(state, lat, reg, dir, Term::Fixed, 1.0, len)?;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub mode: CircuitMode,
    /// Record both densities of states every this many steps; 0 disables.
    pub dos_every: usize,
    /// Steps already completed (resume point).
    pub start_step: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: CircuitMode::FusedDiagonal,
            dos_every: 10,
            start_step: 0,
        }
    }
}

/// What the observer sees after each step.
pub struct StepReport<'a> {
    pub step: usize,
    pub record: &'a SweepRecord,
    pub dos: Option<&'a [DosHistogram; 2]>,
    pub state: &'a StateVector,
}

/// Runs steps `start_step + 1 ..= N_s`, recording observables after each.
///
/// The observer may stop the run early with `ControlFlow::Break`; an
/// observer error aborts the run with [`Error::Aborted`] naming the last
/// completed step.
pub fn run_adiabatic<F>(
    state: &mut StateVector,
    lat: &Lattice,
    schedule: &AdiabaticSchedule,
    opts: &RunOptions,
    mut observer: F,
) -> Result<SweepSeries>
where
    F: FnMut(&StepReport<'_>) -> Result<ControlFlow<()>>,
{
    let reg = Register::for_lattice(lat, opts.mode);
    if state.num_qubits() != reg.num_qubits(lat) {
        return Err(Error::InsufficientQubits {
            needed: reg.num_qubits(lat),
            have: state.num_qubits(),
        });
    }
    if opts.start_step > schedule.num_steps {
        return Err(Error::InvalidSchedule(format!(
            "start step {} beyond {} steps",
            opts.start_step, schedule.num_steps
        )));
    }
    let probe = Probe::new(lat)?;
    let mut series = SweepSeries::default();
    for k in opts.start_step + 1..=schedule.num_steps {
        run_step(state, lat, schedule, k, reg)?;
        let g = schedule.record_coupling(k);
        let record = probe.record(state, lat, g)?;
        let hists = if opts.dos_every > 0 && k % opts.dos_every == 0 {
            Some([dos(state, lat, Basis::Z, g)?, dos(state, lat, Basis::X, g)?])
        } else {
            None
        };
        let flow = observer(&StepReport {
            step: k,
            record: &record,
            dos: hists.as_ref(),
            state,
        })
        .map_err(|e| Error::Aborted {
            last_completed_step: k,
            source: Box::new(e),
        })?;
        series.records.push(record);
        if let Some(h) = hists {
            series.dos.extend(h);
        }
        if flow.is_break() {
            break;
        }
    }
    Ok(series)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    /// Closed-form total including sub-leading terms.
    pub total: f64,
    /// Leading term only.
    pub leading: f64,
    /// Single-substep bound at the final coupling.
    pub per_substep_max: f64,
}

/// Order-of-magnitude Trotter error accumulated over a whole schedule.
pub fn error_bound(schedule: &AdiabaticSchedule, lat: &Lattice) -> ErrorEstimate {
    let ns = schedule.num_steps as f64;
    let n = schedule.substeps as f64;
    let gs = schedule.g_step;
    let ts = schedule.t_step;
    let np = lat.num_plaquettes() as f64;
    let d = lat.dim() as f64;
    let gf = schedule.g_final;
    match schedule.kind {
        DecompositionKind::Asymmetric => ErrorEstimate {
            total: (ns * ns + ns / n) * np * gs * ts * ts / n,
            leading: ns * ns * np * gs * ts * ts / n,
            per_substep_max: 2.0 * gf * np * (ts / n).powi(2),
        },
        DecompositionKind::Symmetric => ErrorEstimate {
            total: ((d - 1.0) / 6.0 * ns * ns * gs + 4.0 / 9.0 * ns.powi(3) * gs * gs)
                * np
                * ts.powi(3)
                / (n * n),
            leading: 4.0 / 9.0 * ns.powi(3) * np * gs * gs * ts.powi(3) / (n * n),
            per_substep_max: ((d - 1.0) * gf + 4.0 * gf * gf) / 3.0 * np * (ts / n).powi(3),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCheck {
    pub regime: String,
    pub gap: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticityReport {
    /// `dg/dt = g_s / t_s`.
    pub rate: f64,
    pub checks: Vec<GapCheck>,
    pub warnings: Vec<String>,
}

impl AdiabaticityReport {
    pub fn all_pass(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Compares the drive rate with the squared gap in three regimes: 4 at
/// weak coupling, `8 g_f` at strong coupling and 0.5 near the transition.
/// Only reports; never fails.
pub fn adiabaticity_report(schedule: &AdiabaticSchedule) -> AdiabaticityReport {
    let rate = if schedule.t_step > 0.0 {
        schedule.g_step / schedule.t_step
    } else {
        f64::INFINITY
    };
    let mut warnings = Vec::new();
    if rate == 0.0 || !rate.is_finite() {
        warnings.push(format!("degenerate schedule: drive rate {rate}"));
    }
    let checks: Vec<GapCheck> = [
        ("weak coupling", 4.0),
        ("strong coupling", 8.0 * schedule.g_final),
        ("transition", 0.5),
    ]
    .into_iter()
    .map(|(regime, gap)| GapCheck {
        regime: regime.to_string(),
        gap,
        passes: rate.is_finite() && rate < gap * gap,
    })
    .collect();
    for c in &checks {
        if !c.passes {
            warnings.push(format!(
                "drive rate {rate} is not below the squared {} gap {}",
                c.regime,
                c.gap * c.gap
            ));
        }
    }
    AdiabaticityReport {
        rate,
        checks,
        warnings,
    }
}

const MAGIC: &[u8; 8] = b"Z2CKPT\0\0";
const VERSION: u32 = 1;

/// Register snapshot at a step boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dim: usize,
    pub size: usize,
    pub schedule: AdiabaticSchedule,
    pub step: usize,
    pub state: StateVector,
}

impl Checkpoint {
    /// Little-endian layout: magic, version, d, L, qubit count (u32 each
    /// after the magic); g_final, g_step, t_step (f64); substeps, steps
    /// (u64); kind, direction (u8) and 6 zero bytes; completed step (u64);
    /// then real/imaginary f64 pairs.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [
            VERSION,
            self.dim as u32,
            self.size as u32,
            self.state.num_qubits() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        let s = &self.schedule;
        for v in [s.g_final, s.g_step, s.t_step] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [s.substeps as u64, s.num_steps as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        let kind = match s.kind {
            DecompositionKind::Asymmetric => 0u8,
            DecompositionKind::Symmetric => 1,
        };
        let dir = match s.direction {
            Direction::ZToX => 0u8,
            Direction::XToZ => 1,
        };
        w.write_all(&[kind, dir, 0, 0, 0, 0, 0, 0])?;
        w.write_all(&(self.step as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(16 * self.state.len());
        for a in self.state.amplitudes() {
            buf.extend_from_slice(&a.re.to_le_bytes());
            buf.extend_from_slice(&a.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(what.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32s = [0u32; 4];
        for v in u32s.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        if u32s[0] != VERSION {
            return Err(bad(&format!("unsupported version {}", u32s[0])));
        }
        let mut f = [0f64; 3];
        for v in f.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let mut u = [0u64; 2];
        for v in u.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = u64::from_le_bytes(b);
        }
        let mut flags = [0u8; 8];
        r.read_exact(&mut flags)?;
        let kind = match flags[0] {
            0 => DecompositionKind::Asymmetric,
            1 => DecompositionKind::Symmetric,
            k => return Err(bad(&format!("unknown decomposition {k}"))),
        };
        let direction = match flags[1] {
            0 => Direction::ZToX,
            1 => Direction::XToZ,
            k => return Err(bad(&format!("unknown direction {k}"))),
        };
        if flags[2..].iter().any(|&b| b != 0) {
            return Err(bad("nonzero padding"));
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let step = u64::from_le_bytes(b) as usize;
        let nq = u32s[3] as usize;
        if nq == 0 || nq > crate::statevector::MAX_QUBITS {
            return Err(bad(&format!("qubit count {nq}")));
        }
        let mut raw = vec![0u8; 16 << nq];
        r.read_exact(&mut raw)?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(bad("trailing bytes"));
        }
        let amps = raw
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        let schedule = AdiabaticSchedule {
            g_final: f[0],
            g_step: f[1],
            t_step: f[2],
            substeps: u[0] as usize,
            num_steps: u[1] as usize,
            kind,
            direction,
        };
        if step > schedule.num_steps {
            return Err(bad("step beyond schedule"));
        }
        Ok(Self {
            dim: u32s[1] as usize,
            size: u32s[2] as usize,
            schedule,
            step,
            state: StateVector::from_amplitudes(amps)?,
        })
    }

    /// Refuses a checkpoint written for another lattice or schedule.
    pub fn check_compatible(&self, lat: &Lattice, schedule: &AdiabaticSchedule) -> Result<()> {
        if self.dim != lat.dim() || self.size != lat.size() {
            return Err(Error::Checkpoint(format!(
                "checkpoint is for d={} L={}, run is d={} L={}",
                self.dim,
                self.size,
                lat.dim(),
                lat.size()
            )));
        }
        if &self.schedule != schedule {
            return Err(Error::Checkpoint(format!(
                "checkpoint schedule {:?} differs from {:?}",
                self.schedule, schedule
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::prepare_z_ground;
    use crate::observables::expect_plaquette_sum;

    fn sched(kind: DecompositionKind) -> AdiabaticSchedule {
        AdiabaticSchedule::new(0.5, 0.1, 0.2, 4, kind, Direction::ZToX).unwrap()
    }

    #[test]
    fn schedule_rules() {
        let s = sched(DecompositionKind::Symmetric);
        assert_eq!(s.num_steps, 5);
        assert!((s.coupling(1, 4) - 0.1).abs() < 1e-15);
        assert!((s.coupling(3, 1) - 0.225).abs() < 1e-15);
        assert!((s.delta() - 0.025).abs() < 1e-15);
        assert!(AdiabaticSchedule::new(1.0, 0.3, 0.1, 2, s.kind, s.direction).is_err());
        assert!(AdiabaticSchedule::new(1.0, 0.1, 0.1, 0, s.kind, s.direction).is_err());
        assert!(AdiabaticSchedule::new(1.0, 0.1, 0.0, 1, s.kind, s.direction).is_err());
    }

    #[test]
    fn preset_step_counts() {
        assert_eq!(preset("paper-d2-sym").unwrap().schedule.num_steps, 2000);
        assert_eq!(preset("desk-d2").unwrap().schedule.num_steps, 200);
        assert_eq!(preset("desk-d3").unwrap().schedule.num_steps, 100);
        assert!(preset("nope").is_err());
    }

    #[test]
    fn zero_coupling_is_a_phase() {
        let lat = Lattice::build(2, 2).unwrap();
        let mut s = StateVector::init_zero(8).unwrap();
        prepare_z_ground(&mut s, &lat, None, CircuitMode::FusedDiagonal).unwrap();
        let before = s.clone();
        let reg = Register::default();
        for kind in [DecompositionKind::Asymmetric, DecompositionKind::Symmetric] {
            let mut t = before.clone();
            substep(&mut t, &lat, 0.0, 0.3, kind, Direction::ZToX, reg).unwrap();
            let phase = Complex64::from_polar(1.0, 4.0 * 0.3);
            let expect: Vec<Complex64> = before.amplitudes().iter().map(|a| a * phase).collect();
            let e = StateVector::from_amplitudes(expect).unwrap();
            assert!(t.max_deviation(&e) < 1e-12);
        }
        assert!(substep(
            &mut s,
            &lat,
            0.0,
            0.0,
            DecompositionKind::Symmetric,
            Direction::ZToX,
            reg
        )
        .is_err());
    }

    #[test]
    fn merged_symmetric_matches_naive() {
        let lat = Lattice::build(2, 2).unwrap();
        let s = sched(DecompositionKind::Symmetric);
        for dir in [Direction::ZToX, Direction::XToZ] {
            let s = AdiabaticSchedule {
                direction: dir,
                ..s
            };
            let mut a = StateVector::init_zero(8).unwrap();
            prepare_z_ground(&mut a, &lat, None, CircuitMode::FusedDiagonal).unwrap();
            let mut b = a.clone();
            let reg = Register::default();
            run_step(&mut a, &lat, &s, 2, reg).unwrap();
            let dt = s.t_step / s.substeps as f64;
            for m in 1..=s.substeps {
                substep(&mut b, &lat, s.coupling(2, m), dt, s.kind, dir, reg).unwrap();
            }
            assert!(a.max_deviation(&b) < 1e-12);
        }
    }

    #[test]
    fn gate_faithful_run_matches_fused() {
        let lat = Lattice::build(2, 2).unwrap();
        let s = sched(DecompositionKind::Symmetric);
        let mut fused = StateVector::init_zero(8).unwrap();
        prepare_z_ground(&mut fused, &lat, None, CircuitMode::FusedDiagonal).unwrap();
        let mut gate = StateVector::init_zero(9).unwrap();
        prepare_z_ground(&mut gate, &lat, Some(8), CircuitMode::GateFaithful).unwrap();
        let opts = RunOptions::default();
        let a = run_adiabatic(&mut fused, &lat, &s, &opts, |_| {
            Ok(ControlFlow::Continue(()))
        })
        .unwrap();
        let gopts = RunOptions {
            mode: CircuitMode::GateFaithful,
            ..opts
        };
        let b = run_adiabatic(&mut gate, &lat, &s, &gopts, |_| {
            Ok(ControlFlow::Continue(()))
        })
        .unwrap();
        let gate = gate.discard_top_qubit().unwrap();
        assert!(gate.max_deviation(&fused) < 1e-12);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert!((x.expect_h - y.expect_h).abs() < 1e-12);
        }
    }

    #[test]
    fn observer_sees_every_step_and_can_abort() {
        let lat = Lattice::build(2, 2).unwrap();
        let s = sched(DecompositionKind::Asymmetric);
        let mut st = StateVector::init_zero(8).unwrap();
        prepare_z_ground(&mut st, &lat, None, CircuitMode::FusedDiagonal).unwrap();
        let mut seen = Vec::new();
        let opts = RunOptions {
            dos_every: 2,
            ..RunOptions::default()
        };
        let series = run_adiabatic(&mut st.clone(), &lat, &s, &opts, |r| {
            seen.push(r.record.g);
            Ok(ControlFlow::Continue(()))
        })
        .unwrap();
        assert_eq!(seen.len(), 5);
        assert!(seen.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(series.dos.len(), 4);
        let err = run_adiabatic(&mut st, &lat, &s, &opts, |r| {
            if r.step == 3 {
                Err(Error::InvalidInput("stop".into()))
            } else {
                Ok(ControlFlow::Continue(()))
            }
        });
        assert!(matches!(
            err,
            Err(Error::Aborted {
                last_completed_step: 3,
                ..
            })
        ));
    }

    #[test]
    fn tiny_time_leaves_state() {
        let lat = Lattice::build(2, 2).unwrap();
        let s = AdiabaticSchedule::new(
            0.5,
            0.5,
            1e-12,
            1,
            DecompositionKind::Symmetric,
            Direction::ZToX,
        )
        .unwrap();
        let mut st = StateVector::init_zero(8).unwrap();
        prepare_z_ground(&mut st, &lat, None, CircuitMode::FusedDiagonal).unwrap();
        let before = st.clone();
        run_adiabatic(&mut st, &lat, &s, &RunOptions::default(), |_| {
            Ok(ControlFlow::Continue(()))
        })
        .unwrap();
        assert!(st.max_deviation(&before) < 1e-9);
        assert!((expect_plaquette_sum(&st, &lat).unwrap() + 4.0).abs() < 1e-9);
    }

    #[test]
    fn bound_values_and_ratio() {
        let lat = Lattice::build(3, 2).unwrap();
        let e = error_bound(&preset("paper-d3-sym").unwrap().schedule, &lat);
        assert!((e.leading - 2.1333e-3).abs() < 1e-6);
        assert!(e.total > e.leading);
        let lat2 = Lattice::build(2, 3).unwrap();
        let s = AdiabaticSchedule::new(
            2.0,
            0.01,
            0.2,
            100,
            DecompositionKind::Symmetric,
            Direction::ZToX,
        )
        .unwrap();
        let a = AdiabaticSchedule {
            kind: DecompositionKind::Asymmetric,
            ..s
        };
        let ratio = error_bound(&s, &lat2).leading / error_bound(&a, &lat2).leading;
        // 4/9 N_s g_s t_s / n = 4/9 g_f t_s / n
        assert!((ratio - 4.0 / 9.0 * 2.0 * 0.2 / 100.0).abs() < 1e-12);
    }

    #[test]
    fn adiabaticity_flags() {
        let s = preset("paper-d3-sym").unwrap().schedule;
        let r = adiabaticity_report(&s);
        assert!((r.rate - 0.01).abs() < 1e-12 && r.all_pass());
        let fast = AdiabaticSchedule {
            g_step: 1.0,
            t_step: 0.1,
            ..s
        };
        let r = adiabaticity_report(&fast);
        assert!(!r.all_pass() && r.warnings.iter().any(|w| w.contains("transition")));
        let still = AdiabaticSchedule { g_step: 0.0, ..s };
        assert!(adiabaticity_report(&still).warnings[0].contains("degenerate"));
    }

    #[test]
    fn checkpoint_round_trip_and_rejects() {
        let lat = Lattice::build(2, 2).unwrap();
        let mut st = StateVector::init_zero(8).unwrap();
        prepare_z_ground(&mut st, &lat, None, CircuitMode::FusedDiagonal).unwrap();
        let s = sched(DecompositionKind::Symmetric);
        let ck = Checkpoint {
            dim: 2,
            size: 2,
            schedule: s,
            step: 3,
            state: st,
        };
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 8 + 16 + 24 + 16 + 8 + 8 + 16 * 256);
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(back, ck);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, bytes);
        assert!(back.check_compatible(&lat, &s).is_ok());
        let other = AdiabaticSchedule { substeps: 5, ..s };
        assert!(back.check_compatible(&lat, &other).is_err());
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(Checkpoint::read_from(&corrupt[..]).is_err());
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 1]).is_err());
    }
}
