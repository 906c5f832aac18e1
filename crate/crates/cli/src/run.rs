use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::ops::ControlFlow;
use std::time::Instant;

use anyhow::Context;
use log::{info, warn};
use serde_json::json;
use z2sim::circuits::{phase_estimate, prepare_x_ground, prepare_z_ground};
use z2sim::evolution::{
    adiabaticity_report, error_bound, run_adiabatic, substep, Checkpoint, Register, RunOptions,
};
use z2sim::observables::{
    all_sectors, derivatives, find_critical, fit_linear, sector_sweep, splitting_fit, Basis,
    SweepSeries,
};
use z2sim::oracle::{exact_evolve, SparseHamiltonian};
use z2sim::{CircuitMode, DecompositionKind, Direction, Lattice, StateVector};

use crate::config::{Mode, RunConfig};
use crate::output::{
    read_dos_csv, read_sweep_csv, Manifest, OutputDir, DOS_X_CSV, DOS_Z_CSV, SWEEP_CSV,
};
use crate::verify;

/// What a finished mode hands back to the caller.
pub struct Outcome {
    pub completed_steps: usize,
    pub results: serde_json::Value,
    /// Verify mode only: false when a check failed.
    pub success: bool,
}

pub fn execute(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let started = Instant::now();
    let lat = Lattice::build(cfg.d, cfg.size)?;
    let mut out = OutputDir::create(&cfg.out)?;
    out.write_lattice(&lat)?;
    let report = adiabaticity_report(&cfg.schedule);
    for w in &report.warnings {
        warn!("{w}");
    }
    let outcome = match cfg.mode {
        Mode::Sweep | Mode::Dos => sweep(cfg, &lat, &mut out)?,
        Mode::Sectors => sectors(cfg, &lat, &mut out)?,
        Mode::TrotterBench => trotter_bench(cfg, &lat, &mut out)?,
        Mode::PhaseEstimate => phase(cfg, &lat)?,
        Mode::Verify => {
            let checks = verify::run_checks(&verify::Engine::default());
            let success = checks.iter().all(|c| c.passed);
            for c in &checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "ok  " } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            Outcome {
                completed_steps: 0,
                results: json!({ "checks": checks }),
                success,
            }
        }
    };
    let manifest = Manifest {
        config: cfg,
        preset: cfg.preset.as_deref(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        error_bound: error_bound(&cfg.schedule, &lat),
        adiabaticity: report,
        completed_steps: outcome.completed_steps,
        outputs: out.files(),
        results: outcome.results.clone(),
    };
    out.write_manifest(&manifest)?;
    Ok(outcome)
}

fn register_width(lat: &Lattice, mode: CircuitMode) -> usize {
    Register::for_lattice(lat, mode).num_qubits(lat)
}

fn initial_state(cfg: &RunConfig, lat: &Lattice) -> anyhow::Result<StateVector> {
    let mut s = StateVector::init_zero(register_width(lat, cfg.circuit))?;
    let ancilla = (cfg.circuit == CircuitMode::GateFaithful).then_some(lat.num_links());
    match cfg.schedule.direction {
        Direction::ZToX => prepare_z_ground(&mut s, lat, ancilla, cfg.circuit)?,
        Direction::XToZ => prepare_x_ground(&mut s, lat)?,
    }
    Ok(s)
}

fn write_checkpoint(
    cfg: &RunConfig,
    lat: &Lattice,
    step: usize,
    state: &StateVector,
) -> z2sim::Result<()> {
    let Some(path) = &cfg.checkpoint else {
        return Ok(());
    };
    let tmp = path.with_extension("partial");
    let file = File::create(&tmp)?;
    Checkpoint {
        dim: lat.dim(),
        size: lat.size(),
        schedule: cfg.schedule,
        step,
        state: state.clone(),
    }
    .write_to(BufWriter::new(file))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Earlier rows of an interrupted run, read back from the output directory.
fn prior_series(
    cfg: &RunConfig,
    lat: &Lattice,
    out: &OutputDir,
    step: usize,
) -> anyhow::Result<SweepSeries> {
    let read = |name: &str| {
        std::fs::read_to_string(out.path(name))
            .with_context(|| format!("resume needs {} from the interrupted run", name))
    };
    let records = read_sweep_csv(&read(SWEEP_CSV)?, lat.dim(), step)?;
    let count = step.checked_div(cfg.dos_every).unwrap_or(0);
    let z = read_dos_csv(&read(DOS_Z_CSV)?, Basis::Z, lat.num_plaquettes() + 1, count)?;
    let x = read_dos_csv(&read(DOS_X_CSV)?, Basis::X, lat.num_links() + 1, count)?;
    let dos = z.into_iter().zip(x).flat_map(|(a, b)| [a, b]).collect();
    Ok(SweepSeries { records, dos })
}

fn sweep(cfg: &RunConfig, lat: &Lattice, out: &mut OutputDir) -> anyhow::Result<Outcome> {
    let (mut state, start_step, mut series) = if cfg.resume {
        let path = cfg.checkpoint.as_ref().expect("validated");
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let ckpt = Checkpoint::read_from(BufReader::new(file))?;
        ckpt.check_compatible(lat, &cfg.schedule)?;
        if ckpt.state.num_qubits() != register_width(lat, cfg.circuit) {
            return Err(z2sim::Error::Checkpoint(format!(
                "checkpoint holds {} qubits, {:?} needs {}",
                ckpt.state.num_qubits(),
                cfg.circuit,
                register_width(lat, cfg.circuit)
            ))
            .into());
        }
        info!("resuming after step {}", ckpt.step);
        let prior = prior_series(cfg, lat, out, ckpt.step)?;
        (ckpt.state, ckpt.step, prior)
    } else {
        (initial_state(cfg, lat)?, 0, SweepSeries::default())
    };
    let opts = RunOptions {
        mode: cfg.circuit,
        dos_every: cfg.dos_every,
        start_step,
    };
    let total = cfg.schedule.num_steps;
    let mut last = start_step;
    let tail = run_adiabatic(&mut state, lat, &cfg.schedule, &opts, |r| {
        last = r.step;
        if r.step % 10 == 0 || r.step == total {
            info!(
                "step {}/{} g = {:.4} <H> = {:.10}",
                r.step, total, r.record.g, r.record.expect_h
            );
        }
        let stop = cfg.stop_after == Some(r.step);
        if stop || r.step % cfg.checkpoint_every == 0 {
            write_checkpoint(cfg, lat, r.step, r.state)?;
        }
        Ok(if stop {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        })
    })?;
    series.records.extend(tail.records);
    series.dos.extend(tail.dos);
    out.write_series(lat.dim(), &series)?;

    let mut results = json!({});
    if last == total && series.records.len() >= 5 {
        let gs = series.couplings();
        let d = derivatives(&gs, &series.energies())?;
        results["critical"] = match find_critical(&gs, &d.second) {
            Ok(c) => json!(c),
            Err(e) => json!({ "error": e.to_string() }),
        };
    }
    Ok(Outcome {
        completed_steps: last,
        results,
        success: true,
    })
}

fn sectors(cfg: &RunConfig, lat: &Lattice, out: &mut OutputDir) -> anyhow::Result<Outcome> {
    let labels = all_sectors(lat.dim());
    let results = sector_sweep(lat, &cfg.schedule, &labels, cfg.circuit)
        .into_iter()
        .collect::<z2sim::Result<Vec<_>>>()?;
    out.write_sectors(&results)?;
    let window = (0.05, 0.3);
    let fits: Vec<_> = results
        .iter()
        .filter(|r| r.labels.contains(&-1))
        .map(|r| {
            let fit = splitting_fit(r, lat, window).ok();
            json!({
                "labels": r.labels,
                "fit": fit,
                "max_link_magnetization": r.max_link_magnetization,
            })
        })
        .collect();
    Ok(Outcome {
        completed_steps: cfg.schedule.num_steps,
        results: json!({ "fit_window": window, "splittings": fits }),
        success: true,
    })
}

const BENCH_SUBSTEPS: [usize; 5] = [8, 16, 32, 64, 128];

/// Deviation from exact evolution over `t = 1` at fixed coupling.
pub fn trotter_deviation(
    lat: &Lattice,
    start: &StateVector,
    g: f64,
    n: usize,
    kind: DecompositionKind,
) -> anyhow::Result<f64> {
    let reg = Register::for_lattice(lat, CircuitMode::FusedDiagonal);
    let mut s = start.clone();
    let dt = 1.0 / n as f64;
    for _ in 0..n {
        substep(&mut s, lat, g, dt, kind, Direction::ZToX, reg)?;
    }
    let exact = exact_evolve(&SparseHamiltonian::build(lat, g)?, start, 1.0)?;
    Ok(s.amplitudes()
        .iter()
        .zip(exact.amplitudes())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

fn trotter_bench(cfg: &RunConfig, lat: &Lattice, out: &mut OutputDir) -> anyhow::Result<Outcome> {
    let mut start = StateVector::init_zero(lat.num_links())?;
    prepare_z_ground(&mut start, lat, None, CircuitMode::FusedDiagonal)?;
    let mut csv = String::from("n,asymmetric,symmetric\n");
    let mut asym = Vec::new();
    let mut sym = Vec::new();
    println!("{:>6} {:>14} {:>14}", "n", "asymmetric", "symmetric");
    for &n in &BENCH_SUBSTEPS {
        let a = trotter_deviation(lat, &start, cfg.coupling, n, DecompositionKind::Asymmetric)?;
        let s = trotter_deviation(lat, &start, cfg.coupling, n, DecompositionKind::Symmetric)?;
        println!("{n:>6} {a:>14.6e} {s:>14.6e}");
        csv.push_str(&format!("{n},{a:.16e},{s:.16e}\n"));
        asym.push(a);
        sym.push(s);
    }
    let logs = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    let ln_n: Vec<f64> = BENCH_SUBSTEPS.iter().map(|&n| (n as f64).ln()).collect();
    let fa = fit_linear(&ln_n, &logs(&asym))?;
    let fs = fit_linear(&ln_n, &logs(&sym))?;
    println!(
        "slopes: asymmetric {:.3}, symmetric {:.3}",
        fa.slope, fs.slope
    );
    out.write("trotter.csv", csv.as_bytes())?;
    Ok(Outcome {
        completed_steps: 0,
        results: json!({
            "coupling": cfg.coupling,
            "time": 1.0,
            "asymmetric_slope": fa.slope,
            "symmetric_slope": fs.slope,
        }),
        success: true,
    })
}

fn phase(cfg: &RunConfig, lat: &Lattice) -> anyhow::Result<Outcome> {
    let mut state = initial_state(cfg, lat)?;
    let opts = RunOptions {
        mode: cfg.circuit,
        dos_every: 0,
        start_step: 0,
    };
    let series = run_adiabatic(&mut state, lat, &cfg.schedule, &opts, |_| {
        Ok(ControlFlow::Continue(()))
    })?;
    if cfg.circuit == CircuitMode::GateFaithful {
        state = state.discard_top_qubit()?;
    }
    let last = series.records.last().expect("at least one step");
    let g = last.g;
    let bound = lat.num_plaquettes() as f64 + g.abs() * lat.num_links() as f64;
    let t = cfg
        .phase
        .time
        .unwrap_or(0.9 * std::f64::consts::FRAC_PI_2 / bound);
    let pe = phase_estimate(
        &state,
        lat,
        g,
        t,
        cfg.phase.bits,
        cfg.phase.steps_per_t,
        cfg.circuit,
    )?;
    println!(
        "g = {g:.6}: E = {:.8} +- {:.2e} (sweep <H> = {:.8}, visibility {:.4}{})",
        pe.energy,
        pe.resolution,
        last.expect_h,
        pe.min_visibility,
        if pe.multimodal { ", multimodal" } else { "" }
    );
    Ok(Outcome {
        completed_steps: series.records.len(),
        results: json!({ "g": g, "time": t, "sweep_energy": last.expect_h, "estimate": pe }),
        success: true,
    })
}
