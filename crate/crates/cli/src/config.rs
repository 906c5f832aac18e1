//! Run configuration: preset, then config file, then command-line flags,
//! each layer overriding the previous one.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use z2sim::evolution::preset;
use z2sim::{AdiabaticSchedule, CircuitMode, DecompositionKind, Direction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sweep,
    Dos,
    Sectors,
    TrotterBench,
    Verify,
    PhaseEstimate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Sym,
    Asym,
}

impl From<KindArg> for DecompositionKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Sym => DecompositionKind::Symmetric,
            KindArg::Asym => DecompositionKind::Asymmetric,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    ZToX,
    XToZ,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::ZToX => Direction::ZToX,
            DirectionArg::XToZ => Direction::XToZ,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CircuitArg {
    GateFaithful,
    FusedDiagonal,
}

impl From<CircuitArg> for CircuitMode {
    fn from(c: CircuitArg) -> Self {
        match c {
            CircuitArg::GateFaithful => CircuitMode::GateFaithful,
            CircuitArg::FusedDiagonal => CircuitMode::FusedDiagonal,
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// TOML file with [lattice], [schedule], [observables] and [output] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "L")]
    pub size: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub g_final: Option<f64>,
    #[arg(long)]
    pub g_step: Option<f64>,
    #[arg(long)]
    pub substeps: Option<usize>,
    #[arg(long)]
    pub t_step: Option<f64>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    #[arg(long, value_enum)]
    pub circuit: Option<CircuitArg>,
    /// Record densities of states every this many steps (0 disables).
    #[arg(long)]
    pub dos_every: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint file written during sweeps and read by --resume.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub resume: bool,
    /// Stop (and checkpoint) after this step.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Coupling used by trotter-bench.
    #[arg(long)]
    pub coupling: Option<f64>,
    #[arg(long)]
    pub pe_bits: Option<usize>,
    #[arg(long)]
    pub pe_time: Option<f64>,
    #[arg(long)]
    pub pe_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    lattice: LatticeSection,
    #[serde(default)]
    schedule: ScheduleSection,
    #[serde(default)]
    observables: ObservablesSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    preset: Option<String>,
    mode: Option<Mode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeSection {
    d: Option<usize>,
    #[serde(rename = "L")]
    size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSection {
    g_final: Option<f64>,
    g_step: Option<f64>,
    t_step: Option<f64>,
    substeps: Option<usize>,
    kind: Option<DecompositionKind>,
    direction: Option<Direction>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservablesSection {
    dos_every: Option<usize>,
    circuit: Option<CircuitMode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseSettings {
    pub bits: usize,
    /// `None` picks the largest safe evolution time.
    pub time: Option<f64>,
    pub steps_per_t: usize,
}

/// Fully resolved configuration, written verbatim into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub preset: Option<String>,
    /// Preset the schedule defaults came from when none was named.
    pub base_preset: String,
    pub d: usize,
    #[serde(rename = "L")]
    pub size: usize,
    pub schedule: AdiabaticSchedule,
    pub circuit: CircuitMode,
    pub dos_every: usize,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub resume: bool,
    pub stop_after: Option<usize>,
    pub coupling: f64,
    pub phase: PhaseSettings,
}

fn read_file(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        let mode = args.mode.or(file.run.mode).unwrap_or(Mode::Sweep);
        let named = args.preset.clone().or(file.run.preset);
        let d_hint = args.d.or(file.lattice.d);
        let base_name = match (&named, d_hint) {
            (Some(n), _) => n.clone(),
            (None, Some(3)) => "desk-d3".to_string(),
            (None, _) => "desk-d2".to_string(),
        };
        let base = preset(&base_name)
            .map_err(|_| anyhow::anyhow!(UsageError(format!("unknown preset '{base_name}'"))))?;

        let d = d_hint.unwrap_or(base.dim);
        let size = args.size.or(file.lattice.size).unwrap_or(base.size);
        let s = &file.schedule;
        let b = base.schedule;
        let schedule = AdiabaticSchedule::new(
            args.g_final.or(s.g_final).unwrap_or(b.g_final),
            args.g_step.or(s.g_step).unwrap_or(b.g_step),
            args.t_step.or(s.t_step).unwrap_or(b.t_step),
            args.substeps.or(s.substeps).unwrap_or(b.substeps),
            args.kind.map(Into::into).or(s.kind).unwrap_or(b.kind),
            args.direction
                .map(Into::into)
                .or(s.direction)
                .unwrap_or(b.direction),
        )
        .map_err(|e| anyhow::anyhow!(UsageError(e.to_string())))?;

        let dos_default = if mode == Mode::Dos { 1 } else { 10 };
        let cfg = Self {
            mode,
            preset: named,
            base_preset: base_name,
            d,
            size,
            schedule,
            circuit: args
                .circuit
                .map(Into::into)
                .or(file.observables.circuit)
                .unwrap_or_default(),
            dos_every: args
                .dos_every
                .or(file.observables.dos_every)
                .unwrap_or(dos_default),
            out: args
                .out
                .clone()
                .or(file.output.dir)
                .unwrap_or_else(|| PathBuf::from("run")),
            checkpoint: args.checkpoint.clone().or(file.output.checkpoint),
            checkpoint_every: args
                .checkpoint_every
                .or(file.output.checkpoint_every)
                .unwrap_or(10),
            resume: args.resume,
            stop_after: args.stop_after,
            coupling: args.coupling.unwrap_or(0.5),
            phase: PhaseSettings {
                bits: args.pe_bits.unwrap_or(8),
                time: args.pe_time,
                steps_per_t: args.pe_steps.unwrap_or(20),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let usage = |m: String| Err(anyhow::anyhow!(UsageError(m)));
        if self.resume && self.checkpoint.is_none() {
            return usage("--resume needs --checkpoint".into());
        }
        if let Some(k) = self.stop_after {
            if k == 0 || k > self.schedule.num_steps {
                return usage(format!(
                    "--stop-after {k} outside 1..={}",
                    self.schedule.num_steps
                ));
            }
        }
        if self.checkpoint_every == 0 {
            return usage("checkpoint_every must be positive".into());
        }
        if !(self.coupling.is_finite()) {
            bail!(UsageError(format!("coupling {}", self.coupling)));
        }
        Ok(())
    }
}

/// Invalid configuration; maps to the usage exit status.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}
