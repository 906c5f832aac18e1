//! Output files: CSV emission and re-reading (for resume), the lattice
//! description and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use sha2::{Digest, Sha256};
use z2sim::evolution::{AdiabaticityReport, ErrorEstimate};
use z2sim::observables::{
    write_dos_csv, write_sectors_csv, write_sweep_csv, Basis, DosHistogram, SectorResult,
    SweepRecord, SweepSeries,
};
use z2sim::Lattice;

use crate::config::RunConfig;

pub const SWEEP_CSV: &str = "sweep.csv";
pub const DOS_Z_CSV: &str = "dos_z.csv";
pub const DOS_X_CSV: &str = "dos_x.csv";
pub const SECTORS_CSV: &str = "sectors.csv";
pub const LATTICE_JSON: &str = "lattice.json";
pub const MANIFEST_JSON: &str = "manifest.json";

/// SHA-256 over `blob <len>\0<content>`, the way git names objects.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub name: String,
    pub bytes: usize,
    pub hash: String,
}

/// Writes files into one directory and remembers their hashes.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.retain(|f| f.name != name);
        self.files.push(OutputFile {
            name: name.to_string(),
            bytes: bytes.len(),
            hash: content_hash(bytes),
        });
        Ok(())
    }

    pub fn write_series(&mut self, dim: usize, series: &SweepSeries) -> anyhow::Result<()> {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, dim, &series.records)?;
        self.write(SWEEP_CSV, &buf)?;
        for (basis, name) in [(Basis::Z, DOS_Z_CSV), (Basis::X, DOS_X_CSV)] {
            let hists: Vec<DosHistogram> = series
                .dos
                .iter()
                .filter(|h| h.basis == basis)
                .cloned()
                .collect();
            let mut buf = Vec::new();
            write_dos_csv(&mut buf, &hists)?;
            self.write(name, &buf)?;
        }
        Ok(())
    }

    pub fn write_sectors(&mut self, sectors: &[SectorResult]) -> anyhow::Result<()> {
        let mut buf = Vec::new();
        write_sectors_csv(&mut buf, sectors)?;
        self.write(SECTORS_CSV, &buf)
    }

    pub fn write_lattice(&mut self, lat: &Lattice) -> anyhow::Result<()> {
        let json = serde_json::to_vec_pretty(&lat.describe())?;
        self.write(LATTICE_JSON, &json)
    }

    pub fn write_manifest(&self, manifest: &Manifest<'_>) -> anyhow::Result<()> {
        let json = serde_json::to_vec_pretty(manifest)?;
        let path = self.path(MANIFEST_JSON);
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub config: &'a RunConfig,
    pub preset: Option<&'a str>,
    pub wall_time_seconds: f64,
    pub error_bound: ErrorEstimate,
    pub adiabaticity: AdiabaticityReport,
    pub completed_steps: usize,
    pub outputs: &'a [OutputFile],
    /// Mode-specific results.
    pub results: serde_json::Value,
}

fn parse_row(line: &str, expect: usize, file: &str) -> anyhow::Result<Vec<f64>> {
    let cols: Vec<&str> = line.split(',').collect();
    if cols.len() != expect {
        bail!("{file}: expected {expect} columns, got {}", cols.len());
    }
    cols.iter()
        .map(|c| {
            c.parse::<f64>()
                .with_context(|| format!("{file}: bad number '{c}'"))
        })
        .collect()
}

/// Reads back the first `rows` records of a sweep file.
pub fn read_sweep_csv(text: &str, dim: usize, rows: usize) -> anyhow::Result<Vec<SweepRecord>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != z2sim::observables::sweep_header(dim) {
        bail!("{SWEEP_CSV}: unexpected header '{header}'");
    }
    let records: Vec<SweepRecord> = lines
        .take(rows)
        .map(|l| {
            let v = parse_row(l, 8 + dim, SWEEP_CSV)?;
            Ok(SweepRecord {
                g: v[0],
                expect_z: v[1],
                expect_x: v[2],
                expect_h: v[3],
                wilson: [v[4], v[5], v[6]],
                gauss_residual: v[7],
                thooft: v[8..].to_vec(),
            })
        })
        .collect::<anyhow::Result<_>>()?;
    if records.len() != rows {
        bail!("{SWEEP_CSV}: need {rows} rows, found {}", records.len());
    }
    Ok(records)
}

/// Reads back the first `count` histograms of a DOS file with a grid of
/// `grid` eigenvalues each.
pub fn read_dos_csv(
    text: &str,
    basis: Basis,
    grid: usize,
    count: usize,
) -> anyhow::Result<Vec<DosHistogram>> {
    let mut lines = text.lines();
    if lines.next() != Some("g,eigenvalue,mass") {
        bail!("DOS file: unexpected header");
    }
    let rows: Vec<&str> = lines.take(grid * count).collect();
    if rows.len() != grid * count {
        bail!("DOS file: need {} rows, found {}", grid * count, rows.len());
    }
    rows.chunks(grid)
        .map(|chunk| {
            let mut h = DosHistogram {
                basis,
                g: 0.0,
                eigenvalues: Vec::with_capacity(grid),
                mass: Vec::with_capacity(grid),
            };
            for (i, line) in chunk.iter().enumerate() {
                let v = parse_row(line, 3, "DOS file")?;
                if i == 0 {
                    h.g = v[0];
                } else if v[0] != h.g {
                    bail!("DOS file: histogram at g = {} is truncated", h.g);
                }
                h.eigenvalues.push(v[1] as i32);
                h.mass.push(v[2]);
            }
            Ok(h)
        })
        .collect()
}
