//! Expectation values, densities of states and post-processing of sweeps.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{apply_wilson, prepare_z_ground, CircuitMode};
use crate::error::{Error, Result};
use crate::evolution::{run_adiabatic, AdiabaticSchedule, RunOptions};
use crate::lattice::{Lattice, LoopSpec};
use crate::statevector::StateVector;

/// Observables recorded at the end of one adiabatic step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub g: f64,
    pub expect_z: f64,
    pub expect_x: f64,
    pub expect_h: f64,
    /// Wilson loops on c1, c2, c3. NaN where a contour does not fit.
    pub wilson: [f64; 3],
    pub gauss_residual: f64,
    /// 't Hooft operator per axis.
    pub thooft: Vec<f64>,
}

impl SweepRecord {
    /// Sign of each 't Hooft expectation.
    pub fn labels(&self) -> Vec<i8> {
        self.thooft
            .iter()
            .map(|&v| if v < 0.0 { -1 } else { 1 })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

/// Probability mass over the eigenvalue grid `-N, -N + 2, ..., N` of `Z`
/// (`N = N_p`) or `X` (`N = N_l`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DosHistogram {
    pub basis: Basis,
    pub g: f64,
    pub eigenvalues: Vec<i32>,
    pub mass: Vec<f64>,
}

impl DosHistogram {
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn mass_at(&self, eigenvalue: i32) -> f64 {
        self.eigenvalues
            .iter()
            .position(|&e| e == eigenvalue)
            .map_or(0.0, |k| self.mass[k])
    }

    /// Eigenvalues carrying more than `threshold` probability.
    pub fn support(&self, threshold: f64) -> Vec<i32> {
        self.eigenvalues
            .iter()
            .zip(&self.mass)
            .filter(|(_, &m)| m > threshold)
            .map(|(&e, _)| e)
            .collect()
    }

    pub fn off_support_mass(&self, allowed: &[i32]) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.mass)
            .filter(|(e, _)| !allowed.contains(e))
            .map(|(_, m)| m)
            .sum()
    }
}

/// Masks for everything recorded per step, built once per lattice.
#[derive(Clone, Debug)]
pub struct Probe {
    contours: [Option<LoopSpec>; 3],
    contour_masks: [usize; 3],
    star_masks: Vec<usize>,
    thooft_masks: Vec<usize>,
}

impl Probe {
    pub fn new(lat: &Lattice) -> Result<Self> {
        let contours = [0, 1, 2].map(|k| lat.wilson_contour(k).ok());
        let contour_masks = [0, 1, 2].map(|k| contours[k].as_ref().map_or(0, LoopSpec::mask));
        let star_masks = (0..lat.num_sites()).map(|s| lat.star_mask(s)).collect();
        let thooft_masks = (0..lat.dim())
            .map(|mu| lat.thooft_surface(mu).map(|s| s.mask()))
            .collect::<Result<_>>()?;
        Ok(Self {
            contours,
            contour_masks,
            star_masks,
            thooft_masks,
        })
    }

    pub fn contours(&self) -> &[Option<LoopSpec>; 3] {
        &self.contours
    }

    pub fn record(&self, state: &StateVector, lat: &Lattice, g: f64) -> Result<SweepRecord> {
        let expect_z = expect_plaquette_sum(state, lat)?;
        let xb = x_basis(state, lat)?;
        let expect_x = transverse_from_x_basis(&xb, lat);
        let mut wilson = [f64::NAN; 3];
        for ((w, c), &mask) in wilson
            .iter_mut()
            .zip(&self.contours)
            .zip(&self.contour_masks)
        {
            if c.is_some() {
                *w = state.expect_parity(mask);
            }
        }
        let gauss_residual = self
            .star_masks
            .iter()
            .map(|&m| (xb.expect_parity(m) - 1.0).abs())
            .fold(0.0, f64::max);
        let thooft = self
            .thooft_masks
            .iter()
            .map(|&m| xb.expect_parity(m))
            .collect();
        Ok(SweepRecord {
            g,
            expect_z,
            expect_x,
            expect_h: expect_z + g * expect_x,
            wilson,
            gauss_residual,
            thooft,
        })
    }
}

fn check_register(state: &StateVector, lat: &Lattice) -> Result<()> {
    if state.num_qubits() < lat.num_links() {
        return Err(Error::InsufficientQubits {
            needed: lat.num_links(),
            have: state.num_qubits(),
        });
    }
    Ok(())
}

/// Copy of the register with every link rotated into the x basis.
fn x_basis(state: &StateVector, lat: &Lattice) -> Result<StateVector> {
    let mut xb = state.clone();
    xb.hadamard_all(&lat.links())?;
    Ok(xb)
}

fn transverse_from_x_basis(xb: &StateVector, lat: &Lattice) -> f64 {
    let lmask = lat.link_mask();
    let nl = lat.num_links() as f64;
    xb.weighted_sum(|i| 2.0 * (i & lmask).count_ones() as f64 - nl)
}

/// `<Z> = -sum_p <prod_{l in p} sigma^z_l>`.
pub fn expect_plaquette_sum(state: &StateVector, lat: &Lattice) -> Result<f64> {
    check_register(state, lat)?;
    let counts = lat.flip_counts();
    let lmask = lat.link_mask();
    let np = lat.num_plaquettes() as f64;
    Ok(state.weighted_sum(|i| 2.0 * counts[i & lmask] as f64 - np))
}

/// `<X> = -sum_l <sigma^x_l>`.
pub fn expect_transverse_sum(state: &StateVector, lat: &Lattice) -> Result<f64> {
    check_register(state, lat)?;
    Ok(transverse_from_x_basis(&x_basis(state, lat)?, lat))
}

pub fn dos(state: &StateVector, lat: &Lattice, basis: Basis, g: f64) -> Result<DosHistogram> {
    check_register(state, lat)?;
    let lmask = lat.link_mask();
    let (n, mass) = match basis {
        Basis::Z => {
            let counts = lat.flip_counts();
            let np = lat.num_plaquettes();
            (np, state.histogram(np + 1, |i| counts[i & lmask] as usize))
        }
        Basis::X => {
            let xb = x_basis(state, lat)?;
            let nl = lat.num_links();
            (
                nl,
                xb.histogram(nl + 1, |i| (i & lmask).count_ones() as usize),
            )
        }
    };
    Ok(DosHistogram {
        basis,
        g,
        eigenvalues: (0..=n).map(|k| 2 * k as i32 - n as i32).collect(),
        mass,
    })
}

/// Largest `|<G_s> - 1|` over all sites.
pub fn gauss_residual(state: &StateVector, lat: &Lattice) -> Result<f64> {
    check_register(state, lat)?;
    let xb = x_basis(state, lat)?;
    Ok((0..lat.num_sites())
        .map(|s| (xb.expect_parity(lat.star_mask(s)) - 1.0).abs())
        .fold(0.0, f64::max))
}

pub fn wilson_values(state: &StateVector, contours: &[LoopSpec]) -> Result<Vec<f64>> {
    contours
        .iter()
        .map(|c| state.expect_z_mask_product(&c.links))
        .collect()
}

pub fn thooft_values(state: &StateVector, lat: &Lattice) -> Result<Vec<f64>> {
    check_register(state, lat)?;
    let xb = x_basis(state, lat)?;
    (0..lat.dim())
        .map(|mu| Ok(xb.expect_parity(lat.thooft_surface(mu)?.mask())))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub sigma_z: f64,
    /// Mean of `<Z_p>` over the plaquettes containing the link.
    pub z_local: f64,
    pub x_local: f64,
    pub h_local: f64,
}

pub fn single_link_report(
    state: &StateVector,
    lat: &Lattice,
    link: usize,
    g: f64,
) -> Result<LinkReport> {
    check_register(state, lat)?;
    if link >= lat.num_links() {
        return Err(Error::InvalidGeometry(format!("no link {link}")));
    }
    let sigma_z = state.expect_parity(1 << link);
    let ps = lat.plaquettes_of_link(link);
    let z_local = -ps
        .iter()
        .map(|&p| state.expect_parity(lat.plaquette_mask(p)))
        .sum::<f64>()
        / ps.len() as f64;
    let xb = x_basis(state, lat)?;
    let x_local = -xb.expect_parity(1 << link);
    Ok(LinkReport {
        sigma_z,
        z_local,
        x_local,
        h_local: z_local + g * x_local,
    })
}

/// Largest `|<sigma^z_l>|` over all links.
pub fn max_link_magnetization(state: &StateVector, lat: &Lattice) -> f64 {
    (0..lat.num_links())
        .map(|l| state.expect_parity(1 << l).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub records: Vec<SweepRecord>,
    pub dos: Vec<DosHistogram>,
}

impl SweepSeries {
    pub fn couplings(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.g).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.expect_h).collect()
    }

    pub fn column(&self, f: impl Fn(&SweepRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Derivatives {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Finite differences on a uniform grid: central in the interior,
/// second-order one-sided at the ends.
pub fn derivatives(xs: &[f64], ys: &[f64]) -> Result<Derivatives> {
    let n = xs.len();
    if n < 5 || ys.len() != n {
        return Err(Error::InvalidInput(format!(
            "need at least 5 matching points, got {} and {}",
            n,
            ys.len()
        )));
    }
    let h = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    if h <= 0.0
        || xs
            .windows(2)
            .any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0))
    {
        return Err(Error::InvalidInput("grid is not uniform".into()));
    }
    let mut first = vec![0.0; n];
    let mut second = vec![0.0; n];
    for k in 1..n - 1 {
        first[k] = (ys[k + 1] - ys[k - 1]) / (2.0 * h);
        second[k] = (ys[k + 1] - 2.0 * ys[k] + ys[k - 1]) / (h * h);
    }
    first[0] = (-3.0 * ys[0] + 4.0 * ys[1] - ys[2]) / (2.0 * h);
    first[n - 1] = (3.0 * ys[n - 1] - 4.0 * ys[n - 2] + ys[n - 3]) / (2.0 * h);
    second[0] = (2.0 * ys[0] - 5.0 * ys[1] + 4.0 * ys[2] - ys[3]) / (h * h);
    second[n - 1] = (2.0 * ys[n - 1] - 5.0 * ys[n - 2] + 4.0 * ys[n - 3] - ys[n - 4]) / (h * h);
    Ok(Derivatives { first, second })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub g_c: f64,
    pub index: usize,
    pub curvature: f64,
    /// Another interior point had the same minimum; the smaller g won.
    pub tie: bool,
}

/// Lowest interior point of the second derivative. A minimum on the edge of
/// the interior means there is no valley.
pub fn find_critical(xs: &[f64], second: &[f64]) -> Result<CriticalPoint> {
    let n = xs.len();
    if n < 5 || second.len() != n {
        return Err(Error::InvalidInput(
            "need at least 5 matching points".into(),
        ));
    }
    let mut best = 1;
    let mut tie = false;
    for k in 2..n - 1 {
        if second[k] < second[best] {
            best = k;
            tie = false;
        } else if second[k] == second[best] {
            tie = true;
        }
    }
    if best == 1 || best == n - 2 {
        return Err(Error::NoTransition(format!(
            "second derivative is lowest at the grid edge g = {}",
            xs[best]
        )));
    }
    Ok(CriticalPoint {
        g_c: xs[best],
        index: best,
        curvature: second[best],
        tie,
    })
}

/// First `x` where `a - b` changes sign, linearly interpolated.
pub fn crossing(xs: &[f64], a: &[f64], b: &[f64]) -> Option<f64> {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    for k in 1..xs.len().min(d.len()) {
        if d[k - 1] == 0.0 {
            return Some(xs[k - 1]);
        }
        if d[k - 1].signum() != d[k].signum() {
            let t = d[k - 1] / (d[k - 1] - d[k]);
            return Some(xs[k - 1] + t * (xs[k] - xs[k - 1]));
        }
    }
    None
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    if xs.is_empty() || x < xs[0] || x > xs[xs.len() - 1] {
        return None;
    }
    let k = xs.partition_point(|&v| v < x);
    if k == 0 {
        return Some(ys[0]);
    }
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    Some(ys[k - 1] + t * (ys[k] - ys[k - 1]))
}

/// Largest `|D_Z(z, g) - D_X(z, 1/g)|`. Histograms on different grids
/// count as maximally different.
pub fn duality_check_dos(z: &DosHistogram, x: &DosHistogram) -> f64 {
    if z.basis != Basis::Z || x.basis != Basis::X || z.eigenvalues != x.eigenvalues {
        return 1.0;
    }
    z.mass
        .iter()
        .zip(&x.mass)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Largest `|<Z>(g) - <X>(1/g)|` over recorded `g` whose inverse lies
/// inside the sweep, with `<X>` interpolated linearly.
pub fn duality_check_series(series: &SweepSeries) -> Option<f64> {
    let gs = series.couplings();
    let xs = series.column(|r| r.expect_x);
    series
        .records
        .iter()
        .filter_map(|r| interpolate(&gs, &xs, 1.0 / r.g).map(|x| (r.expect_z - x).abs()))
        .reduce(f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root of the summed squared residuals.
    pub residual: f64,
}

pub fn fit_linear(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} x values, {} y values",
            ys.len()
        )));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(Error::InvalidInput("x values are degenerate".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(LinearFit {
        slope,
        intercept,
        residual,
    })
}

/// Ground-state energy along one sweep in a fixed topological sector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorResult {
    pub labels: Vec<i8>,
    pub g: Vec<f64>,
    pub energies: Vec<f64>,
    /// `E_i - E_1` against the all-`+1` sector. Empty until filled by
    /// [`fill_splittings`].
    pub splittings: Vec<f64>,
    /// Largest `|<sigma^z_l>|` seen over the run.
    pub max_link_magnetization: f64,
}

/// All `2^d` label vectors, ordered so that entry `i` has `V_mu = -1`
/// exactly where bit `mu` of `i` is set.
pub fn all_sectors(dim: usize) -> Vec<Vec<i8>> {
    (0..1usize << dim)
        .map(|i| {
            (0..dim)
                .map(|mu| if i >> mu & 1 == 1 { -1 } else { 1 })
                .collect()
        })
        .collect()
}

/// Runs the adiabatic sweep once per sector. Each sector starts from the
/// projected ground state with a Wilson loop applied along every axis whose
/// label is -1. Sectors run in parallel.
pub fn sector_sweep(
    lat: &Lattice,
    schedule: &AdiabaticSchedule,
    sectors: &[Vec<i8>],
    mode: CircuitMode,
) -> Vec<Result<SectorResult>> {
    let mut out: Vec<Result<SectorResult>> = sectors
        .par_iter()
        .map(|labels| run_sector(lat, schedule, labels, mode))
        .collect();
    let reference = sectors
        .iter()
        .position(|l| l.iter().all(|&v| v == 1))
        .and_then(|k| out[k].as_ref().ok().map(|r| r.energies.clone()));
    if let Some(e1) = reference {
        for r in out.iter_mut().flatten() {
            fill_splittings(r, &e1);
        }
    }
    out
}

pub fn fill_splittings(result: &mut SectorResult, reference: &[f64]) {
    result.splittings = result
        .energies
        .iter()
        .zip(reference)
        .map(|(e, e1)| e - e1)
        .collect();
}

fn run_sector(
    lat: &Lattice,
    schedule: &AdiabaticSchedule,
    labels: &[i8],
    mode: CircuitMode,
) -> Result<SectorResult> {
    if labels.len() != lat.dim() || labels.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::InvalidInput(format!("sector labels {labels:?}")));
    }
    let extra = usize::from(mode == CircuitMode::GateFaithful);
    let mut state = StateVector::init_zero(lat.num_links() + extra)?;
    let ancilla = (extra == 1).then_some(lat.num_links());
    prepare_z_ground(&mut state, lat, ancilla, mode)?;
    for (mu, &v) in labels.iter().enumerate() {
        if v == -1 {
            apply_wilson(&mut state, &lat.noncontractible_loop(mu)?)?;
        }
    }
    let check = |measured: Vec<i8>, g: f64| {
        if measured != labels {
            Err(Error::InvalidInput(format!(
                "sector {labels:?} measured as {measured:?} at g = {g}"
            )))
        } else {
            Ok(())
        }
    };
    check(
        thooft_values(&state, lat)?
            .iter()
            .map(|&v| if v < 0.0 { -1 } else { 1 })
            .collect(),
        0.0,
    )?;
    let mut max_mag = max_link_magnetization(&state, lat);
    let opts = RunOptions {
        mode,
        dos_every: 0,
        ..RunOptions::default()
    };
    let series = run_adiabatic(&mut state, lat, schedule, &opts, |step| {
        check(step.record.labels(), step.record.g)?;
        max_mag = max_mag.max(max_link_magnetization(step.state, lat));
        Ok(std::ops::ControlFlow::Continue(()))
    })?;
    Ok(SectorResult {
        labels: labels.to_vec(),
        g: series.couplings(),
        energies: series.energies(),
        splittings: Vec::new(),
        max_link_magnetization: max_mag,
    })
}

/// Fits `E_i1^(1/(L+1))` against `g` over `window`.
pub fn splitting_fit(
    result: &SectorResult,
    lat: &Lattice,
    window: (f64, f64),
) -> Result<LinearFit> {
    let power = 1.0 / (lat.size() + 1) as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = result
        .g
        .iter()
        .zip(&result.splittings)
        .filter(|(g, _)| **g >= window.0 - 1e-12 && **g <= window.1 + 1e-12)
        .map(|(&g, &s)| (g, s.max(0.0).powf(power)))
        .unzip();
    fit_linear(&xs, &ys)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sweep_header(dim: usize) -> String {
    let axes = ["V_x", "V_y", "V_z"];
    let mut cols = vec!["g", "Z", "X", "H", "W_c1", "W_c2", "W_c3", "gauss"];
    cols.extend_from_slice(&axes[..dim]);
    cols.join(",")
}

pub fn write_sweep_csv<W: Write>(mut w: W, dim: usize, records: &[SweepRecord]) -> Result<()> {
    writeln!(w, "{}", sweep_header(dim))?;
    for r in records {
        let mut row = vec![fmt(r.g), fmt(r.expect_z), fmt(r.expect_x), fmt(r.expect_h)];
        row.extend(r.wilson.iter().map(|&v| fmt(v)));
        row.push(fmt(r.gauss_residual));
        row.extend(r.thooft.iter().map(|&v| fmt(v)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_dos_csv<W: Write>(mut w: W, hists: &[DosHistogram]) -> Result<()> {
    writeln!(w, "g,eigenvalue,mass")?;
    for h in hists {
        for (e, m) in h.eigenvalues.iter().zip(&h.mass) {
            writeln!(w, "{},{},{}", fmt(h.g), e, fmt(*m))?;
        }
    }
    Ok(())
}

/// Labels are written as signs joined by `;`, e.g. `1;-1`.
pub fn write_sectors_csv<W: Write>(mut w: W, sectors: &[SectorResult]) -> Result<()> {
    writeln!(w, "g,labels,E")?;
    for s in sectors {
        let labels = s
            .labels
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";");
        for (g, e) in s.g.iter().zip(&s.energies) {
            writeln!(w, "{},{},{}", fmt(*g), labels, fmt(*e))?;
        }
    }
    Ok(())
}

/// `|<a|b>|^2` for registers of equal size.
pub fn fidelity(a: &StateVector, b: &StateVector) -> f64 {
    let c: Complex64 = a.inner(b);
    c.norm_sqr()
}
