//! Brute-force reference for small lattices: matrix-free Hamiltonian,
//! Lanczos ground states and exact time evolution.
//!
//! Nothing here goes through the circuit kernels. The plaquette diagonal is
//! rebuilt from the plaquette link lists, and evolution uses eigen- or
//! Krylov-decompositions of `H` itself.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evolution::{AdiabaticSchedule, Direction};
use crate::lattice::Lattice;
use crate::statevector::StateVector;

/// Largest link count the oracle accepts.
pub const MAX_LINKS: usize = 20;
/// Largest link count for which dense matrices are built.
pub const DENSE_MAX_LINKS: usize = 10;

const BLOCK: usize = 1 << 12;

/// `H = a Z + b X` with `Z = -sum_p prod sigma^z` and `X = -sum_l sigma^x`.
#[derive(Clone, Debug)]
pub struct SparseHamiltonian {
    num_links: usize,
    z_coeff: f64,
    x_coeff: f64,
    /// Eigenvalue of `Z` on each basis state.
    plaquette_sum: Vec<f64>,
    star_masks: Vec<usize>,
    thooft_masks: Vec<usize>,
    num_plaquettes: usize,
}

impl SparseHamiltonian {
    /// `H = Z + g X`.
    pub fn build(lat: &Lattice, g: f64) -> Result<Self> {
        Self::with_coefficients(lat, 1.0, g)
    }

    pub fn with_coefficients(lat: &Lattice, z_coeff: f64, x_coeff: f64) -> Result<Self> {
        let nl = lat.num_links();
        if nl > MAX_LINKS {
            return Err(Error::Capacity {
                requested: nl,
                limit: MAX_LINKS,
            });
        }
        let masks: Vec<usize> = lat
            .plaquettes()
            .iter()
            .map(|p| p.links.iter().fold(0usize, |m, &l| m | (1 << l)))
            .collect();
        let plaquette_sum = (0..1usize << nl)
            .into_par_iter()
            .map(|i| {
                masks
                    .iter()
                    .map(|&m| {
                        if (i & m).count_ones() % 2 == 0 {
                            -1.0
                        } else {
                            1.0
                        }
                    })
                    .sum()
            })
            .collect();
        let star_masks = (0..lat.num_sites())
            .map(|s| lat.star_links_at(s).iter().fold(0, |m, &l| m | (1 << l)))
            .collect();
        let thooft_masks = (0..lat.dim())
            .map(|mu| lat.thooft_surface(mu).map(|s| s.mask()))
            .collect::<Result<_>>()?;
        Ok(Self {
            num_links: nl,
            z_coeff,
            x_coeff,
            plaquette_sum,
            star_masks,
            thooft_masks,
            num_plaquettes: lat.num_plaquettes(),
        })
    }

    pub fn dimension(&self) -> usize {
        1 << self.num_links
    }

    /// Copy with new coefficients, reusing the diagonal.
    pub fn with_couplings(&self, z_coeff: f64, x_coeff: f64) -> Self {
        Self {
            z_coeff,
            x_coeff,
            ..self.clone()
        }
    }

    /// Spectral-norm bound `|a| N_p + |b| N_l`.
    pub fn norm_bound(&self) -> f64 {
        self.z_coeff.abs() * self.num_plaquettes as f64 + self.x_coeff.abs() * self.num_links as f64
    }

    pub fn plaquette_sum(&self) -> &[f64] {
        &self.plaquette_sum
    }

    fn apply<T>(&self, x: &[T], y: &mut [T])
    where
        T: Copy + Send + Sync + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let nl = self.num_links;
        let (a, b) = (self.z_coeff, self.x_coeff);
        y.par_chunks_mut(BLOCK).enumerate().for_each(|(bi, out)| {
            let base = bi * BLOCK;
            for (j, o) in out.iter_mut().enumerate() {
                let i = base + j;
                let mut flips = x[i ^ 1];
                for l in 1..nl {
                    flips = flips + x[i ^ (1 << l)];
                }
                *o = x[i] * (a * self.plaquette_sum[i]) + flips * (-b);
            }
        });
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        self.apply(x, y);
    }

    pub fn matvec_complex(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.apply(x, y);
    }

    /// Dense matrix, assembled entry by entry.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        if self.num_links > DENSE_MAX_LINKS + 2 {
            return Err(Error::Capacity {
                requested: self.num_links,
                limit: DENSE_MAX_LINKS + 2,
            });
        }
        let dim = self.dimension();
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = self.z_coeff * self.plaquette_sum[i];
            for l in 0..self.num_links {
                m[(i, i ^ (1 << l))] = -self.x_coeff;
            }
        }
        Ok(m)
    }

    /// Applies `prod_s (1 + G_s)/2` and, for each labelled axis,
    /// `(1 + v V_mu)/2`. Every factor is a product of `sigma^x`, i.e. a bit
    /// flip by a fixed mask.
    pub fn project(&self, v: &mut [f64], sector: Option<&[i8]>) {
        let mut scratch = vec![0.0; v.len()];
        let mut factor = |v: &mut [f64], mask: usize, sign: f64| {
            scratch
                .par_iter_mut()
                .enumerate()
                .for_each(|(i, s)| *s = 0.5 * (v[i] + sign * v[i ^ mask]));
            v.copy_from_slice(&scratch);
        };
        for &m in &self.star_masks {
            factor(v, m, 1.0);
        }
        if let Some(labels) = sector {
            for (&m, &s) in self.thooft_masks.iter().zip(labels) {
                factor(v, m, f64::from(s));
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partials: Vec<f64> = a
        .par_chunks(BLOCK)
        .zip(b.par_chunks(BLOCK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partials.iter().sum()
}

fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let partials: Vec<Complex64> = a
        .par_chunks(BLOCK)
        .zip(b.par_chunks(BLOCK))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(p, q)| p.conj() * q)
                .sum::<Complex64>()
        })
        .collect();
    partials.iter().sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut()
        .zip(x.par_iter())
        .for_each(|(b, a)| *b += alpha * a);
}

fn caxpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    y.par_iter_mut()
        .zip(x.par_iter())
        .for_each(|(b, a)| *b += alpha * a);
}

#[derive(Clone, Debug)]
pub struct GroundStateOptions {
    /// 't Hooft labels to project onto; `None` keeps the gauge projection only.
    pub sector: Option<Vec<i8>>,
    pub tolerance: f64,
    pub krylov_dim: usize,
    pub max_restarts: usize,
}

impl Default for GroundStateOptions {
    fn default() -> Self {
        Self {
            sector: None,
            tolerance: 1e-10,
            krylov_dim: 60,
            max_restarts: 60,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub energy: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

impl GroundState {
    pub fn to_state(&self) -> Result<StateVector> {
        StateVector::from_amplitudes(
            self.vector
                .iter()
                .map(|&x| Complex64::new(x, 0.0))
                .collect(),
        )
    }
}

/// Lowest gauge-invariant eigenpair of `H = Z + g X`.
pub fn ground_state(lat: &Lattice, g: f64, opts: &GroundStateOptions) -> Result<GroundState> {
    let h = SparseHamiltonian::build(lat, g)?;
    lowest_eigenpair(&h, lat, opts)
}

/// Restarted Lanczos with full reorthogonalization. The start vector is
/// the flat-plaquette superposition carried into the requested sector by
/// Wilson loops, then projected.
pub fn lowest_eigenpair(
    h: &SparseHamiltonian,
    lat: &Lattice,
    opts: &GroundStateOptions,
) -> Result<GroundState> {
    let dim = h.dimension();
    let sector = opts.sector.as_deref();
    if let Some(s) = sector {
        if s.len() != lat.dim() {
            return Err(Error::InvalidInput(format!("sector labels {s:?}")));
        }
    }
    let mut flip = 0usize;
    if let Some(s) = sector {
        for (mu, &v) in s.iter().enumerate() {
            if v == -1 {
                flip ^= lat.noncontractible_loop(mu)?.mask();
            }
        }
    }
    let np = lat.num_plaquettes() as f64;
    let mut x: Vec<f64> = (0..dim)
        .map(|i| {
            let flat = h.plaquette_sum[i] == -np;
            let sign = if (i & flip).count_ones().is_multiple_of(2) {
                1.0
            } else {
                -1.0
            };
            // slight tilt so that the start is not an eigenvector at g = 0
            if flat {
                sign
            } else {
                1e-3 * sign
            }
        })
        .collect();
    h.project(&mut x, sector);
    let norm = dot(&x, &x).sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidInput(
            "start vector vanishes in sector".into(),
        ));
    }
    x.iter_mut().for_each(|v| *v /= norm);

    let m = opts.krylov_dim.max(2);
    let mut w = vec![0.0; dim];
    for _ in 0..opts.max_restarts {
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        for j in 0..m {
            h.matvec(&basis[j], &mut w);
            h.project(&mut w, sector);
            let a = dot(&basis[j], &w);
            alpha.push(a);
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &w);
                    axpy(-c, v, &mut w);
                }
            }
            let b = dot(&w, &w).sqrt();
            if j + 1 == m || b < 1e-13 {
                beta.push(b);
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|v| v / b).collect());
        }
        let k = alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (idx, _) =
            eig.eigenvalues
                .iter()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc },
                );
        let y = eig.eigenvectors.column(idx);
        let mut ritz = vec![0.0; dim];
        for (c, v) in y.iter().zip(&basis) {
            axpy(*c, v, &mut ritz);
        }
        let n = dot(&ritz, &ritz).sqrt();
        ritz.iter_mut().for_each(|v| *v /= n);
        h.matvec(&ritz, &mut w);
        let energy = dot(&ritz, &w);
        axpy(-energy, &ritz, &mut w);
        let residual = dot(&w, &w).sqrt();
        if residual <= opts.tolerance {
            return Ok(GroundState {
                energy,
                vector: ritz,
                residual,
            });
        }
        x = ritz;
    }
    Err(Error::NoConvergence(format!(
        "Lanczos residual above {} after {} restarts",
        opts.tolerance, opts.max_restarts
    )))
}

/// `exp(-i H t) v`, dense below [`DENSE_MAX_LINKS`] links and Krylov above.
pub fn exact_evolve(h: &SparseHamiltonian, v: &StateVector, t: f64) -> Result<StateVector> {
    if v.len() != h.dimension() {
        return Err(Error::BadLength(v.len()));
    }
    if h.num_links <= DENSE_MAX_LINKS {
        DenseEvolver::new(h)?.evolve(v, t)
    } else {
        krylov_evolve(h, v, t, 1e-12)
    }
}

/// Eigendecomposition of a dense `H`, reusable for several times.
pub struct DenseEvolver {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl DenseEvolver {
    pub fn new(h: &SparseHamiltonian) -> Result<Self> {
        if h.num_links > DENSE_MAX_LINKS {
            return Err(Error::Capacity {
                requested: h.num_links,
                limit: DENSE_MAX_LINKS,
            });
        }
        let eig = SymmetricEigen::new(h.dense()?);
        Ok(Self {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn evolve(&self, v: &StateVector, t: f64) -> Result<StateVector> {
        let q = &self.vectors;
        let dim = self.values.len();
        let amps = v.amplitudes();
        let coeffs: Vec<Complex64> = (0..dim)
            .map(|k| {
                let c: Complex64 = (0..dim).map(|i| amps[i] * q[(i, k)]).sum();
                c * Complex64::from_polar(1.0, -self.values[k] * t)
            })
            .collect();
        let out = (0..dim)
            .map(|i| (0..dim).map(|k| coeffs[k] * q[(i, k)]).sum())
            .collect();
        StateVector::from_amplitudes(out)
    }
}

/// Lanczos-Krylov propagation in adaptive sub-intervals; each accepted
/// sub-interval has an a-posteriori error estimate below `tol * dt / t`.
pub fn krylov_evolve(
    h: &SparseHamiltonian,
    v: &StateVector,
    t: f64,
    tol: f64,
) -> Result<StateVector> {
    const M: usize = 40;
    let mut x: Vec<Complex64> = v.amplitudes().to_vec();
    if t == 0.0 {
        return StateVector::from_amplitudes(x);
    }
    let mut done = 0.0;
    let mut w = vec![Complex64::new(0.0, 0.0); x.len()];
    let total = t.abs();
    let sign = t.signum();
    let mut tau = (total).min(10.0 / h.norm_bound().max(1e-12));
    while done < total {
        let norm0 = cdot(&x, &x).re.sqrt();
        let mut basis: Vec<Vec<Complex64>> = vec![x.iter().map(|a| a / norm0).collect()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for j in 0..M {
            h.matvec_complex(&basis[j], &mut w);
            alpha.push(cdot(&basis[j], &w).re);
            for _ in 0..2 {
                for b in &basis {
                    let c = cdot(b, &w);
                    caxpy(-c, b, &mut w);
                }
            }
            let b = cdot(&w, &w).re.sqrt();
            beta.push(b);
            if j + 1 == M || b < 1e-14 {
                break;
            }
            basis.push(w.iter().map(|a| a / b).collect());
        }
        let k = alpha.len();
        let mut tm = DMatrix::zeros(k, k);
        for i in 0..k {
            tm[(i, i)] = alpha[i];
            if i + 1 < k {
                tm[(i, i + 1)] = beta[i];
                tm[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(tm);
        let breakdown = beta[k - 1] < 1e-14;
        let propagate = |dt: f64| -> Vec<Complex64> {
            (0..k)
                .map(|i| {
                    (0..k)
                        .map(|j| {
                            let qj0 = eig.eigenvectors[(0, j)];
                            let ph = Complex64::from_polar(1.0, -sign * eig.eigenvalues[j] * dt);
                            ph * (eig.eigenvectors[(i, j)] * qj0)
                        })
                        .sum()
                })
                .collect()
        };
        let mut step = tau.min(total - done);
        let mut coeffs = propagate(step);
        let mut tries = 0;
        while !breakdown && (beta[k - 1] * coeffs[k - 1].norm()) > tol * step / total {
            step *= 0.5;
            coeffs = propagate(step);
            tries += 1;
            if tries > 60 {
                return Err(Error::NoConvergence("Krylov step size underflow".into()));
            }
        }
        let mut next = vec![Complex64::new(0.0, 0.0); x.len()];
        for (c, b) in coeffs.iter().zip(&basis) {
            caxpy(c * norm0, b, &mut next);
        }
        x = next;
        done += step;
        tau = if tries == 0 { step * 1.5 } else { step };
    }
    StateVector::from_amplitudes(x)
}

/// Piecewise-exact reference for an adiabatic schedule: every substep
/// applies `exp(-i H(g_{k,m}) t_s / n)` exactly. Returns the state after
/// each step.
pub fn exact_adiabatic(
    lat: &Lattice,
    schedule: &AdiabaticSchedule,
    start: &StateVector,
) -> Result<Vec<StateVector>> {
    let base = SparseHamiltonian::build(lat, 0.0)?;
    let dt = schedule.t_step / schedule.substeps as f64;
    let mut state = start.clone();
    let mut out = Vec::with_capacity(schedule.num_steps);
    for k in 1..=schedule.num_steps {
        for m in 1..=schedule.substeps {
            let c = schedule.coupling(k, m);
            let h = match schedule.direction {
                Direction::ZToX => base.with_couplings(1.0, c),
                Direction::XToZ => base.with_couplings(c, 1.0),
            };
            state = exact_evolve(&h, &state, dt)?;
        }
        out.push(state.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coupling_spectrum() {
        let lat = Lattice::build(2, 2).unwrap();
        let h = SparseHamiltonian::build(&lat, 0.0).unwrap();
        let ev = DenseEvolver::new(&h).unwrap();
        let mut vals: Vec<i64> = ev.eigenvalues().iter().map(|v| v.round() as i64).collect();
        vals.sort();
        vals.dedup();
        assert_eq!(vals, vec![-4, 0, 4]);
        assert!(ev
            .eigenvalues()
            .iter()
            .all(|v| (v - v.round()).abs() < 1e-10));
    }

    #[test]
    fn matvec_matches_dense() {
        let lat = Lattice::build(2, 2).unwrap();
        let h = SparseHamiltonian::build(&lat, 0.7).unwrap();
        let d = h.dense().unwrap();
        let x: Vec<f64> = (0..256)
            .map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0)
            .collect();
        let mut y = vec![0.0; 256];
        h.matvec(&x, &mut y);
        let dx = &d * nalgebra::DVector::from_vec(x);
        let dev = y
            .iter()
            .zip(dx.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-12);
        assert!((&d - d.transpose()).abs().max() == 0.0);
    }

    #[test]
    fn ground_state_limits() {
        let lat = Lattice::build(2, 2).unwrap();
        let gs = ground_state(&lat, 0.0, &GroundStateOptions::default()).unwrap();
        assert!((gs.energy + 4.0).abs() < 1e-10);
        let nonzero: Vec<f64> = gs
            .vector
            .iter()
            .copied()
            .filter(|v| v.abs() > 1e-8)
            .collect();
        assert_eq!(nonzero.len(), 32);
        assert!(nonzero
            .iter()
            .all(|v| (v.abs() - nonzero[0].abs()).abs() < 1e-9));
        let gs = ground_state(&lat, 50.0, &GroundStateOptions::default()).unwrap();
        assert!((gs.energy / (50.0 * 8.0) + 1.0).abs() < 1e-3);
    }

    #[test]
    fn lanczos_matches_dense_in_gauge_sector() {
        let lat = Lattice::build(2, 2).unwrap();
        let g = 0.3;
        let gs = ground_state(&lat, g, &GroundStateOptions::default()).unwrap();
        assert!(gs.residual <= 1e-10);
        let h = SparseHamiltonian::build(&lat, g).unwrap();
        let min = DenseEvolver::new(&h)
            .unwrap()
            .eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        // global minimum lies in the gauge-invariant trivial sector
        assert!((gs.energy - min).abs() < 1e-9);
        let other = GroundStateOptions {
            sector: Some(vec![-1, 1]),
            ..Default::default()
        };
        let e2 = ground_state(&lat, g, &other).unwrap().energy;
        assert!(e2 > gs.energy);
    }

    #[test]
    fn evolution_identities() {
        let lat = Lattice::build(2, 2).unwrap();
        let h = SparseHamiltonian::build(&lat, 0.4).unwrap();
        let gs = ground_state(&lat, 0.4, &GroundStateOptions::default()).unwrap();
        let v = gs.to_state().unwrap();
        let same = exact_evolve(&h, &v, 0.0).unwrap();
        assert!(same.max_deviation(&v) < 1e-12);
        let t = 0.9;
        let u = exact_evolve(&h, &v, t).unwrap();
        let phase = Complex64::from_polar(1.0, -gs.energy * t);
        let expect =
            StateVector::from_amplitudes(v.amplitudes().iter().map(|a| a * phase).collect())
                .unwrap();
        assert!(u.max_deviation(&expect) < 1e-9);
        let mut w = StateVector::init_zero(8).unwrap();
        w.hadamard_all(&[0, 3, 5]).unwrap();
        let fwd = exact_evolve(&h, &w, 1.3).unwrap();
        let back = exact_evolve(&h, &fwd, -1.3).unwrap();
        assert!(back.max_deviation(&w) < 1e-9);
        let k = krylov_evolve(&h, &w, 1.3, 1e-12).unwrap();
        assert!(k.max_deviation(&fwd) < 1e-10);
    }

    #[test]
    fn size_guards() {
        let lat = Lattice::build(3, 3).unwrap();
        assert!(matches!(
            SparseHamiltonian::build(&lat, 1.0),
            Err(Error::Capacity { .. })
        ));
        let lat = Lattice::build(2, 3).unwrap();
        let h = SparseHamiltonian::build(&lat, 1.0).unwrap();
        assert!(DenseEvolver::new(&h).is_err());
        let opts = GroundStateOptions {
            krylov_dim: 3,
            max_restarts: 1,
            ..Default::default()
        };
        assert!(matches!(
            ground_state(&lat, 0.5, &opts),
            Err(Error::NoConvergence(_))
        ));
    }
}
