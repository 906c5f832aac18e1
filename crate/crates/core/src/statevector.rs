//! Dense double-precision state-vector register.
//!
//! Qubit `q` is bit `q` of the basis index. Single-qubit kernels walk the
//! amplitude buffer in blocks of `2 * stride` and pair index `i` with
//! `i + stride`; blocks are distributed over the rayon pool. Gate kernels are
//! element-wise, so the result never depends on how the buffer is partitioned.
//! Reductions sum fixed-size blocks and then fold the partial sums in index
//! order, which makes them independent of the thread count.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest register `init_zero` accepts (2^26 amplitudes, 1 GiB).
pub const MAX_QUBITS: usize = 26;

/// Default number of amplitudes handed to one rayon task.
pub const DEFAULT_CHUNK: usize = 1 << 14;

/// Amplitudes per partial sum in reductions. Fixed so that sums are
/// reproducible bit-for-bit.
const REDUCE_BLOCK: usize = 1 << 12;

/// Qubits below this index are handled together in one blocked pass by
/// [`StateVector::apply_uniform`].
const LOCAL_QUBITS: usize = 12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub type Matrix2 = [[Complex64; 2]; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateOp {
    Hadamard(usize),
    /// `exp(-i angle X / 2)`
    Rx {
        target: usize,
        angle: f64,
    },
    /// `exp(-i angle Z / 2)`
    Rz {
        target: usize,
        angle: f64,
    },
    Cnot {
        control: usize,
        target: usize,
    },
}

impl GateOp {
    /// 2x2 matrix of a single-qubit gate; `None` for CNOT.
    pub fn matrix(&self) -> Option<Matrix2> {
        match *self {
            GateOp::Hadamard(_) => Some(hadamard_matrix()),
            GateOp::Rx { angle, .. } => Some(rx_matrix(angle)),
            GateOp::Rz { angle, .. } => Some(rz_matrix(angle)),
            GateOp::Cnot { .. } => None,
        }
    }

    pub fn qubits(&self) -> (usize, Option<usize>) {
        match *self {
            GateOp::Hadamard(t) => (t, None),
            GateOp::Rx { target, .. } | GateOp::Rz { target, .. } => (target, None),
            GateOp::Cnot { control, target } => (target, Some(control)),
        }
    }
}

pub fn hadamard_matrix() -> Matrix2 {
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [[h, h], [h, -h]]
}

pub fn rx_matrix(angle: f64) -> Matrix2 {
    let (s, c) = (angle / 2.0).sin_cos();
    let c = Complex64::new(c, 0.0);
    let mis = Complex64::new(0.0, -s);
    [[c, mis], [mis, c]]
}

pub fn rz_matrix(angle: f64) -> Matrix2 {
    [
        [Complex64::from_polar(1.0, -angle / 2.0), ZERO],
        [ZERO, Complex64::from_polar(1.0, angle / 2.0)],
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<Complex64>,
    chunk: usize,
}

impl StateVector {
    /// `|0...0>` on `num_qubits` qubits.
    pub fn init_zero(num_qubits: usize) -> Result<Self> {
        if num_qubits > MAX_QUBITS {
            return Err(Error::Capacity {
                requested: num_qubits,
                limit: MAX_QUBITS,
            });
        }
        if num_qubits == 0 {
            return Err(Error::BadLength(1));
        }
        let mut amps = vec![ZERO; 1 << num_qubits];
        amps[0] = ONE;
        Ok(Self {
            num_qubits,
            amps,
            chunk: DEFAULT_CHUNK,
        })
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::BadLength(len));
        }
        let num_qubits = len.trailing_zeros() as usize;
        if num_qubits > MAX_QUBITS {
            return Err(Error::Capacity {
                requested: num_qubits,
                limit: MAX_QUBITS,
            });
        }
        Ok(Self {
            num_qubits,
            amps,
            chunk: DEFAULT_CHUNK,
        })
    }

    /// Sets the number of amplitudes per parallel task (rounded up to a power
    /// of two, at least 2).
    pub fn with_chunk_size(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(2).next_power_of_two();
        self
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn amplitude(&self, index: usize) -> Complex64 {
        self.amps[index]
    }

    fn check(&self, q: usize) -> Result<()> {
        if q >= self.num_qubits {
            Err(Error::QubitOutOfRange {
                index: q,
                num_qubits: self.num_qubits,
            })
        } else {
            Ok(())
        }
    }

    /// Bit mask of a qubit set, validating every index.
    pub fn mask_of(&self, qubits: &[usize]) -> Result<usize> {
        if qubits.is_empty() {
            return Err(Error::EmptyQubitSet);
        }
        let mut mask = 0usize;
        for &q in qubits {
            self.check(q)?;
            mask |= 1 << q;
        }
        Ok(mask)
    }

    pub fn apply_gate(&mut self, op: GateOp) -> Result<()> {
        match op {
            GateOp::Cnot { control, target } => self.cnot(control, target),
            _ => {
                let (target, _) = op.qubits();
                self.check(target)?;
                self.apply_matrix(target, op.matrix().unwrap_or([[ONE, ZERO], [ZERO, ONE]]));
                Ok(())
            }
        }
    }

    pub fn apply_all(&mut self, ops: &[GateOp]) -> Result<()> {
        ops.iter().try_for_each(|&op| self.apply_gate(op))
    }

    /// Applies an arbitrary 2x2 matrix to qubit `q` (caller validated `q`).
    pub(crate) fn apply_matrix(&mut self, q: usize, m: Matrix2) {
        let stride = 1usize << q;
        let span = stride << 1;
        let chunk = self.chunk;
        let kernel = move |lo: &mut [Complex64], hi: &mut [Complex64]| {
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = m[0][0] * x + m[0][1] * y;
                *b = m[1][0] * x + m[1][1] * y;
            }
        };
        if span <= chunk {
            self.amps.par_chunks_mut(chunk).for_each(|block| {
                for pair in block.chunks_exact_mut(span) {
                    let (lo, hi) = pair.split_at_mut(stride);
                    kernel(lo, hi);
                }
            });
        } else {
            let half = chunk / 2;
            for pair in self.amps.chunks_exact_mut(span) {
                let (lo, hi) = pair.split_at_mut(stride);
                lo.par_chunks_mut(half)
                    .zip(hi.par_chunks_mut(half))
                    .for_each(|(a, b)| kernel(a, b));
            }
        }
    }

    fn cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check(control)?;
        self.check(target)?;
        if control == target {
            return Err(Error::ControlIsTarget(control));
        }
        let stride = 1usize << target;
        let span = stride << 1;
        let cbit = 1usize << control;
        let chunk = self.chunk.max(span);
        self.amps
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(bi, block)| {
                let base = bi * chunk;
                for (pi, pair) in block.chunks_exact_mut(span).enumerate() {
                    let start = base + pi * span;
                    let (lo, hi) = pair.split_at_mut(stride);
                    for (j, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                        if (start + j) & cbit != 0 {
                            std::mem::swap(a, b);
                        }
                    }
                }
            });
        Ok(())
    }

    /// Applies the same 2x2 matrix to every listed qubit. Low qubits are
    /// processed together inside cache-sized blocks; the arithmetic per
    /// amplitude is identical to applying the gates one by one in ascending
    /// qubit order.
    pub fn apply_uniform(&mut self, qubits: &[usize], m: Matrix2) -> Result<()> {
        let mut sorted = qubits.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for &q in &sorted {
            self.check(q)?;
        }
        let split = sorted.partition_point(|&q| q < LOCAL_QUBITS.min(self.num_qubits));
        let (local, rest) = sorted.split_at(split);
        if !local.is_empty() {
            let block = (1usize << LOCAL_QUBITS).min(self.amps.len());
            let local = local.to_vec();
            self.amps.par_chunks_mut(block).for_each(|blk| {
                for &q in &local {
                    let stride = 1usize << q;
                    for pair in blk.chunks_exact_mut(stride << 1) {
                        let (lo, hi) = pair.split_at_mut(stride);
                        for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                            let (x, y) = (*a, *b);
                            *a = m[0][0] * x + m[0][1] * y;
                            *b = m[1][0] * x + m[1][1] * y;
                        }
                    }
                }
            });
        }
        for &q in rest {
            self.apply_matrix(q, m);
        }
        Ok(())
    }

    pub fn hadamard_all(&mut self, qubits: &[usize]) -> Result<()> {
        if qubits.is_empty() {
            return Err(Error::EmptyQubitSet);
        }
        self.apply_uniform(qubits, hadamard_matrix())
    }

    /// Multiplies amplitude `i` by `table[key(i)]`. Fast path for diagonal
    /// operators.
    pub fn apply_diagonal<K>(&mut self, key: K, table: &[Complex64])
    where
        K: Fn(usize) -> usize + Sync,
    {
        let chunk = self.chunk;
        self.amps
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(bi, block)| {
                let base = bi * chunk;
                for (j, a) in block.iter_mut().enumerate() {
                    *a *= table[key(base + j)];
                }
            });
    }

    /// Multiplies each amplitude by `(-1)^popcount(i & mask)`.
    pub fn apply_parity_sign(&mut self, mask: usize) {
        let chunk = self.chunk;
        self.amps
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(bi, block)| {
                let base = bi * chunk;
                for (j, a) in block.iter_mut().enumerate() {
                    if ((base + j) & mask).count_ones() & 1 == 1 {
                        *a = -*a;
                    }
                }
            });
    }

    /// Deterministic `sum_i weight(i) |a_i|^2`.
    pub fn weighted_sum<W>(&self, weight: W) -> f64
    where
        W: Fn(usize) -> f64 + Sync,
    {
        let partials: Vec<f64> = self
            .amps
            .par_chunks(REDUCE_BLOCK)
            .enumerate()
            .map(|(bi, block)| {
                let base = bi * REDUCE_BLOCK;
                block
                    .iter()
                    .enumerate()
                    .map(|(j, a)| weight(base + j) * a.norm_sqr())
                    .sum::<f64>()
            })
            .collect();
        partials.iter().sum()
    }

    /// Deterministic histogram: adds `|a_i|^2` to `bins[bin(i)]`.
    pub fn histogram<B>(&self, nbins: usize, bin: B) -> Vec<f64>
    where
        B: Fn(usize) -> usize + Sync,
    {
        let partials: Vec<Vec<f64>> = self
            .amps
            .par_chunks(REDUCE_BLOCK)
            .enumerate()
            .map(|(bi, block)| {
                let base = bi * REDUCE_BLOCK;
                let mut h = vec![0.0; nbins];
                for (j, a) in block.iter().enumerate() {
                    h[bin(base + j)] += a.norm_sqr();
                }
                h
            })
            .collect();
        let mut out = vec![0.0; nbins];
        for h in partials {
            for (o, v) in out.iter_mut().zip(h) {
                *o += v;
            }
        }
        out
    }

    /// Rescales to unit norm and returns the norm before rescaling.
    pub fn normalize(&mut self) -> Result<f64> {
        let norm = self.norm_sqr().sqrt();
        if norm <= 1e-300 {
            return Err(Error::InvalidInput("cannot normalize a zero vector".into()));
        }
        let inv = 1.0 / norm;
        self.amps.par_iter_mut().for_each(|a| *a *= inv);
        Ok(norm)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.weighted_sum(|_| 1.0)
    }

    pub fn prob_zero(&self, qubit: usize) -> Result<f64> {
        self.check(qubit)?;
        let bit = 1usize << qubit;
        Ok(self.weighted_sum(|i| if i & bit == 0 { 1.0 } else { 0.0 }))
    }

    /// Projects `qubit` onto `outcome` and renormalizes.
    pub fn collapse(&mut self, qubit: usize, outcome: u8) -> Result<()> {
        let p0 = self.prob_zero(qubit)?;
        let probability = if outcome == 0 { p0 } else { 1.0 - p0 };
        if probability <= 1e-12 {
            return Err(Error::ImpossibleOutcome {
                qubit,
                outcome,
                probability,
            });
        }
        let bit = 1usize << qubit;
        let keep = if outcome == 0 { 0 } else { bit };
        let scale = 1.0 / probability.sqrt();
        let chunk = self.chunk;
        self.amps
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(bi, block)| {
                let base = bi * chunk;
                for (j, a) in block.iter_mut().enumerate() {
                    if (base + j) & bit == keep {
                        *a *= scale;
                    } else {
                        *a = ZERO;
                    }
                }
            });
        Ok(())
    }

    /// `<prod_{q in qubits} sigma^z_q>`.
    pub fn expect_z_mask_product(&self, qubits: &[usize]) -> Result<f64> {
        let mask = self.mask_of(qubits)?;
        Ok(self.expect_parity(mask))
    }

    /// `sum_i (-1)^popcount(i & mask) |a_i|^2` for a pre-validated mask.
    pub fn expect_parity(&self, mask: usize) -> f64 {
        self.weighted_sum(|i| {
            if (i & mask).count_ones() & 1 == 0 {
                1.0
            } else {
                -1.0
            }
        })
    }

    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn max_deviation(&self, other: &StateVector) -> f64 {
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Drops the highest qubit, which must be in `|0>`.
    pub fn discard_top_qubit(self) -> Result<Self> {
        let top = self.num_qubits - 1;
        if self.num_qubits < 2 {
            return Err(Error::BadLength(self.amps.len()));
        }
        let p0 = self.prob_zero(top)?;
        if (1.0 - p0) > 1e-12 {
            return Err(Error::ImpossibleOutcome {
                qubit: top,
                outcome: 0,
                probability: p0,
            });
        }
        let mut amps = self.amps;
        amps.truncate(1 << top);
        Ok(Self {
            num_qubits: top,
            amps,
            chunk: self.chunk,
        })
    }

    /// Appends a qubit in `|0>` as the new highest qubit.
    pub fn append_zero_qubit(self) -> Result<Self> {
        let n = self.num_qubits + 1;
        if n > MAX_QUBITS {
            return Err(Error::Capacity {
                requested: n,
                limit: MAX_QUBITS,
            });
        }
        let mut amps = self.amps;
        amps.resize(1 << n, ZERO);
        Ok(Self {
            num_qubits: n,
            amps,
            chunk: self.chunk,
        })
    }
}
