//! Dense statevector simulation.
//!
//! Conventions fixed here and honored everywhere else:
//! * qubit `k` is bit `k` of the basis index (qubit 0 is the least significant bit);
//! * a Pauli rotation is `R_P(a) = exp(-i a P)`, with no factor 1/2 on the generator.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MAX_QUBITS: usize = 14;
pub const NORM_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pauli::X => "X",
            Pauli::Y => "Y",
            Pauli::Z => "Z",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    /// `exp(-i angle P)` on `qubit`.
    Rotation { axis: Pauli, qubit: usize, angle: f64 },
    Cz(usize, usize),
    Cx { control: usize, target: usize },
}

impl Gate {
    pub fn rx(qubit: usize, angle: f64) -> Self {
        Gate::Rotation { axis: Pauli::X, qubit, angle }
    }

    pub fn ry(qubit: usize, angle: f64) -> Self {
        Gate::Rotation { axis: Pauli::Y, qubit, angle }
    }

    pub fn rz(qubit: usize, angle: f64) -> Self {
        Gate::Rotation { axis: Pauli::Z, qubit, angle }
    }

    pub fn inverse(&self) -> Self {
        match *self {
            Gate::Rotation { axis, qubit, angle } => Gate::Rotation { axis, qubit, angle: -angle },
            other => other,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let check = |q: usize| {
            if q < n {
                Ok(())
            } else {
                Err(Error::QubitOutOfRange { index: q, n })
            }
        };
        match *self {
            Gate::Rotation { qubit, .. } => check(qubit),
            Gate::Cz(a, b) | Gate::Cx { control: a, target: b } => {
                check(a)?;
                check(b)?;
                if a == b {
                    return Err(Error::RepeatedTarget(a));
                }
                Ok(())
            }
        }
    }
}

/// A normalized pure state of `n` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct Statevector {
    n: usize,
    amps: Vec<Complex64>,
}

fn check_qubit_count(n: usize) -> Result<()> {
    if (1..=MAX_QUBITS).contains(&n) {
        Ok(())
    } else {
        Err(Error::QubitCount(n))
    }
}

impl Statevector {
    /// `|0...0>` on `n` qubits.
    pub fn zero(n: usize) -> Result<Self> {
        Self::basis(n, 0)
    }

    pub fn basis(n: usize, index: usize) -> Result<Self> {
        check_qubit_count(n)?;
        let dim = 1usize << n;
        if index >= dim {
            return Err(Error::InvalidArgument(format!(
                "basis index {index} out of range for {n} qubits"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self { n, amps })
    }

    /// Wraps raw amplitudes. The vector is never renormalized: a norm off by more
    /// than [`NORM_TOLERANCE`] is rejected.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let dim = amps.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::Dimension(format!("{dim} amplitudes is not 2^n with n >= 1")));
        }
        let n = dim.trailing_zeros() as usize;
        check_qubit_count(n)?;
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOLERANCE || !norm.is_finite() {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { n, amps })
    }

    /// Unchecked constructor for amplitudes produced by unitary evolution.
    pub(crate) fn from_raw(n: usize, amps: Vec<Complex64>) -> Self {
        debug_assert_eq!(amps.len(), 1usize << n);
        Self { n, amps }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Statevector) -> Result<Complex64> {
        if self.n != other.n {
            return Err(Error::Dimension(format!(
                "{} vs {} qubits",
                self.n, other.n
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn apply_gate(&self, gate: &Gate) -> Result<Statevector> {
        let mut out = self.clone();
        out.apply_mut(gate)?;
        Ok(out)
    }

    pub fn apply_mut(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n)?;
        self.apply_unchecked(gate);
        Ok(())
    }

    /// Gate application for callers that validated the gate up front.
    pub(crate) fn apply_unchecked(&mut self, gate: &Gate) {
        match *gate {
            Gate::Rotation { axis, qubit, angle } => rotate(&mut self.amps, axis, qubit, angle),
            Gate::Cz(a, b) => {
                let mask = (1usize << a) | (1usize << b);
                for (x, amp) in self.amps.iter_mut().enumerate() {
                    if x & mask == mask {
                        *amp = -*amp;
                    }
                }
            }
            Gate::Cx { control, target } => {
                let c = 1usize << control;
                let t = 1usize << target;
                for x in 0..self.amps.len() {
                    if x & c != 0 && x & t == 0 {
                        self.amps.swap(x, x | t);
                    }
                }
            }
        }
    }

    pub fn probabilities(&self) -> Probabilities {
        Probabilities {
            n: self.n,
            values: self.amps.iter().map(|a| a.norm_sqr()).collect(),
        }
    }

    /// `P(bit k = 0)` for every qubit, in one pass over the amplitudes.
    pub fn zero_marginals(&self) -> Vec<f64> {
        zero_marginals_of(self.n, self.amps.iter().map(|a| a.norm_sqr()))
    }
}

fn rotate(amps: &mut [Complex64], axis: Pauli, qubit: usize, angle: f64) {
    let (s, c) = angle.sin_cos();
    let stride = 1usize << qubit;
    let dim = amps.len();
    let mut base = 0;
    while base < dim {
        for i in base..base + stride {
            let a0 = amps[i];
            let a1 = amps[i + stride];
            let (b0, b1) = match axis {
                // [[c, -is], [-is, c]]
                Pauli::X => (
                    Complex64::new(c * a0.re + s * a1.im, c * a0.im - s * a1.re),
                    Complex64::new(c * a1.re + s * a0.im, c * a1.im - s * a0.re),
                ),
                // [[c, -s], [s, c]]
                Pauli::Y => (c * a0 - s * a1, s * a0 + c * a1),
                // diag(e^{-ia}, e^{ia})
                Pauli::Z => (a0 * Complex64::new(c, -s), a1 * Complex64::new(c, s)),
            };
            amps[i] = b0;
            amps[i + stride] = b1;
        }
        base += 2 * stride;
    }
}

fn zero_marginals_of(n: usize, probs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut zero = vec![0.0; n];
    for (x, p) in probs.enumerate() {
        for (k, z) in zero.iter_mut().enumerate() {
            if x >> k & 1 == 0 {
                *z += p;
            }
        }
    }
    zero
}

/// Computational-basis outcome distribution of an `n`-qubit state.
#[derive(Clone, Debug, PartialEq)]
pub struct Probabilities {
    n: usize,
    values: Vec<f64>,
}

impl Probabilities {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Counts of `total` computational-basis measurements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShotTable {
    n: usize,
    counts: BTreeMap<usize, u64>,
    total: u64,
}

impl ShotTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    pub fn count(&self, outcome: usize) -> u64 {
        self.counts.get(&outcome).copied().unwrap_or(0)
    }
}

/// Single-qubit zero-outcome marginals, from exact probabilities or from shots.
pub trait ZeroMarginal {
    fn n_qubits(&self) -> usize;

    /// Marginals for every qubit without bounds checks.
    fn zero_marginals(&self) -> Vec<f64>;

    fn marginal_zero_prob(&self, k: usize) -> Result<f64> {
        let n = self.n_qubits();
        if k >= n {
            return Err(Error::QubitOutOfRange { index: k, n });
        }
        Ok(self.zero_marginals()[k])
    }
}

impl ZeroMarginal for Probabilities {
    fn n_qubits(&self) -> usize {
        self.n
    }

    fn zero_marginals(&self) -> Vec<f64> {
        zero_marginals_of(self.n, self.values.iter().copied())
    }
}

impl ZeroMarginal for ShotTable {
    fn n_qubits(&self) -> usize {
        self.n
    }

    fn zero_marginals(&self) -> Vec<f64> {
        let mut zeros = vec![0u64; self.n];
        for (&x, &c) in &self.counts {
            for (k, z) in zeros.iter_mut().enumerate() {
                if x >> k & 1 == 0 {
                    *z += c;
                }
            }
        }
        let total = self.total as f64;
        zeros.into_iter().map(|z| z as f64 / total).collect()
    }
}

impl ZeroMarginal for Statevector {
    fn n_qubits(&self) -> usize {
        self.n
    }

    fn zero_marginals(&self) -> Vec<f64> {
        Statevector::zero_marginals(self)
    }
}

pub fn basis_probabilities(state: &Statevector) -> Probabilities {
    state.probabilities()
}

pub fn marginal_zero_prob<M: ZeroMarginal + ?Sized>(source: &M, k: usize) -> Result<f64> {
    source.marginal_zero_prob(k)
}

/// Draws `n_s` i.i.d. computational-basis measurements of `state`.
///
/// Outcome counts are drawn as a multinomial via a chain of conditional
/// binomials over the basis indices in ascending order; each shot still
/// reports all `n` bits at once.
pub fn sample_shots(state: &Statevector, n_s: u64, rng: &mut Rng) -> Result<ShotTable> {
    if n_s == 0 {
        return Err(Error::InvalidArgument("shot count must be at least 1".into()));
    }
    let probs = state.amps.iter().map(|a| a.norm_sqr());
    Ok(sample_from_probs(state.n, probs, n_s, rng))
}

pub(crate) fn sample_from_probs(
    n: usize,
    probs: impl Iterator<Item = f64>,
    n_s: u64,
    rng: &mut Rng,
) -> ShotTable {
    let mut counts = BTreeMap::new();
    let mut remaining = n_s;
    let mut mass_left = 1.0f64;
    let mut last_nonzero = 0usize;
    for (x, p) in probs.enumerate() {
        if remaining == 0 {
            break;
        }
        if p <= 0.0 {
            continue;
        }
        last_nonzero = x;
        let q = if mass_left <= p { 1.0 } else { (p / mass_left).clamp(0.0, 1.0) };
        let k = if q >= 1.0 {
            remaining
        } else {
            // Binomial::new only fails for q outside [0, 1].
            Binomial::new(remaining, q).expect("probability in range").sample(rng)
        };
        if k > 0 {
            counts.insert(x, k);
        }
        remaining -= k;
        mass_left -= p;
    }
    if remaining > 0 {
        // Rounding left a sliver of mass unassigned; give it to the last live outcome.
        *counts.entry(last_nonzero).or_insert(0) += remaining;
    }
    ShotTable { n, counts, total: n_s }
}
