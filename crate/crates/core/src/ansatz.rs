//! Layered latent-variable circuits and the training ensembles used with them.
//!
//! A layer applies one Pauli rotation `R_xi(theta * z_eta)` to every qubit and
//! then an entangling ladder. The rotation axes `xi` and latent indices `eta`
//! are drawn once at construction and cannot be changed afterwards; only
//! `theta` is replaceable. Latent index 0 is the constant bias `z_0 = 1`.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{Gate, Pauli, Statevector, MAX_QUBITS};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Entangler {
    #[serde(rename = "CZ_ladder")]
    CzLadder,
    #[serde(rename = "CX_ladder")]
    CxLadder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Full-width ladder every layer.
    Hea,
    /// Ladders confined to blocks whose offset alternates between layers.
    Ala { block_size: usize },
}

/// Layer count used when none is given: `3 + floor(n_z / n)`.
pub fn default_layers(n: usize, n_z: usize) -> usize {
    3 + n_z / n.max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircuitSpec {
    n: usize,
    n_layers: usize,
    n_z: usize,
    xi: Vec<Pauli>,
    eta: Vec<usize>,
    theta: Vec<f64>,
    entangler: Entangler,
    family: Family,
}

impl CircuitSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n: usize,
        n_layers: usize,
        n_z: usize,
        xi: Vec<Pauli>,
        eta: Vec<usize>,
        theta: Vec<f64>,
        entangler: Entangler,
        family: Family,
    ) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::QubitCount(n));
        }
        let slots = n * n_layers;
        for (name, len) in [("xi", xi.len()), ("eta", eta.len()), ("theta", theta.len())] {
            if len != slots {
                return Err(Error::Dimension(format!(
                    "{name} has {len} entries, expected n_layers * n = {slots}"
                )));
            }
        }
        if let Some(&bad) = eta.iter().find(|&&e| e > n_z) {
            return Err(Error::InvalidArgument(format!("eta entry {bad} exceeds n_z = {n_z}")));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("theta must be finite".into()));
        }
        if let Family::Ala { block_size } = family {
            if block_size < 2 {
                return Err(Error::InvalidArgument(format!(
                    "ALA block size must be at least 2, got {block_size}"
                )));
            }
        }
        Ok(Self { n, n_layers, n_z, xi, eta, theta, entangler, family })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn xi(&self) -> &[Pauli] {
        &self.xi
    }

    pub fn eta(&self) -> &[usize] {
        &self.eta
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn entangler(&self) -> Entangler {
        self.entangler
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Flat index of the rotation on `qubit` in `layer`.
    pub fn slot(&self, layer: usize, qubit: usize) -> usize {
        layer * self.n + qubit
    }

    /// Same structure, new trainable angles.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::Dimension(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                self.theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("theta must be finite".into()));
        }
        Ok(Self { theta, ..self.clone() })
    }

    /// Qubit pairs of the entangling ladder after rotation layer `layer`.
    pub fn entangler_pairs(&self, layer: usize) -> Vec<(usize, usize)> {
        let n = self.n;
        match self.family {
            Family::Ala { block_size } if block_size < n => {
                let offset = if layer % 2 == 1 { block_size / 2 } else { 0 };
                let mut pairs = Vec::new();
                let mut start = 0;
                let mut end = if offset > 0 { offset } else { block_size.min(n) };
                loop {
                    pairs.extend((start..end.saturating_sub(1)).map(|q| (q, q + 1)));
                    if end >= n {
                        break;
                    }
                    start = end;
                    end = (end + block_size).min(n);
                }
                pairs
            }
            _ => (0..n.saturating_sub(1)).map(|q| (q, q + 1)).collect(),
        }
    }

    /// Rotation angle `theta_slot * z_eta` of every slot.
    pub fn angles(&self, z: &LatentVector) -> Vec<f64> {
        self.theta
            .iter()
            .zip(&self.eta)
            .map(|(t, &e)| t * z.value(e))
            .collect()
    }

    fn check_latent(&self, z: &LatentVector) -> Result<()> {
        if z.len() != self.n_z {
            return Err(Error::Dimension(format!(
                "latent vector has {} entries, circuit expects {}",
                z.len(),
                self.n_z
            )));
        }
        Ok(())
    }

    /// Gate sequence of `U(z, theta)` in application order.
    pub fn gates(&self, z: &LatentVector) -> Result<Vec<Gate>> {
        self.check_latent(z)?;
        Ok(self.gates_for_angles(&self.angles(z)))
    }

    /// Gate sequence with explicit per-slot angles (used for shifted evaluations).
    pub(crate) fn gates_for_angles(&self, angles: &[f64]) -> Vec<Gate> {
        let mut gates = Vec::with_capacity(self.n_layers * (2 * self.n));
        for layer in 0..self.n_layers {
            for q in 0..self.n {
                let slot = self.slot(layer, q);
                gates.push(Gate::Rotation { axis: self.xi[slot], qubit: q, angle: angles[slot] });
            }
            for (a, b) in self.entangler_pairs(layer) {
                gates.push(match self.entangler {
                    Entangler::CzLadder => Gate::Cz(a, b),
                    Entangler::CxLadder => Gate::Cx { control: a, target: b },
                });
            }
        }
        gates
    }

    /// Serializes to the checkpoint text format.
    pub fn to_toml(&self) -> String {
        let doc = SpecDoc::from(self);
        toml::to_string(&doc).expect("spec document is always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: SpecDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        doc.try_into()
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct SpecDoc {
    n: usize,
    n_layers: usize,
    n_z: usize,
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block_size: Option<usize>,
    entangler: Entangler,
    xi: Vec<Pauli>,
    eta: Vec<usize>,
    theta: Vec<f64>,
}

impl From<&CircuitSpec> for SpecDoc {
    fn from(spec: &CircuitSpec) -> Self {
        let (family, block_size) = match spec.family {
            Family::Hea => ("HEA".to_string(), None),
            Family::Ala { block_size } => ("ALA".to_string(), Some(block_size)),
        };
        SpecDoc {
            n: spec.n,
            n_layers: spec.n_layers,
            n_z: spec.n_z,
            family,
            block_size,
            entangler: spec.entangler,
            xi: spec.xi.clone(),
            eta: spec.eta.clone(),
            theta: spec.theta.clone(),
        }
    }
}

impl TryFrom<SpecDoc> for CircuitSpec {
    type Error = Error;

    fn try_from(doc: SpecDoc) -> Result<Self> {
        let family = match (doc.family.as_str(), doc.block_size) {
            ("HEA", _) => Family::Hea,
            ("ALA", Some(block_size)) => Family::Ala { block_size },
            ("ALA", None) => return Err(Error::Parse("ALA spec needs block_size".into())),
            (other, _) => return Err(Error::Parse(format!("unknown family {other:?}"))),
        };
        CircuitSpec::from_parts(
            doc.n,
            doc.n_layers,
            doc.n_z,
            doc.xi,
            doc.eta,
            doc.theta,
            doc.entangler,
            family,
        )
    }
}

/// Latent variables `z_1..z_Nz`; the bias `z_0 = 1` is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "latent values must lie in [0, 1]: {values:?}"
            )));
        }
        Ok(Self(values))
    }

    /// No range check; finite-difference stencils step outside `[0, 1]`.
    pub(crate) fn unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Draw from `U(0,1)^n_z`.
    pub fn sample(n_z: usize, rng: &mut Rng) -> Self {
        Self((0..n_z).map(|_| rng.random::<f64>()).collect())
    }

    pub fn sample_batch(n_z: usize, count: usize, rng: &mut Rng) -> Vec<Self> {
        (0..count).map(|_| Self::sample(n_z, rng)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// `z_eta`, with `z_0 = 1`.
    pub fn value(&self, eta: usize) -> f64 {
        if eta == 0 {
            1.0
        } else {
            self.0[eta - 1]
        }
    }

    /// Same vector with each entry clamped into `[0, 1]`.
    pub fn clamped(values: &[f64]) -> Self {
        Self(values.iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

/// A weighted list of states sharing one qubit count.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    states: Vec<Statevector>,
    weights: Vec<f64>,
}

impl Ensemble {
    pub fn uniform(states: Vec<Statevector>) -> Result<Self> {
        let m = states.len();
        if m == 0 {
            return Err(Error::InvalidArgument("ensemble must not be empty".into()));
        }
        let n = states[0].n();
        if states.iter().any(|s| s.n() != n) {
            return Err(Error::Dimension("ensemble states differ in qubit count".into()));
        }
        Ok(Self { states, weights: vec![1.0 / m as f64; m] })
    }

    pub fn weighted(states: Vec<Statevector>, weights: Vec<f64>) -> Result<Self> {
        let mut e = Self::uniform(states)?;
        if weights.len() != e.states.len() || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be non-negative, one per state".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::WeightSum(total));
        }
        e.weights = weights;
        Ok(e)
    }

    pub fn n(&self) -> usize {
        self.states[0].n()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Statevector] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// First `m` states, reweighted uniformly.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        Self::uniform(self.states[..m.min(self.states.len())].to_vec())
    }
}

/// `U(z, theta)|0...0>`.
pub fn run_circuit(spec: &CircuitSpec, z: &LatentVector) -> Result<Statevector> {
    let mut state = Statevector::zero(spec.n())?;
    for g in spec.gates(z)? {
        state.apply_unchecked(&g);
    }
    Ok(state)
}

/// Model outputs for a batch of latent vectors.
pub fn generate(spec: &CircuitSpec, zs: &[LatentVector]) -> Result<Ensemble> {
    let states = zs.iter().map(|z| run_circuit(spec, z)).collect::<Result<Vec<_>>>()?;
    Ensemble::uniform(states)
}

fn random_structure(n: usize, n_layers: usize, n_z: usize, rng: &mut Rng) -> (Vec<Pauli>, Vec<usize>) {
    let slots = n * n_layers;
    let mut xi = Vec::with_capacity(slots);
    let mut eta = Vec::with_capacity(slots);
    for _ in 0..slots {
        xi.push(Pauli::ALL[rng.random_range(0..3)]);
        eta.push(rng.random_range(0..=n_z));
    }
    (xi, eta)
}

/// Hardware-efficient layered ansatz with a CZ ladder; `theta` starts at zero.
pub fn build_hea(n: usize, n_layers: usize, n_z: usize, rng: &mut Rng) -> Result<CircuitSpec> {
    if n_layers == 0 {
        return Err(Error::InvalidArgument("n_layers must be at least 1".into()));
    }
    let (xi, eta) = random_structure(n, n_layers, n_z, rng);
    CircuitSpec::from_parts(
        n,
        n_layers,
        n_z,
        xi,
        eta,
        vec![0.0; n * n_layers],
        Entangler::CzLadder,
        Family::Hea,
    )
}

/// Alternating layered ansatz: CZ ladders inside blocks of `block_size` qubits,
/// block boundaries shifted by `block_size / 2` on every other layer. A block
/// at least as wide as the register degenerates to the HEA ladder.
pub fn build_ala(
    n: usize,
    n_layers: usize,
    n_z: usize,
    block_size: usize,
    rng: &mut Rng,
) -> Result<CircuitSpec> {
    if block_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "ALA block size must be at least 2, got {block_size}"
        )));
    }
    if n_layers == 0 {
        return Err(Error::InvalidArgument("n_layers must be at least 1".into()));
    }
    let (xi, eta) = random_structure(n, n_layers, n_z, rng);
    CircuitSpec::from_parts(
        n,
        n_layers,
        n_z,
        xi,
        eta,
        vec![0.0; n * n_layers],
        Entangler::CzLadder,
        Family::Ala { block_size },
    )
}

/// Fresh i.i.d. angles, uniform in `[lo, hi)`.
pub fn init_theta(spec: &CircuitSpec, rng: &mut Rng, range: (f64, f64)) -> Result<CircuitSpec> {
    let (lo, hi) = range;
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("empty theta range [{lo}, {hi})")));
    }
    let theta = (0..spec.n_params()).map(|_| rng.random_range(lo..hi)).collect();
    spec.with_theta(theta)
}

pub fn init_theta_default(spec: &CircuitSpec, rng: &mut Rng) -> Result<CircuitSpec> {
    init_theta(spec, rng, (0.0, 2.0 * PI))
}

/// `cos(pi t / 2)|0...0> + e^{2 pi i phi} sin(pi t / 2)|1...1>`.
pub fn two_level_state(n: usize, theta_t: f64, phi_t: f64) -> Result<Statevector> {
    let mut amps = vec![Complex64::new(0.0, 0.0); 1usize << n.min(MAX_QUBITS + 1)];
    let half = 0.5 * PI * theta_t;
    let last = amps.len() - 1;
    amps[0] += Complex64::new(half.cos(), 0.0);
    amps[last] += Complex64::from_polar(half.sin(), 2.0 * PI * phi_t);
    Statevector::from_amplitudes(amps)
}

/// Training states spread uniformly in phase around the equator of the
/// `{|0...0>, |1...1>}` Bloch sphere.
pub fn gen_equator_ensemble(n: usize, m: usize, rng: &mut Rng) -> Result<Ensemble> {
    if m == 0 {
        return Err(Error::InvalidArgument("ensemble size must be at least 1".into()));
    }
    let states = (0..m)
        .map(|_| {
            let phi = rng.random::<f64>();
            equator_state(n, phi)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::uniform(states)
}

/// `cos(pi/4)|0...0> + e^{2 pi i phi} sin(pi/4)|1...1>`.
pub fn equator_state(n: usize, phi: f64) -> Result<Statevector> {
    let mut amps = vec![Complex64::new(0.0, 0.0); 1usize << n.min(MAX_QUBITS + 1)];
    let last = amps.len() - 1;
    amps[0] = Complex64::new(FRAC_PI_4.cos(), 0.0);
    amps[last] = Complex64::from_polar(FRAC_PI_4.sin(), 2.0 * PI * phi);
    Statevector::from_amplitudes(amps)
}

/// `(delta_theta, delta_phi)` pairs with `delta_theta ~ N(mu, sigma)` and
/// `delta_phi ~ U(a, b)`.
pub fn sample_localized_params(
    m: usize,
    mu: f64,
    sigma: f64,
    a: f64,
    b: f64,
    rng: &mut Rng,
) -> Result<Vec<(f64, f64)>> {
    if !(sigma >= 0.0) || !(a <= b) {
        return Err(Error::InvalidArgument(format!(
            "need sigma >= 0 and a <= b (sigma={sigma}, a={a}, b={b})"
        )));
    }
    let normal = Normal::new(mu, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((0..m)
        .map(|_| {
            let dt = normal.sample(rng);
            let dp = if a == b { a } else { rng.random_range(a..b) };
            (dt, dp)
        })
        .collect())
}

/// Training states clustered near `|0...0>`.
pub fn gen_localized_ensemble(
    n: usize,
    m: usize,
    mu: f64,
    sigma: f64,
    a: f64,
    b: f64,
    rng: &mut Rng,
) -> Result<Ensemble> {
    let params = sample_localized_params(m, mu, sigma, a, b, rng)?;
    let states = params
        .into_iter()
        .map(|(dt, dp)| two_level_state(n, dt, dp))
        .collect::<Result<Vec<_>>>()?;
    Ensemble::uniform(states)
}

/// `W' R_Z(zeta2) W' R_Y(zeta1) |0...0>` with `W'` the CX ladder.
pub fn bp_target_state(zeta1: &[f64], zeta2: &[f64]) -> Result<Statevector> {
    let n = zeta1.len();
    if zeta2.len() != n {
        return Err(Error::Dimension("zeta1 and zeta2 differ in length".into()));
    }
    let mut state = Statevector::zero(n)?;
    let ladder: Vec<Gate> = (0..n.saturating_sub(1))
        .map(|j| Gate::Cx { control: j, target: j + 1 })
        .collect();
    for (q, &a) in zeta1.iter().enumerate() {
        state.apply_unchecked(&Gate::ry(q, a));
    }
    ladder.iter().for_each(|g| state.apply_unchecked(g));
    for (q, &a) in zeta2.iter().enumerate() {
        state.apply_unchecked(&Gate::rz(q, a));
    }
    ladder.iter().for_each(|g| state.apply_unchecked(g));
    Ok(state)
}

/// Target ensemble for the gradient-variance study; angles uniform in `[0, 2 pi)`.
pub fn gen_bp_target_ensemble(n: usize, m: usize, rng: &mut Rng) -> Result<Ensemble> {
    if m == 0 {
        return Err(Error::InvalidArgument("ensemble size must be at least 1".into()));
    }
    let states = (0..m)
        .map(|_| {
            let zeta1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let zeta2: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            bp_target_state(&zeta1, &zeta2)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::uniform(states)
}

#[derive(Clone, Debug)]
pub struct TestPoint {
    pub theta_t: f64,
    pub phi_t: f64,
    pub state: Statevector,
}

/// Test states over the product grid, `theta` outer and `phi` inner.
pub fn gen_test_grid(n: usize, theta_grid: &[f64], phi_grid: &[f64]) -> Result<Vec<TestPoint>> {
    if theta_grid.is_empty() || phi_grid.is_empty() {
        return Err(Error::InvalidArgument("test grids must be non-empty".into()));
    }
    let mut points = Vec::with_capacity(theta_grid.len() * phi_grid.len());
    for &theta_t in theta_grid {
        for &phi_t in phi_grid {
            points.push(TestPoint { theta_t, phi_t, state: two_level_state(n, theta_t, phi_t)? });
        }
    }
    Ok(points)
}

/// `{0, 0.1, ..., 2.0}`.
pub fn default_test_axis() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Weight outside the `{|0...0>, |1...1>}` span.
    pub residual: f64,
}

/// Bloch coordinates within the span of `|0...0>` and `|1...1>`.
pub fn bloch_projection(state: &Statevector) -> BlochPoint {
    let amps = state.amplitudes();
    let a0 = amps[0];
    let a1 = amps[amps.len() - 1];
    let cross = a0 * a1.conj();
    let w0 = a0.norm_sqr();
    let w1 = a1.norm_sqr();
    BlochPoint {
        x: 2.0 * cross.re,
        y: 2.0 * cross.im,
        z: w0 - w1,
        residual: (1.0 - w0 - w1).max(0.0),
    }
}
