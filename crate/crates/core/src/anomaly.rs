//! Anomaly scores: the smallest local cost a trained model can reach for a
//! test state, found by descent on the latent variables.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::ansatz::{two_level_state, CircuitSpec, Entangler, Family, LatentVector, TestPoint};
use crate::autodiff::{local_cost_grad, WithRespectTo};
use crate::cost::{ground_cost, local_cost_exact, GroundCostKind, Shots};
use crate::error::{Error, Result};
use crate::optim::{AdamParams, AdamState};
use crate::qsim::{Pauli, Statevector};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub enum ZInit {
    Uniform,
    Given(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyConfig {
    /// Shots per cost or shifted-circuit evaluation.
    pub shots: Shots,
    pub z_init: ZInit,
    pub iterations: usize,
    pub step: f64,
    pub restarts: usize,
    /// Size of the latent grid scanned before descent under `ZInit::Uniform`;
    /// one extra descent starts from its best point. 0 disables the scan.
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            shots: Shots::Exact,
            z_init: ZInit::Uniform,
            iterations: 200,
            step: 0.05,
            restarts: 4,
            grid_points: 100,
            seed: 0,
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument("iterations and restarts must be at least 1".into()));
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidArgument("descent step must be positive".into()));
        }
        GroundCostKind::local(self.shots).validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestartTrace {
    /// Evaluated cost after each accepted step, starting with the initial point.
    pub costs: Vec<f64>,
    pub best: f64,
    pub best_z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyResult {
    pub score: f64,
    pub argmin_z: Vec<f64>,
    pub restarts: Vec<RestartTrace>,
}

const EARLY_STOP: f64 = 1e-12;

pub fn anomaly_score(test: &Statevector, trained: &CircuitSpec, cfg: &AnomalyConfig) -> Result<AnomalyResult> {
    score_indexed(test, trained, cfg, 0)
}

fn score_indexed(test: &Statevector, trained: &CircuitSpec, cfg: &AnomalyConfig, index: u64) -> Result<AnomalyResult> {
    cfg.validate()?;
    if test.n() != trained.n() {
        return Err(Error::Dimension(format!(
            "test state has {} qubits, model has {}",
            test.n(),
            trained.n()
        )));
    }
    if let ZInit::Given(z) = &cfg.z_init {
        if z.len() != trained.n_z() {
            return Err(Error::Dimension("initial latent vector has the wrong length".into()));
        }
        LatentVector::new(z.clone())?;
    }
    let mut starts: Vec<Option<Vec<f64>>> = vec![None; cfg.restarts];
    if cfg.z_init == ZInit::Uniform {
        if let Some(z) = grid_start(test, trained, cfg, index)? {
            starts.push(Some(z));
        }
    }
    let restarts = starts
        .into_par_iter()
        .enumerate()
        .map(|(r, start)| descend(test, trained, cfg, index, r as u64, start))
        .collect::<Result<Vec<_>>>()?;
    let best = restarts
        .iter()
        .min_by(|a, b| a.best.total_cmp(&b.best))
        .expect("at least one restart");
    Ok(AnomalyResult { score: best.best, argmin_z: best.best_z.clone(), restarts: restarts.clone() })
}

/// Best point of a `k^N_z` grid with `k = floor(grid_points^(1/N_z))` points per
/// axis, endpoints included; `None` when `k < 2`.
fn grid_start(test: &Statevector, spec: &CircuitSpec, cfg: &AnomalyConfig, index: u64) -> Result<Option<Vec<f64>>> {
    let n_z = spec.n_z();
    let k = (cfg.grid_points as f64).powf(1.0 / n_z as f64).floor() as usize;
    if k < 2 || n_z == 0 {
        return Ok(None);
    }
    let total = k.pow(n_z as u32);
    let kind = GroundCostKind::local(cfg.shots);
    let eval_seed = rng::child_seed(cfg.seed, &[index, u64::MAX]);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for flat in 0..total {
        let mut rest = flat;
        let z: Vec<f64> = (0..n_z)
            .map(|_| {
                let i = rest % k;
                rest /= k;
                i as f64 / (k - 1) as f64
            })
            .collect();
        let c = ground_cost(test, spec, &LatentVector::new(z.clone())?, kind, &mut rng::child(eval_seed, &[flat as u64]))?;
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            best = Some((c, z));
        }
    }
    Ok(best.map(|(_, z)| z))
}

fn descend(
    test: &Statevector,
    spec: &CircuitSpec,
    cfg: &AnomalyConfig,
    index: u64,
    restart: u64,
    start: Option<Vec<f64>>,
) -> Result<RestartTrace> {
    let mut stream = rng::child(cfg.seed, &[index, restart]);
    let eval_seed = rng::child_seed(cfg.seed, &[index, restart, u64::MAX]);
    let kind = GroundCostKind::local(cfg.shots);
    let eval = |z: &LatentVector| ground_cost(test, spec, z, kind, &mut rng::from_seed(eval_seed));

    let mut z = match (start, &cfg.z_init) {
        (Some(v), _) => v,
        (None, ZInit::Given(v)) => v.clone(),
        (None, ZInit::Uniform) => LatentVector::sample(spec.n_z(), &mut stream).values().to_vec(),
    };
    let first = eval(&LatentVector::clamped(&z))?;
    let mut trace = RestartTrace { costs: vec![first], best: first, best_z: z.clone() };
    let hp = AdamParams { learning_rate: cfg.step, ..Default::default() };
    let mut adam = AdamState::new(spec.n_z());
    for _ in 0..cfg.iterations {
        if trace.best <= EARLY_STOP {
            break;
        }
        let g = local_cost_grad(test, spec, &LatentVector::clamped(&z), &WithRespectTo::Latent, cfg.shots, &mut stream)?;
        if g.values.iter().all(|&v| v == 0.0) {
            break;
        }
        adam.update(&hp, &mut z, &g.values)?;
        z.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        let c = eval(&LatentVector::clamped(&z))?;
        trace.costs.push(c);
        if c < trace.best {
            trace.best = c;
            trace.best_z = z.clone();
        }
    }
    Ok(trace)
}

/// Circuit whose outputs are exactly the equator states
/// `(|0...0> + e^{2 pi i z}|1...1>)/sqrt(2)` up to global phase: an `RY`
/// cascade that builds the GHZ-type superposition through the CZ ladder, and
/// one latent `RZ(pi z)` on qubit 0 in the last layer.
pub fn ideal_equator_model(n: usize) -> Result<CircuitSpec> {
    let layers = n.max(2);
    let slots = n * layers;
    let mut xi = vec![Pauli::Z; slots];
    let mut eta = vec![0; slots];
    let mut theta = vec![0.0; slots];
    let quarter = PI / 4.0;
    let slot = |layer: usize, q: usize| layer * n + q;
    xi[slot(0, 0)] = Pauli::Y;
    theta[slot(0, 0)] = quarter;
    if n > 1 {
        xi[slot(0, 1)] = Pauli::Y;
        theta[slot(0, 1)] = quarter;
    }
    for layer in 1..n {
        xi[slot(layer, layer)] = Pauli::Y;
        theta[slot(layer, layer)] = -quarter;
        if layer + 1 < n {
            xi[slot(layer, layer + 1)] = Pauli::Y;
            theta[slot(layer, layer + 1)] = quarter;
        }
    }
    let last = slot(layers - 1, 0);
    eta[last] = 1;
    theta[last] = PI;
    CircuitSpec::from_parts(n, layers, 1, xi, eta, theta, Entangler::CzLadder, Family::Hea)
}

pub const THEORY_GRID: usize = 400;

/// Reference anomaly score for the equator ensemble: the exact local cost
/// between the two-level test state and the ideal equator model, minimized
/// over the latent phase on a grid of [`THEORY_GRID`] points.
pub fn theoretical_as_equator(theta_t: f64, n: usize) -> Result<f64> {
    let test = two_level_state(n, theta_t, 0.0)?;
    let model = ideal_equator_model(n)?;
    let mut best = f64::INFINITY;
    for k in 0..THEORY_GRID {
        let z = LatentVector::new(vec![k as f64 / THEORY_GRID as f64])?;
        best = best.min(local_cost_exact(&test, &model, &z)?);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub theta_t: f64,
    pub phi_t: f64,
    pub score: f64,
    pub argmin_z: Vec<f64>,
    pub restarts_used: usize,
    pub theory: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    pub n_z: usize,
    pub with_theory: bool,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Columns `theta_t,phi_t,score,argmin_z_1..,restarts_used[,theory][,label]`.
    pub fn write_csv<W: Write>(&self, out: W, threshold: Option<f64>) -> Result<()> {
        let with_theory = self.with_theory;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["theta_t".to_string(), "phi_t".into(), "score".into()];
        header.extend((1..=self.n_z).map(|k| format!("argmin_z_{k}")));
        header.push("restarts_used".into());
        if with_theory {
            header.push("theory".into());
        }
        if threshold.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut row = vec![r.theta_t.to_string(), r.phi_t.to_string(), r.score.to_string()];
            row.extend(r.argmin_z.iter().map(f64::to_string));
            row.push(r.restarts_used.to_string());
            if with_theory {
                row.push(r.theory.map_or(String::new(), |t| t.to_string()));
            }
            if let Some(t) = threshold {
                row.push(if r.score > t { "anomalous" } else { "normal" }.into());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores every test point; test `i` uses streams `(seed, i, restart)`.
pub fn score_grid(tests: &[TestPoint], trained: &CircuitSpec, cfg: &AnomalyConfig, with_theory: bool) -> Result<ScoreTable> {
    let rows = tests
        .par_iter()
        .enumerate()
        .map(|(i, t)| -> Result<ScoreRow> {
            let res = score_indexed(&t.state, trained, cfg, i as u64)?;
            let theory = if with_theory { Some(theoretical_as_equator(t.theta_t, trained.n())?) } else { None };
            Ok(ScoreRow {
                theta_t: t.theta_t,
                phi_t: t.phi_t,
                score: res.score,
                argmin_z: res.argmin_z,
                restarts_used: res.restarts.len(),
                theory,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable { n_z: trained.n_z(), with_theory, rows })
}

/// Sample Pearson correlation; `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
