//! Generative-model training with the empirical OTL and Adam.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ansatz::{CircuitSpec, Ensemble, LatentVector, SpecDoc};
use crate::autodiff::{otl_grad_with_costs, WithRespectTo};
use crate::cost::{cost_matrix, trace_distance_matrix, CostMetric, GroundCostKind, Shots};
use crate::error::{Error, Result};
use crate::optim::{AdamParams, AdamState};
use crate::rng;
use crate::transport::{solve_for_ensemble, solve_ot_uniform};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Generated batch size per iteration; `None` uses the ensemble size.
    pub m_g: Option<usize>,
    pub metric: CostMetric,
    pub shots: Shots,
    pub iterations: usize,
    pub adam: AdamParams,
    pub seed: u64,
    /// Also evaluate the trace-distance OTL at every iteration.
    pub track_global: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m_g: None,
            metric: CostMetric::Local,
            shots: Shots::Exact,
            iterations: 100,
            adam: AdamParams::default(),
            seed: 0,
            track_global: false,
        }
    }
}

impl TrainConfig {
    pub fn kind(&self) -> GroundCostKind {
        GroundCostKind { metric: self.metric, shots: self.shots }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.kind().validate()?;
        if self.m_g == Some(0) {
            return Err(Error::InvalidArgument("m_g must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// OTL at the parameters before this iteration's update.
    pub loss: f64,
    pub global_loss: Option<f64>,
    pub grad_norm: f64,
    /// Cumulative state copies consumed so far.
    pub shots_used: u64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Columns `iteration,loss,grad_norm,shots_used[,global_loss]`. Wall time
    /// is left out so reruns produce identical files.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let with_global = self.records.iter().any(|r| r.global_loss.is_some());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iteration", "loss", "grad_norm", "shots_used"];
        if with_global {
            header.push("global_loss");
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.iteration.to_string(),
                r.loss.to_string(),
                r.grad_norm.to_string(),
                r.shots_used.to_string(),
            ];
            if with_global {
                row.push(r.global_loss.map_or(String::new(), |g| g.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// State copies consumed by cost-matrix estimation and by gradient estimation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub cost_copies: u64,
    pub gradient_copies: u64,
}

impl Budget {
    /// `M * M_g * N_s` for one cost matrix.
    pub fn cost_step(m: usize, m_g: usize, shots: Shots) -> u64 {
        (m * m_g) as u64 * shots.per_execution()
    }

    /// `support * N_p * 2 * N_s` for one fixed-plan gradient.
    pub fn gradient_step(support: usize, n_params: usize, shots: Shots) -> u64 {
        (support * n_params * 2) as u64 * shots.per_execution()
    }

    pub fn total(&self) -> u64 {
        self.cost_copies + self.gradient_copies
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub spec: CircuitSpec,
    pub trace: TrainTrace,
    pub optimizer: AdamState,
    pub budget: Budget,
}

/// Trains `theta` of `spec` against `ensemble`; structure and latent wiring stay fixed.
pub fn train(ensemble: &Ensemble, spec: &CircuitSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(ensemble, spec, cfg, AdamState::new(spec.n_params()), 0)
}

/// Continues training from a saved optimizer state; `start` offsets the
/// iteration numbers (and therefore the random streams).
pub fn train_from(
    ensemble: &Ensemble,
    spec: &CircuitSpec,
    cfg: &TrainConfig,
    mut optimizer: AdamState,
    start: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ensemble.is_empty() {
        return Err(Error::InvalidArgument("training ensemble is empty".into()));
    }
    if ensemble.n() != spec.n() {
        return Err(Error::Dimension(format!(
            "ensemble has {} qubits, circuit has {}",
            ensemble.n(),
            spec.n()
        )));
    }
    if optimizer.m.len() != spec.n_params() {
        return Err(Error::Dimension("optimizer state does not match the circuit".into()));
    }
    let m = ensemble.len();
    let m_g = cfg.m_g.unwrap_or(m);
    let kind = cfg.kind();
    let clock = Instant::now();
    let mut spec = spec.clone();
    let mut trace = TrainTrace::default();
    let mut budget = Budget::default();

    for iteration in start..start + cfg.iterations {
        let it = iteration as u64;
        let zs = LatentVector::sample_batch(spec.n_z(), m_g, &mut rng::child(cfg.seed, &[it, 0]));
        let c = cost_matrix(ensemble, &spec, &zs, kind, &mut rng::child(cfg.seed, &[it, 1]))?;
        let sol = solve_for_ensemble(&c, ensemble)?;
        let grad = otl_grad_with_costs(
            ensemble,
            &spec,
            &zs,
            &sol.plan,
            Some(&c),
            &WithRespectTo::Theta,
            kind,
            &mut rng::child(cfg.seed, &[it, 2]),
        )?;
        budget.cost_copies += Budget::cost_step(m, m_g, cfg.shots);
        budget.gradient_copies += Budget::gradient_step(sol.plan.entries().len(), spec.n_params(), cfg.shots);

        if !sol.loss.is_finite() || grad.values.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration,
                detail: format!("loss {} with gradient norm {}", sol.loss, grad.norm()),
            });
        }
        let global_loss = if cfg.track_global {
            Some(eval_global_otl(ensemble, &spec, &zs)?)
        } else {
            None
        };
        trace.records.push(TraceRecord {
            iteration,
            loss: sol.loss,
            global_loss,
            grad_norm: grad.norm(),
            shots_used: budget.total(),
            wall_seconds: clock.elapsed().as_secs_f64(),
        });

        let mut theta = spec.theta().to_vec();
        optimizer.update(&cfg.adam, &mut theta, &grad.values)?;
        spec = spec.with_theta(theta).map_err(|e| Error::Divergence {
            iteration,
            detail: e.to_string(),
        })?;
    }
    Ok(TrainOutcome { spec, trace, optimizer, budget })
}

/// Exact trace-distance OTL between the ensemble and the model outputs for `zs`.
pub fn eval_global_otl(ensemble: &Ensemble, spec: &CircuitSpec, zs: &[LatentVector]) -> Result<f64> {
    let generated = crate::ansatz::generate(spec, zs)?;
    let c = trace_distance_matrix(ensemble, &generated)?;
    if ensemble.weights().iter().all(|w| (w - 1.0 / ensemble.len() as f64).abs() < 1e-15) {
        Ok(solve_ot_uniform(&c)?.loss)
    } else {
        Ok(solve_for_ensemble(&c, ensemble)?.loss)
    }
}

/// A trained circuit plus everything needed to resume optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: CircuitSpec,
    pub optimizer: AdamState,
    pub adam: AdamParams,
    pub iterations_done: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    iterations_done: usize,
    adam: AdamParams,
    spec: SpecDoc,
    optimizer: AdamState,
}

impl Checkpoint {
    pub fn fresh(spec: CircuitSpec, adam: AdamParams) -> Self {
        let optimizer = AdamState::new(spec.n_params());
        Self { spec, optimizer, adam, iterations_done: 0 }
    }

    pub fn to_toml(&self) -> String {
        let doc = CheckpointDoc {
            iterations_done: self.iterations_done,
            adam: self.adam,
            spec: SpecDoc::from(&self.spec),
            optimizer: self.optimizer.clone(),
        };
        toml::to_string(&doc).expect("checkpoint is always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: CheckpointDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let spec = CircuitSpec::try_from(doc.spec)?;
        if doc.optimizer.m.len() != spec.n_params() || doc.optimizer.v.len() != spec.n_params() {
            return Err(Error::Parse("optimizer moments do not match the circuit".into()));
        }
        Ok(Self { spec, optimizer: doc.optimizer, adam: doc.adam, iterations_done: doc.iterations_done })
    }
}
