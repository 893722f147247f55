//! Monte-Carlo drivers for the sample-size, shot-count and gradient-variance
//! studies, and the power-law fitter used to summarize them.
//!
//! Each trial builds one cost matrix at the largest requested `M` and reads
//! every smaller `M` off its top-left block, so all sizes within a trial share
//! latent draws (and shot streams).

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::ansatz::{build_hea, default_layers, gen_bp_target_ensemble, generate, init_theta_default, CircuitSpec, LatentVector};
use crate::autodiff::{otl_grad_with_costs, WithRespectTo};
use crate::cost::{cost_matrices, cost_matrix, CostMetric, GroundCostKind, Shots};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::transport::solve_ot_uniform;

const TAG_A: u64 = 0xA;
const TAG_B: u64 = 0xB;
const TAG_SHOTS: u64 = 0x5;
const TAG_GRAD: u64 = 0x6;
const TAG_DEVIATION: u64 = 0x7;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentGrid {
    pub n: Vec<usize>,
    pub n_z: Vec<usize>,
    pub m: Vec<usize>,
    pub n_s: Vec<u64>,
    /// Empty means `3 + floor(N_z / n)` per cell.
    pub n_layers: Vec<usize>,
    pub n_monte: usize,
    pub seed: u64,
}

fn powers_of_two(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|i| 1usize << i).collect()
}

impl ExperimentGrid {
    /// Sample-size study; `full` restores the published grid.
    pub fn scaling_a(full: bool) -> Self {
        if full {
            Self {
                n: vec![1, 2, 4, 6, 8, 10],
                n_z: vec![1, 2, 4, 6, 8],
                m: powers_of_two(0, 10),
                n_s: vec![],
                n_layers: vec![],
                n_monte: 100,
                seed: 0,
            }
        } else {
            Self { n: vec![1, 2, 4], n_z: vec![1, 2], m: powers_of_two(2, 8), n_s: vec![], n_layers: vec![], n_monte: 20, seed: 0 }
        }
    }

    pub fn scaling_b(full: bool) -> Self {
        if full {
            Self {
                n: vec![1, 2, 4, 6, 8],
                n_z: vec![1, 2, 4, 6, 10, 14],
                m: powers_of_two(0, 10),
                n_s: vec![],
                n_layers: vec![],
                n_monte: 100,
                seed: 0,
            }
        } else {
            Self { n: vec![1, 2, 4], n_z: vec![1, 2, 4], m: powers_of_two(0, 8), n_s: vec![], n_layers: vec![], n_monte: 20, seed: 0 }
        }
    }

    pub fn shots(full: bool) -> Self {
        if full {
            Self {
                n: vec![8],
                n_z: vec![1, 2],
                m: powers_of_two(0, 10),
                n_s: (0..8).map(|i| 1u64 << (i + 7)).collect(),
                n_layers: vec![],
                n_monte: 256,
                seed: 0,
            }
        } else {
            Self {
                n: vec![4],
                n_z: vec![1],
                m: powers_of_two(0, 6),
                n_s: (0..5).map(|i| 1u64 << (i + 7)).collect(),
                n_layers: vec![],
                n_monte: 32,
                seed: 0,
            }
        }
    }

    pub fn gradvar(full: bool) -> Self {
        if full {
            Self {
                n: vec![2, 4, 6, 8, 10, 12, 14],
                n_z: vec![1],
                m: vec![2, 4, 8, 16],
                n_s: vec![],
                n_layers: vec![10, 25, 50, 100],
                n_monte: 300,
                seed: 0,
            }
        } else {
            Self { n: vec![2, 4, 6], n_z: vec![1], m: vec![2, 4], n_s: vec![], n_layers: vec![10], n_monte: 50, seed: 0 }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = self.n.contains(&0)
            || self.n_z.contains(&0)
            || self.m.contains(&0)
            || self.n_s.contains(&0)
            || self.n_layers.contains(&0)
            || self.n_monte == 0;
        if zero {
            return Err(Error::InvalidArgument("grid counts must be at least 1".into()));
        }
        if let Some(&n) = self.n.iter().find(|&&n| n > crate::qsim::MAX_QUBITS) {
            return Err(Error::QubitCount(n));
        }
        Ok(())
    }

    fn layers_for(&self, n: usize, n_z: usize) -> Vec<usize> {
        if self.n_layers.is_empty() {
            vec![default_layers(n, n_z)]
        } else {
            self.n_layers.clone()
        }
    }

    fn sorted_m(&self) -> Vec<usize> {
        let mut m = self.m.clone();
        m.sort_unstable();
        m.dedup();
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellKey {
    pub n: usize,
    pub n_z: usize,
    pub n_layers: usize,
    pub m: usize,
    pub n_s: Option<u64>,
    pub cost: CostMetric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub key: CellKey,
    pub trial: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub key: CellKey,
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance of the trial values.
    pub variance: f64,
    pub std_err: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitRow {
    pub n: usize,
    pub n_z: usize,
    pub fit: Option<FitResult>,
    /// Residual above ten times the median residual of the experiment.
    pub flagged: bool,
    /// Mean J at the largest grid M, the stand-in for the infinite-sample loss.
    pub j_at_max_m: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub trials: Vec<Trial>,
    pub cells: Vec<Cell>,
    pub fits: Vec<FitRow>,
}

fn metric_name(c: CostMetric) -> &'static str {
    match c {
        CostMetric::Local => "local",
        CostMetric::TraceDistance => "global",
    }
}

fn key_fields(k: &CellKey) -> Vec<String> {
    vec![
        k.n.to_string(),
        k.n_z.to_string(),
        k.n_layers.to_string(),
        k.m.to_string(),
        k.n_s.map_or("exact".to_string(), |s| s.to_string()),
        metric_name(k.cost).to_string(),
    ]
}

const KEY_HEADER: [&str; 6] = ["n", "n_z", "n_layers", "m", "n_s", "cost"];

impl ExperimentResult {
    pub fn cell(&self, key: &CellKey) -> Option<&Cell> {
        self.cells.iter().find(|c| &c.key == key)
    }

    pub fn write_trials_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = KEY_HEADER.to_vec();
        header.extend(["trial", "value"]);
        w.write_record(&header)?;
        for t in &self.trials {
            let mut row = key_fields(&t.key);
            row.push(t.trial.to_string());
            row.push(t.value.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_cells_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = KEY_HEADER.to_vec();
        header.extend(["count", "mean", "std_err", "variance"]);
        w.write_record(&header)?;
        for c in &self.cells {
            let mut row = key_fields(&c.key);
            row.extend([c.count.to_string(), c.mean.to_string(), c.std_err.to_string(), c.variance.to_string()]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_fits_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "n_z", "a", "b", "c", "rss", "flagged", "j_at_max_m", "note"])?;
        for f in &self.fits {
            let nums = match f.fit {
                Some(r) => [r.a, r.b, r.c, r.rss].map(|x| x.to_string()),
                None => Default::default(),
            };
            let mut row = vec![f.n.to_string(), f.n_z.to_string()];
            row.extend(nums);
            row.extend([f.flagged.to_string(), f.j_at_max_m.to_string(), f.note.clone()]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Groups trials by key in order of first appearance.
pub fn aggregate(trials: &[Trial]) -> Vec<Cell> {
    let mut order: Vec<CellKey> = Vec::new();
    let mut groups: HashMap<CellKey, Vec<f64>> = HashMap::new();
    for t in trials {
        groups
            .entry(t.key)
            .or_insert_with(|| {
                order.push(t.key);
                Vec::new()
            })
            .push(t.value);
    }
    order
        .into_iter()
        .map(|key| {
            let v = &groups[&key];
            let count = v.len();
            let mean = v.iter().sum::<f64>() / count as f64;
            let variance = if count > 1 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64
            } else {
                0.0
            };
            Cell { key, count, mean, variance, std_err: (variance / count as f64).sqrt() }
        })
        .collect()
}

fn random_spec(n: usize, n_layers: usize, n_z: usize, rng: &mut Rng) -> Result<CircuitSpec> {
    init_theta_default(&build_hea(n, n_layers, n_z, rng)?, rng)
}

/// Runs `trial(t)` for every Monte-Carlo index, in parallel, keeping order.
fn monte_carlo<F>(n_monte: usize, trial: F) -> Result<Vec<Vec<Trial>>>
where
    F: Fn(usize) -> Result<Vec<Trial>> + Sync + Send,
{
    (0..n_monte).into_par_iter().map(trial).collect()
}

fn flatten_sorted(per_trial: Vec<Vec<Trial>>) -> Vec<Trial> {
    // cell-major, trial-minor
    let mut all: Vec<Trial> = per_trial.into_iter().flatten().collect();
    let mut order: Vec<CellKey> = Vec::new();
    for t in &all {
        if !order.contains(&t.key) {
            order.push(t.key);
        }
    }
    all.sort_by_key(|t| (order.iter().position(|k| k == &t.key).expect("key present"), t.trial));
    all
}

/// Same-model sample-size study: data and model share `(xi, eta, theta)`;
/// each trial draws two independent latent batches.
pub fn experiment_a(grid: &ExperimentGrid) -> Result<ExperimentResult> {
    grid.validate()?;
    let ms = grid.sorted_m();
    let mut trials = Vec::new();
    for &n in &grid.n {
        for &n_z in &grid.n_z {
            for n_layers in grid.layers_for(n, n_z) {
                if ms.is_empty() {
                    continue;
                }
                let cell = [TAG_A, n as u64, n_z as u64, n_layers as u64];
                let spec = random_spec(n, n_layers, n_z, &mut rng::child(grid.seed, &cell))?;
                let m_max = *ms.last().expect("non-empty");
                let per = monte_carlo(grid.n_monte, |t| {
                    let mut r = rng::child(grid.seed, &[cell[0], cell[1], cell[2], cell[3], t as u64]);
                    let data = generate(&spec, &LatentVector::sample_batch(n_z, m_max, &mut r))?;
                    let zs = LatentVector::sample_batch(n_z, m_max, &mut r);
                    let c = cost_matrix(&data, &spec, &zs, GroundCostKind::LOCAL_EXACT, &mut r)?;
                    ms.iter()
                        .map(|&m| {
                            let loss = solve_ot_uniform(&c.submatrix(m, m)?)?.loss;
                            let key = CellKey { n, n_z, n_layers, m, n_s: None, cost: CostMetric::Local };
                            Ok(Trial { key, trial: t, value: loss })
                        })
                        .collect()
                })?;
                trials.extend(flatten_sorted(per));
            }
        }
    }
    let cells = aggregate(&trials);
    Ok(ExperimentResult { name: "scaling-a".into(), trials, cells, fits: vec![] })
}

/// Two-model sample-size study with a power-law fit of mean J against M per `(n, N_z)`.
pub fn experiment_b(grid: &ExperimentGrid) -> Result<ExperimentResult> {
    grid.validate()?;
    let ms = grid.sorted_m();
    let mut trials = Vec::new();
    for &n in &grid.n {
        for &n_z in &grid.n_z {
            for n_layers in grid.layers_for(n, n_z) {
                if ms.is_empty() {
                    continue;
                }
                let cell = [TAG_B, n as u64, n_z as u64, n_layers as u64];
                let mut spec_rng = rng::child(grid.seed, &cell);
                let data_spec = random_spec(n, n_layers, n_z, &mut spec_rng)?;
                let model_spec = random_spec(n, n_layers, n_z, &mut spec_rng)?;
                let m_max = *ms.last().expect("non-empty");
                let per = monte_carlo(grid.n_monte, |t| {
                    let mut r = rng::child(grid.seed, &[cell[0], cell[1], cell[2], cell[3], t as u64]);
                    let data = generate(&data_spec, &LatentVector::sample_batch(n_z, m_max, &mut r))?;
                    let zs = LatentVector::sample_batch(n_z, m_max, &mut r);
                    let c = cost_matrix(&data, &model_spec, &zs, GroundCostKind::LOCAL_EXACT, &mut r)?;
                    ms.iter()
                        .map(|&m| {
                            let loss = solve_ot_uniform(&c.submatrix(m, m)?)?.loss;
                            let key = CellKey { n, n_z, n_layers, m, n_s: None, cost: CostMetric::Local };
                            Ok(Trial { key, trial: t, value: loss })
                        })
                        .collect()
                })?;
                trials.extend(flatten_sorted(per));
            }
        }
    }
    let cells = aggregate(&trials);
    let mut fits = Vec::new();
    for &n in &grid.n {
        for &n_z in &grid.n_z {
            for n_layers in grid.layers_for(n, n_z) {
                let points: Vec<(f64, f64)> = cells
                    .iter()
                    .filter(|c| c.key.n == n && c.key.n_z == n_z && c.key.n_layers == n_layers)
                    .map(|c| (c.key.m as f64, c.mean))
                    .collect();
                let j_at_max_m = points.last().map_or(f64::NAN, |p| p.1);
                let (fit, note) = match fit_power_law(&points) {
                    Ok(f) => (Some(f), String::new()),
                    Err(e) => (None, e.to_string()),
                };
                fits.push(FitRow { n, n_z, fit, flagged: false, j_at_max_m, note });
            }
        }
    }
    flag_outlier_fits(&mut fits);
    Ok(ExperimentResult { name: "scaling-b".into(), trials, cells, fits })
}

fn flag_outlier_fits(fits: &mut [FitRow]) {
    let mut rss: Vec<f64> = fits.iter().filter_map(|f| f.fit.map(|r| r.rss)).collect();
    if rss.is_empty() {
        return;
    }
    rss.sort_by(f64::total_cmp);
    let median = if rss.len() % 2 == 1 {
        rss[rss.len() / 2]
    } else {
        0.5 * (rss[rss.len() / 2 - 1] + rss[rss.len() / 2])
    };
    for f in fits.iter_mut() {
        if let Some(r) = f.fit {
            f.flagged = r.rss > 10.0 * median;
        }
    }
}

/// Shot-noise study: mean `|J_sampled - J_exact|` over trials, for every
/// `(M, N_s)`; data and model come from different random circuits.
pub fn experiment_shots(grid: &ExperimentGrid) -> Result<ExperimentResult> {
    grid.validate()?;
    let ms = grid.sorted_m();
    let mut settings = vec![Shots::Exact];
    settings.extend(grid.n_s.iter().map(|&s| Shots::Finite(s)));
    let mut trials = Vec::new();
    for &n in &grid.n {
        for &n_z in &grid.n_z {
            for n_layers in grid.layers_for(n, n_z) {
                if ms.is_empty() || grid.n_s.is_empty() {
                    continue;
                }
                let cell = [TAG_SHOTS, n as u64, n_z as u64, n_layers as u64];
                let mut spec_rng = rng::child(grid.seed, &cell);
                let data_spec = random_spec(n, n_layers, n_z, &mut spec_rng)?;
                let model_spec = random_spec(n, n_layers, n_z, &mut spec_rng)?;
                let m_max = *ms.last().expect("non-empty");
                let per = monte_carlo(grid.n_monte, |t| {
                    let mut r = rng::child(grid.seed, &[cell[0], cell[1], cell[2], cell[3], t as u64]);
                    let data = generate(&data_spec, &LatentVector::sample_batch(n_z, m_max, &mut r))?;
                    let zs = LatentVector::sample_batch(n_z, m_max, &mut r);
                    let mats = cost_matrices(&data, &model_spec, &zs, CostMetric::Local, &settings, &mut r)?;
                    let mut out = Vec::new();
                    for &m in &ms {
                        let exact = solve_ot_uniform(&mats[0].submatrix(m, m)?)?.loss;
                        for (s, &n_s) in grid.n_s.iter().enumerate() {
                            let sampled = solve_ot_uniform(&mats[s + 1].submatrix(m, m)?)?.loss;
                            let key = CellKey { n, n_z, n_layers, m, n_s: Some(n_s), cost: CostMetric::Local };
                            out.push(Trial { key, trial: t, value: (sampled - exact).abs() });
                        }
                    }
                    Ok(out)
                })?;
                trials.extend(flatten_sorted(per));
            }
        }
    }
    let cells = aggregate(&trials);
    Ok(ExperimentResult { name: "shots".into(), trials, cells, fits: vec![] })
}

/// Gradient-variance study. Targets are fixed per `(n, N_L, M)`; each trial
/// draws a fresh circuit and latent batch, shared by both cost arms, and
/// records the fixed-plan derivative with respect to the first angle.
pub fn experiment_gradvar(grid: &ExperimentGrid, arms: &[CostMetric]) -> Result<ExperimentResult> {
    grid.validate()?;
    let mut trials = Vec::new();
    for &n in &grid.n {
        for &n_z in &grid.n_z {
            for n_layers in grid.layers_for(n, n_z) {
                for &m in &grid.m {
                    let cell = [TAG_GRAD, n as u64, n_z as u64, n_layers as u64, m as u64];
                    let targets = gen_bp_target_ensemble(n, m, &mut rng::child(grid.seed, &cell))?;
                    let per = monte_carlo(grid.n_monte, |t| {
                        let mut r = rng::child(grid.seed, &[cell[0], cell[1], cell[2], cell[3], cell[4], t as u64]);
                        let spec = random_spec(n, n_layers, n_z, &mut r)?;
                        let zs = LatentVector::sample_batch(n_z, m, &mut r);
                        let seed = rng::fork_seed(&mut r);
                        arms.iter()
                            .map(|&metric| {
                                let kind = GroundCostKind { metric, shots: Shots::Exact };
                                let c = cost_matrix(&targets, &spec, &zs, kind, &mut rng::from_seed(seed))?;
                                let sol = solve_ot_uniform(&c)?;
                                let g = otl_grad_with_costs(
                                    &targets,
                                    &spec,
                                    &zs,
                                    &sol.plan,
                                    Some(&c),
                                    &WithRespectTo::ThetaSlots(vec![0]),
                                    kind,
                                    &mut rng::from_seed(seed),
                                )?;
                                let key = CellKey { n, n_z, n_layers, m, n_s: None, cost: metric };
                                Ok(Trial { key, trial: t, value: g.values[0] })
                            })
                            .collect()
                    })?;
                    trials.extend(flatten_sorted(per));
                }
            }
        }
    }
    let cells = aggregate(&trials);
    Ok(ExperimentResult { name: "gradvar".into(), trials, cells, fits: vec![] })
}

/// Least-squares fit of `a M^{-1/b} + c`: exhaustive over `b` in `[0.3, 20]`
/// with step 0.01, closed-form `(a, c)` at each `b`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::InvalidArgument(format!("power-law fit needs at least 4 points, got {}", points.len())));
    }
    if points.iter().any(|p| !(p.0 > 0.0) || !p.1.is_finite()) {
        return Err(Error::InvalidArgument("fit points need positive M and finite values".into()));
    }
    let m0 = points[0].0;
    if points.iter().all(|p| p.0 == m0) {
        return Err(Error::InvalidArgument("all M values are equal".into()));
    }
    let mut best: Option<FitResult> = None;
    for k in 0..=1970 {
        let b = 0.3 + 0.01 * k as f64;
        let xs: Vec<f64> = points.iter().map(|p| p.0.powf(-1.0 / b)).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        let (a, c) = linear_fit(&xs, &ys);
        let rss = xs.iter().zip(&ys).map(|(x, y)| (a * x + c - y).powi(2)).sum::<f64>();
        if best.map_or(true, |f| rss < f.rss) {
            best = Some(FitResult { a, b, c, rss });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Ordinary least squares `y = slope * x + intercept`; a flat `x` gives slope 0.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    linear_fit(&xs, &ys).0
}

/// Fit of `sqrt(c1 ln M + c2)` via least squares on `y^2`; returns `(c1, c2, rss in y)`.
pub fn fit_log_sqrt(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1 * p.1).collect();
    let (c1, c2) = linear_fit(&xs, &ys);
    let rss = points
        .iter()
        .map(|&(m, y)| ((c1 * m.ln() + c2).max(0.0).sqrt() - y).powi(2))
        .sum();
    (c1, c2, rss)
}

/// Fit of `a M^{-1/2} + c`; returns `(a, c, rss)`.
pub fn fit_inverse_sqrt(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let xs: Vec<f64> = points.iter().map(|p| p.0.powf(-0.5)).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (a, c) = linear_fit(&xs, &ys);
    let rss = xs.iter().zip(&ys).map(|(x, y)| (a * x + c - y).powi(2)).sum();
    (a, c, rss)
}

/// Deviation bound on the sampled OTL at confidence `1 - delta` when every
/// exact ground cost is at least `g`.
pub fn deviation_bound(m: usize, n_s: u64, g: f64, delta: f64) -> f64 {
    let ns = n_s as f64;
    let spread = ((1.0 - g) / ns + (1.0 - g).powi(2) / (4.0 * ns * ns * g)).sqrt();
    (2.0 * m as f64 / delta).sqrt() * spread + (1.0 - g) / (2.0 * ns * g.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviationReport {
    pub bound: f64,
    pub deviations: Vec<f64>,
    pub violations: usize,
    pub rejected_instances: usize,
}

impl DeviationReport {
    pub fn violation_rate(&self) -> f64 {
        self.violations as f64 / self.deviations.len() as f64
    }
}

/// Empirical check of the sampled-OTL deviation bound on separated ensembles:
/// instances are redrawn until every exact local cost exceeds `g`.
pub fn deviation_bound_check(n: usize, m: usize, n_s: u64, g: f64, delta: f64, trials: usize, seed: u64) -> Result<DeviationReport> {
    if m == 0 || n_s == 0 || trials == 0 || !(g > 0.0 && g < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument("invalid bound-check settings".into()));
    }
    let bound = deviation_bound(m, n_s, g, delta);
    let n_layers = 3;
    let results = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, usize)> {
            let mut r = rng::child(seed, &[TAG_DEVIATION, t as u64]);
            for attempt in 0..10_000 {
                let data_spec = random_spec(n, n_layers, 1, &mut r)?;
                let model_spec = random_spec(n, n_layers, 1, &mut r)?;
                let data = generate(&data_spec, &LatentVector::sample_batch(1, m, &mut r))?;
                let zs = LatentVector::sample_batch(1, m, &mut r);
                let mats = cost_matrices(&data, &model_spec, &zs, CostMetric::Local, &[Shots::Exact, Shots::Finite(n_s)], &mut r)?;
                if mats[0].data().iter().any(|&c| c <= g) {
                    continue;
                }
                let exact = solve_ot_uniform(&mats[0])?.loss;
                let sampled = solve_ot_uniform(&mats[1])?.loss;
                return Ok(((sampled - exact).abs(), attempt));
            }
            Err(Error::InvalidArgument(format!("no separated instance found with g = {g}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let deviations: Vec<f64> = results.iter().map(|r| r.0).collect();
    let violations = deviations.iter().filter(|&&d| d > bound).count();
    let rejected_instances = results.iter().map(|r| r.1).sum();
    Ok(DeviationReport { bound, deviations, violations, rejected_instances })
}
