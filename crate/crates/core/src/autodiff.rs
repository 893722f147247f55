//! Parameter-shift gradients of ground costs and of the fixed-plan OTL.
//!
//! Gates are `exp(-i a sigma)` without the usual factor 1/2, so the exact
//! shift rule is `dp/da = p(a + pi/4) - p(a - pi/4)`.

use std::f64::consts::FRAC_PI_4;

use rayon::prelude::*;

use crate::ansatz::{CircuitSpec, Ensemble, LatentVector};
use crate::cost::{CostMetric, GroundCostKind, PullBack, Shots};
use crate::error::{Error, Result};
use crate::qsim::Statevector;
use crate::rng::{self, Rng};
use crate::transport::{CostMatrix, TransportPlan};

pub const SHIFT: f64 = FRAC_PI_4;

/// Costs at or below this are treated as the minimum of a non-negative
/// function and get a zero (sub)gradient.
pub const ZERO_COST_GUARD: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub enum WithRespectTo {
    /// Every trainable angle, in flat slot order.
    Theta,
    /// Only the listed slots; values come back in the listed order.
    ThetaSlots(Vec<usize>),
    /// Latent coordinates `z_1..z_{N_z}`.
    Latent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub shots: Shots,
    /// Shifted circuit executions performed.
    pub executions: u64,
}

impl GradientVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Total measurement shots consumed (one per execution in exact mode).
    pub fn shots_used(&self) -> u64 {
        self.executions * self.shots.per_execution()
    }
}

/// Slots whose angles must be differentiated, with the chain-rule factor that
/// maps `dc/da_slot` onto each output component.
struct Targets {
    slots: Vec<usize>,
    /// `(output index, slot position, factor)`.
    terms: Vec<(usize, usize, f64)>,
    len: usize,
}

fn targets(spec: &CircuitSpec, z: &LatentVector, wrt: &WithRespectTo) -> Result<Targets> {
    match wrt {
        WithRespectTo::Theta => {
            let slots: Vec<usize> = (0..spec.n_params()).collect();
            let terms = slots.iter().map(|&s| (s, s, z.value(spec.eta()[s]))).collect();
            Ok(Targets { len: slots.len(), slots, terms })
        }
        WithRespectTo::ThetaSlots(list) => {
            if let Some(&bad) = list.iter().find(|&&s| s >= spec.n_params()) {
                return Err(Error::InvalidArgument(format!(
                    "slot {bad} out of range for {} parameters",
                    spec.n_params()
                )));
            }
            let terms = list
                .iter()
                .enumerate()
                .map(|(k, &s)| (k, k, z.value(spec.eta()[s])))
                .collect();
            Ok(Targets { len: list.len(), slots: list.clone(), terms })
        }
        WithRespectTo::Latent => {
            let slots: Vec<usize> = (0..spec.n_params()).filter(|&s| spec.eta()[s] > 0).collect();
            let terms = slots
                .iter()
                .enumerate()
                .map(|(pos, &s)| (spec.eta()[s] - 1, pos, spec.theta()[s]))
                .collect();
            Ok(Targets { len: spec.n_z(), slots, terms })
        }
    }
}

fn check_pair(psi: &Statevector, spec: &CircuitSpec, z: &LatentVector) -> Result<()> {
    if psi.n() != spec.n() {
        return Err(Error::Dimension(format!(
            "state has {} qubits, circuit has {}",
            psi.n(),
            spec.n()
        )));
    }
    if z.len() != spec.n_z() {
        return Err(Error::Dimension(format!(
            "latent vector has {} entries, circuit expects {}",
            z.len(),
            spec.n_z()
        )));
    }
    Ok(())
}

fn observe_angles(
    psi: &Statevector,
    spec: &CircuitSpec,
    angles: &[f64],
    metric: CostMetric,
    shots: Shots,
    seed: u64,
    path: &[u64],
) -> Vec<f64> {
    let chi = PullBack::from_gates(spec.n(), &spec.gates_for_angles(angles)).apply(psi);
    match shots {
        Shots::Exact => metric.observables(&chi),
        Shots::Finite(n_s) => metric.sampled_observables(&chi, n_s, &mut rng::child(seed, path)),
    }
}

/// `dp^{(k)}/da` for every observable `k`, at the gate angle of `slot`.
/// Stream `(seed, path.., 0)` drives the `+` shift and `(seed, path.., 1)` the `-` shift.
fn shifted_observable_grads(
    psi: &Statevector,
    spec: &CircuitSpec,
    angles: &[f64],
    slot: usize,
    metric: CostMetric,
    shots: Shots,
    seed: u64,
    path: &[u64],
) -> Vec<f64> {
    let mut shifted = angles.to_vec();
    let mut sub = path.to_vec();
    sub.push(0);
    shifted[slot] = angles[slot] + SHIFT;
    let plus = observe_angles(psi, spec, &shifted, metric, shots, seed, &sub);
    *sub.last_mut().expect("non-empty path") = 1;
    shifted[slot] = angles[slot] - SHIFT;
    let minus = observe_angles(psi, spec, &shifted, metric, shots, seed, &sub);
    plus.iter().zip(&minus).map(|(p, m)| p - m).collect()
}

/// Derivative of `p^{(k)}` (zero marginal of qubit `k` after the pull-back)
/// with respect to one parameter, by the shift rule.
pub fn shift_prob_grad(
    psi: &Statevector,
    spec: &CircuitSpec,
    z: &LatentVector,
    k_qubit: usize,
    param: &WithRespectTo,
    index: usize,
    shots: Shots,
    rng: &mut Rng,
) -> Result<f64> {
    check_pair(psi, spec, z)?;
    if k_qubit >= spec.n() {
        return Err(Error::QubitOutOfRange { index: k_qubit, n: spec.n() });
    }
    GroundCostKind::local(shots).validate()?;
    let t = targets(spec, z, param)?;
    if index >= t.len {
        return Err(Error::InvalidArgument(format!("parameter index {index} out of range")));
    }
    let seed = rng::fork_seed(rng);
    let angles = spec.angles(z);
    let mut total = 0.0;
    for &(out, pos, factor) in &t.terms {
        if out != index {
            continue;
        }
        let d = shifted_observable_grads(
            psi,
            spec,
            &angles,
            t.slots[pos],
            CostMetric::Local,
            shots,
            seed,
            &[pos as u64],
        );
        total += factor * d[k_qubit];
    }
    Ok(total)
}

/// Gradient of one ground cost given its value `c`. Shifted executions for
/// slot position `pos` use streams `(seed, path.., pos, sign)`.
fn pair_grad(
    psi: &Statevector,
    spec: &CircuitSpec,
    z: &LatentVector,
    t: &Targets,
    c: f64,
    metric: CostMetric,
    shots: Shots,
    seed: u64,
    path: &[u64],
) -> Vec<f64> {
    let mut out = vec![0.0; t.len];
    if c <= ZERO_COST_GUARD {
        return out;
    }
    let angles = spec.angles(z);
    let n_obs = match metric {
        CostMetric::Local => spec.n(),
        CostMetric::TraceDistance => 1,
    };
    let scale = -1.0 / (2.0 * n_obs as f64 * c);
    let mut sub = path.to_vec();
    sub.push(0);
    let dc_da: Vec<f64> = t
        .slots
        .iter()
        .enumerate()
        .map(|(pos, &slot)| {
            *sub.last_mut().expect("non-empty path") = pos as u64;
            let d = shifted_observable_grads(psi, spec, &angles, slot, metric, shots, seed, &sub);
            scale * d.iter().sum::<f64>()
        })
        .collect();
    for &(o, pos, factor) in &t.terms {
        out[o] += factor * dc_da[pos];
    }
    out
}

fn pair_cost(
    psi: &Statevector,
    spec: &CircuitSpec,
    z: &LatentVector,
    metric: CostMetric,
    shots: Shots,
    seed: u64,
    path: &[u64],
) -> Result<f64> {
    let chi = PullBack::new(spec, z)?.apply(psi);
    Ok(metric.cost(&chi, shots, &mut rng::child(seed, path)))
}

/// Parameter-shift gradient of the ground cost between `psi` and `U(z, theta)|0>`.
/// In sampled mode the cost value in the chain-rule factor is itself estimated
/// from a fresh batch of shots.
pub fn cost_grad(
    psi: &Statevector,
    spec: &CircuitSpec,
    z: &LatentVector,
    wrt: &WithRespectTo,
    kind: GroundCostKind,
    rng: &mut Rng,
) -> Result<GradientVector> {
    check_pair(psi, spec, z)?;
    kind.validate()?;
    let t = targets(spec, z, wrt)?;
    let seed = rng::fork_seed(rng);
    let c = pair_cost(psi, spec, z, kind.metric, kind.shots, seed, &[0])?;
    let values = pair_grad(psi, spec, z, &t, c, kind.metric, kind.shots, seed, &[1]);
    let executions = if c <= ZERO_COST_GUARD { 1 } else { 1 + 2 * t.slots.len() as u64 };
    Ok(GradientVector { values, shots: kind.shots, executions })
}

pub fn local_cost_grad(
    psi: &Statevector,
    spec: &CircuitSpec,
    z: &LatentVector,
    wrt: &WithRespectTo,
    shots: Shots,
    rng: &mut Rng,
) -> Result<GradientVector> {
    cost_grad(psi, spec, z, wrt, GroundCostKind::local(shots), rng)
}

/// Fixed-plan gradient `sum_{ij} pi_ij dc_ij/dv` of the OTL.
pub fn otl_grad(
    ensemble: &Ensemble,
    spec: &CircuitSpec,
    zs: &[LatentVector],
    plan: &TransportPlan,
    wrt: &WithRespectTo,
    kind: GroundCostKind,
    rng: &mut Rng,
) -> Result<GradientVector> {
    otl_grad_with_costs(ensemble, spec, zs, plan, None, wrt, kind, rng)
}

/// As [`otl_grad`], reusing the cost values of `costs` (typically the matrix
/// the plan was solved on) in the chain-rule factor when given.
pub fn otl_grad_with_costs(
    ensemble: &Ensemble,
    spec: &CircuitSpec,
    zs: &[LatentVector],
    plan: &TransportPlan,
    costs: Option<&CostMatrix>,
    wrt: &WithRespectTo,
    kind: GroundCostKind,
    rng: &mut Rng,
) -> Result<GradientVector> {
    kind.validate()?;
    if plan.rows() != ensemble.len() || plan.cols() != zs.len() {
        return Err(Error::Dimension(format!(
            "plan is {}x{}, ensemble has {} states and {} latent vectors",
            plan.rows(),
            plan.cols(),
            ensemble.len(),
            zs.len()
        )));
    }
    if let Some(c) = costs {
        if c.rows() != plan.rows() || c.cols() != plan.cols() {
            return Err(Error::Dimension("cost matrix does not match the plan".into()));
        }
    }
    if ensemble.n() != spec.n() {
        return Err(Error::Dimension(format!(
            "ensemble has {} qubits, circuit has {}",
            ensemble.n(),
            spec.n()
        )));
    }
    for z in zs {
        check_pair(&ensemble.states()[0], spec, z)?;
    }
    let len = match wrt {
        WithRespectTo::Theta => spec.n_params(),
        WithRespectTo::ThetaSlots(s) => s.len(),
        WithRespectTo::Latent => spec.n_z(),
    };
    let seed = rng::fork_seed(rng);
    let parts: Vec<(Vec<f64>, u64)> = plan
        .entries()
        .par_iter()
        .map(|&(i, j, w)| -> Result<(Vec<f64>, u64)> {
            let psi = &ensemble.states()[i];
            let z = &zs[j];
            let t = targets(spec, z, wrt)?;
            let path = [i as u64, j as u64];
            let (c, mut execs) = match costs {
                Some(m) => (m.get(i, j), 0),
                None => (pair_cost(psi, spec, z, kind.metric, kind.shots, seed, &[i as u64, j as u64, 0])?, 1),
            };
            let g = pair_grad(psi, spec, z, &t, c, kind.metric, kind.shots, seed, &[path[0], path[1], 1]);
            if c > ZERO_COST_GUARD {
                execs += 2 * t.slots.len() as u64;
            }
            Ok((g.into_iter().map(|x| w * x).collect(), execs))
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; len];
    let mut executions = 0;
    for (g, e) in parts {
        for (acc, x) in values.iter_mut().zip(g) {
            *acc += x;
        }
        executions += e;
    }
    Ok(GradientVector { values, shots: kind.shots, executions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{build_hea, init_theta_default, run_circuit};
    use crate::cost::ground_cost;
    use crate::oracle::{fd_cost_grad, random_state};
    use crate::qsim::{Gate, Pauli};
    use crate::transport::solve_ot_uniform;
    use crate::cost::cost_matrix;

    fn single_rx(angle: f64) -> CircuitSpec {
        CircuitSpec::from_parts(
            1,
            1,
            1,
            vec![Pauli::X],
            vec![0],
            vec![angle],
            crate::ansatz::Entangler::CzLadder,
            crate::ansatz::Family::Hea,
        )
        .unwrap()
    }

    #[test]
    fn rx_marginal_shift_matches_closed_form() {
        // the pulled-back marginal of |0> under RX(a)^dagger is cos^2(a)
        let spec = single_rx(FRAC_PI_4);
        let z = LatentVector::new(vec![0.5]).unwrap();
        let psi = Statevector::zero(1).unwrap();
        let mut r = rng::from_seed(0);
        let d = shift_prob_grad(&psi, &spec, &z, 0, &WithRespectTo::Theta, 0, Shots::Exact, &mut r).unwrap();
        assert!((d - (-1.0)).abs() < 1e-14);
        assert!(((2.0 * FRAC_PI_4).sin() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_latent_factor_kills_gradient() {
        let mut spec = single_rx(0.7);
        spec = CircuitSpec::from_parts(
            1,
            1,
            1,
            spec.xi().to_vec(),
            vec![1],
            vec![0.7],
            spec.entangler(),
            spec.family(),
        )
        .unwrap();
        let z = LatentVector::new(vec![0.0]).unwrap();
        let psi = Statevector::basis(1, 1).unwrap();
        let mut r = rng::from_seed(0);
        let g = local_cost_grad(&psi, &spec, &z, &WithRespectTo::Theta, Shots::Exact, &mut r).unwrap();
        assert_eq!(g.values, vec![0.0]);
    }

    #[test]
    fn matches_finite_differences() {
        let mut r = rng::from_seed(11);
        for trial in 0..12 {
            let n = 1 + trial % 4;
            let n_z = 1 + trial % 3;
            let spec = build_hea(n, 1 + trial % 4, n_z, &mut r).unwrap();
            let spec = init_theta_default(&spec, &mut r).unwrap();
            let z = LatentVector::sample(n_z, &mut r);
            let psi = random_state(n, &mut r);
            for metric in [CostMetric::Local, CostMetric::TraceDistance] {
                let kind = GroundCostKind { metric, shots: Shots::Exact };
                for wrt in [WithRespectTo::Theta, WithRespectTo::Latent] {
                    let g = cost_grad(&psi, &spec, &z, &wrt, kind, &mut r).unwrap();
                    let fd = fd_cost_grad(&psi, &spec, &z, &wrt, metric, 1e-4).unwrap();
                    for (a, b) in g.values.iter().zip(&fd) {
                        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn slot_subset_matches_full_gradient() {
        let mut r = rng::from_seed(3);
        let spec = init_theta_default(&build_hea(3, 3, 1, &mut r).unwrap(), &mut r).unwrap();
        let z = LatentVector::sample(1, &mut r);
        let psi = random_state(3, &mut r);
        let full = local_cost_grad(&psi, &spec, &z, &WithRespectTo::Theta, Shots::Exact, &mut r).unwrap();
        let sub = local_cost_grad(&psi, &spec, &z, &WithRespectTo::ThetaSlots(vec![4, 0]), Shots::Exact, &mut r)
            .unwrap();
        assert_eq!(sub.values, vec![full.values[4], full.values[0]]);
        assert!(local_cost_grad(&psi, &spec, &z, &WithRespectTo::ThetaSlots(vec![99]), Shots::Exact, &mut r)
            .is_err());
    }

    #[test]
    fn zero_cost_has_zero_gradient() {
        let mut r = rng::from_seed(4);
        let spec = init_theta_default(&build_hea(2, 3, 1, &mut r).unwrap(), &mut r).unwrap();
        let z = LatentVector::sample(1, &mut r);
        let psi = run_circuit(&spec, &z).unwrap();
        let g = local_cost_grad(&psi, &spec, &z, &WithRespectTo::Theta, Shots::Exact, &mut r).unwrap();
        assert!(g.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_entry_plan_equals_pair_gradient() {
        let mut r = rng::from_seed(5);
        let spec = init_theta_default(&build_hea(2, 3, 2, &mut r).unwrap(), &mut r).unwrap();
        let zs = vec![LatentVector::sample(2, &mut r)];
        let ens = Ensemble::uniform(vec![random_state(2, &mut r)]).unwrap();
        let plan = TransportPlan::new(1, 1, vec![(0, 0, 1.0)]).unwrap();
        let g = otl_grad(&ens, &spec, &zs, &plan, &WithRespectTo::Theta, GroundCostKind::LOCAL_EXACT, &mut r)
            .unwrap();
        let p = local_cost_grad(&ens.states()[0], &spec, &zs[0], &WithRespectTo::Theta, Shots::Exact, &mut r)
            .unwrap();
        for (a, b) in g.values.iter().zip(&p.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_ensembles_have_zero_otl_gradient() {
        let mut r = rng::from_seed(6);
        let spec = init_theta_default(&build_hea(3, 3, 1, &mut r).unwrap(), &mut r).unwrap();
        let zs = LatentVector::sample_batch(1, 5, &mut r);
        let ens = crate::ansatz::generate(&spec, &zs).unwrap();
        let c = cost_matrix(&ens, &spec, &zs, GroundCostKind::LOCAL_EXACT, &mut r).unwrap();
        let sol = solve_ot_uniform(&c).unwrap();
        let g = otl_grad(&ens, &spec, &zs, &sol.plan, &WithRespectTo::Theta, GroundCostKind::LOCAL_EXACT, &mut r)
            .unwrap();
        assert!(g.values.iter().all(|x| x.abs() < 1e-8));
    }

    #[test]
    fn otl_gradient_matches_resolved_finite_difference() {
        let mut r = rng::from_seed(7);
        let mut checked = 0;
        while checked < 5 {
            let n = 2 + checked % 3;
            let m = 2 + checked % 3;
            let spec = init_theta_default(&build_hea(n, 2, 1, &mut r).unwrap(), &mut r).unwrap();
            let zs = LatentVector::sample_batch(1, m, &mut r);
            let ens = Ensemble::uniform((0..m).map(|_| random_state(n, &mut r)).collect()).unwrap();
            let loss_at = |s: &CircuitSpec| {
                let c = cost_matrix(&ens, s, &zs, GroundCostKind::LOCAL_EXACT, &mut rng::from_seed(0)).unwrap();
                solve_ot_uniform(&c).unwrap()
            };
            let base = loss_at(&spec);
            let g = otl_grad(&ens, &spec, &zs, &base.plan, &WithRespectTo::Theta, GroundCostKind::LOCAL_EXACT, &mut r)
                .unwrap();
            let h = 1e-4;
            let mut ok = true;
            let mut fd = Vec::new();
            for s in 0..spec.n_params() {
                let mut tp = spec.theta().to_vec();
                tp[s] += h;
                let up = loss_at(&spec.with_theta(tp.clone()).unwrap());
                tp[s] -= 2.0 * h;
                let down = loss_at(&spec.with_theta(tp).unwrap());
                // skip instances where the optimal plan changes inside the stencil
                ok &= up.plan == base.plan && down.plan == base.plan;
                fd.push((up.loss - down.loss) / (2.0 * h));
            }
            if !ok {
                continue;
            }
            for (a, b) in g.values.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
            checked += 1;
        }
    }

    #[test]
    fn sampled_marginal_gradient_is_unbiased() {
        let mut r = rng::from_seed(8);
        let spec = init_theta_default(&build_hea(2, 2, 1, &mut r).unwrap(), &mut r).unwrap();
        let z = LatentVector::new(vec![0.8]).unwrap();
        let psi = random_state(2, &mut r);
        let wrt = WithRespectTo::Theta;
        let slot = (0..spec.n_params()).find(|&s| spec.eta()[s] == 0).unwrap_or(0);
        let exact = shift_prob_grad(&psi, &spec, &z, 0, &wrt, slot, Shots::Exact, &mut r).unwrap();
        let n_s = 200;
        let draws: Vec<f64> = (0..1000)
            .map(|_| shift_prob_grad(&psi, &spec, &z, 0, &wrt, slot, Shots::Finite(n_s), &mut r).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let se = (var / draws.len() as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se + 1e-12, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn sampled_gradient_is_seeded() {
        let mut r = rng::from_seed(9);
        let spec = init_theta_default(&build_hea(2, 2, 1, &mut r).unwrap(), &mut r).unwrap();
        let z = LatentVector::sample(1, &mut r);
        let psi = random_state(2, &mut r);
        let kind = GroundCostKind::local(Shots::Finite(64));
        let a = cost_grad(&psi, &spec, &z, &WithRespectTo::Theta, kind, &mut rng::from_seed(1)).unwrap();
        let b = cost_grad(&psi, &spec, &z, &WithRespectTo::Theta, kind, &mut rng::from_seed(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.executions, 1 + 2 * spec.n_params() as u64);
        assert_eq!(a.shots_used(), 64 * a.executions);
        let _ = ground_cost(&psi, &spec, &z, kind, &mut r).unwrap();
    }

    #[test]
    fn rotation_gate_convention() {
        // exp(-i a X) on |0> leaves cos(a) amplitude on |0>
        let mut s = Statevector::zero(1).unwrap();
        s.apply_mut(&Gate::rx(0, 0.3)).unwrap();
        assert!((s.amplitudes()[0].re - 0.3f64.cos()).abs() < 1e-15);
    }
}
