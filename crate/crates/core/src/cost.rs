//! Ground costs between a target state and a model output `U(z, theta)|0...0>`.
//!
//! Both costs are read off the pulled-back state `U^dagger |psi>`:
//! the trace distance from its all-zeros probability, the local cost from its
//! single-qubit zero marginals. Either can be computed exactly or from a
//! finite number of computational-basis shots.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::ansatz::{CircuitSpec, Ensemble, LatentVector};
use crate::error::{Error, Result};
use crate::qsim::{sample_from_probs, Gate, Statevector};
use crate::rng::{self, Rng};
use crate::transport::CostMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CostMetric {
    /// `sqrt(1 - |<psi|phi>|^2)`.
    TraceDistance,
    /// `sqrt((1/n) sum_k (1 - p_k))` with `p_k` the zero marginals of `U^dagger |psi>`.
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shots {
    Exact,
    Finite(u64),
}

impl Shots {
    pub fn per_execution(&self) -> u64 {
        match self {
            Shots::Exact => 1,
            Shots::Finite(n) => *n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroundCostKind {
    pub metric: CostMetric,
    pub shots: Shots,
}

impl GroundCostKind {
    pub const LOCAL_EXACT: Self = Self { metric: CostMetric::Local, shots: Shots::Exact };
    pub const TRACE_EXACT: Self = Self { metric: CostMetric::TraceDistance, shots: Shots::Exact };

    pub fn local(shots: Shots) -> Self {
        Self { metric: CostMetric::Local, shots }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == Shots::Finite(0) {
            return Err(Error::InvalidArgument("shot count must be at least 1".into()));
        }
        Ok(())
    }
}

impl CostMetric {
    /// Probabilities the cost depends on, read from a pulled-back state.
    pub(crate) fn observables(&self, chi: &Statevector) -> Vec<f64> {
        match self {
            CostMetric::Local => chi.zero_marginals(),
            CostMetric::TraceDistance => vec![chi.amplitudes()[0].norm_sqr()],
        }
    }

    pub(crate) fn sampled_observables(&self, chi: &Statevector, n_s: u64, rng: &mut Rng) -> Vec<f64> {
        let probs = chi.amplitudes().iter().map(|a| a.norm_sqr());
        let table = sample_from_probs(chi.n(), probs, n_s, rng);
        match self {
            CostMetric::Local => crate::qsim::ZeroMarginal::zero_marginals(&table),
            CostMetric::TraceDistance => vec![table.count(0) as f64 / n_s as f64],
        }
    }

    /// Exact cost read off `chi`, summing the excited-state weights directly.
    pub(crate) fn exact_cost(&self, chi: &Statevector) -> f64 {
        let amps = chi.amplitudes();
        let excited = match self {
            CostMetric::Local => {
                let n = chi.n();
                let total: f64 = amps
                    .iter()
                    .enumerate()
                    .map(|(x, a)| x.count_ones() as f64 * a.norm_sqr())
                    .sum();
                total / n as f64
            }
            CostMetric::TraceDistance => amps[1..].iter().map(|a| a.norm_sqr()).sum(),
        };
        excited.max(0.0).sqrt()
    }

    pub(crate) fn cost(&self, chi: &Statevector, shots: Shots, rng: &mut Rng) -> f64 {
        match shots {
            Shots::Exact => self.exact_cost(chi),
            Shots::Finite(n_s) => cost_from_observables(&self.sampled_observables(chi, n_s, rng)),
        }
    }
}

/// `sqrt(mean(1 - p))`; both metrics share this form.
pub(crate) fn cost_from_observables(obs: &[f64]) -> f64 {
    let mean = obs.iter().map(|p| 1.0 - p).sum::<f64>() / obs.len() as f64;
    mean.max(0.0).sqrt()
}

/// Inverse of a model circuit, ready to pull many target states back.
pub(crate) enum PullBack {
    Gates { n: usize, gates: Vec<Gate> },
    Dense { n: usize, dim: usize, matrix: Vec<Complex64> },
}

impl PullBack {
    pub(crate) fn from_gates(n: usize, forward: &[Gate]) -> Self {
        let gates = forward.iter().rev().map(Gate::inverse).collect();
        PullBack::Gates { n, gates }
    }

    pub(crate) fn new(spec: &CircuitSpec, z: &LatentVector) -> Result<Self> {
        Ok(Self::from_gates(spec.n(), &spec.gates(z)?))
    }

    /// Same operator as a dense matrix; pays off when it is applied to more
    /// states than the circuit has amplitudes and the circuit is long.
    pub(crate) fn densify_if_cheaper(self, uses: usize) -> Self {
        let PullBack::Gates { n, gates } = &self else { return self };
        let dim = 1usize << n;
        let gate_cost = gates.len() * dim * 2;
        if uses < dim || dim * dim >= gate_cost {
            return self;
        }
        let mut matrix = vec![Complex64::new(0.0, 0.0); dim * dim];
        for col in 0..dim {
            let mut e = Statevector::basis(*n, col).expect("valid basis state");
            for g in gates {
                e.apply_unchecked(g);
            }
            for (row, a) in e.amplitudes().iter().enumerate() {
                matrix[row * dim + col] = *a;
            }
        }
        PullBack::Dense { n: *n, dim, matrix }
    }

    pub(crate) fn apply(&self, psi: &Statevector) -> Statevector {
        match self {
            PullBack::Gates { gates, .. } => {
                let mut chi = psi.clone();
                for g in gates {
                    chi.apply_unchecked(g);
                }
                chi
            }
            PullBack::Dense { n, dim, matrix } => {
                let src = psi.amplitudes();
                let amps = (0..*dim)
                    .map(|row| {
                        matrix[row * dim..(row + 1) * dim]
                            .iter()
                            .zip(src)
                            .map(|(m, a)| m * a)
                            .sum()
                    })
                    .collect();
                Statevector::from_raw(*n, amps)
            }
        }
    }
}

fn check_dims(psi: &Statevector, spec: &CircuitSpec) -> Result<()> {
    if psi.n() != spec.n() {
        return Err(Error::Dimension(format!(
            "state has {} qubits, circuit has {}",
            psi.n(),
            spec.n()
        )));
    }
    Ok(())
}

pub fn trace_distance(psi: &Statevector, phi: &Statevector) -> Result<f64> {
    let overlap = psi.inner(phi)?.norm_sqr();
    Ok((1.0 - overlap).max(0.0).sqrt())
}

/// Ground cost between `psi` and `U(z, theta)|0...0>` under `kind`.
pub fn ground_cost(
    psi: &Statevector,
    spec: &CircuitSpec,
    z: &LatentVector,
    kind: GroundCostKind,
    rng: &mut Rng,
) -> Result<f64> {
    check_dims(psi, spec)?;
    kind.validate()?;
    let chi = PullBack::new(spec, z)?.apply(psi);
    Ok(kind.metric.cost(&chi, kind.shots, rng))
}

pub fn local_cost_exact(psi: &Statevector, spec: &CircuitSpec, z: &LatentVector) -> Result<f64> {
    check_dims(psi, spec)?;
    let chi = PullBack::new(spec, z)?.apply(psi);
    Ok(CostMetric::Local.exact_cost(&chi))
}

/// Shot estimate from one table of `n_s` measurements of `U^dagger |psi>`;
/// every shot contributes to every qubit's marginal.
pub fn local_cost_sampled(
    psi: &Statevector,
    spec: &CircuitSpec,
    z: &LatentVector,
    n_s: u64,
    rng: &mut Rng,
) -> Result<f64> {
    ground_cost(psi, spec, z, GroundCostKind::local(Shots::Finite(n_s)), rng)
}

/// `c[i][j]` between target `i` and the model output for latent `zs[j]`.
///
/// Sampled entries use independent streams derived from one seed drawn from
/// `rng` and the entry index, so the result does not depend on scheduling.
pub fn cost_matrix(
    ensemble: &Ensemble,
    spec: &CircuitSpec,
    zs: &[LatentVector],
    kind: GroundCostKind,
    rng: &mut Rng,
) -> Result<CostMatrix> {
    let mut out = cost_matrices(ensemble, spec, zs, kind.metric, &[kind.shots], rng)?;
    Ok(out.pop().expect("one shot setting requested"))
}

/// One cost matrix per entry of `shot_settings`, all sharing the same pulled-back
/// states. Entry `(i, j)` of setting `s` samples from stream `(seed, i, j, s)`.
pub fn cost_matrices(
    ensemble: &Ensemble,
    spec: &CircuitSpec,
    zs: &[LatentVector],
    metric: CostMetric,
    shot_settings: &[Shots],
    rng: &mut Rng,
) -> Result<Vec<CostMatrix>> {
    if ensemble.is_empty() || zs.is_empty() {
        return Err(Error::InvalidArgument("cost matrix needs at least one row and column".into()));
    }
    if ensemble.n() != spec.n() {
        return Err(Error::Dimension(format!(
            "ensemble has {} qubits, circuit has {}",
            ensemble.n(),
            spec.n()
        )));
    }
    for s in shot_settings {
        GroundCostKind { metric, shots: *s }.validate()?;
    }
    let seed = rng::fork_seed(rng);
    let rows = ensemble.len();
    let cols = zs.len();
    let states = ensemble.states();
    let columns: Vec<Vec<Vec<f64>>> = zs
        .par_iter()
        .enumerate()
        .map(|(j, z)| -> Result<Vec<Vec<f64>>> {
            let op = PullBack::new(spec, z)?.densify_if_cheaper(rows);
            Ok(states
                .iter()
                .enumerate()
                .map(|(i, psi)| {
                    let chi = op.apply(psi);
                    shot_settings
                        .iter()
                        .enumerate()
                        .map(|(s, &shots)| {
                            match shots {
                                Shots::Exact => metric.exact_cost(&chi),
                                Shots::Finite(n_s) => {
                                    let mut r = rng::child(seed, &[i as u64, j as u64, s as u64]);
                                    cost_from_observables(&metric.sampled_observables(&chi, n_s, &mut r))
                                }
                            }
                        })
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    (0..shot_settings.len())
        .map(|s| {
            let mut data = vec![0.0; rows * cols];
            for (j, col) in columns.iter().enumerate() {
                for (i, entry) in col.iter().enumerate() {
                    data[i * cols + j] = entry[s];
                }
            }
            CostMatrix::new(rows, cols, data)
        })
        .collect()
}

/// Trace distances between two explicit state lists.
pub fn trace_distance_matrix(a: &Ensemble, b: &Ensemble) -> Result<CostMatrix> {
    let cols = b.len();
    let mut data = Vec::with_capacity(a.len() * cols);
    for psi in a.states() {
        for phi in b.states() {
            data.push(trace_distance(psi, phi)?);
        }
    }
    CostMatrix::new(a.len(), cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{build_hea, init_theta_default, run_circuit, Entangler, Family};
    use crate::qsim::Pauli;
    use rand::Rng as _;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn plus() -> Statevector {
        Statevector::from_amplitudes(vec![Complex64::new(FRAC_1_SQRT_2, 0.0); 2]).unwrap()
    }

    fn identity_spec(n: usize) -> CircuitSpec {
        CircuitSpec::from_parts(n, 1, 1, vec![Pauli::Z; n], vec![0; n], vec![0.0; n], Entangler::CzLadder, Family::Hea)
            .unwrap()
    }

    fn random_state(n: usize, rng: &mut Rng) -> Statevector {
        let mut amps: Vec<Complex64> = (0..1 << n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        Statevector::from_amplitudes(amps).unwrap()
    }

    fn random_model(n: usize, layers: usize, n_z: usize, seed: u64) -> (CircuitSpec, LatentVector) {
        let mut r = rng::from_seed(seed);
        let spec = init_theta_default(&build_hea(n, layers, n_z, &mut r).unwrap(), &mut r).unwrap();
        (spec, LatentVector::sample(n_z, &mut r))
    }

    #[test]
    fn own_output_costs_zero_to_machine_precision() {
        let mut r = rng::from_seed(21);
        for n in 1..=6 {
            let spec = init_theta_default(&build_hea(n, 8, 2, &mut r).unwrap(), &mut r).unwrap();
            let z = LatentVector::sample(2, &mut r);
            let psi = run_circuit(&spec, &z).unwrap();
            assert!(local_cost_exact(&psi, &spec, &z).unwrap() < 1e-12);
            let td = ground_cost(&psi, &spec, &z, GroundCostKind { metric: CostMetric::TraceDistance, shots: Shots::Exact }, &mut r);
            assert!(td.unwrap() < 1e-12);
        }
    }

    #[test]
    fn trace_distance_examples() {
        let zero = Statevector::zero(1).unwrap();
        let one = Statevector::basis(1, 1).unwrap();
        assert_eq!(trace_distance(&zero, &zero).unwrap(), 0.0);
        assert!((trace_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-15);
        assert!((trace_distance(&zero, &plus()).unwrap() - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(trace_distance(&zero, &Statevector::zero(2).unwrap()).is_err());
    }

    #[test]
    fn trace_distance_triangle_inequality() {
        let mut r = rng::from_seed(4);
        for _ in 0..200 {
            let (a, b, c) = (random_state(3, &mut r), random_state(3, &mut r), random_state(3, &mut r));
            let ab = trace_distance(&a, &b).unwrap();
            let bc = trace_distance(&b, &c).unwrap();
            let ac = trace_distance(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-10);
            assert!((ab - trace_distance(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn local_cost_examples() {
        let z = LatentVector::new(vec![0.5]).unwrap();
        let ones = Statevector::basis(3, 7).unwrap();
        assert!((local_cost_exact(&ones, &identity_spec(3), &z).unwrap() - 1.0).abs() < 1e-15);
        let c = local_cost_exact(&plus(), &identity_spec(1), &z).unwrap();
        assert!((c - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn local_cost_vanishes_on_own_output() {
        for seed in 0..30 {
            let n = 1 + (seed as usize % 8);
            let (spec, z) = random_model(n, 4, 2, seed);
            let psi = run_circuit(&spec, &z).unwrap();
            assert!(local_cost_exact(&psi, &spec, &z).unwrap() < 1e-7);
            let own = CostMatrix::single(local_cost_exact(&psi, &spec, &z).unwrap());
            assert!(own.get(0, 0) < 1e-7);
        }
    }

    #[test]
    fn single_qubit_local_cost_matches_trace_distance_for_identity() {
        let mut r = rng::from_seed(9);
        let z = LatentVector::new(vec![0.1]).unwrap();
        for _ in 0..50 {
            let psi = random_state(1, &mut r);
            let local = local_cost_exact(&psi, &identity_spec(1), &z).unwrap();
            let global = trace_distance(&psi, &Statevector::zero(1).unwrap()).unwrap();
            assert!((local - global).abs() < 1e-12);
        }
    }

    #[test]
    fn local_cost_is_not_symmetric() {
        // swapping roles of the two states changes the value for generic circuits
        let (spec_a, za) = random_model(3, 3, 1, 1);
        let (spec_b, zb) = random_model(3, 3, 1, 2);
        let a = run_circuit(&spec_a, &za).unwrap();
        let b = run_circuit(&spec_b, &zb).unwrap();
        let ab = local_cost_exact(&a, &spec_b, &zb).unwrap();
        let ba = local_cost_exact(&b, &spec_a, &za).unwrap();
        assert!((ab - ba).abs() > 1e-6);
    }

    #[test]
    fn sampled_cost_support_and_accuracy() {
        let z = LatentVector::new(vec![0.5]).unwrap();
        let spec = identity_spec(1);
        let est = local_cost_sampled(&plus(), &spec, &z, 4096, &mut rng::from_seed(1)).unwrap();
        assert!((est - FRAC_1_SQRT_2).abs() < 0.03);

        let (spec3, z3) = random_model(3, 2, 1, 5);
        let psi = random_state(3, &mut rng::from_seed(6));
        for seed in 0..20 {
            let c = local_cost_sampled(&psi, &spec3, &z3, 1, &mut rng::from_seed(seed)).unwrap();
            let j = c * c * 3.0;
            assert!((j - j.round()).abs() < 1e-12 && (0.0..=3.0).contains(&j.round()));
        }

        let own = run_circuit(&spec3, &z3).unwrap();
        // U^dagger U|0> is |0...0> up to rounding; nearly every shot reads all zeros
        for seed in 0..5 {
            let c = local_cost_sampled(&own, &spec3, &z3, 500, &mut rng::from_seed(seed)).unwrap();
            assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn sampled_cost_is_unbiased_inside_root() {
        let (spec, z) = random_model(2, 3, 1, 21);
        let psi = random_state(2, &mut rng::from_seed(22));
        let exact = local_cost_exact(&psi, &spec, &z).unwrap().powi(2);
        let trials = 10_000;
        let samples: Vec<f64> = (0..trials)
            .map(|s| local_cost_sampled(&psi, &spec, &z, 16, &mut rng::from_seed(s)).unwrap().powi(2))
            .collect();
        let mean = samples.iter().sum::<f64>() / trials as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "mean {mean} exact {exact} se {se}");
    }

    #[test]
    fn cost_matrix_shapes_and_determinism() {
        let (spec, _) = random_model(2, 3, 1, 3);
        let mut r = rng::from_seed(0);
        let zs = LatentVector::sample_batch(1, 4, &mut r);
        let data = crate::ansatz::gen_equator_ensemble(2, 3, &mut r).unwrap();
        let a = cost_matrix(&data, &spec, &zs, GroundCostKind::LOCAL_EXACT, &mut rng::from_seed(1)).unwrap();
        let b = cost_matrix(&data, &spec, &zs, GroundCostKind::LOCAL_EXACT, &mut rng::from_seed(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.rows(), a.cols()), (3, 4));
        assert!(a.data().iter().all(|c| (0.0..=1.0).contains(c)));
        for i in 0..3 {
            for j in 0..4 {
                let direct = local_cost_exact(&data.states()[i], &spec, &zs[j]).unwrap();
                assert!((a.get(i, j) - direct).abs() < 1e-12);
            }
        }
        let one = cost_matrix(&data.prefix(1).unwrap(), &spec, &zs[..1], GroundCostKind::LOCAL_EXACT, &mut r).unwrap();
        assert_eq!(one.get(0, 0), a.get(0, 0));
        let kind = GroundCostKind::local(Shots::Finite(64));
        let s1 = cost_matrix(&data, &spec, &zs, kind, &mut rng::from_seed(5)).unwrap();
        let s2 = cost_matrix(&data, &spec, &zs, kind, &mut rng::from_seed(5)).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn sampled_matrix_within_five_sigma() {
        let n_s = 4096;
        for seed in 0..5 {
            let (spec, _) = random_model(3, 3, 2, 100 + seed);
            let mut r = rng::from_seed(seed);
            let zs = LatentVector::sample_batch(2, 3, &mut r);
            let data = crate::ansatz::gen_bp_target_ensemble(3, 3, &mut r).unwrap();
            let exact = cost_matrix(&data, &spec, &zs, GroundCostKind::LOCAL_EXACT, &mut r).unwrap();
            let est = cost_matrix(&data, &spec, &zs, GroundCostKind::local(Shots::Finite(n_s)), &mut r).unwrap();
            for (c, e) in exact.data().iter().zip(est.data()) {
                // the mean inside the root has variance at most mu (1 - mu) / N_s
                let mu = c * c;
                let sd_inner = (mu * (1.0 - mu) / n_s as f64).sqrt();
                assert!((e * e - mu).abs() <= 5.0 * sd_inner + 1e-12, "{c} vs {e}");
            }
        }
    }

    #[test]
    fn dense_pullback_matches_gate_pullback() {
        let (spec, z) = random_model(3, 6, 2, 77);
        let gates = PullBack::new(&spec, &z).unwrap();
        let dense = PullBack::new(&spec, &z).unwrap().densify_if_cheaper(1000);
        assert!(matches!(dense, PullBack::Dense { .. }));
        let psi = random_state(3, &mut rng::from_seed(3));
        let a = gates.apply(&psi);
        let b = dense.apply(&psi);
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!((x - y).norm() < 1e-12);
        }
    }
}
