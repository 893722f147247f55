//! Quick oracle comparisons run by `qotl selftest`.

use qotl::ansatz::{build_hea, generate, init_theta_default, LatentVector};
use qotl::autodiff::{local_cost_grad, WithRespectTo};
use qotl::cost::{trace_distance, CostMetric, GroundCostKind, Shots};
use qotl::oracle::{brute_force_assignment, enumerate_basic_solutions, fd_cost_grad, random_state};
use qotl::rng;
use qotl::transport::{otl_between_ensembles, solve_ot_uniform, solve_ot_weighted, CostMatrix};
use qotl::Result;
use rand::Rng;

pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: &'static str, value: f64, tolerance: f64) -> Check {
    Check { name, value, tolerance, pass: value <= tolerance }
}

fn random_matrix(rows: usize, cols: usize, r: &mut qotl::rng::Rng) -> Result<CostMatrix> {
    CostMatrix::new(rows, cols, (0..rows * cols).map(|_| r.random::<f64>()).collect())
}

pub fn run(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let mut r = rng::child(seed, &[0]);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let spec = init_theta_default(&build_hea(3, 3, 1, &mut r)?, &mut r)?;
        let z = LatentVector::sample(1, &mut r);
        let psi = random_state(3, &mut r);
        for wrt in [WithRespectTo::Theta, WithRespectTo::Latent] {
            let shift = local_cost_grad(&psi, &spec, &z, &wrt, Shots::Exact, &mut r)?;
            let fd = fd_cost_grad(&psi, &spec, &z, &wrt, CostMetric::Local, 1e-5)?;
            for (a, b) in shift.values.iter().zip(&fd) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    out.push(check("shift_rule_vs_finite_difference", worst, 1e-6));

    let mut r = rng::child(seed, &[1]);
    let mut worst = 0.0f64;
    for size in 1..=6 {
        let c = random_matrix(size, size, &mut r)?;
        worst = worst.max((solve_ot_uniform(&c)?.loss - brute_force_assignment(&c)?).abs());
    }
    out.push(check("assignment_vs_permutation_search", worst, 1e-12));

    let mut r = rng::child(seed, &[2]);
    let c = random_matrix(3, 4, &mut r)?;
    let (p, q) = ([0.5, 0.3, 0.2], [0.1, 0.4, 0.25, 0.25]);
    let gap = (solve_ot_weighted(&c, &p, &q)?.loss - enumerate_basic_solutions(&c, &p, &q)?).abs();
    out.push(check("simplex_vs_vertex_enumeration", gap, 1e-12));

    let mut r = rng::child(seed, &[3]);
    let spec = init_theta_default(&build_hea(3, 3, 1, &mut r)?, &mut r)?;
    let zs = LatentVector::sample_batch(1, 5, &mut r);
    let ens = generate(&spec, &zs)?;
    let (sol, _) = otl_between_ensembles(&ens, &spec, &zs, GroundCostKind::local(Shots::Exact), &mut r)?;
    out.push(check("loss_of_identical_ensembles", sol.loss, 1e-9));

    let mut r = rng::child(seed, &[4]);
    let mut excess = 0.0f64;
    for _ in 0..100 {
        let (a, b, c) = (random_state(3, &mut r), random_state(3, &mut r), random_state(3, &mut r));
        let slack = trace_distance(&a, &c)? - trace_distance(&a, &b)? - trace_distance(&b, &c)?;
        excess = excess.max(slack);
    }
    out.push(check("trace_distance_triangle_excess", excess.max(0.0), 1e-12));

    Ok(out)
}
