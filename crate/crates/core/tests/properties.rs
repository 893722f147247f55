use proptest::prelude::*;
use qotl::transport::{solve_ot_uniform, solve_ot_weighted, CostMatrix};

fn square(max: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max).prop_flat_map(|m| (Just(m), prop::collection::vec(0.0..1.0f64, m * m)))
}

fn weights(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05..1.0f64, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn loss_is_nonnegative_and_bounded_by_the_largest_cost((m, data) in square(7)) {
        let c = CostMatrix::new(m, m, data.clone()).unwrap();
        let loss = solve_ot_uniform(&c).unwrap().loss;
        prop_assert!(loss >= 0.0);
        prop_assert!(loss <= data.iter().cloned().fold(0.0, f64::max) + 1e-12);
    }

    #[test]
    fn loss_moves_no_more_than_the_costs(
        (m, data) in square(6),
        noise in prop::collection::vec(-0.1..0.1f64, 36),
    ) {
        let shifted: Vec<f64> = data.iter().zip(&noise).map(|(c, e)| (c + e).max(0.0)).collect();
        let gap = data.iter().zip(&shifted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let a = solve_ot_uniform(&CostMatrix::new(m, m, data).unwrap()).unwrap().loss;
        let b = solve_ot_uniform(&CostMatrix::new(m, m, shifted).unwrap()).unwrap().loss;
        prop_assert!((a - b).abs() <= gap + 1e-12);
    }

    #[test]
    fn weighted_plan_has_the_requested_marginals(
        data in prop::collection::vec(0.0..1.0f64, 12),
        p in weights(3),
        q in weights(4),
    ) {
        let c = CostMatrix::new(3, 4, data).unwrap();
        let sol = solve_ot_weighted(&c, &p, &q).unwrap();
        for (got, want) in sol.plan.row_sums().iter().zip(&p) {
            prop_assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in sol.plan.col_sums().iter().zip(&q) {
            prop_assert!((got - want).abs() < 1e-12);
        }
        prop_assert!((sol.dual_objective(&p, &q) - sol.loss).abs() < 1e-12);
    }
}
