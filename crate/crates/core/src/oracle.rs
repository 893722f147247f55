//! Slow, independent reference computations used to check the fast paths.

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::ansatz::{CircuitSpec, LatentVector};
use crate::autodiff::WithRespectTo;
use crate::cost::CostMetric;
use crate::error::{Error, Result};
use crate::qsim::Statevector;
use crate::rng::Rng;
use crate::transport::CostMatrix;

/// Haar-random pure state (normalized complex Gaussian vector).
pub fn random_state(n: usize, rng: &mut Rng) -> Statevector {
    let dim = 1usize << n;
    let mut amps: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|a| *a /= norm);
    Statevector::from_amplitudes(amps).expect("normalized by construction")
}

/// `(1/M) min_sigma sum_i c[i][sigma(i)]` by enumerating every permutation.
pub fn brute_force_assignment(c: &CostMatrix) -> Result<f64> {
    let m = c.rows();
    if m != c.cols() || m > 9 {
        return Err(Error::InvalidArgument("brute force needs a square matrix with M <= 9".into()));
    }
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, c, &mut best);
    Ok(best / m as f64)
}

fn permute(perm: &mut [usize], k: usize, c: &CostMatrix, best: &mut f64) {
    if k == perm.len() {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum();
        if total < *best {
            *best = total;
        }
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, c, best);
        perm.swap(k, i);
    }
}

/// Minimum over all basic feasible solutions of the transportation polytope,
/// found by trying every set of `m + n - 1` cells that forms a spanning tree.
pub fn enumerate_basic_solutions(c: &CostMatrix, p: &[f64], q: &[f64]) -> Result<f64> {
    let (m, n) = (c.rows(), c.cols());
    if m * n > 16 {
        return Err(Error::InvalidArgument("enumeration limited to 16 cells".into()));
    }
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (m * n)) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let cells: Vec<usize> = (0..m * n).filter(|b| mask & (1 << b) != 0).collect();
        let Some(flow) = tree_flows(&cells, m, n, p, q) else { continue };
        if flow.iter().any(|&(_, x)| x < -1e-12) {
            continue;
        }
        let cost: f64 = flow.iter().map(|&(cell, x)| x * c.data()[cell]).sum();
        best = best.min(cost);
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::InvalidArgument("no feasible basis".into()))
    }
}

/// Flows on a spanning-tree basis by repeatedly peeling leaves; `None` if the
/// cells do not form a spanning tree.
fn tree_flows(cells: &[usize], m: usize, n: usize, p: &[f64], q: &[f64]) -> Option<Vec<(usize, f64)>> {
    let mut supply = p.to_vec();
    let mut demand = q.to_vec();
    let mut live: Vec<usize> = cells.to_vec();
    let mut out = Vec::new();
    while !live.is_empty() {
        let degree = |node: usize, live: &[usize]| {
            live.iter()
                .filter(|&&cell| if node < m { cell / n == node } else { cell % n == node - m })
                .count()
        };
        let leaf = (0..m + n).find(|&node| degree(node, &live) == 1)?;
        let pos = live
            .iter()
            .position(|&cell| if leaf < m { cell / n == leaf } else { cell % n == leaf - m })?;
        let cell = live.remove(pos);
        let (i, j) = (cell / n, cell % n);
        let x = if leaf < m { supply[i] } else { demand[j] };
        supply[i] -= x;
        demand[j] -= x;
        out.push((cell, x));
    }
    let balanced = supply.iter().chain(&demand).all(|r| r.abs() < 1e-12);
    balanced.then_some(out)
}

/// Central finite difference of the exact ground cost.
pub fn fd_cost_grad(
    psi: &Statevector,
    spec: &CircuitSpec,
    z: &LatentVector,
    wrt: &WithRespectTo,
    metric: CostMetric,
    h: f64,
) -> Result<Vec<f64>> {
    let cost = |s: &CircuitSpec, zv: &LatentVector| -> Result<f64> {
        let mut chi = psi.clone();
        for g in s.gates(zv)?.iter().rev() {
            chi.apply_mut(&g.inverse())?;
        }
        Ok(metric.exact_cost(&chi))
    };
    match wrt {
        WithRespectTo::Theta | WithRespectTo::ThetaSlots(_) => {
            let slots: Vec<usize> = match wrt {
                WithRespectTo::ThetaSlots(s) => s.clone(),
                _ => (0..spec.n_params()).collect(),
            };
            slots
                .iter()
                .map(|&s| {
                    let mut t = spec.theta().to_vec();
                    t[s] += h;
                    let up = cost(&spec.with_theta(t.clone())?, z)?;
                    t[s] -= 2.0 * h;
                    let down = cost(&spec.with_theta(t)?, z)?;
                    Ok((up - down) / (2.0 * h))
                })
                .collect()
        }
        WithRespectTo::Latent => (0..z.len())
            .map(|k| {
                // unclamped: the stencil may leave [0, 1]
                let mut v = z.values().to_vec();
                v[k] += h;
                let up = cost(spec, &LatentVector::unchecked(v.clone()))?;
                v[k] -= 2.0 * h;
                let down = cost(spec, &LatentVector::unchecked(v))?;
                Ok((up - down) / (2.0 * h))
            })
            .collect(),
    }
}
