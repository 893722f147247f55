//! Exact discrete optimal transport.
//!
//! General marginals go through a transportation simplex (MODI potentials,
//! northwest-corner start, Bland's smallest-index rule for both entering and
//! leaving cells). Uniform square problems have a permutation among their
//! optima, so they are solved as an assignment problem with a shortest
//! augmenting path Hungarian method, which stays fast at `M = 1024`.

use std::collections::VecDeque;
use std::io::Write;

use crate::ansatz::{CircuitSpec, Ensemble, LatentVector};
use crate::cost::{cost_matrix, GroundCostKind};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Reduced costs above `-REDUCED_COST_TOL` count as non-improving.
pub const REDUCED_COST_TOL: f64 = 1e-12;
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidCost("matrix must have at least one row and column".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidCost(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::InvalidCost(format!("entry {bad} is negative or not finite")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidCost("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[cfg(test)]
    pub(crate) fn single(value: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Top-left `rows x cols` block.
    pub fn submatrix(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows > self.rows || cols > self.cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} block of a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        let data = (0..rows)
            .flat_map(|i| self.data[i * self.cols..i * self.cols + cols].iter().copied())
            .collect();
        Self::new(rows, cols, data)
    }

    /// CSV triplets `row,col,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "col", "value"])?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                w.write_record([i.to_string(), j.to_string(), self.get(i, j).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Sparse coupling; entries sorted by `(row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if entries.iter().any(|&(i, j, w)| i >= rows || j >= cols || !(w >= 0.0)) {
            return Err(Error::InvalidArgument("plan entry out of range".into()));
        }
        entries.retain(|e| e.2 > 0.0);
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Ok(Self { rows, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for &(i, _, w) in &self.entries {
            s[i] += w;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for &(_, j, w) in &self.entries {
            s[j] += w;
        }
        s
    }

    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.entries.iter().map(|&(i, j, w)| w * c.get(i, j)).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "col", "weight"])?;
        for &(i, j, v) in &self.entries {
            w.write_record([i.to_string(), j.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OtSolution {
    pub loss: f64,
    pub plan: TransportPlan,
    /// Dual potentials `(u, v)` with `u_i + v_j <= c_ij` at optimality.
    pub row_potentials: Vec<f64>,
    pub col_potentials: Vec<f64>,
}

impl OtSolution {
    pub fn dual_objective(&self, p: &[f64], q: &[f64]) -> f64 {
        let a: f64 = self.row_potentials.iter().zip(p).map(|(u, w)| u * w).sum();
        let b: f64 = self.col_potentials.iter().zip(q).map(|(v, w)| v * w).sum();
        a + b
    }
}

fn uniform(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Empirical OT with uniform marginals `1/M` on rows and `1/M_g` on columns.
pub fn solve_ot_uniform(c: &CostMatrix) -> Result<OtSolution> {
    if c.rows == c.cols {
        solve_assignment(c)
    } else {
        transport_simplex(c, &uniform(c.rows), &uniform(c.cols))
    }
}

/// OT between arbitrary probability vectors `p` (rows) and `q` (columns).
pub fn solve_ot_weighted(c: &CostMatrix, p: &[f64], q: &[f64]) -> Result<OtSolution> {
    check_weights(p, c.rows)?;
    check_weights(q, c.cols)?;
    transport_simplex(c, p, q)
}

fn check_weights(w: &[f64], len: usize) -> Result<()> {
    if w.len() != len {
        return Err(Error::Dimension(format!("{} weights for {len} points", w.len())));
    }
    if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::WeightSum(total));
    }
    Ok(())
}

/// Transportation simplex. Deterministic: ties in the entering and leaving
/// choices go to the lexicographically smallest `(i, j)`.
pub fn transport_simplex(c: &CostMatrix, p: &[f64], q: &[f64]) -> Result<OtSolution> {
    let (m, n) = (c.rows, c.cols);
    check_weights(p, m)?;
    check_weights(q, n)?;

    let mut flow = vec![0.0; m * n];
    let mut basic = vec![false; m * n];
    // northwest corner; exhausting a row and a column together leaves a zero basic cell
    {
        let mut supply = p.to_vec();
        let mut demand = q.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]);
            flow[i * n + j] = x;
            basic[i * n + j] = true;
            supply[i] -= x;
            demand[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || supply[i] <= demand[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let max_iter = 50 * (m * n + m + n) + 1000;
    for _ in 0..max_iter {
        compute_potentials(c, &basic, m, n, &mut u, &mut v);
        let entering = (0..m * n).find(|&k| {
            !basic[k] && c.data[k] - u[k / n] - v[k % n] < -REDUCED_COST_TOL
        });
        let Some(enter) = entering else {
            let entries = (0..m * n)
                .filter(|&k| basic[k] && flow[k] > 0.0)
                .map(|k| (k / n, k % n, flow[k]))
                .collect();
            let plan = TransportPlan::new(m, n, entries)?;
            let loss = plan.cost(c);
            return Ok(OtSolution { loss, plan, row_potentials: u, col_potentials: v });
        };
        let cycle = tree_path(&basic, m, n, enter / n, enter % n);
        // cycle[0], cycle[2], ... lose flow; cycle[1], cycle[3], ... gain
        let leave = cycle
            .iter()
            .step_by(2)
            .copied()
            .min_by(|&a, &b| flow[a].total_cmp(&flow[b]).then(a.cmp(&b)))
            .expect("cycle has at least one donor cell");
        let theta = flow[leave];
        for (pos, &k) in cycle.iter().enumerate() {
            if pos % 2 == 0 {
                flow[k] -= theta;
            } else {
                flow[k] += theta;
            }
        }
        flow[enter] = theta;
        flow[leave] = 0.0;
        basic[leave] = false;
        basic[enter] = true;
    }
    Err(Error::InvalidCost("transportation simplex did not terminate".into()))
}

/// Potentials with `u_0 = 0` and `u_i + v_j = c_ij` on every basic cell.
fn compute_potentials(c: &CostMatrix, basic: &[bool], m: usize, n: usize, u: &mut [f64], v: &mut [f64]) {
    let mut row_done = vec![false; m];
    let mut col_done = vec![false; n];
    let mut queue = VecDeque::new();
    u[0] = 0.0;
    row_done[0] = true;
    queue.push_back((true, 0usize));
    while let Some((is_row, idx)) = queue.pop_front() {
        if is_row {
            for j in 0..n {
                if basic[idx * n + j] && !col_done[j] {
                    v[j] = c.data[idx * n + j] - u[idx];
                    col_done[j] = true;
                    queue.push_back((false, j));
                }
            }
        } else {
            for i in 0..m {
                if basic[i * n + idx] && !row_done[i] {
                    u[i] = c.data[i * n + idx] - v[idx];
                    row_done[i] = true;
                    queue.push_back((true, i));
                }
            }
        }
    }
}

/// Basic cells on the tree path from row `r` to column `col`, starting with the
/// cell in row `r`.
fn tree_path(basic: &[bool], m: usize, n: usize, r: usize, col: usize) -> Vec<usize> {
    // nodes: rows 0..m, columns m..m+n
    let mut parent: Vec<Option<usize>> = vec![None; m + n];
    let mut seen = vec![false; m + n];
    let mut queue = VecDeque::new();
    seen[r] = true;
    queue.push_back(r);
    while let Some(node) = queue.pop_front() {
        if node == m + col {
            break;
        }
        if node < m {
            for j in 0..n {
                if basic[node * n + j] && !seen[m + j] {
                    seen[m + j] = true;
                    parent[m + j] = Some(node);
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if basic[i * n + j] && !seen[i] {
                    seen[i] = true;
                    parent[i] = Some(node);
                    queue.push_back(i);
                }
            }
        }
    }
    let mut cells = Vec::new();
    let mut node = m + col;
    while let Some(prev) = parent[node] {
        let cell = if node >= m { prev * n + (node - m) } else { node * n + (prev - m) };
        cells.push(cell);
        node = prev;
    }
    cells.reverse();
    cells
}

/// Square uniform OT as a min-cost perfect matching.
fn solve_assignment(c: &CostMatrix) -> Result<OtSolution> {
    let n = c.rows;
    // 1-based shortest augmenting path with potentials
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &c.data[(i0 - 1) * n..i0 * n];
            let ui0 = u[i0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - ui0 - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let w = 1.0 / n as f64;
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum();
    let entries = assignment.iter().enumerate().map(|(i, &j)| (i, j, w)).collect();
    Ok(OtSolution {
        loss: total * w,
        plan: TransportPlan::new(n, n, entries)?,
        row_potentials: u[1..].to_vec(),
        col_potentials: v[1..].to_vec(),
    })
}

/// Loss, plan and cost matrix between a target ensemble and model outputs for `zs`.
pub fn otl_between_ensembles(
    targets: &Ensemble,
    spec: &CircuitSpec,
    zs: &[LatentVector],
    kind: GroundCostKind,
    rng: &mut Rng,
) -> Result<(OtSolution, CostMatrix)> {
    let c = cost_matrix(targets, spec, zs, kind, rng)?;
    let solution = solve_for_ensemble(&c, targets)?;
    Ok((solution, c))
}

/// OT with the ensemble's own weights on rows and uniform weights on columns.
pub(crate) fn solve_for_ensemble(c: &CostMatrix, targets: &Ensemble) -> Result<OtSolution> {
    let m = targets.len();
    let uniform_rows = targets.weights().iter().all(|w| (w - 1.0 / m as f64).abs() < 1e-15);
    if uniform_rows {
        solve_ot_uniform(c)
    } else {
        solve_ot_weighted(c, targets.weights(), &uniform(c.cols))
    }
}
