//! Earth mover's problem on the graph metric: a transportation simplex with
//! Bland's anti-cycling rule, generic over `f64` and exact rationals, plus the
//! optimal-face description derived from its duals.

use std::collections::VecDeque;

use ndarray::Array2;
use num_rational::BigRational;

use crate::error::{Error, Result};
use crate::graph::MetricClosure;
use crate::scalar::Scalar;

/// Optimal value, one optimal plan and a dual-feasible potential pair
/// (`u_x + v_y <= d(x, y)`, tight on the plan support).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution<T = f64> {
    pub value: T,
    pub plan: Array2<T>,
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub pivots: usize,
}

struct Basis<T> {
    cells: Vec<(usize, usize)>,
    flow: Vec<T>,
}

/// Northwest-corner start: `rows + cols - 1` basic cells forming a spanning tree.
fn northwest_corner<T: Scalar>(supply: &[T], demand: &[T]) -> Basis<T> {
    let (n, m) = (supply.len(), demand.len());
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    let mut cells = Vec::with_capacity(n + m - 1);
    let mut flow = Vec::with_capacity(n + m - 1);
    loop {
        let q = if s[i] < d[j] { s[i].clone() } else { d[j].clone() };
        s[i] = s[i].clone() - q.clone();
        d[j] = d[j].clone() - q.clone();
        cells.push((i, j));
        flow.push(q);
        if i == n - 1 && j == m - 1 {
            break;
        }
        if (s[i] == T::zero() && i < n - 1) || j == m - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    Basis { cells, flow }
}

/// Potentials with `u_i + v_j = c_ij` on every basic cell, `u_0 = 0`.
fn potentials<T: Scalar>(cost: &Array2<T>, basis: &Basis<T>) -> (Vec<T>, Vec<T>) {
    let (n, m) = cost.dim();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m];
    for (k, &(i, j)) in basis.cells.iter().enumerate() {
        adj[i].push(k);
        adj[n + j].push(k);
    }
    let mut u: Vec<Option<T>> = vec![None; n];
    let mut v: Vec<Option<T>> = vec![None; m];
    u[0] = Some(T::zero());
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        for &k in &adj[node] {
            let (i, j) = basis.cells[k];
            if node < n {
                if v[j].is_none() {
                    v[j] = Some(cost[[i, j]].clone() - u[i].clone().expect("row potential set"));
                    queue.push_back(n + j);
                }
            } else if u[i].is_none() {
                u[i] = Some(cost[[i, j]].clone() - v[j].clone().expect("column potential set"));
                queue.push_back(i);
            }
        }
    }
    (
        u.into_iter().map(|x| x.expect("basis spans every row")).collect(),
        v.into_iter().map(|x| x.expect("basis spans every column")).collect(),
    )
}

/// Basic cells on the tree path from row `row` to column `col`, in order.
fn tree_path<T>(basis: &Basis<T>, n: usize, m: usize, row: usize, col: usize) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m];
    for (k, &(i, j)) in basis.cells.iter().enumerate() {
        adj[i].push(k);
        adj[n + j].push(k);
    }
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n + m];
    let mut seen = vec![false; n + m];
    seen[row] = true;
    let mut queue = VecDeque::from([row]);
    while let Some(node) = queue.pop_front() {
        if node == n + col {
            break;
        }
        for &k in &adj[node] {
            let (i, j) = basis.cells[k];
            let other = if node < n { n + j } else { i };
            if !seen[other] {
                seen[other] = true;
                parent[other] = Some((node, k));
                queue.push_back(other);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = n + col;
    while node != row {
        let (prev, k) = parent[node].expect("basis is a spanning tree");
        path.push(k);
        node = prev;
    }
    path.reverse();
    path
}

/// Solves `min Σ c_ij x_ij` subject to row sums `supply` and column sums `demand`.
/// Totals must agree (exactly for rationals, within `1e-9` for floats).
pub fn solve_transport<T: Scalar>(cost: &Array2<T>, supply: &[T], demand: &[T]) -> Result<TransportSolution<T>> {
    let (n, m) = cost.dim();
    if supply.len() != n || demand.len() != m || n == 0 || m == 0 {
        return Err(Error::Validation("transport dimensions do not match the cost table".into()));
    }
    if supply.iter().chain(demand).any(|v| *v < T::zero()) {
        return Err(Error::Validation("negative supply or demand".into()));
    }
    let total_s = supply.iter().fold(T::zero(), |a, b| a + b.clone());
    let total_d = demand.iter().fold(T::zero(), |a, b| a + b.clone());
    let imbalance = total_s.clone() - total_d;
    if imbalance.abs_val().to_f64() > 1e-9 * total_s.to_f64().max(1.0) {
        return Err(Error::Validation("supply and demand totals differ".into()));
    }
    // Fold float round-off into the largest demand entry so the problem is balanced.
    let mut demand = demand.to_vec();
    if imbalance != T::zero() {
        let jmax = (0..m).fold(0, |best, j| if demand[j] > demand[best] { j } else { best });
        demand[jmax] = demand[jmax].clone() + imbalance;
    }

    let scale = cost.iter().fold(T::one(), |a, c| if c.abs_val() > a { c.abs_val() } else { a });
    let threshold = -(T::epsilon() * scale);
    let mut basis = northwest_corner(supply, &demand);
    let mut in_basis = Array2::from_elem((n, m), false);
    for &(i, j) in &basis.cells {
        in_basis[[i, j]] = true;
    }

    let mut pivots = 0;
    loop {
        let (u, v) = potentials(cost, &basis);
        // Bland: first improving cell in row-major order.
        let mut entering = None;
        'scan: for i in 0..n {
            for j in 0..m {
                if !in_basis[[i, j]] && cost[[i, j]].clone() - u[i].clone() - v[j].clone() < threshold {
                    entering = Some((i, j));
                    break 'scan;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let mut plan = Array2::from_elem((n, m), T::zero());
            for (&(i, j), f) in basis.cells.iter().zip(&basis.flow) {
                plan[[i, j]] = f.clone();
            }
            let value = plan.indexed_iter().fold(T::zero(), |acc, ((i, j), x)| acc + x.clone() * cost[[i, j]].clone());
            return Ok(TransportSolution { value, plan, u, v, pivots });
        };

        // Cycle: entering cell (+), then the tree path from row ei to column ej
        // alternating (-), (+), ...
        let path = tree_path(&basis, n, m, ei, ej);
        let minus: Vec<usize> = path.iter().step_by(2).copied().collect();
        let theta = minus
            .iter()
            .map(|&k| basis.flow[k].clone())
            .fold(None, |acc: Option<T>, f| match acc {
                Some(a) if a <= f => Some(a),
                _ => Some(f),
            })
            .expect("cycle has a decreasing cell");
        let leaving = minus
            .iter()
            .copied()
            .filter(|&k| basis.flow[k] == theta)
            .min_by_key(|&k| basis.cells[k])
            .expect("some cell attains theta");
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis.flow[k] = basis.flow[k].clone() - theta.clone();
            } else {
                basis.flow[k] = basis.flow[k].clone() + theta.clone();
            }
        }
        let (li, lj) = basis.cells[leaving];
        in_basis[[li, lj]] = false;
        in_basis[[ei, ej]] = true;
        basis.cells[leaving] = (ei, ej);
        basis.flow[leaving] = theta;
        pivots += 1;
    }
}

/// Optimal transport between two vertex distributions under the graph metric.
pub fn solve_mk(metric: &MetricClosure, mu0: &[f64], mu1: &[f64]) -> Result<TransportSolution> {
    let mut sol = solve_transport(metric.table(), mu0, mu1)?;
    // Clean round-off from the pivoting.
    sol.plan.mapv_inplace(|p| if p.abs() < 1e-15 { 0.0 } else { p });
    Ok(sol)
}

/// Exact-arithmetic variant; distances are converted exactly from `f64`.
pub fn solve_mk_exact(
    metric: &MetricClosure,
    mu0: &[BigRational],
    mu1: &[BigRational],
) -> Result<TransportSolution<BigRational>> {
    let cost = metric.table().mapv(<BigRational as Scalar>::from_f64);
    solve_transport(&cost, mu0, mu1)
}

/// Pairs on which the dual constraint is tight: `d(x,y) - u_x - v_y <= tol`.
pub fn tight_set<T: Scalar>(solution: &TransportSolution<T>, metric: &MetricClosure, tol: f64) -> Array2<bool> {
    let n = solution.u.len();
    let m = solution.v.len();
    Array2::from_shape_fn((n, m), |(x, y)| {
        let slack = metric.get(x, y) - solution.u[x].to_f64() - solution.v[y].to_f64();
        slack <= tol
    })
}

/// Pairs of the mask that carry mass in some coupling of `mu0`, `mu1`
/// supported on the mask.
///
/// `plan` must be such a coupling. A pair `(x, y)` with no mass in `plan`
/// can receive some iff `x` is reachable from `y` in the residual graph
/// (mask edges row -> column, plan edges column -> row).
pub fn face_support(plan: &Array2<f64>, mask: &Array2<bool>, mu0: &[f64], mu1: &[f64]) -> Array2<bool> {
    let n = mu0.len();
    let carries = |x: usize, y: usize| plan[[x, y]] > 1e-14;
    let mut out = Array2::from_elem((n, n), false);
    for y in 0..n {
        if mu1[y] <= 0.0 {
            continue;
        }
        // Reachable rows from column y.
        let mut row_seen = vec![false; n];
        let mut col_seen = vec![false; n];
        col_seen[y] = true;
        let mut queue = VecDeque::from([(false, y)]);
        while let Some((is_row, v)) = queue.pop_front() {
            if is_row {
                for w in 0..n {
                    if mask[[v, w]] && mu1[w] > 0.0 && !col_seen[w] {
                        col_seen[w] = true;
                        queue.push_back((false, w));
                    }
                }
            } else {
                for x in 0..n {
                    if carries(x, v) && !row_seen[x] {
                        row_seen[x] = true;
                        queue.push_back((true, x));
                    }
                }
            }
        }
        for x in 0..n {
            if mu0[x] > 0.0 && mask[[x, y]] && (carries(x, y) || row_seen[x]) {
                out[[x, y]] = true;
            }
        }
    }
    out
}
