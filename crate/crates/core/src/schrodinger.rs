//! Static Schrödinger problems: entropy minimisation against a reference
//! endpoint table under marginal constraints, solved by log-domain Sinkhorn.

use ndarray::Array2;

use crate::ctmc::{bridge_marginal_from, transition_matrix, Generator};
use crate::error::{Error, Result};
use crate::graph::MetricClosure;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Iterations over which a masked solve must shrink its gap by at least
/// `STALL_RATIO` before being declared infeasible.
const STALL_WINDOW: usize = 1_000;
const STALL_RATIO: f64 = 0.999;

/// Sinkhorn slows to a crawl when the feasible set is thin; after this many
/// sweeps (and every `NEWTON_EVERY` after that) a Newton polish on the dual
/// is attempted.
const NEWTON_START: usize = 500;
const NEWTON_EVERY: usize = 5_000;
const NEWTON_STEPS: usize = 60;

/// Probability table over vertex pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTable {
    pub pi: Array2<f64>,
}

impl CouplingTable {
    pub fn delta(n: usize, x: usize, y: usize) -> Self {
        let mut pi = Array2::zeros((n, n));
        pi[[x, y]] = 1.0;
        CouplingTable { pi }
    }

    pub fn diagonal(mu: &[f64]) -> Self {
        let n = mu.len();
        let mut pi = Array2::zeros((n, n));
        for (x, &m) in mu.iter().enumerate() {
            pi[[x, x]] = m;
        }
        CouplingTable { pi }
    }

    pub fn len(&self) -> usize {
        self.pi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.nrows() == 0
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pi[[x, y]]
    }

    pub fn first_marginal(&self) -> Vec<f64> {
        self.pi.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn second_marginal(&self) -> Vec<f64> {
        self.pi.columns().into_iter().map(|c| c.sum()).collect()
    }

    pub fn cost(&self, metric: &MetricClosure) -> f64 {
        self.pi.indexed_iter().map(|((x, y), &p)| p * metric.get(x, y)).sum()
    }

    /// Pairs carrying positive mass.
    pub fn support(&self) -> Vec<(usize, usize, f64)> {
        self.pi.indexed_iter().filter(|(_, &p)| p > 0.0).map(|((x, y), &p)| (x, y, p)).collect()
    }

    pub fn total_variation(&self, other: &CouplingTable) -> f64 {
        0.5 * self.pi.iter().zip(other.pi.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Log-domain dual scalings; `-inf` on vertices without marginal mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPair {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOutcome {
    pub coupling: CouplingTable,
    pub scaling: ScalingPair,
    pub iterations: usize,
    pub gap: f64,
    /// Marginal gap after every iteration.
    pub gap_history: Vec<f64>,
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn check_marginal(name: &str, mu: &[f64], n: usize) -> Result<()> {
    if mu.len() != n {
        return Err(Error::Validation(format!("{name} has {} entries, expected {n}", mu.len())));
    }
    if mu.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Validation(format!("{name} has a negative or non-finite entry")));
    }
    let sum: f64 = mu.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Normalization { name: name.to_string(), sum });
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for v in values {
        if v == f64::NEG_INFINITY {
            continue;
        }
        if v <= max {
            sum += (v - max).exp();
        } else {
            sum = sum * (max - v).exp() + 1.0;
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        max
    } else {
        max + sum.ln()
    }
}

fn solve_log_domain(
    log_ref: &Array2<f64>,
    mu0: &[f64],
    mu1: &[f64],
    tol: f64,
    max_iter: usize,
    masked: bool,
) -> Result<SinkhornOutcome> {
    let n = log_ref.nrows();
    check_marginal("mu0", mu0, n)?;
    check_marginal("mu1", mu1, n)?;

    let rows: Vec<usize> = (0..n).filter(|&x| mu0[x] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&y| mu1[y] > 0.0).collect();
    for &x in &rows {
        if cols.iter().all(|&y| log_ref[[x, y]] == f64::NEG_INFINITY) {
            return Err(Error::Infeasible { gap: mu0[x] });
        }
    }
    for &y in &cols {
        if rows.iter().all(|&x| log_ref[[x, y]] == f64::NEG_INFINITY) {
            return Err(Error::Infeasible { gap: mu1[y] });
        }
    }

    let mut a = vec![f64::NEG_INFINITY; n];
    let mut b = vec![f64::NEG_INFINITY; n];
    for &x in &rows {
        a[x] = 0.0;
    }
    let ln0: Vec<f64> = mu0.iter().map(|v| v.ln()).collect();
    let ln1: Vec<f64> = mu1.iter().map(|v| v.ln()).collect();

    let mut history = Vec::new();
    let mut gap = f64::INFINITY;
    for iter in 1..=max_iter {
        for &y in &cols {
            b[y] = ln1[y] - log_sum_exp(rows.iter().map(|&x| a[x] + log_ref[[x, y]]));
        }
        for &x in &rows {
            a[x] = ln0[x] - log_sum_exp(cols.iter().map(|&y| b[y] + log_ref[[x, y]]));
        }
        let mut row_gap = 0.0;
        let mut col_mass = vec![0.0; n];
        for &x in &rows {
            let mut row_mass = 0.0;
            for &y in &cols {
                let p = (a[x] + b[y] + log_ref[[x, y]]).exp();
                row_mass += p;
                col_mass[y] += p;
            }
            row_gap += (row_mass - mu0[x]).abs();
        }
        let col_gap: f64 = (0..n).map(|y| (col_mass[y] - mu1[y]).abs()).sum();
        gap = 0.5 * row_gap.max(col_gap);
        history.push(gap);

        let mut done = gap <= tol;
        let mut iterations = iter;
        if !done && iter >= NEWTON_START && (iter - NEWTON_START) % NEWTON_EVERY == 0 {
            if let Some((na, nb, steps)) = newton_polish(log_ref, mu0, mu1, &rows, &cols, &a, &b, tol, &mut history) {
                a = na;
                b = nb;
                gap = *history.last().expect("polish records its gaps");
                iterations += steps;
                done = true;
            }
        }
        if done {
            let mut pi = Array2::zeros((n, n));
            for &x in &rows {
                for &y in &cols {
                    pi[[x, y]] = (a[x] + b[y] + log_ref[[x, y]]).exp();
                }
            }
            return Ok(SinkhornOutcome {
                coupling: CouplingTable { pi },
                scaling: ScalingPair { a, b },
                iterations,
                gap,
                gap_history: history,
            });
        }
        if masked && iter > STALL_WINDOW && gap > STALL_RATIO * history[iter - 1 - STALL_WINDOW] {
            return Err(Error::Infeasible { gap });
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, gap })
}

fn marginal_gap(log_ref: &Array2<f64>, mu0: &[f64], mu1: &[f64], rows: &[usize], cols: &[usize], a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = mu0.len();
    let (mut row_mass, mut col_mass) = (vec![0.0; n], vec![0.0; n]);
    for &x in rows {
        for &y in cols {
            let p = (a[x] + b[y] + log_ref[[x, y]]).exp();
            row_mass[x] += p;
            col_mass[y] += p;
        }
    }
    let row_gap: f64 = rows.iter().map(|&x| (row_mass[x] - mu0[x]).abs()).sum();
    let col_gap: f64 = cols.iter().map(|&y| (col_mass[y] - mu1[y]).abs()).sum();
    (0.5 * row_gap.max(col_gap), row_mass, col_mass)
}

/// Damped Newton on the dual `sum pi - <mu0, a> - <mu1, b>`. Returns the
/// polished scalings if the marginal gap reaches `tol`.
#[allow(clippy::too_many_arguments)]
fn newton_polish(
    log_ref: &Array2<f64>,
    mu0: &[f64],
    mu1: &[f64],
    rows: &[usize],
    cols: &[usize],
    a: &[f64],
    b: &[f64],
    tol: f64,
    history: &mut Vec<f64>,
) -> Option<(Vec<f64>, Vec<f64>, usize)> {
    let (nr, nc) = (rows.len(), cols.len());
    let dim = nr + nc;
    let dual = |a: &[f64], b: &[f64]| {
        let mut f = 0.0;
        for &x in rows {
            for &y in cols {
                f += (a[x] + b[y] + log_ref[[x, y]]).exp();
            }
            f -= mu0[x] * a[x];
        }
        f - cols.iter().map(|&y| mu1[y] * b[y]).sum::<f64>()
    };
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    let mut value = dual(&a, &b);
    let mut trail = Vec::new();
    for step in 1..=NEWTON_STEPS {
        let (_, row_mass, col_mass) = marginal_gap(log_ref, mu0, mu1, rows, cols, &a, &b);
        let mut grad = Vec::with_capacity(dim);
        grad.extend(rows.iter().map(|&x| row_mass[x] - mu0[x]));
        grad.extend(cols.iter().map(|&y| col_mass[y] - mu1[y]));
        let mut hess = Array2::zeros((dim, dim));
        for (i, &x) in rows.iter().enumerate() {
            hess[[i, i]] = row_mass[x];
            for (j, &y) in cols.iter().enumerate() {
                let p = (a[x] + b[y] + log_ref[[x, y]]).exp();
                hess[[i, nr + j]] = p;
                hess[[nr + j, i]] = p;
            }
        }
        for (j, &y) in cols.iter().enumerate() {
            hess[[nr + j, nr + j]] = col_mass[y];
        }
        // One gauge direction per connected block; the gradient is orthogonal
        // to all of them, so a tiny shift keeps the system solvable without
        // bending the step.
        for i in 0..dim {
            hess[[i, i]] += 1e-13 * hess[[i, i]].max(1e-300);
        }
        let dir = solve_dense(hess, grad.iter().map(|g| -g).collect())?;
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !(slope < 0.0) {
            break;
        }
        let mut t = 1.0;
        let (next_a, next_b, next_value) = loop {
            let (mut na, mut nb) = (a.clone(), b.clone());
            for (i, &x) in rows.iter().enumerate() {
                na[x] += t * dir[i];
            }
            for (j, &y) in cols.iter().enumerate() {
                nb[y] += t * dir[nr + j];
            }
            let v = dual(&na, &nb);
            if v <= value + 1e-4 * t * slope || t < 1e-10 {
                break (na, nb, v);
            }
            t *= 0.5;
        };
        a = next_a;
        b = next_b;
        value = next_value;
        let (gap, _, _) = marginal_gap(log_ref, mu0, mu1, rows, cols, &a, &b);
        if !gap.is_finite() {
            return None;
        }
        trail.push(gap);
        if gap <= tol {
            history.extend(trail);
            return Some((a, b, step));
        }
    }
    None
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(mut m: Array2<f64>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))?;
        if m[[pivot, col]] == 0.0 || !m[[pivot, col]].is_finite() {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                m.swap([pivot, k], [col, k]);
            }
            rhs.swap(pivot, col);
        }
        for r in col + 1..n {
            let f = m[[r, col]] / m[[col, col]];
            if f != 0.0 {
                for k in col..n {
                    m[[r, k]] -= f * m[[col, k]];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut out = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|k| m[[r, k]] * out[k]).sum();
        out[r] = (rhs[r] - tail) / m[[r, r]];
    }
    Some(out)
}

/// Minimiser of `H(pi | reference)` with marginals `mu0`, `mu1`.
pub fn sinkhorn(reference: &Array2<f64>, mu0: &[f64], mu1: &[f64], tol: f64, max_iter: usize) -> Result<SinkhornOutcome> {
    if reference.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::Validation("reference table has a negative entry".into()));
    }
    let log_ref = reference.mapv(f64::ln);
    solve_log_domain(&log_ref, mu0, mu1, tol, max_iter, false)
}

/// As [`sinkhorn`], with reference entries outside `mask` treated as zero.
pub fn masked_sinkhorn(
    reference: &Array2<f64>,
    mask: &Array2<bool>,
    mu0: &[f64],
    mu1: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornOutcome> {
    if reference.dim() != mask.dim() {
        return Err(Error::Validation("mask and reference have different shapes".into()));
    }
    let mut log_ref = reference.mapv(f64::ln);
    log_ref.zip_mut_with(mask, |l, &keep| {
        if !keep {
            *l = f64::NEG_INFINITY;
        }
    });
    solve_log_domain(&log_ref, mu0, mu1, tol, max_iter, true)
}

/// `sum p log(p/r)` with `0 log 0 = 0`; `+inf` when `p` charges a zero of `r`.
/// `r` may be any finite positive measure.
pub fn relative_entropy<'a>(p: impl IntoIterator<Item = &'a f64>, r: impl IntoIterator<Item = &'a f64>) -> f64 {
    let mut h = 0.0;
    for (&pi, &ri) in p.into_iter().zip(r) {
        if pi <= 0.0 {
            continue;
        }
        if ri <= 0.0 {
            return f64::INFINITY;
        }
        h += pi * (pi / ri).ln();
    }
    h
}

/// `H(pi | reference) / log k`.
pub fn entropic_value(pi: &CouplingTable, reference: &Array2<f64>, k: f64) -> Result<f64> {
    if !(k >= 2.0) {
        return Err(Error::Parameter(format!("entropic value needs k >= 2, got {k}")));
    }
    Ok(relative_entropy(pi.pi.iter(), reference.iter()) / k.ln())
}

/// Time marginal of the mixture of reference bridges with endpoint law `pi`.
pub fn schrodinger_flow(pi: &CouplingTable, gen: &Generator, t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(t));
    }
    let p_t = transition_matrix(gen, t);
    let p_rest = transition_matrix(gen, 1.0 - t);
    let p_one = transition_matrix(gen, 1.0);
    let mut mu = vec![0.0; pi.len()];
    for (x, y, w) in pi.support() {
        let bridge = bridge_marginal_from(&p_t, &p_rest, &p_one, x, y)?;
        for (m, b) in mu.iter_mut().zip(bridge) {
            *m += w * b;
        }
    }
    Ok(mu)
}
