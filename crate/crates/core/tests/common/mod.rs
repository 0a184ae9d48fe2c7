//! Oracles and random instances shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use lazywalk::graph::{build_reversible_walk, intrinsic_distance, BaseMeasure, Graph, MetricClosure, RateKernel};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

/// Connected graph on `n` vertices: a random spanning tree plus `extra` edges.
/// Lengths are 1 when `weighted` is false, otherwise integers in `1..=3`.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, extra: usize, weighted: bool) -> Graph {
    let mut g = Graph::with_vertices(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let len = |rng: &mut R| if weighted { rng.gen_range(1..=3) as f64 } else { 1.0 };
    for i in 1..n {
        let parent = order[rng.gen_range(0..i)];
        let l = len(rng);
        g.add_edge(order[i], parent, l).unwrap();
    }
    let mut tries = 0;
    let mut added = 0;
    while added < extra && tries < 50 * (extra + 1) {
        tries += 1;
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v && !g.adjacent(u, v) {
            let l = len(rng);
            g.add_edge(u, v, l).unwrap();
            added += 1;
        }
    }
    g
}

/// Random probability vector supported on a random nonempty subset.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize, support: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut mu = vec![0.0; n];
    for &i in idx.iter().take(support.clamp(1, n)) {
        mu[i] = rng.gen_range(0.1..1.0);
    }
    let s: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|v| *v /= s);
    mu
}

pub struct RandomInstance {
    pub graph: Graph,
    pub metric: MetricClosure,
    pub kernel: RateKernel,
    pub measure: BaseMeasure,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub unit: bool,
}

/// Reversible walk with random positive `m` and symmetric `s`, random marginals
/// with `mu0 != mu1`. Lengths of tightened edges are fixed up before use.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, weighted: bool) -> RandomInstance {
    let extra = rng.gen_range(0..=n);
    let raw = random_graph(rng, n, extra, weighted);
    let (graph, _) = lazywalk::graph::tighten_edge_lengths(&raw).unwrap();
    let metric = intrinsic_distance(&graph).unwrap();
    let measure = BaseMeasure { mass: (0..n).map(|_| rng.gen_range(0.5..2.0)).collect() };
    let mut s = Array2::zeros((n, n));
    for (u, v, _) in graph.edges() {
        let w = rng.gen_range(0.5..2.0);
        s[[u, v]] = w;
        s[[v, u]] = w;
    }
    let kernel = build_reversible_walk(&graph, &measure, |x, y| s[[x, y]]).unwrap();
    let draw = |rng: &mut R| {
        let support = rng.gen_range(1..=n.min(4));
        random_distribution(rng, n, support)
    };
    let mu0 = draw(rng);
    let mut mu1 = draw(rng);
    while mu1 == mu0 {
        mu1 = draw(rng);
    }
    let unit = metric.is_graph_distance(&graph);
    RandomInstance { graph, metric, kernel, measure, mu0, mu1, unit }
}

/// Every simple path from `x` to `y` with its length.
pub fn simple_paths(graph: &Graph, x: usize, y: usize) -> Vec<(Vec<usize>, f64)> {
    fn walk(graph: &Graph, y: usize, path: &mut Vec<usize>, len: f64, out: &mut Vec<(Vec<usize>, f64)>) {
        let z = *path.last().unwrap();
        if z == y {
            out.push((path.clone(), len));
            return;
        }
        for &(w, l) in graph.edges_from(z) {
            if !path.contains(&w) {
                path.push(w);
                walk(graph, y, path, len + l, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(graph, y, &mut vec![x], 0.0, &mut out);
    out
}

pub fn brute_distance(graph: &Graph, x: usize, y: usize) -> f64 {
    simple_paths(graph, x, y).into_iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
}

/// Geodesics from `x` to `y` by exhaustive enumeration.
pub fn brute_geodesics(graph: &Graph, x: usize, y: usize) -> Vec<Vec<usize>> {
    let d = brute_distance(graph, x, y);
    simple_paths(graph, x, y).into_iter().filter(|p| p.1 == d).map(|p| p.0).collect()
}

/// Vertices and transitions used by some geodesic.
pub fn brute_dag(graph: &Graph, x: usize, y: usize) -> (BTreeSet<usize>, BTreeSet<(usize, usize)>) {
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for p in brute_geodesics(graph, x, y) {
        nodes.extend(p.iter().copied());
        edges.extend(p.windows(2).map(|w| (w[0], w[1])));
    }
    (nodes, edges)
}

/// `m_x Σ_{geodesics} Π J / n!` for every pair, by enumeration.
pub fn brute_geodesic_measure(graph: &Graph, kernel: &RateKernel, m: &BaseMeasure) -> Array2<f64> {
    let n = graph.len();
    Array2::from_shape_fn((n, n), |(x, y)| {
        if x == y {
            return m.get(x);
        }
        let w: f64 = brute_geodesics(graph, x, y)
            .iter()
            .map(|p| {
                let rates: f64 = p.windows(2).map(|e| kernel.rate(e[0], e[1])).product();
                let fact: f64 = (1..p.len()).map(|i| i as f64).product();
                rates / fact
            })
            .sum();
        m.get(x) * w
    })
}

/// `argmin H(π | reference)` over couplings of `mu0`, `mu1` supported on
/// `mask`, by damped Newton in the null space of the marginal constraints.
/// Independent of the library's Sinkhorn: the start is found by plain
/// (non-log) proportional fitting of the uniform table on the mask.
pub fn newton_entropic(reference: &Array2<f64>, mask: &Array2<bool>, mu0: &[f64], mu1: &[f64]) -> Array2<f64> {
    let n = mu0.len();
    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|x| (0..n).map(move |y| (x, y)))
        .filter(|&(x, y)| mask[[x, y]] && mu0[x] > 0.0 && mu1[y] > 0.0 && reference[[x, y]] > 0.0)
        .collect();
    let c = cells.len();

    // Interior feasible starting point: plain proportional fitting from the
    // uniform table, run until the marginals hold. Newton below moves only
    // inside the constraint space, so this must be accurate.
    let mut p: Vec<f64> = vec![1.0; c];
    let row_error = |p: &[f64]| {
        let mut row = vec![0.0; n];
        for (k, &(x, _)) in cells.iter().enumerate() {
            row[x] += p[k];
        }
        (0..n).filter(|&x| mu0[x] > 0.0).map(|x| (row[x] - mu0[x]).abs()).sum::<f64>()
    };
    for _ in 0..5_000_000 {
        let mut row = vec![0.0; n];
        for (k, &(x, _)) in cells.iter().enumerate() {
            row[x] += p[k];
        }
        for (k, &(x, _)) in cells.iter().enumerate() {
            p[k] *= mu0[x] / row[x];
        }
        let mut col = vec![0.0; n];
        for (k, &(_, y)) in cells.iter().enumerate() {
            col[y] += p[k];
        }
        for (k, &(_, y)) in cells.iter().enumerate() {
            p[k] *= mu1[y] / col[y];
        }
        if row_error(&p) < 1e-15 {
            break;
        }
    }
    assert!(row_error(&p) < 1e-14, "oracle start is infeasible: {:e}", row_error(&p));

    // Null space of the constraint matrix (rows: row sums then column sums).
    let mut a = vec![vec![0.0; c]; 2 * n];
    for (k, &(x, y)) in cells.iter().enumerate() {
        a[x][k] = 1.0;
        a[n + y][k] = 1.0;
    }
    let basis = null_space(a, c);

    let f = |p: &[f64]| -> f64 {
        p.iter().zip(&cells).map(|(&v, &(x, y))| if v > 0.0 { v * (v / reference[[x, y]]).ln() } else { 0.0 }).sum()
    };
    for _ in 0..200 {
        let grad: Vec<f64> = basis
            .iter()
            .map(|b| b.iter().zip(&p).zip(&cells).map(|((bk, v), &(x, y))| bk * ((v / reference[[x, y]]).ln() + 1.0)).sum())
            .collect();
        let dim = basis.len();
        if dim == 0 {
            break;
        }
        let mut h = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            for j in 0..dim {
                h[i][j] = (0..c).map(|k| basis[i][k] * basis[j][k] / p[k]).sum();
            }
        }
        let step = solve(h, grad.iter().map(|g| -g).collect());
        let dir: Vec<f64> = (0..c).map(|k| (0..dim).map(|i| step[i] * basis[i][k]).sum()).collect();
        let mut t = 1.0;
        let f0 = f(&p);
        loop {
            let q: Vec<f64> = p.iter().zip(&dir).map(|(v, d)| v + t * d).collect();
            if q.iter().all(|&v| v > 0.0) && f(&q) <= f0 + 1e-15 {
                p = q;
                break;
            }
            t /= 2.0;
            if t < 1e-20 {
                break;
            }
        }
        if grad.iter().map(|g| g.abs()).fold(0.0, f64::max) < 1e-14 {
            break;
        }
    }
    let mut out = Array2::zeros((n, n));
    for (k, &(x, y)) in cells.iter().enumerate() {
        out[[x, y]] = p[k];
    }
    out
}

/// Orthonormal basis of `{v : a v = 0}` by Gram–Schmidt on the reduced row
/// echelon form's free columns.
fn null_space(mut a: Vec<Vec<f64>>, c: usize) -> Vec<Vec<f64>> {
    let rows = a.len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..c {
        let Some(piv) = (r..rows).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())) else { break };
        if a[piv][col].abs() < 1e-12 {
            continue;
        }
        a.swap(r, piv);
        let d = a[r][col];
        a[r].iter_mut().for_each(|v| *v /= d);
        for i in 0..rows {
            if i != r {
                let f = a[i][col];
                if f != 0.0 {
                    for j in 0..c {
                        a[i][j] -= f * a[r][j];
                    }
                }
            }
        }
        pivots.push(col);
        r += 1;
        if r == rows {
            break;
        }
    }
    let free: Vec<usize> = (0..c).filter(|k| !pivots.contains(k)).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for &fcol in &free {
        let mut v = vec![0.0; c];
        v[fcol] = 1.0;
        for (i, &pc) in pivots.iter().enumerate() {
            v[pc] = -a[i][fcol];
        }
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for i in col + 1..n {
            let f = a[i][col] / a[col][col];
            for j in col..n {
                a[i][j] -= f * a[col][j];
            }
            b[i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

pub fn tv_tables(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn binom(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Vertices of the transportation polytope of `(mu0, mu1)` that minimise
/// `Σ cost π`, by enumerating every candidate basis. Only for tiny problems.
pub fn optimal_vertices(cost: &Array2<f64>, mu0: &[f64], mu1: &[f64]) -> Vec<Array2<f64>> {
    let n = mu0.len();
    let rows: Vec<usize> = (0..n).filter(|&x| mu0[x] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&y| mu1[y] > 0.0).collect();
    let cells: Vec<(usize, usize)> = rows.iter().flat_map(|&x| cols.iter().map(move |&y| (x, y))).collect();
    let size = rows.len() + cols.len() - 1;
    let mut vertices: Vec<(f64, Array2<f64>)> = Vec::new();
    let mut subset: Vec<usize> = (0..size.min(cells.len())).collect();
    loop {
        if let Some(p) = basic_solution(&subset, &cells, &rows, &cols, mu0, mu1) {
            let mut plan = Array2::zeros((n, n));
            for (&k, v) in subset.iter().zip(&p) {
                plan[[cells[k].0, cells[k].1]] = v.max(0.0);
            }
            let c: f64 = plan.indexed_iter().map(|((x, y), v)| v * cost[[x, y]]).sum();
            vertices.push((c, plan));
        }
        // Next combination in lexicographic order.
        let m = subset.len();
        let mut i = m;
        while i > 0 && subset[i - 1] == cells.len() - m + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        subset[i - 1] += 1;
        for j in i..m {
            subset[j] = subset[j - 1] + 1;
        }
    }
    let best = vertices.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    vertices.into_iter().filter(|v| v.0 <= best + 1e-12).map(|v| v.1).collect()
}

fn basic_solution(
    subset: &[usize],
    cells: &[(usize, usize)],
    rows: &[usize],
    cols: &[usize],
    mu0: &[f64],
    mu1: &[f64],
) -> Option<Vec<f64>> {
    let m = subset.len();
    let mut a: Vec<Vec<f64>> = Vec::new();
    for &x in rows {
        let mut r: Vec<f64> = subset.iter().map(|&k| if cells[k].0 == x { 1.0 } else { 0.0 }).collect();
        r.push(mu0[x]);
        a.push(r);
    }
    for &y in cols {
        let mut r: Vec<f64> = subset.iter().map(|&k| if cells[k].1 == y { 1.0 } else { 0.0 }).collect();
        r.push(mu1[y]);
        a.push(r);
    }
    // Row reduce the augmented system.
    let mut rank = 0;
    let mut pivot_col = Vec::new();
    for col in 0..m {
        let piv = (rank..a.len()).find(|&i| a[i][col].abs() > 1e-12)?;
        a.swap(rank, piv);
        let d = a[rank][col];
        a[rank].iter_mut().for_each(|v| *v /= d);
        for i in 0..a.len() {
            if i != rank && a[i][col] != 0.0 {
                let f = a[i][col];
                for j in 0..=m {
                    a[i][j] -= f * a[rank][j];
                }
            }
        }
        pivot_col.push(col);
        rank += 1;
    }
    if a[rank..].iter().any(|r| r[m].abs() > 1e-12) {
        return None;
    }
    let sol: Vec<f64> = (0..m).map(|i| a[i][m]).collect();
    sol.iter().all(|&v| v >= -1e-12).then_some(sol)
}
