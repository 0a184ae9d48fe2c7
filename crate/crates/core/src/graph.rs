//! Finite weighted graphs, their intrinsic metric, base measures and
//! time-homogeneous jump kernels.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative slack used whenever two path lengths are compared.
pub const LENGTH_EPS: f64 = 1e-9;

pub(crate) fn approx_eq_len(a: f64, b: f64) -> bool {
    (a - b).abs() <= LENGTH_EPS * a.abs().max(b.abs()).max(1.0)
}

/// Undirected graph with positive edge lengths.
///
/// Vertices are dense indices `0..n` in declaration order; `names` keeps the
/// external identifiers. Self-loops are recorded but never enter the
/// adjacency table, so that hypothesis validation can report them.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    names: Vec<String>,
    adjacency: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<usize>,
}

impl Graph {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let n = names.len();
        Graph { names, adjacency: vec![Vec::new(); n], self_loops: Vec::new() }
    }

    /// Anonymous vertices labelled `0..n`.
    pub fn with_vertices(n: usize) -> Self {
        Graph::new((0..n).map(|i| i.to_string()))
    }

    pub fn add_edge(&mut self, u: usize, v: usize, length: f64) -> Result<()> {
        let n = self.len();
        if u >= n || v >= n {
            return Err(Error::Validation(format!("edge ({u}, {v}) references an unknown vertex")));
        }
        if !length.is_finite() || length <= 0.0 {
            return Err(Error::Validation(format!("edge ({u}, {v}) has non-positive length {length}")));
        }
        if u == v {
            if !self.self_loops.contains(&u) {
                self.self_loops.push(u);
            }
            return Ok(());
        }
        if self.adjacent(u, v) {
            return Err(Error::Validation(format!("duplicate edge ({}, {})", self.names[u], self.names[v])));
        }
        for (a, b) in [(u, v), (v, u)] {
            let row = &mut self.adjacency[a];
            let pos = row.partition_point(|&(w, _)| w < b);
            row.insert(pos, (b, length));
        }
        Ok(())
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut g = Graph::with_vertices(n);
        for &(u, v, l) in edges {
            g.add_edge(u, v, l)?;
        }
        Ok(g)
    }

    /// Path graph `0 - 1 - ... - (n-1)` with unit lengths.
    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
        Graph::from_edges(n, &edges).expect("path edges are valid")
    }

    /// Complete graph `K_n` with unit lengths.
    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                edges.push((u, v, 1.0));
            }
        }
        Graph::from_edges(n, &edges).expect("complete graph edges are valid")
    }

    /// Hypercube `{0,1}^dim`; vertex `i` is the bit pattern of `i`.
    pub fn hypercube(dim: usize) -> Self {
        let n = 1usize << dim;
        let names = (0..n).map(|i| {
            (0..dim).rev().map(|b| if i >> b & 1 == 1 { '1' } else { '0' }).collect::<String>()
        });
        let mut g = Graph::new(names);
        for i in 0..n {
            for b in 0..dim {
                let j = i ^ (1 << b);
                if i < j {
                    g.add_edge(i, j, 1.0).expect("hypercube edges are valid");
                }
            }
        }
        g
    }

    /// Star with one centre (vertex 0) and `leaves` leaves.
    pub fn star(leaves: usize) -> Self {
        let edges: Vec<_> = (1..=leaves).map(|i| (0, i, 1.0)).collect();
        Graph::from_edges(leaves + 1, &edges).expect("star edges are valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[v].iter().map(|&(w, _)| w)
    }

    /// Neighbours with edge lengths, sorted by neighbour index.
    pub fn edges_from(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn adjacent(&self, u: usize, v: usize) -> bool {
        self.edge_length(u, v).is_some()
    }

    pub fn edge_length(&self, u: usize, v: usize) -> Option<f64> {
        let row = &self.adjacency[u];
        row.binary_search_by(|&(w, _)| w.cmp(&v)).ok().map(|i| row[i].1)
    }

    pub fn self_loops(&self) -> &[usize] {
        &self.self_loops
    }

    /// Each undirected edge once, with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().filter(move |&&(v, _)| u < v).map(move |&(v, l)| (u, v, l)))
    }

    fn set_length(&mut self, u: usize, v: usize, length: f64) {
        for (a, b) in [(u, v), (v, u)] {
            if let Some(e) = self.adjacency[a].iter_mut().find(|e| e.0 == b) {
                e.1 = length;
            }
        }
    }

    /// Vertices unreachable from vertex 0.
    pub fn unreachable(&self) -> Vec<usize> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut seen = vec![false; self.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for w in self.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        (0..self.len()).filter(|&v| !seen[v]).collect()
    }
}

/// All-pairs intrinsic distance table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricClosure {
    d: Array2<f64>,
}

impl MetricClosure {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.d[[x, y]]
    }

    pub fn len(&self) -> usize {
        self.d.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.d.nrows() == 0
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.d
    }

    pub fn diameter(&self) -> f64 {
        self.d.iter().cloned().fold(0.0, f64::max)
    }

    /// True iff every jump distance on an edge equals one.
    pub fn is_graph_distance(&self, graph: &Graph) -> bool {
        graph.edges().all(|(u, v, _)| self.get(u, v) == 1.0)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

fn dijkstra(graph: &Graph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry(0.0, source));
    while let Some(HeapEntry(du, u)) = heap.pop() {
        if du > dist[u] {
            continue;
        }
        for &(v, l) in graph.edges_from(u) {
            let alt = du + l;
            if alt < dist[v] {
                dist[v] = alt;
                heap.push(HeapEntry(alt, v));
            }
        }
    }
    dist
}

/// Shortest-path metric under the edge lengths.
pub fn intrinsic_distance(graph: &Graph) -> Result<MetricClosure> {
    if let Some(&v) = graph.unreachable().first() {
        return Err(Error::Irreducible(graph.name(v).to_string()));
    }
    let n = graph.len();
    let mut d = Array2::zeros((n, n));
    for x in 0..n {
        for (y, dy) in dijkstra(graph, x).into_iter().enumerate() {
            d[[x, y]] = dy;
        }
    }
    // Symmetrise the floating-point noise of the two Dijkstra runs.
    for x in 0..n {
        for y in x + 1..n {
            let m = d[[x, y]].min(d[[y, x]]);
            d[[x, y]] = m;
            d[[y, x]] = m;
        }
    }
    Ok(MetricClosure { d })
}

/// An edge whose declared length exceeded the distance through the rest of the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightenedEdge {
    pub u: String,
    pub v: String,
    pub declared: f64,
    pub tightened: f64,
}

impl std::fmt::Display for TightenedEdge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "edge {}-{} shortened from {} to {}", self.u, self.v, self.declared, self.tightened)
    }
}

/// Replaces every edge length by the intrinsic distance between its endpoints.
pub fn tighten_edge_lengths(graph: &Graph) -> Result<(Graph, Vec<TightenedEdge>)> {
    let metric = intrinsic_distance(graph)?;
    let mut out = graph.clone();
    let mut warnings = Vec::new();
    for (u, v, l) in graph.edges() {
        let d = metric.get(u, v);
        if d < l && !approx_eq_len(d, l) {
            out.set_length(u, v, d);
            warnings.push(TightenedEdge {
                u: graph.name(u).to_string(),
                v: graph.name(v).to_string(),
                declared: l,
                tightened: d,
            });
        }
    }
    Ok((out, warnings))
}

/// Positive mass on each vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMeasure {
    pub mass: Vec<f64>,
}

impl BaseMeasure {
    pub fn counting(n: usize) -> Self {
        BaseMeasure { mass: vec![1.0; n] }
    }

    /// `m_x = n_x`, the volume measure of the simple walk.
    pub fn volume(graph: &Graph) -> Self {
        BaseMeasure { mass: (0..graph.len()).map(|v| graph.degree(v) as f64).collect() }
    }

    pub fn get(&self, x: usize) -> f64 {
        self.mass[x]
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Time-homogeneous jump rates `J_x(y)`, stored sparsely and sorted by target.
#[derive(Debug, Clone, PartialEq)]
pub struct RateKernel<T = f64> {
    rates: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> RateKernel<T> {
    /// Rows are sorted internally; entries equal to zero are kept so that
    /// validation can flag them.
    pub fn from_rows(mut rates: Vec<Vec<(usize, T)>>) -> Self {
        for row in &mut rates {
            row.sort_by_key(|e| e.0);
        }
        RateKernel { rates }
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn row(&self, x: usize) -> &[(usize, T)] {
        &self.rates[x]
    }

    pub fn rate(&self, x: usize, y: usize) -> T {
        let row = &self.rates[x];
        match row.binary_search_by(|e| e.0.cmp(&y)) {
            Ok(i) => row[i].1.clone(),
            Err(_) => T::zero(),
        }
    }

    /// Total jump intensity `J_x(X)`.
    pub fn total(&self, x: usize) -> T {
        self.rates[x].iter().fold(T::zero(), |acc, (_, r)| acc + r.clone())
    }

    /// `sup_x J_x(X)`.
    pub fn j_bar(&self) -> T {
        (0..self.len()).map(|x| self.total(x)).fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> RateKernel<U> {
        RateKernel {
            rates: self.rates.iter().map(|row| row.iter().map(|(y, r)| (*y, f(r))).collect()).collect(),
        }
    }

    pub fn to_f64(&self) -> RateKernel<f64> {
        self.map(|r| r.to_f64())
    }
}

/// Simple random walk rates `J_x(y) = 1/n_x` in any field.
pub fn simple_walk_rates<T: Scalar>(graph: &Graph) -> RateKernel<T> {
    let rows = (0..graph.len())
        .map(|x| {
            let n = graph.degree(x) as i64;
            graph.neighbors(x).map(|y| (y, T::from_ratio(1, n))).collect()
        })
        .collect();
    RateKernel::from_rows(rows)
}

/// Simple random walk with its reversing volume measure `m_x = n_x`.
pub fn build_simple_walk(graph: &Graph) -> (RateKernel, BaseMeasure) {
    (simple_walk_rates(graph), BaseMeasure::volume(graph))
}

/// Reversible walk `J_x(y) = s(x,y)/sqrt(n_x n_y) * sqrt(m_y/m_x)`.
pub fn build_reversible_walk(
    graph: &Graph,
    m: &BaseMeasure,
    s: impl Fn(usize, usize) -> f64,
) -> Result<RateKernel> {
    if m.mass.len() != graph.len() {
        return Err(Error::Validation("base measure length differs from the vertex count".into()));
    }
    if let Some(x) = m.mass.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Validation(format!("base measure is not positive at {}", graph.name(x))));
    }
    let mut rows = Vec::with_capacity(graph.len());
    for x in 0..graph.len() {
        let mut row = Vec::with_capacity(graph.degree(x));
        for y in graph.neighbors(x) {
            let sxy = s(x, y);
            if !(sxy > 0.0 && sxy.is_finite()) {
                return Err(Error::Validation(format!(
                    "edge weight s({}, {}) = {sxy} is not positive",
                    graph.name(x),
                    graph.name(y)
                )));
            }
            if (sxy - s(y, x)).abs() > 1e-12 * sxy {
                return Err(Error::Validation(format!(
                    "edge weight s is not symmetric on {}-{}",
                    graph.name(x),
                    graph.name(y)
                )));
            }
            let nx = graph.degree(x) as f64;
            let ny = graph.degree(y) as f64;
            row.push((y, sxy / (nx * ny).sqrt() * (m.get(y) / m.get(x)).sqrt()));
        }
        rows.push(row);
    }
    Ok(RateKernel::from_rows(rows))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetailedBalanceReport {
    pub max_residual: f64,
    pub passed: bool,
}

/// Largest violation of `m_x J_x(y) = m_y J_y(x)` over all ordered pairs with a rate.
pub fn check_detailed_balance(kernel: &RateKernel, m: &BaseMeasure, tol: f64) -> DetailedBalanceReport {
    let mut max_residual: f64 = 0.0;
    for x in 0..kernel.len() {
        for &(y, r) in kernel.row(x) {
            let res = (m.get(x) * r - m.get(y) * kernel.rate(y, x)).abs();
            max_residual = max_residual.max(res);
        }
    }
    DetailedBalanceReport { max_residual, passed: max_residual <= tol }
}

/// One flag per standing hypothesis plus the rate bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    /// No self-loops, symmetric, connected.
    pub neighbourhood: bool,
    /// Edge lengths at least one and equal to the intrinsic distance.
    pub distance: bool,
    /// Rates positive exactly on neighbours.
    pub rates: bool,
    /// Base measure positive everywhere.
    pub measure: bool,
    pub j_bar: f64,
    pub failures: Vec<String>,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.neighbourhood && self.distance && self.rates && self.measure
    }
}

pub fn validate_hypotheses(
    graph: &Graph,
    metric: Option<&MetricClosure>,
    kernel: &RateKernel,
    m: &BaseMeasure,
) -> HypothesisReport {
    let mut failures = Vec::new();

    let mut neighbourhood = true;
    if let Some(&v) = graph.self_loops().first() {
        neighbourhood = false;
        failures.push(format!("(~): self-loop at {}", graph.name(v)));
    }
    if let Some(&v) = graph.unreachable().first() {
        neighbourhood = false;
        failures.push(format!("(~): graph is not irreducible, {} is unreachable", graph.name(v)));
    }
    if graph.len() > 1 && (0..graph.len()).any(|v| graph.degree(v) == 0) {
        neighbourhood = false;
    }

    let mut distance = true;
    for (u, v, l) in graph.edges() {
        if l < 1.0 {
            distance = false;
            failures.push(format!("(d): edge {}-{} has length {l} < 1", graph.name(u), graph.name(v)));
        }
        if let Some(metric) = metric {
            if !approx_eq_len(metric.get(u, v), l) {
                distance = false;
                failures.push(format!(
                    "(d): edge {}-{} length {l} is not intrinsic (distance {})",
                    graph.name(u),
                    graph.name(v),
                    metric.get(u, v)
                ));
            }
        }
    }

    let mut rates = kernel.len() == graph.len();
    if !rates {
        failures.push("(R): kernel size differs from vertex count".into());
    } else {
        for x in 0..graph.len() {
            let support: Vec<usize> = kernel.row(x).iter().filter(|e| e.1 > 0.0).map(|e| e.0).collect();
            let neigh: Vec<usize> = graph.neighbors(x).collect();
            let finite = kernel.row(x).iter().all(|e| e.1.is_finite() && e.1 >= 0.0);
            if support != neigh || !finite {
                rates = false;
                failures.push(format!("(R): support of J at {} differs from its neighbours", graph.name(x)));
            }
        }
    }

    let measure = m.mass.len() == graph.len() && m.mass.iter().all(|&v| v > 0.0 && v.is_finite());
    if !measure {
        failures.push("(m): base measure must be positive on every vertex".into());
    }

    HypothesisReport { neighbourhood, distance, rates, measure, j_bar: kernel.j_bar(), failures }
}
