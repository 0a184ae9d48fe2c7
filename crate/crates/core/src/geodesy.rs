//! Discrete path lengths and the directed structure of geodesics between two vertices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{approx_eq_len, Graph, MetricClosure};

/// Piecewise constant path on `[0, 1]` with finitely many jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub start: usize,
    /// `(jump time, new state)`, times strictly increasing in `(0, 1)`.
    pub jumps: Vec<(f64, usize)>,
}

impl DiscretePath {
    pub fn constant(state: usize) -> Self {
        DiscretePath { start: state, jumps: Vec::new() }
    }

    /// Path visiting `states` with jumps evenly spaced in `(0, 1)`.
    pub fn from_states(states: &[usize]) -> Self {
        let n = states.len().saturating_sub(1);
        let jumps = states[1..]
            .iter()
            .enumerate()
            .map(|(i, &s)| ((i + 1) as f64 / (n + 1) as f64, s))
            .collect();
        DiscretePath { start: states[0], jumps }
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    pub fn end(&self) -> usize {
        self.jumps.last().map_or(self.start, |j| j.1)
    }

    /// Visited state sequence, initial state included.
    pub fn states(&self) -> Vec<usize> {
        std::iter::once(self.start).chain(self.jumps.iter().map(|j| j.1)).collect()
    }

    /// Right-continuous position at time `t`.
    pub fn state_at(&self, t: f64) -> usize {
        self.jumps.iter().take_while(|j| j.0 <= t).last().map_or(self.start, |j| j.1)
    }

    /// `(state, holding duration)` over `[0, 1]`.
    pub fn holding_intervals(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(self.jumps.len() + 1);
        let mut state = self.start;
        let mut last = 0.0;
        for &(t, s) in &self.jumps {
            out.push((state, t - last));
            state = s;
            last = t;
        }
        out.push((state, 1.0 - last));
        out
    }

    pub fn validate(&self, graph: &Graph) -> Result<()> {
        if self.start >= graph.len() {
            return Err(Error::InvalidPath(format!("unknown initial state {}", self.start)));
        }
        let mut last_t = 0.0;
        let mut state = self.start;
        for &(t, s) in &self.jumps {
            if !(t > last_t && t < 1.0) {
                return Err(Error::InvalidPath(format!("jump time {t} is not increasing in (0, 1)")));
            }
            if s >= graph.len() || !graph.adjacent(state, s) {
                return Err(Error::InvalidPath(format!("jump {state} -> {s} is not along an edge")));
            }
            last_t = t;
            state = s;
        }
        Ok(())
    }
}

/// Sum of the distances covered by the jumps of `path`.
pub fn path_length(path: &DiscretePath, graph: &Graph, metric: &MetricClosure) -> Result<f64> {
    path.validate(graph)?;
    let states = path.states();
    Ok(states.windows(2).map(|w| metric.get(w[0], w[1])).sum())
}

/// Whether the path length equals the distance between its endpoints.
/// Invalid paths are not geodesics.
pub fn is_geodesic(path: &DiscretePath, graph: &Graph, metric: &MetricClosure) -> bool {
    match path_length(path, graph, metric) {
        Ok(l) => approx_eq_len(l, metric.get(path.start, path.end())),
        Err(_) => false,
    }
}

/// For every vertex `z`, the neighbours `w` lying on some geodesic from `z` to `target`.
pub fn successors_toward(target: usize, graph: &Graph, metric: &MetricClosure) -> Vec<Vec<usize>> {
    (0..graph.len())
        .map(|z| {
            graph
                .neighbors(z)
                .filter(|&w| approx_eq_len(metric.get(z, w) + metric.get(w, target), metric.get(z, target)))
                .collect()
        })
        .collect()
}

/// States visited by geodesics from `source` to `target`, ordered by the
/// distance from `source`, with the directed transitions between them.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicDag {
    pub source: usize,
    pub target: usize,
    /// Vertices in topological order.
    nodes: Vec<usize>,
    /// `layer[i] = d(source, nodes[i])`.
    layer: Vec<f64>,
    index: Vec<Option<usize>>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
}

impl GeodesicDag {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn vertex(&self, node: usize) -> usize {
        self.nodes[node]
    }

    pub fn layer(&self, node: usize) -> f64 {
        self.layer[node]
    }

    pub fn node_of(&self, vertex: usize) -> Option<usize> {
        self.index.get(vertex).copied().flatten()
    }

    pub fn contains(&self, vertex: usize) -> bool {
        self.node_of(vertex).is_some()
    }

    /// Successor node indices of `node`.
    pub fn successors(&self, node: usize) -> &[usize] {
        &self.succ[node]
    }

    pub fn predecessors(&self, node: usize) -> &[usize] {
        &self.pred[node]
    }

    pub fn source_node(&self) -> usize {
        0
    }

    pub fn target_node(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Directed edges as vertex pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, s) in self.succ.iter().enumerate() {
            for &j in s {
                out.push((self.nodes[i], self.nodes[j]));
            }
        }
        out.sort_unstable();
        out
    }

    pub fn edge_count(&self) -> usize {
        self.succ.iter().map(Vec::len).sum()
    }
}

pub fn geodesic_dag(source: usize, target: usize, graph: &Graph, metric: &MetricClosure) -> GeodesicDag {
    let n = graph.len();
    let dxy = metric.get(source, target);
    let on_geodesic = |z: usize| approx_eq_len(metric.get(source, z) + metric.get(z, target), dxy);

    // Topological order: by distance from the source, ties by vertex index.
    let mut candidates: Vec<usize> = (0..n).filter(|&z| on_geodesic(z)).collect();
    candidates.sort_by(|&a, &b| metric.get(source, a).total_cmp(&metric.get(source, b)).then(a.cmp(&b)));

    let step = |z: usize, w: usize| {
        approx_eq_len(metric.get(source, z) + metric.get(z, w) + metric.get(w, target), dxy)
            && metric.get(z, w) > 0.0
    };

    // Forward reachability from the source, then backward from the target.
    let mut reach = vec![false; n];
    reach[source] = true;
    for &z in &candidates {
        if reach[z] {
            for w in graph.neighbors(z) {
                if on_geodesic(w) && step(z, w) {
                    reach[w] = true;
                }
            }
        }
    }
    let mut coreach = vec![false; n];
    coreach[target] = true;
    for &z in candidates.iter().rev() {
        if graph.neighbors(z).any(|w| coreach[w] && on_geodesic(w) && step(z, w)) {
            coreach[z] = true;
        }
    }

    let nodes: Vec<usize> = candidates.into_iter().filter(|&z| reach[z] && coreach[z]).collect();
    let mut index = vec![None; n];
    for (i, &z) in nodes.iter().enumerate() {
        index[z] = Some(i);
    }
    let mut succ = vec![Vec::new(); nodes.len()];
    let mut pred = vec![Vec::new(); nodes.len()];
    for (i, &z) in nodes.iter().enumerate() {
        for w in graph.neighbors(z) {
            if let Some(j) = index[w] {
                if step(z, w) {
                    succ[i].push(j);
                    pred[j].push(i);
                }
            }
        }
    }
    let layer = nodes.iter().map(|&z| metric.get(source, z)).collect();
    GeodesicDag { source, target, nodes, layer, index, succ, pred }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChainStatistics {
    /// Number of directed chains from source to target.
    pub chains: u64,
    /// Longest chain, in jumps.
    pub max_len: usize,
    /// Shortest chain, in jumps.
    pub min_len: usize,
    /// Set when `chains` overflowed `u64`.
    pub saturated: bool,
}

pub fn chain_statistics(dag: &GeodesicDag) -> ChainStatistics {
    let k = dag.len();
    let mut count = vec![0u64; k];
    let mut longest = vec![0usize; k];
    let mut shortest = vec![usize::MAX; k];
    let mut saturated = false;
    count[0] = 1;
    shortest[0] = 0;
    for i in 0..k {
        for &j in dag.successors(i) {
            match count[j].checked_add(count[i]) {
                Some(c) => count[j] = c,
                None => {
                    count[j] = u64::MAX;
                    saturated = true;
                }
            }
            longest[j] = longest[j].max(longest[i] + 1);
            shortest[j] = shortest[j].min(shortest[i] + 1);
        }
    }
    let t = dag.target_node();
    ChainStatistics { chains: count[t], max_len: longest[t], min_len: shortest[t], saturated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::intrinsic_distance;

    #[test]
    fn lengths_on_a_segment() {
        let g = Graph::path(6);
        let d = intrinsic_distance(&g).unwrap();
        assert_eq!(path_length(&DiscretePath::constant(2), &g, &d).unwrap(), 0.0);
        assert_eq!(path_length(&DiscretePath::from_states(&[0, 1, 2, 3]), &g, &d).unwrap(), 3.0);
        let back = DiscretePath::from_states(&[0, 1, 0, 1]);
        assert_eq!(path_length(&back, &g, &d).unwrap(), 3.0);
        assert!(!is_geodesic(&back, &g, &d));
        assert!(is_geodesic(&DiscretePath::from_states(&[0, 1, 2, 3]), &g, &d));
        assert!(is_geodesic(&DiscretePath::constant(4), &g, &d));
    }

    #[test]
    fn non_adjacent_jump_is_invalid() {
        let g = Graph::path(4);
        let d = intrinsic_distance(&g).unwrap();
        let p = DiscretePath::from_states(&[0, 2]);
        assert!(matches!(path_length(&p, &g, &d), Err(Error::InvalidPath(_))));
        let p = DiscretePath { start: 0, jumps: vec![(0.5, 1), (0.4, 2)] };
        assert!(p.validate(&g).is_err());
    }

    #[test]
    fn segment_dag_is_a_chain() {
        let g = Graph::path(6);
        let d = intrinsic_distance(&g).unwrap();
        let dag = geodesic_dag(0, 3, &g, &d);
        assert_eq!(dag.nodes(), &[0, 1, 2, 3]);
        assert_eq!(dag.edge_count(), 3);
        let s = chain_statistics(&dag);
        assert_eq!((s.chains, s.max_len), (1, 3));
    }

    #[test]
    fn hypercube_dag_has_factorial_chains() {
        let g = Graph::hypercube(3);
        let d = intrinsic_distance(&g).unwrap();
        let dag = geodesic_dag(0, 7, &g, &d);
        assert_eq!(dag.len(), 8);
        let s = chain_statistics(&dag);
        assert_eq!((s.chains, s.max_len), (6, 3));
    }

    #[test]
    fn complete_graph_dag_is_single_edge() {
        let g = Graph::complete(4);
        let d = intrinsic_distance(&g).unwrap();
        let dag = geodesic_dag(1, 3, &g, &d);
        assert_eq!(dag.nodes(), &[1, 3]);
        assert_eq!(dag.edges(), vec![(1, 3)]);
    }

    #[test]
    fn diagonal_dag_is_trivial() {
        let g = Graph::hypercube(2);
        let d = intrinsic_distance(&g).unwrap();
        let dag = geodesic_dag(2, 2, &g, &d);
        assert_eq!(dag.nodes(), &[2]);
        let s = chain_statistics(&dag);
        assert_eq!((s.chains, s.max_len, s.saturated), (1, 0, false));
    }

    #[test]
    fn weighted_dag_mixes_hop_counts() {
        // 0-1-2 unit, 0-2 of length 2: two geodesics with one and two jumps.
        let g = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 2.0)]).unwrap();
        let d = intrinsic_distance(&g).unwrap();
        let dag = geodesic_dag(0, 2, &g, &d);
        assert_eq!(dag.edges(), vec![(0, 1), (0, 2), (1, 2)]);
        let s = chain_statistics(&dag);
        assert_eq!((s.chains, s.min_len, s.max_len), (2, 1, 2));
    }

    #[test]
    fn layers_are_topological() {
        let g = Graph::hypercube(4);
        let d = intrinsic_distance(&g).unwrap();
        let dag = geodesic_dag(3, 12, &g, &d);
        for i in 0..dag.len() {
            for &j in dag.successors(i) {
                assert!(j > i);
                let (z, w) = (dag.vertex(i), dag.vertex(j));
                assert_eq!(dag.layer(j), dag.layer(i) + d.get(z, w));
            }
        }
        assert_eq!(chain_statistics(&dag).chains, 24);
    }

    #[test]
    fn path_state_queries() {
        let p = DiscretePath { start: 0, jumps: vec![(0.25, 1), (0.75, 2)] };
        assert_eq!(p.state_at(0.1), 0);
        assert_eq!(p.state_at(0.25), 1);
        assert_eq!(p.state_at(0.9), 2);
        assert_eq!(p.holding_intervals(), vec![(0, 0.25), (1, 0.5), (2, 0.25)]);
    }
}
