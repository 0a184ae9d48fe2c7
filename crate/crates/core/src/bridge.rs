//! Exact dynamics of the geodesic bridges.
//!
//! Restricted to geodesics and reweighted by `exp(∫ J_{X_t}(X) dt)`, the
//! reference walk has bridges whose laws are polynomial in time. For the
//! bridge from `x` to `y` on its geodesic DAG,
//!
//! * the backward field `g_t(z) = Σ_n a_n(z) (1-t)^n / n!` collects, for every
//!   chain of `n` jumps from `z` to `y`, the product of the rates along it;
//! * the forward field `f_t(z) = Σ_n b_n(z) t^n / n!` is its mirror from `x`;
//! * the one-time law is `f_t(z) g_t(z) / g_0(x)` and the jump kernel is the
//!   Doob transform `J_z(w) g_t(w) / g_t(z)` along DAG edges.
//!
//! The holding-time survival factor `exp(-∫J)` of the reference cancels the
//! reweighting exactly, which is why only the jump rates along DAG edges enter.

use ndarray::Array2;

use crate::ctmc::EndpointJoint;
use crate::error::{Error, Result};
use crate::geodesy::{successors_toward, GeodesicDag};
use crate::graph::{BaseMeasure, Graph, MetricClosure, RateKernel};
use crate::scalar::{factorial, Scalar};

/// `[s^n / n!]_{n=0..=len}`.
fn exp_basis<T: Scalar>(s: &T, len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len + 1);
    let mut term = T::one();
    out.push(term.clone());
    for n in 1..=len {
        term = term * s.clone() / T::from_usize(n);
        out.push(term.clone());
    }
    out
}

fn dot<T: Scalar>(coeffs: &[T], basis: &[T]) -> T {
    coeffs.iter().zip(basis).fold(T::zero(), |acc, (c, b)| acc + c.clone() * b.clone())
}

/// Coefficients `a_n(z)` of `g_t(z)` in powers of `(1-t)^n/n!`, per DAG node.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardField<T = f64> {
    pub coeffs: Vec<Vec<T>>,
}

/// Coefficients `b_n(z)` of `f_t(z)` in powers of `t^n/n!`, per DAG node.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardField<T = f64> {
    pub coeffs: Vec<Vec<T>>,
}

impl<T: Scalar> BackwardField<T> {
    pub fn eval(&self, node: usize, t: &T) -> T {
        let basis = exp_basis(&(T::one() - t.clone()), self.coeffs[node].len());
        dot(&self.coeffs[node], &basis)
    }
}

impl<T: Scalar> ForwardField<T> {
    pub fn eval(&self, node: usize, t: &T) -> T {
        let basis = exp_basis(t, self.coeffs[node].len());
        dot(&self.coeffs[node], &basis)
    }
}

fn max_chain_len(dag: &GeodesicDag) -> usize {
    let mut longest = vec![0usize; dag.len()];
    for i in 0..dag.len() {
        for &j in dag.successors(i) {
            longest[j] = longest[j].max(longest[i] + 1);
        }
    }
    longest.last().copied().unwrap_or(0)
}

fn edge_rates<T: Scalar>(dag: &GeodesicDag, kernel: &RateKernel<T>) -> Vec<Vec<T>> {
    (0..dag.len())
        .map(|i| dag.successors(i).iter().map(|&j| kernel.rate(dag.vertex(i), dag.vertex(j))).collect())
        .collect()
}

pub fn backward_coefficients<T: Scalar>(dag: &GeodesicDag, kernel: &RateKernel<T>) -> BackwardField<T> {
    let len = max_chain_len(dag);
    let rates = edge_rates(dag, kernel);
    let mut coeffs = vec![vec![T::zero(); len + 1]; dag.len()];
    coeffs[dag.target_node()][0] = T::one();
    for i in (0..dag.len()).rev() {
        for n in 1..=len {
            let mut acc = T::zero();
            for (&j, r) in dag.successors(i).iter().zip(&rates[i]) {
                acc = acc + r.clone() * coeffs[j][n - 1].clone();
            }
            coeffs[i][n] = acc;
        }
    }
    BackwardField { coeffs }
}

pub fn forward_coefficients<T: Scalar>(dag: &GeodesicDag, kernel: &RateKernel<T>) -> ForwardField<T> {
    let len = max_chain_len(dag);
    let mut coeffs = vec![vec![T::zero(); len + 1]; dag.len()];
    coeffs[dag.source_node()][0] = T::one();
    for j in 0..dag.len() {
        let w = dag.vertex(j);
        for n in 1..=len {
            let mut acc = T::zero();
            for &i in dag.predecessors(j) {
                acc = acc + kernel.rate(dag.vertex(i), w) * coeffs[i][n - 1].clone();
            }
            coeffs[j][n] = acc;
        }
    }
    ForwardField { coeffs }
}

/// Everything needed to evaluate the geodesic bridge from `source` to `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeFields<T = f64> {
    pub dag: GeodesicDag,
    pub backward: BackwardField<T>,
    pub forward: ForwardField<T>,
    rates: Vec<Vec<T>>,
    /// `g_0(source)`, the total weight of the bridge.
    norm: T,
    n_vertices: usize,
}

/// Values of both fields on every DAG node at one time.
struct FieldValues<T> {
    f: Vec<T>,
    g: Vec<T>,
}

impl<T: Scalar> BridgeFields<T> {
    pub fn new(dag: GeodesicDag, kernel: &RateKernel<T>) -> Self {
        let backward = backward_coefficients(&dag, kernel);
        let forward = forward_coefficients(&dag, kernel);
        let rates = edge_rates(&dag, kernel);
        let norm = backward.eval(dag.source_node(), &T::zero());
        BridgeFields { n_vertices: kernel.len(), dag, backward, forward, rates, norm }
    }

    pub fn source(&self) -> usize {
        self.dag.source
    }

    pub fn target(&self) -> usize {
        self.dag.target
    }

    /// `g_0(x)`.
    pub fn norm(&self) -> &T {
        &self.norm
    }

    fn values(&self, t: &T) -> FieldValues<T> {
        let len = self.backward.coeffs.first().map_or(0, Vec::len);
        let fb = exp_basis(t, len);
        let gb = exp_basis(&(T::one() - t.clone()), len);
        FieldValues {
            f: self.forward.coeffs.iter().map(|c| dot(c, &fb)).collect(),
            g: self.backward.coeffs.iter().map(|c| dot(c, &gb)).collect(),
        }
    }

    /// Law of the bridge at time `t`, indexed by vertex.
    pub fn marginal(&self, t: &T) -> Vec<T> {
        let v = self.values(t);
        let mut out = vec![T::zero(); self.n_vertices];
        for i in 0..self.dag.len() {
            out[self.dag.vertex(i)] = v.f[i].clone() * v.g[i].clone() / self.norm.clone();
        }
        out
    }

    /// Doob-transformed jump rates out of `z` at time `t < 1`.
    pub fn jump_kernel(&self, t: &T, z: usize) -> Result<Vec<(usize, T)>> {
        if *t >= T::one() {
            return Err(Error::Domain(t.to_f64()));
        }
        let Some(i) = self.dag.node_of(z) else {
            return Ok(Vec::new());
        };
        let len = self.backward.coeffs[i].len();
        let gb = exp_basis(&(T::one() - t.clone()), len);
        let gz = dot(&self.backward.coeffs[i], &gb);
        Ok(self
            .dag
            .successors(i)
            .iter()
            .zip(&self.rates[i])
            .map(|(&j, r)| (self.dag.vertex(j), dot(&self.backward.coeffs[j], &gb) / gz.clone() * r.clone()))
            .collect())
    }

    /// Mass flux `G_t(z) J^G_{t,z}(w)` along every DAG edge `(z, w)`; defined on all of `[0, 1]`.
    pub fn flux(&self, t: &T) -> Vec<(usize, usize, T)> {
        let v = self.values(t);
        let mut out = Vec::with_capacity(self.dag.edge_count());
        for i in 0..self.dag.len() {
            for (&j, r) in self.dag.successors(i).iter().zip(&self.rates[i]) {
                let flow = v.f[i].clone() * r.clone() * v.g[j].clone() / self.norm.clone();
                out.push((self.dag.vertex(i), self.dag.vertex(j), flow));
            }
        }
        out
    }

    /// Expected jump intensity of the bridge at time `t < 1`.
    pub fn mass_rate(&self, t: &T) -> Result<T> {
        if *t >= T::one() {
            return Err(Error::Domain(t.to_f64()));
        }
        Ok(self.flux(t).into_iter().fold(T::zero(), |acc, (_, _, f)| acc + f))
    }

    /// Joint law of the bridge positions at times `s <= t`, as `(z, w, mass)`.
    pub fn two_time_law(&self, s: &T, t: &T) -> Vec<(usize, usize, T)> {
        let vs = self.values(s);
        let vt = self.values(t);
        let len = self.backward.coeffs.first().map_or(0, Vec::len);
        let basis = exp_basis(&(t.clone() - s.clone()), len);
        let k = self.dag.len();
        let mut out = Vec::new();
        for a in 0..k {
            if vs.f[a] == T::zero() {
                continue;
            }
            // chains[n][j]: rate products of n-jump chains from node a to node j.
            let mut layer = vec![T::zero(); k];
            layer[a] = T::one();
            let mut kernel = vec![T::zero(); k];
            for (n, bn) in basis.iter().enumerate() {
                if n > 0 {
                    let mut next = vec![T::zero(); k];
                    for i in a..k {
                        if layer[i] == T::zero() {
                            continue;
                        }
                        for (&j, r) in self.dag.successors(i).iter().zip(&self.rates[i]) {
                            next[j] = next[j].clone() + layer[i].clone() * r.clone();
                        }
                    }
                    layer = next;
                }
                for j in a..k {
                    kernel[j] = kernel[j].clone() + layer[j].clone() * bn.clone();
                }
            }
            for j in a..k {
                let mass = vs.f[a].clone() * kernel[j].clone() * vt.g[j].clone() / self.norm.clone();
                if mass != T::zero() {
                    out.push((self.dag.vertex(a), self.dag.vertex(j), mass));
                }
            }
        }
        out
    }

    /// Probability that the bridge visits exactly `states` in order; zero off the DAG.
    pub fn chain_probability(&self, states: &[usize]) -> T {
        if states.first() != Some(&self.source()) || states.last() != Some(&self.target()) {
            return T::zero();
        }
        let mut weight = T::one();
        for w in states.windows(2) {
            let (Some(i), Some(j)) = (self.dag.node_of(w[0]), self.dag.node_of(w[1])) else {
                return T::zero();
            };
            match self.dag.successors(i).iter().position(|&s| s == j) {
                Some(p) => weight = weight * self.rates[i][p].clone(),
                None => return T::zero(),
            }
        }
        weight / factorial::<T>(states.len() - 1) / self.norm.clone()
    }

    /// All chains from source to target with their probabilities.
    /// Intended for small DAGs; the number of chains can grow factorially.
    pub fn chains(&self) -> Vec<(Vec<usize>, T)> {
        let mut out = Vec::new();
        let mut stack = vec![vec![self.dag.source_node()]];
        while let Some(chain) = stack.pop() {
            let last = *chain.last().expect("non-empty chain");
            if last == self.dag.target_node() {
                let states: Vec<usize> = chain.iter().map(|&i| self.dag.vertex(i)).collect();
                let p = self.chain_probability(&states);
                out.push((states, p));
                continue;
            }
            for &j in self.dag.successors(last) {
                let mut next = chain.clone();
                next.push(j);
                stack.push(next);
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

/// Law of the bridge at time `t`.
pub fn bridge_marginal_exact<T: Scalar>(fields: &BridgeFields<T>, t: &T) -> Vec<T> {
    fields.marginal(t)
}

pub fn bridge_jump_kernel<T: Scalar>(fields: &BridgeFields<T>, t: &T, z: usize) -> Result<Vec<(usize, T)>> {
    fields.jump_kernel(t, z)
}

pub fn bridge_mass_rate<T: Scalar>(fields: &BridgeFields<T>, t: &T) -> Result<T> {
    fields.mass_rate(t)
}

/// `g^y_0(x)` for every pair, in any field.
pub fn geodesic_weights<T: Scalar>(graph: &Graph, metric: &MetricClosure, kernel: &RateKernel<T>) -> Array2<T> {
    let n = graph.len();
    let max_len = n.saturating_sub(1);
    let basis = exp_basis(&T::one(), max_len);
    let mut out = Array2::from_elem((n, n), T::zero());
    for y in 0..n {
        let succ = successors_toward(y, graph, metric);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| metric.get(a, y).total_cmp(&metric.get(b, y)).then(a.cmp(&b)));
        let mut coeffs = vec![vec![T::zero(); max_len + 1]; n];
        coeffs[y][0] = T::one();
        for &z in &order {
            for m in 1..=max_len {
                let mut acc = T::zero();
                for &w in &succ[z] {
                    acc = acc + kernel.rate(z, w) * coeffs[w][m - 1].clone();
                }
                coeffs[z][m] = acc;
            }
        }
        for z in 0..n {
            out[[z, y]] = dot(&coeffs[z], &basis);
        }
    }
    out
}

/// Endpoint table of the reference walk restricted to geodesics:
/// `m_x g^y_0(x)` for every pair.
pub fn geodesic_endpoint_measure(
    graph: &Graph,
    metric: &MetricClosure,
    kernel: &RateKernel,
    m: &BaseMeasure,
) -> EndpointJoint {
    let mut table = geodesic_weights(graph, metric, kernel);
    for (x, mut row) in table.rows_mut().into_iter().enumerate() {
        row *= m.get(x);
    }
    EndpointJoint { table }
}
