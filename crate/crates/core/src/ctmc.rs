//! Continuous-time random walks on the graph: slowing, transition tables,
//! endpoint joints, finite-k bridges, exact path sampling and the change of
//! measure between the slowed and the original walk.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geodesy::{path_length, DiscretePath};
use crate::graph::{BaseMeasure, Graph, MetricClosure, RateKernel};

/// Uniformization stops once the Poisson tail is this small relative to the
/// smallest weight among the first `n` terms (`n` = number of states), so
/// that entries reachable only through many jumps keep full relative accuracy.
pub const UNIFORMIZATION_TAIL: f64 = 1e-14;

const MAX_SERIES_TERMS: usize = 100_000;

/// `J^k_x(y) = k^{-d(x,y)} J_x(y)`.
pub fn slow_kernel(kernel: &RateKernel, k: f64, metric: &MetricClosure) -> Result<RateKernel> {
    if !(k >= 1.0) || !k.is_finite() {
        return Err(Error::Parameter(format!("slowing parameter k = {k} must be at least 1")));
    }
    let rows = (0..kernel.len())
        .map(|x| kernel.row(x).iter().map(|&(y, r)| (y, r * k.powf(-metric.get(x, y)))).collect())
        .collect();
    Ok(RateKernel::from_rows(rows))
}

/// Dense rate matrix of a (possibly slowed) walk.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    q: Array2<f64>,
    k: f64,
}

impl Generator {
    /// Generator of the walk slowed by `k`.
    pub fn new(kernel: &RateKernel, metric: &MetricClosure, k: f64) -> Result<Self> {
        let slowed = slow_kernel(kernel, k, metric)?;
        let mut g = Generator::from_kernel(&slowed);
        g.k = k;
        Ok(g)
    }

    /// Generator with the rates taken as given (`k = 1`).
    pub fn from_kernel(kernel: &RateKernel) -> Self {
        let n = kernel.len();
        let mut q = Array2::zeros((n, n));
        for x in 0..n {
            let mut total = 0.0;
            for &(y, r) in kernel.row(x) {
                if y != x {
                    q[[x, y]] = r;
                    total += r;
                }
            }
            q[[x, x]] = -total;
        }
        Generator { q, k: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.q.nrows() == 0
    }

    pub fn slowing(&self) -> f64 {
        self.k
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.q[[x, y]]
    }

    pub fn total_rate(&self, x: usize) -> f64 {
        -self.q[[x, x]]
    }
}

/// `exp(t Q)` by uniformization.
pub fn transition_matrix(gen: &Generator, t: f64) -> Array2<f64> {
    let n = gen.len();
    let identity = Array2::<f64>::eye(n);
    let lambda = (0..n).map(|x| gen.total_rate(x)).fold(0.0, f64::max);
    if t <= 0.0 || lambda == 0.0 {
        return identity;
    }

    let mut step = gen.q.mapv(|v| v / lambda);
    for x in 0..n {
        step[[x, x]] = (1.0 - gen.total_rate(x) / lambda).max(0.0);
    }

    let lt = lambda * t;
    let log_weight = |j: usize, lw_prev: f64| if j == 0 { -lt } else { lw_prev + lt.ln() - (j as f64).ln() };
    let mut lw = log_weight(0, 0.0);
    let mut min_lw = lw;
    let mut lws = vec![lw];
    for j in 1..n.max(1) {
        lw = log_weight(j, lw);
        min_lw = min_lw.min(lw);
        lws.push(lw);
    }
    let threshold = UNIFORMIZATION_TAIL * min_lw.exp();

    let mut power = identity;
    let mut out = power.mapv(|v| v * lws[0].exp());
    let mut lw = lws[0];
    let mut cumulative = lw.exp();
    for j in 1..MAX_SERIES_TERMS {
        lw = if j < lws.len() { lws[j] } else { log_weight(j, lw) };
        power = power.dot(&step);
        let w = lw.exp();
        out.scaled_add(w, &power);
        cumulative += w;
        // Tail bound sum_{i>j} w_i <= w_{j+1} (j+2)/(j+2-lt) when lt < j+2.
        let next = (lw + lt.ln() - ((j + 1) as f64).ln()).exp();
        let tail = if lt < (j + 2) as f64 {
            next * (j + 2) as f64 / ((j + 2) as f64 - lt)
        } else {
            (1.0 - cumulative).max(next)
        };
        if j + 1 >= n && tail <= threshold {
            break;
        }
    }
    out
}

/// Joint law of `(X_0, X_1)` started from `m`, with entries in mass units.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointJoint {
    pub table: Array2<f64>,
}

impl EndpointJoint {
    pub fn len(&self) -> usize {
        self.table.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.table.nrows() == 0
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.table[[x, y]]
    }

    pub fn total(&self) -> f64 {
        self.table.sum()
    }
}

pub fn endpoint_joint(gen: &Generator, m: &BaseMeasure) -> EndpointJoint {
    let mut table = transition_matrix(gen, 1.0);
    for (x, mut row) in table.rows_mut().into_iter().enumerate() {
        row *= m.get(x);
    }
    EndpointJoint { table }
}

/// One-time marginal of the `x -> y` bridge from precomputed transition tables
/// `p_t = P(t)`, `p_rest = P(1-t)`, `p_one = P(1)`.
pub(crate) fn bridge_marginal_from(
    p_t: &Array2<f64>,
    p_rest: &Array2<f64>,
    p_one: &Array2<f64>,
    x: usize,
    y: usize,
) -> Result<Vec<f64>> {
    let denom = p_one[[x, y]];
    if !(denom > 0.0) {
        return Err(Error::UnreachableBridge { from: x, to: y });
    }
    let mut out: Vec<f64> = (0..p_t.nrows()).map(|z| p_t[[x, z]] * p_rest[[z, y]] / denom).collect();
    // Chapman-Kolmogorov holds only up to the series tolerance.
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Law of `X_t` under the `x -> y` bridge of the walk.
pub fn bridge_marginal(gen: &Generator, x: usize, y: usize, t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(t));
    }
    let p_t = transition_matrix(gen, t);
    let p_rest = transition_matrix(gen, 1.0 - t);
    let p_one = transition_matrix(gen, 1.0);
    bridge_marginal_from(&p_t, &p_rest, &p_one, x, y)
}

/// A path drawn from the walk, with the slowing it was drawn under.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub path: DiscretePath,
    pub k: f64,
}

/// Seeded generator; `stream` separates workers sharing a seed.
pub fn rng_from_seed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Exact simulation on `[0, 1]`: exponential holding times, then a jump
/// chosen proportionally to the rates.
pub fn sample_path<R: Rng + ?Sized>(gen: &Generator, start: usize, rng: &mut R) -> PathSample {
    let mut jumps = Vec::new();
    let mut state = start;
    let mut t = 0.0;
    loop {
        let total = gen.total_rate(state);
        if total <= 0.0 {
            break;
        }
        let u: f64 = rng.gen();
        t += -(1.0 - u).ln() / total;
        if t >= 1.0 {
            break;
        }
        let mut pick = rng.gen::<f64>() * total;
        let row = gen.q.row(state);
        let mut next = state;
        for (y, &r) in row.iter().enumerate() {
            if y == state || r <= 0.0 {
                continue;
            }
            next = y;
            pick -= r;
            if pick < 0.0 {
                break;
            }
        }
        state = next;
        jumps.push((t, state));
    }
    PathSample { path: DiscretePath { start, jumps }, k: gen.k }
}

/// `log dR^k/dR` along `path`, where `R` has rates `kernel` and `R^k` the
/// rates slowed by `k`. Returns `-inf` when the path uses a jump of zero rate.
pub fn girsanov_log_density(
    path: &DiscretePath,
    kernel: &RateKernel,
    k: f64,
    graph: &Graph,
    metric: &MetricClosure,
) -> Result<f64> {
    if !(k >= 1.0) {
        return Err(Error::Parameter(format!("slowing parameter k = {k} must be at least 1")));
    }
    let length = path_length(path, graph, metric)?;
    let states = path.states();
    if states.windows(2).any(|w| !(kernel.rate(w[0], w[1]) > 0.0)) {
        return Ok(f64::NEG_INFINITY);
    }
    let compensator: f64 = path
        .holding_intervals()
        .into_iter()
        .map(|(z, dt)| {
            let lost: f64 = kernel.row(z).iter().map(|&(y, r)| (1.0 - k.powf(-metric.get(z, y))) * r).sum();
            lost * dt
        })
        .sum();
    Ok(-k.ln() * length + compensator)
}
