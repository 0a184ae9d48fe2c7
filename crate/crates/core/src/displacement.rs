//! The limit objects: optimal face, limit plan, the interpolating flow and
//! its kernel, speed, mass-displacement rate and constant-speed time change.

use ndarray::Array2;

use crate::bridge::{geodesic_endpoint_measure, BridgeFields};
use crate::ctmc::EndpointJoint;
use crate::error::{Error, Result};
use crate::geodesy::geodesic_dag;
use crate::graph::{BaseMeasure, Graph, MetricClosure, RateKernel};
use crate::scalar::Scalar;
use crate::schrodinger::{masked_sinkhorn, CouplingTable, DEFAULT_MAX_ITER};
use crate::transport::{face_support, solve_mk, tight_set, TransportSolution};

/// Dual-slack tolerance for the optimal face, before scaling by the diameter.
pub const TIGHT_TOL: f64 = 1e-9;

/// Marginal tolerance of the masked scaling; tight enough that the plan's
/// cost matches the transport value to about `1e-12` times the diameter.
pub const LIMIT_TOL: f64 = 1e-13;

/// `points` evenly spaced interior times from 0.005 to 0.995.
pub fn interior_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..points).map(|i| 0.005 + 0.99 * i as f64 / (points - 1) as f64).collect(),
    }
}

/// `points` evenly spaced times covering `[0, 1]`.
pub fn unit_grid(points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points).map(|i| i as f64 / (points - 1) as f64).collect()
}

/// Result of the limit entropy problem with everything used to build it.
#[derive(Debug, Clone)]
pub struct LimitPlan {
    pub coupling: CouplingTable,
    pub transport: TransportSolution,
    /// Pairs where the duals are tight.
    pub mask: Array2<bool>,
    /// Pairs of the mask some optimal plan actually charges.
    pub face: Array2<bool>,
    pub reference: EndpointJoint,
    pub iterations: usize,
    pub gap: f64,
}

pub fn limit_plan(
    graph: &Graph,
    metric: &MetricClosure,
    kernel: &RateKernel,
    m: &BaseMeasure,
    mu0: &[f64],
    mu1: &[f64],
) -> Result<LimitPlan> {
    limit_plan_with(graph, metric, kernel, m, mu0, mu1, LIMIT_TOL, DEFAULT_MAX_ITER)
}

#[allow(clippy::too_many_arguments)]
pub fn limit_plan_with(
    graph: &Graph,
    metric: &MetricClosure,
    kernel: &RateKernel,
    m: &BaseMeasure,
    mu0: &[f64],
    mu1: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<LimitPlan> {
    let transport = solve_mk(metric, mu0, mu1)?;
    let mask = tight_set(&transport, metric, TIGHT_TOL * metric.diameter().max(1.0));
    // Tight pairs that no optimal plan can charge would leave the masked
    // problem without an interior solution; drop them first.
    let face = face_support(&transport.plan, &mask, mu0, mu1);
    let reference = geodesic_endpoint_measure(graph, metric, kernel, m);
    // A face without free pairs holds a single plan, the one already found.
    let single = face.indexed_iter().all(|((x, y), &on)| on == (transport.plan[[x, y]] > 0.0));
    let (coupling, iterations, gap) = if single {
        (CouplingTable { pi: transport.plan.clone() }, 0, 0.0)
    } else {
        let out = masked_sinkhorn(&reference.table, &face, mu0, mu1, tol, max_iter)?;
        (out.coupling, out.iterations, out.gap)
    };
    Ok(LimitPlan { coupling, transport, mask, face, reference, iterations, gap })
}

/// A mixture of geodesic bridges weighted by an endpoint plan.
#[derive(Debug, Clone)]
pub struct Interpolation<T = f64> {
    plan: Vec<(usize, usize, T)>,
    fields: Vec<BridgeFields<T>>,
    n: usize,
}

impl<T: Scalar> Interpolation<T> {
    /// Builds one bridge per charged pair of `plan`.
    pub fn new(
        graph: &Graph,
        metric: &MetricClosure,
        kernel: &RateKernel<T>,
        plan: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Self {
        let plan: Vec<_> = plan.into_iter().filter(|(_, _, p)| *p > T::zero()).collect();
        let fields = plan
            .iter()
            .map(|&(x, y, _)| BridgeFields::new(geodesic_dag(x, y, graph, metric), kernel))
            .collect();
        Interpolation { plan, fields, n: graph.len() }
    }

    /// Assembles an interpolation from precomputed bridges, which must line
    /// up with the plan pair by pair.
    pub fn from_parts(n: usize, plan: Vec<(usize, usize, T)>, fields: Vec<BridgeFields<T>>) -> Result<Self> {
        for (i, &(x, y, _)) in plan.iter().enumerate() {
            match fields.get(i) {
                Some(f) if f.source() == x && f.target() == y => {}
                _ => return Err(Error::MissingField(x, y)),
            }
        }
        Ok(Interpolation { plan, fields, n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn plan(&self) -> &[(usize, usize, T)] {
        &self.plan
    }

    pub fn fields(&self) -> &[BridgeFields<T>] {
        &self.fields
    }

    pub fn marginal(&self, t: &T) -> Vec<T> {
        let mut mu = vec![T::zero(); self.n];
        for ((_, _, p), f) in self.plan.iter().zip(&self.fields) {
            for (z, g) in f.marginal(t).into_iter().enumerate() {
                if g != T::zero() {
                    mu[z] = mu[z].clone() + p.clone() * g;
                }
            }
        }
        mu
    }

    /// `μ_t(z) Ĵ_{t,z}(w)` as a dense table; valid on all of `[0, 1]`.
    pub fn flux(&self, t: &T) -> Array2<T> {
        let mut out = Array2::from_elem((self.n, self.n), T::zero());
        for ((_, _, p), f) in self.plan.iter().zip(&self.fields) {
            for (z, w, q) in f.flux(t) {
                out[[z, w]] = out[[z, w]].clone() + p.clone() * q;
            }
        }
        out
    }

    /// `Ĵ_{t,z}`, the jump rates of the interpolating walk out of `z`.
    pub fn kernel(&self, t: &T, z: usize) -> Result<Vec<(usize, T)>> {
        if *t >= T::one() {
            return Err(Error::Domain(t.to_f64()));
        }
        let mu = self.marginal(t);
        if mu[z] == T::zero() {
            return Err(Error::UndefinedState(z));
        }
        let flux = self.flux(t);
        Ok((0..self.n)
            .filter(|&w| flux[[z, w]] != T::zero())
            .map(|w| (w, flux[[z, w]].clone() / mu[z].clone()))
            .collect())
    }

    fn flux_total(&self, t: &T) -> T {
        self.flux(t).iter().fold(T::zero(), |a, q| a + q.clone())
    }

    fn flux_length(&self, metric: &MetricClosure, t: &T) -> T {
        self.flux(t)
            .indexed_iter()
            .filter(|(_, q)| **q != T::zero())
            .fold(T::zero(), |a, ((z, w), q)| a + q.clone() * T::from_f64(metric.get(z, w)))
    }

    pub fn mass_rate(&self, t: &T) -> Result<T> {
        if *t >= T::one() {
            return Err(Error::Domain(t.to_f64()));
        }
        Ok(self.flux_total(t))
    }

    pub fn speed(&self, metric: &MetricClosure, t: &T) -> Result<T> {
        if *t >= T::one() {
            return Err(Error::Domain(t.to_f64()));
        }
        Ok(self.flux_length(metric, t))
    }

    /// Joint law of the interpolating walk at times `s <= t`.
    pub fn two_time_coupling(&self, s: &T, t: &T) -> Array2<T> {
        let mut out = Array2::from_elem((self.n, self.n), T::zero());
        for ((_, _, p), f) in self.plan.iter().zip(&self.fields) {
            for (z, w, q) in f.two_time_law(s, t) {
                out[[z, w]] = out[[z, w]].clone() + p.clone() * q;
            }
        }
        out
    }
}

impl Interpolation<f64> {
    pub fn from_coupling(graph: &Graph, metric: &MetricClosure, kernel: &RateKernel, coupling: &CouplingTable) -> Self {
        Self::new(graph, metric, kernel, coupling.support())
    }

    /// Speed at any `t` in `[0, 1]`, including the right endpoint.
    fn speed_closed(&self, metric: &MetricClosure, t: f64) -> f64 {
        self.flux_length(metric, &t)
    }
}

pub fn interpolate<T: Scalar>(interp: &Interpolation<T>, t: &T) -> Vec<T> {
    interp.marginal(t)
}

pub fn displacement_kernel<T: Scalar>(interp: &Interpolation<T>, t: &T, z: usize) -> Result<Vec<(usize, T)>> {
    interp.kernel(t, z)
}

pub fn speed<T: Scalar>(interp: &Interpolation<T>, metric: &MetricClosure, t: &T) -> Result<T> {
    interp.speed(metric, t)
}

pub fn mass_rate<T: Scalar>(interp: &Interpolation<T>, t: &T) -> Result<T> {
    interp.mass_rate(t)
}

/// `∫_0^1 speed` by five-point Gauss–Legendre on `points - 1` equal panels.
/// The speed is a polynomial, so a handful of panels is already exact up to
/// round-off unless the geodesics are long.
pub fn benamou_value(interp: &Interpolation, metric: &MetricClosure, points: usize) -> f64 {
    let panels = points.max(2) - 1;
    let h = 1.0 / panels as f64;
    (0..panels)
        .map(|i| gauss_panel(|t| interp.speed_closed(metric, t), i as f64 * h, (i + 1) as f64 * h))
        .sum()
}

fn gauss_panel(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
    GAUSS_NODES.iter().zip(GAUSS_WEIGHTS).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

const GAUSS_NODES: [f64; 5] = [
    -0.906_179_845_938_663_99,
    -0.538_469_310_105_683_09,
    0.0,
    0.538_469_310_105_683_09,
    0.906_179_845_938_663_99,
];
const GAUSS_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_09,
    0.478_628_670_499_366_47,
    0.568_888_888_888_888_89,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_09,
];

/// Cumulative speed `Ψ(t) = ∫_0^t speed`, tabulated on uniform knots with
/// five-point Gauss–Legendre panels.
pub struct CumulativeSpeed<'a> {
    interp: &'a Interpolation,
    metric: &'a MetricClosure,
    knots: Vec<f64>,
}

impl<'a> CumulativeSpeed<'a> {
    const PANELS: usize = 200;

    pub fn new(interp: &'a Interpolation, metric: &'a MetricClosure) -> Self {
        let mut this = CumulativeSpeed { interp, metric, knots: vec![0.0] };
        let h = 1.0 / Self::PANELS as f64;
        for i in 0..Self::PANELS {
            let a = i as f64 * h;
            let next = this.knots[i] + this.panel(a, a + h);
            this.knots.push(next);
        }
        this
    }

    fn panel(&self, a: f64, b: f64) -> f64 {
        gauss_panel(|t| self.interp.speed_closed(self.metric, t), a, b)
    }

    pub fn total(&self) -> f64 {
        self.knots[Self::PANELS]
    }

    pub fn speed(&self, t: f64) -> f64 {
        self.interp.speed_closed(self.metric, t)
    }

    pub fn value(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let h = 1.0 / Self::PANELS as f64;
        let i = ((t / h) as usize).min(Self::PANELS - 1);
        self.knots[i] + self.panel(i as f64 * h, t)
    }

    /// Smallest `t` with `Ψ(t) = target`, by safeguarded Newton.
    pub fn inverse(&self, target: f64) -> f64 {
        if target <= 0.0 {
            return 0.0;
        }
        if target >= self.total() {
            return 1.0;
        }
        let i = self.knots.partition_point(|&k| k < target).clamp(1, Self::PANELS);
        let h = 1.0 / Self::PANELS as f64;
        let (mut lo, mut hi) = ((i - 1) as f64 * h, i as f64 * h);
        let mut t = (lo + hi) / 2.0;
        for _ in 0..100 {
            let f = self.value(t) - target;
            if f.abs() <= 1e-15 * self.total().max(1.0) {
                break;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let v = self.speed(t);
            let newton = t - f / v;
            t = if v > 0.0 && newton > lo && newton < hi { newton } else { (lo + hi) / 2.0 };
            if hi - lo < 1e-16 {
                break;
            }
        }
        t
    }
}

/// `τ(s) = Ψ^{-1}(W s)` on a grid of `s`, with `τ'(s) = W / speed(τ(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChange {
    pub s: Vec<f64>,
    pub tau: Vec<f64>,
    pub dtau: Vec<f64>,
    /// `Ψ(1)`, the total length travelled.
    pub total: f64,
    /// Set when nothing moves; `τ` is then the identity.
    pub degenerate: bool,
}

pub fn constant_speed_timechange(interp: &Interpolation, metric: &MetricClosure, points: usize) -> TimeChange {
    let s = unit_grid(points);
    let psi = CumulativeSpeed::new(interp, metric);
    let total = psi.total();
    if total <= 0.0 {
        return TimeChange { tau: s.clone(), dtau: vec![1.0; s.len()], s, total: 0.0, degenerate: true };
    }
    let tau: Vec<f64> = s.iter().map(|&si| psi.inverse(total * si)).collect();
    let dtau = tau.iter().map(|&t| total / psi.speed(t)).collect();
    TimeChange { s, tau, dtau, total, degenerate: false }
}

/// Largest violation of `∂_t μ_t(z) = Σ_w [flux(w, z) - flux(z, w)]` over
/// `grid`, with central differences of step `dt`.
pub fn fokker_planck_residual(interp: &Interpolation, grid: &[f64], dt: f64) -> f64 {
    let n = interp.len();
    let mut worst: f64 = 0.0;
    for &t in grid {
        let (a, b) = ((t - dt).max(0.0), (t + dt).min(1.0));
        let before = interp.marginal(&a);
        let after = interp.marginal(&b);
        let flux = interp.flux(&t);
        for z in 0..n {
            let lhs = (after[z] - before[z]) / (b - a);
            let inflow: f64 = (0..n).map(|w| flux[[w, z]]).sum();
            let outflow: f64 = (0..n).map(|w| flux[[z, w]]).sum();
            worst = worst.max((lhs - (inflow - outflow)).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateReport {
    pub s: f64,
    pub t: f64,
    /// Cost of the interpolation's own two-time coupling.
    pub cost: f64,
    /// Optimal transport cost between the two marginals.
    pub lp_value: f64,
    pub gap: f64,
    /// Largest mismatch between the coupling's marginals and `μ_s`, `μ_t`.
    pub marginal_error: f64,
    pub passed: bool,
}

pub fn intermediate_coupling_check(
    interp: &Interpolation,
    metric: &MetricClosure,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<IntermediateReport> {
    if !(0.0..=1.0).contains(&s) || !(s..=1.0).contains(&t) {
        return Err(Error::Parameter(format!("need 0 <= s <= t <= 1, got s={s}, t={t}")));
    }
    let joint = interp.two_time_coupling(&s, &t);
    let mu_s = interp.marginal(&s);
    let mu_t = interp.marginal(&t);
    let n = interp.len();
    let cost: f64 = joint.indexed_iter().map(|((z, w), p)| p * metric.get(z, w)).sum();
    let mut marginal_error: f64 = 0.0;
    for z in 0..n {
        let row: f64 = joint.row(z).sum();
        let col: f64 = joint.column(z).sum();
        marginal_error = marginal_error.max((row - mu_s[z]).abs()).max((col - mu_t[z]).abs());
    }
    let lp_value = solve_mk(metric, &mu_s, &mu_t)?.value;
    let gap = cost - lp_value;
    Ok(IntermediateReport { s, t, cost, lp_value, gap, marginal_error, passed: gap.abs() <= tol })
}
