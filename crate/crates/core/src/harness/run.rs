//! End-to-end experiments on a loaded instance.

use std::collections::BTreeMap;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::bridge::BridgeFields;
use crate::ctmc::{bridge_marginal_from, endpoint_joint, rng_from_seed, sample_path, transition_matrix, Generator};
use crate::displacement::{
    benamou_value, constant_speed_timechange, fokker_planck_residual, interior_grid, intermediate_coupling_check,
    limit_plan_with, IntermediateReport, LIMIT_TOL, Interpolation, LimitPlan, TimeChange,
};
use crate::error::{Error, Result};
use crate::geodesy::geodesic_dag;
use crate::harness::instance::InstanceSpec;
use crate::schrodinger::{entropic_value, sinkhorn, total_variation, CouplingTable};
use crate::transport::{face_support, solve_mk_exact, tight_set, TransportSolution};
use crate::scalar::Scalar;

/// Times at which the two-time couplings are checked against the LP.
pub const INTERMEDIATE_PAIRS: [(f64, f64); 3] = [(0.0, 0.5), (0.25, 0.75), (0.5, 1.0)];

/// Finite difference step for the evolution-equation residual.
pub const FP_STEP: f64 = 1e-4;

/// One nonzero entry of the displacement kernel at grid time `grid[t_index]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry {
    pub t_index: usize,
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub struct LimitArtifacts {
    pub name: String,
    pub names: Vec<String>,
    pub limit: LimitPlan,
    pub interpolation: Interpolation,
    pub grid: Vec<f64>,
    pub marginals: Vec<Vec<f64>>,
    pub speed: Vec<f64>,
    pub mass_rate: Vec<f64>,
    pub kernel: Vec<KernelEntry>,
    pub timechange: TimeChange,
    pub benamou: f64,
    pub fokker_planck: f64,
    pub intermediate: Vec<IntermediateReport>,
    pub warnings: Vec<String>,
}

impl LimitArtifacts {
    pub fn w1(&self) -> f64 {
        self.limit.transport.value
    }

    pub fn transport(&self) -> &TransportSolution {
        &self.limit.transport
    }

    pub fn coupling(&self) -> &CouplingTable {
        &self.limit.coupling
    }
}

/// `max - min` of a series; zero when empty.
pub fn spread(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

pub fn limit_interpolation(spec: &InstanceSpec) -> Result<(LimitPlan, Interpolation)> {
    let limit = limit_plan_with(
        &spec.graph,
        &spec.metric,
        &spec.kernel,
        &spec.measure,
        &spec.mu0,
        &spec.mu1,
        spec.params.tol.min(LIMIT_TOL),
        spec.params.max_iter,
    )?;
    let interp = Interpolation::from_coupling(&spec.graph, &spec.metric, &spec.kernel, &limit.coupling);
    Ok((limit, interp))
}

pub fn run_limit(spec: &InstanceSpec) -> Result<LimitArtifacts> {
    let (limit, interp) = limit_interpolation(spec)?;
    let grid = interior_grid(spec.params.time_grid_points);
    let mut marginals = Vec::with_capacity(grid.len());
    let mut speed = Vec::with_capacity(grid.len());
    let mut mass_rate = Vec::with_capacity(grid.len());
    let mut kernel = Vec::new();
    for (i, t) in grid.iter().enumerate() {
        let mu = interp.marginal(t);
        let flux = interp.flux(t);
        for ((z, w), &f) in flux.indexed_iter() {
            if f != 0.0 && mu[z] > 0.0 {
                kernel.push(KernelEntry { t_index: i, from: z, to: w, rate: f / mu[z] });
            }
        }
        marginals.push(mu);
        speed.push(interp.speed(&spec.metric, t)?);
        mass_rate.push(interp.mass_rate(t)?);
    }
    let points = (2 * spec.params.time_grid_points).max(201);
    let timechange = constant_speed_timechange(&interp, &spec.metric, spec.params.time_grid_points);
    let benamou = benamou_value(&interp, &spec.metric, points);
    let fokker_planck = fokker_planck_residual(&interp, &grid, FP_STEP);
    let intermediate = INTERMEDIATE_PAIRS
        .iter()
        .map(|&(s, t)| intermediate_coupling_check(&interp, &spec.metric, s, t, 1e-8))
        .collect::<Result<Vec<_>>>()?;
    Ok(LimitArtifacts {
        name: spec.name.clone(),
        names: spec.graph.names().to_vec(),
        limit,
        interpolation: interp,
        grid,
        marginals,
        speed,
        mass_rate,
        kernel,
        timechange,
        benamou,
        fokker_planck,
        intermediate,
        warnings: spec.tightened.iter().map(ToString::to_string).collect(),
    })
}

/// The interior time grid in exact arithmetic: `1/200 + (99/100) i/(points-1)`.
pub fn exact_interior_grid(points: usize) -> Vec<BigRational> {
    let start = BigRational::from_ratio(1, 200);
    let span = BigRational::from_ratio(99, 100);
    if points < 2 {
        return vec![BigRational::from_ratio(1, 2); points];
    }
    (0..points)
        .map(|i| start.clone() + span.clone() * BigRational::from_ratio(i as i64, (points - 1) as i64))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExactArtifacts {
    pub w1: BigRational,
    pub plan: Vec<(usize, usize, BigRational)>,
    pub grid: Vec<BigRational>,
    pub marginals: Vec<Vec<BigRational>>,
}

/// Rational-arithmetic limit flow. Needs a unique optimal plan, which is then
/// the limit plan itself.
pub fn run_limit_exact(spec: &InstanceSpec) -> Result<ExactArtifacts> {
    let sol = solve_mk_exact(&spec.metric, &spec.exact_mu0, &spec.exact_mu1)?;
    let mask = tight_set(&sol, &spec.metric, 1e-12);
    let plan_f64 = sol.plan.mapv(|p| p.to_f64());
    let face = face_support(&plan_f64, &mask, &spec.mu0, &spec.mu1);
    let zero = BigRational::from_usize(0);
    let unique = face.indexed_iter().all(|((x, y), &on)| on == (sol.plan[[x, y]] != zero));
    if !unique {
        return Err(Error::Validation("rational mode needs a unique optimal transport plan".into()));
    }
    let plan: Vec<_> = sol
        .plan
        .indexed_iter()
        .filter(|(_, p)| **p != zero)
        .map(|((x, y), p)| (x, y, p.clone()))
        .collect();
    let interp = Interpolation::new(&spec.graph, &spec.metric, &spec.exact_kernel, plan.clone());
    let grid = exact_interior_grid(spec.params.time_grid_points);
    let marginals = grid.iter().map(|t| interp.marginal(t)).collect();
    Ok(ExactArtifacts { w1: sol.value, plan, grid, marginals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeDistance {
    pub source: usize,
    pub target: usize,
    pub t: f64,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: f64,
    pub converged: bool,
    pub error: Option<String>,
    pub iterations: usize,
    /// `TV(π̂^k, π̂)`.
    pub tv_plan: f64,
    /// `H(π̂^k | R^k_01) / log k`.
    pub entropic_value: f64,
    pub value_gap: f64,
    pub bridges: Vec<BridgeDistance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub name: String,
    pub w1: f64,
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log gap` against `log log k` (about -1 when the
    /// gap scales like `1/log k`).
    pub gap_slope: Option<f64>,
    /// Whether `TV(π̂^k, π̂)` is non-increasing along the rows (1e-12 slack).
    pub tv_monotone: bool,
}

impl ConvergenceReport {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }
}

/// Times at which bridge marginals are compared in a sweep.
pub const SWEEP_TIMES: [f64; 3] = [0.25, 0.5, 0.75];
/// Bridges compared per row, heaviest pairs first.
pub const SWEEP_PAIRS: usize = 8;

fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn run_sweep(spec: &InstanceSpec, k_grid: &[f64]) -> Result<ConvergenceReport> {
    if k_grid.is_empty() {
        return Err(Error::Parameter("k grid is empty".into()));
    }
    if let Some(k) = k_grid.iter().find(|&&k| !(k >= 2.0)) {
        return Err(Error::Parameter(format!("sweep needs k >= 2, got {k}")));
    }
    let mut k_grid = k_grid.to_vec();
    k_grid.sort_by(f64::total_cmp);
    let (limit, interp) = limit_interpolation(spec)?;
    let w1 = limit.transport.value;

    let mut pairs: Vec<(usize, &BridgeFields, f64)> =
        interp.plan().iter().zip(interp.fields()).enumerate().map(|(i, (p, f))| (i, f, p.2)).collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    pairs.truncate(SWEEP_PAIRS);
    let limits: Vec<Vec<Vec<f64>>> =
        pairs.iter().map(|(_, f, _)| SWEEP_TIMES.iter().map(|t| f.marginal(t)).collect()).collect();

    let mut rows = Vec::with_capacity(k_grid.len());
    for &k in &k_grid {
        let gen = Generator::new(&spec.kernel, &spec.metric, k)?;
        let p_one = transition_matrix(&gen, 1.0);
        let mut bridges = Vec::new();
        for (ti, &t) in SWEEP_TIMES.iter().enumerate() {
            let p_t = transition_matrix(&gen, t);
            let p_rest = transition_matrix(&gen, 1.0 - t);
            for ((_, f, _), lim) in pairs.iter().zip(&limits) {
                let finite = bridge_marginal_from(&p_t, &p_rest, &p_one, f.source(), f.target())?;
                bridges.push(BridgeDistance { source: f.source(), target: f.target(), t, tv: total_variation(&finite, &lim[ti]) });
            }
        }
        let reference = endpoint_joint(&gen, &spec.measure);
        let row = match sinkhorn(&reference.table, &spec.mu0, &spec.mu1, spec.params.tol, spec.params.max_iter) {
            Ok(out) => {
                let value = entropic_value(&out.coupling, &reference.table, k)?;
                SweepRow {
                    k,
                    converged: true,
                    error: None,
                    iterations: out.iterations,
                    tv_plan: out.coupling.total_variation(&limit.coupling),
                    entropic_value: value,
                    value_gap: value - w1,
                    bridges,
                }
            }
            Err(e @ (Error::NonConvergence { .. } | Error::Infeasible { .. })) => SweepRow {
                k,
                converged: false,
                error: Some(e.to_string()),
                iterations: spec.params.max_iter,
                tv_plan: f64::NAN,
                entropic_value: f64::NAN,
                value_gap: f64::NAN,
                bridges,
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.converged && r.value_gap > 0.0)
        .map(|r| (r.k.ln().ln(), r.value_gap.ln()))
        .collect();
    let tvs: Vec<f64> = rows.iter().filter(|r| r.converged).map(|r| r.tv_plan).collect();
    let tv_monotone = tvs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    Ok(ConvergenceReport { name: spec.name.clone(), w1, rows, gap_slope: slope(&fit), tv_monotone })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStat {
    pub states: Vec<String>,
    pub count: u64,
    pub frequency: f64,
    /// Probability under the limit geodesic bridge.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub source: String,
    pub target: String,
    pub k: f64,
    pub seed: u64,
    pub samples: u64,
    pub proposed: u64,
    pub acceptance_rate: f64,
    /// Visited sequences, most frequent first.
    pub sequences: Vec<SequenceStat>,
    /// Fraction of accepted bridges that were not geodesics.
    pub off_geodesic: f64,
    /// TV between the empirical and the limit law of visited sequences.
    pub tv_sequences: f64,
    /// Chi-square of geodesic sequence counts against the limit law,
    /// conditional on being geodesic.
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    /// Largest standardized deviation among geodesic sequences.
    pub max_z: f64,
    /// Time of the one-time marginal comparison.
    pub t: f64,
    pub marginal: Vec<f64>,
    pub marginal_limit: Vec<f64>,
    pub marginal_exact: Vec<f64>,
    pub tv_marginal_limit: f64,
    pub tv_marginal_exact: f64,
}

pub const MIN_SAMPLES: u64 = 1000;
pub const DEFAULT_ACCEPTANCE_FLOOR: f64 = 1e-3;
const WARMUP_PROPOSALS: u64 = 10_000;

/// Rejection-samples bridges of the `k`-slowed walk from `source` to
/// `target` and compares them with the limit bridge.
pub fn run_montecarlo(
    spec: &InstanceSpec,
    source: usize,
    target: usize,
    k: f64,
    samples: u64,
    seed: u64,
    floor: f64,
) -> Result<MonteCarloReport> {
    if samples < MIN_SAMPLES {
        return Err(Error::Parameter(format!("need at least {MIN_SAMPLES} samples, got {samples}")));
    }
    let n = spec.graph.len();
    if source >= n || target >= n {
        return Err(Error::Parameter("source or target out of range".into()));
    }
    let gen = Generator::new(&spec.kernel, &spec.metric, k)?;
    let fields = BridgeFields::new(geodesic_dag(source, target, &spec.graph, &spec.metric), &spec.kernel);
    let predicted: BTreeMap<Vec<usize>, f64> = fields.chains().into_iter().collect();
    let t = 0.5;

    let mut rng = rng_from_seed(seed, 0);
    let mut counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    let mut at_t = vec![0u64; n];
    let (mut proposed, mut accepted) = (0u64, 0u64);
    while accepted < samples {
        let sample = sample_path(&gen, source, &mut rng);
        proposed += 1;
        if sample.path.end() == target {
            accepted += 1;
            *counts.entry(sample.path.states()).or_default() += 1;
            at_t[sample.path.state_at(t)] += 1;
        }
        if proposed >= WARMUP_PROPOSALS && (accepted as f64) < floor * proposed as f64 {
            return Err(Error::AcceptanceTooLow { rate: accepted as f64 / proposed as f64, floor });
        }
    }

    let total = accepted as f64;
    let mut sequences: Vec<SequenceStat> = counts
        .iter()
        .map(|(s, &c)| SequenceStat {
            states: s.iter().map(|&v| spec.graph.name(v).to_string()).collect(),
            count: c,
            frequency: c as f64 / total,
            predicted: predicted.get(s).copied().unwrap_or(0.0),
        })
        .collect();
    for (s, &p) in &predicted {
        if !counts.contains_key(s) {
            sequences.push(SequenceStat {
                states: s.iter().map(|&v| spec.graph.name(v).to_string()).collect(),
                count: 0,
                frequency: 0.0,
                predicted: p,
            });
        }
    }
    sequences.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.states.cmp(&b.states)));

    let geodesic_count: u64 = counts.iter().filter(|(s, _)| predicted.contains_key(*s)).map(|(_, c)| c).sum();
    let off_geodesic = 1.0 - geodesic_count as f64 / total;
    let tv_sequences = 0.5 * sequences.iter().map(|s| (s.frequency - s.predicted).abs()).sum::<f64>();
    let (mut chi_square, mut max_z) = (0.0, 0.0f64);
    let ng = geodesic_count as f64;
    for (s, &p) in &predicted {
        let c = counts.get(s).copied().unwrap_or(0) as f64;
        let e = ng * p;
        if e > 0.0 {
            chi_square += (c - e).powi(2) / e;
        }
        if p < 1.0 && e > 0.0 {
            max_z = max_z.max((c - e).abs() / (ng * p * (1.0 - p)).sqrt());
        }
    }

    let marginal: Vec<f64> = at_t.iter().map(|&c| c as f64 / total).collect();
    let marginal_limit = fields.marginal(&t);
    let p_half = transition_matrix(&gen, t);
    let p_one = transition_matrix(&gen, 1.0);
    let marginal_exact = bridge_marginal_from(&p_half, &p_half, &p_one, source, target)?;
    Ok(MonteCarloReport {
        source: spec.graph.name(source).to_string(),
        target: spec.graph.name(target).to_string(),
        k,
        seed,
        samples,
        proposed,
        acceptance_rate: total / proposed as f64,
        sequences,
        off_geodesic,
        tv_sequences,
        chi_square,
        degrees_of_freedom: predicted.len().saturating_sub(1),
        max_z,
        t,
        tv_marginal_limit: total_variation(&marginal, &marginal_limit),
        tv_marginal_exact: total_variation(&marginal, &marginal_exact),
        marginal,
        marginal_limit,
        marginal_exact,
    })
}
