//! Instance files: JSON description of a graph, walk and marginals.

use std::collections::BTreeMap;
use std::path::Path;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_reversible_walk, intrinsic_distance, simple_walk_rates, tighten_edge_lengths, validate_hypotheses,
    BaseMeasure, Graph, HypothesisReport, MetricClosure, RateKernel, TightenedEdge,
};
use crate::scalar::{parse_rational, Scalar};

/// A number written either as a JSON number or as an exact `"p/q"` string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Mass {
    Float(f64),
    Exact(String),
}

impl Mass {
    pub fn to_rational(&self) -> Result<BigRational> {
        match self {
            Mass::Float(v) if v.is_finite() => Ok(BigRational::from_f64(*v)),
            Mass::Float(v) => Err(parse_error("number", format!("{v} is not finite"))),
            Mass::Exact(s) => parse_rational(s).ok_or_else(|| parse_error("number", format!("cannot parse {s:?}"))),
        }
    }

    pub fn to_f64(&self) -> Result<f64> {
        match self {
            Mass::Float(v) => Ok(*v),
            Mass::Exact(_) => Ok(self.to_rational()?.to_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeSpec {
    Unit(String, String),
    Weighted(String, String, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureSpec {
    Named(String),
    Table(BTreeMap<String, Mass>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeWeight {
    Constant(f64),
    Table(Vec<(String, String, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReversibleSpec {
    #[serde(default = "unit_weight")]
    pub s: EdgeWeight,
}

fn unit_weight() -> EdgeWeight {
    EdgeWeight::Constant(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReversibleKernel {
    pub reversible: ReversibleSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Named(String),
    Reversible(ReversibleKernel),
    Rates(BTreeMap<String, BTreeMap<String, Mass>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default = "default_k_grid")]
    pub k_grid: Vec<f64>,
    #[serde(default = "default_time_points")]
    pub time_grid_points: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_k_grid() -> Vec<f64> {
    vec![1e1, 1e2, 1e3, 1e4, 1e5, 1e6]
}

fn default_time_points() -> usize {
    101
}

fn default_tol() -> f64 {
    crate::schrodinger::DEFAULT_TOL
}

fn default_max_iter() -> usize {
    crate::schrodinger::DEFAULT_MAX_ITER
}

impl Default for Params {
    fn default() -> Self {
        Params {
            k_grid: default_k_grid(),
            time_grid_points: default_time_points(),
            tol: default_tol(),
            seed: 0,
            max_iter: default_max_iter(),
        }
    }
}

/// The file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(default)]
    pub name: Option<String>,
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub measure: Option<MeasureSpec>,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    pub mu0: BTreeMap<String, Mass>,
    pub mu1: BTreeMap<String, Mass>,
    #[serde(default)]
    pub params: Params,
}

/// A validated instance, ready to run.
#[derive(Debug, Clone)]
pub struct InstanceSpec {
    pub name: String,
    pub graph: Graph,
    pub tightened: Vec<TightenedEdge>,
    pub metric: MetricClosure,
    pub measure: BaseMeasure,
    pub kernel: RateKernel,
    /// Rates in exact arithmetic: `1/n_x` for the simple walk, otherwise the
    /// binary value of each rate (or its `"p/q"` spelling).
    pub exact_kernel: RateKernel<BigRational>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub exact_mu0: Vec<BigRational>,
    pub exact_mu1: Vec<BigRational>,
    pub params: Params,
    pub hypotheses: HypothesisReport,
}

fn parse_error(context: &str, message: impl Into<String>) -> Error {
    Error::Parse { context: context.to_string(), message: message.into() }
}

fn vertex(graph: &Graph, name: &str, context: &str) -> Result<usize> {
    graph
        .index_of(name)
        .ok_or_else(|| parse_error(context, format!("unknown vertex {name:?}")))
}

fn marginal(graph: &Graph, table: &BTreeMap<String, Mass>, name: &str) -> Result<(Vec<f64>, Vec<BigRational>)> {
    let mut exact = vec![BigRational::from_usize(0); graph.len()];
    for (id, mass) in table {
        let q = mass.to_rational()?;
        if q < BigRational::from_usize(0) {
            return Err(parse_error(name, format!("negative mass at {id:?}")));
        }
        exact[vertex(graph, id, name)?] = q;
    }
    let float: Vec<f64> = table.iter().fold(vec![0.0; graph.len()], |mut acc, (id, m)| {
        if let (Some(i), Ok(v)) = (graph.index_of(id), m.to_f64()) {
            acc[i] = v;
        }
        acc
    });
    let sum: f64 = float.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Normalization { name: name.to_string(), sum });
    }
    Ok((float, exact))
}

/// Parses instance JSON text; `force` skips the hypothesis gate.
pub fn parse_instance(text: &str, default_name: &str, force: bool) -> Result<InstanceSpec> {
    let file: InstanceFile =
        serde_json::from_str(text).map_err(|e| parse_error("instance", e.to_string()))?;
    build_instance(file, default_name, force)
}

pub fn load_instance(path: impl AsRef<Path>, force: bool) -> Result<InstanceSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("instance");
    parse_instance(&text, stem, force).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse { context: format!("{}: {context}", path.display()), message },
        other => other,
    })
}

pub fn build_instance(file: InstanceFile, default_name: &str, force: bool) -> Result<InstanceSpec> {
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = file.vertices.iter().find(|v| !seen.insert(v.as_str())) {
        return Err(parse_error("vertices", format!("duplicate vertex {dup:?}")));
    }
    let mut raw = Graph::new(file.vertices.iter().cloned());
    for (i, e) in file.edges.iter().enumerate() {
        let context = format!("edges[{i}]");
        let (u, v, len) = match e {
            EdgeSpec::Unit(u, v) => (u, v, 1.0),
            EdgeSpec::Weighted(u, v, l) => (u, v, *l),
        };
        let (u, v) = (vertex(&raw, u, &context)?, vertex(&raw, v, &context)?);
        raw.add_edge(u, v, len).map_err(|e| parse_error(&context, e.to_string()))?;
    }

    let (graph, tightened) = if raw.unreachable().is_empty() {
        tighten_edge_lengths(&raw)?
    } else {
        (raw, Vec::new())
    };
    let metric = intrinsic_distance(&graph).ok();

    let measure = match &file.measure {
        None => BaseMeasure::volume(&graph),
        Some(MeasureSpec::Named(s)) if s == "volume" => BaseMeasure::volume(&graph),
        Some(MeasureSpec::Named(s)) if s == "counting" => BaseMeasure::counting(graph.len()),
        Some(MeasureSpec::Named(s)) => return Err(parse_error("measure", format!("unknown measure {s:?}"))),
        Some(MeasureSpec::Table(t)) => {
            let mut mass = vec![0.0; graph.len()];
            for (id, m) in t {
                mass[vertex(&graph, id, "measure")?] = m.to_f64()?;
            }
            BaseMeasure { mass }
        }
    };

    let (kernel, exact_kernel) = match &file.kernel {
        None => simple(&graph),
        Some(KernelSpec::Named(s)) if s == "simple" => simple(&graph),
        Some(KernelSpec::Named(s)) => return Err(parse_error("kernel", format!("unknown kernel {s:?}"))),
        Some(KernelSpec::Reversible(r)) => {
            let kernel = match &r.reversible.s {
                EdgeWeight::Constant(c) => build_reversible_walk(&graph, &measure, |_, _| *c)?,
                EdgeWeight::Table(rows) => {
                    let mut table = BTreeMap::new();
                    for (u, v, s) in rows {
                        let (u, v) = (vertex(&graph, u, "kernel.reversible.s")?, vertex(&graph, v, "kernel.reversible.s")?);
                        table.insert((u.min(v), u.max(v)), *s);
                    }
                    build_reversible_walk(&graph, &measure, |x, y| {
                        table.get(&(x.min(y), x.max(y))).copied().unwrap_or(f64::NAN)
                    })?
                }
            };
            let exact = kernel.map(|r| BigRational::from_f64(*r));
            (kernel, exact)
        }
        Some(KernelSpec::Rates(table)) => {
            let mut rows = vec![Vec::new(); graph.len()];
            for (from, row) in table {
                let x = vertex(&graph, from, "kernel")?;
                for (to, rate) in row {
                    let y = vertex(&graph, to, "kernel")?;
                    rows[x].push((y, rate.to_rational()?));
                }
            }
            let exact = RateKernel::from_rows(rows);
            (exact.to_f64(), exact)
        }
    };

    let (mu0, exact_mu0) = marginal(&graph, &file.mu0, "mu0")?;
    let (mu1, exact_mu1) = marginal(&graph, &file.mu1, "mu1")?;

    let hypotheses = validate_hypotheses(&graph, metric.as_ref(), &kernel, &measure);
    if !hypotheses.passed() && !force {
        return Err(Error::Hypothesis(hypotheses.failures.clone()));
    }
    let metric = match metric {
        Some(m) => m,
        None => intrinsic_distance(&graph)?,
    };
    if file.params.time_grid_points < 2 {
        return Err(parse_error("params.time_grid_points", "need at least 2 points"));
    }

    Ok(InstanceSpec {
        name: file.name.unwrap_or_else(|| default_name.to_string()),
        graph,
        tightened,
        metric,
        measure,
        kernel,
        exact_kernel,
        mu0,
        mu1,
        exact_mu0,
        exact_mu1,
        params: file.params,
        hypotheses,
    })
}

fn simple(graph: &Graph) -> (RateKernel, RateKernel<BigRational>) {
    (simple_walk_rates(graph), simple_walk_rates(graph))
}

impl InstanceSpec {
    pub fn vertex(&self, name: &str) -> Result<usize> {
        vertex(&self.graph, name, "vertex")
    }
}
