//! CSV and JSON output. Every float is written with 17 significant digits,
//! which round-trips `f64` exactly and keeps reruns byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::displacement::{IntermediateReport, TimeChange};
use crate::error::{Error, Result};
use crate::harness::run::{spread, ConvergenceReport, KernelEntry, LimitArtifacts, MonteCarloReport};

pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Pretty JSON with floats in `{:.16e}` form.
struct FloatFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for FloatFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_float(value).as_bytes())
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FloatFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path.as_ref())?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.as_ref().display().to_string(),
        message: e.to_string(),
    })
}

fn csv_row(out: &mut String, first: String, values: impl IntoIterator<Item = f64>) {
    out.push_str(&first);
    for v in values {
        out.push(',');
        out.push_str(&fmt_float(v));
    }
    out.push('\n');
}

/// `t` followed by one column per vertex.
pub fn marginals_csv(names: &[String], grid: &[f64], rows: &[Vec<f64>]) -> String {
    let mut out = String::from("t");
    for n in names {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    for (t, row) in grid.iter().zip(rows) {
        csv_row(&mut out, fmt_float(*t), row.iter().copied());
    }
    out
}

pub fn rates_csv(grid: &[f64], speed: &[f64], mass_rate: &[f64]) -> String {
    let mut out = String::from("t,speed,mass_rate\n");
    for ((t, s), m) in grid.iter().zip(speed).zip(mass_rate) {
        csv_row(&mut out, fmt_float(*t), [*s, *m]);
    }
    out
}

pub fn kernel_csv(names: &[String], grid: &[f64], entries: &[KernelEntry]) -> String {
    let mut out = String::from("t,from,to,rate\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_float(grid[e.t_index]),
            names[e.from],
            names[e.to],
            fmt_float(e.rate)
        );
    }
    out
}

pub fn timechange_csv(tc: &TimeChange) -> String {
    let mut out = String::from("s,tau,dtau\n");
    for i in 0..tc.s.len() {
        csv_row(&mut out, fmt_float(tc.s[i]), [tc.tau[i], tc.dtau[i]]);
    }
    out
}

/// Plans, duals and checks of a limit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSummary {
    pub name: String,
    pub vertices: Vec<String>,
    pub w1: f64,
    pub transport_plan: Vec<Vec<f64>>,
    pub dual_u: Vec<f64>,
    pub dual_v: Vec<f64>,
    pub limit_plan: Vec<Vec<f64>>,
    pub face: Vec<(String, String)>,
    pub sinkhorn_iterations: usize,
    pub benamou: f64,
    pub mass_rate_spread: f64,
    pub speed_spread: f64,
    pub fokker_planck_residual: f64,
    pub timechange_degenerate: bool,
    pub intermediate: Vec<IntermediateSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediateSummary {
    pub s: f64,
    pub t: f64,
    pub cost: f64,
    pub lp_value: f64,
    pub gap: f64,
    pub passed: bool,
}

impl From<&IntermediateReport> for IntermediateSummary {
    fn from(r: &IntermediateReport) -> Self {
        IntermediateSummary { s: r.s, t: r.t, cost: r.cost, lp_value: r.lp_value, gap: r.gap, passed: r.passed }
    }
}

fn rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl LimitSummary {
    pub fn from_artifacts(art: &LimitArtifacts) -> Self {
        let names = &art.names;
        LimitSummary {
            name: art.name.clone(),
            vertices: names.clone(),
            w1: art.w1(),
            transport_plan: rows(&art.transport().plan),
            dual_u: art.transport().u.clone(),
            dual_v: art.transport().v.clone(),
            limit_plan: rows(&art.coupling().pi),
            face: art
                .limit
                .face
                .indexed_iter()
                .filter(|(_, &on)| on)
                .map(|((x, y), _)| (names[x].clone(), names[y].clone()))
                .collect(),
            sinkhorn_iterations: art.limit.iterations,
            benamou: art.benamou,
            mass_rate_spread: spread(&art.mass_rate),
            speed_spread: spread(&art.speed),
            fokker_planck_residual: art.fokker_planck,
            timechange_degenerate: art.timechange.degenerate,
            intermediate: art.intermediate.iter().map(Into::into).collect(),
            warnings: art.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Both,
}

pub const MARGINALS_FILE: &str = "marginals.csv";
pub const RATES_FILE: &str = "rates.csv";
pub const KERNEL_FILE: &str = "kernel.csv";
pub const TIMECHANGE_FILE: &str = "timechange.csv";
pub const LIMIT_FILE: &str = "limit.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const MONTECARLO_FILE: &str = "montecarlo.json";

/// Writes the artifacts of a limit run into `dir`, returning the files written.
pub fn emit_limit(art: &LimitArtifacts, format: Format, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    if matches!(format, Format::Csv | Format::Both) {
        put(MARGINALS_FILE, marginals_csv(&art.names, &art.grid, &art.marginals))?;
        put(RATES_FILE, rates_csv(&art.grid, &art.speed, &art.mass_rate))?;
        put(KERNEL_FILE, kernel_csv(&art.names, &art.grid, &art.kernel))?;
        put(TIMECHANGE_FILE, timechange_csv(&art.timechange))?;
    }
    if matches!(format, Format::Json | Format::Both) {
        put(LIMIT_FILE, to_json(&LimitSummary::from_artifacts(art))?)?;
    }
    Ok(written)
}

pub fn emit_sweep(report: &ConvergenceReport, dir: impl AsRef<Path>) -> Result<PathBuf> {
    fs::create_dir_all(dir.as_ref())?;
    let path = dir.as_ref().join(SWEEP_FILE);
    write_json(&path, report)?;
    Ok(path)
}

pub fn emit_montecarlo(report: &MonteCarloReport, dir: impl AsRef<Path>) -> Result<PathBuf> {
    fs::create_dir_all(dir.as_ref())?;
    let path = dir.as_ref().join(MONTECARLO_FILE);
    write_json(&path, report)?;
    Ok(path)
}

/// Reads back the `t, μ_t(·)` table written by [`marginals_csv`].
pub fn read_marginals_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<f64>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path.as_ref())?;
    let context = path.as_ref().display().to_string();
    let bad = |line: usize, message: String| Error::Parse { context: format!("{context}:{line}"), message };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let (mut grid, mut table) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let values = line
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|e| bad(i + 2, format!("{v:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != names.len() + 1 {
            return Err(bad(i + 2, format!("expected {} columns, found {}", names.len() + 1, values.len())));
        }
        grid.push(values[0]);
        table.push(values[1..].to_vec());
    }
    Ok((names, grid, table))
}

/// Human-readable digest of an output directory, plus whether its checks hold.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectoryReport {
    pub lines: Vec<String>,
    pub ok: bool,
}

/// Tolerance on emitted probability rows.
pub const ROW_SUM_TOL: f64 = 1e-10;

pub fn report_directory(dir: impl AsRef<Path>) -> Result<DirectoryReport> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Io(io::Error::new(io::ErrorKind::NotFound, format!("{} is not a directory", dir.display()))));
    }
    let mut lines = Vec::new();
    let mut ok = true;
    let mut found = false;
    let limit = dir.join(LIMIT_FILE);
    if limit.exists() {
        found = true;
        let s: LimitSummary = read_json(&limit)?;
        lines.push(format!("instance {} ({} vertices)", s.name, s.vertices.len()));
        lines.push(format!("W1                      {}", fmt_float(s.w1)));
        lines.push(format!("integral of speed       {}", fmt_float(s.benamou)));
        lines.push(format!("mass-rate spread        {}", fmt_float(s.mass_rate_spread)));
        lines.push(format!("speed spread            {}", fmt_float(s.speed_spread)));
        lines.push(format!("evolution residual      {}", fmt_float(s.fokker_planck_residual)));
        for r in &s.intermediate {
            lines.push(format!(
                "coupling ({}, {}) gap   {} {}",
                r.s,
                r.t,
                fmt_float(r.gap),
                if r.passed { "ok" } else { "FAILED" }
            ));
            ok &= r.passed;
        }
        for w in &s.warnings {
            lines.push(format!("warning: {w}"));
        }
    }
    let marginals = dir.join(MARGINALS_FILE);
    if marginals.exists() {
        found = true;
        let (_, grid, table) = read_marginals_csv(&marginals)?;
        let worst = table.iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
        let pass = worst <= ROW_SUM_TOL;
        ok &= pass;
        lines.push(format!(
            "marginal rows           {} rows, worst |sum - 1| = {} {}",
            grid.len(),
            fmt_float(worst),
            if pass { "ok" } else { "FAILED" }
        ));
    }
    let sweep = dir.join(SWEEP_FILE);
    if sweep.exists() {
        found = true;
        let r: ConvergenceReport = read_json(&sweep)?;
        lines.push(format!("sweep {} (W1 = {})", r.name, fmt_float(r.w1)));
        lines.push("  k  tv_plan  value_gap".into());
        for row in &r.rows {
            lines.push(format!("  {:e}  {}  {}", row.k, fmt_float(row.tv_plan), fmt_float(row.value_gap)));
        }
        ok &= r.all_converged();
    }
    let mc = dir.join(MONTECARLO_FILE);
    if mc.exists() {
        found = true;
        let r: MonteCarloReport = read_json(&mc)?;
        lines.push(format!(
            "montecarlo {} -> {} at k = {:e}: {} bridges, acceptance {}, sequence TV {}",
            r.source,
            r.target,
            r.k,
            r.samples,
            fmt_float(r.acceptance_rate),
            fmt_float(r.tv_sequences)
        ));
    }
    if !found {
        lines.push(format!("no lazywalk outputs found in {}", dir.display()));
        ok = false;
    }
    Ok(DirectoryReport { lines, ok })
}
