use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use lazywalk::bridge::BridgeFields;
use lazywalk::ctmc::{bridge_marginal, Generator};
use lazywalk::geodesy::{chain_statistics, geodesic_dag};
use lazywalk::harness::emit::{emit_limit, emit_montecarlo, emit_sweep, fmt_float, report_directory, Format};
use lazywalk::harness::run::DEFAULT_ACCEPTANCE_FLOOR;
use lazywalk::harness::{load_instance, run_limit, run_montecarlo, run_sweep, InstanceSpec};
use lazywalk::schrodinger::total_variation;
use lazywalk::Error;

/// Displacement interpolations on finite graphs, from the limit of slowed
/// random walks.
#[derive(Debug, Parser)]
#[command(name = "lazywalk", version)]
struct Cli {
    /// Load instances even when the graph hypotheses fail.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse an instance and check its hypotheses.
    Validate { file: PathBuf },
    /// Compute the limit interpolation and its diagnostics.
    Limit {
        file: PathBuf,
        /// Directory for CSV/JSON artifacts; a summary is printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write only one kind of artifact (default: both).
        #[arg(long, value_enum)]
        format: Option<OutFormat>,
    },
    /// Solve the entropic problems over a range of slowing factors.
    Sweep {
        file: PathBuf,
        #[arg(long, requires_all = ["kmax", "kpoints"])]
        kmin: Option<f64>,
        #[arg(long, requires_all = ["kmin", "kpoints"])]
        kmax: Option<f64>,
        #[arg(long, requires_all = ["kmin", "kmax"])]
        kpoints: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Describe the geodesic bridge between two vertices.
    Bridge {
        file: PathBuf,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        /// Also compare with the bridge of the k-slowed walk.
        #[arg(long)]
        k: Option<f64>,
    },
    /// Rejection-sample walk bridges and compare with the limit bridge.
    Montecarlo {
        file: PathBuf,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        k: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
        /// Defaults to the instance's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_ACCEPTANCE_FLOOR)]
        floor: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise and check an output directory.
    Report { dir: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Ok,
    Invalid,
    Unconverged,
}

fn log_grid(kmin: f64, kmax: f64, points: usize) -> anyhow::Result<Vec<f64>> {
    anyhow::ensure!(kmin > 0.0 && kmax >= kmin, "need 0 < kmin <= kmax");
    anyhow::ensure!(points >= 1, "kpoints must be positive");
    if points == 1 {
        return Ok(vec![kmin]);
    }
    let (a, b) = (kmin.log10(), kmax.log10());
    Ok((0..points).map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64)).collect())
}

fn load(file: &PathBuf, force: bool) -> anyhow::Result<InstanceSpec> {
    load_instance(file, force).with_context(|| format!("loading {}", file.display()))
}

fn validate(spec: &InstanceSpec) -> Outcome {
    let h = &spec.hypotheses;
    println!("instance {}: {} vertices, {} edges", spec.name, spec.graph.len(), spec.graph.edges().count());
    let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
    println!("  neighbourhood (~)   {}", mark(h.neighbourhood));
    println!("  distance (d)        {}", mark(h.distance));
    println!("  rates (J)           {}", mark(h.rates));
    println!("  measure (m)         {}", mark(h.measure));
    println!("  max total rate      {}", fmt_float(h.j_bar));
    for f in &h.failures {
        println!("  {f}");
    }
    for t in &spec.tightened {
        println!("  tightened: {t}");
    }
    if h.passed() {
        Outcome::Ok
    } else {
        Outcome::Invalid
    }
}

fn limit(spec: &InstanceSpec, out: Option<PathBuf>, format: Option<OutFormat>) -> anyhow::Result<Outcome> {
    let art = run_limit(spec)?;
    println!("instance {}", art.name);
    println!("W1                 {}", fmt_float(art.w1()));
    println!("integral of speed  {}", fmt_float(art.benamou));
    println!("sinkhorn steps     {}", art.limit.iterations);
    println!("plan:");
    for (x, y, p) in art.interpolation.plan() {
        println!("  {} -> {}  {}", art.names[*x], art.names[*y], fmt_float(*p));
    }
    for w in &art.warnings {
        println!("warning: {w}");
    }
    if let Some(dir) = out {
        let format = match format {
            None => Format::Both,
            Some(OutFormat::Csv) => Format::Csv,
            Some(OutFormat::Json) => Format::Json,
        };
        for path in emit_limit(&art, format, &dir)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(Outcome::Ok)
}

fn sweep(spec: &InstanceSpec, grid: Vec<f64>, out: Option<PathBuf>) -> anyhow::Result<Outcome> {
    let report = run_sweep(spec, &grid)?;
    println!("instance {}  W1 = {}", report.name, fmt_float(report.w1));
    println!("{:>12} {:>6} {:>24} {:>24}", "k", "iters", "TV(plan, limit)", "value - W1");
    for r in &report.rows {
        match &r.error {
            None => println!("{:>12.4e} {:>6} {:>24} {:>24}", r.k, r.iterations, fmt_float(r.tv_plan), fmt_float(r.value_gap)),
            Some(e) => println!("{:>12.4e} {e}", r.k),
        }
    }
    if let Some(s) = report.gap_slope {
        println!("slope of log gap against log log k: {}", fmt_float(s));
    }
    if let Some(dir) = out {
        println!("wrote {}", emit_sweep(&report, &dir)?.display());
    }
    Ok(if report.all_converged() { Outcome::Ok } else { Outcome::Unconverged })
}

fn bridge(spec: &InstanceSpec, source: &str, target: &str, k: Option<f64>) -> anyhow::Result<Outcome> {
    let (x, y) = (spec.vertex(source)?, spec.vertex(target)?);
    let dag = geodesic_dag(x, y, &spec.graph, &spec.metric);
    let stats = chain_statistics(&dag);
    let name = |v: usize| spec.graph.name(v).to_string();
    println!("bridge {source} -> {target}: distance {}", fmt_float(spec.metric.get(x, y)));
    println!("geodesic DAG: {} states, {} transitions, {} chains", dag.len(), dag.edge_count(), stats.chains);
    let nodes: Vec<usize> = dag.nodes().to_vec();
    let fields = BridgeFields::new(dag, &spec.kernel);
    let times = [0.0, 0.25, 0.5, 0.75, 1.0];
    println!("marginals:");
    print!("{:>6}", "t");
    for &v in &nodes {
        print!(" {:>24}", name(v));
    }
    println!();
    for t in times {
        let row = fields.marginal(&t);
        print!("{t:>6}");
        for &v in &nodes {
            print!(" {:>24}", fmt_float(row[v]));
        }
        println!();
    }
    if let Some(k) = k {
        let gen = Generator::new(&spec.kernel, &spec.metric, k)?;
        println!("distance to the bridge of the walk slowed by k = {k}:");
        for t in [0.25, 0.5, 0.75] {
            let finite = bridge_marginal(&gen, x, y, t)?;
            println!("  t = {t:<5} TV {}", fmt_float(total_variation(&finite, &fields.marginal(&t))));
        }
    }
    Ok(Outcome::Ok)
}

#[allow(clippy::too_many_arguments)]
fn montecarlo(
    spec: &InstanceSpec,
    source: &str,
    target: &str,
    k: f64,
    samples: u64,
    seed: Option<u64>,
    floor: f64,
    out: Option<PathBuf>,
) -> anyhow::Result<Outcome> {
    let (x, y) = (spec.vertex(source)?, spec.vertex(target)?);
    let seed = seed.unwrap_or(spec.params.seed);
    let r = run_montecarlo(spec, x, y, k, samples, seed, floor)?;
    println!("{} bridges {source} -> {target} at k = {k} (seed {seed})", r.samples);
    println!("acceptance rate        {}", fmt_float(r.acceptance_rate));
    println!("off-geodesic fraction  {}", fmt_float(r.off_geodesic));
    println!("TV of sequence law     {}", fmt_float(r.tv_sequences));
    println!("chi-square             {} on {} dof", fmt_float(r.chi_square), r.degrees_of_freedom);
    println!("largest |z|            {}", fmt_float(r.max_z));
    println!("TV at t = {} vs limit  {}", r.t, fmt_float(r.tv_marginal_limit));
    println!("TV at t = {} vs walk   {}", r.t, fmt_float(r.tv_marginal_exact));
    for s in r.sequences.iter().take(10) {
        println!("  {:<30} {:>8}  predicted {}", s.states.join(" "), s.count, fmt_float(s.predicted));
    }
    if let Some(dir) = out {
        println!("wrote {}", emit_montecarlo(&r, &dir)?.display());
    }
    Ok(Outcome::Ok)
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let force = cli.force;
    match cli.command {
        Command::Validate { file } => {
            // Load with the gate open so every failed clause gets listed.
            let spec = load(&file, true)?;
            Ok(validate(&spec))
        }
        Command::Limit { file, out, format } => limit(&load(&file, force)?, out, format),
        Command::Sweep { file, kmin, kmax, kpoints, out } => {
            let spec = load(&file, force)?;
            let grid = match (kmin, kmax, kpoints) {
                (Some(a), Some(b), Some(n)) => log_grid(a, b, n)?,
                _ => spec.params.k_grid.clone(),
            };
            sweep(&spec, grid, out)
        }
        Command::Bridge { file, source, target, k } => bridge(&load(&file, force)?, &source, &target, k),
        Command::Montecarlo { file, source, target, k, samples, seed, floor, out } => {
            montecarlo(&load(&file, force)?, &source, &target, k, samples, seed, floor, out)
        }
        Command::Report { dir } => {
            let report = report_directory(&dir)?;
            for line in &report.lines {
                println!("{line}");
            }
            Ok(if report.ok { Outcome::Ok } else { Outcome::Invalid })
        }
    }
}

/// 2 for numerical failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NonConvergence { .. } | Error::Infeasible { .. } | Error::AcceptanceTooLow { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Invalid) => ExitCode::from(1),
        Ok(Outcome::Unconverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
