//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p lazywalk --test acceptance`.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::*;
use lazywalk::bridge::BridgeFields;
use lazywalk::ctmc::{bridge_marginal, endpoint_joint, girsanov_log_density, rng_from_seed, sample_path, Generator};
use lazywalk::displacement::{benamou_value, interior_grid, limit_plan, Interpolation};
use lazywalk::geodesy::geodesic_dag;
use lazywalk::graph::{build_simple_walk, intrinsic_distance, Graph};
use lazywalk::harness::run::spread;
use lazywalk::harness::{load_instance, run_limit, run_limit_exact, run_sweep, InstanceSpec};
use lazywalk::scalar::Scalar;
use lazywalk::schrodinger::{relative_entropy, sinkhorn, total_variation, CouplingTable};
use ndarray::Array2;
use num_rational::BigRational;
use rand::Rng;

fn instance(name: &str) -> InstanceSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("instances").join(format!("{name}.json"));
    load_instance(path, false).expect("bundled instance loads")
}

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn run(id: u32, title: &str, budget: Option<Duration>, check: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = check();
    let elapsed = start.elapsed();
    let in_time = budget.is_none_or(|b| elapsed < b);
    let passed = v.passed && in_time;
    let budget_note = match budget {
        Some(b) if !in_time => format!(", over the {:.0?} budget", b),
        _ => String::new(),
    };
    println!(
        "criterion {id:>2} {} {title}: {} [{:.2} s{budget_note}]",
        if passed { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64()
    );
    passed
}

fn rational_binomial(n: usize, z: usize, t: &BigRational) -> BigRational {
    let one = BigRational::from_usize(1);
    let c = (0..z).fold(BigRational::from_usize(1), |acc, i| acc * BigRational::from_ratio((n - i) as i64, (i + 1) as i64));
    let mut out = c;
    for _ in 0..z {
        out *= t.clone();
    }
    for _ in z..n {
        out *= one.clone() - t.clone();
    }
    out
}

fn binomial_closed_form() -> Verdict {
    let spec = instance("segment");
    let art = run_limit(&spec).unwrap();
    let mut worst: f64 = 0.0;
    for (t, row) in art.grid.iter().zip(&art.marginals) {
        for (z, &v) in row.iter().enumerate() {
            let want = if z <= 3 { binom(3, z as u64) * t.powi(z as i32) * (1.0 - t).powi(3 - z as i32) } else { 0.0 };
            worst = worst.max((v - want).abs());
        }
    }
    let exact = run_limit_exact(&spec).unwrap();
    let zero = BigRational::from_usize(0);
    let exact_ok = exact.grid.iter().zip(&exact.marginals).all(|(t, row)| {
        row.iter().enumerate().all(|(z, v)| *v == if z <= 3 { rational_binomial(3, z, t) } else { zero.clone() })
    });
    verdict(
        worst <= 1e-12 && exact_ok,
        format!("float max error {worst:.2e} over {} grid times, rational mode exact: {exact_ok}", art.grid.len()),
    )
}

fn hypercube_closed_form() -> Verdict {
    let spec = instance("hypercube");
    let art = run_limit(&spec).unwrap();
    let (x, y) = (spec.vertex("000").unwrap(), spec.vertex("111").unwrap());
    let mut worst: f64 = 0.0;
    for (t, row) in art.grid.iter().zip(&art.marginals) {
        for (z, &v) in row.iter().enumerate() {
            let want = t.powf(spec.metric.get(x, z)) * (1.0 - t).powf(spec.metric.get(z, y));
            worst = worst.max((v - want).abs());
        }
    }
    verdict(worst <= 1e-12, format!("max error {worst:.2e} over {} grid times", art.grid.len()))
}

fn complete_graph_closed_form() -> Verdict {
    let spec = instance("k4");
    let art = run_limit(&spec).unwrap();
    let (x, y) = (spec.vertex("a").unwrap(), spec.vertex("b").unwrap());
    let mut worst: f64 = 0.0;
    for (t, row) in art.grid.iter().zip(&art.marginals) {
        for (z, &v) in row.iter().enumerate() {
            let want = if z == x { 1.0 - t } else if z == y { *t } else { 0.0 };
            worst = worst.max((v - want).abs());
        }
    }
    let fields = BridgeFields::new(geodesic_dag(x, y, &spec.graph, &spec.metric), &spec.kernel);
    let mut kernel_worst: f64 = 0.0;
    let mut shape_ok = true;
    for t in [0.1, 0.5, 0.9] {
        let row = fields.jump_kernel(&t, x).unwrap();
        shape_ok &= row.len() == 1 && row[0].0 == y;
        kernel_worst = kernel_worst.max((row[0].1 - 1.0 / (1.0 - t)).abs());
    }
    verdict(
        worst <= 1e-12 && kernel_worst <= 1e-12 && shape_ok,
        format!("flow error {worst:.2e}, bridge kernel error {kernel_worst:.2e} at t = 0.1, 0.5, 0.9"),
    )
}

fn poisson_bridge_rate() -> Verdict {
    let spec = instance("segment");
    let art = run_limit(&spec).unwrap();
    let y = spec.vertex("3").unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for t in &art.grid {
        for z in 0..y {
            let row = art.interpolation.kernel(t, z).unwrap();
            let rate = row.iter().find(|e| e.0 == z + 1).map_or(f64::NAN, |e| e.1);
            let want = spec.metric.get(z, y) / (1.0 - t);
            worst = worst.max((rate - want).abs());
            checked += 1;
        }
    }
    verdict(worst <= 1e-12, format!("max error {worst:.2e} over {checked} (t, z) points"))
}

struct RandomCase {
    w1: f64,
    rate_spread: f64,
    speed_spread: Option<f64>,
    benamou: f64,
}

fn random_cases() -> Vec<RandomCase> {
    let mut out = Vec::new();
    for i in 0..20u64 {
        let mut rng = rng_from_seed(2024, i);
        let n = 6 + (i as usize * 24) / 19;
        let inst = random_instance(&mut rng, n, i % 2 == 1);
        let lp = limit_plan(&inst.graph, &inst.metric, &inst.kernel, &inst.measure, &inst.mu0, &inst.mu1).unwrap();
        let interp = Interpolation::from_coupling(&inst.graph, &inst.metric, &inst.kernel, &lp.coupling);
        let grid = interior_grid(101);
        let rates: Vec<f64> = grid.iter().map(|t| interp.mass_rate(t).unwrap()).collect();
        let speed_spread = inst.unit.then(|| {
            let s: Vec<f64> = grid.iter().map(|t| interp.speed(&inst.metric, t).unwrap()).collect();
            spread(&s)
        });
        out.push(RandomCase {
            w1: lp.transport.value,
            rate_spread: spread(&rates),
            speed_spread,
            benamou: benamou_value(&interp, &inst.metric, 201),
        });
    }
    out
}

fn conservation(cases: &[RandomCase]) -> Verdict {
    let worst_rate = cases.iter().map(|c| c.rate_spread).fold(0.0, f64::max);
    let unit: Vec<f64> = cases.iter().filter_map(|c| c.speed_spread).collect();
    let worst_speed = unit.iter().cloned().fold(0.0, f64::max);
    verdict(
        cases.len() == 20 && worst_rate <= 1e-8 && worst_speed <= 1e-8 && !unit.is_empty(),
        format!(
            "20 instances, worst mass-rate spread {worst_rate:.2e}; {} unit-metric instances, worst speed spread {worst_speed:.2e}",
            unit.len()
        ),
    )
}

fn benamou_brenier(cases: &[RandomCase]) -> Verdict {
    let worst = cases.iter().map(|c| (c.benamou - c.w1).abs()).fold(0.0, f64::max);
    verdict(worst <= 1e-6, format!("worst |∫ speed - W1| = {worst:.2e} over {} instances", cases.len()))
}

fn gamma_convergence() -> Verdict {
    let ks = [1e2, 1e3, 1e4, 1e5];
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["segment", "hypercube"] {
        let spec = instance(name);
        let report = run_sweep(&spec, &ks).unwrap();
        let gaps: Vec<f64> = report.rows.iter().map(|r| r.value_gap).collect();
        ok &= report.all_converged();
        ok &= gaps.iter().all(|&g| g > 0.0);
        ok &= gaps.windows(2).all(|w| w[1] < w[0]);
        let ratios: Vec<f64> = (0..3)
            .map(|i| (gaps[i + 1] / gaps[i]) / (ks[i].ln() / ks[i + 1].ln()))
            .collect();
        ok &= ratios.iter().all(|r| (0.5..=1.0).contains(r));
        let tv = report.rows.last().unwrap().tv_plan;
        ok &= tv <= 1e-3;
        notes.push(format!(
            "{name}: gaps {}, normalised ratios {}, TV at 1e5 {tv:.1e}",
            gaps.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>().join(" > "),
            ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(" ")
        ));
    }
    verdict(ok, notes.join("; "))
}

fn bridge_convergence() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, x, y) in [("triangle", "x", "y"), ("segment", "0", "3")] {
        let spec = instance(name);
        let (x, y) = (spec.vertex(x).unwrap(), spec.vertex(y).unwrap());
        let limit = BridgeFields::new(geodesic_dag(x, y, &spec.graph, &spec.metric), &spec.kernel).marginal(&0.5);
        let tvs: Vec<f64> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|&k| {
                let gen = Generator::new(&spec.kernel, &spec.metric, k).unwrap();
                total_variation(&bridge_marginal(&gen, x, y, 0.5).unwrap(), &limit)
            })
            .collect();
        ok &= tvs.windows(2).all(|w| w[1] < w[0]) && tvs[2] <= 1e-2;
        notes.push(format!("{name}: TV {:.2e} > {:.2e} > {:.2e}", tvs[0], tvs[1], tvs[2]));
    }
    verdict(ok, notes.join("; "))
}

/// The three-vertex instance whose optimal face is a segment.
fn segment_face_oracle() -> f64 {
    let g = Graph::path(3);
    let d = intrinsic_distance(&g).unwrap();
    let (j, m) = build_simple_walk(&g);
    let mu0 = [0.5, 0.5, 0.0];
    let mu1 = [0.0, 0.5, 0.5];
    let lp = limit_plan(&g, &d, &j, &m, &mu0, &mu1).unwrap();
    let reference = brute_geodesic_measure(&g, &j, &m);
    let plan = |s: f64| {
        let mut p = Array2::zeros((3, 3));
        p[[0, 1]] = 0.5 * (1.0 - s);
        p[[1, 2]] = 0.5 * (1.0 - s);
        p[[0, 2]] = 0.5 * s;
        p[[1, 1]] = 0.5 * s;
        p
    };
    let h = |s: f64| relative_entropy(plan(s).iter(), reference.iter());
    // Grid search, then refine on the bracketing cell.
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..8 {
        let step = (hi - lo) / 1000.0;
        let best = (0..=1000).map(|i| lo + step * i as f64).min_by(|a, b| h(*a).total_cmp(&h(*b))).unwrap();
        lo = (best - step).max(0.0);
        hi = (best + step).min(1.0);
    }
    tv_tables(&plan((lo + hi) / 2.0), &lp.coupling.pi)
}

fn oracle_equivalence() -> Verdict {
    let mut sinkhorn_worst: f64 = 0.0;
    let mut limit_worst: f64 = 0.0;
    let mut cases = 0;
    for i in 0..40u64 {
        let mut rng = rng_from_seed(99, i);
        let n = 2 + (i as usize % 3);
        let inst = random_instance(&mut rng, n, i % 2 == 0);
        for k in [1.0, 10.0, 100.0] {
            let gen = Generator::new(&inst.kernel, &inst.metric, k).unwrap();
            let reference = endpoint_joint(&gen, &inst.measure).table;
            let ours = sinkhorn(&reference, &inst.mu0, &inst.mu1, 1e-13, 100_000).unwrap();
            let mask = Array2::from_elem((n, n), true);
            let oracle = newton_entropic(&reference, &mask, &inst.mu0, &inst.mu1);
            sinkhorn_worst = sinkhorn_worst.max(tv_tables(&ours.coupling.pi, &oracle));
        }
        let lp = limit_plan(&inst.graph, &inst.metric, &inst.kernel, &inst.measure, &inst.mu0, &inst.mu1).unwrap();
        let mut face = Array2::from_elem((n, n), false);
        for v in optimal_vertices(inst.metric.table(), &inst.mu0, &inst.mu1) {
            face.zip_mut_with(&v, |f, &p| *f |= p > 1e-12);
        }
        let reference = brute_geodesic_measure(&inst.graph, &inst.kernel, &inst.measure);
        let oracle = newton_entropic(&reference, &face, &inst.mu0, &inst.mu1);
        limit_worst = limit_worst.max(CouplingTable { pi: oracle }.total_variation(&lp.coupling));
        cases += 1;
    }
    let segment = segment_face_oracle();

    let mut metric_ok = true;
    let mut graphs = 0;
    for i in 0..200u64 {
        let mut rng = rng_from_seed(7, i);
        let n = rng.gen_range(2..=8);
        let (g, _) = lazywalk::graph::tighten_edge_lengths(&random_graph(&mut rng, n, n, i % 2 == 0)).unwrap();
        let d = intrinsic_distance(&g).unwrap();
        for x in 0..n {
            for y in 0..n {
                if x == y {
                    metric_ok &= d.get(x, y) == 0.0;
                    continue;
                }
                metric_ok &= d.get(x, y) == brute_distance(&g, x, y);
                let dag = geodesic_dag(x, y, &g, &d);
                let (nodes, edges) = brute_dag(&g, x, y);
                metric_ok &= dag.nodes().iter().copied().collect::<std::collections::BTreeSet<_>>() == nodes;
                metric_ok &= dag.edges().into_iter().collect::<std::collections::BTreeSet<_>>() == edges;
            }
        }
        graphs += 1;
    }
    verdict(
        sinkhorn_worst <= 1e-6 && limit_worst <= 1e-6 && segment <= 1e-6 && metric_ok,
        format!(
            "{cases} instances on <= 4 vertices: sinkhorn TV {sinkhorn_worst:.1e}, limit plan TV {limit_worst:.1e}; \
             segment face TV {segment:.1e}; distances and geodesic DAGs exact on {graphs} graphs: {metric_ok}"
        ),
    )
}

const GOLDEN: [&str; 4] = ["segment", "hypercube", "k4", "weighted"];

fn fokker_planck() -> Verdict {
    let mut worst: f64 = 0.0;
    for name in GOLDEN {
        worst = worst.max(run_limit(&instance(name)).unwrap().fokker_planck);
    }
    verdict(worst <= 1e-6, format!("worst residual {worst:.2e} with step 1e-4 on {} instances", GOLDEN.len()))
}

fn intermediate_optimality() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for name in GOLDEN {
        for r in run_limit(&instance(name)).unwrap().intermediate {
            worst = worst.max(r.gap.abs());
            count += 1;
        }
    }
    verdict(worst <= 1e-8, format!("worst cost gap {worst:.2e} over {count} (instance, s, t) cases"))
}

fn girsanov_identity() -> Verdict {
    let spec = instance("spread");
    let k = 10.0;
    let samples = 100_000;
    let gen = Generator::from_kernel(&spec.kernel);
    let total = spec.measure.total();
    let mut rng = rng_from_seed(12, 0);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let mut u = rng.gen::<f64>() * total;
        let start = (0..spec.graph.len())
            .find(|&x| {
                u -= spec.measure.get(x);
                u < 0.0
            })
            .unwrap_or(spec.graph.len() - 1);
        let path = sample_path(&gen, start, &mut rng).path;
        let w = girsanov_log_density(&path, &spec.kernel, k, &spec.graph, &spec.metric).unwrap().exp();
        sum += w;
        sum_sq += w * w;
    }
    let mean = sum / samples as f64;
    let se = ((sum_sq / samples as f64 - mean * mean) / samples as f64).sqrt();
    verdict(
        (mean - 1.0).abs() <= 3.0 * se,
        format!("mean {mean:.5} with standard error {se:.1e} over {samples} samples at k = {k}"),
    )
}

fn main() {
    let second = Some(Duration::from_secs(1));
    let mut results = vec![
        run(1, "binomial flow on the segment", second, binomial_closed_form),
        run(2, "hypercube flow", second, hypercube_closed_form),
        run(3, "complete graph flow and bridge kernel", None, complete_graph_closed_form),
        run(4, "Poisson bridge intensity", None, poisson_bridge_rate),
    ];
    let start = Instant::now();
    let cases = random_cases();
    let shared = start.elapsed();
    results.push(run(5, "conservation of the mass-displacement rate", Some(Duration::from_secs(60) - shared), || {
        conservation(&cases)
    }));
    results.push(run(6, "Benamou-Brenier value", None, || benamou_brenier(&cases)));
    results.push(run(7, "entropic values approach W1", Some(Duration::from_secs(60)), gamma_convergence));
    results.push(run(8, "bridge convergence", Some(Duration::from_secs(30)), bridge_convergence));
    results.push(run(9, "oracle equivalence", None, oracle_equivalence));
    results.push(run(10, "evolution equation residual", None, fokker_planck));
    results.push(run(11, "intermediate couplings are optimal", None, intermediate_optimality));
    results.push(run(12, "Monte Carlo density identity", None, girsanov_identity));
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
