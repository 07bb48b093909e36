//! Acceptance criteria. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use gmcnn::checks::{
    ddim_cases, prop3_battery, suite_displacement, suite_equiv, suite_gradcheck, suite_lemma1, suite_prop1,
    suite_prop2, SuiteReport,
};
use gmcnn::displacement::{displacement_dimension, ldr_class_basis};
use gmcnn::dsl::parse_group;
use gmcnn::layers::{ErrorSpec, GMConvLayer, GMPoolLayer, Layer, PoolMode};
use gmcnn::nn::{run_equivariance_sweep, run_experiment, write_sweep_csv, ExperimentConfig, SweepConfig};
use gmcnn::sampling::{random_vec, rng};
use gmcnn::{FiniteGroup, Subgroup};

const TRIALS: usize = 1000;
const SEED: u64 = 0;
const GROUPS: [&str; 5] = ["C8", "D4", "S3", "C4xC4", "C3:inv:C2"];

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn group(spec: &str) -> Arc<FiniteGroup> {
    Arc::new(parse_group(spec).unwrap_or_else(|e| panic!("{spec}: {e}")))
}

/// Folds suite reports: passes iff all pass, detail lists failing checks.
fn fold(reports: &[SuiteReport]) -> Outcome {
    let mut failed = Vec::new();
    for r in reports {
        for c in r.checks.iter().filter(|c| !c.passed) {
            failed.push(format!(
                "{} [{}] {}: {} failures, worst {:e} {}",
                r.suite,
                r.groups.join(","),
                c.name,
                c.failures,
                c.worst,
                c.detail
            ));
        }
    }
    let worst = |name: &str| {
        reports
            .iter()
            .flat_map(|r| &r.checks)
            .filter(|c| c.name == name)
            .map(|c| c.worst)
            .fold(0.0, f64::max)
    };
    if failed.is_empty() {
        let names: Vec<&str> = reports[0].checks.iter().map(|c| c.name.as_str()).collect();
        let summary: Vec<String> = names.iter().map(|n| format!("{n} worst {:.1e}", worst(n))).collect();
        (true, summary.join("; "))
    } else {
        (false, failed.join(" | "))
    }
}

fn within(limit: Duration, start: Instant, (ok, detail): Outcome) -> Outcome {
    let t = start.elapsed();
    if t > limit {
        (false, format!("took {t:.1?}, limit {limit:?}; {detail}"))
    } else {
        (ok, detail)
    }
}

fn exact_equivariance() -> Outcome {
    let start = Instant::now();
    let reports: Vec<_> = GROUPS
        .iter()
        .map(|s| suite_equiv(s, &group(s), TRIALS, SEED).unwrap())
        .collect();
    within(Duration::from_secs(30), start, fold(&reports))
}

fn closure() -> Outcome {
    let start = Instant::now();
    let reports: Vec<_> = GROUPS
        .iter()
        .map(|s| suite_prop1(s, &group(s), TRIALS, SEED).unwrap())
        .collect();
    let (ok, detail) = fold(&reports);
    let skipped: Vec<String> = reports.iter().map(|r| r.checks[1].detail.clone()).collect();
    within(Duration::from_secs(60), start, (ok, format!("{detail}; inverse: {}", skipped.join(", "))))
}

fn distance_bounds() -> Outcome {
    let start = Instant::now();
    let pairs = [("C6", "C4"), ("C8", "C2"), ("D4", "S3"), ("C4xC4", "C2"), ("C3:inv:C2", "C3")];
    let reports: Vec<_> = pairs
        .iter()
        .map(|&(a, b)| suite_prop2((a, b), &group(a), &group(b), TRIALS, SEED).unwrap())
        .collect();
    within(Duration::from_secs(60), start, fold(&reports))
}

fn characterization() -> Outcome {
    let mut reports: Vec<_> = GROUPS
        .iter()
        .map(|s| suite_displacement(s, &group(s), TRIALS, SEED).unwrap())
        .collect();
    let (mut ok, mut detail) = fold(&reports);
    let mut dims = Vec::new();
    for (spec, r) in [("C8", 1), ("D4", 2), ("C12", 1), ("C4xC4", 3)] {
        let g = group(spec);
        let positions: Vec<usize> = (0..r).collect();
        let d = displacement_dimension(&ldr_class_basis(&g, &positions).unwrap(), &g).unwrap();
        let expected = g.order() * r;
        ok &= d == expected;
        dims.push(format!("(|G|={}, r={r}) -> {d} (expected {expected})", g.order()));
    }
    detail.push_str(&format!("; LDR dims {}", dims.join(", ")));
    reports.clear();
    (ok, detail)
}

fn dimension_rules() -> Outcome {
    let mut ok = true;
    let mut violations = Vec::new();
    let mut cases = 0;
    for spec in ["C8", "D4", "S3", "C4"] {
        for case in prop3_battery(&group(spec), SEED).unwrap() {
            cases += 1;
            if !case.report.holds {
                ok = false;
                violations.push(format!(
                    "{spec} {}: measured {} > bound {} (product rule {:?})",
                    case.label, case.report.measured, case.report.bound, case.report.product_rule_bound
                ));
            }
        }
    }
    if ok {
        (true, format!("{cases} cases, zero violations"))
    } else {
        (false, format!("{} of {cases} cases violate: {}", violations.len(), violations.join(" | ")))
    }
}

fn padding_bound() -> Outcome {
    let start = Instant::now();
    let cases = ddim_cases(8, 1, SEED).unwrap();
    let expected = [(6, 2), (324, 36)];
    let mut ok = true;
    let mut detail = Vec::new();
    for ((label, b), (dim_bound, rank_bound)) in cases.iter().zip(expected) {
        ok &= b.dim_bound == dim_bound && b.rank_bound == rank_bound && b.holds();
        detail.push(format!(
            "{label}: dim_D {} <= {}, DR {} <= {}",
            b.measured_dim, b.dim_bound, b.measured_rank, b.rank_bound
        ));
    }
    within(Duration::from_secs(120), start, (ok, detail.join("; ")))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let reports = vec![suite_gradcheck("D4", &group("D4"), 100, SEED).unwrap()];
    within(Duration::from_secs(60), start, fold(&reports))
}

fn config(group: &str, seed: u64, error: &str, kind: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{"group": "{group}", "seed": {seed},
            "architecture": [{{"type": "conv", "k": 1, "channels": 1, "error": "{error}"}}],
            "task": {{"kind": "{kind}", "samples": 128, "sigma": 0.3, "rank": 1}},
            "train": {{"max_epochs": 2000}}}}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

fn learning() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for spec in ["C8", "C4xC4"] {
        let (_, _, report) = run_experiment(&config(spec, 0, "none", "exact_gconv_target")).unwrap();
        ok &= report.final_train_loss < 1e-8;
        detail.push(format!("(a) {spec} MSE {:.1e}", report.final_train_loss));
    }
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5 {
        let kind = "perturbed_gconv_target";
        let (_, _, gm) = run_experiment(&config("C8", seed, "none", kind)).unwrap();
        let (_, _, ldr) = run_experiment(&config("C8", seed, "ldr(1)", kind)).unwrap();
        wins += usize::from(ldr.test_loss < gm.test_loss);
        pairs.push(format!("{:.3}/{:.3}", ldr.test_loss, gm.test_loss));
    }
    ok &= wins >= 4;
    detail.push(format!("(b) LDR below GM in {wins}/5 seeds (ldr/gm {})", pairs.join(" ")));
    let mut counts = Vec::new();
    for n in 3..=6 {
        let g = group(&format!("C{n}xC{n}"));
        let layer = GMConvLayer::new(&g, 1, 2, 3, ErrorSpec::None, &mut rng(0)).unwrap();
        ok &= layer.weights_per_pair() == 9 && layer.params().len() == 9 * 6;
        counts.push(layer.weights_per_pair().to_string());
    }
    detail.push(format!("(c) per-pair parameters on C3..C6 squared: {}", counts.join(",")));
    within(Duration::from_secs(600), start, (ok, detail.join("; ")))
}

fn sweep() -> Outcome {
    let start = Instant::now();
    let cfg = config("C8", 0, "none", "perturbed_gconv_target");
    let levels = vec![0.0, 0.1, 0.3, 0.6];
    let s = SweepConfig {
        levels: levels.clone(),
        models: vec!["none".into(), "full".into()],
    };
    let rows = run_equivariance_sweep(&cfg, &s).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for r in &rows {
        ok &= match r.model.as_str() {
            "none" => r.equivariance_error <= 1e-10,
            _ => r.level == 0.0 || r.equivariance_error > 0.0,
        };
        detail.push(format!("{}@{}: {:.1e}", r.model, r.level, r.equivariance_error));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&path, &rows).unwrap();
    let lines = std::fs::read_to_string(&path).unwrap().lines().count();
    ok &= lines == levels.len() + 1;
    detail.push(format!("csv rows {}", lines - 1));
    within(Duration::from_secs(300), start, (ok, detail.join(", ")))
}

fn pooling() -> Outcome {
    let c4 = FiniteGroup::cyclic(4).unwrap();
    let g = Arc::new(FiniteGroup::direct_product(&c4, &c4).unwrap());
    let h = Subgroup::from_generators(g.clone(), &[8, 2]).unwrap();
    let pool = GMPoolLayer::new(&h, PoolMode::Mean, 1);
    let x = vec![random_vec(&mut rng(1), 16)];
    let y = pool.forward(&x).unwrap();
    let mut dev: f64 = 0.0;
    for (local, &hid) in h.members().iter().enumerate() {
        let (row, col) = (hid / 4, hid % 4);
        let block = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(a, b)| x[0][(row + a) * 4 + col + b]);
        dev = dev.max((y[0][local] - block.iter().sum::<f64>() / 4.0).abs());
    }
    let restriction: Vec<SuiteReport> = GROUPS
        .iter()
        .map(|s| suite_lemma1(s, &group(s), 200, SEED).unwrap())
        .collect();
    let (ok, detail) = fold(&restriction);
    (ok && dev == 0.0, format!("block-mean deviation {dev:e}; {detail}"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("exact equivariance", exact_equivariance),
        ("group-matrix closure", closure),
        ("distance bounds", distance_bounds),
        ("displacement characterization", characterization),
        ("displacement dimension rules", dimension_rules),
        ("padding bound", padding_bound),
        ("gradients", gradients),
        ("learning behavior", learning),
        ("equivariance sweep", sweep),
        ("pooling and stride", pooling),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = run();
        failures += usize::from(!ok);
        println!(
            "criterion {:>2} {:<30} {} ({:.1?}) {detail}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed()
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
