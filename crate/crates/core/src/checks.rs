//! Randomized property suites behind `gmcnn check` and the acceptance test.
//!
//! Trial `t` of a run with seed `s` draws everything from `stream(s, t)`, so a
//! failing trial replays alone. Failures keep the offending matrices for
//! [`SuiteReport::dump`].

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::displacement::{
    check_dimension_kronecker, check_dimension_sum, check_dimension_transpose, check_distance_kronecker,
    check_distance_product, check_distance_transpose, displacement_dimension, displacement_of,
    group_matrix_class_basis, ldr_build, ldr_class_basis, numerical_rank, DimensionReport,
};
use crate::error::Result;
use crate::group::{ElemId, FiniteGroup, HomogeneousSpace, Subgroup};
use crate::group_matrix::{
    condition_number, densify, gm_from_coeffs, gm_inverse, gm_kronecker_in, gm_multiply, gm_transpose, group_diagonal, is_group_matrix, restrict_to_subgroup, Dense,
    DEFAULT_TOL, MAX_INVERSE_CONDITION,
};
use crate::layers::{
    equivariance_error, right_translation_actions, DenseReadout, ErrorSpec, GMConvLayer, GMPoolLayer,
    HomSpaceConvLayer, IntLattice, Lattice, Layer, PRelu, PaddedConvLayer, PaddedWindow, PlaneLattice, PoolMode, Signal,
    StrideLayer,
};
use crate::layers::{padded_conv_displacement_bound, PaddingBound};
use crate::sampling::{random_dense, random_vec, stream};

/// Stored counterexamples per check; later failures are only counted.
const MAX_COUNTEREXAMPLES: usize = 5;

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    /// Worst observed value (deviation, error, or violation count).
    pub worst: f64,
    pub threshold: f64,
    pub trials: usize,
    pub failures: usize,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub check: String,
    pub trial: usize,
    pub seed: u64,
    pub note: String,
    #[serde(skip)]
    pub matrices: Vec<(String, Dense)>,
    /// Files written by [`SuiteReport::dump`].
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub groups: Vec<String>,
    pub seed: u64,
    pub trials: usize,
    pub passed: bool,
    pub checks: Vec<CheckLine>,
    pub counterexamples: Vec<Counterexample>,
    pub elapsed_ms: f64,
}

impl SuiteReport {
    fn new(suite: &str, groups: Vec<String>, seed: u64, trials: usize) -> Self {
        SuiteReport {
            suite: suite.into(),
            groups,
            seed,
            trials,
            passed: true,
            checks: Vec::new(),
            counterexamples: Vec::new(),
            elapsed_ms: 0.0,
        }
    }

    fn absorb(&mut self, acc: Accumulator) {
        self.passed &= acc.line.passed;
        self.checks.push(acc.line);
        self.counterexamples.extend(acc.examples);
    }

    /// Writes `report.json` plus one GMAT file per counterexample matrix.
    pub fn dump(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, ce) in self.counterexamples.iter_mut().enumerate() {
            ce.files.clear();
            for (name, m) in &ce.matrices {
                let file = format!("ce{i}_{}_trial{}_{name}.gmat", ce.check.replace(' ', "_"), ce.trial);
                crate::io::save_matrix(m, &dir.join(&file))?;
                ce.files.push(file);
            }
        }
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Per-check accumulation of trial outcomes.
struct Accumulator {
    line: CheckLine,
    examples: Vec<Counterexample>,
    seed: u64,
    /// `true` when larger values are worse and compared with `<=`.
    upper: bool,
}

impl Accumulator {
    fn upper(name: &str, threshold: f64, seed: u64) -> Self {
        Accumulator {
            line: CheckLine {
                name: name.into(),
                passed: true,
                worst: 0.0,
                threshold,
                trials: 0,
                failures: 0,
                detail: String::new(),
            },
            examples: Vec::new(),
            seed,
            upper: true,
        }
    }

    /// Boolean check: `worst` counts failures.
    fn flag(name: &str, seed: u64) -> Self {
        let mut a = Accumulator::upper(name, 0.0, seed);
        a.upper = false;
        a
    }

    fn value(&mut self, trial: usize, v: f64, note: impl FnOnce() -> String, mats: impl FnOnce() -> Vec<(String, Dense)>) {
        self.line.trials += 1;
        self.line.worst = self.line.worst.max(v);
        // NaN must fail
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(v <= self.line.threshold) {
            self.fail(trial, note(), mats());
        }
    }

    fn ok(&mut self, trial: usize, ok: bool, note: impl FnOnce() -> String, mats: impl FnOnce() -> Vec<(String, Dense)>) {
        self.line.trials += 1;
        if !ok {
            self.line.worst += 1.0;
            self.fail(trial, note(), mats());
        }
    }

    fn skip(&mut self) {
        self.line.trials += 1;
    }

    fn fail(&mut self, trial: usize, note: String, matrices: Vec<(String, Dense)>) {
        self.line.passed = false;
        self.line.failures += 1;
        if self.examples.len() < MAX_COUNTEREXAMPLES {
            self.examples.push(Counterexample {
                check: self.line.name.clone(),
                trial,
                seed: self.seed,
                note,
                matrices,
                files: Vec::new(),
            });
        }
    }

    fn merge(&mut self, other: Accumulator) {
        self.line.trials += other.line.trials;
        self.line.failures += other.line.failures;
        self.line.passed &= other.line.passed;
        self.line.worst = if other.upper {
            self.line.worst.max(other.line.worst)
        } else {
            self.line.worst + other.line.worst
        };
        let room = MAX_COUNTEREXAMPLES.saturating_sub(self.examples.len());
        self.examples.extend(other.examples.into_iter().take(room));
    }
}

/// Runs `trial` for every index in parallel and folds the accumulators in
/// trial order.
fn run_trials<F>(names: &[(&str, Option<f64>)], seed: u64, trials: usize, trial: F) -> Vec<Accumulator>
where
    F: Fn(usize, &mut [Accumulator]) + Sync,
{
    let fresh = || -> Vec<Accumulator> {
        names
            .iter()
            .map(|(n, t)| match t {
                Some(t) => Accumulator::upper(n, *t, seed),
                None => Accumulator::flag(n, seed),
            })
            .collect()
    };
    let parts: Vec<Vec<Accumulator>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut acc = fresh();
            trial(t, &mut acc);
            acc
        })
        .collect();
    let mut total = fresh();
    for part in parts {
        for (a, b) in total.iter_mut().zip(part) {
            a.merge(b);
        }
    }
    total
}

fn finish(mut report: SuiteReport, accs: Vec<Accumulator>, start: Instant) -> SuiteReport {
    for a in accs {
        report.absorb(a);
    }
    report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    report
}

fn gm(group: &Arc<FiniteGroup>, rng: &mut impl Rng) -> Result<Dense> {
    Ok(densify(&gm_from_coeffs(group, &random_vec(rng, group.order()))?))
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Relative max-entry difference.
fn rel_diff(a: &Dense, b: &Dense) -> f64 {
    max_abs((a - b).iter().copied()) / max_abs(b.iter().copied()).max(f64::MIN_POSITIVE)
}

/// Closure of group matrices under transpose, inverse, product and Kronecker
/// product (over `group × group`): each operation's densified result is a
/// group matrix and agrees with plain dense arithmetic.
pub fn suite_prop1(name: &str, group: &Arc<FiniteGroup>, trials: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let square = Arc::new(FiniteGroup::direct_product(group, group)?);
    let checks = [
        ("transpose", Some(DEFAULT_TOL)),
        ("inverse", Some(DEFAULT_TOL)),
        ("product", Some(DEFAULT_TOL)),
        ("kronecker", Some(DEFAULT_TOL)),
        ("agrees with dense arithmetic", Some(1e-12)),
        ("inverse residual / cond", Some(1e-8)),
    ];
    let skipped = std::sync::atomic::AtomicUsize::new(0);
    let accs = run_trials(&checks, seed, trials, |t, acc| {
        let mut r = stream(seed, t as u64);
        let m = gm_from_coeffs(group, &random_vec(&mut r, group.order())).unwrap();
        let n = gm_from_coeffs(group, &random_vec(&mut r, group.order())).unwrap();
        let (dm, dn) = (densify(&m), densify(&n));
        let dev = |x: &Dense, g: &Arc<FiniteGroup>| is_group_matrix(x, g, DEFAULT_TOL).unwrap().deviation;
        let mats = || vec![("m".to_string(), dm.clone()), ("n".to_string(), dn.clone())];

        let tr = densify(&gm_transpose(&m));
        acc[0].value(t, dev(&tr, group), || "transpose is not a group matrix".into(), mats);
        let pr = densify(&gm_multiply(&m, &n).unwrap());
        acc[2].value(t, dev(&pr, group), || "product is not a group matrix".into(), mats);
        let kr = densify(&gm_kronecker_in(&m, &n, &square).unwrap());
        acc[3].value(t, dev(&kr, &square), || "Kronecker product is not a group matrix".into(), mats);
        let agree = rel_diff(&tr, &dm.transpose())
            .max(rel_diff(&pr, &(&dm * &dn)))
            .max(rel_diff(&kr, &dm.kronecker(&dn)));
        acc[4].value(t, agree, || "differs from dense arithmetic".into(), mats);

        let cond = condition_number(&dm);
        if cond > MAX_INVERSE_CONDITION {
            skipped.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            acc[1].skip();
            acc[5].skip();
            return;
        }
        match gm_inverse(&m) {
            Ok(inv) => {
                let di = densify(&inv);
                acc[1].value(t, dev(&di, group), || "inverse is not a group matrix".into(), mats);
                let n = group.order();
                let residual = max_abs((&di * &dm - Dense::identity(n, n)).iter().copied());
                acc[5].value(t, residual / cond, || format!("cond {cond:e}"), mats);
            }
            Err(e) => {
                acc[1].ok(t, false, || e.to_string(), mats);
                acc[5].skip();
            }
        }
    });
    let mut report = finish(SuiteReport::new("prop1", vec![name.into()], seed, trials), accs, start);
    report.checks[1].detail = format!("{} ill-conditioned draws skipped", skipped.into_inner());
    Ok(report)
}

/// Random matrix near the group matrices: `GM + ε·noise` with ε drawn from
/// {0, small, large} so both the zero and generic cases appear.
fn near_gm(group: &Arc<FiniteGroup>, rng: &mut impl Rng) -> Result<Dense> {
    let n = group.order();
    let eps = [0.0, 1e-3, 0.1, 1.0][rng.random_range(0..4)];
    Ok(gm(group, rng)? + random_dense(rng, n, n) * eps)
}

/// Distance bounds: transpose (equality), product over G, Kronecker over G × H.
pub fn suite_prop2(
    names: (&str, &str),
    g: &Arc<FiniteGroup>,
    h: &Arc<FiniteGroup>,
    trials: usize,
    seed: u64,
) -> Result<SuiteReport> {
    let start = Instant::now();
    let product = Arc::new(FiniteGroup::direct_product(g, h)?);
    let checks = [("transpose equality", Some(DEFAULT_TOL)), ("product bound", None), ("kronecker bound", None)];
    let accs = run_trials(&checks, seed, trials, |t, acc| {
        let mut r = stream(seed, t as u64);
        let m = near_gm(g, &mut r).unwrap();
        let m2 = near_gm(g, &mut r).unwrap();
        let n = near_gm(h, &mut r).unwrap();
        let tr = check_distance_transpose(&m, g).unwrap();
        acc[0].value(
            t,
            (tr.lhs - tr.rhs).abs(),
            || format!("dist(M) = {} vs dist(Mᵀ) = {}", tr.lhs, tr.rhs),
            || vec![("m".into(), m.clone())],
        );
        let pr = check_distance_product(&m, &m2, g).unwrap();
        acc[1].ok(
            t,
            pr.holds,
            || format!("{} > {}", pr.lhs, pr.rhs),
            || vec![("m".into(), m.clone()), ("n".into(), m2.clone())],
        );
        let kr = check_distance_kronecker(&m, g, &n, h, &product).unwrap();
        acc[2].ok(
            t,
            kr.holds,
            || format!("{} > {}", kr.lhs, kr.rhs),
            || vec![("m".into(), m.clone()), ("n".into(), n.clone())],
        );
    });
    Ok(finish(
        SuiteReport::new("prop2", vec![names.0.into(), names.1.into()], seed, trials),
        accs,
        start,
    ))
}

/// One case of the displacement-dimension battery.
#[derive(Debug, Clone, Serialize)]
pub struct BatteryCase {
    pub label: String,
    pub report: DimensionReport,
}

/// Matrix units `E_ij`.
fn unit(n: usize, i: usize, j: usize) -> Dense {
    let mut e = Dense::zeros(n, n);
    e[(i, j)] = 1.0;
    e
}

/// The fixed class battery for the dimension rules on `group`, with
/// Kronecker products taken against C2.
pub fn prop3_battery(group: &Arc<FiniteGroup>, seed: u64) -> Result<Vec<BatteryCase>> {
    let n = group.order();
    let mut r = stream(seed, 0);
    let c2 = Arc::new(FiniteGroup::cyclic(2)?);
    let product = Arc::new(FiniteGroup::direct_product(group, &c2)?);
    let gm_class = group_matrix_class_basis(group);
    let ldr1 = ldr_class_basis(group, &[0])?;
    let ldr2 = ldr_class_basis(group, &[0, n - 1])?;
    let ldr_other = ldr_class_basis(group, &[1])?;
    let single = vec![unit(n, 0, 1)];
    let random: Vec<Dense> = (0..3).map(|_| random_dense(&mut r, n, n)).collect();
    let gm_c2 = group_matrix_class_basis(&c2);
    let id_c2 = vec![Dense::identity(2, 2)];

    let mut cases = Vec::new();
    let mut push = |label: &str, report: DimensionReport| {
        cases.push(BatteryCase {
            label: label.into(),
            report,
        })
    };
    for (label, class) in [
        ("transpose: group matrices", &gm_class),
        ("transpose: LDR(1)", &ldr1),
        ("transpose: LDR(2)", &ldr2),
        ("transpose: single entry", &single),
        ("transpose: random", &random),
    ] {
        push(label, check_dimension_transpose(class, group)?);
    }
    push("sum: group matrices + LDR(1)", check_dimension_sum(&gm_class, &ldr1, group)?);
    push("sum: LDR(1) at e + LDR(1) elsewhere", check_dimension_sum(&ldr1, &ldr_other, group)?);
    push("sum: LDR(1) + single entry", check_dimension_sum(&ldr1, &single, group)?);
    push("sum: random + random", check_dimension_sum(&random[..1], &random[1..], group)?);
    push(
        "kronecker: group matrices ⊗ C2 group matrices",
        check_dimension_kronecker(&gm_class, group, &gm_c2, &c2, &product)?,
    );
    push(
        "kronecker: LDR(1) ⊗ identity",
        check_dimension_kronecker(&ldr1, group, &id_c2, &c2, &product)?,
    );
    push(
        "kronecker: LDR(1) ⊗ C2 group matrices",
        check_dimension_kronecker(&ldr1, group, &gm_c2, &c2, &product)?,
    );
    Ok(cases)
}

/// Displacement-dimension rules on the fixed battery; `trials` is unused.
pub fn suite_prop3(name: &str, group: &Arc<FiniteGroup>, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let cases = prop3_battery(group, seed)?;
    let mut report = SuiteReport::new("prop3", vec![name.into()], seed, cases.len());
    for (i, case) in cases.into_iter().enumerate() {
        let mut acc = Accumulator::flag(&case.label, seed);
        let r = &case.report;
        acc.ok(i, r.holds, || format!("measured {} vs bound {}", r.measured, r.bound), Vec::new);
        acc.line.detail = match r.product_rule_bound {
            Some(p) => format!("measured {}, bound {}, product rule {}", r.measured, r.bound, p),
            None => format!("measured {}, bound {}", r.measured, r.bound),
        };
        report.absorb(acc);
    }
    report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

fn random_subgroup(group: &Arc<FiniteGroup>, rng: &mut impl Rng) -> Result<Subgroup> {
    let n = group.order();
    let count = rng.random_range(0..=2);
    let gens: Vec<ElemId> = (0..count).map(|_| rng.random_range(0..n)).collect();
    Subgroup::from_generators(group.clone(), &gens)
}

/// Subgroup restriction: B_h restricted to H is the native H-diagonal, and a
/// G-convolution with kernel supported on H restricts to the H-convolution.
pub fn suite_lemma1(name: &str, group: &Arc<FiniteGroup>, trials: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = [("diagonal restriction", None), ("convolution restriction", Some(0.0))];
    let accs = run_trials(&checks, seed, trials, |t, acc| {
        let mut r = stream(seed, t as u64);
        let h = random_subgroup(group, &mut r).unwrap();
        let hg = h.as_group();
        for &g in h.members() {
            let restricted = restrict_to_subgroup(&group_diagonal(group, g).unwrap(), &h).unwrap();
            let native = group_diagonal(hg, h.local_id(g).unwrap()).unwrap();
            acc[0].ok(
                t,
                restricted.col_of_row() == native.col_of_row(),
                || format!("B_{} on subgroup {:?}", group.label(g), h.members()),
                || vec![("restricted".into(), restricted.to_dense()), ("native".into(), native.to_dense())],
            );
        }
        let local: Vec<f64> = random_vec(&mut r, h.order());
        let mut phi = vec![0.0; group.order()];
        for (l, v) in local.iter().enumerate() {
            phi[h.parent_id(l)] = *v;
        }
        let full = densify(&gm_from_coeffs(group, &phi).unwrap());
        let m = h.members();
        let restricted = Dense::from_fn(m.len(), m.len(), |i, j| full[(m[i], m[j])]);
        let native = densify(&gm_from_coeffs(hg, &local).unwrap());
        acc[1].value(
            t,
            max_abs((&restricted - &native).iter().copied()),
            || format!("subgroup {:?}", h.members()),
            || vec![("restricted".into(), restricted.clone()), ("native".into(), native.clone())],
        );
    });
    Ok(finish(SuiteReport::new("lemma1", vec![name.into()], seed, trials), accs, start))
}

/// Displacement characterization: D(M) = 0 exactly for group matrices and
/// non-zero for perturbed ones; LDR constructions have rank(D) equal to the
/// span of their free vectors; LDR(r) classes have dimension |G|·r.
pub fn suite_displacement(name: &str, group: &Arc<FiniteGroup>, trials: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let n = group.order();
    let checks = [
        ("group matrix => D = 0", None),
        ("D = 0 => group matrix", None),
        ("LDR rank = span dimension", None),
    ];
    let accs = run_trials(&checks, seed, trials, |t, acc| {
        let mut r = stream(seed, t as u64);
        let m = gm(group, &mut r).unwrap();
        let d = displacement_of(&m, group).unwrap();
        acc[0].ok(t, d.is_zero(), || format!("rank {}", d.rank), || vec![("m".into(), m.clone())]);

        // converse, by contraposition: moving any entry off its pattern makes D non-zero
        let mut p = m.clone();
        let (i, j) = (r.random_range(0..n), r.random_range(0..n));
        p[(i, j)] += r.random_range(0.1..1.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
        let d = displacement_of(&p, group).unwrap();
        let gm_check = is_group_matrix(&p, group, DEFAULT_TOL).unwrap();
        // on C1/C2-like tiny groups a single entry can still be a group matrix
        acc[1].ok(
            t,
            d.is_zero() == gm_check.is_group_matrix,
            || format!("D zero: {}, group matrix: {}", d.is_zero(), gm_check.is_group_matrix),
            || vec![("m".into(), p.clone())],
        );

        // the rank identity needs at least one constrained column
        if n < 2 {
            acc[2].skip();
            return;
        }
        let rr = r.random_range(1..=n.min(4) - 1);
        let mut positions: Vec<ElemId> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(positions.as_mut_slice(), &mut r);
        let b = random_vec(&mut r, n);
        // reuse a direction sometimes so the span is smaller than r
        let mut vecs: Vec<Vec<f64>> = Vec::new();
        for k in 0..rr {
            if k > 0 && r.random_bool(0.3) {
                let scale = r.random_range(0.5..2.0);
                let v: Vec<f64> = vecs[0].iter().map(|x| x * scale).collect();
                vecs.push(v);
            } else {
                vecs.push(random_vec(&mut r, n));
            }
        }
        let a: Vec<(ElemId, Vec<f64>)> = positions.iter().take(rr).copied().zip(vecs.clone()).collect();
        let m = ldr_build(group, &b, &a).unwrap();
        let rank = displacement_of(&m, group).unwrap().rank;
        let stacked = Dense::from_fn(n, rr, |i, j| vecs[j][i]);
        let (span, _) = numerical_rank(&stacked, 1e-9);
        acc[2].ok(
            t,
            rank == span,
            || format!("rank(D) = {rank}, span = {span}"),
            || vec![("m".into(), m.clone())],
        );
    });
    let mut report = finish(SuiteReport::new("displacement", vec![name.into()], seed, trials), accs, start);
    let mut dims = Accumulator::flag("LDR(r) class dimension = |G|·r", seed);
    let mut seen = Vec::new();
    for rr in 1..=n.min(3) {
        let positions: Vec<ElemId> = (0..rr).collect();
        let d = displacement_dimension(&ldr_class_basis(group, &positions)?, group)?;
        seen.push(format!("r={rr}: {d}"));
        dims.ok(rr, d == n * rr, || format!("r = {rr}: {d} != {}", n * rr), Vec::new);
    }
    dims.line.detail = seen.join(", ");
    report.absorb(dims);
    Ok(report)
}

/// Padding bounds for the 1-D window `{0..size}` and the `size × size` plane
/// window with a radius-`radius` kernel.
pub fn ddim_cases(size: usize, radius: usize, seed: u64) -> Result<Vec<(String, PaddingBound)>> {
    let mut r = stream(seed, 0);
    let line: Vec<i64> = (0..size as i64).collect();
    let w1 = PaddedWindow::new(IntLattice, &line, &IntLattice.ball(radius))?;
    let plane: Vec<(i64, i64)> = line.iter().flat_map(|&a| line.iter().map(move |&b| (a, b))).collect();
    let w2 = PaddedWindow::new(PlaneLattice, &plane, &PlaneLattice.ball(radius))?;
    Ok(vec![
        (format!("Z window {size}, radius {radius}"), padded_conv_displacement_bound(&w1, 8, &mut r)),
        (
            format!("Z×Z window {size}×{size}, radius {radius}"),
            padded_conv_displacement_bound(&w2, 2, &mut r),
        ),
    ])
}

pub fn suite_ddim(size: usize, radius: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut report = SuiteReport::new("ddim", vec!["Z".into(), "Z×Z".into()], seed, 1);
    for (label, b) in ddim_cases(size, radius, seed)? {
        let mut acc = Accumulator::flag(&label, seed);
        acc.ok(0, b.holds(), || format!("{b:?}"), Vec::new);
        acc.line.detail = format!(
            "dim_D {} <= {}, DR {} <= {}",
            b.measured_dim, b.dim_bound, b.measured_rank, b.rank_bound
        );
        report.absorb(acc);
    }
    report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

/// Relative tolerance of the gradient suite.
pub const GRADCHECK_TOL: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
const GRAD_FLOOR: f64 = 1e-6;
/// Samples closer than this to a PReLU or max-pool switch are redrawn.
const KINK_MARGIN: f64 = 1e-3;

fn random_signal(r: &mut impl Rng, c: usize, n: usize) -> Signal {
    (0..c).map(|_| random_vec(r, n)).collect()
}

/// Worst relative difference between the analytic and central-difference
/// gradients of `⟨dy, layer(x)⟩` over all parameters and inputs.
pub fn gradient_error(layer: &mut dyn Layer, x: &Signal, dy: &Signal) -> Result<f64> {
    let loss = |l: &dyn Layer, x: &Signal| -> Result<f64> {
        let y = l.forward(x)?;
        Ok(y.iter().flatten().zip(dy.iter().flatten()).map(|(a, b)| a * b).sum())
    };
    let grads = layer.backward(x, dy)?;
    let h = 1e-5;
    let rel = |num: f64, ana: f64| (num - ana).abs() / num.abs().max(ana.abs()).max(GRAD_FLOOR);
    let mut worst: f64 = 0.0;
    for p in 0..layer.params().len() {
        let orig = layer.params()[p];
        layer.params_mut()[p] = orig + h;
        let up = loss(layer, x)?;
        layer.params_mut()[p] = orig - h;
        let down = loss(layer, x)?;
        layer.params_mut()[p] = orig;
        worst = worst.max(rel((up - down) / (2.0 * h), grads.dparams[p]));
    }
    for c in 0..x.len() {
        for i in 0..x[c].len() {
            let mut xp = x.clone();
            xp[c][i] += h;
            let up = loss(layer, &xp)?;
            xp[c][i] -= 2.0 * h;
            let down = loss(layer, &xp)?;
            worst = worst.max(rel((up - down) / (2.0 * h), grads.dx[c][i]));
        }
    }
    Ok(worst)
}

fn away_from_zero(r: &mut impl Rng, c: usize, n: usize) -> Signal {
    (0..c)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let v: f64 = r.random_range(KINK_MARGIN..1.0);
                    if r.random_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect()
        })
        .collect()
}

/// Input for max pooling whose per-coset maxima are separated by the margin.
fn separated(r: &mut impl Rng, pool: &GMPoolLayer, c: usize, n: usize) -> Signal {
    loop {
        let x = random_signal(r, c, n);
        let ok = x.iter().all(|xc| {
            pool.partition().cosets().iter().all(|coset| {
                let mut v: Vec<f64> = coset.iter().map(|&g| xc[g]).collect();
                v.sort_by(|a, b| b.total_cmp(a));
                v.len() < 2 || v[0] - v[1] > KINK_MARGIN
            })
        });
        if ok {
            return x;
        }
    }
}

pub const GRADCHECK_LAYERS: [&str; 10] = [
    "conv", "conv+full", "conv+ldr", "pool mean", "pool max", "stride", "prelu", "readout", "padded", "homspace",
];

/// Every layer type against central differences on `trials` random instances.
pub fn suite_gradcheck(name: &str, group: &Arc<FiniteGroup>, trials: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let n = group.order();
    let checks: Vec<(&str, Option<f64>)> = GRADCHECK_LAYERS.iter().map(|l| (*l, Some(GRADCHECK_TOL))).collect();
    // the subgroup generated by the first generator (proper unless G is cyclic)
    let h = Subgroup::from_generators(group.clone(), &group.generators()[..1])?;
    let space = HomogeneousSpace::new(&h);
    let line: Vec<i64> = (0..6).collect();
    let window = PaddedWindow::new(IntLattice, &line, &IntLattice.ball(1))?;
    let accs = run_trials(&checks, seed, trials, |t, acc| {
        let mut r = stream(seed, t as u64);
        let mut run = |i: usize, layer: &mut dyn Layer, x: Signal, r: &mut crate::sampling::SeededRng| {
            let (oc, on) = layer.out_shape();
            let dy = random_signal(r, oc, on);
            let e = gradient_error(layer, &x, &dy).unwrap();
            acc[i].value(t, e, || format!("relative error {e:e}"), || {
                vec![("x".into(), Dense::from_fn(x.len(), x[0].len(), |a, b| x[a][b]))]
            });
        };
        for (i, spec) in [ErrorSpec::None, ErrorSpec::Full, ErrorSpec::Ldr(2.min(n))].into_iter().enumerate() {
            let mut l = GMConvLayer::new(group, 1, 2, 2, spec, &mut r).unwrap();
            for p in l.error_params_mut() {
                *p = r.random_range(-0.5..0.5);
            }
            let x = random_signal(&mut r, 2, n);
            run(i, &mut l, x, &mut r);
        }
        let mut mean = GMPoolLayer::new(&h, PoolMode::Mean, 2);
        let x = random_signal(&mut r, 2, n);
        run(3, &mut mean, x, &mut r);
        let mut max = GMPoolLayer::new(&h, PoolMode::Max, 2);
        let x = separated(&mut r, &max, 2, n);
        run(4, &mut max, x, &mut r);
        let conv = GMConvLayer::new(group, 1, 2, 2, ErrorSpec::None, &mut r).unwrap();
        let mut stride = StrideLayer::new(&h, conv).unwrap();
        let x = random_signal(&mut r, 2, n);
        run(5, &mut stride, x, &mut r);
        let mut prelu = PRelu::new(2, n);
        for p in prelu.params_mut() {
            *p = r.random_range(-0.5..0.5);
        }
        let x = away_from_zero(&mut r, 2, n);
        run(6, &mut prelu, x, &mut r);
        let mut readout = DenseReadout::new((2, n), 3, &mut r);
        let x = random_signal(&mut r, 2, n);
        run(7, &mut readout, x, &mut r);
        let mut padded = PaddedConvLayer::new(window.clone(), 2, 2, &mut r);
        let x = random_signal(&mut r, 2, line.len());
        run(8, &mut padded, x, &mut r);
        let mut hs = HomSpaceConvLayer::new(&space, 1, 2, 2, &mut r);
        let x = random_signal(&mut r, 2, space.len());
        run(9, &mut hs, x, &mut r);
    });
    Ok(finish(SuiteReport::new("gradcheck", vec![name.into()], seed, trials), accs, start))
}

/// Brute-force group convolution `y_o(h) = Σ_i Σ_{g∈G} φ_oi(g) x_i(g⁻¹h)`
/// with φ zero off the support.
pub fn gconv_oracle(group: &FiniteGroup, support: &[ElemId], weights: &[f64], x: &Signal, out_ch: usize) -> Signal {
    let n = group.order();
    let in_ch = x.len();
    let ns = support.len();
    (0..out_ch)
        .map(|o| {
            let mut y = vec![0.0; n];
            for (i, xi) in x.iter().enumerate() {
                let mut phi = vec![0.0; n];
                for (s, &g) in support.iter().enumerate() {
                    phi[g] = weights[(o * in_ch + i) * ns + s];
                }
                for (hh, yv) in y.iter_mut().enumerate() {
                    for (g, &p) in phi.iter().enumerate() {
                        *yv += p * xi[group.mul(group.inv(g), hh)];
                    }
                }
            }
            y
        })
        .collect()
}

/// Error-free GMConv layers: translation equivariance and agreement with the
/// brute-force convolution.
pub fn suite_equiv(name: &str, group: &Arc<FiniteGroup>, trials: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let n = group.order();
    let actions = right_translation_actions(group);
    let checks = [("equivariance", Some(1e-10)), ("convolution oracle", Some(1e-12))];
    let accs = run_trials(&checks, seed, trials, |t, acc| {
        let mut r = stream(seed, t as u64);
        let k = r.random_range(0..=group.diameter().max(1));
        let (ci, co) = (r.random_range(1..=3), r.random_range(1..=3));
        let layer = GMConvLayer::new(group, k, ci, co, ErrorSpec::None, &mut r).unwrap();
        let x = random_signal(&mut r, ci, n);
        let kernel = || {
            vec![(
                "pair00".to_string(),
                layer.pair_matrix(0, 0),
            )]
        };
        let e = equivariance_error(|s| layer.forward(s), &actions, std::slice::from_ref(&x)).unwrap();
        acc[0].value(t, e, || format!("radius {k}, {ci}->{co} channels"), kernel);
        let y = layer.forward(&x).unwrap();
        let oracle = gconv_oracle(group, layer.support(), layer.weights(), &x, co);
        let scale = max_abs(oracle.iter().flatten().copied()).max(f64::MIN_POSITIVE);
        let diff = max_abs(y.iter().flatten().zip(oracle.iter().flatten()).map(|(a, b)| a - b));
        acc[1].value(t, diff / scale, || format!("radius {k}, {ci}->{co} channels"), kernel);
    });
    Ok(finish(SuiteReport::new("equiv", vec![name.into()], seed, trials), accs, start))
}

/// Suite names accepted by [`run_suite`].
pub const SUITES: [&str; 8] = ["prop1", "prop2", "prop3", "lemma1", "displacement", "ddim", "gradcheck", "equiv"];

/// Options shared by the suite dispatcher.
#[derive(Debug, Clone)]
pub struct SuiteOptions {
    /// One group, or two for `prop2`.
    pub groups: Vec<String>,
    pub trials: usize,
    pub seed: u64,
    /// `ddim` window size and kernel radius.
    pub window: usize,
    pub radius: usize,
}

pub fn run_suite(suite: &str, opts: &SuiteOptions) -> Result<SuiteReport> {
    use crate::dsl::parse_group;
    use crate::error::Error;
    let group = |i: usize| -> Result<(String, Arc<FiniteGroup>)> {
        let spec = opts
            .groups
            .get(i)
            .ok_or_else(|| Error::Config(format!("suite {suite} needs {} group(s)", i + 1)))?;
        Ok((spec.clone(), Arc::new(parse_group(spec)?)))
    };
    match suite {
        "prop1" => {
            let (s, g) = group(0)?;
            suite_prop1(&s, &g, opts.trials, opts.seed)
        }
        "prop2" => {
            let (s, g) = group(0)?;
            let (t, h) = group(1)?;
            suite_prop2((&s, &t), &g, &h, opts.trials, opts.seed)
        }
        "prop3" => {
            let (s, g) = group(0)?;
            suite_prop3(&s, &g, opts.seed)
        }
        "lemma1" => {
            let (s, g) = group(0)?;
            suite_lemma1(&s, &g, opts.trials, opts.seed)
        }
        "displacement" => {
            let (s, g) = group(0)?;
            suite_displacement(&s, &g, opts.trials, opts.seed)
        }
        "ddim" => suite_ddim(opts.window, opts.radius, opts.seed),
        "gradcheck" => {
            let (s, g) = group(0)?;
            suite_gradcheck(&s, &g, opts.trials, opts.seed)
        }
        "equiv" => {
            let (s, g) = group(0)?;
            suite_equiv(&s, &g, opts.trials, opts.seed)
        }
        other => Err(Error::Config(format!(
            "unknown suite '{other}', expected one of {}",
            SUITES.join(", ")
        ))),
    }
}
