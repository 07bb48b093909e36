use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use gmcnn::checks::{run_suite, SuiteOptions, SuiteReport};
use gmcnn::displacement::{
    check_dimension_transpose, check_distance_product, check_distance_transpose, displacement_dimension,
    displacement_of, distance_to_gm, group_matrix_class_basis, ldr_class_basis,
};
use gmcnn::dsl::parse_group;
use gmcnn::group_matrix::{is_group_matrix, DEFAULT_TOL};
use gmcnn::io::load_matrix;
use gmcnn::layers::ErrorSpec;
use gmcnn::nn::{run_experiment, write_outputs, ExperimentConfig};
use gmcnn::{Error, FiniteGroup};

#[derive(Parser)]
#[command(name = "gmcnn", version, about = "Group-matrix convolutions and displacement analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Order, generators, word-distance histogram and ball sizes.
    GroupInfo {
        #[arg(long)]
        group: String,
    },
    /// Distance to the group matrices and displacement structure of a matrix file.
    Analyze {
        /// CSV or GMAT matrix.
        matrix: PathBuf,
        #[arg(long)]
        group: String,
        /// Declared classes to measure: `gm` or `ldr(r)`. Repeatable.
        #[arg(long = "class", default_values_t = ["gm".to_string()])]
        classes: Vec<String>,
    },
    /// Run a property suite; exits 1 if any check fails.
    Check {
        /// prop1, prop2, prop3, lemma1, displacement, ddim, gradcheck or equiv.
        suite: String,
        /// Group spec; give it twice for prop2.
        #[arg(long)]
        group: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes the report and counterexample matrices here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// ddim window size.
        #[arg(long, default_value_t = 8)]
        window: usize,
        /// ddim kernel radius.
        #[arg(long, default_value_t = 1)]
        radius: usize,
    },
    /// Train the model described by a JSON experiment config.
    Train {
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GroupInfo { group } => group_info(&group, cli.format),
        Command::Analyze { matrix, group, classes } => analyze(&matrix, &group, &classes, cli.format),
        Command::Check {
            suite,
            group,
            trials,
            seed,
            out,
            window,
            radius,
        } => {
            let opts = SuiteOptions {
                groups: group,
                trials,
                seed,
                window,
                radius,
            };
            check(&suite, &opts, out.as_deref(), cli.format)
        }
        Command::Train { config, out, seed } => train(&config, out, seed, cli.format),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    if !text.ends_with('\n') {
        let _ = out.write_all(b"\n");
    }
}

fn group_info(spec: &str, format: Format) -> Result<bool, Error> {
    let g = parse_group(spec)?;
    let mut histogram = vec![0usize; g.diameter() + 1];
    for &d in g.word_dists() {
        histogram[d] += 1;
    }
    let gens: Vec<String> = g.generators().iter().map(|&s| g.label(s)).collect();
    let balls = g.ball_sizes();
    match format {
        Format::Json => emit(&serde_json::to_string_pretty(&json!({
            "group": spec,
            "order": g.order(),
            "abelian": g.is_abelian(),
            "generators": gens,
            "diameter": g.diameter(),
            "word_distance_histogram": histogram,
            "ball_sizes": balls,
        }))?),
        Format::Csv => {
            let mut s = String::from("k,elements_at_distance,ball_size\n");
            for (k, (h, b)) in histogram.iter().zip(&balls).enumerate() {
                s.push_str(&format!("{k},{h},{b}\n"));
            }
            emit(&s);
        }
        Format::Text => {
            emit(&format!(
                "group {spec}\norder {}\nabelian {}\ngenerators {}\ndiameter {}\nword distances {:?}\nball sizes {:?}",
                g.order(),
                g.is_abelian(),
                gens.join(" "),
                g.diameter(),
                histogram,
                balls
            ));
        }
    }
    Ok(true)
}

fn class_basis(g: &Arc<FiniteGroup>, class: &str) -> Result<Vec<gmcnn::Dense>, Error> {
    if class == "gm" {
        return Ok(group_matrix_class_basis(g));
    }
    match ErrorSpec::parse(class)? {
        ErrorSpec::Ldr(r) => {
            let positions: Vec<usize> = g.word_ball(g.diameter()).into_iter().take(r).collect();
            ldr_class_basis(g, &positions)
        }
        _ => Err(Error::Config(format!("unknown class '{class}', expected gm or ldr(r)"))),
    }
}

fn analyze(path: &Path, spec: &str, classes: &[String], format: Format) -> Result<bool, Error> {
    let g = Arc::new(parse_group(spec)?);
    let m = load_matrix(path)?;
    let proj = distance_to_gm(&m, &g)?;
    let d = displacement_of(&m, &g)?;
    let gm = is_group_matrix(&m, &g, DEFAULT_TOL)?;
    let mut dims = Vec::new();
    let mut prop3 = Vec::new();
    for class in classes {
        let basis = class_basis(&g, class)?;
        dims.push(json!({"class": class, "dim_d": displacement_dimension(&basis, &g)?}));
        prop3.push(json!({"class": class, "transpose": check_dimension_transpose(&basis, &g)?}));
    }
    let transpose = check_distance_transpose(&m, &g)?;
    let product = check_distance_product(&m, &m, &g)?;
    let report = json!({
        "group": spec,
        "distance": proj.distance,
        "coefficients": proj.projection.coeffs(),
        "is_group_matrix": gm.is_group_matrix,
        "deviation": gm.deviation,
        "displacement_rank": d.rank,
        "rank_tol": d.rank_tol,
        "dim_d": dims,
        "prop2": {"transpose": transpose, "product_with_self": product},
        "prop3": prop3,
    });
    match format {
        Format::Json => emit(&serde_json::to_string_pretty(&report)?),
        Format::Csv => {
            let mut s = String::from("key,value\n");
            s.push_str(&format!("distance,{}\ndisplacement_rank,{}\n", proj.distance, d.rank));
            for v in &dims {
                s.push_str(&format!("dim_d {},{}\n", v["class"].as_str().unwrap_or(""), v["dim_d"]));
            }
            emit(&s);
        }
        Format::Text => {
            let mut s = format!(
                "distance {:.6e}\ngroup matrix {} (deviation {:.3e})\ndisplacement rank {}\n",
                proj.distance, gm.is_group_matrix, gm.deviation, d.rank
            );
            for v in &dims {
                s.push_str(&format!("dim_D {} = {}\n", v["class"].as_str().unwrap_or(""), v["dim_d"]));
            }
            s.push_str(&format!("transpose distance equal: {}\n", transpose.holds));
            emit(&s);
        }
    }
    Ok(true)
}

fn suite_text(r: &SuiteReport) -> String {
    let mut s = format!(
        "{} [{}] seed {} trials {}: {}\n",
        r.suite,
        r.groups.join(", "),
        r.seed,
        r.trials,
        if r.passed { "PASS" } else { "FAIL" }
    );
    for c in &r.checks {
        s.push_str(&format!(
            "  {} {}: worst {:.3e} (threshold {:e}), {} failures / {}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.worst,
            c.threshold,
            c.failures,
            c.trials
        ));
        if !c.detail.is_empty() {
            s.push_str(&format!("; {}", c.detail));
        }
        s.push('\n');
    }
    for ce in &r.counterexamples {
        s.push_str(&format!("  counterexample {} trial {} seed {}: {}\n", ce.check, ce.trial, ce.seed, ce.note));
    }
    s
}

fn check(suite: &str, opts: &SuiteOptions, out: Option<&Path>, format: Format) -> Result<bool, Error> {
    let mut opts = opts.clone();
    // `--group C6,C4` is accepted as shorthand for two groups
    opts.groups = opts
        .groups
        .iter()
        .flat_map(|g| g.split(',').map(str::trim).map(String::from).collect::<Vec<_>>())
        .collect();
    let mut report = run_suite(suite, &opts)?;
    if !report.passed {
        let dir = out
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(format!("counterexamples-{suite}-{}", opts.seed)));
        report.dump(&dir)?;
        eprintln!("counterexamples written to {}", dir.display());
    } else if let Some(dir) = out {
        report.dump(dir)?;
    }
    match format {
        Format::Json => emit(&serde_json::to_string_pretty(&report)?),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["suite", "check", "passed", "worst", "threshold", "failures", "trials"])?;
            for c in &report.checks {
                w.write_record([
                    report.suite.clone(),
                    c.name.clone(),
                    c.passed.to_string(),
                    c.worst.to_string(),
                    c.threshold.to_string(),
                    c.failures.to_string(),
                    c.trials.to_string(),
                ])?;
            }
            emit(&String::from_utf8_lossy(&w.into_inner().map_err(|e| Error::Format(e.to_string()))?));
        }
        Format::Text => emit(&suite_text(&report)),
    }
    Ok(report.passed)
}

fn train(path: &Path, out: Option<PathBuf>, seed: Option<u64>, format: Format) -> Result<bool, Error> {
    let text = fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(path.file_stem().unwrap_or_default()));
    let (net, outcome, report) = run_experiment(&cfg)?;
    write_outputs(&dir, &net, &outcome, &report)?;
    match format {
        Format::Json => emit(&serde_json::to_string_pretty(&report)?),
        Format::Csv => {
            let mut s = String::from("key,value\n");
            s.push_str(&format!(
                "parameter_count,{}\nepochs_run,{}\nfinal_train_loss,{}\ntest_loss,{}\n",
                report.parameter_count, report.epochs_run, report.final_train_loss, report.test_loss
            ));
            emit(&s);
        }
        Format::Text => {
            let eq = report
                .equivariance_error
                .map_or("n/a".to_string(), |e| format!("{e:.3e}"));
            let mut s = format!(
                "parameters {}\nepochs {}\ntrain loss {:.6e}\nval loss {:.6e}\ntest loss {:.6e}\nequivariance error {eq}\n",
                report.parameter_count,
                report.epochs_run,
                report.final_train_loss,
                report.final_val_loss,
                report.test_loss
            );
            if let Some(rows) = &report.sweep {
                for r in rows {
                    s.push_str(&format!(
                        "sweep level {} model {}: equivariance {:.3e}, test loss {:.6e}\n",
                        r.level, r.model, r.equivariance_error, r.test_loss
                    ));
                }
            }
            s.push_str(&format!("outputs in {}\n", dir.display()));
            emit(&s);
        }
    }
    Ok(true)
}
