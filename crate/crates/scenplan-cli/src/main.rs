//! `scenplan` — plan trajectories against sampled multimodal obstacle
//! forecasts, size the sample sets that back the risk certificate, and
//! validate the results empirically.
//!
//! Exit codes: 0 success, 2 infeasible problem, 3 empirical violation above
//! the risk level, 4 configuration/usage error, 1 any other failure.

use clap::{Parser, Subcommand};
use scenplan::bounds::{min_samples, scenario_confidence, BoundQuery};
use scenplan::config::{
    load_config, load_plan_file, run_certify, run_plan, run_validate, sample_requirement,
    OutputConfig, PredictionSource, ScenarioConfig,
};
use scenplan::planner::cluster_forecasts;
use scenplan::prediction::{generate_stream, load_samples, save_samples};
use scenplan::rng::purpose;
use scenplan::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "scenplan",
    version,
    about = "Chance-constrained trajectory planning against multimodal forecasts",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the sample count certifying a risk level, plus the achieved
    /// confidence.
    Bound {
        /// Risk level (violation probability bound), in (0, 1).
        #[arg(long)]
        eps: f64,
        /// Confidence bound (probability the certificate fails), in (0, 1).
        #[arg(long)]
        beta: f64,
        /// Continuous decision variables of the certified program.
        #[arg(long)]
        nc: u64,
        /// Binary decision variables of the certified program.
        #[arg(long)]
        nb: u64,
    },
    /// Run a config end to end and write plan artifacts.
    Plan {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Directory for artifacts (created if missing). Config output
        /// paths resolve here; missing ones default to plan.json,
        /// trajectory.csv, polytopes.csv.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Estimate a written plan's violation fraction on fresh samples.
    Validate {
        /// Plan file written by `plan`.
        #[arg(long)]
        plan: PathBuf,
        /// Config supplying the fresh-sample source and the risk level.
        #[arg(long)]
        config: PathBuf,
        /// Fresh draws (generator sources only; default 100000).
        #[arg(long)]
        samples: Option<usize>,
        /// Where to write the report JSON.
        #[arg(long, default_value = "violation.json")]
        report: PathBuf,
    },
    /// Re-run the pipeline on independent draws and report how often the
    /// risk level is exceeded.
    Certify {
        #[arg(long)]
        config: PathBuf,
        /// Independent pipeline runs.
        #[arg(long)]
        runs: usize,
        /// Fresh samples per run.
        #[arg(long, default_value_t = 10_000)]
        fresh: usize,
        /// Where to write the report JSON.
        #[arg(long, default_value = "confidence.json")]
        report: PathBuf,
    },
    /// Draw forecast samples from a config's generator into a sample file.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Output sample file.
        #[arg(long)]
        out: PathBuf,
        /// Draw count (defaults to the config's certificate requirement).
        #[arg(long)]
        samples: Option<usize>,
        /// Substream: `plan` or `validate` (fresh, disjoint from planning).
        #[arg(long, default_value = "plan")]
        stream: String,
    },
    /// Diagnostic: cluster a config's forecasts and print per-cluster
    /// sizes, centroids, and probabilities.
    Cluster {
        #[arg(long)]
        config: PathBuf,
        /// Draw count (generator sources; defaults to the requirement).
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn main() -> ExitCode {
    // Route usage errors to the config-error exit code (clap's default, 2,
    // is taken by "infeasible"). Help and version requests surface here as
    // errors too; they print to stdout and succeed.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible { .. } => 2,
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::DimensionMismatch(_)
        | Error::HorizonMismatch(_)
        | Error::MissingLabel { .. }
        | Error::DegenerateClustering(_)
        | Error::SampleCountOverflow { .. } => 4,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Bound { eps, beta, nc, nb } => cmd_bound(eps, beta, nc, nb),
        Command::Plan { config, out_dir } => cmd_plan(&config, &out_dir),
        Command::Validate {
            plan,
            config,
            samples,
            report,
        } => cmd_validate(&plan, &config, samples, &report),
        Command::Certify {
            config,
            runs,
            fresh,
            report,
        } => cmd_certify(&config, runs, fresh, &report),
        Command::Gen {
            config,
            out,
            samples,
            stream,
        } => cmd_gen(&config, &out, samples, &stream),
        Command::Cluster { config, samples } => cmd_cluster(&config, samples),
    }
}

fn cmd_bound(eps: f64, beta: f64, nc: u64, nb: u64) -> Result<ExitCode, Error> {
    let query = BoundQuery::new(eps, beta, nc, nb)?;
    let n = min_samples(&query)?;
    let achieved = scenario_confidence(n, eps, nc, nb);
    println!("N: {n}");
    println!("confidence: {achieved:.6e} (target beta: {beta})");
    Ok(ExitCode::SUCCESS)
}

/// Fills in default artifact names and resolves them under `out_dir`.
fn resolve_outputs(config: &mut ScenarioConfig, out_dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let defaults = OutputConfig {
        plan: Some("plan.json".into()),
        trajectory: Some("trajectory.csv".into()),
        polytopes: Some("polytopes.csv".into()),
        report: None,
    };
    let chosen = OutputConfig {
        plan: config.output.plan.clone().or(defaults.plan),
        trajectory: config.output.trajectory.clone().or(defaults.trajectory),
        polytopes: config.output.polytopes.clone().or(defaults.polytopes),
        report: config.output.report.clone(),
    };
    let under = |p: Option<String>| p.map(|p| out_dir.join(p).display().to_string());
    config.output = OutputConfig {
        plan: under(chosen.plan),
        trajectory: under(chosen.trajectory),
        polytopes: under(chosen.polytopes),
        report: under(chosen.report),
    };
    Ok(())
}

fn config_base(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf()
}

fn cmd_plan(config_path: &Path, out_dir: &Path) -> Result<ExitCode, Error> {
    let mut config = load_config(config_path)?;
    resolve_outputs(&mut config, out_dir)?;
    let base = config_base(config_path);
    match run_plan(&config, &base) {
        Ok(outcome) => {
            println!("status: optimal");
            println!("objective: {}", outcome.result.objective);
            println!(
                "samples: {} drawn ({} required)",
                outcome.samples_drawn, outcome.requirement.required
            );
            println!(
                "search: {} nodes, {} LP iterations",
                outcome.result.stats.nodes, outcome.result.stats.lp_iterations
            );
            if let Some(path) = &config.output.plan {
                println!("plan: {path}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(Error::Infeasible { blocking }) => {
            let diag = serde_json::json!({
                "status": "infeasible",
                "blocking": blocking
                    .iter()
                    .map(|b| serde_json::json!({"t": b.t, "ov": b.ov, "cluster": b.cluster}))
                    .collect::<Vec<_>>(),
            });
            println!("{}", serde_json::to_string_pretty(&diag).expect("static json"));
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e),
    }
}

fn cmd_validate(
    plan_path: &Path,
    config_path: &Path,
    samples: Option<usize>,
    report_path: &Path,
) -> Result<ExitCode, Error> {
    let config = load_config(config_path)?;
    let plan_file = load_plan_file(plan_path)?;
    let base = config_base(config_path);
    let report = run_validate(&config, &plan_file.plan, samples, &base)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serialization");
    text.push('\n');
    std::fs::write(report_path, text)
        .map_err(|e| Error::io(report_path.display().to_string(), e))?;
    println!(
        "violation: {} of {} fresh samples ({})",
        report.violations, report.fresh_samples, report.violation_fraction
    );
    println!("report: {}", report_path.display());
    if report.violation_fraction > config.risk.epsilon {
        eprintln!(
            "violation fraction {} exceeds the risk level {}",
            report.violation_fraction, config.risk.epsilon
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_certify(
    config_path: &Path,
    runs: usize,
    fresh: usize,
    report_path: &Path,
) -> Result<ExitCode, Error> {
    let config = load_config(config_path)?;
    let report = run_certify(&config, runs, fresh)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serialization");
    text.push('\n');
    std::fs::write(report_path, text)
        .map_err(|e| Error::io(report_path.display().to_string(), e))?;
    println!(
        "runs: {} ({} feasible, {} infeasible)",
        report.runs, report.feasible_runs, report.infeasible_runs
    );
    println!(
        "exceeding eps={}: {} of {} feasible runs ({})",
        report.epsilon, report.exceed_count, report.feasible_runs, report.exceed_fraction
    );
    println!("cover bound held: {}", report.cover_bound_held);
    println!("report: {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(
    config_path: &Path,
    out: &Path,
    samples: Option<usize>,
    stream: &str,
) -> Result<ExitCode, Error> {
    let config = load_config(config_path)?;
    let PredictionSource::Generator { spec, samples: cfg_samples } = &config.prediction else {
        return Err(Error::Config(
            "`gen` needs a generator-sourced config".into(),
        ));
    };
    let stream_tag = match stream {
        "plan" => purpose::PLAN,
        "validate" => purpose::VALIDATE,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown stream `{other}` (expected `plan` or `validate`)"
            )))
        }
    };
    let n = match samples.or(*cfg_samples) {
        Some(n) => n,
        None => sample_requirement(&config, None)?.required as usize,
    };
    let preds = generate_stream(spec, n, stream_tag)?;
    save_samples(&preds, out)?;
    println!(
        "wrote {} samples x {} steps x {} vehicles to {}",
        preds.num_samples,
        preds.horizon,
        preds.num_ovs,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_cluster(config_path: &Path, samples: Option<usize>) -> Result<ExitCode, Error> {
    let config = load_config(config_path)?;
    let base = config_base(config_path);
    let clustering = config.clustering.clone().ok_or_else(|| {
        Error::Config("the `cluster` diagnostic needs a `clustering` section".into())
    })?;
    let preds = match &config.prediction {
        PredictionSource::Generator { spec, samples: cfg_samples } => {
            let n = match samples.or(*cfg_samples) {
                Some(n) => n,
                None => sample_requirement(&config, None)?.required as usize,
            };
            generate_stream(spec, n, purpose::PLAN)?
        }
        PredictionSource::File { path } => load_samples(&base.join(path))?,
    };
    let grouped = cluster_forecasts(&preds, &clustering)?;
    println!(
        "{} samples x {} steps x {} vehicles",
        preds.num_samples, preds.horizon, preds.num_ovs
    );
    for (_, ov) in &grouped {
        println!("vehicle {}:", ov.ov);
        for (k, centroid) in ov.centroids.iter().enumerate() {
            let label = ov
                .labels
                .as_ref()
                .map(|l| format!(" label {}", l[k]))
                .unwrap_or_default();
            let prob = ov
                .probabilities
                .as_ref()
                .map(|p| format!(" p={}", p[k]))
                .unwrap_or_default();
            println!(
                "  cluster {}{label}: {} samples, final-step centroid ({}, {}){prob}",
                k + 1,
                ov.sizes[k],
                centroid[0],
                centroid[1]
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
