use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ptl::config::FitConfig;
use ptl::data::Standardizer;
use ptl::harness::{emit_r2, emit_summary, replication_seed, EvalConfig};
use ptl::simgen::generate;
use ptl::{
    emit_results, evaluate_real, fit_ptl, run_experiment, Error, EstimatorKind, Example,
    ExperimentSpec, Format, SimConfig, SourceEstimator,
};

#[derive(Debug, Parser)]
#[command(name = "ptl", version, about = "Profiled transfer learning for sparse linear regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte-Carlo comparison on a simulated design.
    Simulate(SimulateArgs),
    /// Fit the transfer estimator to CSV datasets named in a config file.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated two-fold out-of-sample R² on CSV datasets.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "lasso,translasso,ptl")]
        estimators: String,
    },
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    example: u8,
    /// Target sample size.
    #[arg(long)]
    n: usize,
    /// Source sample size.
    #[arg(long = "N")]
    n_source: usize,
    #[arg(long, default_value_t = 500)]
    p: usize,
    #[arg(long, default_value_t = 40)]
    s: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 6.0)]
    h: f64,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "lasso,translasso,ptl")]
    estimators: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Estimator used for every source inside PTL.
    #[arg(long, default_value = "lasso-cv")]
    source_estimator: String,
    /// Shared support size for example 2.
    #[arg(long)]
    common_support: Option<usize>,
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    zero_delta: bool,
    /// Output path; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the generated ground truth next to the output.
    #[arg(long)]
    dump_truth: bool,
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn simulate(args: SimulateArgs) -> Result<(), Error> {
    let sim = SimConfig {
        example: Example::try_from(args.example)?,
        n: args.n,
        n_source: args.n_source,
        p: args.p,
        k: args.k,
        s: args.s,
        h: args.h,
        seed: args.seed,
        common_support: args.common_support,
        noiseless: args.noiseless,
        zero_delta: args.zero_delta,
    };
    let mut spec = ExperimentSpec::new(sim, args.reps, EstimatorKind::parse_list(&args.estimators)?);
    spec.folds = args.folds;
    spec.source_estimator = args.source_estimator.parse::<SourceEstimator>()?;

    let result = run_experiment(&spec)?;
    emit_results(&result, &args.out, Format::from_path(&args.out))?;
    emit_summary(&result, sibling(&args.out, "summary"))?;
    for s in &result.summaries {
        if let Some(q) = s.mse {
            eprintln!(
                "{:<10} median mse {:.6e}  (q1 {:.3e}, q3 {:.3e}, failed {})",
                s.estimator.name(),
                q.median,
                q.q1,
                q.q3,
                s.failed
            );
        }
    }

    if args.dump_truth {
        let problem = generate(
            &spec.sim,
            &mut ChaCha8Rng::seed_from_u64(result.seeds.problem),
        )?;
        write_truth(&problem, &sibling(&args.out, "truth"), &sibling(&args.out, "weights"))?;
    }
    log::info!(
        "{} replications in {:.1}s (first replication seed {})",
        spec.replications,
        result.wall_time_secs,
        replication_seed(spec.sim.seed, 0)
    );
    Ok(())
}

fn write_truth(problem: &ptl::GeneratedProblem, truth: &Path, weights: &Path) -> Result<(), Error> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e| Error::Io { path: path.clone(), source: e }
    };
    let model = &problem.model;
    let k = model.b.ncols();
    let mut w = BufWriter::new(File::create(truth).map_err(io(truth))?);
    write!(w, "coordinate,beta,delta,canonical_delta").map_err(io(truth))?;
    for src in 1..=k {
        write!(w, ",source{src}").map_err(io(truth))?;
    }
    writeln!(w).map_err(io(truth))?;
    for j in 0..model.beta.len() {
        write!(
            w,
            "{},{:?},{:?},{:?}",
            j + 1,
            model.beta[j],
            model.delta[j],
            problem.canonical.delta[j]
        )
        .map_err(io(truth))?;
        for src in 0..k {
            write!(w, ",{:?}", model.b[(j, src)]).map_err(io(truth))?;
        }
        writeln!(w).map_err(io(truth))?;
    }
    w.flush().map_err(io(truth))?;

    let mut w = BufWriter::new(File::create(weights).map_err(io(weights))?);
    writeln!(w, "source,w,canonical_w").map_err(io(weights))?;
    for src in 0..k {
        writeln!(w, "{},{:?},{:?}", src + 1, model.w[src], problem.canonical.w[src]).map_err(io(weights))?;
    }
    w.flush().map_err(io(weights))
}

fn fit(config: &Path, out: &Path) -> Result<(), Error> {
    let cfg = FitConfig::load(config)?;
    let mut target = cfg.load_target()?;
    let mut sources = cfg.load_sources()?;
    let mut scaler = None;
    if cfg.standardize {
        let s = Standardizer::fit(&target);
        target = s.transform(&target)?;
        sources = sources
            .iter()
            .map(|d| Standardizer::fit(d).transform(d))
            .collect::<Result<_, _>>()?;
        scaler = Some(s);
    }
    let fit = fit_ptl(&sources, &target, &cfg.ptl_config())?;
    let doc = json!({
        "beta_hat": fit.beta_hat.as_slice(),
        "w_hat": fit.w_hat.as_slice(),
        "delta_hat": fit.delta_hat.as_slice(),
        "lambda_delta": fit.lambda_delta,
        "sources": fit.basis.estimators.iter().zip(&fit.basis.penalties).zip(&fit.basis.ridge_fallback)
            .map(|((e, pen), fb)| json!({"estimator": e.to_string(), "penalty": pen, "ridge_fallback": fb}))
            .collect::<Vec<_>>(),
        "diagnostics": {
            "profiled_residual_norm": fit.diagnostics.profiled_residual_norm,
            "fitted_residual_norm": fit.diagnostics.fitted_residual_norm,
            "orthogonality": fit.diagnostics.orthogonality,
            "condition": fit.diagnostics.condition,
            "dropped_sources": fit.diagnostics.dropped_sources,
        },
        "standardized": scaler.as_ref().map(|s| json!({
            "x_mean": s.x_mean.as_slice(),
            "x_scale": s.x_scale.as_slice(),
            "y_mean": s.y_mean,
        })),
    });
    let file = File::create(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| Error::Parse {
        path: out.to_path_buf(),
        message: e.to_string(),
    })?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })
}

fn evaluate(config: &Path, repeats: usize, seed: Option<u64>, out: &Path, estimators: &str) -> Result<(), Error> {
    let cfg = FitConfig::load(config)?;
    let target = cfg.load_target()?;
    let sources = cfg.load_sources()?;
    let eval = EvalConfig {
        repeats,
        seed: seed.unwrap_or(cfg.seed),
        folds: cfg.cv.folds,
        lasso: cfg.lasso,
        source_estimators: cfg.source_estimators(),
        estimators: EstimatorKind::parse_list(estimators)?,
        standardize: cfg.standardize,
    };
    let result = evaluate_real(&target, &sources, &eval)?;
    emit_r2(&result, out)?;
    for (name, r2) in &result.mean_r2 {
        println!("{name:<10} mean out-of-sample R² {r2:.4}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };

    if let Ok(v) = std::env::var("PTL_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            }
            _ => {
                eprintln!("error: PTL_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(1);
            }
        }
    }

    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fit { config, out } => fit(&config, &out),
        Command::Evaluate {
            config,
            repeats,
            seed,
            out,
            estimators,
        } => evaluate(&config, repeats, seed, &out, &estimators),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::InvalidConfiguration(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
