use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pag_core::harness::audit::{distinct_distance_clouds, invariance_check, run_gradcheck, MODULES};
use pag_core::harness::bench::{bench_op, BenchOp};
use pag_core::harness::dataset::{LoadOptions, Manifest};
use pag_core::harness::experiment::{
    apply_overrides, category_parts, evaluate, load_dataset, run_experiment, ExperimentConfig,
};
use pag_core::harness::plot::csv_to_svg;
use pag_core::harness::robustness::{monotone_trend, robustness_csv, run_robustness_sweep, RadiusOption};
use pag_core::models::{ForwardOptions, Task, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "pag", version, about = "Point-cloud atrous graph encoder-decoder tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a config file and write checkpoint, logs and metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Weight of the MMD regulariser.
        #[arg(long)]
        w_mmd: Option<f64>,
        /// Weight of the deeply supervised loss.
        #[arg(long)]
        w_ds: Option<f64>,
        /// Gaussian kernel bandwidth of the MMD loss.
        #[arg(long)]
        mmd_sigma: Option<f64>,
    },
    /// Evaluate a checkpoint on the clouds listed in a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write metrics.csv and report.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient audit.
    Gradcheck {
        /// One of autodiff, layers, losses, models; all when omitted.
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare logits under random reorderings of the input points.
    Invariance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 100)]
        perms: usize,
        #[arg(long, default_value_t = 10)]
        clouds: usize,
        #[arg(long, default_value_t = 128)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Score a checkpoint under random point dropout with and without radius bounds.
    Robustness {
        #[arg(long)]
        ckpt: PathBuf,
        /// Experiment config supplying the test set, keep ratios and radii.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time a geometric kernel or a PAC forward pass.
    Bench {
        #[arg(long)]
        op: BenchOp,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a CSV table as an SVG line chart.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
}

/// What a subcommand concluded: `Ok(true)` passes, `Ok(false)` is a failed check.
type Outcome = Result<bool>;

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train(
    config: &Path,
    out: &Path,
    overrides: Vec<(&str, Option<String>)>,
) -> Outcome {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let set: Vec<(&str, String)> = overrides.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect();
    let base = config.parent().unwrap_or(Path::new("."));
    let cfg = ExperimentConfig::parse(&apply_overrides(&text, &set), base)
        .with_context(|| format!("parsing {}", config.display()))?;
    let report = run_experiment(&cfg, out)?;
    print_json(&report)?;
    Ok(true)
}

fn eval(ckpt: &Path, data: &Path, out: Option<&Path>) -> Outcome {
    let state = TrainState::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let manifest = Manifest::read(data).with_context(|| format!("reading {}", data.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed());
    let examples = manifest.load(&LoadOptions::default(), &mut rng)?;
    let parts = match state.network().config().task {
        Task::Classification => None,
        Task::Segmentation => Some(category_parts(&examples)?.1),
    };
    let report = evaluate(
        state.network(),
        state.params(),
        &examples,
        parts.as_deref(),
        &ForwardOptions::default(),
    )?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), report.to_csv())?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    print_json(&report)?;
    Ok(true)
}

fn robustness(ckpt: &Path, config: &Path, out: &Path) -> Outcome {
    let state = TrainState::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let cfg = ExperimentConfig::read(config).with_context(|| format!("reading {}", config.display()))?;
    if cfg.task != state.network().config().task {
        bail!("config task does not match the checkpoint");
    }
    let data = load_dataset(&cfg)?;
    let options = [RadiusOption::unbounded(), RadiusOption::bounded(cfg.bounds)];
    let rows = run_robustness_sweep(
        state.network(),
        state.params(),
        &data.test,
        &cfg.keep_ratios,
        &options,
        data.category_parts.as_deref(),
        cfg.seed,
    )?;
    let csv = robustness_csv(&rows)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("robustness.csv"), &csv)?;
    fs::write(out.join("robustness.svg"), csv_to_svg(&csv, "score vs keep ratio")?)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        rows: &'a [pag_core::harness::robustness::RobustnessRow],
        monotone_within_2pct: bool,
    }
    print_json(&Summary {
        rows: &rows,
        monotone_within_2pct: monotone_trend(&rows, 0.02),
    })?;
    Ok(true)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            epochs,
            lr,
            w_mmd,
            w_ds,
            mmd_sigma,
        } => train(
            &config,
            &out,
            vec![
                ("seed", seed.map(|v| v.to_string())),
                ("epochs", epochs.map(|v| v.to_string())),
                ("lr", lr.map(|v| v.to_string())),
                ("w_mmd", w_mmd.map(|v| v.to_string())),
                ("w_ds", w_ds.map(|v| v.to_string())),
                ("mmd_sigma", mmd_sigma.map(|v| v.to_string())),
            ],
        ),
        Command::Eval { ckpt, data, out } => eval(&ckpt, &data, out.as_deref()),
        Command::Gradcheck { module, seed } => {
            if let Some(m) = &module {
                if !MODULES.contains(&m.as_str()) {
                    bail!("unknown module {m:?}, expected one of {}", MODULES.join(", "));
                }
            }
            let report = run_gradcheck(module.as_deref(), seed)?;
            print_json(&report)?;
            Ok(report.passed())
        }
        Command::Invariance {
            ckpt,
            perms,
            clouds,
            points,
            seed,
            tol,
        } => {
            let state = TrainState::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let clouds = distinct_distance_clouds(clouds, points, seed)?;
            let report = invariance_check(state.network(), state.params(), &clouds, perms, seed, tol)?;
            print_json(&report)?;
            Ok(report.passed)
        }
        Command::Robustness { ckpt, config, out } => robustness(&ckpt, &config, &out),
        Command::Bench { op, n, repeats, seed } => {
            print_json(&bench_op(op, n, repeats, seed)?)?;
            Ok(true)
        }
        Command::Plot { input, out, title } => {
            let csv = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let title = title.unwrap_or_else(|| input.display().to_string());
            fs::write(&out, csv_to_svg(&csv, &title)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
