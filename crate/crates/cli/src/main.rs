//! `nero`: train, ablate, grid-search, probe and bound from the command line.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure, 4 data or
//! format error.

mod fetch;
mod probe;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use nero_core::analysis::{pac_bayes_bound, BoundInputs};
use nero_core::harness::{
    check_planted_bug, check_random_mlps, make_blobs, run_ablation, run_grid, write_ablation_csv,
    write_grid_csv, write_run, Checkpoint, GradCheckSpec, HarnessError, RunStatus, TrainConfig,
    OUTPUT_DIR_ENV,
};
use nero_core::optim::Constraints;
use nero_core::Rng;

#[derive(Parser)]
#[command(
    name = "nero",
    version,
    about = "Per-neuron relative optimisation experiments"
)]
#[command(
    after_help = "Exit codes: 0 success, 2 config error, 3 numerical failure, 4 data or format error.\n\
Output directory: --output-dir, else the config's output_dir, else $NERO_OUTPUT_DIR, else ./runs.\n\
Logging: set RUST_LOG (e.g. RUST_LOG=info)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run from a TOML config.
    Train(TrainArgs),
    /// Train every constraint toggle pair over several repeats.
    Ablate(AblateArgs),
    /// Train one run per learning rate and select by validation error.
    Grid(GridArgs),
    /// Analysis probes on a checkpoint.
    Probe {
        #[command(subcommand)]
        probe: probe::ProbeCommand,
    },
    /// PAC-Bayes bound for alpha-robust balanced networks; one JSON line per alpha.
    Bound(BoundArgs),
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        data: DataCommand,
    },
    /// Finite-difference check of MLP gradients on random instances.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output_dir and $NERO_OUTPUT_DIR.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    /// Mean and norm constraints.
    Both,
    Mean,
    Norm,
    None,
}

impl Toggle {
    fn constraints(self) -> Constraints {
        let (mean, norm) = match self {
            Toggle::Both => (true, true),
            Toggle::Mean => (true, false),
            Toggle::Norm => (false, true),
            Toggle::None => (false, false),
        };
        Constraints { mean, norm }
    }

    fn label(c: Constraints) -> &'static str {
        match (c.mean, c.norm) {
            (true, true) => "both",
            (true, false) => "mean",
            (false, true) => "norm",
            (false, false) => "none",
        }
    }
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Constraint sets to compare.
    #[arg(long, value_delimiter = ',', default_values = ["both", "mean", "norm", "none"])]
    toggles: Vec<Toggle>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Learning rates (eta for Nero).
    #[arg(long, value_delimiter = ',', default_values = ["1e-4", "1e-3", "1e-2", "1e-1", "1"])]
    lrs: Vec<f64>,
}

#[derive(Args)]
struct BoundArgs {
    /// Number of neurons.
    #[arg(long)]
    m: usize,
    /// Fan-in of each neuron.
    #[arg(long)]
    d: usize,
    /// Rotation tolerance in radians; repeat or comma-separate for a sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    alpha: Vec<f64>,
    /// Training sample count.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Number of distinct solutions.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
}

#[derive(Subcommand)]
enum DataCommand {
    /// Download the four MNIST IDX files and check they parse.
    FetchMnist {
        #[arg(long, default_value = "data/mnist")]
        out: PathBuf,
        #[arg(long, default_value = fetch::DEFAULT_BASE_URL)]
        base_url: String,
    },
    /// Write a synthetic blobs dataset as CSV.
    MakeBlobs {
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    instances: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    input_dim: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Check the centred weight-normalised parameterisation.
    #[arg(long)]
    reparameterised: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fail (exit 3) above this max relative error.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Self-test: check a copy with a broken activation gradient, which must
    /// exceed the tolerance (exit 3 if it goes unnoticed).
    #[arg(long)]
    planted_bug: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8, HarnessError> {
    match cli.command {
        Command::Train(a) => train(&a.run),
        Command::Ablate(a) => ablate(&a),
        Command::Grid(a) => grid(&a),
        Command::Probe { probe } => probe::run(probe),
        Command::Bound(a) => bound(&a),
        Command::Data { data } => match data {
            DataCommand::FetchMnist { out, base_url } => {
                fetch::fetch_mnist(&out, &base_url).map(|_| 0)
            }
            DataCommand::MakeBlobs {
                classes,
                dim,
                count,
                sigma,
                seed,
                out,
            } => {
                let d = make_blobs(classes, dim, count, sigma, &mut Rng::new(seed))?;
                d.write_csv(&out)?;
                Ok(0)
            }
        },
        Command::Gradcheck(a) => gradcheck(&a),
    }
}

pub(crate) fn emit(v: &Value) {
    println!("{v}");
}

fn load_config(args: &RunArgs) -> Result<(TrainConfig, PathBuf), HarnessError> {
    let cfg = TrainConfig::load(&args.config)?;
    let out = args
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    Ok((cfg, out))
}

fn save_config(cfg: &TrainConfig, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn status_code(status: &RunStatus) -> u8 {
    if status.is_completed() {
        0
    } else {
        3
    }
}

fn train(args: &RunArgs) -> Result<u8, HarnessError> {
    let (cfg, out) = load_config(args)?;
    let trained = nero_core::harness::train(&cfg, Path::new("."))?;
    save_config(&cfg, &out)?;
    write_run(&out, &trained.record)?;
    Checkpoint::from_trained(&trained).save(&out.join("checkpoint.json"))?;
    let r = &trained.record;
    if let RunStatus::Failed { step, reason } = &r.status {
        log::error!("run failed at step {step}: {reason}");
    }
    emit(&json!({
        "output_dir": out,
        "config_hash": r.config_hash,
        "status": r.status,
        "summary": r.summary,
        "wall_time_secs": r.wall_time_secs,
    }));
    Ok(status_code(&r.status))
}

fn ablate(args: &AblateArgs) -> Result<u8, HarnessError> {
    let (cfg, out) = load_config(&args.run)?;
    let splits = cfg.dataset.load(Path::new("."))?;
    let toggles: Vec<Constraints> = args.toggles.iter().map(|t| t.constraints()).collect();
    let result = run_ablation(&cfg, &splits, &toggles, args.repeats)?;
    save_config(&cfg, &out)?;
    for c in &result.cells {
        let dir = out.join(format!("{}-r{}", Toggle::label(c.constraints), c.repeat));
        write_run(&dir, &c.record)?;
    }
    write_ablation_csv(&out.join("ablation.csv"), &result, &cfg.hash())?;
    for row in &result.table {
        emit(&serde_json::to_value(row).expect("row serialises"));
    }
    Ok(0)
}

fn grid(args: &GridArgs) -> Result<u8, HarnessError> {
    let (cfg, out) = load_config(&args.run)?;
    let splits = cfg.dataset.load(Path::new("."))?;
    let result = run_grid(&cfg, &splits, &args.lrs)?;
    save_config(&cfg, &out)?;
    for c in &result.cells {
        write_run(&out.join(format!("lr-{}", c.lr)), &c.record)?;
    }
    write_grid_csv(&out.join("grid.csv"), &result, &cfg.hash())?;
    for (i, c) in result.cells.iter().enumerate() {
        emit(&json!({
            "lr": c.lr,
            "status": c.record.status,
            "final_validation_error": c.record.summary.final_validation_error,
            "final_train_error": c.record.summary.final_train_error,
            "selected": result.best == Some(i),
        }));
    }
    if result.best.is_none() {
        log::error!("every grid cell failed");
        return Ok(3);
    }
    Ok(0)
}

fn bound(args: &BoundArgs) -> Result<u8, HarnessError> {
    for &alpha in &args.alpha {
        let inputs = BoundInputs {
            m: args.m,
            d: args.d,
            n: args.n,
            delta: args.delta,
            k: args.k,
            alpha,
        };
        let r = pac_bayes_bound(&inputs).map_err(|e| HarnessError::Config(e.to_string()))?;
        // JSON has no infinity; the vacuous bound is written as null with its note
        emit(&json!({ "inputs": inputs, "report": r }));
    }
    Ok(0)
}

fn gradcheck(args: &GradcheckArgs) -> Result<u8, HarnessError> {
    let spec = GradCheckSpec {
        instances: args.instances,
        depth: args.depth,
        width: args.width,
        input_dim: args.input_dim,
        classes: args.classes,
        batch: args.batch,
        reparameterised: args.reparameterised,
        seed: args.seed,
        ..Default::default()
    };
    let (s, passed) = if args.planted_bug {
        let s = check_planted_bug(&spec)?;
        let caught = s.max_rel_error > args.tolerance;
        (s, caught)
    } else {
        let s = check_random_mlps(&spec)?;
        let ok = s.max_rel_error <= args.tolerance;
        (s, ok)
    };
    emit(
        &json!({ "summary": s, "tolerance": args.tolerance, "planted_bug": args.planted_bug, "passed": passed }),
    );
    Ok(if passed { 0 } else { 3 })
}
