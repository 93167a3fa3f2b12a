use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hypersindy_core::dynamics::{estimate_derivatives, initial_condition, simulate, Split, SystemKind, SystemSpec, DEFAULT_DT, DEFAULT_STEPS, LORENZ96_DEFAULT_DIM};
use hypersindy_core::evaluation::{self, generate_trajectory, km_estimate, sample_coefficients, table1_experiment, GenerateMode, Table1Options};
use hypersindy_core::io::{self, Checkpoint};
use hypersindy_core::training::{train_with, TrainConfig, PRESET_NAMES};
use hypersindy_core::Error as CoreError;

/// Discover sparse stochastic governing equations from trajectory data.
#[derive(Parser)]
#[command(name = "hypersindy", version, about, long_about = None)]
#[command(after_help = "Exit codes: 0 success, 1 other failure, 2 usage error, 3 non-finite training loss, \
4 evaluation domain error, 5 generation divergence.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a benchmark system and write a trajectory CSV with derivatives.
    Simulate(SimulateArgs),
    /// Train a model on a trajectory CSV and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint's coefficient ensemble against a known system.
    Eval(EvalArgs),
    /// Integrate the learned random ODE from an initial state.
    Generate(GenerateArgs),
    /// Estimate binned drift and diffusion from a trajectory CSV.
    Km(KmArgs),
    /// Coefficient RMSE of HyperSINDy and E-SINDy over several seeds.
    Table1(Table1Args),
}

#[derive(Args)]
struct SimulateArgs {
    /// lorenz, rossler, lotka_volterra or lorenz96.
    #[arg(long)]
    system: String,
    /// Noise scale (parameter noise, or diffusion scale for lotka_volterra).
    #[arg(long)]
    sigma: f64,
    /// Which reference initial condition to start from.
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// State dimension for lorenz96.
    #[arg(long, default_value_t = LORENZ96_DEFAULT_DIM)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Preset name or path to a JSON training config.
    #[arg(long)]
    config: String,
    /// Trajectory CSV with derivative columns.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// History CSV; defaults to the checkpoint path with `.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Override the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// System whose known coefficients serve as the reference.
    #[arg(long)]
    truth_system: String,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 250, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coefficient ensemble CSV; the RMSE record goes next to it as JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated initial state.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    /// `sample` draws new coefficients every step; `mean` uses the ensemble mean.
    #[arg(long, default_value = "sample")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KmArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = evaluation::km::DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = evaluation::km::DEFAULT_MIN_COUNT)]
    min_count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Table1Args {
    /// lorenz or rossler.
    #[arg(long)]
    system: String,
    /// 1, 5 or 10.
    #[arg(long)]
    sigma: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    /// Prior samples per trained model.
    #[arg(long, default_value_t = 250)]
    samples: usize,
    /// Preset name or JSON path replacing the standard training config.
    #[arg(long)]
    config: Option<String>,
    /// Override the training epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Worker threads; defaults to SSL_THREADS, then the core count.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Bad flag values caught after clap parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Km(a) => cmd_km(a),
        Command::Table1(a) => cmd_table1(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<CoreError>() {
        Some(CoreError::NonFiniteLoss { .. }) => 3,
        Some(CoreError::Domain { .. }) => 4,
        Some(CoreError::Divergence { .. }) => 5,
        _ => 1,
    }
}

fn parse_system(name: &str) -> Result<SystemKind> {
    SystemKind::parse(name).map_err(|e| usage(e.to_string()))
}

/// Preset name, or a path to a strict JSON training config.
fn load_config(spec: &str) -> Result<TrainConfig> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: TrainConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        return Ok(cfg);
    }
    if PRESET_NAMES.contains(&spec) {
        return Ok(TrainConfig::preset(spec)?);
    }
    Err(usage(format!(
        "--config '{spec}' is neither a file nor a preset ({})",
        PRESET_NAMES.join(", ")
    )))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let kind = parse_system(&a.system)?;
    let split = Split::parse(&a.split).map_err(|e| usage(e.to_string()))?;
    let spec = match kind {
        SystemKind::Lorenz96 => SystemSpec::lorenz96(a.dim, a.sigma),
        other => SystemSpec::from_kind(other, a.sigma),
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let x0 = initial_condition(&spec, split)?;
    let traj = estimate_derivatives(&simulate(&spec, &x0, a.dt, a.steps, a.seed)?)?;
    io::write_trajectory(&a.out, &traj)?;
    eprintln!("wrote {} rows to {}", traj.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(e) = a.epochs {
        cfg = cfg.with_epochs(e);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let data = io::read_trajectory(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let quiet = a.quiet;
    let (model, history) = train_with(&cfg, &data, |r| {
        if !quiet && (r.epoch % 50 == 0 || r.epoch + 1 == cfg.epochs) {
            eprintln!(
                "epoch {:>4}  recon {:.6e}  kl {:.4e}  l0 {:.3}  beta {:.3}  lambda {:.3}  active {}",
                r.epoch, r.recon, r.kl, r.l0, r.beta, r.lambda, r.active_terms
            );
        }
    })?;
    io::write_checkpoint(&a.out, &Checkpoint::from_model(&model, Some(&cfg), cfg.seed))?;
    let history_path = a.history.unwrap_or_else(|| a.out.with_extension("history.csv"));
    std::fs::write(&history_path, io::history_to_csv(&history))?;
    let ens = sample_coefficients(&model, cfg.stat_size, cfg.seed)?;
    print!("{}", io::format_equations(&model, &ens));
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalRecord {
    truth_system: SystemKind,
    sigma: f64,
    samples: u64,
    seed: u64,
    mean_rmse: f64,
    std_rmse: f64,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let kind = parse_system(&a.truth_system)?;
    let model = io::read_checkpoint(&a.checkpoint)?.to_model()?;
    let spec = match kind {
        SystemKind::Lorenz96 => SystemSpec::lorenz96(model.state_dim(), a.sigma),
        other => SystemSpec::from_kind(other, a.sigma),
    };
    let lib = model.library.spec();
    if spec.state_dim != lib.state_dim {
        bail!(
            "checkpoint has {} states but {kind} has {}",
            lib.state_dim,
            spec.state_dim
        );
    }
    let truth = evaluation::ground_truth(&spec, lib)?;
    let ens = sample_coefficients(&model, a.samples as usize, a.seed)?;
    std::fs::write(&a.out, io::ensemble_to_csv(&ens, &model.library.display_names())?)?;
    let report = ens.rmse_against(&truth)?;
    let record = EvalRecord {
        truth_system: kind,
        sigma: a.sigma,
        samples: a.samples,
        seed: a.seed,
        mean_rmse: report.mean_rmse,
        std_rmse: report.std_rmse,
    };
    io::write_json(&a.out.with_extension("json"), &record)?;
    println!("mean_rmse {:.6}  std_rmse {:.6}", report.mean_rmse, report.std_rmse);
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mode = GenerateMode::parse(&a.mode).map_err(|e| usage(e.to_string()))?;
    let model = io::read_checkpoint(&a.checkpoint)?.to_model()?;
    if a.x0.len() != model.state_dim() {
        return Err(usage(format!(
            "--x0 has {} values but the model has {} states",
            a.x0.len(),
            model.state_dim()
        )));
    }
    let traj = generate_trajectory(&model, &a.x0, a.dt, a.steps, a.seed, mode)?;
    io::write_trajectory(&a.out, &traj)?;
    Ok(())
}

fn cmd_km(a: KmArgs) -> Result<()> {
    let data = io::read_trajectory(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let field = km_estimate(&data, a.bins, a.min_count)?;
    std::fs::write(&a.out, io::km_to_csv(&field))?;
    Ok(())
}

fn cmd_table1(a: Table1Args) -> Result<()> {
    let kind = parse_system(&a.system)?;
    let threads = match a.threads {
        Some(t) => Some(t),
        None => match std::env::var("SSL_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| usage(format!("SSL_THREADS='{v}' is not a count")))?),
            Err(_) => None,
        },
    };
    if threads == Some(0) {
        return Err(usage("thread count must be at least 1"));
    }
    let mut train = match &a.config {
        Some(c) => Some(load_config(c)?),
        None => None,
    };
    if let Some(e) = a.epochs {
        let base = match train.take() {
            Some(c) => c,
            None => TrainConfig::preset(evaluation::experiment::table1_preset(kind, a.sigma).map_err(|e| usage(e.to_string()))?)?,
        };
        train = Some(base.with_epochs(e));
    }
    let opts = Table1Options {
        steps: a.steps,
        samples: a.samples,
        train,
        esindy: None,
        threads,
    };
    let summary = table1_experiment(kind, a.sigma, a.seeds as usize, &opts)?;
    io::write_json(&a.out, &summary)?;
    for (name, m) in [("HyperSINDy", summary.hypersindy), ("E-SINDy", summary.esindy)] {
        println!(
            "{name:<10}  mean {:.4} ± {:.4}  std {:.4} ± {:.4}",
            m.mean_rmse.mean, m.mean_rmse.std, m.std_rmse.mean, m.std_rmse.std
        );
    }
    Ok(())
}
