//! `cpic`: simulate, train, project, evaluate, forecast, self-test and sweep.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 1 on
//! runtime errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use cpic_core::artifact::ModelArtifact;
use cpic_core::encoder::EncoderMode;
use cpic_core::eval::{align_r2, forecast_r2, format_snr, pointwise_error_csv, ForecastTask};
use cpic_core::lorenz::{generate, snr_grid, LorenzConfig, LorenzParams, NoiseSpectrum};
use cpic_core::mibounds::{CriticKind, TubaForm};
use cpic_core::objective::{Compression, LossFamily, PiEstimator};
use cpic_core::selftest::{run_selftest, SelfTestConfig};
use cpic_core::sweep::{run_sweep, SweepConfig, SweepMethod};
use cpic_core::{train, CpicConfig, CpicError, Series};

#[derive(Debug, Parser)]
#[command(
    name = "cpic",
    version,
    about = "Compressed predictive information coding"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the noisy lifted Lorenz benchmark.
    SimulateLorenz(SimulateArgs),
    /// Train an encoder on a CSV series and write a model artifact.
    Train(TrainArgs),
    /// Write the encoder mean path of a series.
    Project(ProjectArgs),
    /// Alignment R² of inferred latents against ground truth.
    EvalAlign(EvalAlignArgs),
    /// Cross-validated lagged linear forecast R².
    Forecast(ForecastArgs),
    /// Check every MI estimator on a Gaussian pair with known MI.
    MiSelftest(SelfTestArgs),
    /// Alignment R² over an SNR grid, methods and seeds.
    SweepLorenz(SweepArgs),
}

/// Parses a kebab-case enum value through its serde representation.
fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("invalid value {s:?}"))
}

fn parse_noise(s: &str) -> std::result::Result<NoiseSpectrum, String> {
    match s.split_once(':') {
        None if s == "wishart" => Ok(NoiseSpectrum::Wishart),
        Some(("decaying", k)) => k
            .parse()
            .map(|dim| NoiseSpectrum::Decaying { dim })
            .map_err(|_| format!("invalid rank in {s:?}")),
        _ => Err(format!(
            "expected `wishart` or `decaying:<rank>`, got {s:?}"
        )),
    }
}

#[derive(Debug, Args)]
struct NoiseArgs {
    /// Noise covariance recipe: `wishart` or `decaying:<rank>`.
    #[arg(long, default_value = "wishart", value_parser = parse_noise)]
    noise: NoiseSpectrum,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 21000)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 30)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Noisy observations CSV.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth latent CSV.
    #[arg(long)]
    latents_out: PathBuf,
    /// JSON record of seed, embedding, noise spectrum and achieved SNR.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Observation CSV (rows = time); a non-numeric first row is a header.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 3)]
    latent_dim: usize,
    #[arg(long, default_value_t = 4)]
    window: usize,
    #[arg(long)]
    beta: Option<f64>,
    /// multi | uni
    #[arg(long, default_value = "multi", value_parser = kebab::<LossFamily>)]
    loss: LossFamily,
    /// infonce | nwj | mine | tuba | lba | gaussian
    #[arg(long, value_parser = kebab::<PiEstimator>)]
    pi: Option<PiEstimator>,
    /// vub | l1out | none
    #[arg(long, value_parser = kebab::<Compression>)]
    compression: Option<Compression>,
    /// stochastic | deterministic
    #[arg(long, value_parser = kebab::<EncoderMode>)]
    encoder: Option<EncoderMode>,
    /// separable | joint
    #[arg(long, value_parser = kebab::<CriticKind>)]
    critic: Option<CriticKind>,
    /// standard | printed
    #[arg(long, value_parser = kebab::<TubaForm>)]
    tuba_form: Option<TubaForm>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model artifact JSON.
    #[arg(long)]
    out: PathBuf,
    /// Training report JSON with per-step traces.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl TrainArgs {
    /// Starts from the preset for the chosen loss and estimator, then applies
    /// every explicit flag. Validation happens in the core.
    fn config(&self) -> CpicConfig {
        let (d, t) = (self.latent_dim, self.window);
        let mut c = match (self.loss, self.pi) {
            (_, Some(PiEstimator::Gaussian)) => CpicConfig::gaussian(d, t),
            (LossFamily::Uni, pi) => CpicConfig::uni(d, t, pi.unwrap_or(PiEstimator::Nwj)),
            (LossFamily::Multi, pi) => CpicConfig {
                pi_estimator: pi.unwrap_or(PiEstimator::Infonce),
                ..CpicConfig::multi(d, t)
            },
        };
        if let Some(mode) = self.encoder {
            if mode == EncoderMode::Deterministic && self.compression.is_none() {
                c = c.deterministic();
            }
            c.encoder = mode;
        }
        if let Some(v) = self.compression {
            c.compression = v;
        }
        if let Some(v) = self.critic {
            c.critic = v;
        }
        if let Some(v) = self.tuba_form {
            c.tuba_form = v;
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.batch {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        c.seed = self.seed;
        c
    }
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalAlignArgs {
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Point-wise error CSV (columns t, error).
    #[arg(long)]
    errors_out: Option<PathBuf>,
    /// Full result as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    lag: usize,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelfTestArgs {
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 50)]
    eval_batches: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 10)]
    levels: usize,
    /// Training seeds 0..K.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Comma-separated: cpic, cpic-det, cpic-nwj, cpic-mine, cpic-tuba, dca, pca.
    #[arg(long, default_value = "cpic", value_delimiter = ',')]
    methods: Vec<SweepMethod>,
    /// Seed of the trajectory, embedding and noise, shared by every run.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Override every method's training steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Override every stochastic method's batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Keep per-step training traces in the report.
    #[arg(long)]
    traces: bool,
    /// Directory for one point-wise error CSV per run.
    #[arg(long)]
    errors_dir: Option<PathBuf>,
    /// Print the SNR grid and exit without training.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_series(path: &Path) -> Result<Series> {
    Ok(Series::load_csv_sniff(path)?)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = LorenzConfig {
        params: LorenzParams {
            dt: a.dt,
            steps: a.steps,
            burn_in: a.burn_in,
            ..LorenzParams::default()
        },
        embed_dim: a.embed_dim,
        snr: a.snr,
        noise: a.noise.noise,
        seed: a.seed,
    };
    let data = generate(&cfg)?;
    let names = (0..a.embed_dim).map(|k| format!("x{k}")).collect();
    data.noisy.clone().with_names(names)?.save_csv(&a.out)?;
    data.latents.save_csv(&a.latents_out)?;
    if let Some(path) = &a.sidecar {
        write_json(path, &data.sidecar(&cfg))?;
    }
    println!(
        "wrote {} steps x {} channels (achieved snr {:.6})",
        data.noisy.len(),
        data.noisy.dim(),
        data.noise.achieved_snr
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = a.config();
    config.validate()?;
    let series = load_series(&a.data)?;
    let (model, report) = train(&config, &series)?;
    ModelArtifact::from_model(&model, Some(&report))?.save(&a.out)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    println!(
        "trained {} steps in {:.1}s: final loss {:.4}, pi {:.4}, clamp events {}",
        report.loss.len(),
        report.wall_time_secs,
        report.loss.last().copied().unwrap_or(f64::NAN),
        report.final_pi().unwrap_or(f64::NAN),
        report.clamp_events
    );
    Ok(())
}

fn project(a: ProjectArgs) -> Result<()> {
    let model = ModelArtifact::load(&a.model)?.to_model()?;
    let series = load_series(&a.data)?;
    model.project(&series)?.save_csv(&a.out)?;
    Ok(())
}

fn eval_align(a: EvalAlignArgs) -> Result<()> {
    let inferred = load_series(&a.latents)?;
    let truth = load_series(&a.truth)?;
    let res = align_r2(&inferred, &truth)?;
    println!("r2 {:.6}", res.r2);
    println!("mean_r2 {:.6}", res.mean_r2);
    for (k, r) in res.per_dim_r2.iter().enumerate() {
        println!("r2[{k}] {r:.6}");
    }
    if let Some(path) = &a.errors_out {
        std::fs::write(path, pointwise_error_csv(&res.pointwise_errors))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.json {
        write_json(path, &res)?;
    }
    Ok(())
}

fn forecast(a: ForecastArgs) -> Result<()> {
    let latents = load_series(&a.latents)?;
    let targets = load_series(&a.targets)?;
    let mut task = ForecastTask::new(&latents, &targets, a.lag);
    task.window = a.window;
    task.folds = a.folds;
    let res = forecast_r2(&task)?;
    for (k, r) in res.fold_r2.iter().enumerate() {
        println!("fold {k} r2 {r:.6}");
    }
    println!("mean_r2 {:.6}", res.mean_r2);
    if let Some(path) = &a.json {
        write_json(path, &res)?;
    }
    Ok(())
}

fn selftest(a: SelfTestArgs) -> Result<()> {
    let cfg = SelfTestConfig {
        rho: a.rho,
        dim: a.dim,
        batch: a.batch,
        steps: a.steps,
        eval_batches: a.eval_batches,
        learning_rate: a.lr,
        seed: a.seed,
    };
    let report = run_selftest(&cfg)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.json {
        write_json(path, &report)?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let grid = snr_grid(a.levels)?;
    if a.dry_run {
        for snr in grid {
            println!("{}", format_snr(snr));
        }
        return Ok(());
    }
    let cfg = SweepConfig {
        levels: a.levels,
        seeds: (0..a.seeds).collect(),
        methods: a.methods,
        data: LorenzConfig {
            noise: a.noise.noise,
            seed: a.data_seed,
            ..LorenzConfig::default()
        },
        steps: a.steps,
        batch_size: a.batch,
        pointwise_errors: a.errors_dir.is_some(),
        keep_traces: a.traces,
        ..SweepConfig::default()
    };
    let mut out = run_sweep(&cfg)?;
    if let Some(dir) = &a.errors_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for run in &mut out.runs {
            let name = format!(
                "{}_snr{}_seed{}.csv",
                run.method,
                format_snr(run.snr),
                run.seed
            );
            let path = dir.join(name);
            std::fs::write(&path, pointwise_error_csv(&run.pointwise_errors))
                .with_context(|| format!("writing {}", path.display()))?;
            run.pointwise_errors.clear();
        }
    }
    print!("{}", out.report.to_table());
    if let Some(path) = &a.out {
        write_json(path, &out)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::SimulateLorenz(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Project(a) => project(a),
        Command::EvalAlign(a) => eval_align(a),
        Command::Forecast(a) => forecast(a),
        Command::MiSelftest(a) => selftest(a),
        Command::SweepLorenz(a) => sweep(a),
    }
}

fn is_usage_error(err: &anyhow::Error) -> bool {
    matches!(err.downcast_ref::<CpicError>(), Some(CpicError::Config(_)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_usage_error(&err) { 2 } else { 1 })
        }
    }
}
