use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hilo_core::agent::{AgentConfig, DEFAULT_TEMPERATURE};
use hilo_core::encoders::{checkpoint, dse_train, naive_encode, DseArch, DseModel, TrainConfig};
use hilo_core::experiment::{
    calibrate_agent, load_target_pools, load_training_targets, read_results, run_experiment, write_outputs, Condition,
    ConditionSummary, ExperimentResult, SimulationConfig,
};
use hilo_core::params::dse_default_phi;
use hilo_core::percept_io::{encode_png, write_pgm};
use hilo_core::phosphene::{render_percept, ElectrodeArray, ThresholdProfile, IDEAL_BRIGHTNESS};
use hilo_core::session::SessionContext;
use hilo_core::{PhiBox, UserParams};
use hilo_service::AppState;

/// Human-in-the-loop optimization of prosthetic vision encoders.
#[derive(Parser)]
#[command(name = "hilo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the deep stimulus encoder and write a checkpoint.
    TrainDse(TrainArgs),
    /// Run simulated participants through full sessions.
    Simulate(SimulateArgs),
    /// Summarize a directory written by `simulate`.
    Analyze {
        dir: PathBuf,
    },
    /// Render the percept an encoder produces for one target.
    Render(RenderArgs),
    /// Find the agent temperature giving a target rate of lower-error choices.
    Calibrate(CalibrateArgs),
    /// Serve live duel sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding MNIST IDX files; synthetic digits are used if absent.
    #[arg(long, env = "HILO_MNIST_DIR")]
    mnist_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Encoder checkpoint written by `train-dse`.
    #[arg(long, env = "HILO_MODEL")]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 50_000)]
    steps: usize,
    /// Number of training targets.
    #[arg(long, default_value_t = 2_000)]
    targets: usize,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "dse.bin")]
    out: PathBuf,
    /// Also write the validation curve as CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "main")]
    condition: Condition,
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = 0.0)]
    lapse_rate: f64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderKind {
    Dse,
    Naive,
}

#[derive(Args)]
struct RenderArgs {
    /// JSON file with the 13 user parameters; the box midpoint if omitted.
    #[arg(long)]
    phi: Option<PathBuf>,
    /// Index into the duel target pool.
    #[arg(long, default_value_t = 0)]
    target: usize,
    #[arg(long, value_enum, default_value = "dse")]
    encoder: EncoderKind,
    /// Output image; `.pgm` writes PGM, anything else PNG.
    #[arg(long, default_value = "percept.png")]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    #[arg(long, default_value_t = 0.85)]
    rate: f64,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "HILO_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "HILO_BIND", default_value = "127.0.0.1")]
    bind: std::net::IpAddr,
    #[arg(long, env = "HILO_DATA_DIR", default_value = "hilo-data")]
    data_dir: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

const DUEL_TARGETS: usize = 200;
const HELDOUT_POOL: usize = 200;

fn load_model(path: &Path) -> Result<DseModel> {
    checkpoint::load(path).with_context(|| format!("loading encoder checkpoint {}", path.display()))
}

fn context(args: &ModelArgs) -> Result<Arc<SessionContext>> {
    let model = load_model(&args.model)?;
    let size = (model.arch.target_height, model.arch.target_width);
    let pools = load_target_pools(args.data.mnist_dir.as_deref(), size, DUEL_TARGETS, HELDOUT_POOL)?;
    Ok(Arc::new(SessionContext::new(model, pools.duel, pools.heldout)?))
}

fn train(args: TrainArgs) -> Result<()> {
    let arch = DseArch {
        hidden: args.hidden,
        blocks: args.blocks,
        ..DseArch::default()
    };
    let config = TrainConfig {
        steps: args.steps,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let targets = load_training_targets(args.data.mnist_dir.as_deref(), (arch.target_height, arch.target_width), args.targets)?;
    let t0 = Instant::now();
    let (model, report) = dse_train(arch, &PhiBox::default(), &targets, &config)?;
    checkpoint::save(&model, &args.out)?;
    if let Some(path) = &args.metrics {
        report.write_csv(BufWriter::new(File::create(path)?))?;
    }
    println!(
        "trained {} steps in {:.0}s: validation loss {:.4} -> {:.4} (best at step {}); wrote {}",
        args.steps,
        t0.elapsed().as_secs_f64(),
        report.initial_val_loss,
        report.best_val_loss,
        report.best_step,
        args.out.display()
    );
    Ok(())
}

fn print_summary(result: &ExperimentResult) {
    let s: &ConditionSummary = &result.summary;
    println!("condition {} with {} subjects (seed {})", result.config.condition, s.subjects, result.config.seed);
    for b in &s.baselines {
        println!(
            "  vs {:<11} {}/{} subjects favor HILO, mean log odds {:.2} ± {:.2}, pooled {:.2} (p = {:.2e})",
            b.baseline.name(),
            b.subjects_favoring_hilo,
            b.subjects,
            b.mean_log_odds,
            b.sem_log_odds,
            b.pooled.estimate,
            b.pooled.p_value
        );
    }
    if let (Some(first), Some(last)) = (s.mse_curve.first(), s.mse_curve.last()) {
        println!(
            "  median held-out MSE {:.4} after duel {} -> {:.4} after duel {}",
            first.median, first.duel, last.median, last.duel
        );
    }
    println!("  mean agreement with the simulated agent {:.3}", s.mean_agreement);
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let ctx = context(&args.model)?;
    let config = SimulationConfig {
        condition: args.condition,
        subjects: args.subjects,
        seed: args.seed,
        agent: AgentConfig {
            temperature: args.temperature,
            lapse_rate: args.lapse_rate,
            ..AgentConfig::default()
        },
    };
    let t0 = Instant::now();
    let result = run_experiment(ctx, &config, Some(&args.out.join("sessions")))?;
    write_outputs(&result, &args.out)?;
    print_summary(&result);
    println!("wrote {} in {:.0}s", args.out.display(), t0.elapsed().as_secs_f64());
    Ok(())
}

fn render(args: RenderArgs) -> Result<()> {
    let ctx = context(&args.model)?;
    let phi = match &args.phi {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let phi: UserParams = serde_json::from_str(&text).context("parsing user parameters")?;
            phi.validate()?;
            phi
        }
        None => dse_default_phi(ctx.phi_box()),
    };
    let Some(target) = ctx.duel_targets.get(args.target) else {
        bail!("target index {} out of range (pool has {})", args.target, ctx.duel_targets.len());
    };
    let spec = ctx.array_spec();
    let stimulus = match args.encoder {
        EncoderKind::Dse => ctx.model.forward(target, &phi)?,
        EncoderKind::Naive => naive_encode(target, &spec, IDEAL_BRIGHTNESS * phi.theta_mean)?,
    };
    let array = ElectrodeArray::new(spec, &phi, &ThresholdProfile::uniform(spec.n_electrodes()))?;
    let percept = render_percept(&stimulus, &array, &phi, &ctx.display_grid)?;
    if args.out.extension().is_some_and(|e| e == "pgm") {
        write_pgm(&percept, ctx.display_cap, BufWriter::new(File::create(&args.out)?))?;
    } else {
        std::fs::write(&args.out, encode_png(&percept, ctx.display_cap)?)?;
    }
    println!(
        "{} ({}): displayed brightness {}; wrote {}",
        target.label,
        match args.encoder {
            EncoderKind::Dse => "dse",
            EncoderKind::Naive => "naive",
        },
        percept.displayed_brightness(),
        args.out.display()
    );
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let ctx = context(&args.model)?;
    let t = calibrate_agent(ctx, args.subjects, args.rate)?;
    println!("temperature {t:.6}");
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let ctx = context(&args.model)?;
    let state = Arc::new(AppState::persistent(ctx, &args.data_dir)?);
    let addr = SocketAddr::new(args.bind, args.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(hilo_service::serve(state, addr))?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::TrainDse(a) => train(a),
        Command::Simulate(a) => simulate(a),
        Command::Analyze { dir } => {
            let result = read_results(&dir).with_context(|| format!("reading results from {}", dir.display()))?;
            print_summary(&result);
            Ok(())
        }
        Command::Render(a) => render(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Serve(a) => serve(a),
    }
}
