mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mnn_alloc::experiments::{
    compare_allocators, noise_ratio_mean, run_theorem1_sweep, run_transfer_study, write_csv,
    CsvRow, StabilityReport,
};
use mnn_alloc::gnn::{train, GnnModel, TrainConfig};
use mnn_alloc::netgen::WirelessNetwork;
use mnn_alloc::spectral::{
    eig, empirical_gap_index, fdt_check, laplacian, largest_gap, partition_spectrum, FdtReport,
    FilterSpec, OperatorKind,
};
use serde::Serialize;

use config::{usage, RunConfig, UsageError};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mnn-alloc",
    version,
    about = "Graph filter power allocation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed (`seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (`out`, default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct ChannelFlags {
    /// `channel.pathloss_exponent`
    #[arg(long)]
    pathloss_exponent: Option<f64>,
    /// `channel.fading_scale`
    #[arg(long)]
    fading_scale: Option<f64>,
    /// `power.p0`
    #[arg(long)]
    p0: Option<f64>,
    /// `power.noise_power`
    #[arg(long)]
    noise_power: Option<f64>,
    /// `power.budget_fraction`: Pmax = budget_fraction * m * p0
    #[arg(long)]
    budget_fraction: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// `train.primal_step`
    #[arg(long)]
    primal_step: Option<f64>,
    /// `train.dual_step`
    #[arg(long)]
    dual_step: Option<f64>,
    /// `train.iterations`
    #[arg(long)]
    iterations: Option<usize>,
    /// `train.batch`
    #[arg(long)]
    batch: Option<usize>,
    /// `train.m_train`
    #[arg(long)]
    m_train: Option<usize>,
    /// `train.init_scale`
    #[arg(long)]
    init_scale: Option<f64>,
    /// `train.layers`
    #[arg(long)]
    layers: Option<usize>,
    /// `train.taps`
    #[arg(long)]
    taps: Option<usize>,
    /// `train.width`
    #[arg(long)]
    width: Option<usize>,
    /// `train.input`: ones | direct-state
    #[arg(long)]
    input: Option<String>,
}

#[derive(Args, Clone)]
struct EvalFlags {
    /// `eval.model`
    #[arg(long)]
    model: Option<PathBuf>,
    /// `eval.network`
    #[arg(long)]
    network: Option<PathBuf>,
    /// `eval.m`
    #[arg(long)]
    m: Option<usize>,
    /// `eval.trials`
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args, Clone)]
struct TransferFlags {
    /// `transfer.model`
    #[arg(long)]
    model: Option<PathBuf>,
    /// `transfer.sizes`, comma separated
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// `transfer.trials`
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args, Clone)]
struct NoiseFlags {
    /// `noise.depths`, comma separated
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    /// `noise.m`
    #[arg(long)]
    m: Option<usize>,
    /// `noise.perturb_sigma`
    #[arg(long)]
    perturb_sigma: Option<f64>,
    /// `noise.trials`
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args, Clone)]
struct Theorem1Flags {
    /// `theorem1.sizes`
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// `theorem1.layers`
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// `theorem1.widths`
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// `theorem1.epsilon_fractions`: epsilon as fractions of alpha
    #[arg(long, value_delimiter = ',')]
    epsilon_fractions: Option<Vec<f64>>,
    /// `theorem1.taps`
    #[arg(long)]
    taps: Option<usize>,
    /// `theorem1.alpha_gap_fraction`: alpha as a fraction of the largest gap
    #[arg(long)]
    alpha_gap_fraction: Option<f64>,
    /// `theorem1.repeats`
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args, Clone)]
struct SpectralFlags {
    /// `spectral.network`
    #[arg(long)]
    network: Option<PathBuf>,
    /// `spectral.m`
    #[arg(long)]
    m: Option<usize>,
    /// `spectral.operator`: combinatorial | normalized | symmetrized-shift
    #[arg(long)]
    operator: Option<String>,
    /// `spectral.alpha`
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// `spectral.filter`: coefficients, lowest degree first
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    filter: Option<Vec<f64>>,
    /// `spectral.delta_budget`
    #[arg(long)]
    delta_budget: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one wireless network and write its document.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        channel: ChannelFlags,
        /// `generate.m`
        #[arg(long)]
        m: Option<usize>,
    },
    /// Primal-dual training of a policy; writes the model and its history.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        channel: ChannelFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Per-network sum-rates of a model and the baselines.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        channel: ChannelFlags,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Mean and std of the four allocators across network sizes.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        channel: ChannelFlags,
        #[command(flatten)]
        transfer: TransferFlags,
    },
    /// Trains one model per depth and measures its sum-rate ratio shift
    /// under log-normal channel noise.
    NoiseStability {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        channel: ChannelFlags,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        noise: NoiseFlags,
    },
    /// Randomized check of the filter-network stability bound.
    Theorem1 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        theorem1: Theorem1Flags,
    },
    /// Spectrum, partition, gap index and FDT report of a network operator.
    Spectral {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        channel: ChannelFlags,
        #[command(flatten)]
        spectral: SpectralFlags,
    },
}

macro_rules! set {
    ($section:expr, $flags:expr, $($field:ident),+) => {
        $(if let Some(v) = $flags.$field.clone() { $section.$field = v; })+
    };
}

macro_rules! set_path {
    ($section:expr, $flags:expr, $($field:ident),+) => {
        $(if $flags.$field.is_some() { $section.$field = $flags.$field.clone(); })+
    };
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    Ok(cfg)
}

fn apply_channel(cfg: &mut RunConfig, f: &ChannelFlags) {
    set!(cfg.channel, f, pathloss_exponent, fading_scale);
    set!(cfg.power, f, p0, noise_power, budget_fraction);
}

fn apply_train(cfg: &mut RunConfig, f: &TrainFlags) {
    set!(
        cfg.train,
        f,
        primal_step,
        dual_step,
        iterations,
        batch,
        m_train,
        init_scale,
        layers,
        taps,
        width,
        input
    );
}

/// Creates the output directory and writes the effective config and the
/// metadata record next to the outputs.
fn prepare_out(cfg: &RunConfig, command: &str, outputs: &[&str]) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_file(&dir.join("config.toml"), &cfg.to_toml()?)?;
    let meta = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "outputs": outputs,
        "config": cfg,
    });
    write_file(
        &dir.join("metadata.json"),
        &serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_rows<T: CsvRow>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    write_csv(rows, std::io::BufWriter::new(file))?;
    Ok(())
}

fn load_model(path: Option<&PathBuf>, key: &str) -> Result<GnnModel> {
    let path =
        path.ok_or_else(|| usage(format!("a model file is required (--model or `{key}`)")))?;
    let text =
        fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    Ok(GnnModel::from_json(&text)?)
}

fn load_network(path: &Path) -> Result<WirelessNetwork> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading network {}", path.display()))?;
    Ok(WirelessNetwork::from_json(&text)?)
}

fn cmd_generate(cfg: RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let net = cfg.study_params().network(cfg.generate.m, seed)?;
    let dir = prepare_out(&cfg, "generate", &["network.json"])?;
    let path = dir.join("network.json");
    write_file(&path, &net.to_json()?)?;
    let direct = net.direct_states();
    let mean = direct.iter().sum::<f64>() / direct.len() as f64;
    println!("{}", path.display());
    println!(
        "m = {}  Pmax = {}  mean direct log-gain = {mean:.4}  fingerprint = {:016x}",
        net.m,
        net.pmax,
        net.fingerprint()
    );
    Ok(())
}

fn run_training(cfg: &RunConfig, config: &TrainConfig) -> Result<mnn_alloc::gnn::TrainOutcome> {
    let params = cfg.study_params();
    Ok(train(
        config,
        &params.channel,
        &params.powers(config.m_train),
    )?)
}

fn cmd_train(cfg: RunConfig) -> Result<()> {
    let config = cfg.train_config()?;
    let outcome = run_training(&cfg, &config)?;
    let dir = prepare_out(&cfg, "train", &["model.json", "history.csv"])?;
    write_file(&dir.join("model.json"), &outcome.model.to_json()?)?;
    write_rows(&dir.join("history.csv"), &outcome.history)?;
    println!("{}", dir.join("model.json").display());
    if let Some(last) = outcome.history.last() {
        println!(
            "final iteration: utility = {:.4}  slack = {:.4}  mu = {:.5}",
            last.utility, last.slack, last.mu
        );
    }
    Ok(())
}

fn cmd_eval(cfg: RunConfig) -> Result<()> {
    let model = load_model(cfg.eval.model.as_ref(), "eval.model")?;
    let params = cfg.study_params();
    let nets = match &cfg.eval.network {
        Some(path) => vec![load_network(path)?],
        None => {
            let seed = cfg.seed()?;
            (0..cfg.eval.trials)
                .map(|t| params.network(cfg.eval.m, seed + t as u64))
                .collect::<mnn_alloc::Result<Vec<_>>>()?
        }
    };
    let rows = nets
        .iter()
        .map(|n| compare_allocators(&model, n))
        .collect::<mnn_alloc::Result<Vec<_>>>()?;
    let dir = prepare_out(&cfg, "eval", &["eval.csv"])?;
    write_rows(&dir.join("eval.csv"), &rows)?;
    let mean = |f: fn(&mnn_alloc::experiments::TrialRates) -> f64| {
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    };
    println!(
        "mean sum-rate over {} network(s): gnn {:.4}  wmmse {:.4}  equal {:.4}  random {:.4}",
        rows.len(),
        mean(|r| r.gnn),
        mean(|r| r.wmmse),
        mean(|r| r.equal),
        mean(|r| r.random)
    );
    Ok(())
}

fn cmd_transfer(cfg: RunConfig) -> Result<()> {
    let model = load_model(cfg.transfer.model.as_ref(), "transfer.model")?;
    let seed = cfg.seed()?;
    let rows = run_transfer_study(
        &model,
        &cfg.transfer.sizes,
        cfg.transfer.trials,
        seed,
        &cfg.study_params(),
    )?;
    let dir = prepare_out(&cfg, "transfer", &["transfer.csv"])?;
    write_rows(&dir.join("transfer.csv"), &rows)?;
    for r in &rows {
        println!(
            "m = {:4}  gnn {:.4}  wmmse {:.4}  equal {:.4}  random {:.4}",
            r.m_eval, r.gnn_mean, r.wmmse_mean, r.equal_mean, r.random_mean
        );
    }
    Ok(())
}

fn cmd_noise(cfg: RunConfig) -> Result<()> {
    let template = cfg.train_config()?;
    let seed = cfg.seed()?;
    let params = cfg.study_params();
    let noise = &cfg.noise;
    let mut rows = Vec::new();
    for &depth in &noise.depths {
        let config = TrainConfig {
            arch: mnn_alloc::gnn::Architecture {
                layers: depth,
                ..template.arch
            },
            ..template
        };
        let outcome = run_training(&cfg, &config)?;
        let mean = noise_ratio_mean(
            &outcome.model,
            noise.m,
            noise.perturb_sigma,
            noise.trials,
            seed,
            &params,
        )?;
        println!(
            "L = {depth}  F = {}  mean ratio difference = {mean:.5}",
            config.arch.width
        );
        rows.push(mnn_alloc::experiments::NoiseRow {
            layers: depth,
            width: config.arch.width,
            ratio_diff_mean: mean,
        });
    }
    let dir = prepare_out(&cfg, "noise-stability", &["noise_stability.csv"])?;
    write_rows(&dir.join("noise_stability.csv"), &rows)?;
    Ok(())
}

fn cmd_theorem1(cfg: RunConfig) -> Result<()> {
    let sweep = cfg.theorem1_sweep()?;
    let reports = run_theorem1_sweep(&sweep)?;
    let dir = prepare_out(&cfg, "theorem1", &["theorem1.csv"])?;
    write_rows(&dir.join("theorem1.csv"), &reports)?;
    let feasible: Vec<&StabilityReport> = reports.iter().filter(|r| r.feasible).collect();
    let violations = feasible.iter().filter(|r| !r.holds).count();
    let mut ratios: Vec<f64> = feasible.iter().map(|r| r.slack_ratio()).collect();
    ratios.sort_by(f64::total_cmp);
    let median = ratios.get(ratios.len() / 2).copied().unwrap_or(f64::NAN);
    println!(
        "trials {}  feasible {}  violations {violations}  median diff/bound {median:.3e}",
        reports.len(),
        feasible.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct SpectralReport {
    operator: String,
    m: usize,
    network_seed: u64,
    eigenvalues: Vec<f64>,
    alpha: f64,
    /// Half-open index ranges into `eigenvalues`.
    groups: Vec<[usize; 2]>,
    partitions: usize,
    gap_index: usize,
    largest_gap: f64,
    filter: Vec<f64>,
    delta_budget: f64,
    fdt: FdtReport,
}

fn cmd_spectral(cfg: RunConfig) -> Result<()> {
    let s = &cfg.spectral;
    if !(s.alpha > 0.0) {
        return Err(usage(format!("alpha must be > 0, got {}", s.alpha)));
    }
    let kind: OperatorKind = s.operator.parse().map_err(|e| usage(format!("{e}")))?;
    let net = match &s.network {
        Some(path) => load_network(path)?,
        None => cfg.study_params().network(s.m, cfg.seed()?)?,
    };
    let op = laplacian(&net.s, kind)?;
    let dec = eig(&op)?;
    let partition = partition_spectrum(&dec.eigenvalues, s.alpha)?;
    let filter = FilterSpec::new(s.filter.clone()).map_err(|e| usage(format!("{e}")))?;
    let report = SpectralReport {
        operator: kind.to_string(),
        m: net.m,
        network_seed: net.seed,
        alpha: s.alpha,
        groups: partition.groups.iter().map(|g| [g.start, g.end]).collect(),
        partitions: partition.len(),
        gap_index: empirical_gap_index(&dec.eigenvalues, s.alpha),
        largest_gap: largest_gap(&dec.eigenvalues),
        filter: s.filter.clone(),
        delta_budget: s.delta_budget,
        fdt: fdt_check(&filter, &dec, &partition, s.delta_budget),
        eigenvalues: dec.eigenvalues,
    };
    let dir = prepare_out(&cfg, "spectral", &["spectral.json"])?;
    write_file(
        &dir.join("spectral.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "N = {}  N1 = {}  largest gap = {:.4e}  delta = {:.4e}  B = {:.4e}",
        report.partitions,
        report.gap_index,
        report.largest_gap,
        report.fdt.delta,
        report.fdt.lipschitz_b
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, channel, m } => {
            let mut cfg = base_config(&common)?;
            apply_channel(&mut cfg, &channel);
            if let Some(m) = m {
                cfg.generate.m = m;
            }
            cmd_generate(cfg)
        }
        Command::Train {
            common,
            channel,
            train,
        } => {
            let mut cfg = base_config(&common)?;
            apply_channel(&mut cfg, &channel);
            apply_train(&mut cfg, &train);
            cmd_train(cfg)
        }
        Command::Eval {
            common,
            channel,
            eval,
        } => {
            let mut cfg = base_config(&common)?;
            apply_channel(&mut cfg, &channel);
            set_path!(cfg.eval, eval, model, network);
            set!(cfg.eval, eval, m, trials);
            cmd_eval(cfg)
        }
        Command::Transfer {
            common,
            channel,
            transfer,
        } => {
            let mut cfg = base_config(&common)?;
            apply_channel(&mut cfg, &channel);
            set_path!(cfg.transfer, transfer, model);
            set!(cfg.transfer, transfer, sizes, trials);
            cmd_transfer(cfg)
        }
        Command::NoiseStability {
            common,
            channel,
            train,
            noise,
        } => {
            let mut cfg = base_config(&common)?;
            apply_channel(&mut cfg, &channel);
            apply_train(&mut cfg, &train);
            set!(cfg.noise, noise, depths, m, perturb_sigma, trials);
            cmd_noise(cfg)
        }
        Command::Theorem1 {
            common,
            theorem1: f,
        } => {
            let mut cfg = base_config(&common)?;
            set!(
                cfg.theorem1,
                f,
                sizes,
                layers,
                widths,
                epsilon_fractions,
                taps,
                alpha_gap_fraction,
                repeats
            );
            cmd_theorem1(cfg)
        }
        Command::Spectral {
            common,
            channel,
            spectral: f,
        } => {
            let mut cfg = base_config(&common)?;
            apply_channel(&mut cfg, &channel);
            set_path!(cfg.spectral, f, network);
            set!(cfg.spectral, f, m, operator, alpha, filter, delta_budget);
            cmd_spectral(cfg)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    if let Some(e) = err.downcast_ref::<mnn_alloc::Error>() {
        return match e {
            mnn_alloc::Error::Divergence(_) => EXIT_DIVERGENCE,
            mnn_alloc::Error::InvalidArgument(_) | mnn_alloc::Error::DimensionMismatch { .. } => {
                EXIT_USAGE
            }
            _ => EXIT_FAILURE,
        };
    }
    EXIT_FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
