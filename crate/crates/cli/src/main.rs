mod data;
mod manifest;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lpom::lifted::{rho_from_weights, tau_for, Loss, Penalties};
use lpom::sgd::{train_sgd_with, SgdConfig};
use lpom::trainer::{evaluate, train_lpom_with};
use lpom::{Activation, Checkpoint, EpochMetrics, LpomError, Parallelism, TrainConfig, XUpdateMode};

use crate::data::{BlobShape, DatasetKind};
use crate::manifest::RunManifest;

pub const METRICS_HEADER: &str = "epoch,train_acc,test_acc,objective_mean,wall_seconds";
pub const CHECKPOINT_NAME: &str = "model.lpomckpt";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing inputs, incompatible shapes. Exit code 2.
    Config(String),
    /// Failures while running. Exit code 1.
    Runtime(LpomError),
}

impl From<LpomError> for CliError {
    fn from(e: LpomError) -> Self {
        match e {
            LpomError::Config(msg) => CliError::Config(msg),
            e @ (LpomError::DimensionMismatch { .. } | LpomError::Domain { .. }) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Parser)]
#[command(
    name = "lpom",
    version,
    about = "Train feed-forward networks by block coordinate descent"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write metrics.csv, a checkpoint and manifest.json.
    Train(TrainArgs),
    /// Print the accuracy of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Print the contraction certificates of a checkpoint.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Lpom,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "mnist")]
    dataset: DatasetKind,
    /// Directory holding the dataset files under their standard names.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Distance between blob centres, in standard deviations.
    #[arg(long, default_value_t = 8.0)]
    blob_separation: f64,
    /// Keep only the first N training examples.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Keep only the first N test examples.
    #[arg(long)]
    test_limit: Option<usize>,
}

impl DataArgs {
    fn load(&self, shape: BlobShape) -> Result<data::Splits, CliError> {
        let mut splits = data::load(self.dataset, self.data_dir.as_deref(), shape)?;
        if let Some(n) = self.train_limit {
            splits.train = splits.train.head(n)?;
        }
        if let Some(n) = self.test_limit {
            splits.test = splits.test.head(n)?;
        }
        Ok(splits)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "lpom")]
    method: Method,
    /// Layer sizes, input first.
    #[arg(long, default_value = "784,300,10")]
    arch: String,
    /// name[:param], e.g. relu, leaky_relu:0.1, elu:1.
    #[arg(long, default_value = "relu")]
    activation: String,
    /// One penalty weight for all blocks, or one per non-input layer.
    #[arg(long, default_value = "20")]
    mu: String,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 17)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    k1: usize,
    #[arg(long, default_value_t = 30)]
    k2: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "serial")]
    x_mode: XMode,
    /// Activation sweeps per batch.
    #[arg(long)]
    x_sweeps: Option<usize>,
    /// Relax activation updates whose contraction bound is not below one.
    #[arg(long, value_parser = clap::builder::BoolishValueParser::new())]
    damping: Option<bool>,
    /// Relative pseudo-inverse ridge.
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    no_bias: bool,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long)]
    sequential: bool,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    /// Write 0 for wall_seconds so repeated runs give identical files.
    #[arg(long)]
    omit_wall_time: bool,
    #[arg(long, default_value = "runs/latest")]
    out_dir: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum XMode {
    Serial,
    Jacobi,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Penalty weights the certificates are evaluated at.
    #[arg(long, default_value = "20")]
    mu: String,
    /// One key=value record per line.
    #[arg(long)]
    kv: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("cannot parse {what} entry '{p}'")))
        })
        .collect()
}

fn parse_activation(s: &str) -> Result<Activation, CliError> {
    s.parse().map_err(CliError::from)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        layer_sizes: parse_list("--arch", &a.arch)?,
        activation: parse_activation(&a.activation)?,
        mu: parse_list("--mu", &a.mu)?,
        batch_size: a.batch_size,
        epochs: a.epochs,
        k1: a.k1,
        k2: a.k2,
        seed: a.seed,
        x_mode: match a.x_mode {
            XMode::Serial => XUpdateMode::Serial,
            XMode::Jacobi => XUpdateMode::Jacobi,
        },
        x_sweeps: a.x_sweeps.unwrap_or(defaults.x_sweeps),
        safeguard_damping: a.damping.unwrap_or(defaults.safeguard_damping),
        ridge: a.ridge.map_or(defaults.ridge, lpom::apg::Ridge::Relative),
        bias: !a.no_bias,
        parallelism: if a.sequential {
            Parallelism::Sequential
        } else {
            Parallelism::default()
        },
        eval_train: true,
    };
    config.validate()?;
    Ok(config)
}

fn metrics_row(m: &EpochMetrics, omit_wall_time: bool) -> String {
    let wall = if omit_wall_time { 0.0 } else { m.wall_seconds };
    format!(
        "{},{},{},{},{}",
        m.epoch, m.train_accuracy, m.test_accuracy, m.objective_mean, wall
    )
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let config = train_config(&a)?;
    let sgd = SgdConfig {
        learning_rate: a.lr,
        momentum: a.momentum,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    if a.method == Method::Sgd {
        sgd.validate()?;
    }
    let depth = config.depth();
    let splits = a.data.load(BlobShape {
        dim: config.layer_sizes[0],
        classes: config.layer_sizes[depth],
        separation: a.data.blob_separation,
        seed: a.seed,
    })?;

    fs::create_dir_all(&a.out_dir)?;
    let mut csv = BufWriter::new(File::create(a.out_dir.join("metrics.csv"))?);
    writeln!(csv, "{METRICS_HEADER}")?;
    csv.flush()?;
    let started = std::time::Instant::now();
    let mut on_epoch = |m: &EpochMetrics, _: &lpom::Weights| -> lpom::Result<()> {
        writeln!(csv, "{}", metrics_row(m, a.omit_wall_time))?;
        csv.flush()?;
        Ok(())
    };
    let (weights, metrics) = match a.method {
        Method::Lpom => train_lpom_with(&config, &splits.train, &splits.test, &mut on_epoch)?,
        Method::Sgd => train_sgd_with(&sgd, &config, &splits.train, &splits.test, &mut on_epoch)?,
    };
    drop(csv);
    Checkpoint::new(weights, config.activation).save(a.out_dir.join(CHECKPOINT_NAME))?;

    let wall = if a.omit_wall_time {
        0.0
    } else {
        started.elapsed().as_secs_f64()
    };
    let manifest = RunManifest::new(
        format!("{:?}", a.method).to_lowercase(),
        &config,
        (a.method == Method::Sgd).then_some(&sgd),
        a.data.dataset,
        splits.files,
        [splits.train.len(), splits.test.len()],
        metrics.len(),
        wall,
    );
    manifest.save(&a.out_dir.join("manifest.json"))?;
    if let Some(last) = metrics.last() {
        println!(
            "epoch {}: train {:.4} test {:.4}",
            last.epoch, last.train_accuracy, last.test_accuracy
        );
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let w = &ckpt.weights;
    let splits = a.data.load(BlobShape {
        dim: w.input_dim(),
        classes: w.output_dim(),
        separation: a.data.blob_separation,
        seed: 0,
    })?;
    let set = match a.split {
        Split::Train => &splits.train,
        Split::Test => &splits.test,
    };
    if set.feature_dim() != w.input_dim() || set.class_count != w.output_dim() {
        return Err(CliError::Config(format!(
            "checkpoint expects {} inputs and {} classes, dataset has {} and {}",
            w.input_dim(),
            w.output_dim(),
            set.feature_dim(),
            set.class_count
        )));
    }
    println!("{:.4}", evaluate(w, ckpt.activation, set)?);
    Ok(())
}

fn status(value: f64) -> &'static str {
    if value < 1.0 {
        "PASS"
    } else {
        "WARN"
    }
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (w, act) = (&ckpt.weights, ckpt.activation);
    let mu: Vec<f64> = parse_list("--mu", &a.mu)?;
    let penalties = match mu.as_slice() {
        [m] => Penalties::uniform(*m, w.depth())?,
        many => Penalties::new(many.to_vec())?,
    };
    if penalties.len() != w.depth() {
        return Err(CliError::Config(format!(
            "{} penalty weights for a depth-{} network",
            penalties.len(),
            w.depth()
        )));
    }
    let (gamma, beta) = act.lipschitz_constants();
    let mut notes = Vec::new();
    if act.is_nonsmooth() {
        notes.push("nonsmooth activation: certificates use the a.e. derivative bound");
    }
    if gamma > 1.0 {
        notes.push("activation slope above one tightens both certificates");
    }

    let mut out = String::new();
    if a.kv {
        out += &format!("activation={act} gamma={gamma} beta={beta}\n");
    } else {
        out += &format!("activation {act}  gamma {gamma}  beta {beta}\n");
    }
    for block in 1..w.depth() {
        let rho = rho_from_weights(w, act, &penalties, block)?;
        if a.kv {
            out += &format!("block={block} kind=rho value={rho} status={}\n", status(rho));
        } else {
            out += &format!("block {block}  rho {rho:.6}  {}\n", status(rho));
        }
    }
    let tau = tau_for(act, Loss::LeastSquares, penalties.mu(w.depth()));
    if a.kv {
        out += &format!("block={} kind=tau value={tau} status={}\n", w.depth(), status(tau));
        for n in notes {
            out += &format!("note={}\n", n.replace(' ', "_"));
        }
    } else {
        out += &format!("block {}  tau {tau:.6}  {} (output)\n", w.depth(), status(tau));
        for n in notes {
            out += &format!("note: {n}\n");
        }
    }
    print!("{out}");
    Ok(())
}
