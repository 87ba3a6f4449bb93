//! `fusekit` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use fusekit::bea::{alpha_table_csv, run_verification, toy_verification_problem, BEAConfig, BeaProblem, DEFAULT_LADDER};
use fusekit::fusion::{deep_fuse_many, load_checkpoint, save_checkpoint, Checkpoint, FusedNetwork, Strategy};
use fusekit::harness::{
    collate, fuse_point_csv, offset_csv, presets, sgd_train, FusePointSweep, Manifest, Status, TrainConfig,
};
use fusekit::net::{forward, make_task, toy_mlp, toy_transformer, Input, NetworkSpec, ToyDims};
use fusekit::Tensor;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] fusekit::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: serde_json::Error },
    #[error("training diverged at step {0}")]
    Diverged(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use fusekit::Error as E;
        match self {
            CliError::Diverged(_) => 3,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::Core(E::InvalidArgument(_) | E::Json(_) | E::Incompatible { .. } | E::InfeasibleBudget(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "fusekit", version, about = "Grow networks by deep fusion and study the training dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toy {
    Mlp,
    Transformer,
}

#[derive(Subcommand)]
enum Command {
    /// Write a randomly initialised checkpoint.
    Init {
        /// NetworkSpec JSON file.
        #[arg(long, conflicts_with = "toy", required_unless_present = "toy")]
        spec: Option<PathBuf>,
        /// Bundled architecture instead of a spec file.
        #[arg(long, value_enum)]
        toy: Option<Toy>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse two or more checkpoints, or one checkpoint with copies of itself.
    Fuse {
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "property")]
        strategy: Strategy,
        /// Standard deviation of the noise placed in the zero blocks.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Fuse a single checkpoint with itself `n` times.
        #[arg(long = "self", value_name = "N")]
        self_n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a checkpoint on a headerless CSV of feature rows, or on token ids.
    Forward {
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "tokens", required_unless_present = "tokens")]
        input: Option<PathBuf>,
        /// Comma-separated token ids.
        #[arg(long, value_delimiter = ',', requires = "seq_len")]
        tokens: Option<Vec<usize>>,
        #[arg(long)]
        seq_len: Option<usize>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the backward-error-analysis lemmas and the modified equation on
    /// the bundled toy MLP.
    VerifyBea {
        #[arg(long, default_value_t = 1e-2)]
        h: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Comma-separated step sizes for the order-of-accuracy fit.
        #[arg(long, value_delimiter = ',')]
        ladder: Option<Vec<f64>>,
        #[arg(long, default_value_t = 64)]
        integrator_steps: usize,
        /// Comma-separated α values for `alpha_table.csv`.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a network described by a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Start from this checkpoint instead of a fresh initialisation.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// When to fuse under a fixed compute budget.
    SweepFusepoint {
        /// FusePointSweep JSON; the bundled teacher study when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a freshly fused network under shifted learning-rate schedules.
    SweepOffset {
        /// OffsetPreset JSON; the bundled teacher study when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collate every CSV under a directory into one table per header.
    Report {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Config accepted by `train --config`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRun {
    network: NetworkSpec,
    #[serde(default)]
    init_seed: u64,
    train: TrainConfig,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| CliError::Config { path: path.into(), source })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(fusekit::Error::from)?;
    }
    fs::write(path, contents).map_err(fusekit::Error::from)?;
    Ok(())
}

fn load(path: &Path) -> Result<Checkpoint> {
    if !path.is_dir() {
        return Err(CliError::Usage(format!("{} is not a checkpoint directory", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

/// Prints to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(fusekit::Error::from(e).into()),
        _ => Ok(()),
    }
}

fn read_features(path: &Path) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let (mut data, mut cols) = (Vec::new(), None);
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(CliError::Usage(format!("{}: ragged row {}", path.display(), i + 1)));
        }
        for field in &rec {
            let v = field
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{}: row {}: `{field}` is not a number", path.display(), i + 1)))?;
            data.push(v);
        }
    }
    let cols = cols.ok_or_else(|| CliError::Usage(format!("{}: no rows", path.display())))?;
    Ok(Tensor::matrix(data.len() / cols, cols, data)?)
}

fn matrix_csv(t: &Tensor) -> String {
    let cols = *t.shape().last().unwrap_or(&1);
    let mut out = String::new();
    for row in t.data().chunks(cols.max(1)) {
        let fields: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { spec, toy, seed, out } => {
            let net = match (spec, toy) {
                (Some(path), _) => read_json::<NetworkSpec>(&path)?,
                (None, Some(Toy::Mlp)) => toy_mlp(),
                (None, Some(Toy::Transformer)) => toy_transformer(ToyDims::small()),
                (None, None) => unreachable!("clap requires one of --spec/--toy"),
            };
            net.validate()?;
            let params = net.init_params(seed)?;
            save_checkpoint(&out, &Checkpoint::plain(net.clone(), params))?;
            Manifest::new("init", seed, &net)?.write(&out)?;
        }
        Command::Fuse { checkpoints, out, strategy, sigma, self_n, seed } => {
            let ckpts = checkpoints.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
            let sources: Vec<_> = match self_n {
                Some(n) if ckpts.len() == 1 => vec![(&ckpts[0].network, &ckpts[0].params); n],
                Some(_) => return Err(CliError::Usage("--self takes exactly one checkpoint".into())),
                None if ckpts.len() < 2 => {
                    return Err(CliError::Usage("fusion needs two or more checkpoints, or --self N".into()))
                }
                None => ckpts.iter().map(|c| (&c.network, &c.params)).collect(),
            };
            let fused = deep_fuse_many(&sources, strategy, sigma, seed)?;
            fused.save(&out)?;
            let config = serde_json::json!({
                "checkpoints": checkpoints,
                "strategy": strategy,
                "sigma": sigma,
                "self": self_n,
            });
            Manifest::new("fuse", seed, &config)?.write(&out)?;
            eprintln!("fused {} sources: {} → {} params", sources.len(), sources[0].1.len(), fused.params.len());
        }
        Command::Forward { checkpoint, input, tokens, seq_len, out } => {
            let ckpt = load(&checkpoint)?;
            let x = match (input, tokens) {
                (Some(path), _) => Input::features(read_features(&path)?),
                (None, Some(ids)) => Input::tokens(ids, seq_len.expect("clap requires --seq-len")),
                (None, None) => unreachable!("clap requires one of --input/--tokens"),
            };
            let y = matrix_csv(&forward(&ckpt.network, &ckpt.params, &x)?);
            match out {
                Some(path) => write(&path, y)?,
                None => emit(&y)?,
            }
        }
        Command::VerifyBea { h, alpha, n, ladder, integrator_steps, alphas, seed, out } => {
            let cfg = BEAConfig { h, alpha, n, integrator_steps };
            let ladder = ladder.unwrap_or_else(|| DEFAULT_LADDER.to_vec());
            let report = run_verification(&cfg, &ladder, seed)?;
            let json = report.to_json()?;
            if let Some(dir) = out {
                write(&dir.join("bea_report.json"), format!("{json}\n"))?;
                write(&dir.join("bea_report.csv"), report.to_csv()?)?;
                let (fused, batch) = toy_verification_problem(n, seed)?;
                let rows = BeaProblem::new(&fused, &batch)?.bracket_vs_alpha(h, &alphas)?;
                write(&dir.join("alpha_table.csv"), alpha_table_csv(&rows)?)?;
                let config = serde_json::json!({ "bea": cfg, "ladder": ladder, "alphas": alphas });
                Manifest::new("verify-bea", seed, &config)?.write(&dir)?;
            }
            emit(&format!("{json}\n"))?;
            if !report.all_finite() {
                return Err(fusekit::Error::NonFinite("BEA report".into()).into());
            }
        }
        Command::Train { config, checkpoint, out } => {
            let cfg: TrainRun = read_json(&config)?;
            let data = make_task(&cfg.train.task)?;
            let (net, mut params, partition) = match checkpoint {
                Some(path) => {
                    let c = load(&path)?;
                    if c.network != cfg.network {
                        return Err(CliError::Usage(format!(
                            "{} does not hold the network described in {}",
                            path.display(),
                            config.display()
                        )));
                    }
                    (c.network, c.params, c.fusion.map(|m| m.partition))
                }
                None => {
                    let p = cfg.network.init_params(cfg.init_seed)?;
                    (cfg.network.clone(), p, None)
                }
            };
            let outcome = sgd_train(&net, &mut params, partition.as_ref(), &data, &cfg.train)?;
            write(&out.join("trajectory.csv"), outcome.trajectory.to_csv()?)?;
            write(&out.join("status.json"), serde_json::to_string_pretty(&outcome.status).map_err(fusekit::Error::from)?)?;
            save_checkpoint(&out.join("checkpoint"), &Checkpoint::plain(net, params))?;
            Manifest::new("train", cfg.train.seed, &cfg)?.write(&out)?;
            if let Status::Diverged { step } = outcome.status {
                return Err(CliError::Diverged(step));
            }
        }
        Command::SweepFusepoint { config, seed, out } => {
            let sweep: FusePointSweep = match config {
                Some(path) => read_json(&path)?,
                None => presets::fuse_point_sweep(seed),
            };
            let rows = sweep.run()?;
            write(&out.join("fusepoint.csv"), fuse_point_csv(&rows)?)?;
            Manifest::new("sweep-fusepoint", sweep.init_seed, &sweep)?.write(&out)?;
        }
        Command::SweepOffset { config, seed, out } => {
            let preset: presets::OffsetPreset = match config {
                Some(path) => read_json(&path)?,
                None => presets::OffsetPreset::new(seed),
            };
            let (fused, data): (FusedNetwork, _) = preset.prepare()?;
            let rows = preset.sweep.run(&fused, &data, Some(&out.join("heatmaps")))?;
            write(&out.join("offset.csv"), offset_csv(&rows)?)?;
            Manifest::new("sweep-offset", preset.sweep.seed, &preset)?.write(&out)?;
        }
        Command::Report { dir, out } => {
            if !dir.is_dir() {
                return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
            }
            let c = collate(&dir)?;
            if c.is_empty() {
                eprintln!("warning: no CSV rows under {}", dir.display());
            }
            let table = c.to_csv()?;
            match out {
                Some(path) => write(&path, table)?,
                None => emit(&table)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
