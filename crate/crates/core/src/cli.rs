//! Command-line front end. Exit codes: 0 success, 1 other failure,
//! 2 configuration error, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::continual::{count_trainable_params, ArchSpec, GatingMode, ParamStrategy, PRESETS};
use crate::{experiment, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "gainlora", version, about = "Gated low-rank adapters for continual learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the continual sequence for every seed and write a result bundle.
    Run(RunArgs),
    /// Run every gating variant and write a comparison table.
    Ablate(AblateArgs),
    /// Print trainable-parameter counts per new task.
    Params(ParamsArgs),
    /// Rebuild a run's bundle from its checkpoints.
    Report {
        /// Run directory containing seed-*/checkpoint.json.
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML experiment config.
    pub config: PathBuf,
    /// Seeds to run, replacing the config's list (repeatable).
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Output directory.
    #[arg(long, env = "GAINLORA_OUT")]
    pub out: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for parallel seeds (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Continue seeds from their checkpoints where present.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Comma-separated gating variants (default: all five).
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Architecture preset; omit for a table of every preset.
    #[arg(long)]
    pub preset: Option<String>,
    /// `olora`, `inflora`, `inc`, `seq`, optionally prefixed by `gain+`.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    /// Emit JSON instead of plain text.
    #[arg(long)]
    pub json: bool,
}

impl ExperimentArgs {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::load(&self.config, &self.overrides)?;
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
            cfg.validate()?;
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| default_out(&self.config));
        Ok((cfg, out))
    }

    fn install_pool(&self) -> Result<()> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        }
        Ok(())
    }
}

fn default_out(config: &Path) -> PathBuf {
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    PathBuf::from("runs").join(stem)
}

#[derive(Serialize)]
struct ParamRow {
    preset: String,
    strategy: String,
    rank: usize,
    trainable_params: u64,
}

fn params(args: &ParamsArgs) -> Result<()> {
    let presets: Vec<String> = match &args.preset {
        Some(p) => vec![p.clone()],
        None => PRESETS.iter().map(|s| s.to_string()).collect(),
    };
    let strategies: Vec<ParamStrategy> = match &args.strategy {
        Some(s) => vec![s.parse()?],
        None => ["olora", "gain+olora", "inflora", "gain+inflora"]
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?,
    };
    let mut rows = Vec::new();
    for p in &presets {
        let arch = ArchSpec::preset(p)?;
        for s in &strategies {
            rows.push(ParamRow {
                preset: p.clone(),
                strategy: s.to_string(),
                rank: args.rank,
                trainable_params: count_trainable_params(&arch, *s, args.rank),
            });
        }
    }
    if args.json {
        let out = if rows.len() == 1 {
            serde_json::to_string(&rows[0])?
        } else {
            serde_json::to_string(&rows)?
        };
        println!("{out}");
    } else if rows.len() == 1 {
        println!("{}", rows[0].trainable_params);
    } else {
        println!("{:<12} {:<14} {:>4} {:>12}", "preset", "strategy", "rank", "params");
        for r in &rows {
            println!(
                "{:<12} {:<14} {:>4} {:>12}",
                r.preset, r.strategy, r.rank, r.trainable_params
            );
        }
    }
    Ok(())
}

fn print_summary(label: &str, s: &crate::report::Summary) {
    let ft =
        s.ft.map_or_else(|| "n/a".to_string(), |f| format!("{:.2} ± {:.2}", f.mean, f.std));
    println!(
        "{label}AP {:.2} ± {:.2}  FT {ft}  ({} seeds)",
        s.ap.mean,
        s.ap.std,
        s.seeds.len()
    );
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(args) => {
            let (cfg, out) = args.exp.load()?;
            args.exp.install_pool()?;
            let (_, summary) = experiment::run_experiment(&cfg, Some(&out), args.resume)?;
            print_summary("", &summary);
            println!("wrote {}", out.display());
        }
        Command::Ablate(args) => {
            let (cfg, out) = args.exp.load()?;
            args.exp.install_pool()?;
            let variants: Vec<GatingMode> = if args.variants.is_empty() {
                GatingMode::ABLATIONS.to_vec()
            } else {
                args.variants.iter().map(|v| v.trim().parse()).collect::<Result<_>>()?
            };
            let rows = experiment::ablate(&cfg, &variants, Some(&out))?;
            for r in &rows {
                let ft = r.ft_mean.map_or_else(|| "n/a".into(), |f| format!("{f:.2}"));
                println!("{:<15} AP {:>6.2}  FT {:>6}", r.variant, r.ap_mean, ft);
            }
            println!("wrote {}", out.join("comparison.csv").display());
        }
        Command::Params(args) => params(args)?,
        Command::Report { dir } => {
            let summary = experiment::report(dir)?;
            print_summary("", &summary);
        }
    }
    Ok(())
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_config() {
        2
    } else if err.is_numeric() {
        3
    } else {
        1
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
