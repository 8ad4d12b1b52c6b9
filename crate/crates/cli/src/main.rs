use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gpfr_core::Error;

mod config;
mod stages;

use config::RunConfig;

/// Zero-shot recognition by synthesizing pseudo feature representations.
#[derive(Parser, Debug)]
#[command(name = "gpfr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Key-value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration entry (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory for artifacts and reports
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Feature file (dataset = table)
    #[arg(long)]
    features: Option<PathBuf>,
    /// Attribute CSV (dataset = table)
    #[arg(long)]
    attributes: Option<PathBuf>,
    /// Split CSV (dataset = table)
    #[arg(long)]
    split: Option<PathBuf>,
    /// Label CSV (dataset = table)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Upper bound on worker threads; all stages currently run on one
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        for pair in &self.overrides {
            c.set_pair(pair)?;
        }
        let paths = [
            ("out", &self.out),
            ("features", &self.features),
            ("attributes", &self.attributes),
            ("split", &self.split),
            ("labels", &self.labels),
        ];
        for (key, value) in paths {
            if let Some(p) = value {
                c.set(key, &p.to_string_lossy())?;
            }
        }
        if let Some(s) = self.seed {
            c.set("seed", &s.to_string())?;
        }
        if self.threads == 0 {
            bail!(Error::Usage("--threads must be at least 1".into()));
        }
        c.validate()?;
        log::debug!("configuration {}:\n{}", c.hash(), c.to_text());
        Ok(c)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Mode {
    Zsl,
    Supervised,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Baseline {
    Cslm,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Colorize MNIST into the 1000-class C-MNIST set
    CmnistGen {
        #[arg(long)]
        mnist_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train the joint attribute feature extractor on the seen classes
    TrainJafe(RunArgs),
    /// Build the attribute repository from the trained extractor
    BuildRepo(RunArgs),
    /// Synthesize the first pseudo set for unseen and validation classes
    Synth(RunArgs),
    /// Train the class predictor with iterative synthesis
    TrainPred(RunArgs),
    /// Evaluate on the unseen test samples, or run the supervised comparison
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = Mode::Zsl)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Baseline::Cslm)]
        baseline: Baseline,
    },
    /// Top-ranked test items for every unseen class
    Retrieve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 8)]
        top: usize,
    },
    /// Export combined representations of a data part as a feature file
    ExportFeatures {
        #[command(flatten)]
        run: RunArgs,
        /// train, validation or test
        #[arg(long, default_value = "test")]
        part: String,
    },
    /// All zero-shot stages in order
    Run(RunArgs),
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CmnistGen { mnist_dir, out, seed } => stages::cmnist_gen(&mnist_dir, &out, seed),
        Command::TrainJafe(args) => {
            let c = args.resolve()?;
            stages::stage_train_jafe(&c, &stages::load_data(&c)?)
        }
        Command::BuildRepo(args) => {
            let c = args.resolve()?;
            stages::stage_build_repo(&c, &stages::load_data(&c)?)
        }
        Command::Synth(args) => {
            let c = args.resolve()?;
            stages::stage_synth(&c, &stages::load_data(&c)?)
        }
        Command::TrainPred(args) => {
            let c = args.resolve()?;
            stages::stage_train_pred(&c, &stages::load_data(&c)?)
        }
        Command::Eval { run, mode, baseline: Baseline::Cslm } => {
            let c = run.resolve()?;
            match mode {
                Mode::Zsl => stages::stage_eval(&c, &stages::load_data(&c)?).map(|_| ()),
                Mode::Supervised => stages::stage_supervised(&c),
            }
        }
        Command::Retrieve { run, top } => {
            let c = run.resolve()?;
            let path = stages::stage_retrieve(&c, &stages::load_data(&c)?, top)?;
            log::info!("wrote {}", path.display());
            Ok(())
        }
        Command::ExportFeatures { run, part } => {
            let c = run.resolve()?;
            let path = stages::stage_export(&c, &stages::load_data(&c)?, &part)?;
            log::info!("wrote {}", path.display());
            Ok(())
        }
        Command::Run(args) => {
            let c = args.resolve()?;
            let data = stages::load_data(&c)?;
            stages::stage_train_jafe(&c, &data)?;
            stages::stage_build_repo(&c, &data)?;
            stages::stage_synth(&c, &data)?;
            stages::stage_train_pred(&c, &data)?;
            stages::stage_eval(&c, &data).map(|_| ())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(|e| e.exit_code() as u8)
        .unwrap_or(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
