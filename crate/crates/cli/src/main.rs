use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use arex::dataio::ExperimentConfig;
use arex_cli::{print_examples, resolve_out_dir, run, Command, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "arex", version, about = "Explanation-design experiments and condition checks")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Utility changes under Taylor and random recommendation explanations.
    Noharm(Common),
    /// Joint training against fixed counterfactual policies on synthetic data.
    SyntheticRrm(Common),
    /// The same comparison on the credit data.
    CreditRrm {
        #[command(flatten)]
        common: Common,
        /// Credit data file; overrides `credit.data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Check whether a surrogate can mislead agents.
    Check {
        #[command(flatten)]
        common: Common,
        /// Print the worked examples.
        #[arg(long)]
        examples: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = OUTPUT_ROOT_ENV, hide = true)]
    output_root: Option<PathBuf>,
}

fn execute(command: Command, common: &Common, data: Option<PathBuf>) -> arex::Result<ExitCode> {
    let Some(path) = &common.config else {
        return Err(arex::Error::config("--config", "a configuration file is required"));
    };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = resolve_out_dir(&cfg, common.out.as_deref(), common.output_root.as_deref());
    let report = run(command, cfg, &out, data.as_deref())?;
    print!("{}", report.summary);
    println!("outputs: {}", report.out_dir.display());
    if report.failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failed arms: {}", report.failed.join(", "));
        Ok(ExitCode::from(2))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Sub::Noharm(c) => execute(Command::Noharm, &c, None),
        Sub::SyntheticRrm(c) => execute(Command::SyntheticRrm, &c, None),
        Sub::CreditRrm { common, data } => execute(Command::CreditRrm, &common, data),
        Sub::Check { common, examples } => {
            let shown = if examples {
                print_examples(std::io::stdout().lock()).map(|_| println!())
            } else {
                Ok(())
            };
            match (shown, &common.config) {
                (Ok(()), None) if examples => Ok(ExitCode::SUCCESS),
                (Ok(()), _) => execute(Command::Check, &common, None),
                (Err(e), _) => Err(e),
            }
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
