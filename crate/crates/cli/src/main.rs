use std::path::PathBuf;
use std::process::ExitCode;

use cardioforge_cli::{run, Command, Common};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cardioforge", version, about = "Heart-sound classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run directory; every command writes into RUN_DIR/<command>/.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Config file, file name under $CARDIOFORGE_CONFIG_DIR, or preset
    /// (toy, single_pcg, multimodal, multichannel).
    #[arg(long)]
    config: Option<String>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic fixture subjects.
    Fixtures {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of subjects (default from the config).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Resample, filter and normalize recordings and fix the data split.
    Preprocess {
        #[command(flatten)]
        common: CommonArgs,
        /// Manifest of external recordings instead of the run's fixtures.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Build the noise bank and a preview of offline augmented copies.
    Augment {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the diffusion generators the schedule needs.
    SynthTrain {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sample synthetic subjects from the trained generators.
    SynthGenerate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the classifier through the schedule.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Original data only, no augmentation.
        #[arg(long)]
        baseline: bool,
        /// Also write a checkpoint after every epoch.
        #[arg(long)]
        keep_epochs: bool,
    },
    /// Score the test subjects with every trained model.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Mean and spread of the metrics across runs, plus ROC bands.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn split(cmd: Cmd) -> (Command, CommonArgs) {
    match cmd {
        Cmd::Fixtures { common, n } => (Command::Fixtures { n_subjects: n }, common),
        Cmd::Preprocess { common, input } => (Command::Preprocess { input }, common),
        Cmd::Augment { common } => (Command::Augment, common),
        Cmd::SynthTrain { common } => (Command::SynthTrain, common),
        Cmd::SynthGenerate { common } => (Command::SynthGenerate, common),
        Cmd::Train {
            common,
            baseline,
            keep_epochs,
        } => (Command::Train { baseline, keep_epochs }, common),
        Cmd::Evaluate { common } => (Command::Evaluate, common),
        Cmd::Report { common } => (Command::Report, common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = split(cli.command);
    let common = Common {
        out: args.out,
        config: args.config,
        seed: args.seed,
    };
    match run(&command, &common) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = if e.is_user_error() { 1 } else { 2 };
            let detail = serde_json::json!({
                "command": command.name(),
                "status": "error",
                "error": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{detail}");
            ExitCode::from(code)
        }
    }
}
