//! `pel` command-line interface.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pel_core::Error;

#[derive(Parser, Debug)]
#[command(name = "pel", version, about = "Two-stream face-forgery detector: data, training, evaluation, visualization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Config file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "pel-out")]
    pub out: std::path::PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Export the synthetic dataset as PPM/PGM files plus manifest.csv.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Write the 192 frequency bands of an image as PGM files.
    Decompose {
        #[command(flatten)]
        common: Common,
        /// Input PPM image.
        #[arg(long)]
        input: std::path::PathBuf,
        /// Window stride.
        #[arg(long, default_value_t = 2)]
        stride: usize,
    },
    /// Train on the synthetic dataset; writes model.ckpt and train_log.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint with training state.
        #[arg(long)]
        resume: Option<std::path::PathBuf>,
    },
    /// Clean test-set metrics; writes report.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<std::path::PathBuf>,
    },
    /// Metric changes under noise, salt-and-pepper and blur; writes perturb.csv.
    PerturbEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<std::path::PathBuf>,
    },
    /// Train the eight component variants; writes ablation.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Grad-CAM heatmaps for fake test samples.
    Cam {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<std::path::PathBuf>,
        /// rgb or freq.
        #[arg(long, default_value = "rgb")]
        stream: String,
        /// 1-based block; defaults to the second block.
        #[arg(long, default_value_t = 2)]
        block: usize,
        /// Number of fake test samples to render.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Enhancement residual heatmaps |f_out - f_in| for test samples.
    Residuals {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<std::path::PathBuf>,
        /// self or mutual.
        #[arg(long, default_value = "self")]
        module: String,
        #[arg(long, default_value_t = 2)]
        block: usize,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
}

fn run(cli: Cli) -> pel_core::Result<()> {
    match cli.command {
        Command::GenData { common } => commands::gen_data(&common),
        Command::Decompose { common, input, stride } => commands::decompose(&common, &input, stride),
        Command::Train { common, resume } => commands::train(&common, resume.as_deref()),
        Command::Eval { common, checkpoint } => commands::eval(&common, checkpoint.as_deref()),
        Command::PerturbEval { common, checkpoint } => commands::perturb_eval(&common, checkpoint.as_deref()),
        Command::Ablate { common } => commands::ablate(&common),
        Command::Cam {
            common,
            checkpoint,
            stream,
            block,
            count,
        } => commands::cam(&common, checkpoint.as_deref(), &stream, block, count),
        Command::Residuals {
            common,
            checkpoint,
            module,
            block,
            count,
        } => commands::residuals(&common, checkpoint.as_deref(), &module, block, count),
    }
}

fn main() -> ExitCode {
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
        Err(e @ Error::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
