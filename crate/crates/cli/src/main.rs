use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcode_core::config::ConfigOverrides;
use dcode_core::decomposer::{ContentMode, DecomposeError};

mod commands;

/// Dynamic frame/token compression and question decomposition for video QA.
#[derive(Parser, Debug)]
#[command(name = "dcode", version, about)]
pub struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Emit machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// (ask) Emit the full decomposition trace as JSON.
    #[arg(long, global = true)]
    trace: bool,
    /// (ask) Use in-process scripted endpoints instead of HTTP.
    #[arg(long, global = true)]
    mock: bool,
    /// (ask) JSON script for --mock: {"decomposition": ..., "answers": {...}, "fail": [...]}.
    #[arg(long, global = true, requires = "mock")]
    mock_script: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pick N frames: uniform coverage plus greedy supplementary frames.
    Select {
        features: PathBuf,
        #[command(flatten)]
        params: ParamFlags,
    },
    /// Select and compress, write a DCCT container, print token statistics.
    Compress {
        features: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamFlags,
    },
    /// Answer a question about a video with question decomposition.
    Ask {
        features: PathBuf,
        #[arg(long, short)]
        question: String,
        /// Directory of frame images (sorted by name = frame order) sent to the QA backend.
        #[arg(long)]
        frames_dir: Option<PathBuf>,
        /// Also write the compressed tokens as a DCCT container.
        #[arg(long)]
        compressed_out: Option<PathBuf>,
        #[command(flatten)]
        params: ParamFlags,
        #[command(flatten)]
        ask: AskFlags,
    },
    /// Compression statistics over a hyperparameter grid for every .dcft file in a directory.
    Sweep {
        features_dir: PathBuf,
        /// CSV destination (stdout when absent).
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_frames: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        beta: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        tau: Vec<f64>,
        #[arg(long)]
        max_patch_distance: Option<usize>,
    },
    /// Check DCFT (or DCCT) containers against every invariant.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Write a seeded synthetic DCFT container.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        tokens: usize,
        #[arg(long, default_value_t = 16)]
        d_global: usize,
        #[arg(long, default_value_t = 16)]
        d_token: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug, Default)]
struct ParamFlags {
    #[arg(long)]
    n_frames: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_patch_distance: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct AskFlags {
    /// sub-answers, sub-questions or none.
    #[arg(long)]
    content_mode: Option<ContentMode>,
    /// Built-in template name or template file path.
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    max_subquestions: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    concurrency: Option<usize>,
}

impl ParamFlags {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            n_frames: self.n_frames,
            alpha: self.alpha,
            beta: self.beta,
            tau: self.tau,
            max_patch_distance: self.max_patch_distance,
            ..Default::default()
        }
    }
}

impl AskFlags {
    fn apply(&self, o: &mut ConfigOverrides) {
        o.content_mode = self.content_mode;
        o.template = self.template.clone();
        o.max_subquestions = self.max_subquestions;
        o.temperature = self.temperature;
        o.concurrency = self.concurrency;
    }
}

/// 2 for configuration or input validation problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dcode_core::Error>() {
            return if e.is_usage_error() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<DecomposeError>() {
            return match e {
                DecomposeError::Validation(_) | DecomposeError::Template(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
