use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dcode_core::compressed_store::{read_compressed_file, write_compressed_file, DCCT_MAGIC};
use dcode_core::config::{ConfigOverrides, PipelineConfig};
use dcode_core::decomposer::{ask, AskOptions, ChatBackend, HttpChatClient, PromptTemplate, QaBackend, VisualContext};
use dcode_core::feature_store::{read_container_file, validate, video_id_from_path, write_container_file};
use dcode_core::mock::{MockScript, ScriptedBackend};
use dcode_core::stats::{sweep_video, CompressionStats, SweepGrid, SweepRow, STATS_SCHEMA};
use dcode_core::synthetic::{synthetic_video, SyntheticSpec};
use dcode_core::{compress_video, select_frames, SelectionResult, VideoFeatureSet};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::{AskFlags, Cli, Command, ParamFlags};

/// Bad input that is not already a typed library error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: &Cli) -> Result<u8> {
    let file = match &cli.config {
        Some(p) => Some(ConfigOverrides::from_file(p).with_context(|| format!("config {}", p.display()))?),
        None => None,
    };
    let config = |flags: ConfigOverrides| PipelineConfig::resolve(file.as_ref(), &flags);

    match &cli.command {
        Command::Select { features, params } => {
            let cfg = config(params.overrides())?;
            let set = load(features)?;
            let n = cfg.require_n_frames()?;
            let sel = select_frames(&set, n, cfg.alpha)?;
            print_selection(cli.json, &set, n, cfg.alpha, &sel)?;
            Ok(0)
        }
        Command::Compress { features, out, params } => {
            let cfg = config(params.overrides())?;
            let set = load(features)?;
            let (_, stats) = select_and_compress(&set, &cfg, Some(out))?;
            print_stats(cli.json, &stats)?;
            Ok(0)
        }
        Command::Ask {
            features,
            question,
            frames_dir,
            compressed_out,
            params,
            ask: flags,
        } => cmd_ask(cli, config(ask_overrides(params, flags))?, features, question, frames_dir.as_deref(), compressed_out.as_deref()),
        Command::Sweep {
            features_dir,
            out,
            n_frames,
            alpha,
            beta,
            tau,
            max_patch_distance,
        } => {
            let cfg = config(ConfigOverrides {
                n_frames: *n_frames,
                max_patch_distance: *max_patch_distance,
                ..Default::default()
            })?;
            let axis = |given: &Vec<f64>, default: f64| if given.is_empty() { vec![default] } else { given.clone() };
            let grid = SweepGrid {
                alphas: axis(alpha, cfg.alpha),
                betas: axis(beta, cfg.beta),
                taus: axis(tau, cfg.tau),
            };
            cmd_sweep(features_dir, out.as_deref(), &grid, cfg.require_n_frames()?, cfg.max_patch_distance)
        }
        Command::Validate { files } => cmd_validate(cli.json, files),
        Command::Synth {
            out,
            frames,
            tokens,
            d_global,
            d_token,
            seed,
        } => {
            if *frames == 0 || *tokens == 0 || *d_global == 0 || *d_token == 0 {
                return Err(usage("synthetic dimensions must all be >= 1"));
            }
            let spec = SyntheticSpec::new(*frames, *tokens, *d_global, *d_token, *seed);
            let set = synthetic_video(video_id_from_path(out), &spec);
            let bytes = write_container_file(&set, out)?;
            if !cli.json {
                println!("wrote {} ({bytes} bytes)", out.display());
            }
            Ok(0)
        }
    }
}

fn ask_overrides(params: &ParamFlags, flags: &AskFlags) -> ConfigOverrides {
    let mut o = params.overrides();
    flags.apply(&mut o);
    o
}

fn load(path: &Path) -> Result<VideoFeatureSet> {
    read_container_file(path).with_context(|| format!("reading {}", path.display()))
}

fn select_and_compress(
    set: &VideoFeatureSet,
    cfg: &PipelineConfig,
    out: Option<&Path>,
) -> Result<(SelectionResult, CompressionStats)> {
    let sel = select_frames(set, cfg.require_n_frames()?, cfg.alpha)?;
    let video = compress_video(set, &sel, &cfg.compression())?;
    if let Some(out) = out {
        write_compressed_file(&video, out).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok((sel, CompressionStats::from_compressed(&set.video_id, &video)))
}

fn print_selection(as_json: bool, set: &VideoFeatureSet, n: usize, alpha: f64, sel: &SelectionResult) -> Result<()> {
    if as_json {
        let v = json!({
            "video_id": set.video_id,
            "frames": set.frame_count(),
            "n_frames": n,
            "alpha": alpha,
            "selection": sel,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        println!("selected:      {}", list(&sel.selected));
        println!("uniform:       {}", list(&sel.uniform_part));
        println!("supplementary: {}", list(&sel.supplementary_part));
        if !sel.zero_norm_frames.is_empty() {
            println!("zero-norm:     {}", list(&sel.zero_norm_frames));
        }
    }
    Ok(())
}

fn print_stats(as_json: bool, s: &CompressionStats) -> Result<()> {
    if as_json {
        println!("{}", serde_json::to_string_pretty(s)?);
    } else {
        println!("video:            {}", s.video_id);
        println!("frames:           {} of {}", s.n_frames, s.frames);
        println!("tokens per frame: {} -> {} retained", s.tokens_per_frame, s.retained_per_frame);
        println!("representatives:  {:?}", s.representatives_per_frame);
        println!("total tokens:     {}", s.total_tokens);
        println!("ratio:            {:.6}", s.compression_ratio);
    }
    Ok(())
}

fn cmd_ask(
    cli: &Cli,
    cfg: PipelineConfig,
    features: &Path,
    question: &str,
    frames_dir: Option<&Path>,
    compressed_out: Option<&Path>,
) -> Result<u8> {
    if question.trim().is_empty() {
        return Err(usage("question must not be empty"));
    }
    let opts = AskOptions {
        template: PromptTemplate::resolve(&cfg.template)?,
        temperature: cfg.temperature,
        max_subquestions: cfg.max_subquestions,
        content_mode: cfg.content_mode,
        concurrency: cfg.concurrency,
    };
    let set = load(features)?;
    let (sel, stats) = select_and_compress(&set, &cfg, compressed_out)?;
    let visual = match frames_dir {
        Some(dir) => VisualContext::from_frames_dir(dir, &sel.selected)
            .with_context(|| format!("reading frames from {}", dir.display()))?,
        None => VisualContext::indices_only(&sel.selected),
    };

    let outcome = if cli.mock {
        let script = match &cli.mock_script {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str::<MockScript>(&text)
                    .map_err(|e| usage(format!("mock script {}: {e}", p.display())))?
            }
            None => MockScript::default(),
        };
        let backend = ScriptedBackend::new(script);
        ask(question, &backend, &backend, &visual, &opts)?
    } else {
        let chat = HttpChatClient::new(cfg.chat_endpoint()).map_err(|e| usage(e.to_string()))?;
        let qa = HttpChatClient::new(cfg.qa_endpoint()).map_err(|e| usage(e.to_string()))?;
        ask(question, &chat as &dyn ChatBackend, &qa as &dyn QaBackend, &visual, &opts)?
    };

    if cli.trace {
        let trace = json!({
            "video_id": set.video_id,
            "answer": outcome.answer,
            "plan": outcome.plan,
            "backend_calls": outcome.backend_calls,
            "selection": sel,
            "compression": stats,
        });
        println!("{}", serde_json::to_string_pretty(&trace)?);
    } else if cli.json {
        println!("{}", json!({ "answer": outcome.answer }));
    } else {
        println!("{}", outcome.answer);
    }
    Ok(0)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    schema: &'static str,
    video_id: &'a str,
    alpha: f64,
    beta: f64,
    tau: f64,
    frames: usize,
    n_frames: usize,
    tokens_per_frame: usize,
    retained_per_frame: usize,
    total_tokens: usize,
    compression_ratio: f64,
    representatives_per_frame: String,
}

impl<'a> From<&'a SweepRow> for CsvRow<'a> {
    fn from(r: &'a SweepRow) -> Self {
        let s = &r.stats;
        CsvRow {
            schema: STATS_SCHEMA,
            video_id: &s.video_id,
            alpha: r.point.alpha,
            beta: r.point.beta,
            tau: r.point.tau,
            frames: s.frames,
            n_frames: s.n_frames,
            tokens_per_frame: s.tokens_per_frame,
            retained_per_frame: s.retained_per_frame,
            total_tokens: s.total_tokens,
            compression_ratio: s.compression_ratio,
            representatives_per_frame: s
                .representatives_per_frame
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        }
    }
}

const CSV_HEADER: [&str; 12] = [
    "schema",
    "video_id",
    "alpha",
    "beta",
    "tau",
    "frames",
    "n_frames",
    "tokens_per_frame",
    "retained_per_frame",
    "total_tokens",
    "compression_ratio",
    "representatives_per_frame",
];

fn cmd_sweep(
    dir: &Path,
    out: Option<&Path>,
    grid: &SweepGrid,
    n_frames: usize,
    max_patch_distance: Option<usize>,
) -> Result<u8> {
    grid.validate()?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("dcft")))
        .collect();
    files.sort();

    // Any bad file or out-of-range N aborts the sweep before output is written.
    let per_video: Vec<Vec<SweepRow>> = files
        .par_iter()
        .map(|p| -> Result<Vec<SweepRow>> {
            let set = load(p)?;
            sweep_video(&set, n_frames, grid, max_patch_distance).with_context(|| format!("sweeping {}", p.display()))
        })
        .collect::<Result<_>>()?;

    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for row in per_video.iter().flatten() {
        w.serialize(CsvRow::from(row))?;
    }
    w.flush()?;
    Ok(0)
}

fn cmd_validate(as_json: bool, files: &[PathBuf]) -> Result<u8> {
    let mut reports = Vec::new();
    for path in files {
        let problems: Vec<String> = match check_file(path) {
            Ok(p) => p,
            Err(e) => match e.downcast_ref::<dcode_core::Error>() {
                Some(dcode_core::Error::Validation(v)) => v.iter().map(ToString::to_string).collect(),
                Some(dcode_core::Error::Io(_)) | None => return Err(e),
                Some(other) => vec![other.to_string()],
            },
        };
        reports.push((path, problems));
    }
    let failed = reports.iter().any(|(_, p)| !p.is_empty());
    if as_json {
        let v: Vec<_> = reports
            .iter()
            .map(|(p, problems)| json!({"file": p.display().to_string(), "valid": problems.is_empty(), "problems": problems}))
            .collect();
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        for (p, problems) in &reports {
            if problems.is_empty() {
                println!("{}: ok", p.display());
            } else {
                println!("{}: {} problem(s)", p.display(), problems.len());
                for msg in problems {
                    println!("  {msg}");
                }
            }
        }
    }
    Ok(if failed { 2 } else { 0 })
}

fn check_file(path: &Path) -> Result<Vec<String>> {
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        // Short files fall through to the DCFT reader, which reports the truncation.
        let _ = f.read(&mut magic)?;
    }
    if &magic == DCCT_MAGIC {
        read_compressed_file(path)?;
        return Ok(Vec::new());
    }
    let set = read_container_file(path)?;
    Ok(validate(&set).iter().map(ToString::to_string).collect())
}
