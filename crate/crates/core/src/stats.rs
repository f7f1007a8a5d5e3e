//! Token-budget statistics and hyperparameter sweep grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::VideoFeatureSet;
use crate::frame_select::select_frames;
use crate::token_compress::{check_open_unit, compress_video, CompressedVideo, CompressionParams};

/// Version tag written in the first column of every stats CSV row.
pub const STATS_SCHEMA: &str = "dcode-stats-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub video_id: String,
    pub frames: usize,
    pub n_frames: usize,
    pub tokens_per_frame: usize,
    pub retained_per_frame: usize,
    pub representatives_per_frame: Vec<usize>,
    pub total_tokens: usize,
    /// `total_tokens / (T * M)`.
    pub compression_ratio: f64,
}

impl CompressionStats {
    pub fn from_compressed(video_id: impl Into<String>, video: &CompressedVideo) -> Self {
        let denom = (video.source_frames * video.tokens_per_frame).max(1) as f64;
        Self {
            video_id: video_id.into(),
            frames: video.source_frames,
            n_frames: video.frames.len(),
            tokens_per_frame: video.tokens_per_frame,
            retained_per_frame: video.frames.first().map_or(0, |f| f.retained_count),
            representatives_per_frame: video.frames.iter().map(|f| f.clusters.len()).collect(),
            total_tokens: video.total_tokens,
            compression_ratio: video.total_tokens as f64 / denom,
        }
    }
}

/// One point in a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

/// Cartesian grid over alpha, beta and tau. Iteration order is alpha-major, tau-minor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub taus: Vec<f64>,
}

impl SweepGrid {
    /// Rejects the whole grid if any value is out of range or any axis is empty.
    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [("alpha", &self.alphas), ("beta", &self.betas), ("tau", &self.taus)] {
            if axis.is_empty() {
                return Err(Error::config(name, "sweep axis has no values"));
            }
            for &v in axis {
                check_open_unit(name, v)?;
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::with_capacity(self.alphas.len() * self.betas.len() * self.taus.len());
        for &alpha in &self.alphas {
            for &beta in &self.betas {
                for &tau in &self.taus {
                    out.push(SweepPoint { alpha, beta, tau });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub stats: CompressionStats,
}

/// Selection plus compression for every grid point on one video, in grid order.
pub fn sweep_video(
    set: &VideoFeatureSet,
    n_frames: usize,
    grid: &SweepGrid,
    max_patch_distance: Option<usize>,
) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    grid.points()
        .into_iter()
        .map(|point| {
            let selection = select_frames(set, n_frames, point.alpha)?;
            let params = CompressionParams {
                beta: point.beta,
                tau: point.tau,
                max_patch_distance,
            };
            let video = compress_video(set, &selection, &params)?;
            Ok(SweepRow {
                point,
                stats: CompressionStats::from_compressed(&set.video_id, &video),
            })
        })
        .collect()
}
