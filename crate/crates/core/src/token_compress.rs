//! Per-frame spatial compression.
//!
//! Tokens are ranked by l2 norm and the top `floor(beta * M)` are kept. The kept
//! tokens are then walked in descending-norm order; every token not yet absorbed
//! becomes an anchor and absorbs all remaining tokens whose cosine similarity to
//! it is at least `tau`. Each cluster collapses to the arithmetic mean of its
//! original vectors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{FrameFeatures, TokenMatrix, VideoFeatureSet};
use crate::frame_select::{norm_f64, SelectionResult};

pub const DEFAULT_BETA: f64 = 0.625;
pub const DEFAULT_TAU: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionParams {
    pub beta: f64,
    pub tau: f64,
    /// Chebyshev grid distance limit between an anchor and its members. `None` disables it.
    pub max_patch_distance: Option<usize>,
}

impl Default for CompressionParams {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            tau: DEFAULT_TAU,
            max_patch_distance: None,
        }
    }
}

impl CompressionParams {
    pub fn validate(&self) -> Result<()> {
        check_open_unit("beta", self.beta)?;
        check_open_unit("tau", self.tau)
    }
}

pub(crate) fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::config(name, format!("must lie in (0, 1), got {v}")))
    }
}

/// One redundancy cluster. Ids index the frame's original `M` tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub anchor: u32,
    /// Absorbed tokens in the order they appear in the salience ranking.
    pub members: Vec<u32>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        1 + self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Anchor first, then members.
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        std::iter::once(self.anchor).chain(self.members.iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressedFrame {
    pub frame_index: u32,
    /// One row per cluster, in anchor order.
    pub representatives: TokenMatrix,
    pub clusters: Vec<Cluster>,
    pub retained_count: usize,
}

impl CompressedFrame {
    pub fn representative_count(&self) -> usize {
        self.clusters.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressedVideo {
    pub frames: Vec<CompressedFrame>,
    pub total_tokens: usize,
    /// Frame count of the source video.
    pub source_frames: usize,
    /// `M` of the source video.
    pub tokens_per_frame: usize,
    pub d_token: usize,
}

/// Kept tokens in salience order: `ids[r]` is the original id of row `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunedTokens {
    pub ids: Vec<u32>,
    pub tokens: TokenMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutput {
    pub clusters: Vec<Cluster>,
    pub representatives: TokenMatrix,
}

/// l2 norm of each row.
pub fn activation_magnitudes(tokens: &TokenMatrix) -> Vec<f64> {
    tokens.iter_rows().map(norm_f64).collect()
}

/// `floor(beta * m)`.
pub fn retained_count(m: usize, beta: f64) -> usize {
    (beta * m as f64).floor() as usize
}

/// Keeps the `floor(beta * M)` largest-norm rows, ordered by descending norm
/// with ascending id breaking ties.
pub fn prune_tokens(tokens: &TokenMatrix, beta: f64) -> Result<PrunedTokens> {
    check_open_unit("beta", beta)?;
    let m = tokens.rows();
    let keep = retained_count(m, beta);
    if keep == 0 {
        return Err(Error::config(
            "beta",
            format!("floor(beta * M) = floor({beta} * {m}) = 0; increase beta or M"),
        ));
    }
    let norms = activation_magnitudes(tokens);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    order.truncate(keep);

    let rows: Vec<&[f32]> = order.iter().map(|&i| tokens.row(i)).collect();
    Ok(PrunedTokens {
        ids: order.iter().map(|&i| i as u32).collect(),
        tokens: TokenMatrix::from_rows(&rows)?,
    })
}

/// Greedy threshold merging over tokens already in salience order.
pub fn merge_tokens(pruned: &PrunedTokens, tau: f64) -> Result<MergeOutput> {
    merge_with(pruned, tau, |_, _| true)
}

/// [`merge_tokens`] with an optional spatial constraint: a token may join an
/// anchor's cluster only if their Chebyshev distance on the `sqrt(M) x sqrt(M)`
/// patch grid is at most `max_patch_distance`.
pub fn merge_tokens_within_distance(
    pruned: &PrunedTokens,
    tau: f64,
    max_patch_distance: Option<usize>,
    tokens_per_frame: usize,
) -> Result<MergeOutput> {
    let Some(limit) = max_patch_distance else {
        return merge_tokens(pruned, tau);
    };
    let side = grid_side(tokens_per_frame).ok_or_else(|| {
        Error::config(
            "max_patch_distance",
            format!("requires a square token grid, but M = {tokens_per_frame} is not a perfect square"),
        )
    })?;
    merge_with(pruned, tau, |a, b| {
        let (ar, ac) = (a as usize / side, a as usize % side);
        let (br, bc) = (b as usize / side, b as usize % side);
        ar.abs_diff(br).max(ac.abs_diff(bc)) <= limit
    })
}

fn grid_side(m: usize) -> Option<usize> {
    let side = (m as f64).sqrt().round() as usize;
    (side * side == m).then_some(side)
}

fn merge_with(
    pruned: &PrunedTokens,
    tau: f64,
    admissible: impl Fn(u32, u32) -> bool,
) -> Result<MergeOutput> {
    check_open_unit("tau", tau)?;
    let tokens = &pruned.tokens;
    let n = tokens.rows();
    if pruned.ids.len() != n {
        return Err(Error::DimensionMismatch {
            left: pruned.ids.len(),
            right: n,
        });
    }
    let norms = activation_magnitudes(tokens);
    let zero = norms.iter().filter(|&&v| v == 0.0).count();
    if zero > 0 {
        log::warn!("{zero} retained token(s) with zero norm never merge");
    }

    let mut active = vec![true; n];
    let mut clusters = Vec::new();
    let mut reps: Vec<f32> = Vec::with_capacity(n * tokens.cols());
    let mut acc = vec![0.0f64; tokens.cols()];

    for anchor in 0..n {
        if !active[anchor] {
            continue;
        }
        active[anchor] = false;
        let a = tokens.row(anchor);
        acc.iter_mut().zip(a).for_each(|(s, &v)| *s = v as f64);

        let mut members = Vec::new();
        for j in anchor + 1..n {
            if !active[j] || !admissible(pruned.ids[anchor], pruned.ids[j]) {
                continue;
            }
            let sim = if norms[anchor] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                dot_f64(a, tokens.row(j)) / (norms[anchor] * norms[j])
            };
            if sim >= tau {
                active[j] = false;
                members.push(pruned.ids[j]);
                acc.iter_mut().zip(tokens.row(j)).for_each(|(s, &v)| *s += v as f64);
            }
        }
        let count = (1 + members.len()) as f64;
        reps.extend(acc.iter().map(|s| (s / count) as f32));
        clusters.push(Cluster {
            anchor: pruned.ids[anchor],
            members,
        });
    }

    Ok(MergeOutput {
        representatives: TokenMatrix::new(clusters.len(), tokens.cols(), reps)?,
        clusters,
    })
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn compress_frame(frame: &FrameFeatures, params: &CompressionParams) -> Result<CompressedFrame> {
    params.validate()?;
    let pruned = prune_tokens(&frame.tokens, params.beta)?;
    let merged = merge_tokens_within_distance(
        &pruned,
        params.tau,
        params.max_patch_distance,
        frame.tokens.rows(),
    )?;
    Ok(CompressedFrame {
        frame_index: frame.frame_index,
        representatives: merged.representatives,
        clusters: merged.clusters,
        retained_count: pruned.ids.len(),
    })
}

/// Compresses each selected frame (in parallel) and concatenates them in frame order.
pub fn compress_video(
    set: &VideoFeatureSet,
    selection: &SelectionResult,
    params: &CompressionParams,
) -> Result<CompressedVideo> {
    params.validate()?;
    let t = set.frame_count();
    if selection.selected.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("selection", "selected indices must be strictly ascending"));
    }
    if let Some(&bad) = selection.selected.iter().find(|&&i| i >= t) {
        return Err(Error::Capacity {
            what: "frame index",
            requested: bad + 1,
            available: t,
        });
    }
    let frames = selection
        .selected
        .par_iter()
        .map(|&i| compress_frame(&set.frames[i], params))
        .collect::<Result<Vec<_>>>()?;
    let total_tokens = frames.iter().map(CompressedFrame::representative_count).sum();
    Ok(CompressedVideo {
        frames,
        total_tokens,
        source_frames: t,
        tokens_per_frame: set.tokens_per_frame,
        d_token: set.d_token,
    })
}
