//! Two-stage temporal selection: uniform coverage, then greedy supplementary
//! frames that are least similar (on average) to everything already chosen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::VideoFeatureSet;

/// Indices are frame positions in `[0, T)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Union of both stages, ascending.
    pub selected: Vec<usize>,
    pub uniform_part: Vec<usize>,
    /// In the order the greedy stage added them.
    pub supplementary_part: Vec<usize>,
    /// Frames whose global vector has zero norm; they count as similarity 0 to everything.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_norm_frames: Vec<usize>,
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn norm_f64(a: &[f32]) -> f64 {
    dot_f64(a, a).sqrt()
}

/// Cosine similarity with 64-bit accumulation.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm_f64(a), norm_f64(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector);
    }
    Ok(dot_f64(a, b) / (na * nb))
}

/// Cosine similarity where a zero-norm side yields 0 instead of an error.
pub(crate) fn cosine_or_zero(a: &[f32], b: &[f32]) -> f64 {
    cosine_similarity(a, b).unwrap_or(0.0)
}

/// `k` indices `floor(j * T / k)` for `j = 0..k`.
pub fn uniform_sample(frame_count: usize, k: usize) -> Result<Vec<usize>> {
    if k > frame_count {
        return Err(Error::Capacity {
            what: "uniform frames",
            requested: k,
            available: frame_count,
        });
    }
    Ok((0..k).map(|j| j * frame_count / k).collect())
}

/// Means closer than this to the minimum count as tied. Mathematically equal
/// means can differ in the last bits depending on summation order.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Greedily appends `count` frames. Each step picks the unchosen frame with the
/// lowest mean cosine similarity to the whole selected set, then adds it to that
/// set. Ties (within [`TIE_TOLERANCE`]) go to the lowest index. The mean over an
/// empty set is 0.
pub fn supplementary_select(
    set: &VideoFeatureSet,
    initial: &[usize],
    count: usize,
) -> Result<Vec<usize>> {
    let t = set.frame_count();
    let mut chosen = vec![false; t];
    for &i in initial {
        if i >= t {
            return Err(Error::Capacity {
                what: "frame index",
                requested: i + 1,
                available: t,
            });
        }
        if chosen[i] {
            return Err(Error::config("initial", format!("duplicate frame index {i}")));
        }
        chosen[i] = true;
    }
    let remaining = t - initial.len();
    if count > remaining {
        return Err(Error::Capacity {
            what: "supplementary frames",
            requested: count,
            available: remaining,
        });
    }

    let global = |i: usize| set.frames[i].global_vec.as_slice();
    // Running sums are extended in selection order so every candidate's sum is
    // accumulated in exactly the order a full re-evaluation would use.
    let mut sums = vec![0.0f64; t];
    for &s in initial {
        for (m, sum) in sums.iter_mut().enumerate() {
            if !chosen[m] {
                *sum += cosine_or_zero(global(m), global(s));
            }
        }
    }
    let mut added = Vec::with_capacity(count);
    for selected_len in (initial.len()..).take(count) {
        let mean = |m: usize| if selected_len == 0 { 0.0 } else { sums[m] / selected_len as f64 };
        let lowest = (0..t)
            .filter(|&m| !chosen[m])
            .map(mean)
            .fold(f64::INFINITY, f64::min);
        let pick = (0..t)
            .find(|&m| !chosen[m] && mean(m) <= lowest + TIE_TOLERANCE)
            .expect("count <= remaining guarantees a candidate");
        chosen[pick] = true;
        added.push(pick);
        for (m, sum) in sums.iter_mut().enumerate() {
            if !chosen[m] {
                *sum += cosine_or_zero(global(m), global(pick));
            }
        }
    }
    Ok(added)
}

/// Number of uniformly sampled frames, `floor(alpha * n)`.
pub fn uniform_count(n: usize, alpha: f64) -> usize {
    (alpha * n as f64).floor() as usize
}

pub fn select_frames(set: &VideoFeatureSet, n: usize, alpha: f64) -> Result<SelectionResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    let t = set.frame_count();
    if n == 0 {
        return Err(Error::config("n_frames", "must be >= 1"));
    }
    if n > t {
        return Err(Error::Capacity {
            what: "frames",
            requested: n,
            available: t,
        });
    }

    let zero_norm_frames: Vec<usize> = (0..t)
        .filter(|&i| norm_f64(&set.frames[i].global_vec) == 0.0)
        .collect();
    if !zero_norm_frames.is_empty() {
        log::warn!(
            "{}: {} frame(s) with zero-norm global vector treated as similarity 0: {:?}",
            set.video_id,
            zero_norm_frames.len(),
            zero_norm_frames
        );
    }

    let k = uniform_count(n, alpha);
    let uniform_part = uniform_sample(t, k)?;
    let supplementary_part = supplementary_select(set, &uniform_part, n - k)?;
    let mut selected: Vec<usize> = uniform_part.iter().chain(&supplementary_part).copied().collect();
    selected.sort_unstable();

    Ok(SelectionResult {
        selected,
        uniform_part,
        supplementary_part,
        zero_norm_frames,
    })
}
