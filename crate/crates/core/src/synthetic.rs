//! Seeded synthetic feature sets for tests, demos and CI runs without an encoder.
//!
//! Frames are grouped into scenes. Each scene has a base global direction and a
//! small palette of token prototypes; tokens are scaled prototypes plus noise, so
//! the greedy merge finds real clusters at the default threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::feature_store::{FrameFeatures, TokenMatrix, VideoFeatureSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub d_global: usize,
    pub d_token: usize,
    pub seed: u64,
    /// Token prototypes per scene.
    pub prototypes: usize,
    /// Uniform noise amplitude added to every entry.
    pub noise: f32,
}

impl SyntheticSpec {
    pub fn new(frames: usize, tokens_per_frame: usize, d_global: usize, d_token: usize, seed: u64) -> Self {
        Self {
            frames,
            tokens_per_frame,
            d_global,
            d_token,
            seed,
            prototypes: 4,
            noise: 0.05,
        }
    }
}

fn random_vec(rng: &mut impl Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Generates a valid set. All dimensions must be at least 1.
pub fn synthetic_video(video_id: impl Into<String>, spec: &SyntheticSpec) -> VideoFeatureSet {
    assert!(
        spec.frames >= 1 && spec.tokens_per_frame >= 1 && spec.d_global >= 1 && spec.d_token >= 1,
        "synthetic dimensions must be >= 1"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut scene_base = random_vec(&mut rng, spec.d_global);
    let mut palette: Vec<Vec<f32>> = (0..spec.prototypes.max(1))
        .map(|_| random_vec(&mut rng, spec.d_token))
        .collect();
    let mut scene_left = 0usize;

    for t in 0..spec.frames {
        if scene_left == 0 {
            scene_left = rng.random_range(1..=spec.frames.clamp(1, 6));
            scene_base = random_vec(&mut rng, spec.d_global);
            palette = (0..spec.prototypes.max(1))
                .map(|_| random_vec(&mut rng, spec.d_token))
                .collect();
        }
        scene_left -= 1;

        let global_vec = scene_base
            .iter()
            .map(|&b| b + rng.random_range(-1.0f32..1.0) * spec.noise * 4.0)
            .collect();
        let mut data = Vec::with_capacity(spec.tokens_per_frame * spec.d_token);
        for _ in 0..spec.tokens_per_frame {
            let proto = &palette[rng.random_range(0..palette.len())];
            let scale = rng.random_range(0.2f32..2.0);
            data.extend(
                proto
                    .iter()
                    .map(|&p| p * scale + rng.random_range(-1.0f32..1.0) * spec.noise),
            );
        }
        frames.push(FrameFeatures {
            frame_index: t as u32,
            global_vec,
            tokens: TokenMatrix::new(spec.tokens_per_frame, spec.d_token, data)
                .expect("shape is constructed to match"),
        });
    }
    VideoFeatureSet::new(video_id, frames).expect("synthetic sets satisfy every invariant")
}

/// Unstructured frame: every token entry independent uniform noise in `[-1, 1)`.
pub fn random_frame(rng: &mut impl Rng, frame_index: u32, m: usize, d_global: usize, d_token: usize) -> FrameFeatures {
    FrameFeatures {
        frame_index,
        global_vec: random_vec(rng, d_global),
        tokens: TokenMatrix::new(m, d_token, random_vec(rng, m * d_token)).expect("shape matches"),
    }
}
