//! Slow, direct reference implementations and random instance generators.
//! Nothing here calls into the library's selection or compression code.
#![allow(dead_code)]

use dcode_core::{FrameFeatures, TokenMatrix, VideoFeatureSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tie window for mean similarities, the documented selection contract.
pub const TIE: f64 = 1e-12;

pub fn cos(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut aa = 0.0f64;
    let mut bb = 0.0f64;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        aa += a[i] as f64 * a[i] as f64;
        bb += b[i] as f64 * b[i] as f64;
    }
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn norm(a: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for &x in a {
        s += x as f64 * x as f64;
    }
    s.sqrt()
}

/// (selected ascending, uniform part, supplementary part in pick order).
pub fn select(globals: &[Vec<f32>], n: usize, alpha: f64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let t = globals.len();
    let k = (alpha * n as f64).floor() as usize;
    let uniform: Vec<usize> = (0..k).map(|j| ((j * t) as f64 / k as f64).floor() as usize).collect();
    let mut chosen = uniform.clone();
    let mut extra = Vec::new();
    while chosen.len() < n {
        let mut means = Vec::new();
        for m in 0..t {
            if chosen.contains(&m) {
                continue;
            }
            let mut sum = 0.0f64;
            for &s in &chosen {
                sum += cos(&globals[m], &globals[s]);
            }
            means.push((m, if chosen.is_empty() { 0.0 } else { sum / chosen.len() as f64 }));
        }
        let lowest = means.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
        // First (lowest index) candidate tied with the minimum.
        let pick = means.iter().find(|&&(_, v)| v <= lowest + TIE).unwrap().0;
        chosen.push(pick);
        extra.push(pick);
    }
    chosen.sort();
    (chosen, uniform, extra)
}

/// One cluster as `[anchor, members...]` in original token ids, plus its mean.
pub type OracleCluster = (Vec<u32>, Vec<f32>);

/// Prune to the `floor(beta * M)` largest norms, then merge greedily over a shrinking list.
pub fn compress(rows: &[Vec<f32>], beta: f64, tau: f64, max_patch_distance: Option<usize>) -> Vec<OracleCluster> {
    let m = rows.len();
    let keep = (beta * m as f64).floor() as usize;
    let mut order: Vec<usize> = (0..m).collect();
    // Stable sort keeps ascending ids among equal norms.
    order.sort_by(|&a, &b| norm(&rows[b]).partial_cmp(&norm(&rows[a])).unwrap());
    order.truncate(keep);

    let side = (m as f64).sqrt() as usize;
    let near = |a: usize, b: usize| match max_patch_distance {
        None => true,
        Some(d) => {
            let dr = (a / side) as i64 - (b / side) as i64;
            let dc = (a % side) as i64 - (b % side) as i64;
            dr.abs().max(dc.abs()) as usize <= d
        }
    };

    let mut remaining = order;
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let anchor = remaining.remove(0);
        let mut ids = vec![anchor];
        let mut rest = Vec::new();
        for j in remaining {
            if near(anchor, j) && cos(&rows[anchor], &rows[j]) >= tau {
                ids.push(j);
            } else {
                rest.push(j);
            }
        }
        remaining = rest;
        let d = rows[anchor].len();
        let mut mean = vec![0.0f64; d];
        for &i in &ids {
            for c in 0..d {
                mean[c] += rows[i][c] as f64;
            }
        }
        let rep = mean.iter().map(|s| (s / ids.len() as f64) as f32).collect();
        out.push((ids.into_iter().map(|i| i as u32).collect(), rep));
    }
    out
}

pub fn close(a: f32, b: f32) -> bool {
    (a - b).abs() <= 1e-5 * a.abs().max(b.abs()) || (a - b).abs() <= f32::MIN_POSITIVE
}

/// Global vectors with exact duplicates, zero vectors and coarse values so ties happen.
pub fn random_globals(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<Vec<f32>> {
    let mut out: Vec<Vec<f32>> = Vec::with_capacity(t);
    for _ in 0..t {
        let roll: f64 = rng.random();
        let v = if roll < 0.08 {
            vec![0.0; d]
        } else if roll < 0.25 && !out.is_empty() {
            out[rng.random_range(0..out.len())].clone()
        } else if roll < 0.45 {
            (0..d).map(|_| rng.random_range(-1i32..=1) as f32).collect()
        } else {
            (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()
        };
        out.push(v);
    }
    out
}

/// Tokens drawn around a few prototypes at a random noise level, with some
/// duplicated and zero rows.
pub fn random_tokens(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Vec<Vec<f32>> {
    let protos: Vec<Vec<f32>> = (0..rng.random_range(1..=4))
        .map(|_| (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let noise = [0.0f32, 0.01, 0.1, 0.5, 2.0][rng.random_range(0..5)];
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(m);
    for _ in 0..m {
        let roll: f64 = rng.random();
        let row = if roll < 0.05 {
            vec![0.0; d]
        } else if roll < 0.15 && !rows.is_empty() {
            rows[rng.random_range(0..rows.len())].clone()
        } else {
            let p = &protos[rng.random_range(0..protos.len())];
            let scale = rng.random_range(0.5f32..2.0);
            p.iter().map(|&x| x * scale + noise * rng.random_range(-1.0f32..1.0)).collect()
        };
        rows.push(row);
    }
    rows
}

pub fn random_set(seed: u64, max_t: usize, max_dg: usize, max_m: usize, max_dt: usize) -> VideoFeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(1..=max_t);
    let dg = rng.random_range(1..=max_dg);
    let m = rng.random_range(1..=max_m);
    let dt = rng.random_range(1..=max_dt);
    let globals = random_globals(&mut rng, t, dg);
    let frames = globals
        .into_iter()
        .enumerate()
        .map(|(i, g)| FrameFeatures {
            frame_index: i as u32,
            global_vec: g,
            tokens: TokenMatrix::from_rows(&random_tokens(&mut rng, m, dt)).unwrap(),
        })
        .collect();
    VideoFeatureSet::new(format!("seed{seed}"), frames).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
