#[path = "support/oracle.rs"]
mod oracle;

use dcode_core::frame_select::{supplementary_select, uniform_count};
use dcode_core::synthetic::{synthetic_video, SyntheticSpec};
use dcode_core::token_compress::{activation_magnitudes, merge_tokens, prune_tokens, PrunedTokens};
use dcode_core::{compress_frame, compress_video, select_frames, CompressedFrame, CompressionParams, FrameFeatures, TokenMatrix, VideoFeatureSet};
use rand::Rng;

fn set_from_globals(globals: Vec<Vec<f32>>) -> VideoFeatureSet {
    let frames = globals
        .into_iter()
        .enumerate()
        .map(|(i, g)| FrameFeatures {
            frame_index: i as u32,
            global_vec: g,
            tokens: TokenMatrix::zeros(1, 1),
        })
        .collect();
    VideoFeatureSet::new("g", frames).unwrap()
}

fn assert_matches_oracle(frame: &CompressedFrame, rows: &[Vec<f32>], params: &CompressionParams) {
    let expected = oracle::compress(rows, params.beta, params.tau, params.max_patch_distance);
    assert_eq!(frame.clusters.len(), expected.len());
    for (r, (cluster, (ids, rep))) in frame.clusters.iter().zip(&expected).enumerate() {
        assert_eq!(&cluster.ids().collect::<Vec<_>>(), ids, "cluster {r}");
        for (a, b) in frame.representatives.row(r).iter().zip(rep) {
            assert!(oracle::close(*a, *b), "cluster {r}: {a} vs {b}");
        }
    }
}

#[test]
fn selection_matches_naive_oracle_on_seeded_sets() {
    for seed in 0..200u64 {
        let mut rng = oracle::rng(seed);
        let t = rng.random_range(1..=20);
        let d = rng.random_range(1..=16);
        let globals = oracle::random_globals(&mut rng, t, d);
        let n = rng.random_range(1..=t);
        let alpha = [0.1, 0.3, 0.5, 0.6, 0.85, 0.9, 0.99][rng.random_range(0..7)];
        let set = set_from_globals(globals.clone());
        let got = select_frames(&set, n, alpha).unwrap();
        let (selected, uniform, extra) = oracle::select(&globals, n, alpha);
        assert_eq!(got.selected, selected, "seed {seed}");
        assert_eq!(got.uniform_part, uniform, "seed {seed}");
        assert_eq!(got.supplementary_part, extra, "seed {seed}");
    }
}

#[test]
fn supplementary_from_two_initial_frames_of_four() {
    for seed in 0..50u64 {
        let mut rng = oracle::rng(1000 + seed);
        let d = rng.random_range(1..=6);
        let globals = oracle::random_globals(&mut rng, 4, d);
        let set = set_from_globals(globals.clone());
        let got = supplementary_select(&set, &[0, 3], 2).unwrap();

        let mut chosen = vec![0usize, 3];
        let mut want = Vec::new();
        for _ in 0..2 {
            let means: Vec<(usize, f64)> = (0..4)
                .filter(|m| !chosen.contains(m))
                .map(|m| {
                    let s: f64 = chosen.iter().map(|&c| oracle::cos(&globals[m], &globals[c])).sum();
                    (m, s / chosen.len() as f64)
                })
                .collect();
            let lowest = means.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let pick = means.iter().find(|p| p.1 <= lowest + oracle::TIE).unwrap().0;
            chosen.push(pick);
            want.push(pick);
        }
        assert_eq!(got, want, "seed {seed}");
    }
}

#[test]
fn eight_frames_four_selected() {
    for seed in 0..20u64 {
        let mut rng = oracle::rng(2000 + seed);
        let globals: Vec<Vec<f32>> = (0..8)
            .map(|_| (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        let set = set_from_globals(globals.clone());
        let got = select_frames(&set, 4, 0.6).unwrap();
        assert_eq!(uniform_count(4, 0.6), 2);
        assert_eq!(got.uniform_part, vec![0, 4]);
        let (selected, _, extra) = oracle::select(&globals, 4, 0.6);
        assert_eq!(got.selected, selected);
        assert_eq!(got.supplementary_part, extra);
    }
}

#[test]
fn activation_magnitudes_match_elementwise_oracle() {
    let mut rng = oracle::rng(77);
    let rows: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..8).map(|_| rng.random_range(-5.0f32..5.0)).collect())
        .collect();
    let got = activation_magnitudes(&TokenMatrix::from_rows(&rows).unwrap());
    for (g, row) in got.iter().zip(&rows) {
        let want = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((g - want).abs() <= 1e-6, "{g} vs {want}");
    }
}

#[test]
fn sixteen_by_eight_frame_matches_quadratic_oracle() {
    for seed in 0..20u64 {
        let mut rng = oracle::rng(3000 + seed);
        let rows = oracle::random_tokens(&mut rng, 16, 8);
        let frame = FrameFeatures {
            frame_index: 0,
            global_vec: vec![1.0],
            tokens: TokenMatrix::from_rows(&rows).unwrap(),
        };
        let params = CompressionParams::default();
        assert_matches_oracle(&compress_frame(&frame, &params).unwrap(), &rows, &params);
    }
}

#[test]
fn compression_matches_oracle_on_seeded_frames() {
    for seed in 0..200u64 {
        let mut rng = oracle::rng(4000 + seed);
        let m = rng.random_range(2..=32);
        let d = rng.random_range(1..=8);
        let rows = oracle::random_tokens(&mut rng, m, d);
        let params = CompressionParams {
            beta: [0.5, 0.625, 0.75, 0.99][rng.random_range(0..4)],
            tau: [0.5, 0.8, 0.9, 0.95, 0.999][rng.random_range(0..5)],
            max_patch_distance: None,
        };
        let frame = FrameFeatures {
            frame_index: 0,
            global_vec: vec![1.0],
            tokens: TokenMatrix::from_rows(&rows).unwrap(),
        };
        assert_matches_oracle(&compress_frame(&frame, &params).unwrap(), &rows, &params);
    }
}

#[test]
fn constrained_merge_matches_oracle_on_square_grids() {
    for seed in 0..100u64 {
        let mut rng = oracle::rng(5000 + seed);
        let side = rng.random_range(2..=5);
        let rows = oracle::random_tokens(&mut rng, side * side, 4);
        let params = CompressionParams {
            beta: 0.75,
            tau: 0.8,
            max_patch_distance: Some(rng.random_range(0..side)),
        };
        let frame = FrameFeatures {
            frame_index: 0,
            global_vec: vec![1.0],
            tokens: TokenMatrix::from_rows(&rows).unwrap(),
        };
        assert_matches_oracle(&compress_frame(&frame, &params).unwrap(), &rows, &params);
    }
}

#[test]
fn video_total_is_sum_of_per_frame_counts() {
    let set = synthetic_video("s", &SyntheticSpec::new(12, 25, 8, 8, 11));
    let sel = select_frames(&set, 3, 0.85).unwrap();
    let params = CompressionParams::default();
    let video = compress_video(&set, &sel, &params).unwrap();
    let expected: usize = sel
        .selected
        .iter()
        .map(|&i| oracle::compress(&set.frames[i].tokens.to_rows(), params.beta, params.tau, None).len())
        .sum();
    assert_eq!(video.frames.len(), 3);
    assert_eq!(video.total_tokens, expected);
}

#[test]
fn pruning_and_merging_compose_like_the_oracle() {
    let mut rng = oracle::rng(6000);
    let rows = oracle::random_tokens(&mut rng, 20, 6);
    let pruned = prune_tokens(&TokenMatrix::from_rows(&rows).unwrap(), 0.625).unwrap();
    let merged = merge_tokens(&pruned, 0.9).unwrap();
    let expected = oracle::compress(&rows, 0.625, 0.9, None);
    let ids: Vec<Vec<u32>> = merged.clusters.iter().map(|c| c.ids().collect()).collect();
    assert_eq!(ids, expected.iter().map(|(i, _)| i.clone()).collect::<Vec<_>>());
}

/// Greedy merging is not monotone in tau. B is close to both C and D, which are
/// far from each other; A is close to B only at the lower threshold. At 0.85 A
/// takes B and strands C and D (R = 3); at 0.9 B survives and takes both (R = 2).
#[test]
fn greedy_count_can_drop_when_tau_rises() {
    let deg = |d: f32| d.to_radians();
    let rows = vec![
        vec![4.0 * deg(28.0).cos(), 0.0, 4.0 * deg(28.0).sin()],
        vec![3.0, 0.0, 0.0],
        vec![2.0 * deg(25.0).cos(), 2.0 * deg(25.0).sin(), 0.0],
        vec![deg(25.0).cos(), -deg(25.0).sin(), 0.0],
    ];
    let pruned = PrunedTokens {
        ids: vec![0, 1, 2, 3],
        tokens: TokenMatrix::from_rows(&rows).unwrap(),
    };
    let count = |tau: f64| merge_tokens(&pruned, tau).unwrap().clusters.len();
    assert_eq!([count(0.80), count(0.85), count(0.90), count(0.95)], [1, 3, 2, 4]);

    let low: Vec<Vec<u32>> = merge_tokens(&pruned, 0.85).unwrap().clusters.iter().map(|c| c.ids().collect()).collect();
    let high: Vec<Vec<u32>> = merge_tokens(&pruned, 0.90).unwrap().clusters.iter().map(|c| c.ids().collect()).collect();
    assert_eq!(low, vec![vec![0, 1], vec![2], vec![3]]);
    assert_eq!(high, vec![vec![0], vec![1, 2, 3]]);
}
