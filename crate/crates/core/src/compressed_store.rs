//! The `DCCT` container for compressed token sets.
//!
//! Version 1 layout (little-endian):
//!
//! ```text
//! 0..4    magic "DCCT"
//! 4..8    u32 version (= 1)
//! 8..12   u32 N   compressed frame records
//! 12..16  u32 total_tokens (sum of R over records)
//! 16..20  u32 M   tokens per source frame
//! 20..24  u32 D_t token width
//! 24..28  u32 T   source frame count
//! 28..32  reserved, zero
//! then N records:
//!   u32 frame_index, u32 retained_count, u32 R,
//!   R*D_t f32 representatives (row-major, anchor order),
//!   R cluster entries: u32 anchor id, u32 k, k u32 member ids
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::feature_store::{dim_u32, push_f32s, ContainerReader, TokenMatrix, HEADER_LEN};
use crate::token_compress::{Cluster, CompressedFrame, CompressedVideo};

pub const DCCT_MAGIC: &[u8; 4] = b"DCCT";
pub const DCCT_VERSION: u32 = 1;

/// Checks the structural invariants of a compressed video. Returns one message per problem.
pub fn check_compressed(video: &CompressedVideo) -> Vec<String> {
    let mut out = Vec::new();
    let total: usize = video.frames.iter().map(|f| f.clusters.len()).sum();
    if total != video.total_tokens {
        out.push(format!("total_tokens {} != sum of R {total}", video.total_tokens));
    }
    for (k, w) in video.frames.windows(2).enumerate() {
        if w[0].frame_index >= w[1].frame_index {
            out.push(format!("record {}: frame_index not ascending", k + 1));
        }
    }
    for (k, f) in video.frames.iter().enumerate() {
        let r = f.clusters.len();
        if r == 0 || r > f.retained_count || f.retained_count > video.tokens_per_frame {
            out.push(format!(
                "record {k}: need 1 <= R ({r}) <= retained ({}) <= M ({})",
                f.retained_count, video.tokens_per_frame
            ));
        }
        if f.representatives.rows() != r || f.representatives.cols() != video.d_token {
            out.push(format!("record {k}: representatives shape mismatch"));
        }
        if f.representatives.as_slice().iter().any(|v| !v.is_finite()) {
            out.push(format!("record {k}: non-finite representative"));
        }
        let mut seen = HashSet::new();
        let mut count = 0usize;
        for id in f.clusters.iter().flat_map(Cluster::ids) {
            count += 1;
            if id as usize >= video.tokens_per_frame || !seen.insert(id) {
                out.push(format!("record {k}: token id {id} out of range or repeated"));
            }
        }
        if count != f.retained_count {
            out.push(format!(
                "record {k}: clusters cover {count} ids, retained_count is {}",
                f.retained_count
            ));
        }
    }
    out
}

pub fn write_compressed<W: Write>(video: &CompressedVideo, mut sink: W) -> Result<u64> {
    let problems = check_compressed(video);
    if !problems.is_empty() {
        return Err(Error::Format(problems.join("; ")));
    }
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(DCCT_MAGIC);
    header.extend_from_slice(&DCCT_VERSION.to_le_bytes());
    for (name, v) in [
        ("N", video.frames.len()),
        ("total_tokens", video.total_tokens),
        ("M", video.tokens_per_frame),
        ("D_t", video.d_token),
        ("T", video.source_frames),
    ] {
        header.extend_from_slice(&dim_u32(name, v)?.to_le_bytes());
    }
    header.resize(HEADER_LEN, 0);
    sink.write_all(&header)?;
    let mut written = header.len() as u64;

    let mut buf = Vec::new();
    for f in &video.frames {
        buf.clear();
        buf.extend_from_slice(&f.frame_index.to_le_bytes());
        buf.extend_from_slice(&dim_u32("retained_count", f.retained_count)?.to_le_bytes());
        buf.extend_from_slice(&dim_u32("R", f.clusters.len())?.to_le_bytes());
        push_f32s(&mut buf, f.representatives.as_slice());
        for c in &f.clusters {
            buf.extend_from_slice(&c.anchor.to_le_bytes());
            buf.extend_from_slice(&dim_u32("cluster size", c.members.len())?.to_le_bytes());
            for id in &c.members {
                buf.extend_from_slice(&id.to_le_bytes());
            }
        }
        sink.write_all(&buf)?;
        written += buf.len() as u64;
    }
    sink.flush()?;
    Ok(written)
}

pub fn read_compressed<R: Read>(source: R) -> Result<CompressedVideo> {
    let mut r = ContainerReader::new(source);
    let [n, total_tokens, m, d_t] = r.header_prefix(DCCT_MAGIC, DCCT_VERSION)?;
    let source_frames = r.u32("source frame count")? as usize;
    let reserved = r.bytes(4, "reserved header bytes")?;
    if reserved.iter().any(|&b| b != 0) {
        return Err(Error::Format("reserved header bytes must be zero".into()));
    }
    let (m, d_t) = (m as usize, d_t as usize);

    let mut frames = Vec::with_capacity((n as usize).min(4096));
    for _ in 0..n {
        let frame_index = r.u32("frame_index")?;
        let retained_count = r.u32("retained_count")? as usize;
        let rep_count = r.u32("R")? as usize;
        if rep_count > m {
            return Err(Error::Format(format!("R = {rep_count} exceeds M = {m}")));
        }
        let data = r.f32s(rep_count * d_t, "representatives")?;
        let mut clusters = Vec::with_capacity(rep_count);
        for _ in 0..rep_count {
            let anchor = r.u32("cluster anchor")?;
            let k = r.u32("cluster size")? as usize;
            if k >= m.max(1) {
                return Err(Error::Format(format!("cluster size {k} exceeds M = {m}")));
            }
            let members = (0..k)
                .map(|_| r.u32("cluster member"))
                .collect::<Result<Vec<_>>>()?;
            clusters.push(Cluster { anchor, members });
        }
        frames.push(CompressedFrame {
            frame_index,
            representatives: TokenMatrix::new(rep_count, d_t, data)?,
            clusters,
            retained_count,
        });
    }
    r.expect_eof()?;

    let video = CompressedVideo {
        frames,
        total_tokens: total_tokens as usize,
        source_frames,
        tokens_per_frame: m,
        d_token: d_t,
    };
    let problems = check_compressed(&video);
    if !problems.is_empty() {
        return Err(Error::Format(problems.join("; ")));
    }
    Ok(video)
}

pub fn read_compressed_file(path: impl AsRef<Path>) -> Result<CompressedVideo> {
    read_compressed(BufReader::new(File::open(path)?))
}

pub fn write_compressed_file(video: &CompressedVideo, path: impl AsRef<Path>) -> Result<u64> {
    let problems = check_compressed(video);
    if !problems.is_empty() {
        return Err(Error::Format(problems.join("; ")));
    }
    write_compressed(video, BufWriter::new(File::create(path)?))
}
