//! Per-video frame features and the `DCFT` binary container.
//!
//! Layout of a version 1 container (all integers little-endian):
//!
//! ```text
//! 0..4    magic "DCFT"
//! 4..8    u32 version (= 1)
//! 8..12   u32 T   frame count
//! 12..16  u32 M   tokens per frame
//! 16..20  u32 D_g global vector length
//! 20..24  u32 D_t token width
//! 24..32  reserved, zero
//! then T records: u32 frame_index, D_g f32, M*D_t f32 (row-major)
//! ```
//!
//! The video id is not stored; it is the file stem.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DCFT_MAGIC: &[u8; 4] = b"DCFT";
pub const DCFT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

/// Dense row-major `f32` matrix. Rows are tokens, columns are channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from a list of rows, which must all have the same length.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    left: r.len(),
                    right: cols,
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f32>> {
        self.iter_rows().map(<[f32]>::to_vec).collect()
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Encoder output for one frame: the frame-level global vector and its spatial tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub frame_index: u32,
    pub global_vec: Vec<f32>,
    pub tokens: TokenMatrix,
}

/// All frames of one video plus the dimensional metadata every frame must match.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoFeatureSet {
    pub video_id: String,
    pub frames: Vec<FrameFeatures>,
    pub d_global: usize,
    pub d_token: usize,
    pub tokens_per_frame: usize,
}

impl VideoFeatureSet {
    /// Builds a set whose dimensions are taken from the first frame, then validates it.
    pub fn new(video_id: impl Into<String>, frames: Vec<FrameFeatures>) -> Result<Self> {
        let (d_global, d_token, tokens_per_frame) = frames
            .first()
            .map(|f| (f.global_vec.len(), f.tokens.cols(), f.tokens.rows()))
            .unwrap_or((0, 0, 0));
        let set = Self {
            video_id: video_id.into(),
            frames,
            d_global,
            d_token,
            tokens_per_frame,
        };
        let violations = validate(&set);
        if violations.is_empty() {
            Ok(set)
        } else {
            Err(Error::Validation(violations))
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Copy of the set with every global vector and token multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        let frames = self
            .frames
            .iter()
            .map(|f| FrameFeatures {
                frame_index: f.frame_index,
                global_vec: f.global_vec.iter().map(|v| v * factor).collect(),
                tokens: f.tokens.scaled(factor),
            })
            .collect();
        Self {
            frames,
            ..self.clone()
        }
    }
}

/// One broken invariant. `frame` is the position in `frames`, when the rule is per-frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub frame: Option<usize>,
    pub rule: String,
}

impl Violation {
    fn new(field: &str, frame: Option<usize>, rule: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            frame,
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(k) => write!(f, "frame {k}: {}: {}", self.field, self.rule),
            None => write!(f, "{}: {}", self.field, self.rule),
        }
    }
}

/// Checks every set-level and per-frame invariant. Empty result means the set is valid.
pub fn validate(set: &VideoFeatureSet) -> Vec<Violation> {
    let mut out = Vec::new();
    if set.frames.is_empty() {
        out.push(Violation::new("frames", None, "T >= 1"));
    }
    if set.tokens_per_frame == 0 {
        out.push(Violation::new("tokens_per_frame", None, "M >= 1"));
    }
    if set.d_global == 0 {
        out.push(Violation::new("d_global", None, "D_g >= 1"));
    }
    if set.d_token == 0 {
        out.push(Violation::new("d_token", None, "D_t >= 1"));
    }

    let mut prev: Option<u32> = None;
    for (k, frame) in set.frames.iter().enumerate() {
        match prev {
            None if frame.frame_index != 0 => out.push(Violation::new(
                "frame_index",
                Some(k),
                format!("ordering: first frame_index must be 0, got {}", frame.frame_index),
            )),
            Some(p) if frame.frame_index <= p => out.push(Violation::new(
                "frame_index",
                Some(k),
                format!(
                    "ordering: frame_index must be strictly increasing ({} after {p})",
                    frame.frame_index
                ),
            )),
            _ => {}
        }
        prev = Some(frame.frame_index);

        if frame.global_vec.len() != set.d_global {
            out.push(Violation::new(
                "global_vec",
                Some(k),
                format!("d_global: length {} != {}", frame.global_vec.len(), set.d_global),
            ));
        }
        if frame.tokens.cols() != set.d_token {
            out.push(Violation::new(
                "tokens",
                Some(k),
                format!("d_token: column count {} != {}", frame.tokens.cols(), set.d_token),
            ));
        }
        if frame.tokens.rows() != set.tokens_per_frame {
            out.push(Violation::new(
                "tokens",
                Some(k),
                format!(
                    "tokens_per_frame: row count {} != {}",
                    frame.tokens.rows(),
                    set.tokens_per_frame
                ),
            ));
        }
        if let Some(i) = frame.global_vec.iter().position(|v| !v.is_finite()) {
            out.push(Violation::new(
                "global_vec",
                Some(k),
                format!("finite: entry {i} is {}", frame.global_vec[i]),
            ));
        }
        if let Some(i) = frame.tokens.as_slice().iter().position(|v| !v.is_finite()) {
            out.push(Violation::new(
                "tokens",
                Some(k),
                format!("finite: entry {i} is {}", frame.tokens.as_slice()[i]),
            ));
        }
    }
    out
}

pub(crate) fn dim_u32(name: &str, value: usize) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Format(format!("{name} = {value} does not fit in u32")))
}

pub(crate) fn push_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `set` as a `DCFT` container. Nothing is written when the set is invalid.
pub fn write_container<W: Write>(set: &VideoFeatureSet, mut sink: W) -> Result<u64> {
    let violations = validate(set);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(DCFT_MAGIC);
    header.extend_from_slice(&DCFT_VERSION.to_le_bytes());
    for (name, v) in [
        ("T", set.frames.len()),
        ("M", set.tokens_per_frame),
        ("D_g", set.d_global),
        ("D_t", set.d_token),
    ] {
        header.extend_from_slice(&dim_u32(name, v)?.to_le_bytes());
    }
    header.resize(HEADER_LEN, 0);
    sink.write_all(&header)?;
    let mut written = header.len() as u64;

    let record_len = 4 + 4 * (set.d_global + set.tokens_per_frame * set.d_token);
    let mut buf = Vec::with_capacity(record_len);
    for frame in &set.frames {
        buf.clear();
        buf.extend_from_slice(&frame.frame_index.to_le_bytes());
        push_f32s(&mut buf, &frame.global_vec);
        push_f32s(&mut buf, frame.tokens.as_slice());
        sink.write_all(&buf)?;
        written += buf.len() as u64;
    }
    sink.flush()?;
    Ok(written)
}

/// Byte-offset-tracking reader shared by both container formats.
pub(crate) struct ContainerReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ContainerReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    /// Reads exactly `len` bytes without trusting `len` for preallocation.
    pub(crate) fn bytes(&mut self, len: usize, expected: &'static str) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(len.min(1 << 20));
        let got = (&mut self.inner).take(len as u64).read_to_end(&mut buf)?;
        self.offset += got as u64;
        if got < len {
            return Err(Error::Truncated {
                offset: self.offset,
                expected,
            });
        }
        Ok(buf)
    }

    pub(crate) fn u32(&mut self, expected: &'static str) -> Result<u32> {
        let b = self.bytes(4, expected)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32s(&mut self, count: usize, expected: &'static str) -> Result<Vec<f32>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("{expected}: declared size overflows")))?;
        let b = self.bytes(len, expected)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// Errors if any byte remains after the declared payload.
    pub(crate) fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => {
                    return Err(Error::Format(format!(
                        "trailing bytes after declared payload at offset {}",
                        self.offset
                    )))
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Reads magic, version and the four dimension words; checks the reserved tail.
    pub(crate) fn header(&mut self, magic: &[u8; 4], supported: u32) -> Result<[u32; 4]> {
        let dims = self.header_prefix(magic, supported)?;
        let reserved = self.bytes(HEADER_LEN - 24, "reserved header bytes")?;
        if reserved.iter().any(|&b| b != 0) {
            return Err(Error::Format("reserved header bytes must be zero".into()));
        }
        Ok(dims)
    }

    /// Magic, version, then the four u32 words at bytes 8..24.
    pub(crate) fn header_prefix(&mut self, magic: &[u8; 4], supported: u32) -> Result<[u32; 4]> {
        let m = self.bytes(4, "magic")?;
        if m != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32("version")?;
        if version == 0 {
            return Err(Error::Format("version 0 is not a valid container version".into()));
        }
        if version > supported {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported,
            });
        }
        let mut dims = [0u32; 4];
        for d in dims.iter_mut() {
            *d = self.u32("header dimension")?;
        }
        Ok(dims)
    }
}

/// Parses a `DCFT` container. The result always satisfies every invariant.
pub fn read_container<R: Read>(source: R, video_id: impl Into<String>) -> Result<VideoFeatureSet> {
    let mut r = ContainerReader::new(source);
    let [t, m, d_g, d_t] = r.header(DCFT_MAGIC, DCFT_VERSION)?;
    let (t, m, d_g, d_t) = (t as usize, m as usize, d_g as usize, d_t as usize);
    let token_len = m
        .checked_mul(d_t)
        .ok_or_else(|| Error::Format("M * D_t overflows".into()))?;

    let mut frames = Vec::with_capacity(t.min(4096));
    for _ in 0..t {
        let frame_index = r.u32("frame_index")?;
        let global_vec = r.f32s(d_g, "global_vec")?;
        let data = r.f32s(token_len, "tokens")?;
        frames.push(FrameFeatures {
            frame_index,
            global_vec,
            tokens: TokenMatrix::new(m, d_t, data)?,
        });
    }
    r.expect_eof()?;

    let set = VideoFeatureSet {
        video_id: video_id.into(),
        frames,
        d_global: d_g,
        d_token: d_t,
        tokens_per_frame: m,
    };
    let violations = validate(&set);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(set)
}

/// Video id for a container path: the file stem.
pub fn video_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn read_container_file(path: impl AsRef<Path>) -> Result<VideoFeatureSet> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_container(BufReader::new(file), video_id_from_path(path))
}

pub fn write_container_file(set: &VideoFeatureSet, path: impl AsRef<Path>) -> Result<u64> {
    // Validate before creating the file so a bad set leaves nothing behind.
    let violations = validate(set);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let file = File::create(path.as_ref())?;
    write_container(set, BufWriter::new(file))
}
