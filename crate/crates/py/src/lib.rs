//! Python bindings: containers, frame selection, token compression and the
//! prompt utilities of `dcode-core`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dcode_core::compressed_store::{read_compressed, read_compressed_file, write_compressed, write_compressed_file};
use dcode_core::config::PipelineConfig;
use dcode_core::decomposer::{
    self, AskOptions, ChatEndpointConfig, ContentMode, DecomposeError, HttpChatClient, PromptTemplate, VisualContext,
};
use dcode_core::feature_store::{self, read_container, write_container};
use dcode_core::frame_select;
use dcode_core::mock::{MockScript, ScriptedBackend};
use dcode_core::stats::CompressionStats;
use dcode_core::synthetic::{synthetic_video, SyntheticSpec};
use dcode_core::{
    compress_video, CompressedFrame, CompressedVideo, CompressionParams, FrameFeatures, SelectionResult, TokenMatrix,
    VideoFeatureSet,
};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn core_err(e: dcode_core::Error) -> PyErr {
    match e {
        dcode_core::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn decompose_err(e: DecomposeError) -> PyErr {
    match e {
        DecomposeError::Validation(_) | DecomposeError::Template(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f32>]) -> PyResult<TokenMatrix> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("token matrix needs at least one row"));
    }
    TokenMatrix::from_rows(rows).map_err(core_err)
}

/// Raw per-frame features of one video.
#[pyclass(name = "VideoFeatures", module = "dcode", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyVideoFeatures {
    inner: VideoFeatureSet,
}

#[pymethods]
impl PyVideoFeatures {
    /// `global_vecs[t]` is frame t's global vector, `tokens[t]` its M x D_t token rows.
    #[new]
    #[pyo3(signature = (video_id, global_vecs, tokens, frame_indices=None))]
    fn new(
        video_id: String,
        global_vecs: Vec<Vec<f32>>,
        tokens: Vec<Vec<Vec<f32>>>,
        frame_indices: Option<Vec<u32>>,
    ) -> PyResult<Self> {
        if global_vecs.len() != tokens.len() {
            return Err(PyValueError::new_err(format!(
                "{} global vectors but {} token matrices",
                global_vecs.len(),
                tokens.len()
            )));
        }
        let indices = frame_indices.unwrap_or_else(|| (0..global_vecs.len() as u32).collect());
        if indices.len() != global_vecs.len() {
            return Err(PyValueError::new_err("frame_indices length differs from frame count"));
        }
        let frames = global_vecs
            .into_iter()
            .zip(tokens)
            .zip(indices)
            .map(|((g, t), i)| {
                Ok(FrameFeatures {
                    frame_index: i,
                    global_vec: g,
                    tokens: matrix(&t)?,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = VideoFeatureSet::new(video_id, frames).map_err(core_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: feature_store::read_container_file(&path).map_err(core_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (data, video_id="video".to_string()))]
    fn from_bytes(data: &[u8], video_id: String) -> PyResult<Self> {
        Ok(Self {
            inner: read_container(data, video_id).map_err(core_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<u64> {
        feature_store::write_container_file(&self.inner, &path).map_err(core_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let mut buf = Vec::new();
        write_container(&self.inner, &mut buf).map_err(core_err)?;
        Ok(PyBytes::new(py, &buf))
    }

    /// Violation messages; empty when the set is valid.
    fn validate(&self) -> Vec<String> {
        feature_store::validate(&self.inner).iter().map(ToString::to_string).collect()
    }

    fn scaled(&self, factor: f32) -> Self {
        Self {
            inner: self.inner.scaled(factor),
        }
    }

    #[getter]
    fn video_id(&self) -> String {
        self.inner.video_id.clone()
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    #[getter]
    fn tokens_per_frame(&self) -> usize {
        self.inner.tokens_per_frame
    }

    #[getter]
    fn d_global(&self) -> usize {
        self.inner.d_global
    }

    #[getter]
    fn d_token(&self) -> usize {
        self.inner.d_token
    }

    #[getter]
    fn frame_indices(&self) -> Vec<u32> {
        self.inner.frames.iter().map(|f| f.frame_index).collect()
    }

    fn global_vec(&self, position: usize) -> PyResult<Vec<f32>> {
        self.frame(position).map(|f| f.global_vec.clone())
    }

    fn tokens(&self, position: usize) -> PyResult<Vec<Vec<f32>>> {
        self.frame(position).map(|f| f.tokens.to_rows())
    }

    fn __len__(&self) -> usize {
        self.inner.frame_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "VideoFeatures(video_id={:?}, T={}, M={}, D_g={}, D_t={})",
            self.inner.video_id,
            self.inner.frame_count(),
            self.inner.tokens_per_frame,
            self.inner.d_global,
            self.inner.d_token
        )
    }
}

impl PyVideoFeatures {
    fn frame(&self, position: usize) -> PyResult<&FrameFeatures> {
        self.inner
            .frames
            .get(position)
            .ok_or_else(|| PyValueError::new_err(format!("frame position {position} out of range")))
    }
}

#[pyclass(name = "Selection", module = "dcode", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySelection {
    inner: SelectionResult,
}

#[pymethods]
impl PySelection {
    #[getter]
    fn selected(&self) -> Vec<usize> {
        self.inner.selected.clone()
    }

    #[getter]
    fn uniform_part(&self) -> Vec<usize> {
        self.inner.uniform_part.clone()
    }

    #[getter]
    fn supplementary_part(&self) -> Vec<usize> {
        self.inner.supplementary_part.clone()
    }

    #[getter]
    fn zero_norm_frames(&self) -> Vec<usize> {
        self.inner.zero_norm_frames.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Selection(selected={:?}, uniform={:?}, supplementary={:?})",
            self.inner.selected, self.inner.uniform_part, self.inner.supplementary_part
        )
    }
}

#[pyclass(name = "CompressedFrame", module = "dcode", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCompressedFrame {
    inner: CompressedFrame,
}

#[pymethods]
impl PyCompressedFrame {
    #[getter]
    fn frame_index(&self) -> u32 {
        self.inner.frame_index
    }

    #[getter]
    fn retained_count(&self) -> usize {
        self.inner.retained_count
    }

    /// `(anchor, members)` per representative, in anchor order.
    #[getter]
    fn clusters(&self) -> Vec<(u32, Vec<u32>)> {
        self.inner.clusters.iter().map(|c| (c.anchor, c.members.clone())).collect()
    }

    #[getter]
    fn representatives(&self) -> Vec<Vec<f32>> {
        self.inner.representatives.to_rows()
    }

    fn __len__(&self) -> usize {
        self.inner.representative_count()
    }
}

#[pyclass(name = "CompressedVideo", module = "dcode", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCompressedVideo {
    inner: CompressedVideo,
}

#[pymethods]
impl PyCompressedVideo {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_compressed_file(&path).map_err(core_err)?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: read_compressed(data).map_err(core_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<u64> {
        write_compressed_file(&self.inner, &path).map_err(core_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let mut buf = Vec::new();
        write_compressed(&self.inner, &mut buf).map_err(core_err)?;
        Ok(PyBytes::new(py, &buf))
    }

    #[getter]
    fn total_tokens(&self) -> usize {
        self.inner.total_tokens
    }

    #[getter]
    fn frames(&self) -> Vec<PyCompressedFrame> {
        self.inner
            .frames
            .iter()
            .map(|f| PyCompressedFrame { inner: f.clone() })
            .collect()
    }

    /// Token statistics as a JSON string.
    #[pyo3(signature = (video_id="video".to_string()))]
    fn stats_json(&self, video_id: String) -> String {
        serde_json::to_string(&CompressionStats::from_compressed(video_id, &self.inner)).expect("stats serialize")
    }

    fn __len__(&self) -> usize {
        self.inner.frames.len()
    }
}

/// Seeded synthetic features.
#[pyfunction]
#[pyo3(signature = (video_id, frames, tokens_per_frame, d_global=16, d_token=16, seed=0))]
fn synthetic(
    video_id: String,
    frames: usize,
    tokens_per_frame: usize,
    d_global: usize,
    d_token: usize,
    seed: u64,
) -> PyResult<PyVideoFeatures> {
    if frames == 0 || tokens_per_frame == 0 || d_global == 0 || d_token == 0 {
        return Err(PyValueError::new_err("synthetic dimensions must all be >= 1"));
    }
    let spec = SyntheticSpec::new(frames, tokens_per_frame, d_global, d_token, seed);
    Ok(PyVideoFeatures {
        inner: synthetic_video(video_id, &spec),
    })
}

#[pyfunction]
fn cosine_similarity(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    frame_select::cosine_similarity(&a, &b).map_err(core_err)
}

#[pyfunction]
#[pyo3(signature = (video, n_frames, alpha=dcode_core::config::DEFAULT_ALPHA))]
fn select_frames(video: &PyVideoFeatures, n_frames: usize, alpha: f64) -> PyResult<PySelection> {
    Ok(PySelection {
        inner: dcode_core::select_frames(&video.inner, n_frames, alpha).map_err(core_err)?,
    })
}

fn params(beta: f64, tau: f64, max_patch_distance: Option<usize>) -> CompressionParams {
    CompressionParams {
        beta,
        tau,
        max_patch_distance,
    }
}

#[pyfunction]
#[pyo3(signature = (video, selection, beta=0.625, tau=0.9, max_patch_distance=None))]
fn compress(
    video: &PyVideoFeatures,
    selection: &PySelection,
    beta: f64,
    tau: f64,
    max_patch_distance: Option<usize>,
) -> PyResult<PyCompressedVideo> {
    let inner =
        compress_video(&video.inner, &selection.inner, &params(beta, tau, max_patch_distance)).map_err(core_err)?;
    Ok(PyCompressedVideo { inner })
}

/// Prune and merge one token matrix.
#[pyfunction]
#[pyo3(signature = (tokens, beta=0.625, tau=0.9, max_patch_distance=None))]
fn compress_tokens(
    tokens: Vec<Vec<f32>>,
    beta: f64,
    tau: f64,
    max_patch_distance: Option<usize>,
) -> PyResult<PyCompressedFrame> {
    let frame = FrameFeatures {
        frame_index: 0,
        global_vec: vec![1.0],
        tokens: matrix(&tokens)?,
    };
    let inner = dcode_core::compress_frame(&frame, &params(beta, tau, max_patch_distance)).map_err(core_err)?;
    Ok(PyCompressedFrame { inner })
}

#[pyfunction]
fn template_names() -> Vec<&'static str> {
    PromptTemplate::builtin_names().collect()
}

/// Decomposition prompt for `question` using a built-in template name or a template file.
#[pyfunction]
#[pyo3(signature = (question, template="default"))]
fn build_prompt(question: &str, template: &str) -> PyResult<String> {
    let t = PromptTemplate::resolve(template).map_err(decompose_err)?;
    decomposer::build_prompt(&t, question).map_err(decompose_err)
}

#[pyfunction]
fn parse_subquestions(raw: &str) -> PyResult<Vec<String>> {
    decomposer::parse_subquestions(raw).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn aggregate(question: &str, answers: Vec<String>) -> String {
    decomposer::aggregate(question, &answers)
}

/// `{"alpha": .., "beta": .., "tau": .., "temperature": ..}`
#[pyfunction]
fn defaults() -> BTreeMap<&'static str, f64> {
    let c = PipelineConfig::default();
    BTreeMap::from([
        ("alpha", c.alpha),
        ("beta", c.beta),
        ("tau", c.tau),
        ("temperature", c.temperature),
    ])
}

/// Full question-decomposition pass. With `mock_script` (a JSON string) both
/// endpoints are scripted in-process; otherwise the HTTP endpoints are used.
/// Returns the trace as a JSON string.
#[pyfunction]
#[pyo3(signature = (
    question,
    selected=Vec::new(),
    *,
    content_mode="sub-answers",
    template="default",
    temperature=0.5,
    max_subquestions=None,
    mock_script=None,
    chat_base_url=None,
    chat_model=None,
    qa_base_url=None,
    qa_model=None,
))]
#[allow(clippy::too_many_arguments)]
fn ask(
    py: Python<'_>,
    question: &str,
    selected: Vec<usize>,
    content_mode: &str,
    template: &str,
    temperature: f64,
    max_subquestions: Option<usize>,
    mock_script: Option<&str>,
    chat_base_url: Option<String>,
    chat_model: Option<String>,
    qa_base_url: Option<String>,
    qa_model: Option<String>,
) -> PyResult<String> {
    let opts = AskOptions {
        template: PromptTemplate::resolve(template).map_err(decompose_err)?,
        temperature,
        max_subquestions,
        content_mode: content_mode
            .parse::<ContentMode>()
            .map_err(|e| PyValueError::new_err(e.to_string()))?,
        ..AskOptions::default()
    };
    let visual = VisualContext::indices_only(&selected);
    let outcome = match mock_script {
        Some(json) => {
            let script: MockScript =
                serde_json::from_str(json).map_err(|e| PyValueError::new_err(format!("mock script: {e}")))?;
            let backend = ScriptedBackend::new(script);
            py.detach(|| decomposer::ask(question, &backend, &backend, &visual, &opts))
        }
        None => {
            let defaults = PipelineConfig::default();
            let mut chat = defaults.chat_endpoint();
            chat.temperature = temperature;
            let mut qa = defaults.qa_endpoint();
            if let Some(u) = chat_base_url {
                chat.base_url = u;
            }
            if let Some(m) = chat_model {
                chat.model = m;
            }
            if let Some(u) = qa_base_url {
                qa.base_url = u;
            }
            if let Some(m) = qa_model {
                qa.model = m;
            }
            let client = |c: ChatEndpointConfig| HttpChatClient::new(c).map_err(|e| PyValueError::new_err(e.to_string()));
            let (chat, qa) = (client(chat)?, client(qa)?);
            py.detach(|| decomposer::ask(question, &chat, &qa, &visual, &opts))
        }
    }
    .map_err(decompose_err)?;
    serde_json::to_string(&outcome).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn dcode(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVideoFeatures>()?;
    m.add_class::<PySelection>()?;
    m.add_class::<PyCompressedFrame>()?;
    m.add_class::<PyCompressedVideo>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(select_frames, m)?)?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(compress_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(template_names, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_subquestions, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(defaults, m)?)?;
    m.add_function(wrap_pyfunction!(ask, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
