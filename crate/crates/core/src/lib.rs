//! Training-free video adaptation toolkit.
//!
//! The crate covers the numeric half of the pipeline (frame selection and
//! per-frame token compression over precomputed encoder features) and the
//! orchestration half (question decomposition against chat-completion
//! endpoints, sub-question fan-out, answer aggregation).
//!
//! Features arrive as `DCFT` containers ([`feature_store`]); compressed token
//! sets leave as `DCCT` containers ([`compressed_store`]).

pub mod compressed_store;
pub mod config;
pub mod decomposer;
pub mod error;
pub mod feature_store;
pub mod frame_select;
pub mod mock;
pub mod stats;
pub mod synthetic;
pub mod token_compress;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use feature_store::{FrameFeatures, TokenMatrix, VideoFeatureSet, Violation};
pub use frame_select::{select_frames, SelectionResult};
pub use token_compress::{compress_frame, compress_video, CompressedFrame, CompressedVideo, CompressionParams};
