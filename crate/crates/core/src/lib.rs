//! Explainable face verification.
//!
//! The pipeline compares two face images, calibrates the comparison score
//! into a PIC confidence, explains the decision with five black-box
//! saliency maps, condenses those maps into a per-region explainability
//! table, and answers free-text questions about the result with an
//! extractive QA backend that falls back to a retrieved sub-context when
//! its first answer is not confident enough.
//!
//! Model backends (detector, embedder, QA, sentence embedder) are traits.
//! The crate ships deterministic reference implementations of each so the
//! whole pipeline runs without model weights.

// Range checks are written `!(lo < x && x < hi)` so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod backend;
pub mod calibration;
pub mod config;
pub mod context;
pub mod eval;
pub mod face;
pub mod pipeline;
pub mod qa;
pub mod regions;
pub mod render;
pub mod saliency;
pub mod synth;
pub mod table;
pub mod text;
pub mod verify;

pub use align::{AlignedFace, Landmarks5, Point, SimilarityTransform, ALIGNED_SIZE, CANONICAL_TEMPLATE};
pub use backend::{
    BackendError, BackendRegistry, Backends, Detection, EmbeddingBackend, FaceDetectorBackend,
};
pub use calibration::{CalibrationSet, DetPoint, PicModel};
pub use config::ServiceConfig;
pub use context::{GeneralContextInfo, QAContext};
pub use face::FaceImage;
pub use pipeline::{Explained, Pipeline};
pub use qa::{AnswerResult, QABackend, QaEngine, SentenceEmbedder};
pub use regions::{FacialRegion, RegionName};
pub use saliency::{OcclusionGrid, PairScorer, SaliencyMap, SaliencyMethod};
pub use table::ExplainabilityTable;
pub use verify::{Decision, Embedding, VerificationRecord, VerifiedPair};
