//! Model backends and the named registry used to resolve them from config.
//!
//! Detection and embedding sit behind [`FaceDetectorBackend`] and
//! [`EmbeddingBackend`]. A backend that reports `concurrent_safe() == false`
//! is only ever called by one thread at a time through [`Backends`].

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{Landmarks5, Point, ALIGNED_SIZE, CANONICAL_TEMPLATE};
use crate::face::FaceImage;
use crate::qa::{BagOfWordsEmbedder, KeywordOverlapQa, QABackend, SentenceEmbedder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend {backend} failed: {message}")]
    Failure { backend: String, message: String },
    #[error("unknown {kind} backend {name:?} (registered: {known})")]
    Unknown {
        kind: &'static str,
        name: String,
        known: String,
    },
}

impl BackendError {
    pub fn failure(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Failure {
            backend: backend.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub landmarks: Landmarks5,
    pub score: f64,
}

pub trait FaceDetectorBackend: Send + Sync {
    fn id(&self) -> &str;

    fn concurrent_safe(&self) -> bool {
        true
    }

    fn detect(&self, image: &FaceImage) -> Result<Vec<Detection>, BackendError>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Length of every vector this backend produces.
    fn dim(&self) -> usize;

    fn concurrent_safe(&self) -> bool {
        true
    }

    /// Embeds a 112×112 aligned raster.
    fn embed_raster(&self, face: &RgbImage) -> Result<Vec<f64>, BackendError>;
}

/// Places the canonical template at the same fractional position inside
/// whatever image it is given, with one full-frame box.
///
/// Images with no pixel variation are reported as containing no face.
#[derive(Debug, Clone, Default)]
pub struct FractionalTemplateDetector;

impl FractionalTemplateDetector {
    pub const NAME: &'static str = "fractional-template";
}

impl FaceDetectorBackend for FractionalTemplateDetector {
    fn id(&self) -> &str {
        Self::NAME
    }

    fn detect(&self, image: &FaceImage) -> Result<Vec<Detection>, BackendError> {
        let px = image.pixels();
        let first = px.get_pixel(0, 0);
        if px.pixels().all(|p| p == first) {
            return Ok(Vec::new());
        }
        let (w, h) = (image.width() as f64, image.height() as f64);
        let size = ALIGNED_SIZE as f64;
        let points = CANONICAL_TEMPLATE.map(|[x, y]| Point::new(x / size * w, y / size * h));
        let landmarks = Landmarks5::new(points, image.width(), image.height())
            .map_err(|e| BackendError::failure(Self::NAME, e.to_string()))?;
        Ok(vec![Detection {
            bbox: BoundingBox {
                x: 0.0,
                y: 0.0,
                width: w,
                height: h,
            },
            landmarks,
            score: 1.0,
        }])
    }
}

/// 8×8 area-averaged grayscale thumbnail, mean-centred, flattened, L2-normalized and
/// zero-padded (or truncated) to `dim`.
#[derive(Debug, Clone)]
pub struct DownsampleEmbedder {
    dim: usize,
}

impl DownsampleEmbedder {
    pub const NAME: &'static str = "downsample-8x8";
    pub const GRID: u32 = 8;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    /// Row-major 8×8 mean luma of `face`.
    pub fn thumbnail(face: &RgbImage) -> Vec<f64> {
        let g = Self::GRID;
        let (w, h) = face.dimensions();
        let mut sums = vec![0.0f64; (g * g) as usize];
        let mut counts = vec![0u32; (g * g) as usize];
        for (x, y, p) in face.enumerate_pixels() {
            let cx = (x * g / w).min(g - 1);
            let cy = (y * g / h).min(g - 1);
            let i = (cy * g + cx) as usize;
            let [r, gg, b] = p.0;
            sums[i] += 0.299 * r as f64 + 0.587 * gg as f64 + 0.114 * b as f64;
            counts[i] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }
}

impl Default for DownsampleEmbedder {
    fn default() -> Self {
        Self::new(512)
    }
}

impl EmbeddingBackend for DownsampleEmbedder {
    fn id(&self) -> &str {
        Self::NAME
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raster(&self, face: &RgbImage) -> Result<Vec<f64>, BackendError> {
        let mut v = Self::thumbnail(face);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Err(BackendError::failure(Self::NAME, "raster has no luminance contrast"));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        v.resize(self.dim, 0.0);
        Ok(v)
    }
}

/// Detector and embedder pair, serializing calls to backends that are not
/// safe for concurrent use.
pub struct Backends {
    detector: Arc<dyn FaceDetectorBackend>,
    embedder: Arc<dyn EmbeddingBackend>,
    detector_gate: Mutex<()>,
    embedder_gate: Mutex<()>,
}

impl Backends {
    pub fn new(detector: Arc<dyn FaceDetectorBackend>, embedder: Arc<dyn EmbeddingBackend>) -> Self {
        Self {
            detector,
            embedder,
            detector_gate: Mutex::new(()),
            embedder_gate: Mutex::new(()),
        }
    }

    /// The deterministic reference backends.
    pub fn reference() -> Self {
        Self::new(
            Arc::new(FractionalTemplateDetector),
            Arc::new(DownsampleEmbedder::default()),
        )
    }

    pub fn detector(&self) -> &dyn FaceDetectorBackend {
        self.detector.as_ref()
    }

    pub fn embedder(&self) -> &dyn EmbeddingBackend {
        self.embedder.as_ref()
    }

    pub fn detect(&self, image: &FaceImage) -> Result<Vec<Detection>, BackendError> {
        if self.detector.concurrent_safe() {
            self.detector.detect(image)
        } else {
            let _g = self.detector_gate.lock().unwrap_or_else(|e| e.into_inner());
            self.detector.detect(image)
        }
    }

    pub fn embed_raster(&self, face: &RgbImage) -> Result<Vec<f64>, BackendError> {
        if self.embedder.concurrent_safe() {
            self.embedder.embed_raster(face)
        } else {
            let _g = self.embedder_gate.lock().unwrap_or_else(|e| e.into_inner());
            self.embedder.embed_raster(face)
        }
    }
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends")
            .field("detector", &self.detector.id())
            .field("embedder", &self.embedder.id())
            .finish()
    }
}

/// Options handed to backend factories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendOptions {
    pub embedding_dim: usize,
}

impl Default for BackendOptions {
    fn default() -> Self {
        Self { embedding_dim: 512 }
    }
}

type Factory<T> = Box<dyn Fn(&BackendOptions) -> Result<Arc<T>, BackendError> + Send + Sync>;

/// Name → constructor tables for the four backend kinds.
///
/// [`BackendRegistry::default`] holds the reference implementations.
/// Adapters for real models are registered under their own names.
pub struct BackendRegistry {
    detectors: BTreeMap<String, Factory<dyn FaceDetectorBackend>>,
    embedders: BTreeMap<String, Factory<dyn EmbeddingBackend>>,
    qa: BTreeMap<String, Factory<dyn QABackend>>,
    sentence_embedders: BTreeMap<String, Factory<dyn SentenceEmbedder>>,
}

fn lookup<'a, T: ?Sized>(
    table: &'a BTreeMap<String, Factory<T>>,
    kind: &'static str,
    name: &str,
) -> Result<&'a Factory<T>, BackendError> {
    table.get(name).ok_or_else(|| BackendError::Unknown {
        kind,
        name: name.to_string(),
        known: table.keys().cloned().collect::<Vec<_>>().join(", "),
    })
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self {
            detectors: BTreeMap::new(),
            embedders: BTreeMap::new(),
            qa: BTreeMap::new(),
            sentence_embedders: BTreeMap::new(),
        }
    }

    pub fn register_detector<F>(&mut self, name: &str, f: F)
    where
        F: Fn(&BackendOptions) -> Result<Arc<dyn FaceDetectorBackend>, BackendError> + Send + Sync + 'static,
    {
        self.detectors.insert(name.to_string(), Box::new(f));
    }

    pub fn register_embedder<F>(&mut self, name: &str, f: F)
    where
        F: Fn(&BackendOptions) -> Result<Arc<dyn EmbeddingBackend>, BackendError> + Send + Sync + 'static,
    {
        self.embedders.insert(name.to_string(), Box::new(f));
    }

    pub fn register_qa<F>(&mut self, name: &str, f: F)
    where
        F: Fn(&BackendOptions) -> Result<Arc<dyn QABackend>, BackendError> + Send + Sync + 'static,
    {
        self.qa.insert(name.to_string(), Box::new(f));
    }

    pub fn register_sentence_embedder<F>(&mut self, name: &str, f: F)
    where
        F: Fn(&BackendOptions) -> Result<Arc<dyn SentenceEmbedder>, BackendError> + Send + Sync + 'static,
    {
        self.sentence_embedders.insert(name.to_string(), Box::new(f));
    }

    pub fn detector(&self, name: &str, opts: &BackendOptions) -> Result<Arc<dyn FaceDetectorBackend>, BackendError> {
        lookup(&self.detectors, "detector", name)?(opts)
    }

    pub fn embedder(&self, name: &str, opts: &BackendOptions) -> Result<Arc<dyn EmbeddingBackend>, BackendError> {
        lookup(&self.embedders, "embedder", name)?(opts)
    }

    pub fn qa(&self, name: &str, opts: &BackendOptions) -> Result<Arc<dyn QABackend>, BackendError> {
        lookup(&self.qa, "qa", name)?(opts)
    }

    pub fn sentence_embedder(&self, name: &str, opts: &BackendOptions) -> Result<Arc<dyn SentenceEmbedder>, BackendError> {
        lookup(&self.sentence_embedders, "sentence_embedder", name)?(opts)
    }
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register_detector(FractionalTemplateDetector::NAME, |_| {
            Ok(Arc::new(FractionalTemplateDetector))
        });
        r.register_embedder(DownsampleEmbedder::NAME, |o| {
            Ok(Arc::new(DownsampleEmbedder::new(o.embedding_dim)))
        });
        r.register_qa(KeywordOverlapQa::NAME, |_| Ok(Arc::new(KeywordOverlapQa)));
        r.register_sentence_embedder(BagOfWordsEmbedder::NAME, |_| {
            Ok(Arc::new(BagOfWordsEmbedder::default()))
        });
        r
    }
}
