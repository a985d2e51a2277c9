//! Detection, alignment, embedding, cosine scoring and the match decision.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{AlignError, AlignedFace};
use crate::backend::{BackendError, Backends, FaceDetectorBackend};
use crate::face::FaceImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("no face found")]
    NoFaceFound,
    #[error("degenerate landmarks: {0}")]
    DegenerateLandmarks(#[from] AlignError),
    #[error("backend failure: {0}")]
    BackendFailure(#[from] BackendError),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding has a non-finite entry")]
    NonFinite,
}

/// Which image of a pair an error belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSide {
    A,
    B,
}

impl fmt::Display for PairSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairSide::A => "A",
            PairSide::B => "B",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("image {side}: {source}")]
pub struct PairError {
    pub side: PairSide,
    #[source]
    pub source: VerifyError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    vector: Vec<f64>,
    backend_id: String,
}

impl Embedding {
    pub fn new(vector: Vec<f64>, backend_id: impl Into<String>) -> Result<Self, VerifyError> {
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(VerifyError::NonFinite);
        }
        if vector.iter().all(|&x| x == 0.0) {
            return Err(VerifyError::ZeroNorm);
        }
        Ok(Self {
            vector,
            backend_id: backend_id.into(),
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "match")]
    Match,
    #[serde(rename = "non-match")]
    NonMatch,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Match => "match",
            Decision::NonMatch => "non-match",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of comparing one image pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub pair_id: String,
    pub score: f64,
    pub threshold: f64,
    pub decision: Decision,
    /// Confidence in the decision, filled after calibration.
    pub pic: f64,
}

impl VerificationRecord {
    pub fn new(pair_id: impl Into<String>, score: f64, threshold: f64) -> Self {
        Self {
            pair_id: pair_id.into(),
            score,
            threshold,
            decision: decide(score, threshold),
            pic: 0.0,
        }
    }

    pub fn with_pic(mut self, pic: f64) -> Self {
        assert!((0.0..=1.0).contains(&pic), "pic confidence {pic} outside [0,1]");
        self.pic = pic;
        self
    }
}

/// A verified pair together with the intermediate artifacts the
/// explanation stages consume.
#[derive(Debug, Clone)]
pub struct VerifiedPair {
    pub record: VerificationRecord,
    pub face_a: AlignedFace,
    pub face_b: AlignedFace,
    pub embedding_a: Embedding,
    pub embedding_b: Embedding,
}

/// Detects the largest face in `img` and aligns it to the canonical frame.
pub fn detect_and_align(
    img: &FaceImage,
    detector: &dyn FaceDetectorBackend,
) -> Result<AlignedFace, VerifyError> {
    let detections = detector.detect(img)?;
    align_largest(img, detections)
}

fn align_largest(
    img: &FaceImage,
    detections: Vec<crate::backend::Detection>,
) -> Result<AlignedFace, VerifyError> {
    // max_by keeps the last maximum; fold keeps the first on equal areas
    let best = detections
        .into_iter()
        .fold(None::<crate::backend::Detection>, |best, d| match best {
            Some(b) if b.bbox.area() >= d.bbox.area() => Some(b),
            _ => Some(d),
        })
        .ok_or(VerifyError::NoFaceFound)?;
    Ok(AlignedFace::align(img.pixels(), &best.landmarks, img.source_id())?)
}

pub fn embed(face: &AlignedFace, backends: &Backends) -> Result<Embedding, VerifyError> {
    let id = backends.embedder().id().to_string();
    let v = backends.embed_raster(face.pixels())?;
    if v.len() != backends.embedder().dim() {
        return Err(BackendError::failure(
            id,
            format!("returned {} values, declared {}", v.len(), backends.embedder().dim()),
        )
        .into());
    }
    Embedding::new(v, id).map_err(|e| {
        VerifyError::BackendFailure(BackendError::failure(backends.embedder().id(), e.to_string()))
    })
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1] against rounding.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, VerifyError> {
    cosine(a.vector(), b.vector())
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, VerifyError> {
    if a.len() != b.len() {
        return Err(VerifyError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(VerifyError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// A score equal to the threshold counts as a match.
pub fn decide(score: f64, threshold: f64) -> Decision {
    if score >= threshold {
        Decision::Match
    } else {
        Decision::NonMatch
    }
}

pub fn pair_id(a: &FaceImage, b: &FaceImage) -> String {
    format!("{}|{}", a.source_id(), b.source_id())
}

/// Full comparison of two images, keeping aligned faces and embeddings.
pub fn verify_pair_detailed(
    img_a: &FaceImage,
    img_b: &FaceImage,
    backends: &Backends,
    threshold: f64,
) -> Result<VerifiedPair, PairError> {
    let side = |side| move |source| PairError { side, source };
    let face_a = backends
        .detect(img_a)
        .map_err(VerifyError::from)
        .and_then(|d| align_largest(img_a, d))
        .map_err(side(PairSide::A))?;
    let face_b = backends
        .detect(img_b)
        .map_err(VerifyError::from)
        .and_then(|d| align_largest(img_b, d))
        .map_err(side(PairSide::B))?;
    let embedding_a = embed(&face_a, backends).map_err(side(PairSide::A))?;
    let embedding_b = embed(&face_b, backends).map_err(side(PairSide::B))?;
    let score = cosine_similarity(&embedding_a, &embedding_b).map_err(side(PairSide::B))?;
    Ok(VerifiedPair {
        record: VerificationRecord::new(pair_id(img_a, img_b), score, threshold),
        face_a,
        face_b,
        embedding_a,
        embedding_b,
    })
}

/// Compares two images. The returned record's `pic` is 0 until calibrated.
pub fn verify_pair(
    img_a: &FaceImage,
    img_b: &FaceImage,
    backends: &Backends,
    threshold: f64,
) -> Result<VerificationRecord, PairError> {
    verify_pair_detailed(img_a, img_b, backends, threshold).map(|p| p.record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{Landmarks5, Point, CANONICAL_TEMPLATE};
    use crate::backend::{BoundingBox, Detection, DownsampleEmbedder, EmbeddingBackend};
    use image::{Rgb, RgbImage};
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec(), "t").unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = emb(&[0.3, -1.2, 2.0]);
        let neg = emb(&[-0.3, 1.2, -2.0]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine(&[1.0, 2.0], &[1.0]),
            Err(VerifyError::DimensionMismatch(2, 1))
        );
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(VerifyError::ZeroNorm));
        assert_eq!(Embedding::new(vec![0.0; 3], "z"), Err(VerifyError::ZeroNorm));
        assert_eq!(Embedding::new(vec![f64::NAN], "n"), Err(VerifyError::NonFinite));
    }

    #[test]
    fn decide_examples() {
        assert_eq!(decide(0.9, 0.5), Decision::Match);
        assert_eq!(decide(0.5, 0.5), Decision::Match);
        assert_eq!(decide(0.49, 0.5), Decision::NonMatch);
    }

    #[test]
    fn decision_serializes_with_hyphen() {
        assert_eq!(serde_json::to_string(&Decision::NonMatch).unwrap(), "\"non-match\"");
    }

    struct MultiDetector;

    impl FaceDetectorBackend for MultiDetector {
        fn id(&self) -> &str {
            "multi"
        }
        fn detect(&self, _: &FaceImage) -> Result<Vec<Detection>, crate::backend::BackendError> {
            let make = |scale: f64, side: f64| Detection {
                bbox: BoundingBox { x: 0.0, y: 0.0, width: side, height: side },
                landmarks: Landmarks5::unbounded(
                    CANONICAL_TEMPLATE.map(|[x, y]| Point::new(x * scale, y * scale)),
                )
                .unwrap(),
                score: 0.9,
            };
            Ok(vec![make(0.5, 40.0), make(2.0, 90.0), make(1.0, 60.0)])
        }
    }

    struct NoFaces;

    impl FaceDetectorBackend for NoFaces {
        fn id(&self) -> &str {
            "none"
        }
        fn detect(&self, _: &FaceImage) -> Result<Vec<Detection>, crate::backend::BackendError> {
            Ok(Vec::new())
        }
    }

    fn textured(seed: u8) -> FaceImage {
        FaceImage::new(
            RgbImage::from_fn(224, 224, |x, y| {
                Rgb([(x as u8).wrapping_mul(seed), (y as u8) ^ seed, ((x + y) as u8).wrapping_add(seed)])
            }),
            format!("img{seed}"),
        )
        .unwrap()
    }

    #[test]
    fn largest_detection_is_aligned() {
        let face = detect_and_align(&textured(3), &MultiDetector).unwrap();
        assert!((face.transform().scale() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn no_detection_is_no_face_found() {
        assert_eq!(
            detect_and_align(&textured(3), &NoFaces).unwrap_err(),
            VerifyError::NoFaceFound
        );
    }

    #[test]
    fn identical_images_score_one() {
        let b = Backends::reference();
        let img = textured(7);
        let r = verify_pair(&img, &img, &b, 0.5).unwrap();
        assert!((r.score - 1.0).abs() < 1e-6);
        assert_eq!(r.decision, Decision::Match);
        assert_eq!(r.pic, 0.0);
    }

    #[test]
    fn pair_score_matches_hand_rolled_mock() {
        let b = Backends::reference();
        let (ia, ib) = (textured(3), textured(11));
        let p = verify_pair_detailed(&ia, &ib, &b, 0.5).unwrap();
        // independent re-derivation: 8x8 block means of luma, centred and normalized
        let thumb = |img: &RgbImage| -> Vec<f64> {
            let mut out = Vec::new();
            for by in 0..8 {
                for bx in 0..8 {
                    let mut s = 0.0;
                    for y in by * 14..(by + 1) * 14 {
                        for x in bx * 14..(bx + 1) * 14 {
                            let p = img.get_pixel(x, y).0;
                            s += 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                        }
                    }
                    out.push(s / 196.0);
                }
            }
            let m = out.iter().sum::<f64>() / 64.0;
            let c: Vec<f64> = out.iter().map(|x| x - m).collect();
            let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.into_iter().map(|x| x / n).collect()
        };
        let ta = thumb(p.face_a.pixels());
        let tb = thumb(p.face_b.pixels());
        let dot: f64 = ta.iter().zip(&tb).map(|(x, y)| x * y).sum();
        assert!((p.record.score - dot).abs() < 1e-12);
        assert_ne!(p.embedding_a.vector(), p.embedding_b.vector());
    }

    #[test]
    fn embedding_is_deterministic_and_normalized() {
        let b = Backends::reference();
        let face = detect_and_align(&textured(5), b.detector()).unwrap();
        let e1 = embed(&face, &b).unwrap();
        let e2 = embed(&face, &b).unwrap();
        assert_eq!(e1, e2);
        assert!((e1.norm() - 1.0).abs() < 1e-6);
        assert_eq!(e1.dim(), DownsampleEmbedder::default().dim());
    }

    #[test]
    fn missing_face_in_b_is_attributed_to_b() {
        let b = Backends::reference();
        let blank = FaceImage::new(RgbImage::from_pixel(80, 80, Rgb([1, 2, 3])), "blank").unwrap();
        let err = verify_pair(&textured(1), &blank, &b, 0.5).unwrap_err();
        assert_eq!(err.side, PairSide::B);
        assert_eq!(err.source, VerifyError::NoFaceFound);
    }

    #[test]
    fn swapped_pair_scores_equal() {
        let b = Backends::reference();
        let (x, y) = (textured(2), textured(9));
        let ab = verify_pair(&x, &y, &b, 0.9).unwrap();
        let ba = verify_pair(&y, &x, &b, 0.9).unwrap();
        assert!((ab.score - ba.score).abs() < 1e-6);
        assert_eq!(ab.decision, ba.decision);
    }

    fn vec_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..16).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_and_scale_invariant((a, b) in vec_strategy(), c in 0.01f64..100.0) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let ab = cosine(&a, &b).unwrap();
            prop_assert!((ab - cosine(&b, &a).unwrap()).abs() < 1e-12);
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            prop_assert!((ab - cosine(&scaled, &b).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn decide_is_monotone(s in -1.0f64..1.0, bump in 0.0f64..1.0, t in -1.0f64..1.0) {
            if decide(s, t) == Decision::Match {
                prop_assert_eq!(decide(s + bump, t), Decision::Match);
            }
        }
    }
}
