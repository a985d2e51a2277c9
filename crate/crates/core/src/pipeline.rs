//! End-to-end composition: verify, calibrate, explain, tabulate, textualize.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::AlignedFace;
use crate::backend::Backends;
use crate::calibration::{pic_confidence, PicModel};
use crate::config::DEFAULT_THRESHOLD;
use crate::context::{build_context, ContextError, GeneralContextInfo, QAContext};
use crate::face::FaceImage;
use crate::qa::QaEngine;
use crate::regions::{FacialRegion, RegionError, RegionLocator, TemplateRegionLocator};
use crate::saliency::{explain_pair, EmbeddingScorer, OcclusionGrid, SaliencyError, SaliencyMap};
use crate::table::{build_table, ExplainabilityTable, TableError};
use crate::verify::{cosine_similarity, embed, verify_pair_detailed, PairError, VerificationRecord, VerifiedPair, VerifyError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Context(#[from] ContextError),
}

/// Everything derived from one image pair.
#[derive(Debug, Clone)]
pub struct Explained {
    pub record: VerificationRecord,
    pub face_a: AlignedFace,
    pub face_b: AlignedFace,
    pub maps: [SaliencyMap; 5],
    pub regions: Vec<FacialRegion>,
    pub table: ExplainabilityTable,
    pub context: QAContext,
}

/// Summary of a pipeline's settings, for logs and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineInfo {
    pub detector: String,
    pub embedder: String,
    pub threshold: f64,
    pub grid_window: u32,
    pub grid_stride: u32,
    pub greedy_steps: usize,
}

#[derive(Clone)]
pub struct Pipeline {
    pub backends: Arc<Backends>,
    pub threshold: f64,
    pub pic: PicModel,
    pub grid: OcclusionGrid,
    pub greedy_steps: usize,
    pub locator: Arc<dyn RegionLocator>,
    pub qa: QaEngine,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("info", &self.info()).finish()
    }
}

impl Pipeline {
    /// Reference backends, default grid, neutral calibration.
    pub fn reference() -> Self {
        Self {
            backends: Arc::new(Backends::reference()),
            threshold: DEFAULT_THRESHOLD,
            pic: PicModel::neutral(),
            grid: OcclusionGrid::default(),
            greedy_steps: crate::saliency::DEFAULT_GREEDY_STEPS,
            locator: Arc::new(TemplateRegionLocator),
            qa: QaEngine::reference(),
        }
    }

    pub fn info(&self) -> PipelineInfo {
        PipelineInfo {
            detector: self.backends.detector().id().to_string(),
            embedder: self.backends.embedder().id().to_string(),
            threshold: self.threshold,
            grid_window: self.grid.window(),
            grid_stride: self.grid.stride(),
            greedy_steps: self.greedy_steps,
        }
    }

    fn calibrate(&self, record: VerificationRecord) -> VerificationRecord {
        let c = pic_confidence(&self.pic, record.score, record.decision);
        record.with_pic(c)
    }

    /// Detects, aligns, embeds and scores the pair, with calibrated
    /// confidence.
    pub fn verify(&self, a: &FaceImage, b: &FaceImage) -> Result<VerifiedPair, PipelineError> {
        let mut pair = verify_pair_detailed(a, b, &self.backends, self.threshold)?;
        pair.record = self.calibrate(pair.record);
        Ok(pair)
    }

    /// Saliency maps are computed on image A against B's embedding.
    pub fn explain(&self, pair: &VerifiedPair) -> Result<Explained, PipelineError> {
        self.explain_faces(pair.record.clone(), pair.face_a.clone(), pair.face_b.clone())
    }

    /// Explains already aligned faces, re-embedding the reference side.
    pub fn explain_faces(
        &self,
        record: VerificationRecord,
        face_a: AlignedFace,
        face_b: AlignedFace,
    ) -> Result<Explained, PipelineError> {
        let scorer = EmbeddingScorer::for_face(self.backends.clone(), &face_b)?;
        let maps = explain_pair(&face_a, &scorer, &self.grid, self.greedy_steps)?;
        let regions = self.locator.locate(&face_a)?;
        let table = build_table(record.pair_id.clone(), &maps, &regions)?;
        let context = build_context(&record, &table, &GeneralContextInfo::for_record(&record))?;
        Ok(Explained {
            record,
            face_a,
            face_b,
            maps,
            regions,
            table,
            context,
        })
    }

    /// Scores two aligned faces directly, as when reloading saved crops.
    pub fn rescore(&self, pair_id: &str, face_a: &AlignedFace, face_b: &AlignedFace) -> Result<VerificationRecord, PipelineError> {
        let ea = embed(face_a, &self.backends)?;
        let eb = embed(face_b, &self.backends)?;
        let score = cosine_similarity(&ea, &eb)?;
        Ok(self.calibrate(VerificationRecord::new(pair_id, score, self.threshold)))
    }

    pub fn run(&self, a: &FaceImage, b: &FaceImage) -> Result<Explained, PipelineError> {
        let pair = self.verify(a, b)?;
        self.explain(&pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_face, FaceParams};

    #[test]
    fn identical_images_match_with_unit_score() {
        let img = FaceImage::new(render_face(&FaceParams::from_seed(1), 160, 160), "same.png").unwrap();
        let p = Pipeline::reference();
        let pair = p.verify(&img, &img).unwrap();
        assert!((pair.record.score - 1.0).abs() < 1e-6);
        assert_eq!(pair.record.decision, crate::verify::Decision::Match);
        assert_eq!(pair.record.pic, 0.5);
    }

    #[test]
    fn run_produces_full_context() {
        let a = FaceImage::new(render_face(&FaceParams::from_seed(1), 160, 160), "a.png").unwrap();
        let b = FaceImage::new(render_face(&FaceParams::from_seed(2), 160, 160), "b.png").unwrap();
        let mut p = Pipeline::reference();
        p.grid = OcclusionGrid::new(24, 22).unwrap();
        p.greedy_steps = 5;
        let e = p.run(&a, &b).unwrap();
        assert_eq!(e.table.rows.len(), 9);
        assert_eq!(e.maps.len(), 5);
        assert!(e.context.sentences.len() >= 15);
        assert_eq!(e.table.pair_id, "a.png|b.png");
    }

    #[test]
    fn rescore_matches_verify() {
        let a = FaceImage::new(render_face(&FaceParams::from_seed(3), 140, 180), "a.png").unwrap();
        let b = FaceImage::new(render_face(&FaceParams::from_seed(4), 200, 200), "b.png").unwrap();
        let p = Pipeline::reference();
        let pair = p.verify(&a, &b).unwrap();
        let again = p.rescore(&pair.record.pair_id, &pair.face_a, &pair.face_b).unwrap();
        assert_eq!(again, pair.record);
    }
}
