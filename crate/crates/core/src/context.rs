//! Plain-text context describing one verified pair, for extractive QA.
//!
//! The wording is a versioned template. Every sentence ends in a period
//! and no sentence contains a period followed by whitespace, so
//! [`split_sentences`] recovers the sentence list exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::saliency::SaliencyMethod;
use crate::table::{rank_regions, ExplainabilityTable};
use crate::text::split_sentences;
use crate::verify::{Decision, VerificationRecord};

pub const TEMPLATE_VERSION: &str = "xfr-context/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContextError {
    #[error("inputs describe different pairs: {0}")]
    PairMismatch(String),
    #[error("invalid context info: {0}")]
    InvalidInfo(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralContextInfo {
    pub system_name: String,
    pub model_description: String,
    pub threshold: f64,
    pub score: f64,
    pub decision: String,
    pub confidence_pct: f64,
    pub xai_method_glossary: BTreeMap<SaliencyMethod, String>,
}

pub const DEFAULT_SYSTEM_NAME: &str = "an explainable face verification service";
pub const DEFAULT_MODEL_DESCRIPTION: &str =
    "five-point face alignment followed by a face embedding model compared with cosine similarity";

pub fn default_glossary() -> BTreeMap<SaliencyMethod, String> {
    [
        (
            SaliencyMethod::SingleRemoval,
            "Single removal marks the face areas whose occlusion lowers the comparison score the most.",
        ),
        (
            SaliencyMethod::GreedyRemoval,
            "Greedy removal occludes the strongest face areas one after another and ranks them by removal order.",
        ),
        (
            SaliencyMethod::SingleAggregation,
            "Single aggregation marks the face areas that raise the comparison score the most when restored onto a blurred face.",
        ),
        (
            SaliencyMethod::GreedyAggregation,
            "Greedy aggregation restores the strongest face areas one after another onto a blurred face and ranks them by addition order.",
        ),
        (
            SaliencyMethod::Average,
            "The average method takes the mean of the other four saliency heatmaps.",
        ),
    ]
    .into_iter()
    .map(|(m, s)| (m, s.to_string()))
    .collect()
}

impl GeneralContextInfo {
    /// Info for `record` with the default descriptions and glossary.
    pub fn for_record(record: &VerificationRecord) -> Self {
        Self::with_names(record, DEFAULT_SYSTEM_NAME, DEFAULT_MODEL_DESCRIPTION)
    }

    pub fn with_names(record: &VerificationRecord, system_name: &str, model_description: &str) -> Self {
        Self {
            system_name: system_name.to_string(),
            model_description: model_description.to_string(),
            threshold: record.threshold,
            score: record.score,
            decision: record.decision.as_str().to_string(),
            confidence_pct: record.pic * 100.0,
            xai_method_glossary: default_glossary(),
        }
    }

    fn validate(&self) -> Result<(), ContextError> {
        let bad = |m: String| Err(ContextError::InvalidInfo(m));
        for (name, s) in [("system_name", &self.system_name), ("model_description", &self.model_description)] {
            if s.trim().is_empty() {
                return bad(format!("{name} is empty"));
            }
            if split_sentences(&format!("{s}.")).len() != 1 {
                return bad(format!("{name} must be a single clause"));
            }
        }
        if !(0.0..=100.0).contains(&self.confidence_pct) {
            return bad(format!("confidence {} outside [0, 100]", self.confidence_pct));
        }
        for m in SaliencyMethod::ALL {
            match self.xai_method_glossary.get(&m) {
                Some(s) if split_sentences(s).len() == 1 && s.ends_with('.') => {}
                _ => return bad(format!("glossary entry for {m} must be one sentence ending in a period")),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAContext {
    pub text: String,
    pub sentences: Vec<String>,
    pub template_version: String,
}

impl QAContext {
    /// Wraps free-form text.
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            sentences: split_sentences(&text),
            text,
            template_version: "free-text".into(),
        }
    }
}

fn strip_period(s: &str) -> &str {
    s.trim().trim_end_matches('.')
}

/// Renders the decision block, one sentence per table row, the ranking
/// and a glossary.
pub fn build_context(
    record: &VerificationRecord,
    table: &ExplainabilityTable,
    info: &GeneralContextInfo,
) -> Result<QAContext, ContextError> {
    if record.pair_id != table.pair_id {
        return Err(ContextError::PairMismatch(format!(
            "record {:?} vs table {:?}",
            record.pair_id, table.pair_id
        )));
    }
    if info.decision != record.decision.as_str() || info.score != record.score || info.threshold != record.threshold {
        return Err(ContextError::PairMismatch("context info does not describe the record".into()));
    }
    info.validate()?;

    let decision = record.decision.as_str();
    let conf = format!("{:.1}", info.confidence_pct);
    let mut s: Vec<String> = vec![
        format!("The decision is {decision} with a confidence of {conf} percent."),
        format!("The given image pair is classified as {decision}."),
        format!("The comparison score is {:.3}.", record.score),
        format!("The decision threshold is {:.3}.", record.threshold),
        format!("The system is {conf} percent sure about this decision."),
        match record.decision {
            Decision::Match => "The two face images belong to the same person according to the system.".into(),
            Decision::NonMatch => "The two face images belong to different persons according to the system.".into(),
        },
        "Scores at or above the threshold are classified as match and lower scores as non-match.".into(),
        "To come to this decision the system compares the face embeddings of both images with cosine similarity and checks the score against the threshold.".into(),
        format!(
            "The face verification system is {} and it uses {}.",
            strip_period(&info.system_name),
            strip_period(&info.model_description)
        ),
    ];

    for r in &table.rows {
        let v = r.scores();
        s.push(format!(
            "The {} region has a score of {} with single removal, {} with greedy removal, {} with single aggregation, {} with greedy aggregation and {} with the average method, giving a mean of {:.1} and a ratio of ones of {:.1}.",
            r.region.words(), v[0], v[1], v[2], v[3], v[4], r.mean, r.ratio_of_1s
        ));
    }

    let ranked = rank_regions(table);
    if let (Some(first), Some(last)) = (ranked.first(), ranked.last()) {
        s.push(format!("The most important facial region is the {}.", first.words()));
        s.push(format!("The least important facial region is the {}.", last.words()));
    }
    s.push("Each region receives an importance score from 1 to 5 where 1 marks the highest importance.".into());

    for m in SaliencyMethod::ALL {
        s.push(info.xai_method_glossary[&m].trim().to_string());
    }
    s.extend(
        [
            "Explainable AI is the field of methods that make the decisions of machine learning models understandable to people.",
            "A saliency heatmap highlights the parts of a face image that influence the comparison score the most.",
            "The output images are saliency heatmaps that highlight which facial areas drove the comparison.",
            "The confidence value is the calibrated probability that the decision is correct.",
        ]
        .map(String::from),
    );

    let text = s.join(" ");
    debug_assert_eq!(split_sentences(&text), s);
    Ok(QAContext {
        text,
        sentences: s,
        template_version: TEMPLATE_VERSION.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::RegionName;

    fn fixture_table() -> ExplainabilityTable {
        ExplainabilityTable::from_scores(
            "pair",
            [
                [1, 5, 1, 5, 1],
                [3, 5, 1, 4, 1],
                [1, 5, 2, 5, 1],
                [3, 5, 2, 5, 3],
                [4, 5, 5, 5, 5],
                [2, 5, 3, 5, 4],
                [4, 5, 1, 5, 4],
                [5, 5, 2, 5, 5],
                [5, 5, 5, 5, 5],
            ],
        )
        .unwrap()
    }

    fn record() -> VerificationRecord {
        VerificationRecord::new("pair", 0.812, 0.5).with_pic(0.93)
    }

    fn ctx() -> QAContext {
        let r = record();
        build_context(&r, &fixture_table(), &GeneralContextInfo::for_record(&r)).unwrap()
    }

    #[test]
    fn decision_sentence_format() {
        let c = ctx();
        assert!(c.sentences.contains(&"The decision is match with a confidence of 93.0 percent.".to_string()));
        assert!(c.text.contains("The comparison score is 0.812."));
    }

    #[test]
    fn names_the_most_important_region() {
        assert!(ctx().text.contains("The most important facial region is the left eyebrow."));
        assert!(ctx().text.contains("The least important facial region is the nose."));
    }

    #[test]
    fn each_region_has_exactly_one_row_sentence() {
        let c = ctx();
        for r in RegionName::ALL {
            let prefix = format!("The {} region has a score of", r.words());
            assert_eq!(c.sentences.iter().filter(|s| s.starts_with(&prefix)).count(), 1, "{r}");
        }
    }

    #[test]
    fn sentences_round_trip() {
        let c = ctx();
        assert_eq!(split_sentences(&c.text), c.sentences);
        assert_eq!(c.sentences.join(" "), c.text);
        assert!(c.sentences.len() >= 15);
        assert!(c.sentences.iter().all(|s| s.ends_with('.')));
        assert_eq!(c.template_version, TEMPLATE_VERSION);
    }

    #[test]
    fn deterministic() {
        assert_eq!(ctx().text, ctx().text);
    }

    #[test]
    fn numbers_parse_back() {
        let r = VerificationRecord::new("pair", 0.41234, 0.45).with_pic(0.6789);
        let c = build_context(&r, &fixture_table(), &GeneralContextInfo::for_record(&r)).unwrap();
        let re = regex::Regex::new(r"score is (-?\d+\.\d{3})\.").unwrap();
        let score: f64 = re.captures(&c.text).unwrap()[1].parse().unwrap();
        assert_eq!(score, (r.score * 1000.0).round() / 1000.0);
        let re = regex::Regex::new(r"confidence of (\d+\.\d) percent").unwrap();
        let conf: f64 = re.captures(&c.text).unwrap()[1].parse().unwrap();
        assert_eq!(conf, 67.9);
        assert!(c.text.contains("The decision is non-match"));
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let r = VerificationRecord::new("other", 0.8, 0.5).with_pic(0.9);
        assert!(matches!(
            build_context(&r, &fixture_table(), &GeneralContextInfo::for_record(&r)),
            Err(ContextError::PairMismatch(_))
        ));
        let good = record();
        let stale = GeneralContextInfo::for_record(&VerificationRecord::new("pair", 0.1, 0.5));
        assert!(matches!(build_context(&good, &fixture_table(), &stale), Err(ContextError::PairMismatch(_))));
    }

    #[test]
    fn multi_sentence_names_are_rejected() {
        let r = record();
        let mut info = GeneralContextInfo::for_record(&r);
        info.system_name = "Sys. Extra words".into();
        assert!(matches!(build_context(&r, &fixture_table(), &info), Err(ContextError::InvalidInfo(_))));
    }
}
