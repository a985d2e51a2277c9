//! Extractive question answering over a [`QAContext`] with a sub-context
//! retry when the first answer is not confident enough.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::context::QAContext;
use crate::text::{content_terms, normalize_question, split_sentences};

pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QaError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("context has no sentences")]
    EmptyContext,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    BackendFailure(#[from] BackendError),
}

/// Raw output of an extractive backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub answer: String,
    pub confidence: f64,
}

/// `(question, context) -> span`. The span must be a substring of the
/// context and the confidence must lie in [0, 1].
pub trait QABackend: Send + Sync {
    fn id(&self) -> &str;
    fn extract(&self, question: &str, context: &str) -> Result<Span, BackendError>;
}

/// Maps text to a unit-norm vector of fixed dimension.
pub trait SentenceEmbedder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn concurrent_safe(&self) -> bool {
        true
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSource {
    Faq,
    Context,
    Subcontext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub answer: String,
    pub confidence: f64,
    pub used_subcontext: bool,
    pub subcontext_sentences: Vec<String>,
    pub latency_ms: f64,
    pub source: AnswerSource,
}

/// Returns the best-overlapping sentence by IDF-weighted keyword match.
///
/// Confidence is `coverage * (0.5 + 0.5 * separation)` where coverage is
/// the matched share of the question's term weight and separation is the
/// relative margin over the runner-up sentence. Terms absent from the
/// context get the largest possible weight, so off-topic questions score
/// low. Ties go to the earlier sentence.
#[derive(Debug, Clone, Default)]
pub struct KeywordOverlapQa;

impl KeywordOverlapQa {
    pub const NAME: &'static str = "keyword-overlap";
}

impl QABackend for KeywordOverlapQa {
    fn id(&self) -> &str {
        Self::NAME
    }

    fn extract(&self, question: &str, context: &str) -> Result<Span, BackendError> {
        let none = Span {
            answer: String::new(),
            confidence: 0.0,
        };
        let sentences = split_sentences(context);
        let q: BTreeSet<String> = content_terms(question).into_iter().collect();
        if sentences.is_empty() || q.is_empty() {
            return Ok(none);
        }
        let sets: Vec<HashSet<String>> = sentences.iter().map(|s| content_terms(s).into_iter().collect()).collect();
        let n = sentences.len() as f64;
        let weights: Vec<(&String, f64)> = q
            .iter()
            .map(|t| {
                let df = sets.iter().filter(|s| s.contains(t)).count().max(1) as f64;
                (t, (1.0 + n / df).ln())
            })
            .collect();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let scores: Vec<f64> = sets
            .iter()
            .map(|s| weights.iter().filter(|(t, _)| s.contains(*t)).map(|(_, w)| w).sum())
            .collect();

        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        let top = scores[best];
        if top <= 0.0 {
            return Ok(none);
        }
        let second = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, &s)| s)
            .fold(0.0, f64::max);
        let coverage = top / total;
        let separation = (top - second) / top;
        Ok(Span {
            answer: sentences[best].clone(),
            confidence: (coverage * (0.5 + 0.5 * separation)).clamp(0.0, 1.0),
        })
    }
}

/// Hashed bag of content terms. Dimension 0 is reserved for text with no
/// content terms, which maps to the first unit vector.
#[derive(Debug, Clone)]
pub struct BagOfWordsEmbedder {
    dim: usize,
}

impl BagOfWordsEmbedder {
    pub const NAME: &'static str = "bag-of-words";

    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "bag-of-words dimension must be at least 2");
        Self { dim }
    }
}

impl Default for BagOfWordsEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl SentenceEmbedder for BagOfWordsEmbedder {
    fn id(&self) -> &str {
        Self::NAME
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let mut v = vec![0.0; self.dim];
        for t in content_terms(text) {
            v[1 + (fnv1a(&t) % (self.dim as u64 - 1)) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

fn checked_embedding(emb: &dyn SentenceEmbedder, text: &str) -> Result<Vec<f64>, QaError> {
    let v = emb.embed(text)?;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if v.len() != emb.dim() || !((norm - 1.0).abs() <= 1e-6) {
        return Err(BackendError::failure(
            emb.id(),
            format!("expected unit vector of dim {}, got dim {} norm {norm}", emb.dim(), v.len()),
        )
        .into());
    }
    Ok(v)
}

/// The `k` sentences most cosine-similar to the question, returned in
/// their original order. Similarity ties favour the earlier sentence.
pub fn select_subcontext(
    question: &str,
    ctx: &QAContext,
    emb: &dyn SentenceEmbedder,
    k: usize,
) -> Result<Vec<String>, QaError> {
    if ctx.sentences.is_empty() {
        return Err(QaError::EmptyContext);
    }
    if k == 0 {
        return Err(QaError::InvalidArgument("k must be at least 1".into()));
    }
    let q = checked_embedding(emb, question)?;
    let sims: Vec<f64> = if emb.concurrent_safe() {
        ctx.sentences
            .par_iter()
            .map(|s| checked_embedding(emb, s).map(|v| dot(&q, &v)))
            .collect::<Result<_, _>>()?
    } else {
        ctx.sentences
            .iter()
            .map(|s| checked_embedding(emb, s).map(|v| dot(&q, &v)))
            .collect::<Result<_, _>>()?
    };
    let mut idx: Vec<usize> = (0..sims.len()).collect();
    idx.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    idx.truncate(k.min(idx.len()));
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| ctx.sentences[i].clone()).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn checked_span(qa: &dyn QABackend, question: &str, context: &str) -> Result<Span, QaError> {
    let span = qa.extract(question, context)?;
    if !(0.0..=1.0).contains(&span.confidence) {
        return Err(BackendError::failure(qa.id(), format!("confidence {} outside [0, 1]", span.confidence)).into());
    }
    if !context.contains(&span.answer) {
        return Err(BackendError::failure(qa.id(), "answer is not a span of the context").into());
    }
    Ok(span)
}

/// Asks over the full context and, when the confidence is below `tau`,
/// once more over the top-`k` sub-context. The second answer is returned
/// whatever its confidence. `k` larger than the sentence count selects
/// every sentence.
pub fn answer(
    question: &str,
    ctx: &QAContext,
    qa: &dyn QABackend,
    emb: &dyn SentenceEmbedder,
    tau: f64,
    k: usize,
) -> Result<AnswerResult, QaError> {
    let start = Instant::now();
    if question.trim().is_empty() {
        return Err(QaError::EmptyQuestion);
    }
    if ctx.sentences.is_empty() {
        return Err(QaError::EmptyContext);
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(QaError::InvalidArgument(format!("tau {tau} outside (0, 1)")));
    }
    if k == 0 {
        return Err(QaError::InvalidArgument("k must be at least 1".into()));
    }
    let first = checked_span(qa, question, &ctx.text)?;
    if first.confidence >= tau {
        return Ok(AnswerResult {
            answer: first.answer,
            confidence: first.confidence,
            used_subcontext: false,
            subcontext_sentences: Vec::new(),
            latency_ms: elapsed_ms(start),
            source: AnswerSource::Context,
        });
    }
    let sub = select_subcontext(question, ctx, emb, k)?;
    let second = checked_span(qa, question, &sub.join(" "))?;
    Ok(AnswerResult {
        answer: second.answer,
        confidence: second.confidence,
        used_subcontext: true,
        subcontext_sentences: sub,
        latency_ms: elapsed_ms(start),
        source: AnswerSource::Subcontext,
    })
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, Deserialize)]
struct FaqEntry {
    patterns: Vec<String>,
    answer: String,
}

#[derive(Debug, Clone, Deserialize)]
struct FaqFile {
    entries: Vec<FaqEntry>,
}

/// Question patterns, matched after normalization, mapped to fixed answers.
#[derive(Debug, Clone, Default)]
pub struct Faq {
    answers: BTreeMap<String, String>,
}

impl Faq {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let file: FaqFile = serde_json::from_str(json)?;
        let mut answers = BTreeMap::new();
        for e in file.entries {
            for p in e.patterns {
                answers.insert(normalize_question(&p), e.answer.clone());
            }
        }
        Ok(Self { answers })
    }

    pub fn builtin() -> &'static Faq {
        static FAQ: OnceLock<Faq> = OnceLock::new();
        FAQ.get_or_init(|| Faq::from_json(include_str!("../assets/faq.json")).expect("bundled faq parses"))
    }

    pub fn lookup(&self, question: &str) -> Option<&str> {
        let q = normalize_question(question);
        if q.is_empty() {
            return None;
        }
        self.answers.get(&q).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

/// Looks the question up in the bundled FAQ.
pub fn canned_faq(question: &str) -> Option<String> {
    Faq::builtin().lookup(question).map(str::to_string)
}

/// FAQ routing in front of [`answer`].
#[derive(Clone)]
pub struct QaEngine {
    qa: Arc<dyn QABackend>,
    embedder: Arc<dyn SentenceEmbedder>,
    faq: Faq,
    tau: f64,
    k: usize,
}

impl std::fmt::Debug for QaEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QaEngine")
            .field("qa", &self.qa.id())
            .field("embedder", &self.embedder.id())
            .field("tau", &self.tau)
            .field("k", &self.k)
            .finish()
    }
}

impl QaEngine {
    pub fn new(qa: Arc<dyn QABackend>, embedder: Arc<dyn SentenceEmbedder>) -> Self {
        Self {
            qa,
            embedder,
            faq: Faq::builtin().clone(),
            tau: DEFAULT_TAU,
            k: DEFAULT_K,
        }
    }

    /// Keyword-overlap QA with the bag-of-words embedder.
    pub fn reference() -> Self {
        Self::new(Arc::new(KeywordOverlapQa), Arc::new(BagOfWordsEmbedder::default()))
    }

    pub fn with_params(mut self, tau: f64, k: usize) -> Result<Self, QaError> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(QaError::InvalidArgument(format!("tau {tau} outside (0, 1)")));
        }
        if k == 0 {
            return Err(QaError::InvalidArgument("k must be at least 1".into()));
        }
        self.tau = tau;
        self.k = k;
        Ok(self)
    }

    pub fn with_faq(mut self, faq: Faq) -> Self {
        self.faq = faq;
        self
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ask(&self, question: &str, ctx: &QAContext) -> Result<AnswerResult, QaError> {
        let start = Instant::now();
        if question.trim().is_empty() {
            return Err(QaError::EmptyQuestion);
        }
        if let Some(a) = self.faq.lookup(question) {
            return Ok(AnswerResult {
                answer: a.to_string(),
                confidence: 1.0,
                used_subcontext: false,
                subcontext_sentences: Vec::new(),
                latency_ms: elapsed_ms(start),
                source: AnswerSource::Faq,
            });
        }
        answer(question, ctx, self.qa.as_ref(), self.embedder.as_ref(), self.tau, self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Returns the first sentence with a scripted confidence per call.
    struct Scripted {
        confidences: Vec<f64>,
        calls: AtomicUsize,
    }

    impl Scripted {
        fn new(confidences: &[f64]) -> Self {
            Self {
                confidences: confidences.to_vec(),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl QABackend for Scripted {
        fn id(&self) -> &str {
            "scripted"
        }
        fn extract(&self, _q: &str, context: &str) -> Result<Span, BackendError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(Span {
                answer: split_sentences(context).first().cloned().unwrap_or_default(),
                confidence: self.confidences[i.min(self.confidences.len() - 1)],
            })
        }
    }

    fn ctx() -> QAContext {
        QAContext::from_text(
            "The decision is match. The nose has a score of 5. The chin has a score of 3. \
             Cosine similarity compares embeddings. The weather is unrelated.",
        )
    }

    #[test]
    fn confident_first_pass_makes_one_call() {
        let qa = Scripted::new(&[0.9]);
        let r = answer("What is the decision?", &ctx(), &qa, &BagOfWordsEmbedder::default(), 0.3, 2).unwrap();
        assert_eq!(qa.calls.load(Ordering::SeqCst), 1);
        assert!(!r.used_subcontext);
        assert!(r.subcontext_sentences.is_empty());
    }

    #[test]
    fn low_confidence_retries_on_subcontext() {
        let qa = Scripted::new(&[0.1, 0.8]);
        let r = answer("What score does the chin have?", &ctx(), &qa, &BagOfWordsEmbedder::default(), 0.3, 2).unwrap();
        assert_eq!(qa.calls.load(Ordering::SeqCst), 2);
        assert!(r.used_subcontext);
        assert_eq!(r.confidence, 0.8);
        assert_eq!(r.subcontext_sentences.len(), 2);
        assert_eq!(r.answer, r.subcontext_sentences[0]);
        assert_eq!(r.source, AnswerSource::Subcontext);
    }

    #[test]
    fn second_answer_is_kept_even_when_weak() {
        let qa = Scripted::new(&[0.1, 0.05]);
        let r = answer("chin", &ctx(), &qa, &BagOfWordsEmbedder::default(), 0.3, 1).unwrap();
        assert!(r.used_subcontext);
        assert_eq!(r.confidence, 0.05);
    }

    #[test]
    fn argument_validation() {
        let qa = KeywordOverlapQa;
        let e = BagOfWordsEmbedder::default();
        assert_eq!(answer("  ", &ctx(), &qa, &e, 0.3, 2).unwrap_err(), QaError::EmptyQuestion);
        assert_eq!(answer("q", &QAContext::from_text(""), &qa, &e, 0.3, 2).unwrap_err(), QaError::EmptyContext);
        assert!(matches!(answer("q", &ctx(), &qa, &e, 1.0, 2), Err(QaError::InvalidArgument(_))));
        assert!(matches!(answer("q", &ctx(), &qa, &e, 0.3, 0), Err(QaError::InvalidArgument(_))));
    }

    #[test]
    fn non_extractive_backend_is_rejected() {
        struct Liar;
        impl QABackend for Liar {
            fn id(&self) -> &str {
                "liar"
            }
            fn extract(&self, _: &str, _: &str) -> Result<Span, BackendError> {
                Ok(Span {
                    answer: "not in the text".into(),
                    confidence: 0.9,
                })
            }
        }
        let r = answer("q", &ctx(), &Liar, &BagOfWordsEmbedder::default(), 0.3, 1);
        assert!(matches!(r, Err(QaError::BackendFailure(_))));
    }

    #[test]
    fn keyword_overlap_picks_the_distinct_sentence() {
        let s = KeywordOverlapQa.extract("What score does the chin have?", &ctx().text).unwrap();
        assert_eq!(s.answer, "The chin has a score of 3.");
        assert!(s.confidence > 0.3);
        let s = KeywordOverlapQa.extract("Tell me about quantum gravity", &ctx().text).unwrap();
        assert_eq!(s, Span { answer: String::new(), confidence: 0.0 });
    }

    #[test]
    fn keyword_overlap_tie_goes_to_earlier_sentence() {
        let s = KeywordOverlapQa.extract("score", &ctx().text).unwrap();
        assert_eq!(s.answer, "The nose has a score of 5.");
        assert_eq!(s.confidence, 0.5);
    }

    #[test]
    fn identical_sentence_ranks_first() {
        let c = ctx();
        let sub = select_subcontext("Cosine similarity compares embeddings.", &c, &BagOfWordsEmbedder::default(), 1).unwrap();
        assert_eq!(sub, vec!["Cosine similarity compares embeddings."]);
    }

    #[test]
    fn full_k_returns_everything_in_order() {
        let c = ctx();
        let sub = select_subcontext("anything", &c, &BagOfWordsEmbedder::default(), c.sentences.len()).unwrap();
        assert_eq!(sub, c.sentences);
        let sub = select_subcontext("anything", &c, &BagOfWordsEmbedder::default(), 99).unwrap();
        assert_eq!(sub, c.sentences);
    }

    #[test]
    fn bag_of_words_is_unit_norm() {
        let e = BagOfWordsEmbedder::default();
        for t in ["", "the", "nose score", "The chin has a score of 3."] {
            let v = e.embed(t).unwrap();
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert_eq!(e.embed("").unwrap()[0], 1.0);
    }

    #[test]
    fn faq_routing() {
        assert!(canned_faq("What is explainable AI?").unwrap().starts_with("Explainable AI is"));
        assert!(canned_faq("what is explainable ai").is_some());
        assert_eq!(canned_faq("What is the decision?"), None);
        assert_eq!(canned_faq(""), None);
        let r = QaEngine::reference().ask("What is explainable AI?", &ctx()).unwrap();
        assert_eq!(r.source, AnswerSource::Faq);
        assert!(!r.used_subcontext);
    }

    #[test]
    fn engine_rejects_bad_params() {
        assert!(QaEngine::reference().with_params(0.0, 5).is_err());
        assert!(QaEngine::reference().with_params(0.5, 0).is_err());
        let e = QaEngine::reference().with_params(0.5, 3).unwrap();
        assert_eq!((e.tau(), e.k()), (0.5, 3));
    }

    proptest! {
        #[test]
        fn subcontext_is_ordered_subsequence(
            words in prop::collection::vec(prop::sample::select(vec!["nose", "chin", "score", "eye", "match", "cheek", "lips"]), 1..40),
            q in prop::collection::vec(prop::sample::select(vec!["nose", "chin", "score", "eye", "brow"]), 1..4),
            k in 1usize..8,
        ) {
            let text: String = words.chunks(3).map(|c| format!("{}.", c.join(" "))).collect::<Vec<_>>().join(" ");
            let c = QAContext::from_text(text);
            let sub = select_subcontext(&q.join(" "), &c, &BagOfWordsEmbedder::default(), k).unwrap();
            prop_assert_eq!(sub.len(), k.min(c.sentences.len()));
            let mut it = c.sentences.iter().enumerate();
            let mut last = None;
            for s in &sub {
                let (i, _) = it.by_ref().find(|(_, x)| *x == s).expect("subsequence");
                prop_assert!(last.is_none_or(|l| i > l));
                last = Some(i);
            }
            prop_assert!(sub.join(" ").len() <= c.text.len());
        }

        #[test]
        fn keyword_answers_are_extractive(q in "[a-z ]{0,30}") {
            let c = ctx();
            let s = KeywordOverlapQa.extract(&q, &c.text).unwrap();
            prop_assert!(c.text.contains(&s.answer));
            prop_assert!((0.0..=1.0).contains(&s.confidence));
        }
    }
}
