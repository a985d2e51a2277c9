//! Evaluation: face-recognition error rates over score sets and QA
//! correctness over question-variant suites.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{compute_det, eer, fnmr_at_fmr, CalibrationError, CalibrationSet, DetPoint, DEFAULT_DET_THRESHOLDS};
use crate::context::QAContext;
use crate::qa::QaEngine;
use crate::table::{rank_regions, ExplainabilityTable};
use crate::verify::{Decision, VerificationRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid suite: {0}")]
    InvalidSuite(String),
    #[error("at least one session is required")]
    NoSessions,
    #[error("reading suite: {0}")]
    Parse(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    Contains,
    Regex,
    NumericWithin,
}

/// Judges an answer. `spec` may reference session facts as `{name}`, see
/// [`FACT_NAMES`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matcher {
    #[serde(rename = "type")]
    pub kind: MatcherKind,
    pub spec: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

/// Placeholders available to matcher specs.
pub const FACT_NAMES: &[&str] = &["decision", "identity", "confidence_pct", "score", "threshold", "most_important", "least_important"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub canonical: String,
    pub variants: Vec<String>,
    pub matcher: Matcher,
    /// Asked when a variant's first answer fails the matcher.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follow_up: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSuite {
    #[serde(default)]
    pub name: String,
    pub entries: Vec<SuiteEntry>,
}

impl QuestionSuite {
    /// Parses YAML, which also accepts JSON.
    pub fn from_yaml(text: &str) -> Result<Self, EvalError> {
        let s: Self = serde_yaml::from_str(text).map_err(|e| EvalError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Parse(e.to_string()))?;
        Self::from_yaml(&text)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.entries.is_empty() {
            return Err(EvalError::InvalidSuite("no entries".into()));
        }
        for e in &self.entries {
            if e.variants.is_empty() {
                return Err(EvalError::InvalidSuite(format!("{:?} has no variants", e.canonical)));
            }
            if e.matcher.spec.trim().is_empty() {
                return Err(EvalError::InvalidSuite(format!("{:?} has an empty matcher", e.canonical)));
            }
            if e.matcher.kind == MatcherKind::NumericWithin && e.matcher.tolerance.is_none() {
                return Err(EvalError::InvalidSuite(format!("{:?}: numeric_within needs a tolerance", e.canonical)));
            }
            if e.matcher.kind == MatcherKind::Regex {
                let sample: BTreeMap<String, String> = FACT_NAMES.iter().map(|k| (k.to_string(), "x".into())).collect();
                let probe = fill(&e.matcher.spec, &sample, true);
                regex::Regex::new(&probe).map_err(|err| EvalError::InvalidSuite(format!("{:?}: {err}", e.canonical)))?;
            }
        }
        Ok(())
    }

    /// One entry per canonical question, asked verbatim.
    pub fn canonical_only(&self) -> Self {
        Self {
            name: format!("{} (canonical)", self.name),
            entries: self
                .entries
                .iter()
                .map(|e| SuiteEntry {
                    variants: vec![e.canonical.clone()],
                    ..e.clone()
                })
                .collect(),
        }
    }

    pub fn conversations(&self) -> usize {
        self.entries.iter().map(|e| e.variants.len()).sum()
    }
}

/// A context plus the facts matchers are instantiated with.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSession {
    pub context: QAContext,
    pub facts: BTreeMap<String, String>,
}

impl EvalSession {
    pub fn new(record: &VerificationRecord, table: &ExplainabilityTable, context: QAContext) -> Self {
        let ranked = rank_regions(table);
        let mut facts = BTreeMap::new();
        facts.insert("decision".into(), record.decision.as_str().into());
        let identity = match record.decision {
            Decision::Match => "the same person",
            Decision::NonMatch => "different persons",
        };
        facts.insert("identity".into(), identity.into());
        facts.insert("confidence_pct".into(), format!("{:.1}", record.pic * 100.0));
        facts.insert("score".into(), format!("{:.3}", record.score));
        facts.insert("threshold".into(), format!("{:.3}", record.threshold));
        if let (Some(first), Some(last)) = (ranked.first(), ranked.last()) {
            facts.insert("most_important".into(), first.words());
            facts.insert("least_important".into(), last.words());
        }
        Self { context, facts }
    }
}

/// Substitutes `{name}` placeholders; unknown names are left in place.
fn fill(spec: &str, facts: &BTreeMap<String, String>, escape: bool) -> String {
    let mut out = spec.to_string();
    for (k, v) in facts {
        let value = if escape { regex::escape(v) } else { v.clone() };
        out = out.replace(&format!("{{{k}}}"), &value);
    }
    out
}

fn numbers(text: &str) -> Vec<f64> {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"-?\d+(?:\.\d+)?").expect("number pattern"))
        .find_iter(text)
        .filter_map(|m| m.as_str().parse().ok())
        .collect()
}

impl Matcher {
    pub fn matches(&self, answer: &str, facts: &BTreeMap<String, String>) -> bool {
        match self.kind {
            MatcherKind::Contains => {
                answer.to_lowercase().contains(&fill(&self.spec, facts, false).to_lowercase())
            }
            MatcherKind::Regex => regex::Regex::new(&fill(&self.spec, facts, true))
                .map(|re| re.is_match(answer))
                .unwrap_or(false),
            MatcherKind::NumericWithin => {
                let Ok(expected) = fill(&self.spec, facts, false).trim().parse::<f64>() else {
                    return false;
                };
                let tol = self.tolerance.unwrap_or(0.0);
                numbers(answer).iter().any(|v| (v - expected).abs() <= tol)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub question: String,
    pub answer: String,
    pub confidence: f64,
    pub used_subcontext: bool,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub session: usize,
    pub first: Attempt,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follow_up: Option<Attempt>,
}

impl VariantResult {
    pub fn passed_with_follow_up(&self) -> bool {
        self.first.passed || self.follow_up.as_ref().is_some_and(|f| f.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub canonical: String,
    pub variants: usize,
    pub passes: usize,
    pub rate: f64,
    pub has_follow_up: bool,
    pub passes_with_follow_up: usize,
    pub rate_with_follow_up: f64,
    pub results: Vec<VariantResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessReport {
    pub suite: String,
    pub conversations: usize,
    pub passes: usize,
    pub overall_rate: f64,
    pub passes_with_follow_up: usize,
    pub overall_rate_with_follow_up: f64,
    pub entries: Vec<EntryReport>,
}

impl CorrectnessReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width text summary, one line per entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self.entries.iter().map(|e| e.canonical.len()).max().unwrap_or(8).max(8);
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>6}  {:>10}", "question", "variants", "rate", "follow-up");
        for e in &self.entries {
            let fu = if e.has_follow_up {
                format!("{:.1}%", 100.0 * e.rate_with_follow_up)
            } else {
                "-".into()
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>5.1}%  {:>10}",
                e.canonical,
                e.variants,
                100.0 * e.rate,
                fu
            );
        }
        let _ = writeln!(
            out,
            "{} conversations, {:.1}% correct, {:.1}% with follow-up",
            self.conversations,
            100.0 * self.overall_rate,
            100.0 * self.overall_rate_with_follow_up
        );
        out
    }
}

fn attempt(engine: &QaEngine, question: &str, session: &EvalSession, matcher: &Matcher) -> Attempt {
    match engine.ask(question, &session.context) {
        Ok(r) => Attempt {
            question: question.into(),
            passed: matcher.matches(&r.answer, &session.facts),
            answer: r.answer,
            confidence: r.confidence,
            used_subcontext: r.used_subcontext,
            error: None,
        },
        Err(e) => Attempt {
            question: question.into(),
            answer: String::new(),
            confidence: 0.0,
            used_subcontext: false,
            passed: false,
            error: Some(e.to_string()),
        },
    }
}

fn rate(passes: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        passes as f64 / n as f64
    }
}

/// Asks every variant against a session picked round-robin over the
/// flattened variant list. Each question is asked independently, with no
/// conversation memory.
pub fn run_qa_suite(
    suite: &QuestionSuite,
    sessions: &[EvalSession],
    engine: &QaEngine,
) -> Result<CorrectnessReport, EvalError> {
    suite.validate()?;
    if sessions.is_empty() {
        return Err(EvalError::NoSessions);
    }
    let jobs: Vec<(usize, &SuiteEntry, &String)> = suite
        .entries
        .iter()
        .enumerate()
        .flat_map(|(i, e)| e.variants.iter().map(move |v| (i, e, v)))
        .collect();
    let results: Vec<(usize, VariantResult)> = jobs
        .par_iter()
        .enumerate()
        .map(|(n, (i, entry, question))| {
            let s = n % sessions.len();
            let first = attempt(engine, question, &sessions[s], &entry.matcher);
            let follow_up = match (&entry.follow_up, first.passed) {
                (Some(q), false) => Some(attempt(engine, q, &sessions[s], &entry.matcher)),
                _ => None,
            };
            (
                *i,
                VariantResult {
                    session: s,
                    first,
                    follow_up,
                },
            )
        })
        .collect();

    let mut entries: Vec<EntryReport> = suite
        .entries
        .iter()
        .map(|e| EntryReport {
            canonical: e.canonical.clone(),
            variants: e.variants.len(),
            passes: 0,
            rate: 0.0,
            has_follow_up: e.follow_up.is_some(),
            passes_with_follow_up: 0,
            rate_with_follow_up: 0.0,
            results: Vec::with_capacity(e.variants.len()),
        })
        .collect();
    for (i, r) in results {
        let e = &mut entries[i];
        e.passes += r.first.passed as usize;
        e.passes_with_follow_up += r.passed_with_follow_up() as usize;
        e.results.push(r);
    }
    for e in &mut entries {
        e.rate = rate(e.passes, e.variants);
        e.rate_with_follow_up = rate(e.passes_with_follow_up, e.variants);
    }
    let conversations = suite.conversations();
    let passes = entries.iter().map(|e| e.passes).sum();
    let passes_fu = entries.iter().map(|e| e.passes_with_follow_up).sum();
    Ok(CorrectnessReport {
        suite: suite.name.clone(),
        conversations,
        passes,
        overall_rate: rate(passes, conversations),
        passes_with_follow_up: passes_fu,
        overall_rate_with_follow_up: rate(passes_fu, conversations),
        entries,
    })
}

/// Published figures for a production model on a public benchmark. They
/// depend on external weights and data and are not reproduced here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFigures {
    pub eer_pct: f64,
    pub fnmr_pct_at_fmr_0_01_pct: f64,
    pub reproduced: bool,
    pub note: String,
}

impl Default for ReferenceFigures {
    fn default() -> Self {
        Self {
            eer_pct: 5.12,
            fnmr_pct_at_fmr_0_01_pct: 6.07,
            reproduced: false,
            note: "reference figures for a production model on a public benchmark; not computed from this score set".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrReport {
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub eer: f64,
    /// Keyed by the target FMR as written; `None` when the target is
    /// below the score set's resolution.
    pub fnmr_at: BTreeMap<String, Option<f64>>,
    pub reference: ReferenceFigures,
    #[serde(skip)]
    pub det: Vec<DetPoint>,
}

impl FrReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn det_csv(&self) -> String {
        let mut out = String::from("threshold,fmr,fnmr\n");
        for p in &self.det {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.fmr, p.fnmr);
        }
        out
    }
}

pub fn run_fr_eval(cal: &CalibrationSet, targets: &[f64]) -> Result<FrReport, EvalError> {
    let det = compute_det(cal, DEFAULT_DET_THRESHOLDS)?;
    let e = eer(&det)?;
    let mut fnmr_at = BTreeMap::new();
    for &t in targets {
        let v = match fnmr_at_fmr(&det, t) {
            Ok(v) => Some(v),
            Err(CalibrationError::TargetUnreachable { .. }) => None,
            Err(other) => return Err(other.into()),
        };
        fnmr_at.insert(t.to_string(), v);
    }
    Ok(FrReport {
        n_genuine: cal.genuine().len(),
        n_impostor: cal.impostor().len(),
        eer: e,
        fnmr_at,
        reference: ReferenceFigures::default(),
        det,
    })
}
