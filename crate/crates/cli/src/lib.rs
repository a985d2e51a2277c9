//! Offline commands over a session directory.
//!
//! `verify` writes the comparison record and aligned crops; `explain`
//! reads them back and adds the heatmaps, table and context; `chat` and
//! `eval-qa` read the explained directory.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xfr_core::backend::BackendRegistry;
use xfr_core::calibration::{fit_pic, CalibrationError};
use xfr_core::config::ConfigError;
use xfr_core::eval::{run_fr_eval, run_qa_suite, CorrectnessReport, EvalError, EvalSession, FrReport, QuestionSuite};
use xfr_core::face::{encode_png, FaceImageError};
use xfr_core::pipeline::{PipelineError, PipelineInfo};
use xfr_core::qa::QaError;
use xfr_core::render::{grayscale_png, overlay_png, raw_f32};
use xfr_core::table::TableError;
use xfr_core::{
    AlignedFace, CalibrationSet, ExplainabilityTable, Explained, FaceImage, Landmarks5, PicModel, Pipeline, QAContext,
    ServiceConfig, SimilarityTransform, VerificationRecord, ALIGNED_SIZE,
};

pub const RECORD_FILE: &str = "record.json";
pub const ALIGNED_A_FILE: &str = "aligned_a.png";
pub const ALIGNED_B_FILE: &str = "aligned_b.png";
pub const LANDMARKS_FILE: &str = "landmarks.json";
pub const PIPELINE_FILE: &str = "pipeline.json";
pub const TABLE_CSV_FILE: &str = "table.csv";
pub const TABLE_JSON_FILE: &str = "table.json";
pub const CONTEXT_TXT_FILE: &str = "context.txt";
pub const CONTEXT_JSON_FILE: &str = "context.json";
pub const HEATMAP_DIR: &str = "heatmaps";

/// FMR targets reported by `eval-fr` unless others are given.
pub const DEFAULT_FMR_TARGETS: [f64; 3] = [0.001, 0.01, 0.1];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: FaceImageError },
    #[error("{path} is missing; {hint}")]
    Missing { path: PathBuf, hint: &'static str },
    #[error("{path}: aligned crops must be {ALIGNED_SIZE}x{ALIGNED_SIZE}, got {width}x{height}")]
    CropSize { path: PathBuf, width: u32, height: u32 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Qa(#[from] QaError),
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn read_string(path: &Path, hint: &'static str) -> Result<String> {
    if !path.exists() {
        return Err(CliError::Missing {
            path: path.to_path_buf(),
            hint,
        });
    }
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &'static str) -> Result<T> {
    let text = read_string(path, hint)?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn open_image(path: &Path) -> Result<FaceImage> {
    FaceImage::open(path).map_err(|source| CliError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the config file (if any) with `XFR_` overrides and builds the
/// pipeline from the reference backend registry.
pub fn load_pipeline(config: Option<&Path>) -> Result<(ServiceConfig, Pipeline)> {
    let cfg = ServiceConfig::load(config)?;
    let pipeline = cfg.build_pipeline(&BackendRegistry::default())?;
    Ok((cfg, pipeline))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FaceGeometry {
    pub source_id: String,
    pub landmarks: Landmarks5,
    pub transform: SimilarityTransform,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LandmarksFile {
    pub image_a: FaceGeometry,
    pub image_b: FaceGeometry,
}

fn geometry(face: &AlignedFace) -> FaceGeometry {
    FaceGeometry {
        source_id: face.source_id().to_string(),
        landmarks: *face.landmarks(),
        transform: *face.transform(),
    }
}

/// Compares two images and writes the record and aligned crops to `out`.
pub fn verify(pipeline: &Pipeline, a: &Path, b: &Path, out: &Path) -> Result<VerificationRecord> {
    let (ia, ib) = (open_image(a)?, open_image(b)?);
    let pair = pipeline.verify(&ia, &ib)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write(&out.join(RECORD_FILE), to_json(&pair.record))?;
    write(&out.join(ALIGNED_A_FILE), encode_png(pair.face_a.pixels()))?;
    write(&out.join(ALIGNED_B_FILE), encode_png(pair.face_b.pixels()))?;
    write(
        &out.join(LANDMARKS_FILE),
        to_json(&LandmarksFile {
            image_a: geometry(&pair.face_a),
            image_b: geometry(&pair.face_b),
        }),
    )?;
    write(&out.join(PIPELINE_FILE), to_json(&pipeline.info()))?;
    Ok(pair.record)
}

fn load_crop(dir: &Path, file: &str, source_id: &str) -> Result<AlignedFace> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(CliError::Missing {
            path,
            hint: "run `xfr verify` first",
        });
    }
    let img = open_image(&path)?;
    if (img.width(), img.height()) != (ALIGNED_SIZE, ALIGNED_SIZE) {
        return Err(CliError::CropSize {
            path,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(AlignedFace::from_aligned_raster(img.pixels().clone(), source_id))
}

/// Reads a verified directory and writes heatmaps, table and context.
pub fn explain(pipeline: &Pipeline, dir: &Path) -> Result<Explained> {
    let hint = "run `xfr verify` first";
    let record: VerificationRecord = read_json(&dir.join(RECORD_FILE), hint)?;
    let lm: LandmarksFile = read_json(&dir.join(LANDMARKS_FILE), hint)?;
    let face_a = load_crop(dir, ALIGNED_A_FILE, &lm.image_a.source_id)?;
    let face_b = load_crop(dir, ALIGNED_B_FILE, &lm.image_b.source_id)?;
    let e = pipeline.explain_faces(record, face_a, face_b)?;

    let heat = dir.join(HEATMAP_DIR);
    std::fs::create_dir_all(&heat).map_err(io_err(&heat))?;
    for map in &e.maps {
        let code = map.method().code();
        write(&heat.join(format!("{code}.png")), overlay_png(e.face_a.pixels(), map))?;
        write(&heat.join(format!("{code}_gray.png")), grayscale_png(map))?;
        let (raw, sidecar) = raw_f32(map);
        write(&heat.join(format!("{code}.f32")), raw)?;
        write(&heat.join(format!("{code}.json")), to_json(&sidecar))?;
    }
    write(&dir.join(TABLE_CSV_FILE), e.table.to_csv())?;
    write(&dir.join(TABLE_JSON_FILE), e.table.to_json() + "\n")?;
    write(&dir.join(CONTEXT_TXT_FILE), e.context.text.clone() + "\n")?;
    write(&dir.join(CONTEXT_JSON_FILE), to_json(&e.context))?;
    Ok(e)
}

/// The pieces of an explained directory that question answering needs.
#[derive(Debug, Clone)]
pub struct SavedSession {
    pub record: VerificationRecord,
    pub table: ExplainabilityTable,
    pub context: QAContext,
}

pub fn load_session(dir: &Path) -> Result<SavedSession> {
    let hint = "run `xfr verify` and `xfr explain` first";
    Ok(SavedSession {
        record: read_json(&dir.join(RECORD_FILE), hint)?,
        table: read_json(&dir.join(TABLE_JSON_FILE), hint)?,
        context: read_json(&dir.join(CONTEXT_JSON_FILE), hint)?,
    })
}

/// Answers one question per input line until end of input.
pub fn chat(pipeline: &Pipeline, dir: &Path, input: impl BufRead, mut output: impl Write) -> Result<usize> {
    let s = load_session(dir)?;
    let stdout_err = |source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    };
    let mut turns = 0;
    for line in input.lines() {
        let line = line.map_err(|source| CliError::Io {
            path: PathBuf::from("<stdin>"),
            source,
        })?;
        let q = line.trim();
        if q.is_empty() {
            continue;
        }
        if matches!(q, "quit" | "exit") {
            break;
        }
        let a = pipeline.qa.ask(q, &s.context)?;
        turns += 1;
        writeln!(
            output,
            "{}\n  (confidence {:.2}, {}{})",
            a.answer,
            a.confidence,
            serde_json::to_value(a.source).expect("enum").as_str().unwrap_or(""),
            if a.confidence < pipeline.qa.tau() { ", below tau" } else { "" }
        )
        .map_err(stdout_err)?;
    }
    Ok(turns)
}

/// Fits a PIC model on a labelled score CSV and writes it as JSON.
pub fn calibrate(scores: &Path, out: &Path) -> Result<PicModel> {
    let cal = CalibrationSet::from_csv_path(scores)?;
    let model = fit_pic(&cal)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write(out, model.to_json())?;
    Ok(model)
}

/// EER, FNMR at the given FMR targets, and the DET curve.
pub fn eval_fr(scores: &Path, targets: &[f64], out: Option<&Path>) -> Result<FrReport> {
    let cal = CalibrationSet::from_csv_path(scores)?;
    let report = run_fr_eval(&cal, targets)?;
    if let Some(out) = out {
        std::fs::create_dir_all(out).map_err(io_err(out))?;
        write(&out.join("fr_report.json"), report.to_json())?;
        write(&out.join("det.csv"), report.det_csv())?;
    }
    Ok(report)
}

/// Runs a question suite against one or more explained directories.
pub fn eval_qa(
    pipeline: &Pipeline,
    suite: &Path,
    sessions: &[PathBuf],
    canonical_only: bool,
    out: Option<&Path>,
) -> Result<CorrectnessReport> {
    let mut suite = QuestionSuite::from_path(suite)?;
    if canonical_only {
        suite = suite.canonical_only();
    }
    if sessions.is_empty() {
        return Err(CliError::Usage("at least one session directory is required".into()));
    }
    let sessions = sessions
        .iter()
        .map(|d| load_session(d).map(|s| EvalSession::new(&s.record, &s.table, s.context)))
        .collect::<Result<Vec<_>>>()?;
    let report = run_qa_suite(&suite, &sessions, &pipeline.qa)?;
    if let Some(out) = out {
        write(out, report.to_json())?;
    }
    Ok(report)
}

pub fn describe(info: &PipelineInfo) -> String {
    format!(
        "detector {}, embedder {}, threshold {:.3}, grid {}/{}, greedy steps {}",
        info.detector, info.embedder, info.threshold, info.grid_window, info.grid_stride, info.greedy_steps
    )
}
