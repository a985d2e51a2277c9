//! Score calibration (PIC) and verification error metrics (DET, EER,
//! FNMR at a fixed FMR).

mod det;
mod pic;

pub use det::{compute_det, det_point, eer, fnmr_at_fmr, DetPoint, DEFAULT_DET_THRESHOLDS};
pub use pic::{
    fit_pic, isotonic_nondecreasing, pic_confidence, raw_pic, silverman_bandwidth, PicMeta,
    PicModel, PIC_EPS, PIC_GRID_POINTS,
};

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of scores per class.
pub const MIN_SCORES_PER_CLASS: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("insufficient data: {genuine} genuine and {impostor} impostor scores (need {MIN_SCORES_PER_CLASS} each)")]
    InsufficientData { genuine: usize, impostor: usize },
    #[error("{0} scores have zero variance")]
    DegenerateDistribution(&'static str),
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("fmr and fnmr never cross")]
    NoCrossing,
    #[error("target fmr {target} is below the smallest achievable nonzero fmr {resolution}")]
    TargetUnreachable { target: f64, resolution: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("invalid pic model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreLabel {
    Genuine,
    Impostor,
}

/// Genuine and impostor comparison scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    genuine: Vec<f64>,
    impostor: Vec<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct ScoreRow {
    score: f64,
    label: ScoreLabel,
}

impl CalibrationSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self, CalibrationError> {
        if genuine.len() < MIN_SCORES_PER_CLASS || impostor.len() < MIN_SCORES_PER_CLASS {
            return Err(CalibrationError::InsufficientData {
                genuine: genuine.len(),
                impostor: impostor.len(),
            });
        }
        if let Some(&bad) = genuine.iter().chain(&impostor).find(|x| !x.is_finite()) {
            return Err(CalibrationError::NonFinite(bad));
        }
        Ok(Self { genuine, impostor })
    }

    /// Reads `score,label` rows (with header), label one of
    /// `genuine`/`impostor`.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self, CalibrationError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
        for row in rdr.deserialize::<ScoreRow>() {
            let row = row.map_err(|e| CalibrationError::Csv(e.to_string()))?;
            match row.label {
                ScoreLabel::Genuine => genuine.push(row.score),
                ScoreLabel::Impostor => impostor.push(row.score),
            }
        }
        Self::new(genuine, impostor)
    }

    pub fn from_csv_path(path: impl AsRef<std::path::Path>) -> Result<Self, CalibrationError> {
        let f = std::fs::File::open(path).map_err(|e| CalibrationError::Csv(e.to_string()))?;
        Self::from_csv_reader(std::io::BufReader::new(f))
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<(), CalibrationError> {
        let mut w = csv::Writer::from_writer(writer);
        let rows = self
            .genuine
            .iter()
            .map(|&s| (s, ScoreLabel::Genuine))
            .chain(self.impostor.iter().map(|&s| (s, ScoreLabel::Impostor)));
        for (score, label) in rows {
            w.serialize(ScoreRow { score, label })
                .map_err(|e| CalibrationError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| CalibrationError::Csv(e.to_string()))
    }

    pub fn genuine(&self) -> &[f64] {
        &self.genuine
    }

    pub fn impostor(&self) -> &[f64] {
        &self.impostor
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_labels() {
        let g: Vec<f64> = (0..60).map(|i| 0.5 + i as f64 / 200.0).collect();
        let im: Vec<f64> = (0..55).map(|i| -0.2 + i as f64 / 300.0).collect();
        let set = CalibrationSet::new(g, im).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("score,label\n"));
        assert_eq!(CalibrationSet::from_csv_reader(&buf[..]).unwrap(), set);
    }

    #[test]
    fn single_class_csv_is_insufficient() {
        let mut csv = String::from("score,label\n");
        for i in 0..100 {
            csv.push_str(&format!("{},genuine\n", i as f64 / 100.0));
        }
        assert_eq!(
            CalibrationSet::from_csv_reader(csv.as_bytes()),
            Err(CalibrationError::InsufficientData { genuine: 100, impostor: 0 })
        );
    }

    #[test]
    fn unknown_label_is_rejected() {
        let csv = "score,label\n0.3,maybe\n";
        assert!(matches!(
            CalibrationSet::from_csv_reader(csv.as_bytes()),
            Err(CalibrationError::Csv(_))
        ));
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        let mut g = vec![0.5; 50];
        g[3] = f64::INFINITY;
        assert!(matches!(
            CalibrationSet::new(g, vec![0.1; 50]),
            Err(CalibrationError::NonFinite(_))
        ));
    }
}
