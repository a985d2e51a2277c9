use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CalibrationError, CalibrationSet};
use crate::verify::Decision;

pub const PIC_GRID_POINTS: usize = 512;
pub const PIC_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicMeta {
    pub bandwidth_genuine: f64,
    pub bandwidth_impostor: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub estimator: String,
}

/// Monotone score → probability-of-same-identity map, piecewise linear
/// between grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicModel {
    grid: Vec<f64>,
    values: Vec<f64>,
    eps: f64,
    meta: PicMeta,
}

impl PicModel {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, eps: f64, meta: PicMeta) -> Result<Self, CalibrationError> {
        let m = Self { grid, values, eps, meta };
        m.validate()?;
        Ok(m)
    }

    /// Constant 0.5: no calibration information.
    pub fn neutral() -> Self {
        Self {
            grid: vec![-1.0, 1.0],
            values: vec![0.5, 0.5],
            eps: PIC_EPS,
            meta: PicMeta {
                bandwidth_genuine: 0.0,
                bandwidth_impostor: 0.0,
                n_genuine: 0,
                n_impostor: 0,
                estimator: "neutral".into(),
            },
        }
    }

    fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |m: &str| Err(CalibrationError::InvalidModel(m.to_string()));
        if self.grid.len() < 2 || self.grid.len() != self.values.len() {
            return bad("grid and values must have the same length of at least 2");
        }
        if !(0.0..0.5).contains(&self.eps) {
            return bad("eps must lie in [0, 0.5)");
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("grid must be strictly increasing");
        }
        if self.values.windows(2).any(|w| w[0] > w[1]) {
            return bad("values must be nondecreasing");
        }
        if self
            .values
            .iter()
            .any(|v| !(self.eps..=1.0 - self.eps).contains(v))
        {
            return bad("values must lie in [eps, 1 - eps]");
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, CalibrationError> {
        let m: Self = serde_json::from_str(s).map_err(|e| CalibrationError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pic model serializes")
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn meta(&self) -> &PicMeta {
        &self.meta
    }

    /// Probability that `score` came from the genuine distribution.
    pub fn pic(&self, score: f64) -> f64 {
        let (g, v) = (&self.grid, &self.values);
        let s = score.clamp(g[0], g[g.len() - 1]);
        let hi = g.partition_point(|&x| x < s).clamp(1, g.len() - 1);
        let lo = hi - 1;
        let t = (s - g[lo]) / (g[hi] - g[lo]);
        // convex form, exact at both knots
        (1.0 - t) * v[lo] + t * v[hi]
    }
}

/// Silverman's rule of thumb: `0.9 · min(sd, IQR/1.34) · n^(-1/5)`.
///
/// Falls back to the standard deviation when the IQR is zero. Returns
/// `None` for samples with zero variance.
pub fn silverman_bandwidth(samples: &[f64]) -> Option<f64> {
    let n = samples.len();
    if n < 2 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Some(0.9 * spread * (n as f64).powf(-0.2))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Log of a Gaussian kernel density estimate at `x`.
fn log_kde(samples: &[f64], h: f64, x: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &s in samples {
        let z = (x - s) / h;
        max = max.max(-0.5 * z * z);
    }
    let sum: f64 = samples
        .iter()
        .map(|&s| {
            let z = (x - s) / h;
            (-0.5 * z * z - max).exp()
        })
        .sum();
    let norm = (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt()).ln();
    max + sum.ln() - norm
}

fn bandwidths(cal: &CalibrationSet) -> Result<(f64, f64), CalibrationError> {
    let hg = silverman_bandwidth(cal.genuine()).ok_or(CalibrationError::DegenerateDistribution("genuine"))?;
    let hi = silverman_bandwidth(cal.impostor()).ok_or(CalibrationError::DegenerateDistribution("impostor"))?;
    Ok((hg, hi))
}

/// `f_gen / (f_gen + f_imp)` at each grid point, equal priors, before
/// any monotonicity correction. Evaluated in log space so that far tails
/// do not collapse to 0/0.
pub fn raw_pic(cal: &CalibrationSet, grid: &[f64]) -> Result<Vec<f64>, CalibrationError> {
    let (hg, hi) = bandwidths(cal)?;
    Ok(grid
        .par_iter()
        .map(|&s| {
            let lg = log_kde(cal.genuine(), hg, s);
            let li = log_kde(cal.impostor(), hi, s);
            1.0 / (1.0 + (li - lg).exp())
        })
        .collect())
}

/// Pool-adjacent-violators fit with equal weights.
pub fn isotonic_nondecreasing(values: &[f64]) -> Vec<f64> {
    // (block mean, block length)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().unwrap() = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, n)| std::iter::repeat_n(m, n))
        .collect()
}

fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect()
}

/// Fits the PIC map on a 512-point grid over [-1, 1]: KDE density ratio,
/// isotonic regression, clamp to `[eps, 1 - eps]`.
pub fn fit_pic(cal: &CalibrationSet) -> Result<PicModel, CalibrationError> {
    let (hg, hi) = bandwidths(cal)?;
    let grid = uniform_grid(PIC_GRID_POINTS);
    let raw = raw_pic(cal, &grid)?;
    let values = isotonic_nondecreasing(&raw)
        .into_iter()
        .map(|v| v.clamp(PIC_EPS, 1.0 - PIC_EPS))
        .collect();
    PicModel::new(
        grid,
        values,
        PIC_EPS,
        PicMeta {
            bandwidth_genuine: hg,
            bandwidth_impostor: hi,
            n_genuine: cal.genuine().len(),
            n_impostor: cal.impostor().len(),
            estimator: "gaussian-kde-silverman".into(),
        },
    )
}

/// Probability that `decision` is correct: PIC for a match, `1 - PIC`
/// for a non-match.
pub fn pic_confidence(model: &PicModel, score: f64, decision: Decision) -> f64 {
    let p = model.pic(score);
    match decision {
        Decision::Match => p,
        Decision::NonMatch => 1.0 - p,
    }
}
