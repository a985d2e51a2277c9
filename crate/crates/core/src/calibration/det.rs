use serde::{Deserialize, Serialize};

use super::{CalibrationError, CalibrationSet};

pub const DEFAULT_DET_THRESHOLDS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn point(genuine: &[f64], impostor: &[f64], t: f64) -> DetPoint {
    // fmr: impostors accepted (score >= t); fnmr: genuines rejected (score < t)
    let accepted = impostor.len() - impostor.partition_point(|&s| s < t);
    let rejected = genuine.partition_point(|&s| s < t);
    DetPoint {
        threshold: t,
        fmr: accepted as f64 / impostor.len() as f64,
        fnmr: rejected as f64 / genuine.len() as f64,
    }
}

/// Error rates at a single threshold.
pub fn det_point(cal: &CalibrationSet, threshold: f64) -> DetPoint {
    point(&sorted(cal.genuine()), &sorted(cal.impostor()), threshold)
}

/// Error rates on `n_thresholds` uniform thresholds spanning the observed
/// scores. The last threshold sits just above the maximum score so the
/// curve reaches both corners.
pub fn compute_det(cal: &CalibrationSet, n_thresholds: usize) -> Result<Vec<DetPoint>, CalibrationError> {
    if n_thresholds < 2 {
        return Err(CalibrationError::InvalidArgument(format!(
            "need at least 2 thresholds, got {n_thresholds}"
        )));
    }
    let g = sorted(cal.genuine());
    let i = sorted(cal.impostor());
    let lo = g[0].min(i[0]);
    let max = g[g.len() - 1].max(i[i.len() - 1]);
    let span = max - lo;
    let hi = if span > 0.0 { max + span * 1e-9 } else { max + 1e-9 };
    Ok((0..n_thresholds)
        .map(|k| {
            let t = lo + (hi - lo) * k as f64 / (n_thresholds - 1) as f64;
            point(&g, &i, t)
        })
        .collect())
}

/// Equal error rate by linear interpolation across the first sign change
/// of `fmr - fnmr`.
pub fn eer(det: &[DetPoint]) -> Result<f64, CalibrationError> {
    for w in det.windows(2) {
        let d0 = w[0].fmr - w[0].fnmr;
        let d1 = w[1].fmr - w[1].fnmr;
        if d0 == 0.0 {
            return Ok(w[0].fmr);
        }
        if d0.signum() != d1.signum() || d1 == 0.0 {
            let a = d0 / (d0 - d1);
            let fmr = w[0].fmr + a * (w[1].fmr - w[0].fmr);
            let fnmr = w[0].fnmr + a * (w[1].fnmr - w[0].fnmr);
            return Ok((fmr + fnmr) / 2.0);
        }
    }
    match det {
        [only] if only.fmr == only.fnmr => Ok(only.fmr),
        _ => Err(CalibrationError::NoCrossing),
    }
}

/// FNMR at the largest threshold whose FMR is still at least `target_fmr`,
/// linearly interpolated towards the next threshold.
pub fn fnmr_at_fmr(det: &[DetPoint], target_fmr: f64) -> Result<f64, CalibrationError> {
    if !(target_fmr > 0.0 && target_fmr <= 1.0) {
        return Err(CalibrationError::InvalidArgument(format!(
            "target fmr {target_fmr} outside (0, 1]"
        )));
    }
    let resolution = det
        .iter()
        .map(|p| p.fmr)
        .filter(|&f| f > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !resolution.is_finite() || target_fmr < resolution {
        return Err(CalibrationError::TargetUnreachable {
            target: target_fmr,
            resolution,
        });
    }
    let idx = det
        .iter()
        .rposition(|p| p.fmr >= target_fmr)
        .ok_or(CalibrationError::TargetUnreachable {
            target: target_fmr,
            resolution,
        })?;
    let here = det[idx];
    match det.get(idx + 1) {
        Some(next) if next.fmr < here.fmr => {
            let a = (here.fmr - target_fmr) / (here.fmr - next.fmr);
            Ok(here.fnmr + a * (next.fnmr - here.fnmr))
        }
        _ => Ok(here.fnmr),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> CalibrationSet {
        let g = (0..100).map(|k| 0.3 + k as f64 * 0.006).collect();
        let i = (0..100).map(|k| -0.4 + k as f64 * 0.006).collect();
        CalibrationSet::new(g, i).unwrap()
    }

    #[test]
    fn extreme_thresholds() {
        let cal = set();
        let low = det_point(&cal, -10.0);
        assert_eq!((low.fmr, low.fnmr), (1.0, 0.0));
        let high = det_point(&cal, 10.0);
        assert_eq!((high.fmr, high.fnmr), (0.0, 1.0));
    }

    #[test]
    fn det_spans_both_corners_and_is_monotone() {
        let det = compute_det(&set(), 200).unwrap();
        assert_eq!(det.len(), 200);
        assert_eq!((det[0].fmr, det[0].fnmr), (1.0, 0.0));
        assert_eq!((det[199].fmr, det[199].fnmr), (0.0, 1.0));
        for w in det.windows(2) {
            assert!(w[0].threshold < w[1].threshold);
            assert!(w[1].fmr <= w[0].fmr);
            assert!(w[1].fnmr >= w[0].fnmr);
        }
    }

    #[test]
    fn too_few_thresholds() {
        assert!(matches!(compute_det(&set(), 1), Err(CalibrationError::InvalidArgument(_))));
    }

    #[test]
    fn eer_on_hand_built_curve() {
        let det = vec![
            DetPoint { threshold: 0.0, fmr: 0.6, fnmr: 0.0 },
            DetPoint { threshold: 1.0, fmr: 0.4, fnmr: 0.2 },
            DetPoint { threshold: 2.0, fmr: 0.1, fnmr: 0.5 },
        ];
        // d goes 0.2 -> -0.4 between the last two points, crossing at a = 1/3:
        // fmr = 0.3, fnmr = 0.3
        assert!((eer(&det).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn eer_without_crossing() {
        let det = vec![
            DetPoint { threshold: 0.0, fmr: 0.9, fnmr: 0.0 },
            DetPoint { threshold: 1.0, fmr: 0.8, fnmr: 0.1 },
        ];
        assert_eq!(eer(&det), Err(CalibrationError::NoCrossing));
        assert_eq!(eer(&[]), Err(CalibrationError::NoCrossing));
    }

    #[test]
    fn fnmr_at_full_fmr_is_zero() {
        let det = compute_det(&set(), 500).unwrap();
        assert_eq!(fnmr_at_fmr(&det, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn unreachable_target() {
        let det = compute_det(&set(), 500).unwrap();
        assert!(matches!(
            fnmr_at_fmr(&det, 1e-4),
            Err(CalibrationError::TargetUnreachable { .. })
        ));
        assert!(matches!(fnmr_at_fmr(&det, 0.0), Err(CalibrationError::InvalidArgument(_))));
    }

    #[test]
    fn fnmr_interpolates_between_neighbours() {
        let det = vec![
            DetPoint { threshold: 0.0, fmr: 0.5, fnmr: 0.1 },
            DetPoint { threshold: 1.0, fmr: 0.3, fnmr: 0.3 },
            DetPoint { threshold: 2.0, fmr: 0.1, fnmr: 0.6 },
        ];
        assert!((fnmr_at_fmr(&det, 0.2).unwrap() - 0.45).abs() < 1e-12);
        assert!((fnmr_at_fmr(&det, 0.3).unwrap() - 0.3).abs() < 1e-12);
    }
}
