//! The nine facial regions and per-region quantization of saliency maps.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{AlignError, AlignedFace, Landmarks5, Point, SimilarityTransform, ALIGNED_SIZE};
use crate::saliency::SaliencyMap;

const TEMPLATE_JSON: &str = include_str!("../assets/region_template.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("degenerate landmarks")]
    DegenerateLandmarks,
    #[error("region {0} has an empty mask")]
    EmptyMask(RegionName),
}

impl From<AlignError> for RegionError {
    fn from(_: AlignError) -> Self {
        RegionError::DegenerateLandmarks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionName {
    LeftEyebrow,
    RightEyebrow,
    LeftEye,
    RightEye,
    LeftCheek,
    RightCheek,
    Chin,
    Lips,
    Nose,
}

impl RegionName {
    /// Fixed order; also the final tie-breaker when ranking.
    pub const ALL: [RegionName; 9] = [
        RegionName::LeftEyebrow,
        RegionName::RightEyebrow,
        RegionName::LeftEye,
        RegionName::RightEye,
        RegionName::LeftCheek,
        RegionName::RightCheek,
        RegionName::Chin,
        RegionName::Lips,
        RegionName::Nose,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RegionName::LeftEyebrow => "left_eyebrow",
            RegionName::RightEyebrow => "right_eyebrow",
            RegionName::LeftEye => "left_eye",
            RegionName::RightEye => "right_eye",
            RegionName::LeftCheek => "left_cheek",
            RegionName::RightCheek => "right_cheek",
            RegionName::Chin => "chin",
            RegionName::Lips => "lips",
            RegionName::Nose => "nose",
        }
    }

    /// Lower-case words, e.g. "left eyebrow".
    pub fn words(&self) -> String {
        self.as_str().replace('_', " ")
    }
}

impl fmt::Display for RegionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RegionName::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown facial region {s:?}"))
    }
}

/// A 112×112 boolean mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.0[(y * ALIGNED_SIZE + x) as usize]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn centroid(&self) -> Option<Point> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (i, &b) in self.0.iter().enumerate() {
            if b {
                sx += (i as u32 % ALIGNED_SIZE) as f64;
                sy += (i as u32 / ALIGNED_SIZE) as f64;
                n += 1;
            }
        }
        (n > 0).then(|| Point::new(sx / n as f64, sy / n as f64))
    }

    /// Pixels whose center `(x + 0.5, y + 0.5)` lies inside `polygon`
    /// (even-odd rule).
    pub fn rasterize(polygon: &[Point]) -> Self {
        let size = ALIGNED_SIZE;
        let mut bits = vec![false; (size * size) as usize];
        for y in 0..size {
            let cy = y as f64 + 0.5;
            for x in 0..size {
                let cx = x as f64 + 0.5;
                let mut inside = false;
                let mut j = polygon.len() - 1;
                for i in 0..polygon.len() {
                    let (pi, pj) = (polygon[i], polygon[j]);
                    if (pi.y > cy) != (pj.y > cy)
                        && cx < (pj.x - pi.x) * (cy - pi.y) / (pj.y - pi.y) + pi.x
                    {
                        inside = !inside;
                    }
                    j = i;
                }
                bits[(y * size + x) as usize] = inside;
            }
        }
        Mask(bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacialRegion {
    pub name: RegionName,
    pub mask: Mask,
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    version: String,
    regions: std::collections::BTreeMap<RegionName, Vec<[f64; 2]>>,
}

/// Canonical region polygons in the aligned frame.
pub struct RegionTemplate {
    pub version: String,
    pub polygons: Vec<(RegionName, Vec<Point>)>,
}

pub fn region_template() -> &'static RegionTemplate {
    static T: OnceLock<RegionTemplate> = OnceLock::new();
    T.get_or_init(|| {
        let file: TemplateFile = serde_json::from_str(TEMPLATE_JSON).expect("bundled region template parses");
        let polygons = RegionName::ALL
            .iter()
            .map(|name| {
                let pts = file.regions.get(name).expect("template lists every region");
                (*name, pts.iter().map(|&[x, y]| Point::new(x, y)).collect())
            })
            .collect();
        RegionTemplate {
            version: file.version,
            polygons,
        }
    })
}

/// The bundled region template as JSON.
pub fn region_template_json() -> &'static str {
    TEMPLATE_JSON
}

/// Masks rendered straight from the template polygons.
pub fn template_masks() -> Vec<FacialRegion> {
    region_template()
        .polygons
        .iter()
        .map(|(name, poly)| FacialRegion {
            name: *name,
            mask: Mask::rasterize(poly),
        })
        .collect()
}

fn snap(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// The template regions moved by the similarity transform taking the
/// canonical landmarks onto `landmarks` (both in aligned coordinates).
pub fn region_masks(landmarks: &Landmarks5) -> Result<Vec<FacialRegion>, RegionError> {
    let t = SimilarityTransform::estimate(&Landmarks5::canonical(), landmarks)?;
    region_template()
        .polygons
        .iter()
        .map(|(name, poly)| {
            let moved: Vec<Point> = poly
                .iter()
                .map(|p| {
                    let q = t.apply(*p);
                    Point::new(snap(q.x), snap(q.y))
                })
                .collect();
            let mask = Mask::rasterize(&moved);
            if mask.count() == 0 {
                return Err(RegionError::EmptyMask(*name));
            }
            Ok(FacialRegion { name: *name, mask })
        })
        .collect()
}

/// Source of region geometry for an aligned face.
///
/// The shipped implementation derives regions from the five alignment
/// landmarks; a dense-landmark model can implement this trait instead.
pub trait RegionLocator: Send + Sync {
    fn locate(&self, face: &AlignedFace) -> Result<Vec<FacialRegion>, RegionError>;
}

#[derive(Debug, Default, Clone)]
pub struct TemplateRegionLocator;

impl RegionLocator for TemplateRegionLocator {
    fn locate(&self, face: &AlignedFace) -> Result<Vec<FacialRegion>, RegionError> {
        region_masks(face.landmarks())
    }
}

/// How a region's saliency values are reduced to one number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionStatistic {
    #[default]
    Mean,
    Max,
}

/// Maps a normalized value to an importance score: five equal intervals
/// over [0, 1], top interval closed, 1 = most important.
pub fn quantize_value(v: f64) -> u8 {
    let v = v.clamp(0.0, 1.0);
    let i = ((5.0 * v).floor() as u8).min(4);
    5 - i
}

pub fn region_value(map: &SaliencyMap, region: &FacialRegion, stat: RegionStatistic) -> Result<f64, RegionError> {
    let vals = map
        .values()
        .iter()
        .zip(region.mask.bits())
        .filter_map(|(v, &m)| m.then_some(*v));
    let (sum, max, n) = vals.fold((0.0, f64::NEG_INFINITY, 0usize), |(s, mx, n), v| (s + v, mx.max(v), n + 1));
    if n == 0 {
        return Err(RegionError::EmptyMask(region.name));
    }
    Ok(match stat {
        RegionStatistic::Mean => sum / n as f64,
        RegionStatistic::Max => max,
    })
}

/// Importance score 1–5 of `region` from the mean map value inside it.
pub fn quantize_region(map: &SaliencyMap, region: &FacialRegion) -> Result<u8, RegionError> {
    quantize_region_with(map, region, RegionStatistic::Mean)
}

pub fn quantize_region_with(
    map: &SaliencyMap,
    region: &FacialRegion,
    stat: RegionStatistic,
) -> Result<u8, RegionError> {
    region_value(map, region, stat).map(quantize_value)
}
