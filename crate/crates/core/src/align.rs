//! Five-point landmarks, similarity-transform estimation and face warping.
//!
//! Faces are aligned by the least-squares similarity transform (rotation,
//! uniform scale, translation; never a reflection) that maps the five
//! detected landmarks onto [`CANONICAL_TEMPLATE`], then resampled into a
//! 112×112 raster with bilinear interpolation.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of every aligned face raster.
pub const ALIGNED_SIZE: u32 = 112;

/// Canonical landmark positions in the 112×112 aligned frame, in the order
/// left eye, right eye, nose tip, left mouth corner, right mouth corner.
///
/// These are the widely used ArcFace/InsightFace reference coordinates.
/// "Left" and "right" refer to image left and image right.
pub const CANONICAL_TEMPLATE: [[f64; 2]; 5] = [
    [38.2946, 51.6963],
    [73.5318, 51.5014],
    [56.0252, 71.7366],
    [41.5493, 92.3655],
    [70.7299, 92.2041],
];

pub const LANDMARK_NAMES: [&str; 5] = [
    "left_eye",
    "right_eye",
    "nose_tip",
    "left_mouth_corner",
    "right_mouth_corner",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("landmark {index} is not finite")]
    NonFinite { index: usize },
    #[error("landmark {index} at ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("landmarks are collinear; the similarity transform is under-determined")]
    DegenerateLandmarks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Five facial landmarks in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Landmarks5 {
    points: [Point; 5],
}

impl Landmarks5 {
    /// Builds landmarks that must lie inside a `width`×`height` image.
    pub fn new(points: [Point; 5], width: u32, height: u32) -> Result<Self, AlignError> {
        let lm = Self::unbounded(points)?;
        for (index, p) in points.iter().enumerate() {
            if p.x < 0.0 || p.y < 0.0 || p.x > width as f64 || p.y > height as f64 {
                return Err(AlignError::OutOfBounds {
                    index,
                    x: p.x,
                    y: p.y,
                    width,
                    height,
                });
            }
        }
        Ok(lm)
    }

    /// Builds landmarks checking only that coordinates are finite.
    pub fn unbounded(points: [Point; 5]) -> Result<Self, AlignError> {
        for (index, p) in points.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(AlignError::NonFinite { index });
            }
        }
        Ok(Self { points })
    }

    /// The canonical template as landmarks.
    pub fn canonical() -> Self {
        Self {
            points: CANONICAL_TEMPLATE.map(|[x, y]| Point::new(x, y)),
        }
    }

    pub fn points(&self) -> &[Point; 5] {
        &self.points
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> Self {
        Self {
            points: self.points.map(|p| t.apply(p)),
        }
    }

    /// True when the points do not span two dimensions.
    pub fn is_collinear(&self) -> bool {
        let n = self.points.len() as f64;
        let cx = self.points.iter().map(|p| p.x).sum::<f64>() / n;
        let cy = self.points.iter().map(|p| p.y).sum::<f64>() / n;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in &self.points {
            let (dx, dy) = (p.x - cx, p.y - cy);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        // eigenvalues of the 2x2 scatter matrix
        let tr = sxx + syy;
        let det = sxx * syy - sxy * sxy;
        let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
        let hi = tr / 2.0 + disc;
        let lo = tr / 2.0 - disc;
        hi <= f64::EPSILON || lo <= 1e-9 * hi
    }
}

impl TryFrom<Vec<Point>> for Landmarks5 {
    type Error = String;

    fn try_from(v: Vec<Point>) -> Result<Self, Self::Error> {
        let points: [Point; 5] = v
            .try_into()
            .map_err(|v: Vec<Point>| format!("expected 5 landmarks, got {}", v.len()))?;
        Landmarks5::unbounded(points).map_err(|e| e.to_string())
    }
}

impl From<Landmarks5> for Vec<Point> {
    fn from(l: Landmarks5) -> Self {
        l.points.to_vec()
    }
}

/// `[a -b tx; b a ty]`: rotation plus uniform scale plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: Self = Self {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    /// Least-squares similarity transform taking `src` onto `dst`.
    ///
    /// Closed form: with both point sets centered on their centroids,
    /// `a = Σ(p·q) / Σ|p|²` and `b = Σ(p×q) / Σ|p|²`.
    pub fn estimate(src: &Landmarks5, dst: &Landmarks5) -> Result<Self, AlignError> {
        if src.is_collinear() || dst.is_collinear() {
            return Err(AlignError::DegenerateLandmarks);
        }
        let sp = src.points();
        let dp = dst.points();
        let n = 5.0;
        let (scx, scy) = (
            sp.iter().map(|p| p.x).sum::<f64>() / n,
            sp.iter().map(|p| p.y).sum::<f64>() / n,
        );
        let (dcx, dcy) = (
            dp.iter().map(|p| p.x).sum::<f64>() / n,
            dp.iter().map(|p| p.y).sum::<f64>() / n,
        );
        let (mut dot, mut cross, mut norm) = (0.0, 0.0, 0.0);
        for (p, q) in sp.iter().zip(dp) {
            let (px, py) = (p.x - scx, p.y - scy);
            let (qx, qy) = (q.x - dcx, q.y - dcy);
            dot += px * qx + py * qy;
            cross += px * qy - py * qx;
            norm += px * px + py * py;
        }
        let a = dot / norm;
        let b = cross / norm;
        if a * a + b * b <= f64::EPSILON {
            return Err(AlignError::DegenerateLandmarks);
        }
        let tx = dcx - (a * scx - b * scy);
        let ty = dcy - (b * scx + a * scy);
        Ok(Self { a, b, tx, ty })
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x - self.b * p.y + self.tx,
            self.b * p.x + self.a * p.y + self.ty,
        )
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn rotation(&self) -> f64 {
        self.b.atan2(self.a)
    }

    /// Determinant of the linear part; always positive for a valid transform.
    pub fn determinant(&self) -> f64 {
        self.a * self.a + self.b * self.b
    }

    pub fn inverse(&self) -> Self {
        let d = self.determinant();
        let (a, b) = (self.a / d, -self.b / d);
        let tx = -(a * self.tx - b * self.ty);
        let ty = -(b * self.tx + a * self.ty);
        Self { a, b, tx, ty }
    }

    /// Row-major 2×3 matrix.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        [[self.a, -self.b, self.tx], [self.b, self.a, self.ty]]
    }

    /// Root-mean-square distance between `t(src[i])` and `dst[i]`.
    pub fn rms_residual(&self, src: &Landmarks5, dst: &Landmarks5) -> f64 {
        let sum: f64 = src
            .points()
            .iter()
            .zip(dst.points())
            .map(|(p, q)| {
                let m = self.apply(*p);
                (m.x - q.x).powi(2) + (m.y - q.y).powi(2)
            })
            .sum();
        (sum / 5.0).sqrt()
    }
}

/// A face warped into the canonical 112×112 frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFace {
    pixels: RgbImage,
    landmarks: Landmarks5,
    transform: SimilarityTransform,
    source_id: String,
}

impl AlignedFace {
    pub fn new(
        pixels: RgbImage,
        landmarks: Landmarks5,
        transform: SimilarityTransform,
        source_id: impl Into<String>,
    ) -> Result<Self, AlignError> {
        assert_eq!(
            pixels.dimensions(),
            (ALIGNED_SIZE, ALIGNED_SIZE),
            "aligned raster must be {ALIGNED_SIZE}x{ALIGNED_SIZE}"
        );
        if transform.determinant() <= 0.0 {
            return Err(AlignError::DegenerateLandmarks);
        }
        Ok(Self {
            pixels,
            landmarks,
            transform,
            source_id: source_id.into(),
        })
    }

    /// A raster that is already aligned, with canonical landmarks.
    pub fn from_aligned_raster(pixels: RgbImage, source_id: impl Into<String>) -> Self {
        Self::new(
            pixels,
            Landmarks5::canonical(),
            SimilarityTransform::IDENTITY,
            source_id,
        )
        .expect("identity transform is valid")
    }

    /// Aligns `img` given its detected landmarks.
    pub fn align(
        img: &RgbImage,
        detected: &Landmarks5,
        source_id: impl Into<String>,
    ) -> Result<Self, AlignError> {
        let transform = SimilarityTransform::estimate(detected, &Landmarks5::canonical())?;
        let pixels = warp_bilinear(img, &transform, ALIGNED_SIZE);
        let landmarks = detected.transformed(&transform);
        Self::new(pixels, landmarks, transform, source_id)
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn landmarks(&self) -> &Landmarks5 {
        &self.landmarks
    }

    pub fn transform(&self) -> &SimilarityTransform {
        &self.transform
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }
}

/// Resamples `src` into a `size`×`size` raster; `t` maps source to output
/// coordinates. Samples falling outside the source are black.
pub fn warp_bilinear(src: &RgbImage, t: &SimilarityTransform, size: u32) -> RgbImage {
    let inv = t.inverse();
    let (w, h) = (src.width() as i64, src.height() as i64);
    let fetch = |x: i64, y: i64| -> [f64; 3] {
        if x >= 0 && y >= 0 && x < w && y < h {
            let p = src.get_pixel(x as u32, y as u32).0;
            [p[0] as f64, p[1] as f64, p[2] as f64]
        } else {
            [0.0; 3]
        }
    };
    RgbImage::from_fn(size, size, |ox, oy| {
        let s = inv.apply(Point::new(ox as f64, oy as f64));
        let x0 = s.x.floor();
        let y0 = s.y.floor();
        let (fx, fy) = (s.x - x0, s.y - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let c00 = fetch(x0, y0);
        let c10 = fetch(x0 + 1, y0);
        let c01 = fetch(x0, y0 + 1);
        let c11 = fetch(x0 + 1, y0 + 1);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let v = c00[c] * (1.0 - fx) * (1.0 - fy)
                + c10[c] * fx * (1.0 - fy)
                + c01[c] * (1.0 - fx) * fy
                + c11[c] * fx * fy;
            out[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}

/// JSON description of the canonical template for adapter authors.
pub fn template_json() -> String {
    let points: Vec<_> = CANONICAL_TEMPLATE
        .iter()
        .zip(LANDMARK_NAMES)
        .map(|([x, y], name)| serde_json::json!({ "name": name, "x": x, "y": y }))
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "size": ALIGNED_SIZE,
        "coordinates": "pixel units, origin at the top-left pixel center",
        "landmarks": points,
    }))
    .expect("static json")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(pts: [[f64; 2]; 5]) -> Landmarks5 {
        Landmarks5::unbounded(pts.map(|[x, y]| Point::new(x, y))).unwrap()
    }

    #[test]
    fn canonical_maps_to_identity() {
        let t = SimilarityTransform::estimate(&Landmarks5::canonical(), &Landmarks5::canonical())
            .unwrap();
        assert!((t.a - 1.0).abs() < 1e-6);
        assert!(t.b.abs() < 1e-6);
        assert!(t.tx.abs() < 1e-6 && t.ty.abs() < 1e-6);
    }

    #[test]
    fn scaled_template_recovers_half_scale() {
        let src = lm(CANONICAL_TEMPLATE.map(|[x, y]| [2.0 * x + 10.0, 2.0 * y + 10.0]));
        let t = SimilarityTransform::estimate(&src, &Landmarks5::canonical()).unwrap();
        assert!((t.scale() - 0.5).abs() < 1e-6, "scale {}", t.scale());
        assert!(t.rotation().abs() < 1e-9);
        assert!(t.rms_residual(&src, &Landmarks5::canonical()) < 1e-9);
    }

    #[test]
    fn rotation_is_recovered_without_reflection() {
        let theta = 0.3f64;
        let (c, s) = (theta.cos(), theta.sin());
        let src = lm(CANONICAL_TEMPLATE.map(|[x, y]| [c * x - s * y + 40.0, s * x + c * y - 5.0]));
        let t = SimilarityTransform::estimate(&src, &Landmarks5::canonical()).unwrap();
        assert!((t.rotation() + theta).abs() < 1e-9);
        assert!(t.determinant() > 0.0);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let src = lm([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]]);
        assert_eq!(
            SimilarityTransform::estimate(&src, &Landmarks5::canonical()),
            Err(AlignError::DegenerateLandmarks)
        );
        let same = lm([[5.0, 5.0]; 5]);
        assert!(same.is_collinear());
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = SimilarityTransform {
            a: 0.8,
            b: -0.3,
            tx: 4.0,
            ty: -7.5,
        };
        let p = Point::new(13.0, 29.0);
        let back = t.inverse().apply(t.apply(p));
        assert!((back.x - p.x).abs() < 1e-12 && (back.y - p.y).abs() < 1e-12);
    }

    #[test]
    fn identity_warp_is_a_crop() {
        let src = RgbImage::from_fn(150, 130, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
        let out = warp_bilinear(&src, &SimilarityTransform::IDENTITY, ALIGNED_SIZE);
        for (x, y, p) in out.enumerate_pixels() {
            assert_eq!(p, src.get_pixel(x, y));
        }
    }

    #[test]
    fn landmark_bounds_are_enforced() {
        let pts = CANONICAL_TEMPLATE.map(|[x, y]| Point::new(x, y));
        assert!(Landmarks5::new(pts, 112, 112).is_ok());
        assert!(matches!(
            Landmarks5::new(pts, 60, 112),
            Err(AlignError::OutOfBounds { index: 1, .. })
        ));
        let mut bad = pts;
        bad[2].x = f64::NAN;
        assert_eq!(
            Landmarks5::unbounded(bad),
            Err(AlignError::NonFinite { index: 2 })
        );
    }

    #[test]
    fn landmarks_serde_requires_five_points() {
        let json = serde_json::to_string(&Landmarks5::canonical()).unwrap();
        let back: Landmarks5 = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Landmarks5::canonical());
        assert!(serde_json::from_str::<Landmarks5>(r#"[{"x":1,"y":2}]"#).is_err());
    }

    #[test]
    fn template_json_lists_five_points() {
        let v: serde_json::Value = serde_json::from_str(&template_json()).unwrap();
        assert_eq!(v["landmarks"].as_array().unwrap().len(), 5);
        assert_eq!(v["size"], 112);
    }
}
