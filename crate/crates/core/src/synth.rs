//! Deterministic synthetic data: cartoon faces laid out on the canonical
//! landmark template, and Gaussian genuine/impostor score sets.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::align::{ALIGNED_SIZE, CANONICAL_TEMPLATE};
use crate::calibration::{CalibrationError, CalibrationSet};

/// Appearance of one synthetic identity, in canonical 112×112 units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub skin: [u8; 3],
    pub background: [u8; 3],
    pub hair: [u8; 3],
    pub lips: [u8; 3],
    pub face_width: f64,
    pub face_height: f64,
    pub eye_radius: f64,
    pub brow_thickness: f64,
    pub brow_lift: f64,
    pub nose_width: f64,
    pub mouth_width: f64,
    pub texture_seed: u64,
    /// Global brightness multiplier, for capture variation.
    pub exposure: f64,
    /// Sub-pixel placement jitter in canonical units, for capture variation.
    pub offset: [f64; 2],
}

impl FaceParams {
    pub fn from_seed(seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut rgb = |lo: u8, hi: u8| [r.random_range(lo..=hi), r.random_range(lo..=hi), r.random_range(lo..=hi)];
        let skin = rgb(120, 230);
        let background = rgb(20, 90);
        let hair = rgb(10, 110);
        let lips = rgb(90, 200);
        Self {
            skin,
            background,
            hair,
            lips,
            face_width: r.random_range(36.0..46.0),
            face_height: r.random_range(50.0..58.0),
            eye_radius: r.random_range(3.5..6.5),
            brow_thickness: r.random_range(2.0..5.0),
            brow_lift: r.random_range(6.0..11.0),
            nose_width: r.random_range(4.0..9.0),
            mouth_width: r.random_range(10.0..18.0),
            texture_seed: r.random(),
            exposure: 1.0,
            offset: [0.0, 0.0],
        }
    }

    /// The same identity under a different exposure.
    pub fn recaptured(&self, exposure: f64) -> Self {
        Self {
            exposure,
            ..self.clone()
        }
    }

    /// The same identity with capture noise: exposure, placement jitter and
    /// a fresh skin texture.
    pub fn jittered(&self, seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ self.texture_seed);
        Self {
            exposure: r.random_range(0.8..1.15),
            offset: [r.random_range(-1.5..1.5), r.random_range(-1.5..1.5)],
            texture_seed: r.random(),
            ..self.clone()
        }
    }
}

fn shade(c: [u8; 3], k: f64) -> Rgb<u8> {
    Rgb(c.map(|v| (v as f64 * k).round().clamp(0.0, 255.0) as u8))
}

fn in_ellipse(u: f64, v: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let dx = (u - cx) / rx;
    let dy = (v - cy) / ry;
    dx * dx + dy * dy <= 1.0
}

fn texture(seed: u64, x: u32, y: u32) -> f64 {
    // splitmix-style hash, mapped to [-1, 1]
    let mut z = seed ^ ((x as u64) << 32 | y as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Renders a face with its features at the canonical template positions
/// scaled to `width × height`.
pub fn render_face(p: &FaceParams, width: u32, height: u32) -> RgbImage {
    let s = ALIGNED_SIZE as f64;
    let [le, re, nose, lm, rm] = CANONICAL_TEMPLATE;
    let cx = (le[0] + re[0]) / 2.0;
    let cy = (le[1] + lm[1]) / 2.0 + 2.0;
    RgbImage::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) * s / width as f64 - p.offset[0];
        let v = (y as f64 + 0.5) * s / height as f64 - p.offset[1];
        let grain = 1.0 + 0.04 * texture(p.texture_seed, (u * 4.0) as u32, (v * 4.0) as u32);
        let k = p.exposure * grain;
        if !in_ellipse(u, v, cx, cy, p.face_width, p.face_height) {
            let gradient = 0.8 + 0.4 * v / s;
            if v < cy - p.face_height * 0.55 && in_ellipse(u, v, cx, cy, p.face_width + 6.0, p.face_height + 6.0) {
                shade(p.hair, k)
            } else {
                shade(p.background, k * gradient)
            }
        } else {
            let eye = |e: [f64; 2]| in_ellipse(u, v, e[0], e[1], p.eye_radius * 1.6, p.eye_radius);
            let pupil = |e: [f64; 2]| in_ellipse(u, v, e[0], e[1], p.eye_radius * 0.55, p.eye_radius * 0.55);
            let brow = |e: [f64; 2]| {
                (u - e[0]).abs() <= p.eye_radius * 2.2 && (v - (e[1] - p.brow_lift)).abs() <= p.brow_thickness / 2.0
            };
            let mouth_y = (lm[1] + rm[1]) / 2.0;
            let mouth_x = (lm[0] + rm[0]) / 2.0;
            if pupil(le) || pupil(re) {
                shade([25, 20, 20], k)
            } else if eye(le) || eye(re) {
                shade([235, 235, 230], k)
            } else if brow(le) || brow(re) {
                shade(p.hair, k)
            } else if in_ellipse(u, v, mouth_x, mouth_y, p.mouth_width, 3.5) {
                shade(p.lips, k)
            } else if v >= le[1] + 2.0 && v <= nose[1] + 2.0 && (u - nose[0]).abs() <= p.nose_width * (v - le[1]) / (nose[1] - le[1]) {
                shade(p.skin, k * 0.82)
            } else {
                // soft shading towards the face outline
                let d = ((u - cx) / p.face_width).powi(2) + ((v - cy) / p.face_height).powi(2);
                shade(p.skin, k * (1.05 - 0.2 * d))
            }
        }
    })
}

/// Scores drawn from `N(mean_g, sd_g²)` and `N(mean_i, sd_i²)` with a
/// fixed seed.
pub fn gaussian_scores(
    n_per_class: usize,
    (mean_g, sd_g): (f64, f64),
    (mean_i, sd_i): (f64, f64),
    seed: u64,
) -> Result<CalibrationSet, CalibrationError> {
    if !(sd_g > 0.0 && sd_i > 0.0) {
        return Err(CalibrationError::InvalidArgument(format!("standard deviations must be positive, got {sd_g} and {sd_i}")));
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let g = Normal::new(mean_g, sd_g).map_err(|e| CalibrationError::InvalidArgument(e.to_string()))?;
    let i = Normal::new(mean_i, sd_i).map_err(|e| CalibrationError::InvalidArgument(e.to_string()))?;
    let genuine = (0..n_per_class).map(|_| g.sample(&mut r)).collect();
    let impostor = (0..n_per_class).map(|_| i.sample(&mut r)).collect();
    CalibrationSet::new(genuine, impostor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic() {
        let p = FaceParams::from_seed(7);
        assert_eq!(render_face(&p, 120, 150), render_face(&p, 120, 150));
        assert_ne!(FaceParams::from_seed(7), FaceParams::from_seed(8));
    }

    #[test]
    fn features_sit_on_the_template() {
        let p = FaceParams::from_seed(3);
        let img = render_face(&p, 112, 112);
        let [le, ..] = CANONICAL_TEMPLATE;
        assert_eq!(*img.get_pixel(le[0] as u32, le[1] as u32), shade([25, 20, 20], img_k(&p, le)));
    }

    fn img_k(p: &FaceParams, e: [f64; 2]) -> f64 {
        let u = e[0].floor() + 0.5;
        let v = e[1].floor() + 0.5;
        p.exposure * (1.0 + 0.04 * texture(p.texture_seed, (u * 4.0) as u32, (v * 4.0) as u32))
    }

    #[test]
    fn texture_range() {
        for x in 0..50 {
            let t = texture(9, x, x * 3);
            assert!((-1.0..=1.0).contains(&t));
        }
    }

    #[test]
    fn gaussian_scores_are_reproducible() {
        let a = gaussian_scores(100, (0.7, 0.1), (0.2, 0.1), 42).unwrap();
        let b = gaussian_scores(100, (0.7, 0.1), (0.2, 0.1), 42).unwrap();
        assert_eq!(a, b);
        assert!(gaussian_scores(100, (0.7, -1.0), (0.2, 0.1), 42).is_err());
    }
}
