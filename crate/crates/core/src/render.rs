//! Heatmap export: grayscale and overlay PNGs, raw little-endian floats.

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::face::encode_png;
use crate::saliency::{SaliencyMap, SaliencyMethod};

/// Blue → cyan → yellow → red ramp for values in [0, 1].
pub fn colormap(v: f64) -> Rgb<u8> {
    const STOPS: [(f64, [f64; 3]); 4] = [
        (0.0, [0.0, 0.0, 160.0]),
        (0.35, [0.0, 200.0, 230.0]),
        (0.7, [250.0, 230.0, 0.0]),
        (1.0, [220.0, 0.0, 0.0]),
    ];
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let i = STOPS.windows(2).position(|w| v <= w[1].0).unwrap_or(STOPS.len() - 2);
    let (t0, c0) = STOPS[i];
    let (t1, c1) = STOPS[i + 1];
    let f = (v - t0) / (t1 - t0);
    Rgb(std::array::from_fn(|k| (c0[k] + f * (c1[k] - c0[k])).round() as u8))
}

pub fn grayscale(map: &SaliencyMap) -> GrayImage {
    GrayImage::from_fn(map.width(), map.height(), |x, y| {
        Luma([(map.value(x, y) * 255.0).round() as u8])
    })
}

/// Blends the colormapped map over `face` with weight `alpha`.
pub fn overlay(face: &RgbImage, map: &SaliencyMap, alpha: f64) -> RgbImage {
    assert_eq!(face.dimensions(), (map.width(), map.height()), "face and map sizes differ");
    let a = alpha.clamp(0.0, 1.0);
    RgbImage::from_fn(map.width(), map.height(), |x, y| {
        let base = face.get_pixel(x, y).0;
        let heat = colormap(map.value(x, y)).0;
        Rgb(std::array::from_fn(|k| {
            ((1.0 - a) * base[k] as f64 + a * heat[k] as f64).round() as u8
        }))
    })
}

pub const OVERLAY_ALPHA: f64 = 0.5;

pub fn overlay_png(face: &RgbImage, map: &SaliencyMap) -> Vec<u8> {
    encode_png(&overlay(face, map, OVERLAY_ALPHA))
}

pub fn grayscale_png(map: &SaliencyMap) -> Vec<u8> {
    let mut out = Vec::new();
    grayscale(map)
        .write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .expect("png encoding to memory");
    out
}

/// Describes a `.f32` raster file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: u32,
    pub height: u32,
    pub dtype: String,
    pub layout: String,
    pub method: SaliencyMethod,
    pub probe_id: String,
    pub reference_id: String,
    pub raw_min: f64,
    pub raw_max: f64,
}

/// Normalized values as row-major little-endian `f32`, with a sidecar.
pub fn raw_f32(map: &SaliencyMap) -> (Vec<u8>, RawSidecar) {
    let bytes = map.values().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    let (lo, hi) = map.raw_range();
    (
        bytes,
        RawSidecar {
            width: map.width(),
            height: map.height(),
            dtype: "f32le".into(),
            layout: "row-major".into(),
            method: map.method(),
            probe_id: map.probe_id().to_string(),
            reference_id: map.reference_id().to_string(),
            raw_min: lo,
            raw_max: hi,
        },
    )
}

pub fn read_raw_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::ALIGNED_SIZE;

    fn ramp() -> SaliencyMap {
        let raw: Vec<f64> = (0..ALIGNED_SIZE * ALIGNED_SIZE).map(|i| (i % ALIGNED_SIZE) as f64).collect();
        SaliencyMap::from_raw(&raw, SaliencyMethod::Average, "a", "b")
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), Rgb([0, 0, 160]));
        assert_eq!(colormap(1.0), Rgb([220, 0, 0]));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
        assert_eq!(colormap(2.0), colormap(1.0));
    }

    #[test]
    fn raw_round_trip() {
        let m = ramp();
        let (bytes, side) = raw_f32(&m);
        assert_eq!(bytes.len(), 4 * 112 * 112);
        let back = read_raw_f32(&bytes);
        for (a, b) in back.iter().zip(m.values()) {
            assert_eq!(*a, *b as f32);
        }
        assert_eq!((side.raw_min, side.raw_max), (0.0, 111.0));
    }

    #[test]
    fn pngs_decode() {
        let m = ramp();
        let g = image::load_from_memory(&grayscale_png(&m)).unwrap().to_luma8();
        assert_eq!(g.get_pixel(0, 0).0, [0]);
        assert_eq!(g.get_pixel(111, 5).0, [255]);
        let face = RgbImage::from_pixel(112, 112, Rgb([100, 100, 100]));
        let o = image::load_from_memory(&overlay_png(&face, &m)).unwrap().to_rgb8();
        assert_eq!(o.dimensions(), (112, 112));
        assert_eq!(o.get_pixel(0, 0).0, [50, 50, 130]);
    }
}
