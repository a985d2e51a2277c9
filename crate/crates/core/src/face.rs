//! Raw input images.

use std::path::Path;

use image::RgbImage;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FaceImageError {
    #[error("image has zero width or height")]
    Empty,
    #[error("could not decode image: {0}")]
    Decode(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// An 8-bit RGB input image with an opaque source identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    pixels: RgbImage,
    source_id: String,
}

impl FaceImage {
    pub fn new(pixels: RgbImage, source_id: impl Into<String>) -> Result<Self, FaceImageError> {
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(FaceImageError::Empty);
        }
        Ok(Self {
            pixels,
            source_id: source_id.into(),
        })
    }

    /// Decodes PNG or JPEG bytes. Any other format is rejected.
    pub fn decode(bytes: &[u8], source_id: impl Into<String>) -> Result<Self, FaceImageError> {
        let format = image::guess_format(bytes).map_err(|e| FaceImageError::Decode(e.to_string()))?;
        if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
            return Err(FaceImageError::Decode(format!(
                "unsupported format {format:?}, expected PNG or JPEG"
            )));
        }
        let img = image::load_from_memory_with_format(bytes, format)
            .map_err(|e| FaceImageError::Decode(e.to_string()))?;
        Self::new(img.to_rgb8(), source_id)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, FaceImageError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::decode(&bytes, id)
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

/// Encodes an RGB raster as PNG.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding does not fail");
    out.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_raster() {
        assert!(matches!(
            FaceImage::new(RgbImage::new(0, 4), "x"),
            Err(FaceImageError::Empty)
        ));
    }

    #[test]
    fn png_round_trips() {
        let img = RgbImage::from_fn(7, 5, |x, y| image::Rgb([x as u8 * 30, y as u8 * 40, 9]));
        let decoded = FaceImage::decode(&encode_png(&img), "p").unwrap();
        assert_eq!(decoded.pixels(), &img);
    }

    #[test]
    fn garbage_is_a_decode_error() {
        assert!(matches!(
            FaceImage::decode(b"not an image at all", "g"),
            Err(FaceImageError::Decode(_))
        ));
    }
}
