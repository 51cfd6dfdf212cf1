//! 8-bit RGB rasters with provenance, and their PNG/base64 wire form.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("pixel buffer has {actual} bytes, expected {expected} for {width}x{height} RGB")]
    BufferSize { width: u32, height: u32, expected: usize, actual: usize },
    #[error("edited image {id} has no parent_id")]
    MissingParent { id: String },
    #[error("crop {rect:?} does not fit inside {width}x{height}")]
    CropOutOfBounds { rect: CropRect, width: u32, height: u32 },
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout {0:?}")]
    UnsupportedColor(png::ColorType),
    #[error("base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("wire image declares {declared_w}x{declared_h} but png is {actual_w}x{actual_h}")]
    DimensionClaim { declared_w: u32, declared_h: u32, actual_w: u32, actual_h: u32 },
}

/// Where an image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Generated,
    Curated,
    Edited,
}

/// Pixel rectangle used for coarse alignment before compositing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Provenance carried alongside the pixels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub id: String,
    pub identity_id: String,
    pub seed: u64,
    pub parent_id: Option<String>,
    /// Prompt that produced the image, for generated and edited images.
    pub prompt: Option<String>,
    /// Edit strength, for edited images.
    pub strength: Option<f64>,
}

/// An 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireImage", into = "WireImage")]
pub struct ImageRecord {
    pub id: String,
    pub identity_id: String,
    pub source: ImageSource,
    pub seed: u64,
    pub parent_id: Option<String>,
    pub prompt: Option<String>,
    pub strength: Option<f64>,
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl ImageRecord {
    pub fn new(
        width: u32,
        height: u32,
        pixels: Vec<u8>,
        source: ImageSource,
        provenance: Provenance,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize { width, height, expected, actual: pixels.len() });
        }
        if source == ImageSource::Edited && provenance.parent_id.is_none() {
            return Err(ImageError::MissingParent { id: provenance.id });
        }
        Ok(Self {
            id: provenance.id,
            identity_id: provenance.identity_id,
            source,
            seed: provenance.seed,
            parent_id: provenance.parent_id,
            prompt: provenance.prompt,
            strength: provenance.strength,
            width,
            height,
            pixels,
        })
    }

    /// Constant-colour image, mostly useful in tests and fixtures.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3], provenance: Provenance) -> Result<Self, ImageError> {
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self::new(width, height, pixels, ImageSource::Curated, provenance)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn rgb_at(&self, index: usize) -> [u8; 3] {
        let o = index * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn same_dimensions(&self, other: &ImageRecord) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            id: self.id.clone(),
            identity_id: self.identity_id.clone(),
            seed: self.seed,
            parent_id: self.parent_id.clone(),
            prompt: self.prompt.clone(),
            strength: self.strength,
        }
    }

    /// Copies out a sub-rectangle, keeping provenance.
    pub fn crop(&self, rect: CropRect) -> Result<ImageRecord, ImageError> {
        let fits = rect.width > 0
            && rect.height > 0
            && rect.x.checked_add(rect.width).is_some_and(|r| r <= self.width)
            && rect.y.checked_add(rect.height).is_some_and(|b| b <= self.height);
        if !fits {
            return Err(ImageError::CropOutOfBounds { rect, width: self.width, height: self.height });
        }
        let mut pixels = Vec::with_capacity(rect.width as usize * rect.height as usize * 3);
        for row in rect.y..rect.y + rect.height {
            let start = (row as usize * self.width as usize + rect.x as usize) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + rect.width as usize * 3]);
        }
        ImageRecord::new(rect.width, rect.height, pixels, self.source, self.provenance())
    }

    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        encode_png(self.width, self.height, &self.pixels)
    }

    pub fn from_png(bytes: &[u8], source: ImageSource, provenance: Provenance) -> Result<Self, ImageError> {
        let (width, height, pixels) = decode_png(bytes)?;
        Self::new(width, height, pixels, source, provenance)
    }
}

/// Encodes an RGB8 buffer as PNG with fixed settings, so equal pixels give
/// equal bytes.
pub fn encode_png(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Fast);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(rgb)?;
        writer.finish()?;
    }
    Ok(out)
}

/// Decodes any 8-bit-normalisable PNG into RGB8. Alpha is dropped, grey is
/// replicated.
pub fn decode_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), ImageError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info()?;
    let size = reader.output_buffer_size().unwrap_or(0);
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width, info.height);
    let n = w as usize * h as usize;
    let rgb = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&v| [v, v, v]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => return Err(ImageError::UnsupportedColor(other)),
    };
    debug_assert_eq!(rgb.len(), n * 3);
    Ok((w, h, rgb))
}

/// JSON form of an [`ImageRecord`]: provenance fields plus a base64 PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub id: String,
    pub identity_id: String,
    pub source: ImageSource,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
    pub width: u32,
    pub height: u32,
    pub png_base64: String,
}

impl From<ImageRecord> for WireImage {
    fn from(img: ImageRecord) -> Self {
        // RGB8 with valid dimensions cannot fail to encode into a Vec.
        let png = img.to_png().expect("png encoding of a validated raster");
        WireImage {
            id: img.id,
            identity_id: img.identity_id,
            source: img.source,
            seed: img.seed,
            parent_id: img.parent_id,
            prompt: img.prompt,
            strength: img.strength,
            width: img.width,
            height: img.height,
            png_base64: B64.encode(png),
        }
    }
}

impl TryFrom<WireImage> for ImageRecord {
    type Error = ImageError;

    fn try_from(w: WireImage) -> Result<Self, Self::Error> {
        let bytes = B64.decode(w.png_base64.as_bytes())?;
        let (width, height, pixels) = decode_png(&bytes)?;
        if width != w.width || height != w.height {
            return Err(ImageError::DimensionClaim {
                declared_w: w.width,
                declared_h: w.height,
                actual_w: width,
                actual_h: height,
            });
        }
        ImageRecord::new(
            width,
            height,
            pixels,
            w.source,
            Provenance {
                id: w.id,
                identity_id: w.identity_id,
                seed: w.seed,
                parent_id: w.parent_id,
                prompt: w.prompt,
                strength: w.strength,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov(id: &str) -> Provenance {
        Provenance { id: id.into(), identity_id: "x".into(), ..Default::default() }
    }

    #[test]
    fn rejects_empty_and_short_buffers() {
        assert!(matches!(
            ImageRecord::new(0, 1, vec![], ImageSource::Curated, prov("a")),
            Err(ImageError::EmptyDimensions { .. })
        ));
        assert!(matches!(
            ImageRecord::new(2, 1, vec![0; 5], ImageSource::Curated, prov("a")),
            Err(ImageError::BufferSize { expected: 6, .. })
        ));
    }

    #[test]
    fn edited_requires_parent() {
        let err = ImageRecord::new(1, 1, vec![1, 2, 3], ImageSource::Edited, prov("e")).unwrap_err();
        assert!(matches!(err, ImageError::MissingParent { .. }));
    }

    #[test]
    fn png_round_trip_preserves_pixels() {
        let pixels: Vec<u8> = (0..4 * 3 * 3).map(|v| (v * 7) as u8).collect();
        let img = ImageRecord::new(4, 3, pixels.clone(), ImageSource::Curated, prov("p")).unwrap();
        let back = ImageRecord::from_png(&img.to_png().unwrap(), ImageSource::Curated, prov("p")).unwrap();
        assert_eq!(back.pixels(), &pixels[..]);
        assert_eq!((back.width(), back.height()), (4, 3));
    }

    #[test]
    fn wire_json_round_trip() {
        let img = ImageRecord::filled(3, 2, [10, 20, 30], prov("w")).unwrap();
        let json = serde_json::to_string(&img).unwrap();
        assert!(json.contains("\"png_base64\""));
        let back: ImageRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn crop_extracts_region() {
        let pixels: Vec<u8> = (0..3 * 3).flat_map(|i| [i as u8, 0, 0]).collect();
        let img = ImageRecord::new(3, 3, pixels, ImageSource::Curated, prov("c")).unwrap();
        let c = img.crop(CropRect { x: 1, y: 1, width: 2, height: 2 }).unwrap();
        let reds: Vec<u8> = (0..4).map(|i| c.rgb_at(i)[0]).collect();
        assert_eq!(reds, vec![4, 5, 7, 8]);
        assert!(img.crop(CropRect { x: 2, y: 0, width: 2, height: 1 }).is_err());
    }
}
