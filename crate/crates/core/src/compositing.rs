//! Average faces: the per-channel mean of a set of pre-aligned images.

use thiserror::Error;

use crate::colorimetry::RgbRaster;
use crate::image::{encode_png, ImageError, ImageRecord, ImageSource, Provenance};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompositeError {
    #[error("cannot average an empty image set")]
    EmptyInput,
    #[error("image {id} is {actual_w}x{actual_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch { id: String, expected_w: u32, expected_h: u32, actual_w: u32, actual_h: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageFace<T> {
    width: u32,
    height: u32,
    /// Row-major RGB means on the 0..=255 scale.
    pixels: Vec<T>,
    /// Member ids, sorted so the value does not depend on input order.
    member_ids: Vec<String>,
}

impl<T: Scalar> AverageFace<T> {
    pub fn n_images(&self) -> usize {
        self.member_ids.len()
    }

    pub fn member_ids(&self) -> &[String] {
        &self.member_ids
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    /// Rounds to the nearest 8-bit value. Only used for export.
    pub fn quantize(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| v.round().max(T::zero()).min(T::lit(255.0)).to_u8().unwrap_or(0)).collect()
    }

    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        encode_png(self.width, self.height, &self.quantize())
    }

    pub fn to_image(&self, id: &str, identity_id: &str) -> Result<ImageRecord, ImageError> {
        ImageRecord::new(
            self.width,
            self.height,
            self.quantize(),
            ImageSource::Curated,
            Provenance { id: id.into(), identity_id: identity_id.into(), ..Default::default() },
        )
    }
}

impl<T: Scalar> RgbRaster<T> for AverageFace<T> {
    fn width(&self) -> u32 {
        self.width
    }

    fn height(&self) -> u32 {
        self.height
    }

    fn rgb(&self, index: usize) -> [T; 3] {
        let o = index * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }
}

/// Per-channel arithmetic mean.
///
/// Channel sums are accumulated as integers, so the result is exactly
/// independent of input order and is only rounded by the final division.
pub fn average_face<'a, T, I>(images: I) -> Result<AverageFace<T>, CompositeError>
where
    T: Scalar,
    I: IntoIterator<Item = &'a ImageRecord>,
{
    let mut iter = images.into_iter();
    let first = iter.next().ok_or(CompositeError::EmptyInput)?;
    let (w, h) = (first.width(), first.height());
    let mut sums: Vec<u64> = first.pixels().iter().map(|&v| v as u64).collect();
    let mut ids = vec![first.id.clone()];
    for img in iter {
        if img.width() != w || img.height() != h {
            return Err(CompositeError::DimensionMismatch {
                id: img.id.clone(),
                expected_w: w,
                expected_h: h,
                actual_w: img.width(),
                actual_h: img.height(),
            });
        }
        for (s, &v) in sums.iter_mut().zip(img.pixels()) {
            *s += v as u64;
        }
        ids.push(img.id.clone());
    }
    let n = T::from_count(ids.len());
    let pixels = sums.into_iter().map(|s| T::from_u64(s).expect("channel sum representable") / n).collect();
    ids.sort();
    Ok(AverageFace { width: w, height: h, pixels, member_ids: ids })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(id: &str, rgb: [u8; 3]) -> ImageRecord {
        ImageRecord::filled(3, 2, rgb, Provenance { id: id.into(), ..Default::default() }).unwrap()
    }

    #[test]
    fn single_image_is_identity() {
        let a = img("a", [10, 200, 33]);
        let face = average_face::<f64, _>([&a]).unwrap();
        let expect: Vec<f64> = a.pixels().iter().map(|&v| v as f64).collect();
        assert_eq!(face.pixels(), &expect[..]);
        assert_eq!(face.quantize(), a.pixels());
        assert_eq!(face.n_images(), 1);
    }

    #[test]
    fn black_and_white_average_to_half() {
        let face = average_face::<f64, _>(&[img("a", [0; 3]), img("b", [255; 3])]).unwrap();
        assert!(face.pixels().iter().all(|&v| v == 127.5));
    }

    #[test]
    fn errors() {
        let none: Vec<ImageRecord> = vec![];
        assert_eq!(average_face::<f64, _>(&none).unwrap_err(), CompositeError::EmptyInput);
        let odd = ImageRecord::filled(2, 2, [0; 3], Provenance { id: "odd".into(), ..Default::default() }).unwrap();
        match average_face::<f64, _>(&[img("a", [1; 3]), odd]).unwrap_err() {
            CompositeError::DimensionMismatch { id, .. } => assert_eq!(id, "odd"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn concatenation_is_mean_of_halves() {
        let x = [img("a", [10, 20, 30]), img("b", [40, 50, 61])];
        let y = [img("c", [200, 1, 7]), img("d", [3, 90, 255])];
        let both: Vec<&ImageRecord> = x.iter().chain(y.iter()).collect();
        let all = average_face::<f64, _>(both).unwrap();
        let fx = average_face::<f64, _>(&x).unwrap();
        let fy = average_face::<f64, _>(&y).unwrap();
        for ((a, p), q) in all.pixels().iter().zip(fx.pixels()).zip(fy.pixels()) {
            assert!((a - (p + q) / 2.0).abs() < 1e-9);
        }
    }
}
