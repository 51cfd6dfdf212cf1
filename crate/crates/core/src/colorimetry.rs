//! Skin segmentation in YCbCr and the Individual Typology Angle via CIELAB.
//!
//! Conversions take channel values on the 0..=255 scale. The `u8` entry
//! points cover ordinary images; the `*_channels` variants accept the
//! fractional values found in average faces, so no quantisation happens
//! between compositing and measurement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageRecord;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ColorimetryError {
    #[error("skin coverage {coverage:.4} is below the minimum {min_coverage:.4}")]
    InsufficientSkin { coverage: f64, min_coverage: f64 },
    #[error("mean b* is {mean_b:.4}; the angle is undefined for b* <= 0")]
    UndefinedAngle { mean_b: f64 },
}

/// BT.601 studio-range luma and chroma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ycbcr<T> {
    pub y: T,
    pub cb: T,
    pub cr: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lab<T> {
    pub l: T,
    pub a: T,
    pub b: T,
}

/// Converts 0..=255 channel values to BT.601 studio-range YCbCr.
pub fn ycbcr_from_channels<T: Scalar>(r: T, g: T, b: T) -> Ycbcr<T> {
    let k = T::lit(255.0);
    let (r, g, b) = (r / k, g / k, b / k);
    Ycbcr {
        y: T::lit(16.0) + T::lit(65.481) * r + T::lit(128.553) * g + T::lit(24.966) * b,
        cb: T::lit(128.0) - T::lit(37.797) * r - T::lit(74.203) * g + T::lit(112.0) * b,
        cr: T::lit(128.0) + T::lit(112.0) * r - T::lit(93.786) * g - T::lit(18.214) * b,
    }
}

pub fn rgb_to_ycbcr<T: Scalar>(r: u8, g: u8, b: u8) -> Ycbcr<T> {
    ycbcr_from_channels(T::lit(r as f64), T::lit(g as f64), T::lit(b as f64))
}

// sRGB primaries under D65.
const SRGB_TO_XYZ: [[f64; 3]; 3] =
    [[0.4124564, 0.3575761, 0.1804375], [0.2126729, 0.7151522, 0.0721750], [0.0193339, 0.1191920, 0.9503041]];
const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

#[inline]
fn srgb_to_linear<T: Scalar>(c: T) -> T {
    if c <= T::lit(0.04045) {
        c / T::lit(12.92)
    } else {
        ((c + T::lit(0.055)) / T::lit(1.055)).powf(T::lit(2.4))
    }
}

#[inline]
fn lab_f<T: Scalar>(t: T) -> T {
    let delta = T::lit(6.0 / 29.0);
    if t > delta * delta * delta {
        t.cbrt()
    } else {
        t / (T::lit(3.0) * delta * delta) + T::lit(4.0 / 29.0)
    }
}

/// sRGB (0..=255 channels) to CIELAB under D65 with the 2° observer.
pub fn lab_from_channels<T: Scalar>(r: T, g: T, b: T) -> Lab<T> {
    let k = T::lit(255.0);
    let lin = [srgb_to_linear(r / k), srgb_to_linear(g / k), srgb_to_linear(b / k)];
    let mut xyz = [T::zero(); 3];
    for (row, out) in SRGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = T::lit(row[0]) * lin[0] + T::lit(row[1]) * lin[1] + T::lit(row[2]) * lin[2];
    }
    let fx = lab_f(xyz[0] / T::lit(D65_WHITE[0]));
    let fy = lab_f(xyz[1] / T::lit(D65_WHITE[1]));
    let fz = lab_f(xyz[2] / T::lit(D65_WHITE[2]));
    Lab { l: T::lit(116.0) * fy - T::lit(16.0), a: T::lit(500.0) * (fx - fy), b: T::lit(200.0) * (fy - fz) }
}

pub fn rgb_to_lab<T: Scalar>(r: u8, g: u8, b: u8) -> Lab<T> {
    lab_from_channels(T::lit(r as f64), T::lit(g as f64), T::lit(b as f64))
}

/// Inclusive chroma bounds for the skin classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkinThresholds {
    pub cb_min: f64,
    pub cb_max: f64,
    pub cr_min: f64,
    pub cr_max: f64,
}

impl Default for SkinThresholds {
    fn default() -> Self {
        Self { cb_min: 77.0, cb_max: 127.0, cr_min: 133.0, cr_max: 173.0 }
    }
}

impl SkinThresholds {
    pub fn is_skin<T: Scalar>(&self, c: &Ycbcr<T>) -> bool {
        c.cb >= T::lit(self.cb_min)
            && c.cb <= T::lit(self.cb_max)
            && c.cr >= T::lit(self.cr_min)
            && c.cr <= T::lit(self.cr_max)
    }
}

/// Anything that can hand out RGB pixels on the 0..=255 scale.
pub trait RgbRaster<T: Scalar> {
    fn width(&self) -> u32;
    fn height(&self) -> u32;
    /// Pixel `index` in row-major order.
    fn rgb(&self, index: usize) -> [T; 3];

    fn pixel_count(&self) -> usize {
        self.width() as usize * self.height() as usize
    }
}

impl<T: Scalar> RgbRaster<T> for ImageRecord {
    fn width(&self) -> u32 {
        ImageRecord::width(self)
    }

    fn height(&self) -> u32 {
        ImageRecord::height(self)
    }

    fn rgb(&self, index: usize) -> [T; 3] {
        self.rgb_at(index).map(|c| T::lit(c as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
    pub coverage: f64,
}

impl SkinMask {
    pub fn skin_pixels(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Classifies each pixel independently against the chroma thresholds.
pub fn skin_mask<T: Scalar, R: RgbRaster<T> + ?Sized>(raster: &R, thresholds: &SkinThresholds) -> SkinMask {
    let n = raster.pixel_count();
    let bits: Vec<bool> = (0..n)
        .map(|i| {
            let [r, g, b] = raster.rgb(i);
            thresholds.is_skin(&ycbcr_from_channels(r, g, b))
        })
        .collect();
    let skin = bits.iter().filter(|b| **b).count();
    SkinMask { width: raster.width(), height: raster.height(), bits, coverage: skin as f64 / n as f64 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Fitzpatrick {
    I,
    II,
    III,
    IV,
    V,
    VI,
}

impl Fitzpatrick {
    /// Cut-points: >55 I, >41 II, >28 III, >10 IV, >-30 V, otherwise VI.
    pub fn from_ita<T: Scalar>(degrees: T) -> Self {
        let d = degrees.as_f64();
        if d > 55.0 {
            Fitzpatrick::I
        } else if d > 41.0 {
            Fitzpatrick::II
        } else if d > 28.0 {
            Fitzpatrick::III
        } else if d > 10.0 {
            Fitzpatrick::IV
        } else if d > -30.0 {
            Fitzpatrick::V
        } else {
            Fitzpatrick::VI
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItaMode {
    /// One angle from the mean L* and mean b* of the skin pixels.
    #[default]
    MeanLab,
    /// Mean of per-pixel angles; pixels with b* <= 0 are skipped.
    PerPixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItaOptions {
    pub min_coverage: f64,
    pub mode: ItaMode,
    pub thresholds: SkinThresholds,
}

impl Default for ItaOptions {
    fn default() -> Self {
        Self { min_coverage: 0.01, mode: ItaMode::MeanLab, thresholds: SkinThresholds::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItaResult<T> {
    pub ita_degrees: T,
    pub mean_l: T,
    pub mean_b: T,
    pub skin_coverage: f64,
    pub fitzpatrick: Fitzpatrick,
}

/// `atan((L* - 50) / b*)` in degrees. Non-positive b* is rejected.
pub fn ita_angle<T: Scalar>(mean_l: T, mean_b: T) -> Result<T, ColorimetryError> {
    if mean_b.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(ColorimetryError::UndefinedAngle { mean_b: mean_b.as_f64() });
    }
    Ok(((mean_l - T::lit(50.0)) / mean_b).atan().to_degrees())
}

/// ITA over the skin pixels of `raster` with the default thresholds.
pub fn ita<T: Scalar, R: RgbRaster<T> + ?Sized>(
    raster: &R,
    min_coverage: f64,
) -> Result<ItaResult<T>, ColorimetryError> {
    ita_with(raster, &ItaOptions { min_coverage, ..ItaOptions::default() })
}

pub fn ita_with<T: Scalar, R: RgbRaster<T> + ?Sized>(
    raster: &R,
    opts: &ItaOptions,
) -> Result<ItaResult<T>, ColorimetryError> {
    let mask = skin_mask(raster, &opts.thresholds);
    if mask.coverage < opts.min_coverage || mask.skin_pixels() == 0 {
        return Err(ColorimetryError::InsufficientSkin { coverage: mask.coverage, min_coverage: opts.min_coverage });
    }
    let labs: Vec<Lab<T>> = mask
        .bits
        .iter()
        .enumerate()
        .filter(|(_, skin)| **skin)
        .map(|(i, _)| {
            let [r, g, b] = raster.rgb(i);
            lab_from_channels(r, g, b)
        })
        .collect();
    let n = T::from_count(labs.len());
    let mean_l = labs.iter().map(|c| c.l).sum::<T>() / n;
    let mean_b = labs.iter().map(|c| c.b).sum::<T>() / n;
    let ita_degrees = match opts.mode {
        ItaMode::MeanLab => ita_angle(mean_l, mean_b)?,
        ItaMode::PerPixel => {
            let angles: Vec<T> = labs.iter().filter_map(|c| ita_angle(c.l, c.b).ok()).collect();
            if angles.is_empty() {
                return Err(ColorimetryError::UndefinedAngle { mean_b: mean_b.as_f64() });
            }
            angles.iter().copied().sum::<T>() / T::from_count(angles.len())
        }
    };
    Ok(ItaResult {
        ita_degrees,
        mean_l,
        mean_b,
        skin_coverage: mask.coverage,
        fitzpatrick: Fitzpatrick::from_ita(ita_degrees),
    })
}

/// Edited minus original; positive means the skin got lighter.
pub fn delta_ita<T: Scalar>(original: &ItaResult<T>, edited: &ItaResult<T>) -> T {
    edited.ita_degrees - original.ita_degrees
}
