//! Measurement chain for auditing text-to-image models for social bias.
//!
//! The crate is pure: no I/O beyond manifest loading and PNG coding. Model
//! calls live behind the wire schema in [`protocol`]; orchestration lives in
//! the `biasprobe` crate.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below pin the `f64` instantiations used for reporting.

pub mod colorimetry;
pub mod compositing;
pub mod image;
pub mod manifest;
pub mod metrics;
pub mod protocol;
pub mod scalar;
pub mod seeds;
pub mod tables;

pub use colorimetry::{
    delta_ita, ita, ita_angle, ita_with, rgb_to_lab, rgb_to_ycbcr, skin_mask, ColorimetryError, Fitzpatrick, ItaMode,
    ItaOptions, ItaResult, Lab, RgbRaster, SkinMask, SkinThresholds, Ycbcr,
};
pub use compositing::{average_face, AverageFace, CompositeError};
pub use image::{CropRect, ImageError, ImageRecord, ImageSource, Provenance, WireImage};
pub use manifest::{
    builtin_profession_sets, load_manifest, render_prompt, ConceptSpec, Gender, ManifestError, ProfessionSets,
    PromptError, PromptTemplate, RunManifest, SocialIdentity,
};
pub use metrics::{
    association_score, differential_association, flip_rate, gender_accuracy, significant_comparisons, Choice,
    Indicator, MetricsError, PairFraction, PairwiseDecision,
};
pub use scalar::Scalar;
pub use tables::{build_aggregates, AccuracyRow, Aggregates, AssociationRow, AssociationTable, EditAuditRow, Tier};

pub type Lab64 = Lab<f64>;
pub type Lab32 = Lab<f32>;
pub type Ycbcr64 = Ycbcr<f64>;
pub type Ycbcr32 = Ycbcr<f32>;
pub type Ita64 = ItaResult<f64>;
pub type Ita32 = ItaResult<f32>;
pub type AverageFace64 = AverageFace<f64>;
pub type AverageFace32 = AverageFace<f32>;
pub type Decision64 = PairwiseDecision<f64>;
pub type PairFraction64 = PairFraction<f64>;
