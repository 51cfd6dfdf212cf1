//! Bias-audit pipelines for text-to-image models.
//!
//! The edit audit ([`edit_audit`]) measures gender flips and skin-tone
//! drift under text-guided editing; the classification audit
//! ([`classify_audit`]) measures profession associations with a diffusion
//! model used as a zero-shot classifier. Both write append-only ledgers
//! into a run directory ([`layout`]) and derive every reported number by
//! replaying them ([`report`]).

pub mod classify_audit;
pub mod cli;
pub mod dataset;
pub mod edit_audit;
pub mod error;
pub mod layout;
pub mod ledger;
pub mod report;
pub mod svg;

pub use error::AuditError;
pub use layout::RunDir;
