//! Lip-sync deepfake detection from mouth-region inconsistencies.
//!
//! The pipeline picks a block of adjacent open-mouth frames plus a few
//! distant frames with a matching mouth pose ([`selector`]), encodes the RGB
//! crops and their frame differences with a two-branch vision temporal
//! transformer fused by cross-attention ([`mstie`]), and trains with a
//! classification loss plus an SSIM-based inconsistency loss ([`losses`]).
//! [`harness`] trains and evaluates, [`localize`] scores one-second segments.

pub mod autograd;
pub mod ingest;
pub mod landmarks;
pub mod selector;
pub mod losses;
pub mod mstie;
pub mod harness;
pub mod localize;
