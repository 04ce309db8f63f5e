//! Change-detection question answering and grounding (CDQAG) toolkit.
//!
//! The crate turns pairs of semantic land-cover masks into
//! `{question, answer, mask}` triplets and scores predicted answers against
//! them:
//!
//! - [`raster`] reads PGM class masks and encodes binary grounding masks as
//!   run-length counts.
//! - [`change`] builds the class transition matrix of a mask pair and the
//!   changed-pixel masks derived from it.
//! - [`triplet`] implements the eight answer rules, the question template
//!   bank, dataset generation, splitting and statistics.
//! - [`metrics`] computes AA/OA for textual answers and mIoU/oIoU for masks.
//! - [`rng`] is the seeded generator every random choice flows through.

pub mod change;
pub mod error;
pub mod metrics;
pub mod raster;
pub mod rng;
pub mod triplet;

pub use error::{Error, Result};
