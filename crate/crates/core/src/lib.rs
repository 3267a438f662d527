//! Low-rank SIFT core: affine-invariant local features built by rectifying
//! image patches to their low-rank form, plus vocabulary-tree retrieval.
//!
//! The crate is `no_std` (alloc required). All IO, file formats and the CLI
//! live in the companion `lrsift` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod features;
pub mod geo;
pub mod harris;
pub mod image;
pub mod integral;
pub mod rpca;
pub mod sift;
pub mod synth;
pub mod tilt;
pub mod util;
pub mod vocab;
pub mod warp;

pub use error::Error;
pub use features::{Feature, FeatureSet, PipelineConfig};
pub use geo::GeoTag;
pub use harris::{HarrisParams, Keypoint};
pub use image::Image;
pub use integral::LowRankIntegralMap;
pub use tilt::{TiltParams, TiltProblem, TiltSolution};
pub use vocab::{DatabaseIndex, VocabTree};
pub use warp::{AffineWarp, ProjectiveWarp};
