//! Propagation rounding for Unique Games on regular expanders.
//!
//! The pipeline: build a [`graphs::Graph`], plant a [`instances::UgInstance`],
//! embed a feasible [`sdp::SdpSolution`], normalize it
//! ([`normalize::normalize`]), and round it ([`rounding::Rounder`]). Every
//! quantitative step has an independent check alongside it: exact expansion
//! versus the spectral gap, the Hungarian EMD versus permutation enumeration,
//! rounding versus the exhaustive optimum in [`oracle`].

pub mod emd;
pub mod error;
pub mod fmt;
pub mod graphs;
pub mod instances;
pub mod normalize;
pub mod oracle;
pub mod rounding;
pub mod sdp;

pub use error::{Error, Result};
pub use graphs::{Graph, SpectralReport};
pub use instances::{Assignment, UgInstance};
pub use normalize::NormalizedSolution;
pub use rounding::{Fallback, Rounder, RoundingOutcome, RoundingParams};
pub use sdp::SdpSolution;
