//! Sexually-explicit content classification toolkit.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod datakit;
pub mod evalkit;
pub mod error;
pub mod fsutil;
pub mod geometry;
pub mod hloss;
pub mod pipelines;
pub mod scalar;
pub mod taxonomy;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type BBoxF64 = geometry::BBox<f64>;
pub type BBoxF32 = geometry::BBox<f32>;
pub type Prob3F64 = hloss::Prob3<f64>;
pub type Prob3F32 = hloss::Prob3<f32>;
pub type Logits3F64 = hloss::Logits3<f64>;
pub type Logits3F32 = hloss::Logits3<f32>;
pub type ConvNetF64 = training::ConvNet<f64>;
pub type ConvNetF32 = training::ConvNet<f32>;
