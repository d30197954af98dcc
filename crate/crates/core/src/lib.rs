//! Rank-based radiometric calibration.
//!
//! Recovers a camera's rendering pipeline from corresponding RAW and rendered
//! pixel values: a 3×3 colour matrix estimated from rank-order constraints,
//! three monotone polynomial tone curves and a small lattice LUT for the
//! residual gamut correction. The fitted [`PipelineModel`] maps RAW to
//! rendered values and back.

pub mod dataset;
pub mod gamut;
pub mod isotonic;
pub mod model;
pub mod model_io;
pub mod monotone;
pub mod pipeline;
pub mod qp;
pub mod rank;
pub mod simulator;

pub use model::{
    parameter_count, Channel, ColorMatrix, CurveDirection, Lattice3, PipelineModel, PixelPair, PixelPairSet, Rgb,
    ToneCurve,
};
pub use model_io::{deserialize_model, serialize_model};
pub use pipeline::{apply_backward, apply_forward, calibrate, CalibrationConfig};
