//! Indoor 3D object detection on point clouds.
//!
//! The crate covers the whole inference path of a voting detector with
//! foreground-biased sampling, ray-based grouping around vote clusters and
//! three attention context modules (patch, object and scene level), together
//! with the training losses and a mean-average-precision evaluator.
//!
//! Everything is deterministic: sampling ties break by index, weights are
//! derived from a seed, and parallel stages preserve output order.

pub mod attention;
pub mod check;
pub mod config;
pub mod error;
pub mod eval;
pub mod geom;
pub mod grouping;
pub mod io;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod rays;
pub mod sampling;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use eval::{map_at, Detection, EvalReport};
pub use geom::{AABox, FeatureMatrix, Point3, PointCloud};
pub use nn::MlpWeights;
pub use pipeline::{ablate, run_pipeline, Diagnostics, WeightBundle};
pub use rays::{generate_rays, RayFan};
