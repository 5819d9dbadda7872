//! Haemoglobin concentration maps (HbO, Hb, THb, SatO₂) from linear RGB frames.
//!
//! Frames are Haar-decomposed; directional coefficients are unmixed to spectra
//! with a precomputed Tikhonov operator while the coarse low-pass plane goes
//! through an iterative Bayesian estimator with a spectral shape prior. The
//! spectral pyramid is then recomposed and Beer-Lambert concentrations are fitted
//! per pixel.
//!
//! ```
//! use haemocam::{fixtures, synth, Pipeline, PipelineConfig, WavelengthGrid, Exec};
//!
//! let grid = WavelengthGrid::default();
//! let camera = fixtures::camera_sensitivity(grid).unwrap();
//! let basis = fixtures::chromophore_basis(grid).unwrap();
//! let truth = synth::PhantomSpec::uniform(8, 8, 40.0, 40.0).truth().unwrap();
//! let cube = synth::forward_msi(&truth, &basis, Exec::Sequential);
//! let rgb = synth::synthesize_rgb(&cube, &camera, 1.0, Exec::Sequential).unwrap();
//!
//! let pipeline = Pipeline::new(&camera, &basis, PipelineConfig::default()).unwrap();
//! let est = pipeline.estimate_frame(&rgb).unwrap();
//! assert!((est.map.thb_at(0) - 80.0).abs() < 0.8);
//! ```

pub mod bayes;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod haar;
pub mod image;
pub mod io;
mod linalg;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod timeseries;
pub mod tissue;
pub mod unmix;

pub use bayes::{BayesConfig, BayesEstimator, LowPassBlock};
pub use error::{Error, Result};
pub use grid::{resample_to_grid, WavelengthGrid};
pub use haar::{HaarLevel, HaarPyramid};
pub use image::{Plane, RgbImage, SpectralCube};
pub use par::Exec;
pub use pipeline::{FrameEstimate, FrameStats, Mode, Pipeline, PipelineConfig};
pub use tissue::{CameraSensitivity, ChromophoreBasis, ConcentrationMap};
pub use unmix::{LsqOperator, SpectralUnmixer, TikhonovOperator};
