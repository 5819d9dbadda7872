//! End-to-end frame estimator.
//!
//! In hybrid mode a frame is Haar-decomposed, the directional coefficients of every
//! level are unmixed with the Tikhonov operator, the coarsest low-pass plane goes
//! through the Bayesian estimator, and the resulting spectral pyramid is inverted.
//! Concentrations are then fitted per full-resolution pixel. The log in the
//! Beer-Lambert fit does not commute with signed directional coefficients, so
//! fitting always happens after recomposition.

use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bayes::{BayesConfig, BayesEstimator, ConcentrationFitter, LowPassBlock};
use crate::error::{Error, Result};
use crate::haar;
use crate::image::{Plane, RgbImage, SpectralCube};
use crate::par::Exec;
use crate::tissue::{CameraSensitivity, ChromophoreBasis, ConcentrationMap};
use crate::unmix::{unmix_pyramid_directional, SpectralUnmixer, TikhonovOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Tikhonov on directional coefficients, Bayes on the residual low-pass.
    Hybrid,
    /// Tikhonov on every coefficient.
    TikhonovOnly,
    /// Bayes on every full-resolution pixel.
    BayesOnly,
    /// Concentrations fitted directly from a spectral cube (reference path).
    DirectMsi,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::TikhonovOnly => "tikhonov",
            Mode::BayesOnly => "bayes",
            Mode::DirectMsi => "direct",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hybrid" => Ok(Mode::Hybrid),
            "tikhonov" | "tikhonov_only" => Ok(Mode::TikhonovOnly),
            "bayes" | "bayes_only" => Ok(Mode::BayesOnly),
            "direct" | "direct_msi" | "reference" => Ok(Mode::DirectMsi),
            other => Err(Error::Argument(format!(
                "unknown mode `{other}` (hybrid, tikhonov, bayes, direct)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// 1 for the single-level variant, 3 for the three-level one.
    pub n_levels: usize,
    /// Tikhonov γ as a fraction of `trace(CᵀC) / L`.
    pub tikhonov_gamma: f64,
    pub bayes: BayesConfig,
    pub mode: Mode,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_levels: 1,
            tikhonov_gamma: 1e-3,
            bayes: BayesConfig::default(),
            mode: Mode::Hybrid,
            exec: Exec::Parallel,
        }
    }
}

/// Instrumentation collected while estimating one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameStats {
    /// Coefficients (pixels) routed through the Bayesian estimator.
    pub bayes_coefficients: usize,
    /// Coefficients unmixed by the Tikhonov operator.
    pub tikhonov_coefficients: usize,
    /// Bayesian iterations summed over all coefficients.
    pub bayes_iterations: usize,
    /// Wall time including decomposition and recomposition.
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct FrameEstimate {
    pub cube: SpectralCube,
    pub map: ConcentrationMap,
    pub stats: FrameStats,
}

/// Immutable estimator; share freely across streams and threads.
#[derive(Debug, Clone)]
pub struct Pipeline {
    sensitivity: CameraSensitivity,
    basis: ChromophoreBasis,
    cfg: PipelineConfig,
    tikhonov: TikhonovOperator,
    bayes: BayesEstimator,
    fitter: ConcentrationFitter,
}

impl Pipeline {
    pub fn new(
        sensitivity: &CameraSensitivity,
        basis: &ChromophoreBasis,
        cfg: PipelineConfig,
    ) -> Result<Self> {
        basis.grid().ensure_compatible(
            sensitivity.grid(),
            "chromophore basis vs camera sensitivity",
        )?;
        if cfg.n_levels == 0 || cfg.n_levels > haar::MAX_LEVELS {
            return Err(Error::Argument(format!(
                "levels must be in 1..={}, got {}",
                haar::MAX_LEVELS,
                cfg.n_levels
            )));
        }
        let tikhonov = TikhonovOperator::with_relative_gamma(sensitivity, cfg.tikhonov_gamma)?;
        let bayes = BayesEstimator::new(sensitivity, basis, cfg.bayes, tikhonov.clone())?;
        Ok(Self {
            sensitivity: sensitivity.clone(),
            basis: basis.clone(),
            fitter: ConcentrationFitter::new(basis, cfg.bayes.epsilon)?,
            cfg,
            tikhonov,
            bayes,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn sensitivity(&self) -> &CameraSensitivity {
        &self.sensitivity
    }

    pub fn basis(&self) -> &ChromophoreBasis {
        &self.basis
    }

    pub fn tikhonov(&self) -> &TikhonovOperator {
        &self.tikhonov
    }

    pub fn bayes(&self) -> &BayesEstimator {
        &self.bayes
    }

    /// Fits (HbO, Hb, offset) for every spectrum of a cube, clamping at epsilon.
    pub fn fit_cube(&self, cube: &Plane) -> Result<ConcentrationMap> {
        let l = self.basis.bands();
        if cube.channels() != l {
            return Err(Error::GridMismatch(format!(
                "cube has {} bands, basis has {l}",
                cube.channels()
            )));
        }
        let (h, w) = (cube.height(), cube.width());
        let mut out = vec![0.0; h * w * 3];
        let src = cube.data();
        let row = w.max(1);
        self.cfg.exec.for_each_chunk(&mut out, row * 3, |r, dst| {
            for (x, c) in dst.chunks_exact_mut(3).enumerate() {
                let i = (r * row + x) * l;
                c.copy_from_slice(&self.fitter.fit(&src[i..i + l]));
            }
        });
        ConcentrationMap::from_plane(&Plane::from_vec(h, w, 3, out)?)
    }

    /// Reference path: concentrations straight from measured spectra.
    pub fn estimate_msi(&self, cube: &SpectralCube) -> Result<ConcentrationMap> {
        cube.grid()
            .ensure_compatible(self.basis.grid(), "cube vs chromophore basis")?;
        self.fit_cube(cube.plane())
    }

    pub fn estimate_frame(&self, rgb: &RgbImage) -> Result<FrameEstimate> {
        let start = Instant::now();
        let exec = self.cfg.exec;
        let grid = *self.sensitivity.grid();
        let (cube, map, mut stats) = match self.cfg.mode {
            Mode::Hybrid => {
                let n = self.cfg.n_levels;
                let min = 1usize << n;
                if rgb.height() < min || rgb.width() < min {
                    return Err(Error::Argument(format!(
                        "{}x{} frame is smaller than 2^{n} = {min} in at least one dimension",
                        rgb.height(),
                        rgb.width()
                    )));
                }
                let pyramid = haar::forward(rgb.plane(), n, exec)?;
                let mut spectral = unmix_pyramid_directional(&pyramid, &self.tikhonov, exec)?;
                let block = LowPassBlock::new(pyramid.residual_lp, min as f64)?;
                let est = self.bayes.estimate(&block, exec);
                spectral.residual_lp = est.spectra;
                let cube = haar::inverse(&spectral, exec)?;
                let map = self.fit_cube(&cube)?;
                let stats = FrameStats {
                    bayes_coefficients: spectral.residual_lp.pixels(),
                    tikhonov_coefficients: spectral.levels.iter().map(|l| 3 * l.dh.pixels()).sum(),
                    bayes_iterations: est.iterations,
                    elapsed: Duration::ZERO,
                };
                (cube, map, stats)
            }
            Mode::TikhonovOnly => {
                let mut pyramid = haar::forward(rgb.plane(), self.cfg.n_levels, exec)?;
                let total = pyramid.coefficient_count();
                for level in &mut pyramid.levels {
                    for d in level.directional_mut() {
                        *d = self.tikhonov.unmix_plane(d, exec)?;
                    }
                }
                pyramid.residual_lp = self.tikhonov.unmix_plane(&pyramid.residual_lp, exec)?;
                let cube = haar::inverse(&pyramid, exec)?;
                let map = self.fit_cube(&cube)?;
                (
                    cube,
                    map,
                    FrameStats {
                        tikhonov_coefficients: total,
                        ..Default::default()
                    },
                )
            }
            Mode::BayesOnly => {
                let block = LowPassBlock::new(rgb.plane().clone(), 1.0)?;
                let est = self.bayes.estimate(&block, exec);
                let stats = FrameStats {
                    bayes_coefficients: rgb.plane().pixels(),
                    bayes_iterations: est.iterations,
                    ..Default::default()
                };
                (est.spectra, est.map, stats)
            }
            Mode::DirectMsi => {
                return Err(Error::Argument(
                    "direct mode estimates from a spectral cube, not an RGB frame".into(),
                ))
            }
        };
        stats.elapsed = start.elapsed();
        Ok(FrameEstimate {
            cube: SpectralCube::new(grid, cube)?,
            map,
            stats,
        })
    }

    /// Lazily estimates a stream of equally sized frames.
    pub fn estimate_sequence<I>(&self, frames: I) -> SequenceEstimates<'_, I::IntoIter>
    where
        I: IntoIterator<Item = RgbImage>,
    {
        SequenceEstimates {
            pipeline: self,
            frames: frames.into_iter(),
            dims: None,
            done: false,
        }
    }
}

/// Iterator returned by [`Pipeline::estimate_sequence`]; stops after the first error.
pub struct SequenceEstimates<'a, I> {
    pipeline: &'a Pipeline,
    frames: I,
    dims: Option<(usize, usize)>,
    done: bool,
}

impl<I: Iterator<Item = RgbImage>> Iterator for SequenceEstimates<'_, I> {
    type Item = Result<FrameEstimate>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let frame = self.frames.next()?;
        let dims = (frame.height(), frame.width());
        match self.dims {
            None => self.dims = Some(dims),
            Some(expected) if expected != dims => {
                self.done = true;
                return Some(Err(Error::Stream(format!(
                    "frame size changed from {}x{} to {}x{}",
                    expected.0, expected.1, dims.0, dims.1
                ))));
            }
            Some(_) => {}
        }
        let out = self.pipeline.estimate_frame(&frame);
        if out.is_err() {
            self.done = true;
        }
        Some(out)
    }
}
