//! Closed-form RGB → spectrum estimation, usable in the image or the Haar domain.
//!
//! Both estimators are linear, so they commute with the (linear) Haar transform:
//! unmixing RGB Haar coefficients gives the Haar coefficients of the unmixed spectra.

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::haar::HaarPyramid;
use crate::image::Plane;
use crate::linalg::Dense;
use crate::par::Exec;
use crate::tissue::CameraSensitivity;

/// Largest acceptable condition number of `C Cᵀ` for the minimum-norm solve.
const MAX_GRAM_CONDITION: f64 = 1e14;

/// A fixed linear map from 3-vectors to L-vectors.
pub trait SpectralUnmixer: Sync {
    fn solve_matrix(&self) -> &Dense;

    #[inline]
    fn apply(&self, rgb: &[f64], out: &mut [f64]) {
        self.solve_matrix().apply(rgb, out)
    }

    fn bands(&self) -> usize {
        self.solve_matrix().rows()
    }

    /// Applies the map independently to every pixel of a 3-channel plane.
    fn unmix_plane(&self, rgb: &Plane, exec: Exec) -> Result<Plane> {
        if rgb.channels() != 3 {
            return Err(Error::Argument(format!(
                "unmixing needs 3-channel input, got {}",
                rgb.channels()
            )));
        }
        let l = self.bands();
        let width = rgb.width().max(1);
        let mut out = Plane::zeros(rgb.height(), rgb.width(), l);
        let src = rgb.data();
        exec.for_each_chunk(out.data_mut(), width * l, |row, dst| {
            let base = row * width * 3;
            for (x, spec) in dst.chunks_exact_mut(l).enumerate() {
                self.apply(&src[base + 3 * x..base + 3 * x + 3], spec);
            }
        });
        Ok(out)
    }
}

fn gram(sensitivity: &CameraSensitivity) -> Matrix3<f64> {
    let c = sensitivity.matrix();
    let g = c * c.transpose();
    Matrix3::from_fn(|r, k| g[(r, k)])
}

fn lift(sensitivity: &CameraSensitivity, inv_gram: &Matrix3<f64>) -> Dense {
    let c = sensitivity.matrix();
    let inv = DMatrix::from_fn(3, 3, |r, k| inv_gram[(r, k)]);
    Dense::from_matrix(&(c.transpose() * inv))
}

/// Minimum-norm least-squares inverse `Cᵀ (C Cᵀ)⁻¹`.
///
/// `CᵀC` is L×L with rank 3, so the normal equations are solved in their 3×3
/// dual form; the result is the pseudoinverse of `C`.
#[derive(Debug, Clone)]
pub struct LsqOperator {
    solve: Dense,
}

impl LsqOperator {
    pub fn new(sensitivity: &CameraSensitivity) -> Result<Self> {
        let g = gram(sensitivity);
        let sv = g.singular_values();
        let cond = sv.max() / sv.min();
        if !(cond.is_finite() && cond < MAX_GRAM_CONDITION) {
            return Err(Error::Singular(format!(
                "C Cᵀ has condition number {cond:.3e}"
            )));
        }
        let inv = g
            .cholesky()
            .ok_or_else(|| Error::Singular("C Cᵀ is not positive definite".into()))?
            .inverse();
        Ok(Self {
            solve: lift(sensitivity, &inv),
        })
    }
}

impl SpectralUnmixer for LsqOperator {
    fn solve_matrix(&self) -> &Dense {
        &self.solve
    }
}

/// Tikhonov-regularised inverse `(CᵀC + γI)⁻¹ Cᵀ`, precomputed once per (C, γ).
#[derive(Debug, Clone)]
pub struct TikhonovOperator {
    sensitivity: CameraSensitivity,
    gamma: f64,
    solve: Dense,
}

impl TikhonovOperator {
    pub fn new(sensitivity: &CameraSensitivity, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Argument(format!(
                "Tikhonov gamma must be positive, got {gamma}"
            )));
        }
        // (CᵀC + γI)⁻¹Cᵀ = Cᵀ(CCᵀ + γI)⁻¹
        let g = gram(sensitivity) + Matrix3::identity() * gamma;
        let inv = g
            .cholesky()
            .ok_or_else(|| Error::Singular("C Cᵀ + γI is not positive definite".into()))?
            .inverse();
        Ok(Self {
            sensitivity: sensitivity.clone(),
            gamma,
            solve: lift(sensitivity, &inv),
        })
    }

    /// γ expressed as a fraction of `trace(CᵀC) / L`.
    pub fn with_relative_gamma(sensitivity: &CameraSensitivity, relative: f64) -> Result<Self> {
        let c = sensitivity.matrix();
        let mean_diag = c.iter().map(|v| v * v).sum::<f64>() / sensitivity.bands() as f64;
        Self::new(sensitivity, relative * mean_diag)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sensitivity(&self) -> &CameraSensitivity {
        &self.sensitivity
    }
}

impl SpectralUnmixer for TikhonovOperator {
    fn solve_matrix(&self) -> &Dense {
        &self.solve
    }
}

/// Minimum-norm least-squares spectrum for one RGB triple.
pub fn lsq_unmix(rgb: &[f64; 3], sensitivity: &CameraSensitivity) -> Result<Vec<f64>> {
    let op = LsqOperator::new(sensitivity)?;
    let mut out = vec![0.0; sensitivity.bands()];
    op.apply(rgb, &mut out);
    Ok(out)
}

pub fn tikhonov_unmix(rgb: &Plane, op: &TikhonovOperator, exec: Exec) -> Result<Plane> {
    op.unmix_plane(rgb, exec)
}

/// Unmixes the directional planes of every level of an RGB pyramid.
///
/// Low-pass planes (intermediate and residual) are passed through unchanged.
pub fn unmix_pyramid_directional(
    pyramid: &HaarPyramid,
    op: &dyn SpectralUnmixer,
    exec: Exec,
) -> Result<HaarPyramid> {
    if pyramid.residual_lp.channels() != 3 {
        return Err(Error::Argument(format!(
            "directional unmixing needs an RGB pyramid, got {} channels",
            pyramid.residual_lp.channels()
        )));
    }
    let mut out = pyramid.clone();
    for level in &mut out.levels {
        for d in level.directional_mut() {
            *d = op.unmix_plane(d, exec)?;
        }
    }
    Ok(out)
}
