//! Iterative Bayesian spectral estimator for non-negative (low-pass) RGB data.
//!
//! Each pixel alternates two steps:
//! 1. fit Beer-Lambert concentrations `x = -(ξᵀξ)⁻¹ξᵀ log(Î)`, then form the
//!    expected spectrum `E = exp(-ξx)`;
//! 2. re-estimate the spectrum as the minimiser of
//!    `‖CÎ - y‖² + β‖D₂Î - D₂E‖²`, where `D₂` is the second difference along
//!    wavelength. The prior constrains the *shape* of the spectrum, not its values.
//!
//! The iteration starts from the Tikhonov estimate and stops when the relative
//! change of `x` falls below `rel_tol`.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Plane;
use crate::linalg::{condition_number, Dense};
use crate::par::Exec;
use crate::tissue::{CameraSensitivity, ChromophoreBasis, ConcentrationMap};
use crate::unmix::{SpectralUnmixer, TikhonovOperator};

/// Beyond this the normal matrix of the shape prior is treated as singular.
pub const MAX_PRIOR_CONDITION: f64 = 1e12;

/// Keeps `exp(-ξx)` finite for wildly out-of-range fits.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BayesConfig {
    /// Weight of the second-derivative shape prior.
    pub beta: f64,
    pub max_iters: usize,
    /// Convergence threshold on `‖Δx‖ / ‖x‖`.
    pub rel_tol: f64,
    /// Floor applied to spectra before taking logarithms.
    pub epsilon: f64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            max_iters: 100,
            rel_tol: 1e-4,
            epsilon: 1e-6,
        }
    }
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Argument(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(Error::Argument(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Argument(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Beer-Lambert least-squares fit `x = -(ξᵀξ)⁻¹ ξᵀ log(max(I, ε))`.
#[derive(Debug, Clone)]
pub struct ConcentrationFitter {
    neg_pinv: Dense,
    epsilon: f64,
}

impl ConcentrationFitter {
    pub fn new(basis: &ChromophoreBasis, epsilon: f64) -> Result<Self> {
        let xi = basis.matrix();
        let g = xi.transpose() * xi;
        let g = Matrix3::from_fn(|r, c| g[(r, c)]);
        let inv = g
            .cholesky()
            .ok_or_else(|| Error::Singular("ξᵀξ is not positive definite".into()))?
            .inverse();
        let inv = DMatrix::from_fn(3, 3, |r, c| -inv[(r, c)]);
        Ok(Self {
            neg_pinv: Dense::from_matrix(&(inv * xi.transpose())),
            epsilon,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn fit(&self, spectrum: &[f64]) -> [f64; 3] {
        let mut x = [0.0; 3];
        let mut logs = [0.0; 64];
        if spectrum.len() <= logs.len() {
            for (l, s) in logs.iter_mut().zip(spectrum) {
                *l = s.max(self.epsilon).ln();
            }
            self.neg_pinv.apply(&logs[..spectrum.len()], &mut x);
        } else {
            let logs: Vec<f64> = spectrum.iter().map(|s| s.max(self.epsilon).ln()).collect();
            self.neg_pinv.apply(&logs, &mut x);
        }
        x
    }
}

/// Least-squares Beer-Lambert concentrations (HbO, Hb, offset) of one spectrum.
pub fn fit_concentration(
    spectrum: &[f64],
    basis: &ChromophoreBasis,
    epsilon: f64,
) -> Result<[f64; 3]> {
    if spectrum.len() != basis.bands() {
        return Err(Error::GridMismatch(format!(
            "spectrum has {} bands, basis has {}",
            spectrum.len(),
            basis.bands()
        )));
    }
    Ok(ConcentrationFitter::new(basis, epsilon)?.fit(spectrum))
}

/// Writes `exp(-ξx)` into `out`.
#[inline]
pub fn expected_spectrum_into(x: &[f64; 3], basis: &ChromophoreBasis, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = (-basis.attenuation(j, x))
            .clamp(-MAX_EXPONENT, MAX_EXPONENT)
            .exp();
    }
}

pub fn expected_spectrum(x: &[f64; 3], basis: &ChromophoreBasis) -> Vec<f64> {
    let mut out = vec![0.0; basis.bands()];
    expected_spectrum_into(x, basis, &mut out);
    out
}

/// Second-difference operator, `(L-2) × L`.
pub fn second_difference(bands: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(bands.saturating_sub(2), bands);
    for r in 0..bands.saturating_sub(2) {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    d
}

/// Precomputed closed form of the shape-prior expectation step:
/// `Î = M⁻¹Cᵀ y + M⁻¹βD₂ᵀD₂ E` with `M = CᵀC + βD₂ᵀD₂`.
#[derive(Debug, Clone)]
pub struct ShapePrior {
    data: Dense,
    prior: Dense,
}

impl ShapePrior {
    pub fn new(sensitivity: &CameraSensitivity, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Argument(format!(
                "beta must be positive, got {beta}"
            )));
        }
        let c = sensitivity.matrix();
        let d2 = second_difference(sensitivity.bands());
        let reg = (d2.transpose() * &d2) * beta;
        let m = c.transpose() * c + &reg;
        let condition = condition_number(&m);
        if !(condition.is_finite() && condition < MAX_PRIOR_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
        let lu = m.lu();
        let data = lu
            .solve(&c.transpose())
            .ok_or(Error::IllConditioned { condition })?;
        let prior = lu.solve(&reg).ok_or(Error::IllConditioned { condition })?;
        Ok(Self {
            data: Dense::from_matrix(&data),
            prior: Dense::from_matrix(&prior),
        })
    }

    #[inline]
    pub fn step(&self, rgb: &[f64], expected: &[f64], out: &mut [f64]) {
        self.data.apply(rgb, out);
        self.prior.apply_add(expected, out);
    }
}

/// One expectation step for a single pixel.
pub fn expectation_step(
    rgb: &[f64; 3],
    expected: &[f64],
    sensitivity: &CameraSensitivity,
    cfg: &BayesConfig,
) -> Result<Vec<f64>> {
    if expected.len() != sensitivity.bands() {
        return Err(Error::GridMismatch(format!(
            "expected spectrum has {} bands, sensitivity has {}",
            expected.len(),
            sensitivity.bands()
        )));
    }
    let prior = ShapePrior::new(sensitivity, cfg.beta)?;
    let mut out = vec![0.0; expected.len()];
    prior.step(rgb, expected, &mut out);
    Ok(out)
}

/// Low-pass Haar coefficients of an RGB frame and the accumulated low-pass gain.
#[derive(Debug, Clone)]
pub struct LowPassBlock {
    pub rgb_lp: Plane,
    /// `2ⁿ` for an n-level decomposition; 1 for image-domain pixels.
    pub scale: f64,
}

impl LowPassBlock {
    pub fn new(rgb_lp: Plane, scale: f64) -> Result<Self> {
        if rgb_lp.channels() != 3 {
            return Err(Error::Argument(format!(
                "low-pass block needs 3 channels, got {}",
                rgb_lp.channels()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Argument(format!(
                "low-pass scale must be positive, got {scale}"
            )));
        }
        if rgb_lp.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Argument(
                "low-pass coefficients must be finite and non-negative".into(),
            ));
        }
        Ok(Self { rgb_lp, scale })
    }
}

/// Output of [`BayesEstimator::estimate`].
#[derive(Debug, Clone)]
pub struct LowPassEstimate {
    /// Spectra in the units of the input coefficients (i.e. multiplied back by the scale).
    pub spectra: Plane,
    pub map: ConcentrationMap,
    /// Iterations summed over all pixels.
    pub iterations: usize,
}

/// Per-pixel iterative estimator; immutable and shareable across workers.
#[derive(Debug, Clone)]
pub struct BayesEstimator {
    basis: ChromophoreBasis,
    fitter: ConcentrationFitter,
    prior: ShapePrior,
    init: TikhonovOperator,
    cfg: BayesConfig,
}

impl BayesEstimator {
    pub fn new(
        sensitivity: &CameraSensitivity,
        basis: &ChromophoreBasis,
        cfg: BayesConfig,
        init: TikhonovOperator,
    ) -> Result<Self> {
        cfg.validate()?;
        basis.grid().ensure_compatible(
            sensitivity.grid(),
            "chromophore basis vs camera sensitivity",
        )?;
        init.sensitivity()
            .grid()
            .ensure_compatible(sensitivity.grid(), "initialiser vs camera sensitivity")?;
        Ok(Self {
            basis: basis.clone(),
            fitter: ConcentrationFitter::new(basis, cfg.epsilon)?,
            prior: ShapePrior::new(sensitivity, cfg.beta)?,
            init,
            cfg,
        })
    }

    pub fn config(&self) -> &BayesConfig {
        &self.cfg
    }

    pub fn fitter(&self) -> &ConcentrationFitter {
        &self.fitter
    }

    fn clamp(&self, spectrum: &mut [f64]) {
        let eps = self.cfg.epsilon;
        for v in spectrum.iter_mut() {
            // NaN also maps to epsilon here
            *v = if *v >= eps { *v } else { eps };
        }
    }

    /// Runs the iteration for one RGB triple starting from the Tikhonov estimate.
    ///
    /// `spectrum` receives the final (clamped) spectrum; `scratch` must have the
    /// same length. Returns the concentrations and the number of iterations used.
    pub fn estimate_pixel(
        &self,
        rgb: &[f64],
        spectrum: &mut [f64],
        scratch: &mut [f64],
    ) -> ([f64; 3], usize) {
        self.init.apply(rgb, spectrum);
        self.clamp(spectrum);
        let x0 = self.fitter.fit(spectrum);
        self.iterate_from(rgb, x0, spectrum, scratch)
    }

    /// Runs the iteration from given concentrations instead of the Tikhonov start.
    pub fn iterate_from(
        &self,
        rgb: &[f64],
        x0: [f64; 3],
        spectrum: &mut [f64],
        scratch: &mut [f64],
    ) -> ([f64; 3], usize) {
        let mut x = x0;
        for it in 1..=self.cfg.max_iters {
            expected_spectrum_into(&x, &self.basis, scratch);
            self.prior.step(rgb, scratch, spectrum);
            self.clamp(spectrum);
            let next = self.fitter.fit(spectrum);
            let change = norm3(sub3(next, x));
            x = next;
            // absolute floor so a fixpoint at x = 0 is recognised
            if change <= self.cfg.rel_tol * norm3(x).max(1.0) {
                return (x, it);
            }
        }
        (x, self.cfg.max_iters)
    }

    /// Estimates every pixel of a non-negative block.
    ///
    /// Coefficients are divided by the block scale before the Beer-Lambert fit so
    /// the offset keeps its meaning across decomposition depths.
    pub fn estimate(&self, block: &LowPassBlock, exec: Exec) -> LowPassEstimate {
        let plane = &block.rgb_lp;
        let (h, w) = (plane.height(), plane.width());
        let l = self.basis.bands();
        let mut spectra = Plane::zeros(h, w, l);
        let mut conc = vec![0.0; h * w * 3];
        let src = plane.data();
        let inv_scale = 1.0 / block.scale;
        let row = w.max(1);
        let iterations = exec.zip_chunks_sum(
            spectra.data_mut(),
            row * l,
            &mut conc,
            row * 3,
            |r, spec_row, conc_row| {
                let mut scratch = vec![0.0; l];
                let mut total = 0;
                for (x, (spec, c)) in spec_row
                    .chunks_exact_mut(l)
                    .zip(conc_row.chunks_exact_mut(3))
                    .enumerate()
                {
                    let i = (r * row + x) * 3;
                    let y = [
                        src[i] * inv_scale,
                        src[i + 1] * inv_scale,
                        src[i + 2] * inv_scale,
                    ];
                    let (est, it) = self.estimate_pixel(&y, spec, &mut scratch);
                    c.copy_from_slice(&est);
                    spec.iter_mut().for_each(|v| *v *= block.scale);
                    total += it;
                }
                total
            },
        );
        let map = ConcentrationMap::from_plane(&Plane::from_vec(h, w, 3, conc).expect("sized"))
            .expect("3 channels");
        LowPassEstimate {
            spectra,
            map,
            iterations,
        }
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm3(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Convenience wrapper building a [`BayesEstimator`] for a single block.
pub fn estimate_lowpass(
    block: &LowPassBlock,
    sensitivity: &CameraSensitivity,
    basis: &ChromophoreBasis,
    cfg: &BayesConfig,
    init: &TikhonovOperator,
    exec: Exec,
) -> Result<LowPassEstimate> {
    let est = BayesEstimator::new(sensitivity, basis, *cfg, init.clone())?;
    Ok(est.estimate(block, exec))
}
