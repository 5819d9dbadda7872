//! Ground-truth phantoms: concentration maps, Beer-Lambert cubes, RGB synthesis,
//! reflectance noise and pulsatile sequences.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bayes::expected_spectrum_into;
use crate::error::{Error, Result};
use crate::image::{Plane, RgbImage, SpectralCube};
use crate::par::Exec;
use crate::tissue::{CameraSensitivity, ChromophoreBasis, ConcentrationMap};

/// Reflectance floor after noise injection.
pub const NOISE_FLOOR: f64 = 1e-6;

/// Isotropic Gaussian concentration feature added on top of the background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub hbo: f64,
    pub hb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Illumination {
    Constant(f64),
    /// Row-major, one value per pixel.
    Plane(Vec<f64>),
}

impl Default for Illumination {
    fn default() -> Self {
        Illumination::Constant(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    /// (HbO, Hb) in g/litre.
    pub background: (f64, f64),
    #[serde(default)]
    pub blobs: Vec<Blob>,
    #[serde(default)]
    pub illumination_offset: Illumination,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PhantomSpec {
    pub fn uniform(height: usize, width: usize, hbo: f64, hb: f64) -> Self {
        Self {
            height,
            width,
            background: (hbo, hb),
            blobs: Vec::new(),
            illumination_offset: Illumination::Constant(0.0),
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    /// Randomised tissue-like scene: background 40/40 g/litre, a few broad perfusion
    /// blobs, small vessel-like blobs (about 60 per 512×512) and a diagonal
    /// illumination offset rising from 0 to 0.2.
    pub fn tissue(height: usize, width: usize, seed: u64, noise_sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let short = height.min(width) as f64;
        let mut blobs = Vec::new();
        for _ in 0..8 {
            blobs.push(Blob {
                x: rng.gen_range(0.0..width as f64),
                y: rng.gen_range(0.0..height as f64),
                radius: rng.gen_range(0.06..0.24) * short,
                hbo: rng.gen_range(0.0..30.0),
                hb: rng.gen_range(0.0..30.0),
            });
        }
        let vessels = ((60.0 * (height * width) as f64 / (512.0 * 512.0)).round() as usize).max(1);
        for _ in 0..vessels {
            blobs.push(Blob {
                x: rng.gen_range(0.0..width as f64),
                y: rng.gen_range(0.0..height as f64),
                radius: rng.gen_range(1.5..4.0),
                hbo: rng.gen_range(0.0..60.0),
                hb: rng.gen_range(0.0..60.0),
            });
        }
        let denom = (height + width).saturating_sub(2).max(1) as f64;
        let offset = (0..height)
            .flat_map(|y| (0..width).map(move |x| 0.2 * (x + y) as f64 / denom))
            .collect();
        Self {
            height,
            width,
            background: (40.0, 40.0),
            blobs,
            illumination_offset: Illumination::Plane(offset),
            noise_sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Argument(
                "phantom must have at least one pixel".into(),
            ));
        }
        let (bo, b) = self.background;
        let neg = |v: f64| !(v.is_finite() && v >= 0.0);
        if neg(bo) || neg(b) || self.blobs.iter().any(|bl| neg(bl.hbo) || neg(bl.hb)) {
            return Err(Error::Argument(
                "phantom concentrations must be non-negative".into(),
            ));
        }
        if self
            .blobs
            .iter()
            .any(|bl| !(bl.radius > 0.0 && bl.x.is_finite() && bl.y.is_finite()))
        {
            return Err(Error::Argument(
                "blob radius must be positive and centres finite".into(),
            ));
        }
        if neg(self.noise_sigma) {
            return Err(Error::Argument("noise sigma must be non-negative".into()));
        }
        match &self.illumination_offset {
            Illumination::Constant(v) if !v.is_finite() => {
                return Err(Error::Argument("illumination offset must be finite".into()))
            }
            Illumination::Plane(p)
                if p.len() != self.height * self.width || p.iter().any(|v| !v.is_finite()) =>
            {
                return Err(Error::Argument(format!(
                    "illumination plane needs {} finite values",
                    self.height * self.width
                )))
            }
            _ => {}
        }
        Ok(())
    }

    /// Ground-truth concentration map.
    pub fn truth(&self) -> Result<ConcentrationMap> {
        self.validate()?;
        let (h, w) = (self.height, self.width);
        let mut map = ConcentrationMap::constant(h, w, [self.background.0, self.background.1, 0.0]);
        for blob in &self.blobs {
            let reach = (4.0 * blob.radius).ceil();
            let y0 = (blob.y - reach).floor().max(0.0) as usize;
            let y1 = ((blob.y + reach).ceil().max(0.0) as usize).min(h);
            let x0 = (blob.x - reach).floor().max(0.0) as usize;
            let x1 = ((blob.x + reach).ceil().max(0.0) as usize).min(w);
            let inv = 1.0 / (2.0 * blob.radius * blob.radius);
            for y in y0..y1 {
                for x in x0..x1 {
                    let d2 = (x as f64 - blob.x).powi(2) + (y as f64 - blob.y).powi(2);
                    let g = (-d2 * inv).exp();
                    let i = y * w + x;
                    map.hbo[i] += blob.hbo * g;
                    map.hb[i] += blob.hb * g;
                }
            }
        }
        match &self.illumination_offset {
            Illumination::Constant(v) => map.offset.iter_mut().for_each(|o| *o = *v),
            Illumination::Plane(p) => map.offset.copy_from_slice(p),
        }
        Ok(map)
    }
}

/// `I(λ) = exp(-ξ(λ)·x)` at every pixel.
pub fn forward_msi(truth: &ConcentrationMap, basis: &ChromophoreBasis, exec: Exec) -> SpectralCube {
    let l = basis.bands();
    let (h, w) = (truth.height(), truth.width());
    let mut plane = Plane::zeros(h, w, l);
    let row = w.max(1);
    exec.for_each_chunk(plane.data_mut(), row * l, |r, dst| {
        for (x, spec) in dst.chunks_exact_mut(l).enumerate() {
            expected_spectrum_into(&truth.get(r * row + x), basis, spec);
        }
    });
    SpectralCube::new(*basis.grid(), plane).expect("forward model is finite")
}

/// Adds i.i.d. Gaussian noise to every reflectance sample and clamps at [`NOISE_FLOOR`].
pub fn add_noise(cube: &mut SpectralCube, sigma: f64, seed: u64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Argument(format!(
            "noise sigma must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in cube.plane_mut().data_mut() {
        *v = (*v + normal.sample(&mut rng)).max(NOISE_FLOOR);
    }
    Ok(())
}

/// `y = exposure · C · I` per pixel.
pub fn synthesize_rgb(
    cube: &SpectralCube,
    sensitivity: &CameraSensitivity,
    exposure: f64,
    exec: Exec,
) -> Result<RgbImage> {
    cube.grid()
        .ensure_compatible(sensitivity.grid(), "cube vs camera sensitivity")?;
    if !(exposure.is_finite() && exposure > 0.0) {
        return Err(Error::Argument(format!(
            "exposure must be positive, got {exposure}"
        )));
    }
    let l = cube.bands();
    let (h, w) = (cube.height(), cube.width());
    let mut out = Plane::zeros(h, w, 3);
    let src = cube.plane().data();
    let row = w.max(1);
    exec.for_each_chunk(out.data_mut(), row * 3, |r, dst| {
        for (x, px) in dst.chunks_exact_mut(3).enumerate() {
            let i = (r * row + x) * l;
            let y = sensitivity.project(&src[i..i + l]);
            for k in 0..3 {
                px[k] = exposure * y[k];
            }
        }
    });
    RgbImage::new(out)
}

/// A rendered phantom: truth, noisy spectral cube and the RGB view of that cube.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub truth: ConcentrationMap,
    pub cube: SpectralCube,
    pub rgb: RgbImage,
}

pub fn render_phantom(
    spec: &PhantomSpec,
    sensitivity: &CameraSensitivity,
    basis: &ChromophoreBasis,
    exposure: f64,
    exec: Exec,
) -> Result<Phantom> {
    let truth = spec.truth()?;
    let mut cube = forward_msi(&truth, basis, exec);
    add_noise(&mut cube, spec.noise_sigma, spec.seed)?;
    let rgb = synthesize_rgb(&cube, sensitivity, exposure, exec)?;
    Ok(Phantom { truth, cube, rgb })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    pub fps: f64,
    pub duration_s: f64,
    pub pulse_hz: f64,
    /// Fractional THb modulation depth.
    pub amplitude: f64,
}

impl Default for PulseParams {
    fn default() -> Self {
        Self {
            fps: 25.0,
            duration_s: 10.0,
            pulse_hz: 1.25,
            amplitude: 0.05,
        }
    }
}

impl PulseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite()
            && self.fps > 0.0
            && self.duration_s.is_finite()
            && self.duration_s > 0.0)
        {
            return Err(Error::Argument("fps and duration must be positive".into()));
        }
        if !(self.pulse_hz > 0.0 && self.pulse_hz < self.fps / 2.0) {
            return Err(Error::Argument(format!(
                "pulse frequency {} Hz must lie in (0, fps/2 = {} Hz)",
                self.pulse_hz,
                self.fps / 2.0
            )));
        }
        if !(self.amplitude.is_finite() && (0.0..1.0).contains(&self.amplitude)) {
            return Err(Error::Argument(format!(
                "amplitude must lie in [0, 1), got {}",
                self.amplitude
            )));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    /// THb multiplier of frame `t`.
    pub fn modulation(&self, t: usize) -> f64 {
        1.0 + self.amplitude * (2.0 * PI * self.pulse_hz * t as f64 / self.fps).sin()
    }
}

/// Frames of a phantom whose HbO and Hb pulse together (fixed ratio).
pub struct PulseSequence {
    truth: ConcentrationMap,
    sensitivity: CameraSensitivity,
    basis: ChromophoreBasis,
    params: PulseParams,
    noise_sigma: f64,
    seed: u64,
    exec: Exec,
    next: usize,
}

impl PulseSequence {
    pub fn params(&self) -> &PulseParams {
        &self.params
    }

    /// Ground truth of frame `t`.
    pub fn truth_at(&self, t: usize) -> ConcentrationMap {
        let m = self.params.modulation(t);
        let mut truth = self.truth.clone();
        truth.hbo.iter_mut().for_each(|v| *v *= m);
        truth.hb.iter_mut().for_each(|v| *v *= m);
        truth
    }

    fn render(&self, t: usize) -> RgbImage {
        let mut cube = forward_msi(&self.truth_at(t), &self.basis, self.exec);
        let seed = self.seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        add_noise(&mut cube, self.noise_sigma, seed).expect("validated sigma");
        synthesize_rgb(&cube, &self.sensitivity, 1.0, self.exec).expect("validated grids")
    }
}

impl Iterator for PulseSequence {
    type Item = RgbImage;

    fn next(&mut self) -> Option<RgbImage> {
        if self.next >= self.params.frames() {
            return None;
        }
        let frame = self.render(self.next);
        self.next += 1;
        Some(frame)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.params.frames() - self.next;
        (n, Some(n))
    }
}

impl ExactSizeIterator for PulseSequence {}

pub fn pulse_sequence(
    spec: &PhantomSpec,
    sensitivity: &CameraSensitivity,
    basis: &ChromophoreBasis,
    params: PulseParams,
    exec: Exec,
) -> Result<PulseSequence> {
    params.validate()?;
    basis.grid().ensure_compatible(
        sensitivity.grid(),
        "chromophore basis vs camera sensitivity",
    )?;
    Ok(PulseSequence {
        truth: spec.truth()?,
        sensitivity: sensitivity.clone(),
        basis: basis.clone(),
        params,
        noise_sigma: spec.noise_sigma,
        seed: spec.seed,
        exec,
        next: 0,
    })
}
