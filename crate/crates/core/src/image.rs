//! Interleaved multi-channel planes and the RGB / spectral image types built on them.

use crate::error::{Error, Result};
use crate::grid::WavelengthGrid;

/// Row-major `height × width × channels` array of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, value: &[f64]) -> Self {
        let mut data = Vec::with_capacity(height * width * value.len());
        for _ in 0..height * width {
            data.extend_from_slice(value);
        }
        Self {
            height,
            width,
            channels: value.len(),
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Argument(format!(
                "plane {height}x{width}x{channels} needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of squares per channel.
    pub fn energy(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels.max(1)) {
            for (acc, v) in e.iter_mut().zip(px) {
                *acc += v * v;
            }
        }
        e
    }

    pub fn max_abs_diff(&self, other: &Plane) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Linear-light RGB frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage(Plane);

impl RgbImage {
    pub fn new(plane: Plane) -> Result<Self> {
        if plane.channels() != 3 {
            return Err(Error::Argument(format!(
                "RGB image needs 3 channels, got {}",
                plane.channels()
            )));
        }
        if !plane.is_finite() {
            return Err(Error::Argument(
                "RGB image contains non-finite values".into(),
            ));
        }
        Ok(Self(plane))
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Plane::from_vec(height, width, 3, data)?)
    }

    pub fn constant(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self(Plane::filled(height, width, &rgb))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }
}

/// Per-pixel reflectance spectra on a wavelength grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    grid: WavelengthGrid,
    plane: Plane,
}

impl SpectralCube {
    pub fn new(grid: WavelengthGrid, plane: Plane) -> Result<Self> {
        if plane.channels() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "cube has {} bands but grid {grid} has {}",
                plane.channels(),
                grid.len()
            )));
        }
        if !plane.is_finite() {
            return Err(Error::Argument(
                "spectral cube contains non-finite values".into(),
            ));
        }
        Ok(Self { grid, plane })
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn height(&self) -> usize {
        self.plane.height()
    }

    pub fn width(&self) -> usize {
        self.plane.width()
    }

    pub fn bands(&self) -> usize {
        self.grid.len()
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn plane_mut(&mut self) -> &mut Plane {
        &mut self.plane
    }

    pub fn spectrum(&self, y: usize, x: usize) -> &[f64] {
        self.plane.pixel(y, x)
    }

    pub fn into_plane(self) -> Plane {
        self.plane
    }
}
