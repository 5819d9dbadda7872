//! Camera and chromophore operators, and the concentration maps they produce.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{resample_to_grid, WavelengthGrid};
use crate::image::Plane;

const RANK_TOL: f64 = 1e-10;

/// 3×L matrix mapping a reflectance spectrum to (R, G, B) responses.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSensitivity {
    grid: WavelengthGrid,
    c: DMatrix<f64>,
}

impl CameraSensitivity {
    pub fn new(grid: WavelengthGrid, c: DMatrix<f64>) -> Result<Self> {
        if c.shape() != (3, grid.len()) {
            return Err(Error::GridMismatch(format!(
                "sensitivity matrix is {}x{}, grid {grid} needs 3x{}",
                c.nrows(),
                c.ncols(),
                grid.len()
            )));
        }
        if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Argument(
                "sensitivity entries must be finite and non-negative".into(),
            ));
        }
        for (i, row) in c.row_iter().enumerate() {
            if !row.iter().any(|&v| v > 0.0) {
                return Err(Error::Argument(format!(
                    "sensitivity channel {i} has no positive response"
                )));
            }
        }
        let sv = c.singular_values();
        if sv.min() <= RANK_TOL * sv.max() {
            return Err(Error::Singular(format!(
                "camera sensitivity is rank deficient (singular values {:?})",
                sv.as_slice()
            )));
        }
        Ok(Self { grid, c })
    }

    /// Builds from tabulated curves (one per channel, R, G, B order) sampled at `wavelengths`.
    pub fn from_tabulated(
        grid: WavelengthGrid,
        wavelengths: &[f64],
        curves: &[Vec<f64>],
    ) -> Result<Self> {
        if curves.len() != 3 {
            return Err(Error::Table(format!(
                "sensitivity table needs 3 channel columns, got {}",
                curves.len()
            )));
        }
        let mut c = DMatrix::zeros(3, grid.len());
        for (ch, curve) in curves.iter().enumerate() {
            let table: Vec<(f64, f64)> = wavelengths
                .iter()
                .copied()
                .zip(curve.iter().copied())
                .collect();
            let row = resample_to_grid(&table, &grid)?;
            for (j, v) in row.into_iter().enumerate() {
                c[(ch, j)] = v;
            }
        }
        Self::new(grid, c)
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn bands(&self) -> usize {
        self.grid.len()
    }

    /// `C · spectrum`
    pub fn project(&self, spectrum: &[f64]) -> [f64; 3] {
        let mut y = [0.0; 3];
        for (ch, out) in y.iter_mut().enumerate() {
            *out = spectrum
                .iter()
                .enumerate()
                .map(|(j, s)| self.c[(ch, j)] * s)
                .sum();
        }
        y
    }
}

/// L×3 Beer-Lambert operator: HbO attenuation, Hb attenuation and a constant column.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromophoreBasis {
    grid: WavelengthGrid,
    xi: DMatrix<f64>,
}

impl ChromophoreBasis {
    pub fn new(grid: WavelengthGrid, hbo: &[f64], hb: &[f64]) -> Result<Self> {
        let l = grid.len();
        if hbo.len() != l || hb.len() != l {
            return Err(Error::GridMismatch(format!(
                "chromophore curves have {}/{} samples, grid {grid} has {l}",
                hbo.len(),
                hb.len()
            )));
        }
        if hbo.iter().chain(hb).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Argument(
                "attenuation coefficients must be finite and non-negative".into(),
            ));
        }
        let xi = DMatrix::from_fn(l, 3, |r, c| match c {
            0 => hbo[r],
            1 => hb[r],
            _ => 1.0,
        });
        let sv = xi.singular_values();
        if sv.min() <= RANK_TOL * sv.max() {
            return Err(Error::Singular(
                "chromophore columns are collinear with each other or the constant term".into(),
            ));
        }
        Ok(Self { grid, xi })
    }

    /// Builds from tabulated HbO and Hb curves sampled at `wavelengths`.
    pub fn from_tabulated(
        grid: WavelengthGrid,
        wavelengths: &[f64],
        hbo: &[f64],
        hb: &[f64],
    ) -> Result<Self> {
        let pair = |v: &[f64]| -> Vec<(f64, f64)> {
            wavelengths.iter().copied().zip(v.iter().copied()).collect()
        };
        let hbo = resample_to_grid(&pair(hbo), &grid)?;
        let hb = resample_to_grid(&pair(hb), &grid)?;
        Self::new(grid, &hbo, &hb)
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn bands(&self) -> usize {
        self.grid.len()
    }

    /// `ξ · x` at band `j`.
    #[inline]
    pub fn attenuation(&self, j: usize, x: &[f64; 3]) -> f64 {
        self.xi[(j, 0)] * x[0] + self.xi[(j, 1)] * x[1] + x[2]
    }
}

/// Per-pixel (HbO, Hb, offset) concentrations.
///
/// HbO and Hb are kept exactly as fitted, negative values included; only the
/// derived THb and SatO₂ planes clamp them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMap {
    height: usize,
    width: usize,
    pub hbo: Vec<f64>,
    pub hb: Vec<f64>,
    pub offset: Vec<f64>,
}

impl ConcentrationMap {
    pub fn new(
        height: usize,
        width: usize,
        hbo: Vec<f64>,
        hb: Vec<f64>,
        offset: Vec<f64>,
    ) -> Result<Self> {
        let n = height * width;
        if hbo.len() != n || hb.len() != n || offset.len() != n {
            return Err(Error::Argument(format!(
                "concentration planes must have {n} entries"
            )));
        }
        Ok(Self {
            height,
            width,
            hbo,
            hb,
            offset,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            hbo: vec![0.0; n],
            hb: vec![0.0; n],
            offset: vec![0.0; n],
        }
    }

    pub fn constant(height: usize, width: usize, x: [f64; 3]) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            hbo: vec![x[0]; n],
            hb: vec![x[1]; n],
            offset: vec![x[2]; n],
        }
    }

    /// Splits an interleaved 3-channel plane (hbo, hb, offset).
    pub fn from_plane(plane: &Plane) -> Result<Self> {
        if plane.channels() != 3 {
            return Err(Error::Argument(format!(
                "concentration plane needs 3 channels, got {}",
                plane.channels()
            )));
        }
        let n = plane.pixels();
        let (mut hbo, mut hb, mut offset) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for px in plane.data().chunks_exact(3) {
            hbo.push(px[0]);
            hb.push(px[1]);
            offset.push(px[2]);
        }
        Ok(Self {
            height: plane.height(),
            width: plane.width(),
            hbo,
            hb,
            offset,
        })
    }

    pub fn to_plane(&self) -> Plane {
        let mut data = Vec::with_capacity(self.len() * 3);
        for i in 0..self.len() {
            data.extend_from_slice(&[self.hbo[i], self.hb[i], self.offset[i]]);
        }
        Plane::from_vec(self.height, self.width, 3, data).expect("consistent sizes")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> [f64; 3] {
        [self.hbo[i], self.hb[i], self.offset[i]]
    }

    pub fn set(&mut self, i: usize, x: [f64; 3]) {
        self.hbo[i] = x[0];
        self.hb[i] = x[1];
        self.offset[i] = x[2];
    }

    pub fn thb_at(&self, i: usize) -> f64 {
        self.hbo[i].max(0.0) + self.hb[i].max(0.0)
    }

    /// NaN where THb is zero.
    pub fn sato2_at(&self, i: usize) -> f64 {
        let thb = self.thb_at(i);
        if thb > 0.0 {
            (self.hbo[i].max(0.0) / thb).clamp(0.0, 1.0)
        } else {
            f64::NAN
        }
    }

    pub fn thb(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.thb_at(i)).collect()
    }

    pub fn sato2(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.sato2_at(i)).collect()
    }

    /// Multiplies HbO and Hb by a calibration scale; the offset is dimensionless and untouched.
    pub fn scaled(mut self, calibration_scale: f64) -> Self {
        self.hbo.iter_mut().for_each(|v| *v *= calibration_scale);
        self.hb.iter_mut().for_each(|v| *v *= calibration_scale);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> WavelengthGrid {
        WavelengthGrid::new(500.0, 10.0, 5).unwrap()
    }

    #[test]
    fn sensitivity_validation() {
        let g = grid();
        let ok = DMatrix::from_row_slice(
            3,
            5,
            &[1., 1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 0., 0., 1., 1.],
        );
        assert!(CameraSensitivity::new(g, ok).is_ok());
        let neg = DMatrix::from_row_slice(
            3,
            5,
            &[1., -1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 0., 0., 1., 1.],
        );
        assert!(matches!(
            CameraSensitivity::new(g, neg),
            Err(Error::Argument(_))
        ));
        let dead = DMatrix::from_row_slice(
            3,
            5,
            &[1., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 1., 1.],
        );
        assert!(matches!(
            CameraSensitivity::new(g, dead),
            Err(Error::Argument(_))
        ));
        let rank2 = DMatrix::from_row_slice(
            3,
            5,
            &[1., 1., 0., 0., 0., 2., 2., 0., 0., 0., 0., 0., 0., 1., 1.],
        );
        assert!(matches!(
            CameraSensitivity::new(g, rank2),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn basis_rejects_collinear_columns() {
        let g = grid();
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0];
        assert!(matches!(
            ChromophoreBasis::new(g, &a, &b),
            Err(Error::Singular(_))
        ));
        let flat = [3.0; 5];
        assert!(matches!(
            ChromophoreBasis::new(g, &a, &flat),
            Err(Error::Singular(_))
        ));
        let c = [5.0, 1.0, 4.0, 1.0, 0.0];
        let basis = ChromophoreBasis::new(g, &a, &c).unwrap();
        assert!(basis.matrix().column(2).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn thb_and_sato2_clamp_negatives() {
        let m = ConcentrationMap::new(
            1,
            4,
            vec![30.0, -5.0, 0.0, -1.0],
            vec![10.0, 20.0, 0.0, -2.0],
            vec![0.0; 4],
        )
        .unwrap();
        assert_eq!(m.thb(), vec![40.0, 20.0, 0.0, 0.0]);
        let s = m.sato2();
        assert_eq!(s[0], 0.75);
        assert_eq!(s[1], 0.0);
        assert!(s[2].is_nan() && s[3].is_nan());
        // fitted values are preserved
        assert_eq!(m.hbo[1], -5.0);
    }

    #[test]
    fn plane_round_trip_and_scaling() {
        let m =
            ConcentrationMap::new(1, 2, vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]).unwrap();
        assert_eq!(ConcentrationMap::from_plane(&m.to_plane()).unwrap(), m);
        let s = m.scaled(2.0);
        assert_eq!(s.hbo, vec![2.0, 4.0]);
        assert_eq!(s.offset, vec![5.0, 6.0]);
    }
}
