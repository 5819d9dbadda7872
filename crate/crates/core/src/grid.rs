//! Uniform wavelength grids and resampling of tabulated curves onto them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_TOL: f64 = 1e-9;

/// Uniformly spaced, strictly increasing wavelength samples in nanometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    start_nm: f64,
    step_nm: f64,
    count: usize,
}

impl Default for WavelengthGrid {
    /// 450–700 nm in 10 nm steps (26 bands).
    fn default() -> Self {
        Self {
            start_nm: 450.0,
            step_nm: 10.0,
            count: 26,
        }
    }
}

impl WavelengthGrid {
    pub fn new(start_nm: f64, step_nm: f64, count: usize) -> Result<Self> {
        if !start_nm.is_finite() || !step_nm.is_finite() || step_nm <= 0.0 {
            return Err(Error::Argument(format!(
                "wavelength grid needs a finite start and a positive step, got start {start_nm} step {step_nm}"
            )));
        }
        // the second-difference operator needs three samples
        if count < 3 {
            return Err(Error::Argument(format!(
                "wavelength grid needs at least 3 samples, got {count}"
            )));
        }
        Ok(Self {
            start_nm,
            step_nm,
            count,
        })
    }

    pub fn start_nm(&self) -> f64 {
        self.start_nm
    }

    pub fn step_nm(&self) -> f64 {
        self.step_nm
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn end_nm(&self) -> f64 {
        self.wavelength(self.count - 1)
    }

    pub fn wavelength(&self, i: usize) -> f64 {
        self.start_nm + i as f64 * self.step_nm
    }

    pub fn wavelengths(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.wavelength(i))
    }

    pub fn is_compatible(&self, other: &WavelengthGrid) -> bool {
        self.count == other.count
            && (self.start_nm - other.start_nm).abs() <= GRID_TOL * self.start_nm.abs().max(1.0)
            && (self.step_nm - other.step_nm).abs() <= GRID_TOL * self.step_nm
    }

    pub fn ensure_compatible(&self, other: &WavelengthGrid, what: &str) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{what}: {self} vs {other}")))
        }
    }
}

impl std::fmt::Display for WavelengthGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}:{}:{} nm ({} bands)",
            self.start_nm,
            self.step_nm,
            self.end_nm(),
            self.count
        )
    }
}

/// Linearly interpolates a `(wavelength, value)` table at every grid wavelength.
///
/// The table must be strictly increasing in wavelength and span the whole grid.
pub fn resample_to_grid(table: &[(f64, f64)], grid: &WavelengthGrid) -> Result<Vec<f64>> {
    if table.is_empty() {
        return Err(Error::Range(format!(
            "empty table cannot cover [{}, {}] nm",
            grid.start_nm(),
            grid.end_nm()
        )));
    }
    if let Some(w) = table
        .windows(2)
        .find(|w| w[1].0.partial_cmp(&w[0].0) != Some(std::cmp::Ordering::Greater))
    {
        return Err(Error::Table(format!(
            "table wavelengths must be strictly increasing ({} followed by {})",
            w[0].0, w[1].0
        )));
    }
    if table.iter().any(|(w, v)| !w.is_finite() || !v.is_finite()) {
        return Err(Error::Table("table contains non-finite entries".into()));
    }
    let lo = table[0].0;
    let hi = table[table.len() - 1].0;
    let slack = GRID_TOL * grid.step_nm();
    if grid.start_nm() < lo - slack {
        return Err(Error::Range(format!(
            "table starts at {lo} nm, interval [{}, {lo}) nm is not covered",
            grid.start_nm()
        )));
    }
    if grid.end_nm() > hi + slack {
        return Err(Error::Range(format!(
            "table ends at {hi} nm, interval ({hi}, {}] nm is not covered",
            grid.end_nm()
        )));
    }

    let mut out = Vec::with_capacity(grid.len());
    let mut seg = 0;
    for w in grid.wavelengths() {
        let w = w.clamp(lo, hi);
        while seg + 2 < table.len() && table[seg + 1].0 < w {
            seg += 1;
        }
        let (w0, v0) = table[seg];
        if table.len() == 1 {
            out.push(v0);
            continue;
        }
        let (w1, v1) = table[seg + 1];
        let t = ((w - w0) / (w1 - w0)).clamp(0.0, 1.0);
        out.push(v0 + t * (v1 - v0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_table_resamples_to_ones() {
        let grid = WavelengthGrid::new(400.0, 10.0, 31).unwrap();
        let v = resample_to_grid(&[(400.0, 1.0), (700.0, 1.0)], &grid).unwrap();
        assert_eq!(v.len(), 31);
        assert!(v.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn linear_interpolation_midpoint() {
        let grid = WavelengthGrid::new(400.0, 10.0, 31).unwrap();
        let v = resample_to_grid(&[(400.0, 0.0), (700.0, 3.0)], &grid).unwrap();
        assert!((v[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uncovered_grid_is_a_range_error() {
        let grid = WavelengthGrid::new(400.0, 10.0, 31).unwrap();
        let err = resample_to_grid(&[(450.0, 2.0), (460.0, 4.0)], &grid).unwrap_err();
        match err {
            Error::Range(msg) => assert!(msg.contains("400"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unsorted_table_rejected() {
        let grid = WavelengthGrid::default();
        let err = resample_to_grid(&[(700.0, 1.0), (400.0, 1.0)], &grid).unwrap_err();
        assert!(matches!(err, Error::Table(_)));
    }

    #[test]
    fn grid_validation() {
        assert!(WavelengthGrid::new(450.0, 0.0, 26).is_err());
        assert!(WavelengthGrid::new(450.0, 10.0, 2).is_err());
        let g = WavelengthGrid::default();
        assert_eq!(g.len(), 26);
        assert_eq!(g.end_nm(), 700.0);
        let w: Vec<f64> = g.wavelengths().collect();
        assert!(w.windows(2).all(|p| p[1] > p[0]));
    }
}
