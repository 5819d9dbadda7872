//! Bundled illustrative calibration tables.
//!
//! The camera sensitivity and chromophore attenuation curves shipped in
//! `fixtures/` are smooth, shape-plausible stand-ins (Gaussian channel responses;
//! HbO with twin peaks near 542/577 nm, Hb with a single band near 556 nm). They are
//! not measured data. They exist so the estimators can be exercised end to end.

use crate::error::Result;
use crate::grid::WavelengthGrid;
use crate::io::{basis_from_table, read_table, sensitivity_from_table};
use crate::tissue::{CameraSensitivity, ChromophoreBasis};

pub const CAMERA_SENSITIVITY_CSV: &str = include_str!("../fixtures/camera_sensitivity.csv");
pub const CHROMOPHORES_CSV: &str = include_str!("../fixtures/chromophores.csv");

pub fn camera_sensitivity(grid: WavelengthGrid) -> Result<CameraSensitivity> {
    sensitivity_from_table(&read_table(CAMERA_SENSITIVITY_CSV.as_bytes())?, grid)
}

pub fn chromophore_basis(grid: WavelengthGrid) -> Result<ChromophoreBasis> {
    basis_from_table(&read_table(CHROMOPHORES_CSV.as_bytes())?, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_load_on_default_grid() {
        let g = WavelengthGrid::default();
        let c = camera_sensitivity(g).unwrap();
        let b = chromophore_basis(g).unwrap();
        assert_eq!(c.bands(), 26);
        assert_eq!(b.bands(), 26);
    }

    #[test]
    fn fixtures_cover_wider_grids() {
        let g = WavelengthGrid::new(400.0, 5.0, 71).unwrap();
        assert!(camera_sensitivity(g).is_ok());
        let too_wide = WavelengthGrid::new(380.0, 10.0, 40).unwrap();
        assert!(chromophore_basis(too_wide).is_err());
    }
}
