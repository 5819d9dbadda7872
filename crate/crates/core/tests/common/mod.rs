#![allow(dead_code)]

use haemocam::{fixtures, CameraSensitivity, ChromophoreBasis, WavelengthGrid};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn default_operators() -> (CameraSensitivity, ChromophoreBasis) {
    let g = WavelengthGrid::default();
    (
        fixtures::camera_sensitivity(g).unwrap(),
        fixtures::chromophore_basis(g).unwrap(),
    )
}

/// Random non-negative full-rank 3×L sensitivity.
pub fn random_sensitivity(rng: &mut ChaCha8Rng, bands: usize) -> CameraSensitivity {
    let grid = WavelengthGrid::new(450.0, 10.0, bands).unwrap();
    loop {
        let c = DMatrix::from_fn(3, bands, |_, _| rng.gen_range(0.0..1.0));
        if let Ok(s) = CameraSensitivity::new(grid, c) {
            let sv = s.matrix().singular_values();
            if sv.min() > 1e-2 * sv.max() {
                return s;
            }
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
