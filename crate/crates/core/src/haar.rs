//! Single- and multi-level 2D discrete Haar transform on interleaved multi-channel planes.
//!
//! Each non-overlapping 2×2 window `[I(r,c), I(r,c+1), I(r+1,c), I(r+1,c+1)]` is
//! treated as a row vector and multiplied on the right by the orthonormal matrix
//! returned by [`haar_matrix`]. The four outputs are stored as (lp, dh, dv, dd) in
//! the order of the matrix rows. Odd dimensions are edge-replicated before each
//! level and cropped again on the way back.

use crate::error::{Error, Result};
use crate::image::Plane;
use crate::par::Exec;

/// Levels beyond this would need a frame larger than any addressable image.
pub const MAX_LEVELS: usize = 30;

pub fn haar_matrix() -> [[f64; 4]; 4] {
    [
        [0.5, 0.5, 0.5, 0.5],
        [0.5, 0.5, -0.5, -0.5],
        [0.5, -0.5, -0.5, 0.5],
        [0.5, -0.5, 0.5, -0.5],
    ]
}

/// `window · H`. Since H is symmetric and involutory this is also its own inverse.
#[inline]
pub fn haar_window(w: [f64; 4]) -> [f64; 4] {
    let [a, b, c, d] = w;
    [
        0.5 * (a + b + c + d),
        0.5 * (a + b - c - d),
        0.5 * (a - b - c + d),
        0.5 * (a - b + c - d),
    ]
}

/// Coefficients of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarLevel {
    pub lp: Plane,
    pub dh: Plane,
    pub dv: Plane,
    pub dd: Plane,
    /// Size of the plane this level decomposed, before edge padding.
    pub src_height: usize,
    pub src_width: usize,
}

impl HaarLevel {
    pub fn directional(&self) -> [&Plane; 3] {
        [&self.dh, &self.dv, &self.dd]
    }

    pub fn directional_mut(&mut self) -> [&mut Plane; 3] {
        [&mut self.dh, &mut self.dv, &mut self.dd]
    }

    pub fn coarse_dims(&self) -> (usize, usize) {
        (self.dh.height(), self.dh.width())
    }
}

/// Multi-level decomposition; `levels[0]` is the finest.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarPyramid {
    pub levels: Vec<HaarLevel>,
    pub residual_lp: Plane,
}

impl HaarPyramid {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Total number of stored coefficients (directional planes plus the residual low-pass).
    pub fn coefficient_count(&self) -> usize {
        self.levels.iter().map(|l| 3 * l.dh.pixels()).sum::<usize>() + self.residual_lp.pixels()
    }

    /// Per-channel energy of every directional plane plus the residual low-pass.
    pub fn energy(&self) -> Vec<f64> {
        let mut e = self.residual_lp.energy();
        for level in &self.levels {
            for d in level.directional() {
                for (acc, v) in e.iter_mut().zip(d.energy()) {
                    *acc += v;
                }
            }
        }
        e
    }
}

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

/// One analysis step.
pub fn forward_level(src: &Plane, exec: Exec) -> HaarLevel {
    let (h, w, ch) = (src.height(), src.width(), src.channels());
    let (hh, hw) = (half(h), half(w));
    let row_len = hw * ch;
    let mut buf = vec![0.0; hh * 4 * row_len];
    exec.for_each_chunk(&mut buf, 4 * row_len, |i, out| {
        let r0 = 2 * i;
        let r1 = (r0 + 1).min(h - 1);
        let (lp, rest) = out.split_at_mut(row_len);
        let (dh, rest) = rest.split_at_mut(row_len);
        let (dv, dd) = rest.split_at_mut(row_len);
        for j in 0..hw {
            let c0 = 2 * j;
            let c1 = (c0 + 1).min(w - 1);
            let (pa, pb, pc, pd) = (
                src.pixel(r0, c0),
                src.pixel(r0, c1),
                src.pixel(r1, c0),
                src.pixel(r1, c1),
            );
            for k in 0..ch {
                let [l, x, y, z] = haar_window([pa[k], pb[k], pc[k], pd[k]]);
                let o = j * ch + k;
                lp[o] = l;
                dh[o] = x;
                dv[o] = y;
                dd[o] = z;
            }
        }
    });
    let mut planes: [Vec<f64>; 4] = Default::default();
    for p in planes.iter_mut() {
        p.reserve_exact(hh * row_len);
    }
    for row in buf.chunks_exact(4 * row_len) {
        for (p, part) in planes.iter_mut().zip(row.chunks_exact(row_len)) {
            p.extend_from_slice(part);
        }
    }
    let [lp, dh, dv, dd] = planes.map(|d| Plane::from_vec(hh, hw, ch, d).expect("sized"));
    HaarLevel {
        lp,
        dh,
        dv,
        dd,
        src_height: h,
        src_width: w,
    }
}

/// One synthesis step from a low-pass plane and a level's directional planes.
pub fn inverse_level(lp: &Plane, level: &HaarLevel, exec: Exec) -> Result<Plane> {
    let (hh, hw) = (lp.height(), lp.width());
    let ch = lp.channels();
    for d in level.directional() {
        if d.height() != hh || d.width() != hw || d.channels() != ch {
            return Err(Error::Structure(format!(
                "directional plane {}x{}x{} does not match low-pass {hh}x{hw}x{ch}",
                d.height(),
                d.width(),
                d.channels()
            )));
        }
    }
    let (h, w) = (level.src_height, level.src_width);
    if h == 0 || w == 0 || half(h) != hh || half(w) != hw {
        return Err(Error::Structure(format!(
            "level records a {h}x{w} source but its planes are {hh}x{hw}"
        )));
    }
    let mut out = vec![0.0; h * w * ch];
    let row = w * ch;
    exec.for_each_chunk(&mut out, 2 * row, |i, rows| {
        let two_rows = rows.len() > row;
        for j in 0..hw {
            let c0 = 2 * j;
            let has_c1 = c0 + 1 < w;
            let (l, x, y, z) = (
                lp.pixel(i, j),
                level.dh.pixel(i, j),
                level.dv.pixel(i, j),
                level.dd.pixel(i, j),
            );
            for k in 0..ch {
                let [a, b, c, d] = haar_window([l[k], x[k], y[k], z[k]]);
                rows[c0 * ch + k] = a;
                if has_c1 {
                    rows[(c0 + 1) * ch + k] = b;
                }
                if two_rows {
                    rows[row + c0 * ch + k] = c;
                    if has_c1 {
                        rows[row + (c0 + 1) * ch + k] = d;
                    }
                }
            }
        }
    });
    Plane::from_vec(h, w, ch, out)
}

/// Decomposes `image` into `n_levels` levels, recursing on the low-pass plane.
pub fn forward(image: &Plane, n_levels: usize, exec: Exec) -> Result<HaarPyramid> {
    if n_levels == 0 || n_levels > MAX_LEVELS {
        return Err(Error::Argument(format!(
            "number of Haar levels must be in 1..={MAX_LEVELS}, got {n_levels}"
        )));
    }
    if image.height() == 0 || image.width() == 0 || image.channels() == 0 {
        return Err(Error::Argument("cannot decompose an empty image".into()));
    }
    let mut levels = Vec::with_capacity(n_levels);
    let mut current = forward_level(image, exec);
    for _ in 1..n_levels {
        let next = forward_level(&current.lp, exec);
        levels.push(current);
        current = next;
    }
    let residual_lp = current.lp.clone();
    levels.push(current);
    Ok(HaarPyramid {
        levels,
        residual_lp,
    })
}

/// Reconstructs the image from the residual low-pass and the directional planes.
///
/// Intermediate `lp` planes stored in the levels are not consulted.
pub fn inverse(pyramid: &HaarPyramid, exec: Exec) -> Result<Plane> {
    if pyramid.levels.is_empty() {
        return Err(Error::Structure("pyramid has no levels".into()));
    }
    for pair in pyramid.levels.windows(2) {
        let (fine, coarse) = (&pair[0], &pair[1]);
        if fine.coarse_dims() != (coarse.src_height, coarse.src_width) {
            return Err(Error::Structure(format!(
                "level of size {:?} is followed by a level decomposing {}x{}",
                fine.coarse_dims(),
                coarse.src_height,
                coarse.src_width
            )));
        }
    }
    let mut lp = pyramid.residual_lp.clone();
    for level in pyramid.levels.iter().rev() {
        lp = inverse_level(&lp, level, exec)?;
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat_vec(m: &[[f64; 4]; 4], v: [f64; 4]) -> [f64; 4] {
        let mut o = [0.0; 4];
        for (j, out) in o.iter_mut().enumerate() {
            *out = (0..4).map(|i| v[i] * m[i][j]).sum();
        }
        o
    }

    #[test]
    fn matrix_is_involutory() {
        let h = haar_matrix();
        for i in 0..4 {
            for j in 0..4 {
                let hh: f64 = (0..4).map(|k| h[i][k] * h[k][j]).sum();
                assert_eq!(hh, if i == j { 1.0 } else { 0.0 });
                assert_eq!(h[i][j], h[j][i]);
            }
        }
    }

    #[test]
    fn matrix_row_vector_examples() {
        let h = haar_matrix();
        assert_eq!(mat_vec(&h, [1.0, 1.0, 1.0, 1.0]), [2.0, 0.0, 0.0, 0.0]);
        assert_eq!(mat_vec(&h, [1.0, 0.0, 0.0, 0.0]), [0.5, 0.5, 0.5, 0.5]);
        assert_eq!(haar_window([1.0, 0.0, 0.0, 0.0]), [0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn constant_two_by_two() {
        let img = Plane::filled(2, 2, &[3.0]);
        let p = forward(&img, 1, Exec::Sequential).unwrap();
        assert_eq!(p.residual_lp.data(), &[6.0]);
        for d in p.levels[0].directional() {
            assert_eq!(d.data(), &[0.0]);
        }
    }

    #[test]
    fn odd_dimensions_pad_and_crop() {
        let img =
            Plane::from_vec(3, 5, 1, (0..15).map(|v| v as f64 * 0.7 - 2.0).collect()).unwrap();
        let p = forward(&img, 1, Exec::Sequential).unwrap();
        assert_eq!((p.residual_lp.height(), p.residual_lp.width()), (2, 3));
        let back = inverse(&p, Exec::Sequential).unwrap();
        assert_eq!((back.height(), back.width()), (3, 5));
        assert!(back.max_abs_diff(&img) <= 1e-12);
    }

    #[test]
    fn zeroed_details_of_constant_give_constant() {
        let img = Plane::filled(8, 6, &[1.5, 2.5]);
        let mut p = forward(&img, 2, Exec::Sequential).unwrap();
        for l in &mut p.levels {
            for d in l.directional_mut() {
                d.scale(0.0);
            }
        }
        let back = inverse(&p, Exec::Parallel).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-14);
    }

    #[test]
    fn level_dimensions_halve_with_ceiling() {
        let img = Plane::zeros(40, 40, 1);
        let p = forward(&img, 3, Exec::Sequential).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|l| l.coarse_dims()).collect();
        assert_eq!(dims, vec![(20, 20), (10, 10), (5, 5)]);
        let one = forward(&Plane::zeros(1, 1, 3), 3, Exec::Sequential).unwrap();
        assert_eq!(one.residual_lp.pixels(), 1);
    }

    #[test]
    fn argument_and_structure_errors() {
        let img = Plane::zeros(4, 4, 1);
        assert!(matches!(
            forward(&img, 0, Exec::Sequential),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            forward(&img, MAX_LEVELS + 1, Exec::Sequential),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            forward(&Plane::zeros(0, 4, 1), 1, Exec::Sequential),
            Err(Error::Argument(_))
        ));

        let mut p = forward(&Plane::zeros(8, 8, 1), 2, Exec::Sequential).unwrap();
        p.levels[1].src_height = 5;
        assert!(matches!(
            inverse(&p, Exec::Sequential),
            Err(Error::Structure(_))
        ));
        let mut q = forward(&Plane::zeros(8, 8, 1), 1, Exec::Sequential).unwrap();
        q.levels[0].dd = Plane::zeros(3, 4, 1);
        assert!(matches!(
            inverse(&q, Exec::Sequential),
            Err(Error::Structure(_))
        ));
    }

    fn plane_strategy() -> impl Strategy<Value = Plane> {
        (1usize..20, 1usize..20, 1usize..4).prop_flat_map(|(h, w, ch)| {
            proptest::collection::vec(-10.0f64..10.0, h * w * ch)
                .prop_map(move |d| Plane::from_vec(h, w, ch, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn involution_on_random_windows(v in proptest::array::uniform4(-1e3f64..1e3)) {
            let back = haar_window(haar_window(v));
            let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for k in 0..4 {
                prop_assert!((back[k] - v[k]).abs() <= 1e-14 * scale);
            }
        }

        #[test]
        fn round_trip(img in plane_strategy(), levels in 1usize..4) {
            let p = forward(&img, levels, Exec::Parallel).unwrap();
            let back = inverse(&p, Exec::Sequential).unwrap();
            prop_assert!(back.max_abs_diff(&img) <= 1e-12);
        }

        #[test]
        fn single_level_parseval_on_even_sizes(h in 1usize..10, w in 1usize..10, seed in any::<u64>()) {
            let data: Vec<f64> = (0..4 * h * w).map(|i| ((i as u64 ^ seed).wrapping_mul(2654435761) % 1000) as f64 / 100.0 - 5.0).collect();
            let img = Plane::from_vec(2 * h, 2 * w, 1, data).unwrap();
            let p = forward(&img, 1, Exec::Sequential).unwrap();
            let (a, b) = (img.energy()[0], p.energy()[0]);
            prop_assert!((a - b).abs() <= 1e-10 * a.max(1e-300));
        }

        #[test]
        fn lowpass_of_nonnegative_is_nonnegative(img in plane_strategy(), levels in 1usize..4) {
            let mut img = img;
            img.data_mut().iter_mut().for_each(|v| *v = v.abs());
            let p = forward(&img, levels, Exec::Sequential).unwrap();
            for l in &p.levels {
                prop_assert!(l.lp.data().iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn linearity(img in plane_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut other = img.clone();
            other.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.37).sin());
            let mut mix = img.clone();
            for (m, (x, y)) in mix.data_mut().iter_mut().zip(img.data().iter().zip(other.data())) {
                *m = a * x + b * y;
            }
            let (px, py, pm) = (
                forward(&img, 2, Exec::Sequential).unwrap(),
                forward(&other, 2, Exec::Sequential).unwrap(),
                forward(&mix, 2, Exec::Sequential).unwrap(),
            );
            for (k, lm) in pm.levels.iter().enumerate() {
                for (d, (dm, (dx, dy))) in lm.directional().iter().zip(px.levels[k].directional().iter().zip(py.levels[k].directional())).enumerate() {
                    for (m, (x, y)) in dm.data().iter().zip(dx.data().iter().zip(dy.data())) {
                        prop_assert!((m - (a * x + b * y)).abs() <= 1e-11, "level {k} plane {d}");
                    }
                }
            }
        }
    }
}
