//! End-to-end pipeline behaviour on synthetic phantoms.

mod common;

use common::*;
use haemocam::metrics::concentration_mse;
use haemocam::synth::{render_phantom, Blob, Illumination, PhantomSpec};
use haemocam::unmix::SpectralUnmixer;
use haemocam::{haar, Error, Exec, Mode, Pipeline, PipelineConfig, Plane, RgbImage};
use rand::Rng;

fn pipeline(mode: Mode, n_levels: usize) -> Pipeline {
    let (camera, basis) = default_operators();
    Pipeline::new(
        &camera,
        &basis,
        PipelineConfig {
            mode,
            n_levels,
            ..Default::default()
        },
    )
    .unwrap()
}

fn smooth_spec(size: usize) -> PhantomSpec {
    let s = size as f64;
    PhantomSpec {
        blobs: vec![
            Blob {
                x: 0.3 * s,
                y: 0.4 * s,
                radius: 0.25 * s,
                hbo: 20.0,
                hb: 10.0,
            },
            Blob {
                x: 0.7 * s,
                y: 0.6 * s,
                radius: 0.2 * s,
                hbo: 5.0,
                hb: 25.0,
            },
        ],
        illumination_offset: Illumination::Constant(0.05),
        ..PhantomSpec::uniform(size, size, 40.0, 40.0)
    }
}

#[test]
fn constant_frame_hybrid_equals_per_pixel_bayes() {
    let (camera, basis) = default_operators();
    let spec = PhantomSpec::uniform(16, 16, 40.0, 40.0);
    let ph = render_phantom(&spec, &camera, &basis, 1.0, Exec::Sequential).unwrap();
    let bayes = pipeline(Mode::BayesOnly, 1)
        .estimate_frame(&ph.rgb)
        .unwrap();
    for n in 1..=3 {
        let hybrid = pipeline(Mode::Hybrid, n).estimate_frame(&ph.rgb).unwrap();
        for i in 0..hybrid.map.len() {
            let (a, b) = (hybrid.map.get(i), bayes.map.get(i));
            for k in 0..3 {
                assert!(
                    (a[k] - b[k]).abs() <= 1e-9 * (1.0 + b[k].abs()),
                    "n={n} {a:?} {b:?}"
                );
            }
        }
    }
}

#[test]
fn zero_frame_clamps_and_flags_saturation() {
    let frame = RgbImage::constant(8, 8, [0.0; 3]);
    for mode in [Mode::Hybrid, Mode::BayesOnly, Mode::TikhonovOnly] {
        let out = pipeline(mode, 2).estimate_frame(&frame).unwrap();
        // spectra vanish up to the log-clamp floor
        assert!(
            out.cube
                .plane()
                .data()
                .iter()
                .all(|v| v.is_finite() && v.abs() <= 1e-6),
            "{mode}"
        );
        assert!(out
            .map
            .hbo
            .iter()
            .chain(&out.map.hb)
            .chain(&out.map.offset)
            .all(|v| v.is_finite()));
        let thb = out.map.thb();
        for (t, s) in thb.iter().zip(out.map.sato2()) {
            assert!(*t > 0.0 || s.is_nan());
        }
    }
}

#[test]
fn saturated_frame_stays_finite() {
    let frame = RgbImage::constant(8, 8, [1e9, 65535.0, 1e-300]);
    for mode in [Mode::Hybrid, Mode::BayesOnly, Mode::TikhonovOnly] {
        let out = pipeline(mode, 1).estimate_frame(&frame).unwrap();
        assert!(out.cube.plane().data().iter().all(|v| v.is_finite()));
        assert!(out
            .map
            .hbo
            .iter()
            .chain(&out.map.hb)
            .chain(&out.map.offset)
            .all(|v| v.is_finite()));
    }
}

#[test]
fn noise_free_phantom_orders_methods() {
    let (camera, basis) = default_operators();
    let ph = render_phantom(&smooth_spec(64), &camera, &basis, 1.0, Exec::Sequential).unwrap();
    let rmse = |mode, n| {
        let est = pipeline(mode, n).estimate_frame(&ph.rgb).unwrap();
        concentration_mse(&est.map, &ph.truth, None, Exec::Sequential)
            .unwrap()
            .rmse
    };
    let (bayes, hybrid, tik) = (
        rmse(Mode::BayesOnly, 1),
        rmse(Mode::Hybrid, 1),
        rmse(Mode::TikhonovOnly, 1),
    );
    assert!(
        bayes <= hybrid && hybrid <= tik,
        "bayes {bayes} hybrid {hybrid} tikhonov {tik}"
    );
    assert!(bayes < 0.5, "{bayes}");
}

#[test]
fn tikhonov_only_equals_image_domain_unmixing() {
    let mut r = rng(30);
    let frame = Plane::from_vec(
        13,
        22,
        3,
        (0..13 * 22 * 3).map(|_| r.gen_range(0.05..1.5)).collect(),
    )
    .unwrap();
    let rgb = RgbImage::new(frame.clone()).unwrap();
    for n in 1..=3 {
        let p = pipeline(Mode::TikhonovOnly, n);
        let out = p.estimate_frame(&rgb).unwrap();
        let direct = p.tikhonov().unmix_plane(&frame, Exec::Sequential).unwrap();
        // edge replication pads odd sizes; the inverse crops back
        assert!(out.cube.plane().max_abs_diff(&direct) <= 1e-8, "n={n}");
        let map = p.fit_cube(&direct).unwrap();
        assert!(max_abs_diff(&out.map.hbo, &map.hbo) <= 1e-6);
    }
}

#[test]
fn cost_counter_scales_with_levels() {
    let frame = RgbImage::constant(64, 48, [0.4, 0.5, 0.6]);
    let pixels = 64 * 48;
    for n in 1..=4 {
        let stats = pipeline(Mode::Hybrid, n)
            .estimate_frame(&frame)
            .unwrap()
            .stats;
        assert_eq!(stats.bayes_coefficients, pixels >> (2 * n));
        let directional: usize = (1..=n).map(|k| 3 * (pixels >> (2 * k))).sum();
        assert_eq!(stats.tikhonov_coefficients, directional);
        assert!(stats.bayes_iterations >= stats.bayes_coefficients);
    }
    let bayes = pipeline(Mode::BayesOnly, 1)
        .estimate_frame(&frame)
        .unwrap()
        .stats;
    assert_eq!(bayes.bayes_coefficients, pixels);
}

#[test]
fn frame_smaller_than_decomposition_is_rejected() {
    let frame = RgbImage::constant(3, 40, [0.4; 3]);
    assert!(matches!(
        pipeline(Mode::Hybrid, 2).estimate_frame(&frame),
        Err(Error::Argument(_))
    ));
    assert!(pipeline(Mode::Hybrid, 1).estimate_frame(&frame).is_ok());
    assert!(matches!(
        pipeline(Mode::DirectMsi, 1).estimate_frame(&frame),
        Err(Error::Argument(_))
    ));
}

#[test]
fn one_pixel_and_odd_frames() {
    let one = RgbImage::constant(1, 1, [0.3, 0.4, 0.5]);
    assert!(pipeline(Mode::BayesOnly, 1).estimate_frame(&one).is_ok());
    assert!(pipeline(Mode::TikhonovOnly, 3).estimate_frame(&one).is_ok());
    assert!(pipeline(Mode::Hybrid, 1).estimate_frame(&one).is_err());
    let odd = RgbImage::constant(5, 7, [0.3, 0.4, 0.5]);
    let out = pipeline(Mode::Hybrid, 2).estimate_frame(&odd).unwrap();
    assert_eq!((out.map.height(), out.map.width()), (5, 7));
    assert_eq!(out.cube.plane().pixels(), 35);
}

#[test]
fn sequence_is_deterministic_and_checks_sizes() {
    let p = pipeline(Mode::Hybrid, 1);
    let frame = RgbImage::constant(8, 8, [0.3, 0.4, 0.5]);
    let maps: Vec<_> = p
        .estimate_sequence(vec![frame.clone(); 10])
        .map(|r| r.unwrap().map)
        .collect();
    assert_eq!(maps.len(), 10);
    assert!(maps.windows(2).all(|w| w[0] == w[1]));

    assert_eq!(p.estimate_sequence(Vec::<RgbImage>::new()).count(), 0);

    let other = RgbImage::constant(8, 10, [0.3, 0.4, 0.5]);
    let out: Vec<_> = p
        .estimate_sequence(vec![frame.clone(), other, frame])
        .collect();
    assert_eq!(out.len(), 2);
    assert!(out[0].is_ok());
    assert!(matches!(out[1], Err(Error::Stream(_))));
}

#[test]
fn sequential_and_parallel_agree() {
    let (camera, basis) = default_operators();
    let ph = render_phantom(
        &PhantomSpec::tissue(48, 40, 3, 0.01),
        &camera,
        &basis,
        1.0,
        Exec::Sequential,
    )
    .unwrap();
    for mode in [Mode::Hybrid, Mode::BayesOnly, Mode::TikhonovOnly] {
        let run = |exec| {
            let cfg = PipelineConfig {
                mode,
                n_levels: 2,
                exec,
                ..Default::default()
            };
            Pipeline::new(&camera, &basis, cfg)
                .unwrap()
                .estimate_frame(&ph.rgb)
                .unwrap()
                .map
        };
        assert_eq!(run(Exec::Sequential), run(Exec::Parallel), "{mode}");
    }
}

#[test]
fn direct_msi_recovers_noise_free_truth() {
    let (camera, basis) = default_operators();
    let ph = render_phantom(&smooth_spec(32), &camera, &basis, 1.0, Exec::Sequential).unwrap();
    let map = pipeline(Mode::DirectMsi, 1).estimate_msi(&ph.cube).unwrap();
    assert!(
        concentration_mse(&map, &ph.truth, None, Exec::Sequential)
            .unwrap()
            .rmse
            <= 1e-9
    );
}

#[test]
fn haar_levels_of_frame_are_reused() {
    // sanity check that the hybrid cube stays consistent with its own pyramid
    let (camera, basis) = default_operators();
    let ph = render_phantom(&smooth_spec(32), &camera, &basis, 1.0, Exec::Sequential).unwrap();
    let out = pipeline(Mode::Hybrid, 2).estimate_frame(&ph.rgb).unwrap();
    let pyr = haar::forward(out.cube.plane(), 2, Exec::Sequential).unwrap();
    let back = haar::inverse(&pyr, Exec::Sequential).unwrap();
    assert!(back.max_abs_diff(out.cube.plane()) <= 1e-12);
}
