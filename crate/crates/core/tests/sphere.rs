use std::f64::consts::PI;

use nalgebra::Vector3;
use sns_core::sphere::{chart_frame, mc_inner_product, rejection_sample, uniform_sphere};

#[test]
fn chart_frame_reference_point() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let f = chart_frame(&Vector3::new(s, s, 0.0)).unwrap();
    assert_eq!(f.polar_axis, 2);
    let expected = [[0.0, -s], [0.0, s], [-1.0, 0.0]];
    for r in 0..3 {
        for c in 0..2 {
            assert!((f.r[(r, c)] - expected[r][c]).abs() < 1e-15);
        }
    }
}

#[test]
fn chart_frames_are_orthonormal_tangent_frames() {
    let set = uniform_sphere(5000, 3);
    for p in set.points.iter().chain([Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0)].iter()) {
        let f = chart_frame(p).unwrap();
        let g = f.r.transpose() * f.r;
        assert!((g - nalgebra::Matrix2::identity()).abs().max() < 1e-12);
        assert!((f.r.transpose() * p).abs().max() < 1e-12);
        assert!(p[f.polar_axis].abs() <= 1.0 / 3f64.sqrt() + 1e-12);
        assert_eq!(chart_frame(p).unwrap(), f);
    }
    assert_eq!(chart_frame(&Vector3::new(0.0, 0.0, 1.0)).unwrap().polar_axis, 0);
}

#[test]
fn uniform_samples_are_unit_and_centred() {
    let m = 100_000;
    let set = uniform_sphere(m, 8);
    assert!(set.points.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
    let mean = set.points.iter().sum::<Vector3<f64>>() / m as f64;
    assert!(mean.abs().max() < 4.0 / (m as f64).sqrt());
    assert_eq!(uniform_sphere(100, 8).points, set.points[..100].to_vec());
}

#[test]
fn rejection_sampling_statistics() {
    let m = 100_000;
    let mut set = uniform_sphere(m, 4);
    set.distortions = vec![1.0; m];
    rejection_sample(&mut set, m).unwrap();
    assert_eq!(set.kept_count(), m);

    for seed in 0..5 {
        let mut set = uniform_sphere(m, seed);
        set.distortions = vec![1.0; m];
        rejection_sample(&mut set, m / 2).unwrap();
        let q = 0.5;
        let sigma = (m as f64 * q * (1.0 - q)).sqrt();
        assert!((set.kept_count() as f64 - m as f64 / 2.0).abs() < 3.0 * sigma);
    }

    let mut set = uniform_sphere(m, 5);
    set.distortions = vec![1.0; m];
    rejection_sample(&mut set, 10_000).unwrap();
    let kept = set.kept_points();
    let n = kept.len() as f64;
    let upper = kept.iter().filter(|p| p.z > 0.0).count() as f64;
    assert!((upper - n / 2.0).abs() < 3.0 * (n / 4.0).sqrt());
}

#[test]
fn monte_carlo_inner_products() {
    let n = 10_000;
    let set = uniform_sphere(n, 6);
    let ones = vec![1.0; n];
    let z: Vec<f64> = set.points.iter().map(|p| p.z).collect();
    assert!((mc_inner_product(&ones, &ones, 4.0 * PI).unwrap() - 4.0 * PI).abs() < 1e-12);
    assert!(mc_inner_product(&z, &ones, 4.0 * PI).unwrap().abs() < 3.0 * 4.0 * PI / (n as f64).sqrt());
    let zz = mc_inner_product(&z, &z, 4.0 * PI).unwrap();
    assert!((zz - 4.0 * PI / 3.0).abs() < 0.05 * 4.0 * PI / 3.0);
    assert!(zz >= 0.0);
}
