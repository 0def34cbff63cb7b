use sns_core::fields::{AnalyticField, FieldDomain, GeometryCache, ScalarFieldModel};
use sns_core::mesh::AnalyticSurface;
use sns_core::sns::SnsModel;
use sns_core::mlp::MlpSpec;
use sns_core::spectral::{eigen_residual, mode_loss, optimize_modes, rayleigh_quotient, EigenConfig, Schedule, SpectralSamples};
use sns_core::sphere::uniform_sphere;
use sns_core::surface::{rotation, RigidMotion};

fn sphere_samples(n: usize, seed: u64) -> SpectralSamples {
    let unit = AnalyticSurface::unit_sphere();
    SpectralSamples::new(&unit, uniform_sphere(n, seed).points, 4.0 * std::f64::consts::PI).unwrap()
}

#[test]
fn spherical_harmonic_quotients() {
    let s = sphere_samples(10_000, 1);
    let qz = rayleigh_quotient(&AnalyticField::Coordinate(2), &s).unwrap();
    assert!((qz - 2.0).abs() < 0.06, "{qz}");
    let qxy = rayleigh_quotient(&AnalyticField::Product(0, 1), &s).unwrap();
    assert!((qxy - 6.0).abs() < 0.18, "{qxy}");
    let q1 = rayleigh_quotient(&AnalyticField::Constant(1.0), &s).unwrap();
    assert_eq!(q1, 0.0);
}

#[test]
fn quotient_is_scale_invariant() {
    let s = sphere_samples(2000, 2);
    let g = ScalarFieldModel::new(ScalarFieldModel::default_spec(), 5).unwrap();
    let q = rayleigh_quotient(&g, &s).unwrap();
    let mut scaled = g.clone();
    scaled.mlp.params.proj.weight *= -3.5;
    scaled.mlp.params.proj.bias *= -3.5;
    let q2 = rayleigh_quotient(&scaled, &s).unwrap();
    assert!((q - q2).abs() < 1e-10 * q.abs().max(1.0));
}

#[test]
fn quotient_is_invariant_under_rigid_motion() {
    let star = AnalyticSurface::radial_star(0.15, 3.0);
    let moved = RigidMotion::new(star.clone(), rotation(&nalgebra::Vector3::new(1.0, 2.0, 0.5), 0.9), nalgebra::Vector3::new(1.0, 0.0, -2.0));
    let ps = uniform_sphere(3000, 3).points;
    let a = SpectralSamples::new(&star, ps.clone(), 4.0).unwrap();
    let b = SpectralSamples::new(&moved, ps, 4.0).unwrap();
    let g = ScalarFieldModel::new(ScalarFieldModel::default_spec(), 6).unwrap();
    let (qa, qb) = (a.rayleigh(&g).unwrap(), b.rayleigh(&g).unwrap());
    assert!((qa - qb).abs() < 1e-9 * qa);
}

#[test]
fn exact_modes_have_no_residual() {
    let model = SnsModel::identity(8, 1).unwrap();
    let cache = GeometryCache::build(&model, &uniform_sphere(500, 4).points, "identity").unwrap();
    let z = AnalyticField::Coordinate(2);
    assert!(eigen_residual(&z, 2.0, &cache, FieldDomain::Sphere).unwrap() < 1e-8);
    assert_eq!(eigen_residual(&AnalyticField::Constant(0.3), 0.0, &cache, FieldDomain::Sphere).unwrap(), 0.0);
    assert!(eigen_residual(&z, 6.0, &cache, FieldDomain::Sphere).unwrap() > 1.0);
}

#[test]
fn mixing_in_an_earlier_mode_raises_the_orthogonality_penalty() {
    let s = sphere_samples(4000, 5);
    let y: Vec<f64> = s.points.iter().map(|p| p.y).collect();
    let ny = s.inner(&y, &y).sqrt();
    let previous = vec![vec![1.0 / s.area.sqrt(); s.len()], y.iter().map(|v| v / ny).collect()];
    let spec = ScalarFieldModel::default_spec();
    let pure = ScalarFieldModel::linear(spec, [0.0, 0.0, 1.0], 0.0).unwrap();
    let mixed = ScalarFieldModel::linear(spec, [0.0, 0.5, 1.0], 0.0).unwrap();
    let (a, _) = mode_loss(&pure.mlp, &s, &previous, 1.0, 1.0, false).unwrap();
    let (b, _) = mode_loss(&mixed.mlp, &s, &previous, 1.0, 1.0, false).unwrap();
    assert!(b.ortho > a.ortho);
    assert!(b.rayleigh.is_finite());
}

#[test]
fn schedules_ramp_over_the_stated_fraction() {
    let s = Schedule { start: 1e3, end: 1.0, fraction: 0.5 };
    assert_eq!(s.at(0, 5000), 1e3);
    assert_eq!(s.at(2500, 5000), 1.0);
    assert_eq!(s.at(4999, 5000), 1.0);
    assert!((s.at(1250, 5000) - 500.5).abs() < 1e-9);
}

fn tiny_eigen() -> EigenConfig {
    EigenConfig {
        k: 1,
        epochs: 40,
        m: 2000,
        n_target: 300,
        field_spec: MlpSpec::new(3, 3, 8, 1),
        report_m: 4000,
        report_n_target: 500,
        ..EigenConfig::desk()
    }
}

#[test]
fn resampling_is_seeded_and_changes_the_run() {
    let model = SnsModel::identity(8, 1).unwrap();
    let frozen = optimize_modes(&model, &tiny_eigen()).unwrap();
    let cfg = EigenConfig { resample_every: Some(10), ..tiny_eigen() };
    let (a, b) = (optimize_modes(&model, &cfg).unwrap(), optimize_modes(&model, &cfg).unwrap());
    assert_eq!(a.rayleigh, b.rayleigh);
    assert_ne!(a.rayleigh, frozen.rayleigh);
    assert!(a.rayleigh[0].is_finite() && a.rayleigh[0] > 0.0);

    let zero = EigenConfig { resample_every: Some(0), ..tiny_eigen() };
    assert!(optimize_modes(&model, &zero).is_err());
}
