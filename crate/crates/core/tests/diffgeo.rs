use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector3};
use sns_core::diffgeo::{area_estimate, forms_from_jet, fundamental_forms, fundamental_forms_batch, quantity_field, Quantity};
use sns_core::mesh::{mesh_from_surface, AnalyticSurface};
use sns_core::sns::SnsModel;
use sns_core::sphere::{chart_frame, uniform_sphere};
use sns_core::surface::{rotation, RigidMotion, Scaled, Surface};

fn random_net() -> SnsModel {
    SnsModel::init(24, 2, 41, "random").unwrap()
}

#[test]
fn pointwise_invariants_hold() {
    let net = random_net();
    let star = AnalyticSurface::radial_star(0.15, 3.0);
    let ps = uniform_sphere(400, 3).points;
    let surfaces: [&dyn Surface; 2] = [&net, &star];
    for s in surfaces {
        let mut regular = 0;
        for p in &ps {
            let Ok(f) = fundamental_forms(s, p) else { continue };
            regular += 1;
            let [e, ff, g] = f.first;
            assert!((f.normal.norm() - 1.0).abs() < 1e-10);
            assert!(f.normal.dot(&f.s_u).abs() < 1e-8 * f.s_u.norm());
            assert!(f.normal.dot(&f.s_v).abs() < 1e-8 * f.s_v.norm());
            assert!(e > 0.0 && e * g - ff * ff > 0.0);
            let (h, k) = (f.mean_curvature, f.gauss_curvature);
            assert!(h * h >= k - 1e-9 * (1.0 + k * k));
            let [k1, k2] = f.principal;
            assert!((0.5 * (k1 + k2) - h).abs() <= 1e-8 * (1.0 + h.abs()));
            assert!((k1 * k2 - k).abs() <= 1e-8 * (1.0 + k.abs()));
            if let Some([d1, d2]) = f.directions {
                assert!(d1.dot(&d2).abs() < 1e-6);
                assert!(d1.dot(&f.normal).abs() < 1e-8 && d2.dot(&f.normal).abs() < 1e-8);
            }
        }
        assert!(regular > 350);
    }
}

#[test]
fn reference_surfaces() {
    let unit = AnalyticSurface::unit_sphere();
    let two = AnalyticSurface::sphere(2.0);
    for p in uniform_sphere(50, 1).points {
        let f = fundamental_forms(&unit, &p).unwrap();
        assert!((f.first[0] - 1.0).abs() < 1e-12 && f.first[1].abs() < 1e-12 && (f.first[2] - 1.0).abs() < 1e-12);
        assert!((f.normal - p).norm() < 1e-12);
        assert!((f.mean_curvature - 1.0).abs() < 1e-10 && (f.gauss_curvature - 1.0).abs() < 1e-10);
        assert!(f.is_umbilic());
        let f = fundamental_forms(&two, &p).unwrap();
        assert!((f.first[0] - 4.0).abs() < 1e-12 && (f.first[2] - 4.0).abs() < 1e-12);
        assert!((f.mean_curvature - 0.5).abs() < 1e-10 && (f.gauss_curvature - 0.25).abs() < 1e-10);
    }
    let ell = AnalyticSurface::ellipsoid(2.0, 1.0, 1.0);
    let f = fundamental_forms(&ell, &Vector3::new(0.0, 1.0, 0.0)).unwrap();
    assert!((f.principal[0] - 0.25).abs() < 1e-6 && (f.principal[1] - 1.0).abs() < 1e-6);
}

#[test]
fn rigid_motion_invariance() {
    let net = random_net();
    let q = rotation(&Vector3::new(0.3, -1.0, 0.5), 1.1);
    let moved = RigidMotion::new(net.clone(), q, Vector3::new(3.0, -2.0, 0.5));
    let ps = uniform_sphere(300, 9).points;
    let a = fundamental_forms_batch(&net, &ps).unwrap();
    let b = fundamental_forms_batch(&moved, &ps).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x.mean_curvature - y.mean_curvature).abs() <= 1e-10);
        assert!((x.gauss_curvature - y.gauss_curvature).abs() <= 1e-10);
        assert!((x.principal[0] - y.principal[0]).abs() <= 1e-10);
        assert!((q * x.normal - y.normal).norm() <= 1e-10);
    }
}

#[test]
fn scale_covariance() {
    let s = 2.5;
    let ps = uniform_sphere(200, 4).points;
    for base in [AnalyticSurface::unit_sphere(), AnalyticSurface::ellipsoid(2.0, 1.0, 0.5)] {
        let scaled = Scaled { inner: base.clone(), scale: s };
        let a = fundamental_forms_batch(&base, &ps).unwrap();
        let b = fundamental_forms_batch(&scaled, &ps).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y.mean_curvature - x.mean_curvature / s).abs() < 1e-10 * (1.0 + x.mean_curvature.abs()));
            assert!((y.gauss_curvature - x.gauss_curvature / (s * s)).abs() < 1e-10 * (1.0 + x.gauss_curvature.abs()));
            assert!((y.distortion - x.distortion * s * s).abs() < 1e-10 * x.distortion * s * s);
        }
    }
}

#[test]
fn chart_rotation_leaves_curvature_unchanged() {
    let net = random_net();
    for p in uniform_sphere(200, 5).points {
        let jet = net.jet(&p).unwrap();
        let r = chart_frame(&p).unwrap().r;
        let a = forms_from_jet(&p, &jet, &r).unwrap();
        let t = 0.7f64;
        let turn = Matrix2::new(t.cos(), -t.sin(), t.sin(), t.cos());
        let b = forms_from_jet(&p, &jet, &(r * turn)).unwrap();
        assert!((a.mean_curvature - b.mean_curvature).abs() < 1e-8);
        assert!((a.gauss_curvature - b.gauss_curvature).abs() < 1e-8);
        assert!((a.distortion - b.distortion).abs() < 1e-10);
    }
}

#[test]
fn quantity_fields() {
    let unit = AnalyticSurface::unit_sphere();
    let ps = uniform_sphere(100, 6).points;
    let h = quantity_field(&unit, &ps, Quantity::MeanCurvature).unwrap();
    assert!(h.scalars().unwrap().iter().all(|v| (v - 1.0).abs() < 1e-10));

    let net = random_net();
    let moved = RigidMotion::new(net.clone(), rotation(&Vector3::z(), 0.4), Vector3::new(1.0, 1.0, 1.0));
    let ka = quantity_field(&net, &ps, Quantity::GaussCurvature).unwrap();
    let kb = quantity_field(&moved, &ps, Quantity::GaussCurvature).unwrap();
    for (a, b) in ka.scalars().unwrap().iter().zip(kb.scalars().unwrap()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn distortion_integrates_to_area() {
    let ell = AnalyticSurface::ellipsoid(2.0, 1.0, 1.0);
    let mesh_area = mesh_from_surface(&ell, 6).unwrap().area();
    let mc = area_estimate(&ell, 200_000, 7).unwrap();
    assert!((mc - mesh_area).abs() < 5e-3 * mesh_area, "{mc} vs {mesh_area}");
}

#[test]
fn gauss_bonnet_on_analytic_shapes() {
    let ps = uniform_sphere(50_000, 8).points;
    for s in [AnalyticSurface::ellipsoid(2.0, 1.0, 1.0), AnalyticSurface::radial_star(0.15, 3.0)] {
        let forms = fundamental_forms_batch(&s, &ps).unwrap();
        let total = 4.0 * PI * forms.iter().map(|f| f.gauss_curvature * f.distortion).sum::<f64>() / ps.len() as f64;
        assert!((total - 4.0 * PI).abs() < 0.05 * 4.0 * PI, "{}: {total}", s.name);
    }
}
