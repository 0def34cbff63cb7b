//! Fundamental forms, curvatures and principal directions of any map from the
//! sphere into R^3.
//!
//! Derivatives are taken in the gnomonic chart `(u, v) ↦ normalize(p + u·r1 +
//! v·r2)` around `p`, where `(r1, r2)` are the columns of the chart frame. Its
//! first derivatives at the origin are `r1, r2` and its second derivatives are
//! `∂uu = ∂vv = -p`, `∂uv = 0`, so
//!
//! ```text
//! S_u  = J r1                S_v  = J r2
//! S_uu = D²S[r1, r1] - J p   S_vv = D²S[r2, r2] - J p   S_uv = D²S[r1, r2]
//! ```
//!
//! The normal is `S_u × S_v` (outward for an orientation-preserving map) and
//! the second fundamental form is measured against `-n`, so spheres have
//! positive mean curvature and `Δx = -2Hn`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector2, Vector3};

use crate::error::{contract, Result, SnsError};
use crate::sphere::{chart_frame, rejection_sample, uniform_sphere, SampleSet};
use crate::surface::{par_chunked, Surface, SurfaceJet};

/// Smallest `EG - F²` accepted as a regular point.
pub const MIN_METRIC_DET: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalForms {
    pub p: Vector3<f64>,
    pub position: Vector3<f64>,
    /// Ambient Jacobian of the map.
    pub jacobian: Matrix3<f64>,
    /// Chart frame used (columns `r1, r2`).
    pub frame: Matrix3x2<f64>,
    pub s_u: Vector3<f64>,
    pub s_v: Vector3<f64>,
    pub s_uu: Vector3<f64>,
    pub s_uv: Vector3<f64>,
    pub s_vv: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// `[E, F, G]`
    pub first: [f64; 3],
    /// `[e, f, g]`
    pub second: [f64; 3],
    pub mean_curvature: f64,
    pub gauss_curvature: f64,
    /// `κ1 ≤ κ2`
    pub principal: [f64; 2],
    /// Unit principal directions, `None` at umbilics.
    pub directions: Option<[Vector3<f64>; 2]>,
    /// `√(EG - F²)`
    pub distortion: f64,
}

impl FundamentalForms {
    /// `J_local = J·R`
    pub fn local_jacobian(&self) -> Matrix3x2<f64> {
        Matrix3x2::from_columns(&[self.s_u, self.s_v])
    }

    pub fn first_matrix(&self) -> Matrix2<f64> {
        let [e, f, g] = self.first;
        Matrix2::new(e, f, f, g)
    }

    pub fn second_matrix(&self) -> Matrix2<f64> {
        let [e, f, g] = self.second;
        Matrix2::new(e, f, f, g)
    }

    pub fn is_umbilic(&self) -> bool {
        self.directions.is_none()
    }
}

pub fn is_umbilic(k1: f64, k2: f64) -> bool {
    (k1 - k2).abs() < 1e-6 * (1.0 + k1.abs() + k2.abs())
}

/// Eigenvector of a 2×2 matrix for eigenvalue `k`.
fn eigvec(w: &Matrix2<f64>, k: f64) -> Vector2<f64> {
    let a = Vector2::new(w[(0, 1)], k - w[(0, 0)]);
    let b = Vector2::new(k - w[(1, 1)], w[(1, 0)]);
    if a.norm_squared() >= b.norm_squared() {
        a
    } else {
        b
    }
}

/// Fundamental forms from a jet and an explicit orthonormal tangent frame.
pub fn forms_from_jet(p: &Vector3<f64>, jet: &SurfaceJet, frame: &Matrix3x2<f64>) -> Result<FundamentalForms> {
    let r1: Vector3<f64> = frame.column(0).into_owned();
    let r2: Vector3<f64> = frame.column(1).into_owned();
    let j = &jet.jacobian;
    let s_u = j * r1;
    let s_v = j * r2;
    let jp = j * p;
    let s_uu = jet.second_derivative(&r1, &r1) - jp;
    let s_vv = jet.second_derivative(&r2, &r2) - jp;
    let s_uv = jet.second_derivative(&r1, &r2);

    let (e_, f_, g_) = (s_u.dot(&s_u), s_u.dot(&s_v), s_v.dot(&s_v));
    let det = e_ * g_ - f_ * f_;
    if !(det >= MIN_METRIC_DET) {
        return Err(SnsError::DegenerateParametrization { point: [p.x, p.y, p.z], det });
    }
    let c = s_u.cross(&s_v);
    let normal = c / c.norm();
    let (e, f, g) = (-s_uu.dot(&normal), -s_uv.dot(&normal), -s_vv.dot(&normal));

    let h = (e_ * g - 2.0 * f_ * f + g_ * e) / (2.0 * det);
    let k = (e * g - f * f) / det;
    let disc = (h * h - k).max(0.0).sqrt();
    let principal = [h - disc, h + disc];

    let directions = if is_umbilic(principal[0], principal[1]) {
        None
    } else {
        let first = Matrix2::new(e_, f_, f_, g_);
        let second = Matrix2::new(e, f, f, g);
        let w = first.try_inverse().ok_or(SnsError::DegenerateParametrization { point: [p.x, p.y, p.z], det })?
            * second;
        let dirs = principal.map(|kk| {
            let xi = eigvec(&w, kk);
            (s_u * xi.x + s_v * xi.y).normalize()
        });
        Some(dirs)
    };

    Ok(FundamentalForms {
        p: *p,
        position: jet.value,
        jacobian: *j,
        frame: *frame,
        s_u,
        s_v,
        s_uu,
        s_uv,
        s_vv,
        normal,
        first: [e_, f_, g_],
        second: [e, f, g],
        mean_curvature: h,
        gauss_curvature: k,
        principal,
        directions,
        distortion: det.sqrt(),
    })
}

pub fn fundamental_forms<S: Surface + ?Sized>(surface: &S, p: &Vector3<f64>) -> Result<FundamentalForms> {
    let frame = chart_frame(p)?;
    forms_from_jet(p, &surface.jet(p)?, &frame.r)
}

/// Batched [`fundamental_forms`]; errors carry the failing point's index.
pub fn fundamental_forms_batch<S: Surface + ?Sized>(surface: &S, ps: &[Vector3<f64>]) -> Result<Vec<FundamentalForms>> {
    par_chunked(ps, |chunk| {
        let frames = chunk
            .iter()
            .enumerate()
            .map(|(i, p)| chart_frame(p).map_err(|e| SnsError::at(i, e)))
            .collect::<Result<Vec<_>>>()?;
        let jets = surface.jets(chunk)?;
        chunk
            .iter()
            .zip(&jets)
            .zip(&frames)
            .enumerate()
            .map(|(i, ((p, j), fr))| forms_from_jet(p, j, &fr.r).map_err(|e| SnsError::at(i, e)))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    MeanCurvature,
    GaussCurvature,
    Normal,
    /// Direction of the smaller principal curvature; zero at umbilics.
    DirMin,
    Distortion,
}

impl Quantity {
    pub fn parse(s: &str) -> Option<Quantity> {
        Some(match s {
            "H" | "mean" => Quantity::MeanCurvature,
            "K" | "gauss" => Quantity::GaussCurvature,
            "normal" | "n" => Quantity::Normal,
            "dir_min" => Quantity::DirMin,
            "distortion" | "d" => Quantity::Distortion,
            _ => return None,
        })
    }

    pub fn is_scalar(self) -> bool {
        matches!(self, Quantity::MeanCurvature | Quantity::GaussCurvature | Quantity::Distortion)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantityField {
    Scalars(Vec<f64>),
    Vectors(Vec<Vector3<f64>>),
}

impl QuantityField {
    pub fn scalars(&self) -> Option<&[f64]> {
        match self {
            QuantityField::Scalars(v) => Some(v),
            QuantityField::Vectors(_) => None,
        }
    }
}

pub fn project(forms: &[FundamentalForms], which: Quantity) -> QuantityField {
    match which {
        Quantity::MeanCurvature => QuantityField::Scalars(forms.iter().map(|f| f.mean_curvature).collect()),
        Quantity::GaussCurvature => QuantityField::Scalars(forms.iter().map(|f| f.gauss_curvature).collect()),
        Quantity::Distortion => QuantityField::Scalars(forms.iter().map(|f| f.distortion).collect()),
        Quantity::Normal => QuantityField::Vectors(forms.iter().map(|f| f.normal).collect()),
        Quantity::DirMin => {
            QuantityField::Vectors(forms.iter().map(|f| f.directions.map_or(Vector3::zeros(), |d| d[0])).collect())
        }
    }
}

pub fn quantity_field<S: Surface + ?Sized>(surface: &S, ps: &[Vector3<f64>], which: Quantity) -> Result<QuantityField> {
    if which == Quantity::Distortion {
        return Ok(QuantityField::Scalars(distortions(surface, ps)?));
    }
    Ok(project(&fundamental_forms_batch(surface, ps)?, which))
}

/// `√(EG - F²)` at each point; needs first derivatives only.
pub fn distortions<S: Surface + ?Sized>(surface: &S, ps: &[Vector3<f64>]) -> Result<Vec<f64>> {
    par_chunked(ps, |chunk| {
        let jacs = surface.jacobians(chunk)?;
        chunk
            .iter()
            .zip(&jacs)
            .enumerate()
            .map(|(i, (p, (_, j)))| {
                let fr = chart_frame(p).map_err(|e| SnsError::at(i, e))?;
                Ok((j * fr.u()).cross(&(j * fr.v())).norm())
            })
            .collect()
    })
}

/// Monte Carlo area `(4π/M)·Σ d_i` over `m` uniform sphere samples.
pub fn area_estimate<S: Surface + ?Sized>(surface: &S, m: usize, seed: u64) -> Result<f64> {
    let set = uniform_sphere(m, seed);
    let d = distortions(surface, &set.points)?;
    Ok(4.0 * PI * d.iter().sum::<f64>() / m as f64)
}

/// `m` uniform sphere samples with distortions, thinned towards `n_target`
/// points uniform on the image surface.
pub fn surface_samples<S: Surface + ?Sized>(surface: &S, m: usize, n_target: usize, seed: u64) -> Result<SampleSet> {
    if m == 0 || n_target == 0 {
        return Err(contract("surface sampling needs m >= 1 and n_target >= 1"));
    }
    let mut set = uniform_sphere(m, seed);
    set.distortions = distortions(surface, &set.points)?;
    rejection_sample(&mut set, n_target)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::AnalyticSurface;

    #[test]
    fn identity_sphere() {
        let s = AnalyticSurface::unit_sphere();
        for p in [Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.6, 0.0, 0.8), Vector3::new(-0.48, 0.6, -0.64)] {
            let f = fundamental_forms(&s, &p).unwrap();
            assert!((f.first[0] - 1.0).abs() < 1e-14 && f.first[1].abs() < 1e-14 && (f.first[2] - 1.0).abs() < 1e-14);
            assert!((f.normal - p).norm() < 1e-14);
            assert!((f.mean_curvature - 1.0).abs() < 1e-14);
            assert!((f.gauss_curvature - 1.0).abs() < 1e-14);
            assert!(f.is_umbilic());
        }
    }

    #[test]
    fn radius_two_sphere() {
        let s = AnalyticSurface::sphere(2.0);
        let f = fundamental_forms(&s, &Vector3::new(0.0, 0.6, 0.8)).unwrap();
        assert!((f.first[0] - 4.0).abs() < 1e-13 && (f.first[2] - 4.0).abs() < 1e-13 && f.first[1].abs() < 1e-13);
        assert!((f.mean_curvature - 0.5).abs() < 1e-14);
        assert!((f.gauss_curvature - 0.25).abs() < 1e-14);
        assert!((f.distortion - 4.0).abs() < 1e-13);
    }

    #[test]
    fn prolate_spheroid_at_equator() {
        let s = AnalyticSurface::ellipsoid(2.0, 1.0, 1.0);
        let f = fundamental_forms(&s, &Vector3::new(0.0, 1.0, 0.0)).unwrap();
        assert!((f.principal[0] - 0.25).abs() < 1e-12, "{:?}", f.principal);
        assert!((f.principal[1] - 1.0).abs() < 1e-12);
        let d = f.directions.unwrap();
        // smaller curvature along the long axis
        assert!((d[0].x.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_map_is_reported() {
        let s = AnalyticSurface::ellipsoid(1.0, 1.0, 0.0);
        let err = fundamental_forms(&s, &Vector3::new(1.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, SnsError::DegenerateParametrization { .. }));
    }
}
