//! Closed-form genus-0 test shapes.
//!
//! Each shape is written once against [`Real`] and evaluated on plain floats
//! for positions or on [`Jet`]s for exact Jacobians and Hessians. The maps are
//! defined on all of R^3 (radial shapes scale with |x|), which gives the
//! ambient extension the geometry code expects.
//!
//! The radial star family `ρ(p)·p` with `ρ = 1 + A·sin²θ·sin(mθ)·sin(mφ)` is a
//! stand-in for hand-designed benchmark shapes; its ground truths always come
//! from its own derivatives, never from tabulated values.

use nalgebra::{Matrix3, Vector3};

use crate::error::{contract, Result, SnsError};
use crate::jet::{Jet, Real};
use crate::surface::{Surface, SurfaceJet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    Sphere { radius: f64 },
    Ellipsoid { axes: [f64; 3] },
    RadialStar { amplitude: f64, frequency: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSurface {
    pub name: String,
    pub kind: ShapeKind,
}

impl AnalyticSurface {
    pub fn unit_sphere() -> Self {
        AnalyticSurface { name: "sphere".into(), kind: ShapeKind::Sphere { radius: 1.0 } }
    }

    pub fn sphere(radius: f64) -> Self {
        AnalyticSurface { name: format!("sphere-r{radius}"), kind: ShapeKind::Sphere { radius } }
    }

    pub fn ellipsoid(a: f64, b: f64, c: f64) -> Self {
        AnalyticSurface { name: format!("ellipsoid-{a}-{b}-{c}"), kind: ShapeKind::Ellipsoid { axes: [a, b, c] } }
    }

    pub fn radial_star(amplitude: f64, frequency: f64) -> Self {
        AnalyticSurface {
            name: format!("star-a{amplitude}-m{frequency}"),
            kind: ShapeKind::RadialStar { amplitude, frequency },
        }
    }

    /// Looks up a catalog entry (`sphere`, `sphere2`, `ellipsoid`, `star`,
    /// `star-soft`) or a parametrized `star:<A>:<m>`.
    pub fn by_name(name: &str) -> Result<Self> {
        if let Some(rest) = name.strip_prefix("star:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() == 2 {
                if let (Ok(a), Ok(m)) = (parts[0].parse(), parts[1].parse()) {
                    return Ok(Self::radial_star(a, m));
                }
            }
            return Err(contract(format!("bad star spec `{name}`, expected star:<A>:<m>")));
        }
        analytic_shapes()
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| contract(format!("unknown analytic shape `{name}`")))
    }

    pub fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3] {
        match self.kind {
            ShapeKind::Sphere { radius } => x.map(|c| c * radius),
            ShapeKind::Ellipsoid { axes } => [x[0] * axes[0], x[1] * axes[1], x[2] * axes[2]],
            ShapeKind::RadialStar { amplitude, frequency } => {
                let rho = star_radius(x, amplitude, frequency);
                x.map(|c| c * rho)
            }
        }
    }
}

fn star_radius<T: Real>(x: [T; 3], amplitude: f64, m: f64) -> T {
    let rxy2 = x[0] * x[0] + x[1] * x[1];
    let r2 = rxy2 + x[2] * x[2];
    let sin2 = rxy2 / r2;
    let theta = rxy2.sqrt().atan2(x[2]);
    let phi = x[1].atan2(x[0]);
    sin2 * (theta * m).sin() * (phi * m).sin() * amplitude + 1.0
}

/// The built-in shapes.
pub fn analytic_shapes() -> Vec<AnalyticSurface> {
    let mut star = AnalyticSurface::radial_star(0.4, 6.0);
    star.name = "star".into();
    let mut soft = AnalyticSurface::radial_star(0.15, 3.0);
    soft.name = "star-soft".into();
    let mut sphere2 = AnalyticSurface::sphere(2.0);
    sphere2.name = "sphere2".into();
    let mut ell = AnalyticSurface::ellipsoid(2.0, 1.0, 1.0);
    ell.name = "ellipsoid".into();
    vec![AnalyticSurface::unit_sphere(), sphere2, ell, star, soft]
}

impl Surface for AnalyticSurface {
    fn position(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        let y = self.eval([p.x, p.y, p.z]);
        let v = Vector3::new(y[0], y[1], y[2]);
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(SnsError::NumericalOverflow { layer: self.name.clone() })
        }
    }

    fn jet(&self, p: &Vector3<f64>) -> Result<SurfaceJet> {
        let y = self.eval(Jet::seed(p));
        let value = Vector3::new(y[0].v, y[1].v, y[2].v);
        let jacobian = Matrix3::from_rows(&[y[0].g.transpose(), y[1].g.transpose(), y[2].g.transpose()]);
        let hessians = [y[0].h, y[1].h, y[2].h];
        if !(value.iter().chain(jacobian.iter()).chain(hessians.iter().flat_map(|h| h.iter())).all(|c| c.is_finite())) {
            return Err(SnsError::NumericalOverflow { layer: self.name.clone() });
        }
        Ok(SurfaceJet { value, jacobian, hessians })
    }
}

/// Largest relative disagreement between the exact Jacobian/Hessians and
/// central differences at `probes` random sphere points. Used as a C² probe.
pub fn fd_smoothness_probe<S: Surface>(surface: &S, probes: usize, seed: u64) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let p = crate::sphere::random_unit(&mut rng);
        let j = surface.jet(&p)?;
        for a in 0..3 {
            let mut e = Vector3::zeros();
            e[a] = h;
            let fp = surface.jet(&(p + e))?;
            let fm = surface.jet(&(p - e))?;
            let dv = (fp.value - fm.value) / (2.0 * h);
            let scale_j = 1.0 + j.jacobian.abs().max();
            worst = worst.max((dv - j.jacobian.column(a)).abs().max() / scale_j);
            let dj = (fp.jacobian - fm.jacobian) / (2.0 * h);
            let scale_h = 1.0 + j.hessians.iter().map(|m| m.abs().max()).fold(0.0, f64::max);
            for i in 0..3 {
                let col: Vector3<f64> = j.hessians[i].column(a).into_owned();
                worst = worst.max((dj.row(i).transpose() - col).abs().max() / scale_h);
            }
        }
    }
    Ok(worst)
}
