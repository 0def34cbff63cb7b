//! Charts on the unit sphere, uniform sampling and area-weighted thinning.

use std::fmt::Write as _;

use log::warn;
use nalgebra::{Matrix3x2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{contract, Result, SnsError};
use crate::mlp::RNG_NAME;

/// Local orthonormal tangent frame at a sphere point.
///
/// The columns of `r` are `∂p/∂θ` and the unit `∂p/∂φ` of spherical polar
/// coordinates taken about `polar_axis`, so `(r[0], r[1], p)` is right-handed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartFrame {
    pub point: Vector3<f64>,
    pub polar_axis: usize,
    pub r: Matrix3x2<f64>,
}

impl ChartFrame {
    pub fn u(&self) -> Vector3<f64> {
        self.r.column(0).into_owned()
    }

    pub fn v(&self) -> Vector3<f64> {
        self.r.column(1).into_owned()
    }
}

/// The polar axis is the coordinate of smallest magnitude (ties go to the
/// lowest index), which keeps `sin θ ≥ √(2/3)`.
pub fn chart_frame(p: &Vector3<f64>) -> Result<ChartFrame> {
    let norm = p.norm();
    if !norm.is_finite() || (norm - 1.0).abs() >= 1e-9 {
        return Err(contract(format!("chart point must be unit length, |p| = {norm}")));
    }
    let mut axis = 0;
    for i in 1..3 {
        if p[i].abs() < p[axis].abs() {
            axis = i;
        }
    }
    // cyclic relabelling keeps the frame right-handed
    let ix = (axis + 1) % 3;
    let iy = (axis + 2) % 3;
    let (x, y, z) = (p[ix], p[iy], p[axis]);
    let sin_t = (x * x + y * y).sqrt();
    let cos_t = z;
    let (cos_f, sin_f) = (x / sin_t, y / sin_t);
    let local_u = [cos_t * cos_f, cos_t * sin_f, -sin_t];
    let local_v = [-sin_f, cos_f, 0.0];
    let mut r = Matrix3x2::zeros();
    for (col, local) in [local_u, local_v].iter().enumerate() {
        r[(ix, col)] = local[0];
        r[(iy, col)] = local[1];
        r[(axis, col)] = local[2];
    }
    Ok(ChartFrame { point: *p, polar_axis: axis, r })
}

/// Sphere samples with optional area-distortion weights and a keep mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: Vec<Vector3<f64>>,
    /// `√(EG − F²)` per point, empty until computed.
    pub distortions: Vec<f64>,
    pub seed: u64,
    pub target_count: usize,
    /// Empty until [`rejection_sample`] has run.
    pub kept: Vec<bool>,
    /// Number of keep probabilities that had to be clamped to 1.
    pub clamped: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points surviving rejection (all points if no mask is set).
    pub fn kept_points(&self) -> Vec<Vector3<f64>> {
        if self.kept.is_empty() {
            return self.points.clone();
        }
        self.points.iter().zip(&self.kept).filter(|(_, &k)| k).map(|(p, _)| *p).collect()
    }

    pub fn kept_count(&self) -> usize {
        if self.kept.is_empty() {
            self.points.len()
        } else {
            self.kept.iter().filter(|&&k| k).count()
        }
    }

    /// Monte Carlo area of the image surface, `(4π/M)·Σ d_i`.
    pub fn area_estimate(&self) -> Result<f64> {
        if self.distortions.len() != self.points.len() || self.points.is_empty() {
            return Err(contract("distortions not computed for this sample set"));
        }
        Ok(4.0 * std::f64::consts::PI * self.distortions.iter().sum::<f64>() / self.points.len() as f64)
    }

    /// Plain-text table: one header line, then `x y z d kept` per point.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# rng={} seed={} m={} n_target={} kept={} clamped={}",
            RNG_NAME,
            self.seed,
            self.points.len(),
            self.target_count,
            self.kept_count(),
            self.clamped
        );
        for (i, p) in self.points.iter().enumerate() {
            let d = self.distortions.get(i).copied().unwrap_or(f64::NAN);
            let k = self.kept.get(i).copied().unwrap_or(true) as u8;
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e} {:.17e} {}", p.x, p.y, p.z, d, k);
        }
        s
    }
}

/// `m` i.i.d. uniform points on the sphere: normalized standard normals.
pub fn uniform_sphere(m: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..m).map(|_| random_unit(&mut rng)).collect();
    SampleSet { points, distortions: Vec::new(), seed, target_count: m, kept: Vec::new(), clamped: 0 }
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Keeps point `k` with probability `min(1, d_k·N_target/Σd)`.
///
/// Uses a second stream of the sample set's generator so the mask is
/// reproducible from the seed alone.
pub fn rejection_sample(samples: &mut SampleSet, n_target: usize) -> Result<()> {
    if n_target == 0 {
        return Err(contract("n_target must be >= 1"));
    }
    if samples.distortions.len() != samples.points.len() {
        return Err(contract("distortions must be computed before rejection sampling"));
    }
    let total: f64 = samples.distortions.iter().sum();
    if !(total > 0.0) {
        return Err(SnsError::DegenerateSurface("all area distortions are zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(samples.seed);
    rng.set_stream(1);
    let mut clamped = 0;
    samples.kept = samples
        .distortions
        .iter()
        .map(|&d| {
            let mut q = d * n_target as f64 / total;
            if q > 1.0 {
                clamped += 1;
                q = 1.0;
            }
            rng.gen::<f64>() < q.max(0.0)
        })
        .collect();
    if clamped > 0 {
        warn!("rejection sampling clamped {clamped} keep probabilities to 1");
    }
    samples.clamped = clamped;
    samples.target_count = n_target;
    Ok(())
}

/// `(area/N)·Σ f_j g_j`, summed in sample order.
pub fn mc_inner_product(f: &[f64], g: &[f64], area: f64) -> Result<f64> {
    if f.len() != g.len() {
        return Err(contract("inner product operands differ in length"));
    }
    if f.is_empty() {
        return Err(contract("inner product of empty sample lists"));
    }
    let s: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
    Ok(area * s / f.len() as f64)
}
