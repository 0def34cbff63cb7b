//! Twice-differentiable maps from the unit sphere into R^3.
//!
//! Everything that computes geometry takes a [`Surface`]: neural models,
//! closed-form shapes and the wrappers used by the invariance checks all go
//! through the same code path.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Result, SnsError};

/// Value, ambient Jacobian and per-component Hessians of a map at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceJet {
    pub value: Vector3<f64>,
    /// `jacobian[(i, j)] = ∂S_i/∂x_j`
    pub jacobian: Matrix3<f64>,
    /// `hessians[i]` is the Hessian of `S_i`.
    pub hessians: [Matrix3<f64>; 3],
}

impl SurfaceJet {
    /// `Σ_i e_i · aᵀ Hess(S_i) b`
    pub fn second_derivative(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| a.dot(&(self.hessians[i] * b)))
    }
}

/// Chunk size for batched evaluation.
pub(crate) const CHUNK: usize = 512;

pub trait Surface: Send + Sync {
    fn position(&self, p: &Vector3<f64>) -> Result<Vector3<f64>>;

    fn jet(&self, p: &Vector3<f64>) -> Result<SurfaceJet>;

    fn positions(&self, ps: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        ps.iter().map(|p| self.position(p)).collect()
    }

    /// Values and ambient Jacobians.
    fn jacobians(&self, ps: &[Vector3<f64>]) -> Result<Vec<(Vector3<f64>, Matrix3<f64>)>> {
        ps.iter().map(|p| self.jet(p).map(|j| (j.value, j.jacobian))).collect()
    }

    fn jets(&self, ps: &[Vector3<f64>]) -> Result<Vec<SurfaceJet>> {
        ps.iter().map(|p| self.jet(p)).collect()
    }
}

impl<S: Surface + ?Sized> Surface for &S {
    fn position(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        (**self).position(p)
    }
    fn jet(&self, p: &Vector3<f64>) -> Result<SurfaceJet> {
        (**self).jet(p)
    }
    fn positions(&self, ps: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        (**self).positions(ps)
    }
    fn jacobians(&self, ps: &[Vector3<f64>]) -> Result<Vec<(Vector3<f64>, Matrix3<f64>)>> {
        (**self).jacobians(ps)
    }
    fn jets(&self, ps: &[Vector3<f64>]) -> Result<Vec<SurfaceJet>> {
        (**self).jets(ps)
    }
}

/// Order-preserving chunked map over points, parallel across chunks.
pub(crate) fn par_chunked<T: Send>(
    ps: &[Vector3<f64>],
    f: impl Fn(&[Vector3<f64>]) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    let parts: Vec<Result<Vec<T>>> = ps
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            f(chunk).map_err(|e| match e {
                SnsError::AtPoint { index, source } => SnsError::AtPoint { index: index + ci * CHUNK, source },
                other => other,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(ps.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// `p ↦ Q·S(p) + t` for a rotation `Q`.
#[derive(Debug, Clone)]
pub struct RigidMotion<S> {
    pub inner: S,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl<S: Surface> RigidMotion<S> {
    pub fn new(inner: S, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidMotion { inner, rotation, translation }
    }

    fn map_jet(&self, j: SurfaceJet) -> SurfaceJet {
        let q = &self.rotation;
        let hessians = std::array::from_fn(|i| {
            (0..3).fold(Matrix3::zeros(), |acc, k| acc + j.hessians[k] * q[(i, k)])
        });
        SurfaceJet { value: q * j.value + self.translation, jacobian: q * j.jacobian, hessians }
    }
}

impl<S: Surface> Surface for RigidMotion<S> {
    fn position(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.rotation * self.inner.position(p)? + self.translation)
    }
    fn jet(&self, p: &Vector3<f64>) -> Result<SurfaceJet> {
        Ok(self.map_jet(self.inner.jet(p)?))
    }
    fn positions(&self, ps: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        Ok(self.inner.positions(ps)?.into_iter().map(|x| self.rotation * x + self.translation).collect())
    }
    fn jacobians(&self, ps: &[Vector3<f64>]) -> Result<Vec<(Vector3<f64>, Matrix3<f64>)>> {
        Ok(self
            .inner
            .jacobians(ps)?
            .into_iter()
            .map(|(x, j)| (self.rotation * x + self.translation, self.rotation * j))
            .collect())
    }
    fn jets(&self, ps: &[Vector3<f64>]) -> Result<Vec<SurfaceJet>> {
        Ok(self.inner.jets(ps)?.into_iter().map(|j| self.map_jet(j)).collect())
    }
}

/// `p ↦ s·S(p)`
#[derive(Debug, Clone)]
pub struct Scaled<S> {
    pub inner: S,
    pub scale: f64,
}

impl<S: Surface> Surface for Scaled<S> {
    fn position(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.inner.position(p)? * self.scale)
    }
    fn jet(&self, p: &Vector3<f64>) -> Result<SurfaceJet> {
        let j = self.inner.jet(p)?;
        Ok(scale_jet(j, self.scale))
    }
    fn jets(&self, ps: &[Vector3<f64>]) -> Result<Vec<SurfaceJet>> {
        Ok(self.inner.jets(ps)?.into_iter().map(|j| scale_jet(j, self.scale)).collect())
    }
}

pub(crate) fn scale_jet(j: SurfaceJet, s: f64) -> SurfaceJet {
    SurfaceJet { value: j.value * s, jacobian: j.jacobian * s, hessians: j.hessians.map(|h| h * s) }
}

/// Rotation about a unit axis by `angle` (Rodrigues).
pub fn rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}
