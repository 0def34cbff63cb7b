use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;
use nalgebra::Vector3;

use super::TriMesh;
use crate::error::{contract, Result};

/// A surface point found for a sphere point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub point: Vector3<f64>,
    pub face: usize,
    pub weights: [f64; 3],
    /// Flat outward normal of the surface triangle.
    pub normal: Vector3<f64>,
}

/// Point location on the spherical image of a mesh.
///
/// Faces are bucketed into a sparse uniform grid over the bounding ball of
/// each spherical triangle.
#[derive(Debug)]
pub struct SphereLocator {
    mesh: TriMesh,
    sphere: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    cell: f64,
    grid: HashMap<[i32; 3], Vec<u32>>,
    fallbacks: AtomicUsize,
}

const INSIDE_EPS: f64 = 1e-12;
const SNAP: f64 = 1e-14;

impl SphereLocator {
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        let sphere = mesh.sphere.clone().ok_or_else(|| contract("mesh has no sphere positions"))?;
        mesh.validate()?;
        let normals: Vec<_> = (0..mesh.faces.len()).map(|f| mesh.face_normal(f)).collect();

        let caps: Vec<(Vector3<f64>, f64)> = mesh
            .faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| sphere[i]);
                let center = (a + b + c).normalize();
                let r = [a, b, c].iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
                (center, r)
            })
            .collect();
        let mean_r = caps.iter().map(|c| c.1).sum::<f64>() / caps.len().max(1) as f64;
        let cell = (2.0 * mean_r).clamp(2.0 / 256.0, 2.0);

        let mut grid: HashMap<[i32; 3], Vec<u32>> = HashMap::new();
        for (fi, (center, r)) in caps.iter().enumerate() {
            let lo = (center.add_scalar(-r - 1e-9) / cell).map(|x| x.floor() as i32);
            let hi = (center.add_scalar(r + 1e-9) / cell).map(|x| x.floor() as i32);
            for i in lo.x..=hi.x {
                for j in lo.y..=hi.y {
                    for k in lo.z..=hi.z {
                        grid.entry([i, j, k]).or_default().push(fi as u32);
                    }
                }
            }
        }
        Ok(SphereLocator { mesh: mesh.clone(), sphere, normals, cell, grid, fallbacks: AtomicUsize::new(0) })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    /// Number of queries that needed the brute-force fallback so far.
    pub fn fallback_count(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }

    /// Projective barycentrics of `p` with respect to a spherical triangle.
    fn weights(&self, f: usize, p: &Vector3<f64>) -> Option<[f64; 3]> {
        let [a, b, c] = self.mesh.faces[f].map(|i| self.sphere[i]);
        let det = a.dot(&b.cross(&c));
        let wa = p.dot(&b.cross(&c)) / det;
        let wb = a.dot(&p.cross(&c)) / det;
        let wc = a.dot(&b.cross(p)) / det;
        let s = wa + wb + wc;
        if !(s > 0.0) {
            return None;
        }
        Some([wa / s, wb / s, wc / s])
    }

    fn finish(&self, f: usize, w: [f64; 3]) -> Correspondence {
        let mut w = w.map(|x| if x.abs() < SNAP { 0.0 } else { x });
        if let Some(k) = w.iter().position(|&x| (x - 1.0).abs() < SNAP) {
            w = [0.0; 3];
            w[k] = 1.0;
        }
        let s: f64 = w.iter().sum();
        let w = w.map(|x| x / s);
        let [a, b, c] = self.mesh.face_vertices(f);
        let point = if w.contains(&1.0) { [a, b, c][w.iter().position(|&x| x == 1.0).unwrap()] } else { a * w[0] + b * w[1] + c * w[2] };
        Correspondence { point, face: f, weights: w, normal: self.normals[f] }
    }

    pub fn locate(&self, p: &Vector3<f64>) -> Result<Correspondence> {
        if (p.norm() - 1.0).abs() >= 1e-9 {
            return Err(contract("correspond expects a unit vector"));
        }
        let key = (p / self.cell).map(|x| x.floor() as i32);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        if let Some(cands) = self.grid.get(&[key.x, key.y, key.z]) {
            for &f in cands {
                if let Some(w) = self.weights(f as usize, p) {
                    let m = w[0].min(w[1]).min(w[2]);
                    if m >= -INSIDE_EPS {
                        return Ok(self.finish(f as usize, w));
                    }
                    if best.map_or(true, |b| m > b.2) {
                        best = Some((f as usize, w, m));
                    }
                }
            }
        }
        self.fallbacks.fetch_add(1, Ordering::Relaxed);
        for f in 0..self.mesh.faces.len() {
            if let Some(w) = self.weights(f, p) {
                let m = w[0].min(w[1]).min(w[2]);
                if best.map_or(true, |b| m > b.2) {
                    best = Some((f, w, m));
                }
            }
        }
        let (f, w, m) = best.ok_or_else(|| contract("no face faces the query point"))?;
        if m < -INSIDE_EPS {
            warn!("point location fell back to nearest face {f} (min weight {m:e})");
            let clamped = w.map(|x| x.max(0.0));
            return Ok(self.finish(f, clamped));
        }
        Ok(self.finish(f, w))
    }

    pub fn locate_all(&self, ps: &[Vector3<f64>]) -> Result<Vec<Correspondence>> {
        use rayon::prelude::*;
        ps.par_iter().map(|p| self.locate(p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn vertices_map_to_themselves() {
        let m = icosphere(2).scaled([1.5, 1.0, 0.7]).unwrap();
        let loc = SphereLocator::new(&m).unwrap();
        for (i, s) in m.sphere.as_ref().unwrap().iter().enumerate() {
            let c = loc.locate(s).unwrap();
            assert_eq!(c.point, m.vertices[i]);
            assert!(c.weights.contains(&1.0));
        }
    }

    #[test]
    fn face_centers_get_equal_weights() {
        let m = icosphere(2).scaled([1.5, 1.0, 0.7]).unwrap();
        let loc = SphereLocator::new(&m).unwrap();
        let s = m.sphere.as_ref().unwrap();
        for (fi, f) in m.faces.iter().enumerate() {
            let p = (s[f[0]] + s[f[1]] + s[f[2]]).normalize();
            let c = loc.locate(&p).unwrap();
            assert_eq!(c.face, fi);
            for w in c.weights {
                assert!((w - 1.0 / 3.0).abs() < 1e-12);
            }
            let [a, b, cc] = m.face_vertices(fi);
            assert!((c.point - (a + b + cc) / 3.0).norm() < 1e-12);
        }
        assert_eq!(loc.fallback_count(), 0);
    }
}
