//! Triangle meshes, icospheres, star-shaped spherical embeddings and the
//! sphere-to-mesh correspondence used when fitting.

mod correspond;
pub mod io;
pub mod shapes;

use std::collections::{HashMap, HashSet};

use nalgebra::Vector3;

use crate::error::{contract, Result, SnsError};
use crate::surface::Surface;

pub use correspond::{Correspondence, SphereLocator};
pub use shapes::{analytic_shapes, AnalyticSurface, ShapeKind};

/// Smallest face area accepted.
pub const MIN_FACE_AREA: f64 = 1e-14;
/// Smallest `det[a, b, c]` of a positively oriented spherical triangle.
pub const MIN_SPHERICAL_DET: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    /// Counter-clockwise seen from outside.
    pub faces: Vec<[usize; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
    pub sphere: Option<Vec<Vector3<f64>>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriMesh { vertices, faces, colors: None, sphere: None };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(v) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(contract(format!("vertex {v} is not finite")));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(contract(format!("face {fi} references a vertex out of range ({n} vertices)")));
            }
            if self.face_area(fi) <= MIN_FACE_AREA {
                return Err(SnsError::DegenerateSurface(format!("face {fi} has area below {MIN_FACE_AREA:e}")));
            }
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(contract(format!("{} colors for {n} vertices", c.len())));
            }
        }
        if let Some(s) = &self.sphere {
            if s.len() != n {
                return Err(contract(format!("{} sphere positions for {n} vertices", s.len())));
            }
            if let Some(i) = s.iter().position(|p| (p.norm() - 1.0).abs() >= 1e-9) {
                return Err(contract(format!("sphere position {i} is not unit length")));
            }
            let flipped = self.flipped_spherical_faces(s);
            if !flipped.is_empty() {
                return Err(SnsError::NotStarShaped { faces: flipped });
            }
        }
        Ok(())
    }

    pub fn face_vertices(&self, f: usize) -> [Vector3<f64>; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    /// Cross product of the two edges from the first corner (twice the area).
    pub fn face_cross(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_vertices(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        self.face_cross(f).normalize()
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Mean of the vertex positions.
    pub fn centroid(&self) -> Vector3<f64> {
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len().max(1) as f64
    }

    pub fn edge_count(&self) -> usize {
        let mut edges = HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// Faces whose spherical image is flipped or degenerate.
    pub fn flipped_spherical_faces(&self, sphere: &[Vector3<f64>]) -> Vec<usize> {
        self.faces
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                let [a, b, c] = f.map(|i| sphere[i]);
                !(a.dot(&b.cross(&c)) > MIN_SPHERICAL_DET)
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Attaches sphere positions after checking them.
    pub fn with_sphere(mut self, sphere: Vec<Vector3<f64>>) -> Result<Self> {
        self.sphere = Some(sphere);
        self.validate()?;
        Ok(self)
    }

    /// Same connectivity with every vertex moved by `f`.
    pub fn map_vertices(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.vertices = self.vertices.iter().map(f).collect();
        out.validate()?;
        Ok(out)
    }

    pub fn scaled(&self, s: [f64; 3]) -> Result<Self> {
        self.map_vertices(|v| Vector3::new(v.x * s[0], v.y * s[1], v.z * s[2]))
    }
}

/// Subdivided icosahedron projected to the unit sphere, with `10·4^level + 2`
/// vertices. Vertices of level `l` are the first vertices of level `l + 1`.
pub fn icosphere(level: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vector3<f64>>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push((vertices[a] + vertices[b]).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let sphere = vertices.clone();
    TriMesh { vertices, faces, colors: None, sphere: Some(sphere) }
}

/// Radial embedding `normalize(v - centroid)`.
pub fn embed_star_shaped(mesh: &TriMesh) -> Result<TriMesh> {
    let c = mesh.centroid();
    let mut sphere = Vec::with_capacity(mesh.vertices.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let d = v - c;
        let n = d.norm();
        if !(n > 1e-12) {
            return Err(SnsError::DegenerateSurface(format!("vertex {i} coincides with the centroid")));
        }
        sphere.push(d / n);
    }
    let flipped = mesh.flipped_spherical_faces(&sphere);
    if !flipped.is_empty() {
        return Err(SnsError::NotStarShaped { faces: flipped });
    }
    let mut out = mesh.clone();
    out.sphere = Some(sphere);
    Ok(out)
}

/// Icosphere of the given level pushed through `surface`, keeping the sphere
/// vertices as the embedding.
pub fn mesh_from_surface<S: Surface>(surface: &S, level: usize) -> Result<TriMesh> {
    let mut mesh = icosphere(level);
    mesh.vertices = surface.positions(&mesh.vertices)?;
    mesh.validate()?;
    Ok(mesh)
}
