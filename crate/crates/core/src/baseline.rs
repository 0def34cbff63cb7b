//! Cotangent Laplacian with a lumped mass matrix, and comparisons between it
//! and the neural operator.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use log::warn;
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::colormap::colorize;
use crate::error::{contract, Result, SnsError};
use crate::fields::{FieldDomain, GeometryCache, LboForm, ScalarField};
use crate::mesh::{SphereLocator, TriMesh};
use crate::mesh::shapes::AnalyticSurface;
use crate::sns::SnsModel;

/// Cotangents are clamped to this magnitude.
pub const COT_CLAMP: f64 = 1e6;

/// Symmetric stiffness `K` (positive semi-definite, `K_ii = Σ_j w_ij`,
/// `K_ij = -w_ij`) in CSR form, and the lumped vertex masses.
#[derive(Debug, Clone)]
pub struct CotanOperator {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub mass: Vec<f64>,
    /// Number of clamped cotangents.
    pub clamped: usize,
}

fn cot(a: &Vector3<f64>, b: &Vector3<f64>) -> (f64, bool) {
    let c = a.dot(b) / a.cross(b).norm();
    if c.is_finite() && c.abs() <= COT_CLAMP {
        (c, false)
    } else {
        (if c.is_nan() { COT_CLAMP } else { c.signum() * COT_CLAMP }, true)
    }
}

/// Builds the operator of a closed triangle mesh.
pub fn build_cotan(mesh: &TriMesh) -> Result<CotanOperator> {
    let n = mesh.vertices.len();
    let mut edge_faces: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    let mut mass = vec![0.0; n];
    let mut clamped = 0;
    for (fi, f) in mesh.faces.iter().enumerate() {
        let area = mesh.face_area(fi);
        if !(area > 0.0) {
            return Err(contract(format!("face {fi} is degenerate")));
        }
        for k in 0..3 {
            let (i, j, o) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            *edge_faces.entry((i.min(j), i.max(j))).or_default() += 1;
            let (c, hit) = cot(&(mesh.vertices[i] - mesh.vertices[o]), &(mesh.vertices[j] - mesh.vertices[o]));
            if hit {
                clamped += 1;
                warn!("face {fi}: cotangent opposite edge ({i}, {j}) clamped");
            }
            let w = 0.5 * c;
            *rows[i].entry(j).or_default() -= w;
            *rows[j].entry(i).or_default() -= w;
            *rows[i].entry(i).or_default() += w;
            *rows[j].entry(j).or_default() += w;
            mass[f[k]] += area / 3.0;
        }
    }
    if let Some((e, _)) = edge_faces.iter().find(|(_, &c)| c != 2) {
        return Err(contract(format!("mesh is not closed and manifold at edge {e:?}")));
    }
    if let Some(i) = mass.iter().position(|m| !(*m > 0.0)) {
        return Err(contract(format!("vertex {i} has no incident area")));
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for r in rows {
        for (c, v) in r {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(CotanOperator { row_ptr, cols, vals, mass, clamped })
}

impl CotanOperator {
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    fn check(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(contract(format!("expected {} vertex values, got {}", self.len(), f.len())));
        }
        Ok(())
    }

    /// `K·f`
    pub fn stiffness_apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check(f)?;
        Ok((0..self.len())
            .into_par_iter()
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.vals[k] * f[self.cols[k]]).sum())
            .collect())
    }

    /// `M⁻¹·(-K)·f`, about `-2z` for `f = z` on the unit sphere.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        let kf = self.stiffness_apply(f)?;
        Ok(kf.iter().zip(&self.mass).map(|(k, m)| -k / m).collect())
    }

    /// `Σ_i M_ii·a_i·b_i`
    pub fn mass_inner(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(a.iter().zip(b).zip(&self.mass).map(|((x, y), m)| x * y * m).sum())
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// Largest `|K_ij - K_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.len() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                worst = worst.max((self.vals[k] - self.entry(self.cols[k], r)).abs());
            }
        }
        worst
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.len()).map(|r| self.vals[self.row_ptr[r]..self.row_ptr[r + 1]].iter().sum()).collect()
    }
}

/// One row of an error table.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub mesh_id: String,
    pub method: String,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub n_samples: usize,
}

impl ErrorRow {
    fn new(mesh_id: &str, method: &str, errors: &[f64]) -> Self {
        let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
        ErrorRow {
            mesh_id: mesh_id.into(),
            method: method.into(),
            mean_abs: abs.iter().sum::<f64>() / abs.len().max(1) as f64,
            max_abs: abs.iter().cloned().fold(0.0, f64::max),
            n_samples: abs.len(),
        }
    }
}

pub fn rows_to_csv(rows: &[ErrorRow]) -> String {
    let mut out = String::from("mesh_id,method,mean_abs,max_abs,n_samples\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.9e},{:.9e},{}", r.mesh_id, r.method, r.mean_abs, r.max_abs, r.n_samples);
    }
    out
}

/// A mesh of a family with the SNS fitted to it.
#[derive(Debug, Clone, Copy)]
pub struct MeshCase<'a> {
    pub id: &'a str,
    pub mesh: &'a TriMesh,
    pub model: &'a SnsModel,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ErrorRow>,
    /// `(name, mesh)` with per-vertex error colors.
    pub colored: Vec<(String, TriMesh)>,
}

impl Comparison {
    pub fn row(&self, mesh_id: &str, method: &str) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.mesh_id == mesh_id && r.method == method)
    }
}

/// Ground-truth LBO of an ambient field on the unit sphere at `ps`.
pub fn sphere_truth<F: ScalarField + ?Sized>(field: &F, ps: &[Vector3<f64>]) -> Result<Vec<f64>> {
    let unit: Vec<Vector3<f64>> = ps.iter().map(|p| p.normalize()).collect();
    let cache = GeometryCache::build(&AnalyticSurface::unit_sphere(), &unit, "unit-sphere")?;
    cache.lbo(field, FieldDomain::Ambient, LboForm::MeanCurv)
}

fn sphere_points(mesh: &TriMesh) -> Vec<Vector3<f64>> {
    match &mesh.sphere {
        Some(s) => s.clone(),
        None => mesh.vertices.iter().map(|v| v.normalize()).collect(),
    }
}

/// Cotan values of `field` at the mesh vertices, interpolated to sphere
/// points through the mesh's spherical embedding.
fn cotan_at(mesh: &TriMesh, lap: &[f64], ps: &[Vector3<f64>]) -> Result<Vec<f64>> {
    let with_sphere = if mesh.sphere.is_some() { mesh.clone() } else { mesh.clone().with_sphere(sphere_points(mesh))? };
    let loc = SphereLocator::new(&with_sphere)?;
    let hits = loc.locate_all(ps)?;
    Ok(hits
        .iter()
        .map(|c| {
            let f = with_sphere.faces[c.face];
            (0..3).map(|k| c.weights[k] * lap[f[k]]).sum()
        })
        .collect())
}

/// Compares the cotan and the neural LBO of an ambient `field` over a family
/// of meshes.
///
/// With `sphere_gt` every mesh is assumed to approximate the unit sphere and
/// both methods are scored against the analytic operator at the vertices.
/// Every pair of meshes is also scored for cross-mesh consistency on the
/// common sphere points `common`.
pub fn compare_lbo<F: ScalarField + ?Sized>(
    cases: &[MeshCase<'_>],
    field: &F,
    sphere_gt: bool,
    common: &[Vector3<f64>],
) -> Result<Comparison> {
    let mut rows = Vec::new();
    let mut colored = Vec::new();
    let mut on_common = Vec::with_capacity(cases.len());
    let mut vertex_errors = Vec::new();
    for case in cases {
        let op = build_cotan(case.mesh)?;
        let fv = field.values(&case.mesh.vertices)?;
        let cot_v = op.apply(&fv)?;
        let sp = sphere_points(case.mesh);
        let neural_v = GeometryCache::build(case.model, &sp, case.id)?.lbo(field, FieldDomain::Ambient, LboForm::DivGrad)?;
        if sphere_gt {
            let gt = sphere_truth(field, &case.mesh.vertices)?;
            let ec: Vec<f64> = cot_v.iter().zip(&gt).map(|(a, b)| a - b).collect();
            let en: Vec<f64> = neural_v.iter().zip(&gt).map(|(a, b)| a - b).collect();
            rows.push(ErrorRow::new(case.id, "cotan", &ec));
            rows.push(ErrorRow::new(case.id, "neural", &en));
            vertex_errors.push((case, "cotan", ec));
            vertex_errors.push((case, "neural", en));
        } else {
            vertex_errors.push((case, "cotan-lbo", cot_v.clone()));
            vertex_errors.push((case, "neural-lbo", neural_v));
        }
        let cot_c = cotan_at(case.mesh, &cot_v, common)?;
        let neural_c = GeometryCache::build(case.model, common, case.id)?.lbo(field, FieldDomain::Ambient, LboForm::DivGrad)?;
        on_common.push((cot_c, neural_c));
    }
    for a in 0..cases.len() {
        for b in a + 1..cases.len() {
            let id = format!("{}|{}", cases[a].id, cases[b].id);
            let dc: Vec<f64> = on_common[a].0.iter().zip(&on_common[b].0).map(|(x, y)| x - y).collect();
            let dn: Vec<f64> = on_common[a].1.iter().zip(&on_common[b].1).map(|(x, y)| x - y).collect();
            rows.push(ErrorRow::new(&id, "cotan-consistency", &dc));
            rows.push(ErrorRow::new(&id, "neural-consistency", &dn));
        }
    }
    let range = if sphere_gt {
        let hi = vertex_errors.iter().flat_map(|(_, _, e)| e.iter().map(|x| x.abs())).fold(0.0, f64::max);
        Some((0.0, hi))
    } else {
        None
    };
    for (case, method, values) in vertex_errors {
        let shown: Vec<f64> = if sphere_gt { values.iter().map(|x| x.abs()).collect() } else { values };
        let mut mesh = case.mesh.clone();
        mesh.colors = Some(colorize(&shown, range));
        colored.push((format!("{}-{}", case.id, method), mesh));
    }
    if rows.iter().any(|r| !r.mean_abs.is_finite() || !r.max_abs.is_finite()) {
        return Err(SnsError::DegenerateSurface("non-finite LBO error statistic".into()));
    }
    Ok(Comparison { rows, colored })
}
