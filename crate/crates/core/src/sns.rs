//! Spherical neural surfaces: a 3→3 network restricted to the unit sphere.

use std::f64::consts::LN_2;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::checkpoint::Checkpoint;
use crate::error::{contract, Result, SnsError};
use crate::mlp::{Mlp, MlpParams, MlpSpec};
use crate::surface::{par_chunked, Surface, SurfaceJet};

pub const CHART_POLICY: &str = "polar-argmin";
pub const CHECKPOINT_KIND: &str = "sns-model";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    /// e.g. `mesh:bunny.obj`, `analytic:star`, `identity`
    pub source: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnsModel {
    pub mlp: Mlp,
    /// Multiplies every output.
    pub area_scale: f64,
    pub provenance: Provenance,
    pub chart_policy: String,
}

pub(crate) fn points_matrix(ps: &[Vector3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(3, ps.len(), |r, c| ps[c][r])
}

/// Parameters whose network is `x ↦ A·x + c` exactly up to rounding.
///
/// The blocks get zero weights and biases, so each adds the constant
/// `softplus(0) = ln 2`; the projection bias removes it again.
pub fn affine_params(spec: &MlpSpec, a: &DMatrix<f64>, c: &[f64]) -> Result<MlpParams> {
    spec.validate()?;
    if a.shape() != (spec.output_dim, spec.input_dim) || c.len() != spec.output_dim {
        return Err(contract("affine map does not match the network dimensions"));
    }
    if spec.width < spec.input_dim {
        return Err(contract("width must be at least the input dimension"));
    }
    let mut p = MlpParams::zeros(spec);
    for i in 0..spec.input_dim {
        p.lift.weight[(i, i)] = 1.0;
    }
    let drift = spec.n_blocks as f64 * LN_2;
    for o in 0..spec.output_dim {
        let mut row_sum = 0.0;
        for i in 0..spec.input_dim {
            p.proj.weight[(o, i)] = a[(o, i)];
            row_sum += a[(o, i)];
        }
        p.proj.bias[o] = c[o] - row_sum * drift;
    }
    Ok(p)
}

impl SnsModel {
    pub fn new(mlp: Mlp, provenance: Provenance) -> Result<Self> {
        if mlp.spec.input_dim != 3 || mlp.spec.output_dim != 3 {
            return Err(contract("a spherical neural surface maps R^3 to R^3"));
        }
        Ok(SnsModel { mlp, area_scale: 1.0, provenance, chart_policy: CHART_POLICY.into() })
    }

    /// Freshly initialized network.
    pub fn init(width: usize, n_blocks: usize, seed: u64, source: &str) -> Result<Self> {
        let mlp = Mlp::new(MlpSpec::new(3, 3, width, n_blocks), seed)?;
        Self::new(mlp, Provenance { source: source.into(), seed })
    }

    /// The unit sphere, `S(p) = p`.
    pub fn identity(width: usize, n_blocks: usize) -> Result<Self> {
        let spec = MlpSpec::new(3, 3, width, n_blocks);
        let params = affine_params(&spec, &DMatrix::identity(3, 3), &[0.0; 3])?;
        Self::new(Mlp::from_params(spec, params, 0)?, Provenance { source: "identity".into(), seed: 0 })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.mlp.spec
    }

    pub fn params(&self) -> &MlpParams {
        &self.mlp.params
    }

    pub fn with_params(&self, params: MlpParams) -> Result<Self> {
        let mut out = self.clone();
        out.mlp = Mlp::from_params(self.mlp.spec, params, self.mlp.seed)?;
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(CHECKPOINT_KIND, self.mlp.clone())
            .with_meta("area_scale", format!("{:.16e}", self.area_scale))
            .with_meta("chart_policy", &self.chart_policy)
            .with_meta("source", &self.provenance.source)
            .with_meta("fit_seed", self.provenance.seed)
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.kind != CHECKPOINT_KIND {
            return Err(contract(format!("checkpoint holds a `{}`, not an SNS model", c.kind)));
        }
        let area_scale = c.meta_f64("area_scale")?;
        if !(area_scale > 0.0 && area_scale.is_finite()) {
            return Err(contract("area_scale must be positive"));
        }
        let seed = c.meta("fit_seed").and_then(|s| s.parse().ok()).unwrap_or(c.mlp.seed);
        let mut m = Self::new(
            c.mlp.clone(),
            Provenance { source: c.meta("source").unwrap_or("unknown").to_string(), seed },
        )?;
        m.area_scale = area_scale;
        if let Some(policy) = c.meta("chart_policy") {
            if policy != CHART_POLICY {
                return Err(contract(format!("unsupported chart policy `{policy}`")));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path, sidecar: bool) -> Result<()> {
        self.to_checkpoint().save(path, sidecar)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    fn jets_chunk(&self, ps: &[Vector3<f64>]) -> Result<Vec<SurfaceJet>> {
        let so = self.mlp.second_order_batch(&points_matrix(ps))?;
        let s = self.area_scale;
        Ok((0..ps.len())
            .map(|c| SurfaceJet {
                value: Vector3::from_fn(|i, _| so.values[(i, c)] * s),
                jacobian: Matrix3::from_fn(|i, j| so.jacobians[c][(i, j)] * s),
                hessians: std::array::from_fn(|i| Matrix3::from_fn(|a, b| so.hessians[c][i][(a, b)] * s)),
            })
            .collect())
    }
}

impl Surface for SnsModel {
    fn position(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.positions(std::slice::from_ref(p))?[0])
    }

    fn jet(&self, p: &Vector3<f64>) -> Result<SurfaceJet> {
        Ok(self.jets_chunk(std::slice::from_ref(p))?[0])
    }

    fn positions(&self, ps: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        par_chunked(ps, |chunk| {
            let y = self.mlp.forward_batch(&points_matrix(chunk))?;
            Ok((0..chunk.len()).map(|c| Vector3::from_fn(|i, _| y[(i, c)] * self.area_scale)).collect())
        })
    }

    fn jacobians(&self, ps: &[Vector3<f64>]) -> Result<Vec<(Vector3<f64>, Matrix3<f64>)>> {
        par_chunked(ps, |chunk| {
            let (y, jacs) = self.mlp.jacobian_batch(&points_matrix(chunk))?;
            let s = self.area_scale;
            Ok((0..chunk.len())
                .map(|c| (Vector3::from_fn(|i, _| y[(i, c)] * s), Matrix3::from_fn(|i, j| jacs[c][(i, j)] * s)))
                .collect())
        })
    }

    fn jets(&self, ps: &[Vector3<f64>]) -> Result<Vec<SurfaceJet>> {
        par_chunked(ps, |chunk| self.jets_chunk(chunk))
    }
}

/// Checks every entry of a sample/target list is finite.
pub(crate) fn check_targets(targets: &[Vector3<f64>]) -> Result<()> {
    match targets.iter().position(|t| !t.iter().all(|x| x.is_finite())) {
        Some(i) => Err(SnsError::at(i, contract("non-finite target"))),
        None => Ok(()),
    }
}
