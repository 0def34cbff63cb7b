//! Explicit-Euler heat flow of neural scalar fields and mean curvature flow of
//! the surface itself, each followed by a short MSE finetune of the network.

use nalgebra::{DMatrix, Vector3};

use crate::diffgeo::fundamental_forms_batch;
use crate::error::{contract, Result};
use crate::fields::{surface_gradient, FieldDomain, GeometryCache, LboForm, ScalarField, ScalarFieldModel};
use crate::fit::{finetune, finetune_mlp, FinetuneConfig, FinetuneReport};
use crate::sns::SnsModel;
use crate::sphere::uniform_sphere;

/// Largest step accepted by the explicit integrator.
pub const MAX_STEP: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub d: f64,
    pub n_steps: usize,
    pub finetune: FinetuneConfig,
    pub samples: usize,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { d: 1e-3, n_steps: 150, finetune: FinetuneConfig::default(), samples: 10_242, seed: 0 }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d <= MAX_STEP) {
            return Err(contract(format!("step d must lie in (0, {MAX_STEP}]")));
        }
        if self.n_steps == 0 || self.samples == 0 || self.finetune.max_epochs == 0 {
            return Err(contract("step, sample and finetune counts must be >= 1"));
        }
        if self.finetune.max_epochs > 100 {
            return Err(contract("at most 100 finetune epochs per step"));
        }
        Ok(())
    }

    pub fn sample_points(&self) -> Vec<Vector3<f64>> {
        uniform_sphere(self.samples, self.seed).points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatDiagnostics {
    pub energy_before: f64,
    pub energy_after: f64,
    pub mean_before: f64,
    pub mean_after: f64,
    pub finetune: FinetuneReport,
}

/// `(4π/M)·Σ d_j·|∇_Σh_j|²` over the cached uniform sphere samples.
pub fn dirichlet_energy<F: ScalarField + ?Sized>(field: &F, cache: &GeometryCache, domain: FieldDomain) -> Result<f64> {
    let jets = cache.field_jets(field, domain)?;
    let w = 4.0 * std::f64::consts::PI / cache.len() as f64;
    Ok(jets
        .iter()
        .zip(&cache.forms)
        .map(|(j, f)| w * f.distortion * surface_gradient(&j.grad, &f.normal).norm_squared())
        .sum())
}

/// Area-weighted mean of the field over the cached samples.
pub fn field_mean<F: ScalarField + ?Sized>(field: &F, cache: &GeometryCache) -> Result<f64> {
    let v = field.values(&cache.points)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (x, f) in v.iter().zip(&cache.forms) {
        num += x * f.distortion;
        den += f.distortion;
    }
    Ok(num / den)
}

/// One step `h ← h + d·Δ_Σh` of a sphere field on the cached surface.
pub fn heat_step(field: &ScalarFieldModel, cache: &GeometryCache, config: &FlowConfig) -> Result<(ScalarFieldModel, HeatDiagnostics)> {
    config.validate()?;
    let jets = cache.field_jets(field, FieldDomain::Sphere)?;
    let lap = cache.lbo_of_jets(&jets, LboForm::DivGrad)?;
    let energy_before = dirichlet_energy(field, cache, FieldDomain::Sphere)?;
    let mean_before = field_mean(field, cache)?;

    let x = crate::sns::points_matrix(&cache.points);
    let y = field.mlp.forward_batch(&x)?;
    let targets = DMatrix::from_fn(3, cache.len(), |r, c| y[(r, c)] + config.d * lap[c]);
    let (mlp, report) = finetune_mlp(&field.mlp, 1.0, &cache.points, &targets, &config.finetune)?;
    let mut next = field.clone();
    next.mlp = mlp;

    let energy_after = dirichlet_energy(&next, cache, FieldDomain::Sphere)?;
    let mean_after = field_mean(&next, cache)?;
    Ok((next, HeatDiagnostics { energy_before, energy_after, mean_before, mean_after, finetune: report }))
}

/// Runs `config.n_steps` heat steps; `on_step` sees each new field.
pub fn heat_flow(
    field: &ScalarFieldModel,
    model: &SnsModel,
    config: &FlowConfig,
    mut on_step: impl FnMut(usize, &ScalarFieldModel, &HeatDiagnostics) -> Result<()>,
) -> Result<(ScalarFieldModel, Vec<HeatDiagnostics>)> {
    config.validate()?;
    let cache = GeometryCache::build(model, &config.sample_points(), &model.provenance.source)?;
    let mut cur = field.clone();
    let mut diags = Vec::with_capacity(config.n_steps);
    for step in 1..=config.n_steps {
        let (next, diag) = heat_step(&cur, &cache, config)?;
        on_step(step, &next, &diag)?;
        cur = next;
        diags.push(diag);
    }
    Ok((cur, diags))
}

#[derive(Debug, Clone, PartialEq)]
pub struct McfDiagnostics {
    /// Mean distance of the sampled surface points to their centroid.
    pub mean_radius: f64,
    /// Monte Carlo area on the step's sample points.
    pub area: f64,
    pub finetune: FinetuneReport,
}

/// Mean `|S(p) - c|` with `c` the mean of the sampled points.
pub fn mean_radius(points: &[Vector3<f64>]) -> f64 {
    let c = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    points.iter().map(|x| (x - c).norm()).sum::<f64>() / points.len() as f64
}

/// One step `S ← S - d·H·n` at the sphere points `ps`.
pub fn mcf_step(model: &SnsModel, ps: &[Vector3<f64>], config: &FlowConfig) -> Result<(SnsModel, McfDiagnostics)> {
    config.validate()?;
    let forms = fundamental_forms_batch(model, ps)?;
    let targets: Vec<Vector3<f64>> =
        forms.iter().map(|f| f.position - f.normal * (config.d * f.mean_curvature)).collect();
    let (next, report) = finetune(model, ps, &targets, &config.finetune)?;
    let after = fundamental_forms_batch(&next, ps)?;
    let positions: Vec<Vector3<f64>> = after.iter().map(|f| f.position).collect();
    let area = 4.0 * std::f64::consts::PI * after.iter().map(|f| f.distortion).sum::<f64>() / ps.len() as f64;
    Ok((next, McfDiagnostics { mean_radius: mean_radius(&positions), area, finetune: report }))
}

/// Runs `config.n_steps` MCF steps on a fixed sample set.
pub fn mcf_flow(
    model: &SnsModel,
    config: &FlowConfig,
    mut on_step: impl FnMut(usize, &SnsModel, &McfDiagnostics) -> Result<()>,
) -> Result<(SnsModel, Vec<McfDiagnostics>)> {
    config.validate()?;
    let ps = config.sample_points();
    let mut cur = model.clone();
    let mut diags = Vec::with_capacity(config.n_steps);
    for step in 1..=config.n_steps {
        let (next, diag) = mcf_step(&cur, &ps, config)?;
        on_step(step, &next, &diag)?;
        cur = next;
        diags.push(diag);
    }
    Ok((cur, diags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_size_guard() {
        let c = FlowConfig { d: 0.05, ..FlowConfig::default() };
        assert!(c.validate().is_err());
        let c = FlowConfig { finetune: FinetuneConfig { max_epochs: 101, ..FinetuneConfig::default() }, ..FlowConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_field_is_a_fixed_point() {
        let model = SnsModel::identity(8, 2).unwrap();
        let ps = uniform_sphere(200, 1).points;
        let cache = GeometryCache::build(&model, &ps, "id").unwrap();
        let f = ScalarFieldModel::linear(ScalarFieldModel::default_spec(), [0.0; 3], 0.7).unwrap();
        let cfg = FlowConfig { samples: 200, ..FlowConfig::default() };
        let (g, diag) = heat_step(&f, &cache, &cfg).unwrap();
        let before = f.values(&ps).unwrap();
        let after = g.values(&ps).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(diag.energy_before < 1e-20);
    }
}
