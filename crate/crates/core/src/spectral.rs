//! Lowest Laplace–Beltrami eigenmodes by sequential Rayleigh-quotient
//! minimization over neural scalar fields.
//!
//! Mode `i` is a [`ScalarFieldModel`] `g` on the sphere; the eigenfunction is
//! the implicit field `h` with `h ∘ S = g`, so `∇_Σh = P·J⁻ᵀ·∇g` with
//! `P = I - nnᵀ`. The per-sample matrices `P·J⁻ᵀ` are computed once for the
//! frozen sample set of each mode.

use std::f64::consts::PI;

use log::{info, warn};
use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::diffgeo::surface_samples;
use crate::error::{contract, Result, SnsError};
use crate::fields::{implicit_gradient, FieldDomain, GeometryCache, LboForm, ScalarField, ScalarFieldModel};
use crate::mlp::{Mlp, MlpSpec, OptimizerState, RmsProp};
use crate::sns::points_matrix;
use crate::sphere::{chart_frame, SampleSet};
use crate::surface::Surface;

/// Linear ramp from `start` to `end` over the first `fraction` of `epochs`,
/// constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl Schedule {
    pub fn at(&self, epoch: usize, epochs: usize) -> f64 {
        let span = (self.fraction * epochs as f64).max(1.0);
        let t = (epoch as f64 / span).min(1.0);
        self.start + (self.end - self.start) * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenConfig {
    pub k: usize,
    pub epochs: usize,
    /// Uniform sphere samples drawn before rejection.
    pub m: usize,
    pub n_target: usize,
    pub ortho: Schedule,
    pub reg: Schedule,
    pub optimizer: RmsProp,
    /// Learning rate at the last epoch (geometric decay); `None` keeps it.
    pub final_lr: Option<f64>,
    /// Redraw the training samples every this many epochs; `None` keeps one
    /// frozen set per mode.
    pub resample_every: Option<usize>,
    pub field_spec: MlpSpec,
    pub seed: u64,
    /// Samples for the held-out Gram/Rayleigh report.
    pub report_m: usize,
    pub report_n_target: usize,
}

impl EigenConfig {
    pub fn paper() -> Self {
        EigenConfig {
            k: 5,
            epochs: 40_000,
            m: 100_000,
            n_target: 10_000,
            ortho: Schedule { start: 1e3, end: 1.0, fraction: 0.25 },
            reg: Schedule { start: 1e4, end: 1e2, fraction: 0.25 },
            optimizer: RmsProp::default(),
            final_lr: None,
            resample_every: None,
            field_spec: ScalarFieldModel::default_spec(),
            seed: 0,
            report_m: 100_000,
            report_n_target: 10_000,
        }
    }

    pub fn desk() -> Self {
        EigenConfig {
            k: 3,
            epochs: 5000,
            m: 20_000,
            n_target: 2000,
            ortho: Schedule { start: 1e3, end: 1.0, fraction: 0.5 },
            reg: Schedule { start: 1e4, end: 1e2, fraction: 0.5 },
            optimizer: RmsProp { lr: 1e-3, ..RmsProp::default() },
            final_lr: Some(1e-5),
            resample_every: None,
            field_spec: ScalarFieldModel::default_spec(),
            seed: 0,
            report_m: 100_000,
            report_n_target: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.epochs == 0 || self.m == 0 || self.n_target == 0 {
            return Err(contract("k, epochs, m and n_target must be >= 1"));
        }
        for s in [self.ortho, self.reg] {
            if !(s.start > 0.0 && s.end > 0.0 && s.fraction > 0.0) {
                return Err(contract("loss schedules must be positive"));
            }
        }
        if self.resample_every == Some(0) {
            return Err(contract("resample_every must be >= 1"));
        }
        self.field_spec.validate()
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.final_lr {
            None => self.optimizer.lr,
            Some(end) => {
                let t = if self.epochs > 1 { epoch as f64 / (self.epochs - 1) as f64 } else { 0.0 };
                self.optimizer.lr * (end / self.optimizer.lr).powf(t)
            }
        }
    }
}

/// Samples with the per-point maps needed for surface gradients of implicit
/// fields.
#[derive(Debug, Clone)]
pub struct SpectralSamples {
    pub points: Vec<Vector3<f64>>,
    /// `P·J⁻ᵀ` per point.
    pub grad_maps: Vec<Matrix3<f64>>,
    pub area: f64,
}

impl SpectralSamples {
    /// Uses the kept points of a rejection-sampled set; `area` is the
    /// surface area the Monte Carlo sums are scaled by.
    pub fn new<S: Surface + ?Sized>(surface: &S, points: Vec<Vector3<f64>>, area: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(contract("no sample points"));
        }
        let jacs = surface.jacobians(&points)?;
        let grad_maps = points
            .iter()
            .zip(&jacs)
            .enumerate()
            .map(|(i, (p, (_, j)))| {
                let fr = chart_frame(p).map_err(|e| SnsError::at(i, e))?;
                let n = (j * fr.u()).cross(&(j * fr.v())).normalize();
                let proj = Matrix3::identity() - n * n.transpose();
                let cols: Vec<Vector3<f64>> = (0..3)
                    .map(|k| implicit_gradient(&Vector3::ith(k, 1.0), j))
                    .collect::<Result<_>>()
                    .map_err(|e| SnsError::at(i, e))?;
                // columns of J⁻ᵀ
                Ok(proj * Matrix3::from_columns(&cols))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectralSamples { points, grad_maps, area })
    }

    /// Rejection-sampled points uniform on the surface. The area is taken
    /// from the same sample set.
    pub fn draw<S: Surface + ?Sized>(surface: &S, m: usize, n_target: usize, seed: u64) -> Result<(Self, SampleSet)> {
        let set = surface_samples(surface, m, n_target, seed)?;
        let area = set.area_estimate()?;
        Ok((Self::new(surface, set.kept_points(), area)?, set))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.area * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / self.len() as f64
    }

    /// Values and surface gradients of the implicit field of `g`.
    pub fn evaluate<F: ScalarField + ?Sized>(&self, g: &F) -> Result<(Vec<f64>, Vec<Vector3<f64>>)> {
        let vg = g.gradients(&self.points)?;
        let values = vg.iter().map(|v| v.0).collect();
        let grads = vg.iter().zip(&self.grad_maps).map(|(v, m)| m * v.1).collect();
        Ok((values, grads))
    }

    /// `⟨∇_Σh, ∇_Σh⟩ / ⟨h, h⟩`
    pub fn rayleigh<F: ScalarField + ?Sized>(&self, g: &F) -> Result<f64> {
        let (values, grads) = self.evaluate(g)?;
        let norm = self.inner(&values, &values);
        if !(norm.sqrt() >= 1e-12) {
            return Err(SnsError::VanishingField { norm: norm.sqrt() });
        }
        let dirichlet = self.area * grads.iter().map(|v| v.norm_squared()).sum::<f64>() / self.len() as f64;
        Ok(dirichlet / norm)
    }
}

/// Rayleigh quotient of the implicit field of `g` on `surface`.
pub fn rayleigh_quotient<F: ScalarField + ?Sized>(g: &F, samples: &SpectralSamples) -> Result<f64> {
    samples.rayleigh(g)
}

/// Loss terms of one mode at the current parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModeLoss {
    pub rayleigh: f64,
    pub ortho: f64,
    pub reg: f64,
    pub total: f64,
    pub norm: f64,
}

/// Combined loss `Q + λ_o·Σ⟨h, ĥ_i⟩² + λ_r·(‖h‖ - 1)²` and its parameter
/// gradient. `previous` holds unit-norm values of earlier modes (constant
/// mode included) at the sample points.
pub fn mode_loss(
    mlp: &Mlp,
    samples: &SpectralSamples,
    previous: &[Vec<f64>],
    lambda_ortho: f64,
    lambda_reg: f64,
    grad: bool,
) -> Result<(ModeLoss, Option<crate::mlp::MlpParams>)> {
    let n = samples.len();
    let x = points_matrix(&samples.points);
    let tangents: Vec<DMatrix<f64>> =
        (0..3).map(|i| DMatrix::from_fn(3, n, |r, _| if r == i { 1.0 } else { 0.0 })).collect();
    let (y, tape) = mlp.forward_tangents(&x, &tangents)?;
    let w = samples.area / n as f64;
    let mut values = vec![0.0; n];
    let mut sgrads = vec![Vector3::zeros(); n];
    let mut dirichlet = 0.0;
    let mut norm2 = 0.0;
    for c in 0..n {
        values[c] = y.column(c).sum() / 3.0;
        let g = Vector3::from_fn(|a, _| y.column((a + 1) * n + c).sum() / 3.0);
        sgrads[c] = samples.grad_maps[c] * g;
        dirichlet += w * sgrads[c].norm_squared();
        norm2 += w * values[c] * values[c];
    }
    if !(norm2.sqrt() >= 1e-12) {
        return Err(SnsError::VanishingField { norm: norm2.sqrt() });
    }
    let q = dirichlet / norm2;
    let coeffs: Vec<f64> = previous.iter().map(|p| w * p.iter().zip(&values).map(|(a, b)| a * b).sum::<f64>()).collect();
    let ortho: f64 = coeffs.iter().map(|c| c * c).sum();
    let norm = norm2.sqrt();
    let reg = (norm - 1.0).powi(2);
    let loss = ModeLoss { rayleigh: q, ortho, reg, total: q + lambda_ortho * ortho + lambda_reg * reg, norm };
    if !grad {
        return Ok((loss, None));
    }

    let d_dir = 1.0 / norm2;
    let d_norm2 = -dirichlet / (norm2 * norm2) + lambda_reg * (norm - 1.0) / norm;
    let mut ybar = DMatrix::zeros(3, 4 * n);
    for c in 0..n {
        let mut vbar = d_norm2 * 2.0 * w * values[c];
        for (p, coef) in previous.iter().zip(&coeffs) {
            vbar += lambda_ortho * 2.0 * coef * w * p[c];
        }
        let gbar = samples.grad_maps[c].transpose() * (sgrads[c] * (2.0 * w * d_dir));
        for r in 0..3 {
            ybar[(r, c)] = vbar / 3.0;
            for a in 0..3 {
                ybar[(r, (a + 1) * n + c)] = gbar[a] / 3.0;
            }
        }
    }
    Ok((loss, Some(mlp.backward(&tape, &ybar)?)))
}

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub modes: Vec<ScalarFieldModel>,
    /// Rayleigh quotients on the held-out report samples.
    pub rayleigh: Vec<f64>,
    /// Rayleigh quotients on each mode's own frozen training samples.
    pub rayleigh_frozen: Vec<f64>,
    /// Held-out `⟨h_a, h_b⟩`.
    pub gram: DMatrix<f64>,
    /// Index of the first mode that collapsed, if any (it is not included).
    pub failed: Option<usize>,
    pub report_seed: u64,
    pub config: EigenConfig,
}

/// The constant eigenfunction `1` followed by unit-norm values of the
/// implicit fields of earlier modes.
fn previous_values(modes: &[ScalarFieldModel], samples: &SpectralSamples) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![vec![1.0; samples.len()]];
    for m in modes {
        let v = m.values(&samples.points)?;
        let nrm = samples.inner(&v, &v).sqrt();
        if !(nrm > 0.0) {
            return Err(SnsError::VanishingField { norm: nrm });
        }
        out.push(v.iter().map(|x| x / nrm).collect());
    }
    Ok(out)
}

/// Negates the field so its value at `p` is non-negative.
pub fn fix_sign(mode: &mut ScalarFieldModel, p: &Vector3<f64>) -> Result<()> {
    if mode.values(std::slice::from_ref(p))?[0] < 0.0 {
        mode.mlp.params.proj.weight *= -1.0;
        mode.mlp.params.proj.bias *= -1.0;
    }
    Ok(())
}

/// Trains `config.k` modes one after another.
pub fn optimize_modes<S: Surface + ?Sized>(surface: &S, config: &EigenConfig) -> Result<EigenResult> {
    config.validate()?;
    let report_seed = config.seed ^ 0x5eed_0f_4e9047;
    let (report, _) = SpectralSamples::draw(surface, config.report_m, config.report_n_target, report_seed)?;
    let first = report.points.first().copied().ok_or_else(|| contract("empty report sample set"))?;

    let mut modes: Vec<ScalarFieldModel> = Vec::new();
    let mut frozen_q = Vec::new();
    let mut failed = None;
    for i in 0..config.k {
        let mode_seed = config.seed.wrapping_add(1 + i as u64);
        let (mut samples, _) = SpectralSamples::draw(surface, config.m, config.n_target, mode_seed)?;
        let mut previous = previous_values(&modes, &samples)?;
        let mut mlp = Mlp::new(config.field_spec, mode_seed)?;
        let mut opt = OptimizerState::new(config.optimizer, &mlp.params);
        let mut last = ModeLoss::default();
        for epoch in 0..config.epochs {
            if let Some(every) = config.resample_every {
                if epoch > 0 && epoch % every == 0 {
                    let seed = mode_seed ^ ((epoch / every) as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                    samples = SpectralSamples::draw(surface, config.m, config.n_target, seed)?.0;
                    previous = previous_values(&modes, &samples)?;
                }
            }
            let lo = config.ortho.at(epoch, config.epochs);
            let lr_ = config.reg.at(epoch, config.epochs);
            let (loss, g) = mode_loss(&mlp, &samples, &previous, lo, lr_, true)?;
            last = loss;
            opt.config.lr = config.lr_at(epoch);
            opt.step(&mut mlp.params, &g.expect("gradient requested"))?;
            if epoch % 1000 == 0 {
                log::debug!("mode {} epoch {epoch}: Q {:.4} ortho {:.2e} norm {:.3}", i + 1, loss.rayleigh, loss.ortho, loss.norm);
            }
        }
        let (end, _) = mode_loss(&mlp, &samples, &previous, 0.0, 0.0, false)?;
        if end.norm < 0.1 {
            warn!("mode {} collapsed (norm {:.3e})", i + 1, end.norm);
            failed = Some(i + 1);
            break;
        }
        let mut mode = ScalarFieldModel::from_mlp(mlp)?;
        fix_sign(&mut mode, &first)?;
        info!("mode {}: Q {:.4} (train), last loss {:.4}", i + 1, end.rayleigh, last.total);
        frozen_q.push(end.rayleigh);
        modes.push(mode);
    }

    let rayleigh = modes.iter().map(|m| report.rayleigh(m)).collect::<Result<Vec<_>>>()?;
    let values = modes.iter().map(|m| m.values(&report.points)).collect::<Result<Vec<_>>>()?;
    let k = modes.len();
    let gram = DMatrix::from_fn(k, k, |a, b| report.inner(&values[a], &values[b]));
    Ok(EigenResult { modes, rayleigh, rayleigh_frozen: frozen_q, gram, failed, report_seed, config: *config })
}

/// Median over probe points of `|Δ_Σψ + Qψ| / max|ψ|` for the implicit field
/// of `g`.
pub fn eigen_residual<F: ScalarField + ?Sized>(g: &F, q: f64, cache: &GeometryCache, domain: FieldDomain) -> Result<f64> {
    let jets = cache.field_jets(g, domain)?;
    let lap = cache.lbo_of_jets(&jets, LboForm::DivGrad)?;
    let max = jets.iter().map(|j| j.value.abs()).fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(if lap.iter().all(|l| *l == 0.0) { 0.0 } else { f64::INFINITY });
    }
    let mut r: Vec<f64> = lap.iter().zip(&jets).map(|(l, j)| (l + q * j.value).abs() / max).collect();
    r.sort_by(|a, b| a.total_cmp(b));
    let mid = r.len() / 2;
    Ok(if r.len() % 2 == 1 { r[mid] } else { 0.5 * (r[mid - 1] + r[mid]) })
}

/// Area used by the constant mode of a normalized surface.
pub const NORMALIZED_AREA: f64 = 4.0 * PI;
