//! Overfitting a spherical neural surface to a target shape, area
//! normalization, and the short MSE finetuning used by the flows.

use std::f64::consts::PI;

use log::{debug, info};
use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffgeo::{area_estimate, fundamental_forms_batch};
use crate::error::{contract, Result, SnsError};
use crate::mesh::SphereLocator;
use crate::mlp::{Mlp, MlpParams, OptimizerState, RmsProp};
use crate::sns::{check_targets, points_matrix, SnsModel};
use crate::sphere::{chart_frame, random_unit};
use crate::surface::Surface;

/// Something to fit: surface points and unit normals for sphere points.
pub trait FitTarget: Sync {
    fn describe(&self) -> String;
    fn targets(&self, ps: &[Vector3<f64>]) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>>;
}

impl FitTarget for SphereLocator {
    fn describe(&self) -> String {
        format!("mesh:{}v", self.mesh().vertices.len())
    }

    fn targets(&self, ps: &[Vector3<f64>]) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
        Ok(self.locate_all(ps)?.into_iter().map(|c| (c.point, c.normal)).collect())
    }
}

/// A closed-form (or any other differentiable) surface used as ground truth.
pub struct SurfaceTarget<S> {
    pub surface: S,
    pub name: String,
}

impl<S: Surface> FitTarget for SurfaceTarget<S> {
    fn describe(&self) -> String {
        self.name.clone()
    }

    fn targets(&self, ps: &[Vector3<f64>]) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
        Ok(fundamental_forms_batch(&self.surface, ps)?.into_iter().map(|f| (f.position, f.normal)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub width: usize,
    pub n_blocks: usize,
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: RmsProp,
    /// Learning rate reached at the last epoch (geometric decay from
    /// `optimizer.lr`); `None` keeps it constant.
    pub final_lr: Option<f64>,
    pub lambda_normal: f64,
    /// Epochs between redraws of the training batch.
    pub refresh_period: usize,
    pub seed: u64,
    pub holdout: usize,
    pub eval_every: usize,
    /// Stop when the best held-out loss improved by less than
    /// `plateau_threshold` (relative) over the last `plateau_window` epochs.
    pub plateau_window: usize,
    pub plateau_threshold: f64,
}

impl FitConfig {
    pub fn paper() -> Self {
        FitConfig {
            width: 256,
            n_blocks: 8,
            epochs: 20_000,
            batch: 10_000,
            optimizer: RmsProp::default(),
            final_lr: None,
            lambda_normal: 1e-4,
            refresh_period: 1,
            seed: 0,
            holdout: 4096,
            eval_every: 50,
            plateau_window: 200,
            plateau_threshold: 1e-6,
        }
    }

    pub fn desk() -> Self {
        FitConfig {
            width: 64,
            n_blocks: 4,
            epochs: 3000,
            batch: 1024,
            optimizer: RmsProp { lr: 1e-3, ..RmsProp::default() },
            final_lr: Some(1e-4),
            lambda_normal: 1e-2,
            refresh_period: 1,
            seed: 0,
            holdout: 2048,
            eval_every: 25,
            plateau_window: 1000,
            plateau_threshold: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.holdout == 0 || self.eval_every == 0 || self.refresh_period == 0 {
            return Err(contract("epochs, batch, holdout, eval_every and refresh_period must be >= 1"));
        }
        if !(self.lambda_normal >= 0.0) {
            return Err(contract("lambda_normal must be >= 0"));
        }
        if !(self.optimizer.lr > 0.0) || self.final_lr.is_some_and(|l| !(l > 0.0)) {
            return Err(contract("learning rates must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.final_lr {
            None => self.optimizer.lr,
            Some(end) => {
                let t = if self.epochs > 1 { epoch as f64 / (self.epochs - 1) as f64 } else { 0.0 };
                self.optimizer.lr * (end / self.optimizer.lr).powf(t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    Plateau { epoch: usize },
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitHistory {
    /// Training-batch loss per epoch.
    pub train: Vec<f64>,
    /// `(epoch, held-out loss)` at each evaluation.
    pub holdout: Vec<(usize, f64)>,
    /// Best held-out loss so far, at each evaluation (non-increasing).
    pub best: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: SnsModel,
    pub history: FitHistory,
    pub stop: StopReason,
}

/// Batch of sphere points with their frames and targets.
pub(crate) struct Batch {
    x: DMatrix<f64>,
    t1: DMatrix<f64>,
    t2: DMatrix<f64>,
    q: Vec<Vector3<f64>>,
    n: Vec<Vector3<f64>>,
}

impl Batch {
    fn new<T: FitTarget + ?Sized>(target: &T, ps: &[Vector3<f64>]) -> Result<Self> {
        let frames = ps.iter().map(chart_frame).collect::<Result<Vec<_>>>()?;
        let tq = target.targets(ps)?;
        Ok(Batch {
            x: points_matrix(ps),
            t1: DMatrix::from_fn(3, ps.len(), |r, c| frames[c].r[(r, 0)]),
            t2: DMatrix::from_fn(3, ps.len(), |r, c| frames[c].r[(r, 1)]),
            q: tq.iter().map(|t| t.0).collect(),
            n: tq.iter().map(|t| t.1).collect(),
        })
    }

    fn len(&self) -> usize {
        self.q.len()
    }
}

/// `mean ‖s·S(p) - q‖² + λ·mean ‖n_S(p) - n‖²` and optionally its gradient.
pub(crate) fn fit_loss(mlp: &Mlp, scale: f64, b: &Batch, lambda: f64, grad: bool) -> Result<(f64, Option<MlpParams>)> {
    let nb = b.len();
    let tangents = if lambda > 0.0 { vec![b.t1.clone(), b.t2.clone()] } else { vec![] };
    let (y, tape) = mlp.forward_tangents(&b.x, &tangents)?;
    let mut ybar = DMatrix::zeros(3, y.ncols());
    let inv = 1.0 / nb as f64;
    let mut loss = 0.0;
    for c in 0..nb {
        let pos = Vector3::new(y[(0, c)], y[(1, c)], y[(2, c)]) * scale;
        let d = pos - b.q[c];
        loss += d.norm_squared() * inv;
        ybar.column_mut(c).copy_from(&(d * (2.0 * inv * scale)));
        if lambda > 0.0 {
            let su = Vector3::new(y[(0, nb + c)], y[(1, nb + c)], y[(2, nb + c)]) * scale;
            let sv = Vector3::new(y[(0, 2 * nb + c)], y[(1, 2 * nb + c)], y[(2, 2 * nb + c)]) * scale;
            let cr = su.cross(&sv);
            let len = cr.norm();
            if !(len > 1e-300) {
                loss += 4.0 * lambda * inv;
                continue;
            }
            let n = cr / len;
            let dn = n - b.n[c];
            loss += lambda * dn.norm_squared() * inv;
            let nbar = dn * (2.0 * lambda * inv);
            let crbar = (nbar - n * n.dot(&nbar)) / len;
            ybar.column_mut(nb + c).copy_from(&(sv.cross(&crbar) * scale));
            ybar.column_mut(2 * nb + c).copy_from(&(crbar.cross(&su) * scale));
        }
    }
    if !loss.is_finite() {
        return Ok((loss, None));
    }
    let g = if grad { Some(mlp.backward(&tape, &ybar)?) } else { None };
    Ok((loss, g))
}

fn is_numerical_failure(e: &SnsError) -> bool {
    matches!(e, SnsError::NonFiniteGradient { .. } | SnsError::NumericalOverflow { .. })
}

fn draw(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n).map(|_| random_unit(rng)).collect()
}

/// Trains a fresh network on `target`. The returned model carries the
/// parameters with the lowest held-out loss, including the initial ones.
pub fn fit<T: FitTarget + ?Sized>(target: &T, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let model = SnsModel::init(config.width, config.n_blocks, config.seed, &target.describe())?;
    fit_from(model, target, config)
}

/// Like [`fit`], starting from the given model's parameters.
pub fn fit_from<T: FitTarget + ?Sized>(model: SnsModel, target: &T, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut hold_rng = ChaCha8Rng::seed_from_u64(config.seed);
    hold_rng.set_stream(2);
    let holdout = Batch::new(target, &draw(&mut hold_rng, config.holdout))?;
    let scale = model.area_scale;
    let lambda = config.lambda_normal;

    let mut mlp = model.mlp.clone();
    let mut best_params = mlp.params.clone();
    let mut best = fit_loss(&mlp, scale, &holdout, lambda, false)?.0;
    let mut history = FitHistory { holdout: vec![(0, best)], best: vec![best], ..Default::default() };
    let mut opt = OptimizerState::new(config.optimizer, &mlp.params);
    let mut batch = None;
    let mut stop = StopReason::Completed;

    for epoch in 0..config.epochs {
        if epoch % config.refresh_period == 0 || batch.is_none() {
            batch = Some(Batch::new(target, &draw(&mut rng, config.batch))?);
        }
        let b = batch.as_ref().expect("batch drawn above");
        let step = fit_loss(&mlp, scale, b, lambda, true);
        let (loss, grad) = match step {
            Ok((l, Some(g))) => (l, g),
            Ok((_, None)) => {
                stop = StopReason::Diverged { epoch };
                break;
            }
            Err(e) if is_numerical_failure(&e) => {
                stop = StopReason::Diverged { epoch };
                break;
            }
            Err(e) => return Err(e),
        };
        history.train.push(loss);
        opt.config.lr = config.lr_at(epoch);
        if let Err(e) = opt.step(&mut mlp.params, &grad) {
            if is_numerical_failure(&e) {
                stop = StopReason::Diverged { epoch };
                break;
            }
            return Err(e);
        }

        let done = epoch + 1;
        if done % config.eval_every == 0 || done == config.epochs {
            let h = match fit_loss(&mlp, scale, &holdout, lambda, false) {
                Ok((h, _)) => h,
                Err(e) if is_numerical_failure(&e) => f64::NAN,
                Err(e) => return Err(e),
            };
            if !h.is_finite() {
                stop = StopReason::Diverged { epoch };
                break;
            }
            if h < best {
                best = h;
                best_params = mlp.params.clone();
                history.best_epoch = done;
            }
            history.holdout.push((done, h));
            history.best.push(best);
            if done % (config.eval_every * 20) == 0 {
                debug!("epoch {done}: train {loss:.3e} holdout {h:.3e} best {best:.3e}");
            }
            if done >= config.plateau_window {
                let k = history.holdout.iter().rposition(|&(e, _)| e + config.plateau_window <= done).unwrap_or(0);
                let before = history.best[k];
                if (before - best) <= config.plateau_threshold * before.abs() {
                    stop = StopReason::Plateau { epoch: done };
                    break;
                }
            }
        }
    }
    info!("fit {}: best held-out loss {best:.3e} at epoch {} ({stop:?})", target.describe(), history.best_epoch);
    let model = model.with_params(best_params)?;
    Ok(FitResult { model, history, stop })
}

/// Rescales outputs so the Monte Carlo area is `4π`.
pub fn area_normalize(model: &SnsModel, samples: usize, seed: u64) -> Result<SnsModel> {
    let area = area_estimate(model, samples, seed)?;
    if !(area > 0.0) || !area.is_finite() {
        return Err(SnsError::DegenerateSurface(format!("estimated area {area}")));
    }
    let mut out = model.clone();
    out.area_scale *= (4.0 * PI / area).sqrt();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    /// Upper bound on L-BFGS iterations.
    pub max_epochs: usize,
    /// Number of curvature pairs kept by L-BFGS.
    pub memory: usize,
    /// Stop once the relative improvement of an iteration drops below this,
    /// or the loss is below `abs_tol`.
    pub plateau_threshold: f64,
    pub abs_tol: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { max_epochs: 100, memory: 10, plateau_threshold: 1e-9, abs_tol: 1e-24 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub epochs: usize,
    /// Iterations whose line search found a decrease.
    pub accepted: usize,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;

/// Full-batch MSE finetuning of a network's raw outputs (times `scale`)
/// towards `targets` with L-BFGS and a backtracking line search. Only
/// decreasing steps are taken, so the returned loss never exceeds the
/// starting loss.
pub(crate) fn finetune_mlp(
    mlp: &Mlp,
    scale: f64,
    ps: &[Vector3<f64>],
    targets: &DMatrix<f64>,
    config: &FinetuneConfig,
) -> Result<(Mlp, FinetuneReport)> {
    if targets.shape() != (mlp.spec.output_dim, ps.len()) {
        return Err(contract("one target per sample point is required"));
    }
    if !targets.iter().all(|x| x.is_finite()) {
        return Err(contract("finetune targets must be finite"));
    }
    let x = points_matrix(ps);
    let inv = 1.0 / ps.len().max(1) as f64;
    let eval = |m: &Mlp| -> Result<(f64, MlpParams)> {
        let (y, tape) = m.forward_tangents(&x, &[])?;
        let d = y * scale - targets;
        let loss = d.norm_squared() * inv;
        let g = m.backward(&tape, &(d * (2.0 * inv * scale)))?;
        Ok((loss, g))
    };
    let mut best = mlp.clone();
    let (initial, mut grad) = eval(&best)?;
    let mut loss = initial;
    let mut history: Vec<(MlpParams, MlpParams, f64)> = Vec::new();
    let mut accepted = 0;
    let mut epochs = 0;
    while epochs < config.max_epochs && loss > config.abs_tol && grad.all_finite() {
        epochs += 1;
        let dir = lbfgs_direction(&grad, &history);
        let slope = dir.dot(&grad);
        let (dir, slope) = if slope < 0.0 { (dir, slope) } else {
            history.clear();
            let mut d = grad.clone();
            d.scale(-1.0);
            let s = -grad.dot(&grad);
            (d, s)
        };
        if slope == 0.0 {
            break;
        }
        // First step from a bare gradient: the step that would zero the loss
        // under a linear model of the residual.
        let mut alpha = if history.is_empty() { loss / -slope } else { 1.0 };
        let mut found = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand = best.clone();
            cand.params.axpy(alpha, &dir);
            if cand.params.all_finite() {
                if let Ok((l, g)) = eval(&cand) {
                    if l.is_finite() && l <= loss + ARMIJO * alpha * slope {
                        found = Some((cand, l, g));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((cand, l, g)) = found else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let mut s_k = cand.params.clone();
        s_k.axpy(-1.0, &best.params);
        let mut y_k = g.clone();
        y_k.axpy(-1.0, &grad);
        let sy = s_k.dot(&y_k);
        if sy > 1e-300 {
            if history.len() == config.memory.max(1) {
                history.remove(0);
            }
            history.push((s_k, y_k, sy));
        }
        let improvement = loss - l;
        accepted += 1;
        best = cand;
        loss = l;
        grad = g;
        if improvement <= config.plateau_threshold * loss {
            break;
        }
    }
    Ok((best, FinetuneReport { initial_mse: initial, final_mse: loss, epochs, accepted }))
}

/// Two-loop recursion for `-H·g`.
fn lbfgs_direction(grad: &MlpParams, history: &[(MlpParams, MlpParams, f64)]) -> MlpParams {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, sy) in history.iter().rev() {
        let a = s.dot(&q) / sy;
        q.axpy(-a, y);
        alphas.push(a);
    }
    if let Some((_, y, sy)) = history.last() {
        q.scale(sy / y.dot(y));
    }
    for ((s, y, sy), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = y.dot(&q) / sy;
        q.axpy(a - b, s);
    }
    q.scale(-1.0);
    q
}

/// Finetunes a surface towards `targets` at the sphere points `ps`.
pub fn finetune(
    model: &SnsModel,
    ps: &[Vector3<f64>],
    targets: &[Vector3<f64>],
    config: &FinetuneConfig,
) -> Result<(SnsModel, FinetuneReport)> {
    check_targets(targets)?;
    if ps.len() != targets.len() {
        return Err(contract("one target per sample point is required"));
    }
    let t = DMatrix::from_fn(3, targets.len(), |r, c| targets[c][r]);
    let (mlp, report) = finetune_mlp(&model.mlp, model.area_scale, ps, &t, config)?;
    Ok((model.with_params(mlp.params)?, report))
}
