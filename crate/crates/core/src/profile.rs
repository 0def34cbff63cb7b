//! Named hyperparameter bundles.

use crate::error::{contract, Result};
use crate::fit::FitConfig;
use crate::flows::FlowConfig;
use crate::spectral::EigenConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub name: &'static str,
    pub fit: FitConfig,
    pub eigen: EigenConfig,
    pub flow: FlowConfig,
}

impl Profile {
    /// Small networks and short runs, minutes on one core.
    pub fn desk() -> Self {
        Profile { name: "desk", fit: FitConfig::desk(), eigen: EigenConfig::desk(), flow: FlowConfig::default() }
    }

    /// The full-size setting: 8 blocks of width 256, hours of training.
    pub fn paper() -> Self {
        Profile { name: "paper", fit: FitConfig::paper(), eigen: EigenConfig::paper(), flow: FlowConfig::default() }
    }

    pub fn all() -> [Profile; 2] {
        [Profile::desk(), Profile::paper()]
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Profile::all()
            .into_iter()
            .find(|p| p.name == name)
            .ok_or_else(|| contract(format!("unknown profile {name:?} (expected desk or paper)")))
    }

    /// `(key, value)` pairs of every hyperparameter.
    pub fn entries(&self) -> Vec<(String, String)> {
        let f = &self.fit;
        let e = &self.eigen;
        let w = &self.flow;
        let lr = |start: f64, end: Option<f64>| match end {
            Some(end) => format!("{start:e} -> {end:e}"),
            None => format!("{start:e}"),
        };
        let kv = |k: &str, v: String| (k.to_string(), v);
        vec![
            kv("fit.width", f.width.to_string()),
            kv("fit.blocks", f.n_blocks.to_string()),
            kv("fit.epochs", f.epochs.to_string()),
            kv("fit.batch", f.batch.to_string()),
            kv("fit.lr", lr(f.optimizer.lr, f.final_lr)),
            kv("fit.momentum", f.optimizer.momentum.to_string()),
            kv("fit.smoothing", f.optimizer.smoothing.to_string()),
            kv("fit.lambda_normal", format!("{:e}", f.lambda_normal)),
            kv("fit.holdout", f.holdout.to_string()),
            kv("eigen.k", e.k.to_string()),
            kv("eigen.epochs", e.epochs.to_string()),
            kv("eigen.m", e.m.to_string()),
            kv("eigen.n_target", e.n_target.to_string()),
            kv("eigen.lambda_ortho", format!("{:e} -> {:e} over {}", e.ortho.start, e.ortho.end, e.ortho.fraction)),
            kv("eigen.lambda_reg", format!("{:e} -> {:e} over {}", e.reg.start, e.reg.end, e.reg.fraction)),
            kv("eigen.lr", lr(e.optimizer.lr, e.final_lr)),
            kv("eigen.momentum", e.optimizer.momentum.to_string()),
            kv(
                "eigen.field",
                format!("{}x{} blocks, {}->{}", e.field_spec.width, e.field_spec.n_blocks, e.field_spec.input_dim, e.field_spec.output_dim),
            ),
            kv("eigen.report_m", e.report_m.to_string()),
            kv("flow.d", format!("{:e}", w.d)),
            kv("flow.steps", w.n_steps.to_string()),
            kv("flow.finetune_epochs", w.finetune.max_epochs.to_string()),
            kv("flow.samples", w.samples.to_string()),
        ]
    }
}
