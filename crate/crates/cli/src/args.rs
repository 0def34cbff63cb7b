//! Command-line flags. Every argument struct also (de)serializes so that a
//! JSON `--config` file can supply any flag by its long name.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "sns", version, about = "Fit and analyse spherical neural surfaces", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Overfit a network to a mesh or analytic shape.
    Fit(FitArgs),
    /// Sample curvatures, normals or area distortion of a model.
    Quantities(QuantitiesArgs),
    /// Laplace-Beltrami operator of a scalar field on a model.
    Lbo(LboArgs),
    /// Lowest Laplace-Beltrami eigenfunctions of a model.
    Eigen(EigenArgs),
    /// Heat flow of a field or mean curvature flow of a model.
    #[command(subcommand)]
    Flow(FlowCommand),
    /// Cotan against neural LBO over a family of meshes.
    Baseline(BaselineArgs),
    /// Area-uniform surface samples by rejection.
    Sample(SampleArgs),
    /// Write a model as a mesh, optionally colored by a quantity.
    Export(ExportArgs),
    /// Print the named hyperparameter profiles.
    ProfileList(ProfileListArgs),
}

#[derive(Debug, Subcommand)]
pub enum FlowCommand {
    Heat(HeatArgs),
    Mcf(McfArgs),
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Common {
    /// JSON file whose keys are long flag names; flags on the command line win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream; generated and printed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (falls back to SNS_THREADS, then all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Mesh file (.obj, .ply), `icosphere:<level>` or `analytic:<shape>`.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// Output checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub final_lr: Option<f64>,
    #[arg(long)]
    pub lambda_normal: Option<f64>,
    /// Rescale the fitted model to area 4π.
    #[arg(long)]
    pub normalize_area: bool,
    /// Also write the binary parameter sidecar.
    #[arg(long)]
    pub sidecar: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct QuantitiesArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// H, K, normal, dir_min or distortion.
    #[arg(long, default_value = "H")]
    pub which: String,
    /// Sphere samples for a `.txt` output.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Icosphere level of the mesh for a `.ply` output.
    #[arg(long, default_value_t = 5)]
    pub level: usize,
    /// `.txt` table or colored `.ply` mesh.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LboArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Field checkpoint or `analytic:<expr>` (`x`, `xy`, `const:<c>`, `sine:<k0>:<k1>`).
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long, default_value = "divgrad")]
    pub form: String,
    /// `sphere` (h∘S = g) or `ambient`; defaults to sphere for checkpoints
    /// and ambient for analytic fields.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 5)]
    pub level: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EigenArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(short, long)]
    pub k: Option<usize>,
    #[arg(long, default_value = "desk")]
    pub profile: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Uniform sphere samples drawn before rejection.
    #[arg(short, long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n_target: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub final_lr: Option<f64>,
    /// Redraw training samples every this many epochs.
    #[arg(long)]
    pub resample_every: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

/// Flags shared by both flows.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FlowArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 150)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub d: f64,
    #[arg(long, default_value_t = 10)]
    pub snapshot_every: usize,
    #[arg(long, default_value_t = 10_242)]
    pub samples: usize,
    #[arg(long, default_value_t = 100)]
    pub finetune_epochs: usize,
    /// Icosphere level of the snapshot meshes.
    #[arg(long, default_value_t = 4)]
    pub level: usize,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct HeatArgs {
    /// Initial field checkpoint; a seeded random field when omitted.
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub flow: FlowArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct McfArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub flow: FlowArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BaselineArgs {
    /// Meshes (files or `icosphere:<level>`), one per `--model`, same order.
    #[arg(long = "mesh", required = false)]
    pub mesh: Vec<String>,
    #[arg(long = "model", required = false)]
    pub model: Vec<PathBuf>,
    /// Ambient field, `analytic:<expr>` or a field checkpoint.
    #[arg(long, default_value = "analytic:sine:2:1")]
    pub field: String,
    /// Score both methods against the analytic unit-sphere operator.
    #[arg(long)]
    pub sphere_gt: bool,
    /// Common sphere points for the cross-mesh comparison.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(short, long, default_value_t = 100_000)]
    pub m: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_target: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub level: usize,
    /// Scalar quantity mapped through the color ramp (H, K or distortion).
    #[arg(long)]
    pub colormap: Option<String>,
    /// `.ply` or `.obj`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ProfileListArgs {
    /// Print only this profile.
    #[arg(long)]
    pub profile: Option<String>,
}
