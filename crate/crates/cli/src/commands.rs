//! One function per subcommand. Each returns where its manifest belongs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::Vector3;
use serde_json::json;
use sns_core::baseline::{compare_lbo, rows_to_csv, MeshCase};
use sns_core::checkpoint::{sidecar_path, Checkpoint};
use sns_core::colormap::colorize;
use sns_core::diffgeo::{quantity_field, surface_samples, Quantity, QuantityField};
use sns_core::fields::{AnalyticField, FieldDomain, GeometryCache, LboForm, ScalarField, ScalarFieldModel};
use sns_core::fit::{area_normalize, fit, FinetuneConfig, FitTarget, SurfaceTarget};
use sns_core::flows::{heat_flow, mcf_flow, FlowConfig};
use sns_core::mesh::{embed_star_shaped, icosphere, io, mesh_from_surface, AnalyticSurface, SphereLocator, TriMesh};
use sns_core::profile::Profile;
use sns_core::sns::SnsModel;
use sns_core::spectral::optimize_modes;
use sns_core::sphere::uniform_sphere;
use sns_core::surface::Surface;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::manifest::Recorder;

/// Per-run state handed to every command.
pub struct Ctx {
    pub seed: u64,
    pub rec: Recorder,
    /// Set when outputs were written but part of the work failed.
    pub failure: Option<CliError>,
}

/// Where the run's manifest goes: an output file or an output directory.
pub enum OutputLocation {
    File(PathBuf),
    Dir(PathBuf),
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::parse(format!("missing required flag --{flag}")))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn load_model(path: &Path, ctx: &mut Ctx) -> CliResult<SnsModel> {
    ctx.rec.input(path)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        ctx.rec.input(&sidecar)?;
    }
    Ok(SnsModel::load(path)?)
}

fn load_mesh(spec: &str, ctx: &mut Ctx) -> CliResult<TriMesh> {
    if let Some(level) = spec.strip_prefix("icosphere:") {
        let level: usize = level.parse().map_err(|_| CliError::parse(format!("bad icosphere level in `{spec}`")))?;
        return Ok(icosphere(level));
    }
    let path = Path::new(spec);
    ctx.rec.input(path)?;
    Ok(io::load(path)?)
}

enum Field {
    Analytic(AnalyticField),
    Network(ScalarFieldModel),
}

impl Field {
    fn load(spec: &str, ctx: &mut Ctx) -> CliResult<Self> {
        if let Some(expr) = spec.strip_prefix("analytic:") {
            return AnalyticField::parse(expr).map(Field::Analytic).map_err(|e| CliError::parse(e.to_string()));
        }
        let path = Path::new(spec);
        ctx.rec.input(path)?;
        Ok(Field::Network(ScalarFieldModel::from_checkpoint(Checkpoint::load(path)?)?))
    }

    fn as_dyn(&self) -> &dyn ScalarField {
        match self {
            Field::Analytic(f) => f,
            Field::Network(f) => f,
        }
    }

    fn default_domain(&self) -> FieldDomain {
        match self {
            Field::Analytic(_) => FieldDomain::Ambient,
            Field::Network(_) => FieldDomain::Sphere,
        }
    }
}

fn parse_quantity(s: &str) -> CliResult<Quantity> {
    Quantity::parse(s).ok_or_else(|| CliError::parse(format!("unknown quantity `{s}` (H, K, normal, dir_min, distortion)")))
}

fn scalars(field: QuantityField, name: &str) -> CliResult<Vec<f64>> {
    match field {
        QuantityField::Scalars(v) => Ok(v),
        QuantityField::Vectors(_) => Err(CliError::contract(format!("`{name}` is a vector quantity; only scalars can be colored"))),
    }
}

fn stats(v: &[f64]) -> serde_json::Value {
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
    json!({ "min": min, "max": max, "mean": mean })
}

/// Sphere points at which a field output is evaluated: random samples for a
/// table, the vertices of the model's icosphere mesh for a mesh file.
enum Sink {
    Table(Vec<Vector3<f64>>),
    Mesh(TriMesh),
}

impl Sink {
    fn new(out: &Path, model: &SnsModel, samples: usize, level: usize, seed: u64) -> CliResult<Self> {
        match extension(out).as_str() {
            "txt" if samples == 0 => Err(CliError::contract("--samples must be positive")),
            "txt" => Ok(Sink::Table(uniform_sphere(samples, seed).points)),
            "ply" | "obj" => Ok(Sink::Mesh(mesh_from_surface(model, level)?)),
            other => Err(CliError::parse(format!("unsupported output format `{other}` (txt, ply, obj)"))),
        }
    }

    fn points(&self) -> Vec<Vector3<f64>> {
        match self {
            Sink::Table(ps) => ps.clone(),
            Sink::Mesh(m) => m.sphere.clone().expect("meshes from models carry their sphere points"),
        }
    }

    /// Writes `columns` as a table, or colors the mesh by `color`.
    fn write(self, out: &Path, model: &SnsModel, columns: &[(&str, Vec<f64>)], color: &[f64]) -> CliResult<()> {
        ensure_parent(out)?;
        match self {
            Sink::Table(ps) => {
                let xs = model.positions(&ps)?;
                let mut s = String::from("# px py pz x y z");
                for (name, _) in columns {
                    s.push(' ');
                    s.push_str(name);
                }
                s.push('\n');
                for (i, (p, x)) in ps.iter().zip(&xs).enumerate() {
                    let _ = write!(s, "{:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}", p.x, p.y, p.z, x.x, x.y, x.z);
                    for (_, col) in columns {
                        let _ = write!(s, " {:.17e}", col[i]);
                    }
                    s.push('\n');
                }
                fs::write(out, s)?;
            }
            Sink::Mesh(mut mesh) => {
                mesh.colors = Some(colorize(color, None));
                io::save(&mesh, out)?;
            }
        }
        Ok(())
    }
}

fn fit_target(input: &str, ctx: &mut Ctx) -> CliResult<Box<dyn FitTarget>> {
    if let Some(name) = input.strip_prefix("analytic:") {
        let surface = AnalyticSurface::by_name(name).map_err(|e| CliError::parse(e.to_string()))?;
        return Ok(Box::new(SurfaceTarget { surface, name: input.to_string() }));
    }
    let mut mesh = load_mesh(input, ctx)?;
    if mesh.sphere.is_none() {
        mesh = embed_star_shaped(&mesh)?;
    }
    Ok(Box::new(SphereLocator::new(&mesh)?))
}

pub fn fit_cmd(a: &FitArgs, ctx: &mut Ctx) -> CliResult<OutputLocation> {
    let input = require(&a.input, "input")?;
    let out = require(&a.out, "out")?;
    let mut cfg = Profile::by_name(&a.profile).map_err(|e| CliError::parse(e.to_string()))?.fit;
    cfg.seed = ctx.seed;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.width = a.width.unwrap_or(cfg.width);
    cfg.n_blocks = a.blocks.unwrap_or(cfg.n_blocks);
    cfg.batch = a.batch.unwrap_or(cfg.batch);
    cfg.optimizer.lr = a.lr.unwrap_or(cfg.optimizer.lr);
    cfg.final_lr = a.final_lr.or(cfg.final_lr);
    cfg.lambda_normal = a.lambda_normal.unwrap_or(cfg.lambda_normal);

    ctx.rec.note("resolved", format!("{cfg:?}"));
    let target = fit_target(input, ctx)?;
    let result = fit(&*target, &cfg)?;
    let mut model = result.model;
    if a.normalize_area {
        model = area_normalize(&model, 100_000, ctx.seed)?;
    }
    ensure_parent(out)?;
    model.save(out, a.sidecar)?;
    ctx.rec.output(out);
    if a.sidecar {
        ctx.rec.output(sidecar_path(out));
    }
    let best = result.history.best.last().copied().unwrap_or(f64::NAN);
    println!(
        "fit {}: best held-out loss {best:.3e} at epoch {} of {} ({:?})",
        target.describe(),
        result.history.best_epoch,
        result.history.train.len(),
        result.stop
    );
    ctx.rec.note("best_holdout_loss", best);
    ctx.rec.note("best_epoch", result.history.best_epoch);
    ctx.rec.note("epochs_run", result.history.train.len());
    ctx.rec.note("stop", format!("{:?}", result.stop));
    ctx.rec.note("area_scale", model.area_scale);
    Ok(OutputLocation::File(out.clone()))
}

pub fn quantities_cmd(a: &QuantitiesArgs, ctx: &mut Ctx) -> CliResult<OutputLocation> {
    let model = load_model(require(&a.model, "model")?, ctx)?;
    let out = require(&a.out, "out")?;
    let which = parse_quantity(&a.which)?;
    let sink = Sink::new(out, &model, a.samples, a.level, ctx.seed)?;
    let ps = sink.points();
    let (columns, color) = match quantity_field(&model, &ps, which)? {
        QuantityField::Scalars(v) => {
            ctx.rec.note("stats", stats(&v));
            (vec![(a.which.as_str(), v.clone())], v)
        }
        QuantityField::Vectors(v) => {
            if matches!(sink, Sink::Mesh(_)) {
                return Err(CliError::contract(format!("`{}` is a vector quantity; write it to a .txt table", a.which)));
            }
            let cols = (0..3).map(|k| (["vx", "vy", "vz"][k], v.iter().map(|x| x[k]).collect())).collect();
            (cols, Vec::new())
        }
    };
    sink.write(out, &model, &columns, &color)?;
    ctx.rec.output(out);
    println!("wrote {} at {} points to {}", a.which, ps.len(), out.display());
    Ok(OutputLocation::File(out.clone()))
}

pub fn lbo_cmd(a: &LboArgs, ctx: &mut Ctx) -> CliResult<OutputLocation> {
    let model = load_model(require(&a.model, "model")?, ctx)?;
    let field = Field::load(require(&a.field, "field")?, ctx)?;
    let out = require(&a.out, "out")?;
    let form = LboForm::parse(&a.form).ok_or_else(|| CliError::parse(format!("unknown form `{}` (divgrad, meancurv)", a.form)))?;
    let domain = match a.domain.as_deref() {
        None => field.default_domain(),
        Some("sphere") => FieldDomain::Sphere,
        Some("ambient") => FieldDomain::Ambient,
        Some(other) => return Err(CliError::parse(format!("unknown domain `{other}` (sphere, ambient)"))),
    };
    let sink = Sink::new(out, &model, a.samples, a.level, ctx.seed)?;
    let cache = GeometryCache::build(&model, &sink.points(), &model.provenance.source)?;
    let jets = cache.field_jets(field.as_dyn(), domain)?;
    let lap = cache.lbo_of_jets(&jets, form)?;
    let values: Vec<f64> = jets.iter().map(|j| j.value).collect();
    ctx.rec.note("lbo", stats(&lap));
    println!("lbo ({}, {:?}) at {} points: {}", a.form, domain, lap.len(), stats(&lap));
    sink.write(out, &model, &[("f", values), ("lbo", lap.clone())], &lap)?;
    ctx.rec.output(out);
    Ok(OutputLocation::File(out.clone()))
}

pub fn eigen_cmd(a: &EigenArgs, ctx: &mut Ctx) -> CliResult<OutputLocation> {
    let model = load_model(require(&a.model, "model")?, ctx)?;
    let out = require(&a.out, "out")?;
    let mut cfg = Profile::by_name(&a.profile).map_err(|e| CliError::parse(e.to_string()))?.eigen;
    cfg.seed = ctx.seed;
    cfg.k = a.k.unwrap_or(cfg.k);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.m = a.m.unwrap_or(cfg.m);
    cfg.n_target = a.n_target.unwrap_or(cfg.n_target);
    cfg.optimizer.lr = a.lr.unwrap_or(cfg.optimizer.lr);
    cfg.final_lr = a.final_lr.or(cfg.final_lr);
    cfg.resample_every = a.resample_every.or(cfg.resample_every);

    ctx.rec.note("resolved", format!("{cfg:?}"));
    let result = optimize_modes(&model, &cfg)?;
    fs::create_dir_all(out)?;
    for (i, (mode, q)) in result.modes.iter().zip(&result.rayleigh).enumerate() {
        let path = out.join(format!("mode_{}.sns", i + 1));
        mode.to_checkpoint().with_meta("rayleigh", format!("{q:.16e}")).save(&path, false)?;
        ctx.rec.output(path);
        println!("mode {}: Q {q:.6} (frozen samples {:.6})", i + 1, result.rayleigh_frozen[i]);
    }
    let gram: Vec<Vec<f64>> = result.gram.row_iter().map(|r| r.iter().copied().collect()).collect();
    let report = json!({
        "rayleigh": result.rayleigh,
        "rayleigh_frozen": result.rayleigh_frozen,
        "gram": gram,
        "failed_mode": result.failed,
        "report_seed": result.report_seed,
    });
    let path = out.join("eigen.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    ctx.rec.output(path);
    ctx.rec.note("eigen", report);
    if let Some(i) = result.failed {
        ctx.failure = Some(CliError {
            class: sns_core::error::ErrorClass::Numerical,
            message: format!("mode {i} collapsed; the {} earlier modes were kept", result.modes.len()),
        });
    }
    Ok(OutputLocation::Dir(out.clone()))
}

fn flow_config(a: &FlowArgs, seed: u64) -> FlowConfig {
    FlowConfig {
        d: a.d,
        n_steps: a.steps,
        finetune: FinetuneConfig { max_epochs: a.finetune_epochs, ..FinetuneConfig::default() },
        samples: a.samples,
        seed,
    }
}

fn colored_mesh(model: &SnsModel, level: usize, values: &[f64], range: (f64, f64)) -> sns_core::Result<TriMesh> {
    let mut mesh = mesh_from_surface(model, level)?;
    mesh.colors = Some(colorize(values, Some(range)));
    Ok(mesh)
}

fn range_of(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

pub fn heat_cmd(a: &HeatArgs, ctx: &mut Ctx) -> CliResult<OutputLocation> {
    let f = &a.flow;
    let model = load_model(require(&f.model, "model")?, ctx)?;
    let out = require(&f.out, "out")?;
    let field = match &a.field {
        Some(path) => {
            ctx.rec.input(path)?;
            ScalarFieldModel::from_checkpoint(Checkpoint::load(path)?)?
        }
        None => ScalarFieldModel::new(ScalarFieldModel::default_spec(), ctx.seed)?,
    };
    let cfg = flow_config(f, ctx.seed);
    ctx.rec.note("resolved", format!("{cfg:?}"));
    cfg.validate()?;
    if f.snapshot_every == 0 {
        return Err(CliError::contract("--snapshot-every must be >= 1"));
    }
    fs::create_dir_all(out)?;
    let sphere = icosphere(f.level).vertices;
    let initial = field.values(&sphere)?;
    let range = range_of(&initial);
    let mut written = Vec::new();
    let first = out.join("heat_0000.ply");
    io::save(&colored_mesh(&model, f.level, &initial, range)?, &first)?;
    written.push(first);

    let mut csv = String::from("step,energy_before,energy_after,mean_before,mean_after,finetune_mse\n");
    let (last, _) = heat_flow(&field, &model, &cfg, |step, h, d| {
        let _ = writeln!(
            csv,
            "{step},{:.9e},{:.9e},{:.9e},{:.9e},{:.3e}",
            d.energy_before, d.energy_after, d.mean_before, d.mean_after, d.finetune.final_mse
        );
        if step % f.snapshot_every == 0 || step == f.steps {
            let path = out.join(format!("heat_{step:04}.ply"));
            let mesh = colored_mesh(&model, f.level, &h.values(&sphere)?, range)?;
            io::save(&mesh, &path)?;
            written.push(path);
        }
        Ok(())
    })?;
    let final_path = out.join("field_final.sns");
    last.to_checkpoint().save(&final_path, false)?;
    let diag_path = out.join("diagnostics.csv");
    fs::write(&diag_path, csv)?;
    for p in written.into_iter().chain([final_path, diag_path]) {
        ctx.rec.output(p);
    }
    println!("heat flow: {} steps of d = {:e} written to {}", f.steps, f.d, out.display());
    Ok(OutputLocation::Dir(out.clone()))
}

pub fn mcf_cmd(a: &McfArgs, ctx: &mut Ctx) -> CliResult<OutputLocation> {
    let f = &a.flow;
    let model = load_model(require(&f.model, "model")?, ctx)?;
    let out = require(&f.out, "out")?;
    let cfg = flow_config(f, ctx.seed);
    ctx.rec.note("resolved", format!("{cfg:?}"));
    cfg.validate()?;
    if f.snapshot_every == 0 {
        return Err(CliError::contract("--snapshot-every must be >= 1"));
    }
    fs::create_dir_all(out)?;
    let sphere = icosphere(f.level).vertices;
    let mean_curvature = |m: &SnsModel| -> sns_core::Result<Vec<f64>> {
        Ok(quantity_field(m, &sphere, Quantity::MeanCurvature)?.scalars().expect("H is scalar").to_vec())
    };
    let initial = mean_curvature(&model)?;
    let range = range_of(&initial);
    let mut written = Vec::new();
    let first = out.join("mcf_0000.ply");
    io::save(&colored_mesh(&model, f.level, &initial, range)?, &first)?;
    written.push(first);

    let mut csv = String::from("step,mean_radius,area,finetune_mse\n");
    let (last, diags) = mcf_flow(&model, &cfg, |step, m, d| {
        let _ = writeln!(csv, "{step},{:.9e},{:.9e},{:.3e}", d.mean_radius, d.area, d.finetune.final_mse);
        if step % f.snapshot_every == 0 || step == f.steps {
            let path = out.join(format!("mcf_{step:04}.ply"));
            let mesh = colored_mesh(m, f.level, &mean_curvature(m)?, range)?;
            io::save(&mesh, &path)?;
            written.push(path);
        }
        Ok(())
    })?;
    let final_path = out.join("model_final.sns");
    last.save(&final_path, false)?;
    let diag_path = out.join("diagnostics.csv");
    fs::write(&diag_path, csv)?;
    for p in written.into_iter().chain([final_path, diag_path]) {
        ctx.rec.output(p);
    }
    if let Some(d) = diags.last() {
        ctx.rec.note("final_mean_radius", d.mean_radius);
        ctx.rec.note("final_area", d.area);
        println!("mcf: {} steps, mean radius {:.6}, area {:.6}", f.steps, d.mean_radius, d.area);
    }
    Ok(OutputLocation::Dir(out.clone()))
}

fn mesh_id(spec: &str) -> String {
    if let Some(level) = spec.strip_prefix("icosphere:") {
        return format!("icosphere{level}");
    }
    Path::new(spec).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string())
}

pub fn baseline_cmd(a: &BaselineArgs, ctx: &mut Ctx) -> CliResult<OutputLocation> {
    let out = require(&a.out, "out")?;
    if a.mesh.is_empty() || a.mesh.len() != a.model.len() {
        return Err(CliError::parse("give one --model per --mesh (at least one pair)"));
    }
    let meshes = a.mesh.iter().map(|m| load_mesh(m, ctx)).collect::<CliResult<Vec<_>>>()?;
    let models = a.model.iter().map(|m| load_model(m, ctx)).collect::<CliResult<Vec<_>>>()?;
    let mut ids: Vec<String> = Vec::new();
    for (i, spec) in a.mesh.iter().enumerate() {
        let id = mesh_id(spec);
        ids.push(if ids.contains(&id) { format!("{id}-{i}") } else { id });
    }
    let field = Field::load(&a.field, ctx)?;
    let cases: Vec<MeshCase> =
        (0..meshes.len()).map(|i| MeshCase { id: &ids[i], mesh: &meshes[i], model: &models[i] }).collect();
    let common = uniform_sphere(a.samples, ctx.seed).points;
    let cmp = compare_lbo(&cases, field.as_dyn(), a.sphere_gt, &common)?;

    fs::create_dir_all(out)?;
    let csv = rows_to_csv(&cmp.rows);
    let path = out.join("errors.csv");
    fs::write(&path, &csv)?;
    ctx.rec.output(path);
    for (name, mesh) in &cmp.colored {
        let path = out.join(format!("{name}.ply"));
        io::save(mesh, &path)?;
        ctx.rec.output(path);
    }
    print!("{csv}");
    Ok(OutputLocation::Dir(out.clone()))
}

pub fn sample_cmd(a: &SampleArgs, ctx: &mut Ctx) -> CliResult<OutputLocation> {
    let model = load_model(require(&a.model, "model")?, ctx)?;
    let out = require(&a.out, "out")?;
    let set = surface_samples(&model, a.m, a.n_target, ctx.seed)?;
    ensure_parent(out)?;
    fs::write(out, set.to_table())?;
    ctx.rec.output(out);
    let area = set.area_estimate()?;
    ctx.rec.note("kept", set.kept_count());
    ctx.rec.note("clamped", set.clamped);
    ctx.rec.note("area_estimate", area);
    if set.clamped > 0 {
        warn!("{} keep probabilities were clamped to 1; raise -m for an unbiased sample", set.clamped);
    }
    println!("kept {} of {} (target {}), area estimate {area:.6}", set.kept_count(), a.m, a.n_target);
    Ok(OutputLocation::File(out.clone()))
}

pub fn export_cmd(a: &ExportArgs, ctx: &mut Ctx) -> CliResult<OutputLocation> {
    let model = load_model(require(&a.model, "model")?, ctx)?;
    let out = require(&a.out, "out")?;
    let mut mesh = mesh_from_surface(&model, a.level)?;
    if let Some(name) = &a.colormap {
        let q = parse_quantity(name)?;
        let sphere = mesh.sphere.clone().expect("meshes from models carry their sphere points");
        let values = scalars(quantity_field(&model, &sphere, q)?, name)?;
        ctx.rec.note("stats", stats(&values));
        mesh.colors = Some(colorize(&values, None));
    }
    ensure_parent(out)?;
    io::save(&mesh, out)?;
    ctx.rec.output(out);
    println!("wrote {} vertices, {} faces to {}", mesh.vertices.len(), mesh.faces.len(), out.display());
    Ok(OutputLocation::File(out.clone()))
}

pub fn profile_list(a: &ProfileListArgs) -> CliResult<()> {
    let profiles = match &a.profile {
        Some(name) => vec![Profile::by_name(name).map_err(|e| CliError::parse(e.to_string()))?],
        None => Profile::all().to_vec(),
    };
    let mut text = String::new();
    for p in profiles {
        text += &format!("{}\n", p.name);
        for (k, v) in p.entries() {
            text += &format!("  {k:<22} {v}\n");
        }
    }
    // A closed pipe (`sns profile-list | head`) is not an error.
    match std::io::Write::write_all(&mut std::io::stdout().lock(), text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
