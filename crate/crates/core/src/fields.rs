//! Scalar and vector fields on a surface, surface gradient and divergence, and
//! the two Laplace–Beltrami formulations.
//!
//! A field reaches the geometry code as a [`FieldJet`]: value, ambient
//! gradient and ambient Hessian of some extension `f̃` of the field into a
//! neighbourhood of the surface point. Extensions come either directly from an
//! ambient field evaluated at `S(p)`, or implicitly from a field `g` on the
//! sphere through `h ∘ S = g`.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::diffgeo::{fundamental_forms_batch, FundamentalForms};
use crate::error::{contract, Result, SnsError};
use crate::jet::{Jet, Real};
use crate::mlp::{Mlp, MlpSpec};
use crate::sns::{affine_params, points_matrix};
use crate::surface::{par_chunked, Surface, SurfaceJet};

/// Largest accepted condition number of the ambient Jacobian when pulling a
/// sphere field onto the surface.
pub const MAX_JACOBIAN_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldJet {
    pub value: f64,
    pub grad: Vector3<f64>,
    pub hess: Matrix3<f64>,
}

impl FieldJet {
    pub fn constant(value: f64) -> Self {
        FieldJet { value, grad: Vector3::zeros(), hess: Matrix3::zeros() }
    }

    pub fn scale(&self, a: f64) -> Self {
        FieldJet { value: self.value * a, grad: self.grad * a, hess: self.hess * a }
    }

    pub fn add(&self, o: &FieldJet) -> Self {
        FieldJet { value: self.value + o.value, grad: self.grad + o.grad, hess: self.hess + o.hess }
    }
}

impl From<Jet> for FieldJet {
    fn from(j: Jet) -> Self {
        FieldJet { value: j.v, grad: j.g, hess: j.h }
    }
}

/// A C² scalar function on R^3.
pub trait ScalarField: Send + Sync {
    fn values(&self, xs: &[Vector3<f64>]) -> Result<Vec<f64>>;
    fn jets(&self, xs: &[Vector3<f64>]) -> Result<Vec<FieldJet>>;

    /// Values and gradients only.
    fn gradients(&self, xs: &[Vector3<f64>]) -> Result<Vec<(f64, Vector3<f64>)>> {
        Ok(self.jets(xs)?.into_iter().map(|j| (j.value, j.grad)).collect())
    }
}

/// A C¹ vector function on R^3 with its Jacobian.
pub trait VectorField: Send + Sync {
    fn jet(&self, x: &Vector3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>)>;
}

/// Closed-form scalar fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticField {
    Constant(f64),
    /// `x[axis]`
    Coordinate(usize),
    /// `x[i]·x[j]`
    Product(usize, usize),
    /// `a·x + c`
    Linear { a: [f64; 3], c: f64 },
    /// `sin((k0 + k1·z)·x)·cos(k0·y)`, a field whose frequency varies over the
    /// surface.
    VariableSine { k0: f64, k1: f64 },
    /// `x[axis] / |x|`, constant along rays through the origin.
    RadialCoordinate(usize),
}

impl AnalyticField {
    pub fn eval<T: Real>(&self, x: [T; 3]) -> T {
        match *self {
            AnalyticField::Constant(c) => T::constant(c),
            AnalyticField::Coordinate(i) => x[i],
            AnalyticField::Product(i, j) => x[i] * x[j],
            AnalyticField::Linear { a, c } => x[0] * a[0] + x[1] * a[1] + x[2] * a[2] + c,
            AnalyticField::VariableSine { k0, k1 } => (x[0] * (x[2] * k1 + k0)).sin() * (x[1] * k0).cos(),
            AnalyticField::RadialCoordinate(i) => x[i] / (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt(),
        }
    }

    /// Parses `const:<c>`, `x`, `y`, `z`, `xy` (any pair), `sine:<k0>:<k1>`.
    pub fn parse(s: &str) -> Result<Self> {
        let axis = |c: char| "xyz".find(c);
        if let Some(c) = s.strip_prefix("const:") {
            return c.parse().map(AnalyticField::Constant).map_err(|_| contract(format!("bad constant `{c}`")));
        }
        if let Some(rest) = s.strip_prefix("sine:") {
            let parts: Vec<f64> = rest.split(':').filter_map(|t| t.parse().ok()).collect();
            if parts.len() == 2 {
                return Ok(AnalyticField::VariableSine { k0: parts[0], k1: parts[1] });
            }
            return Err(contract(format!("bad sine field `{s}`, expected sine:<k0>:<k1>")));
        }
        let chars: Vec<char> = s.chars().collect();
        match chars.as_slice() {
            [a] if axis(*a).is_some() => Ok(AnalyticField::Coordinate(axis(*a).unwrap())),
            [a, b] if axis(*a).is_some() && axis(*b).is_some() => {
                Ok(AnalyticField::Product(axis(*a).unwrap(), axis(*b).unwrap()))
            }
            _ => Err(contract(format!("unknown analytic field `{s}`"))),
        }
    }
}

impl ScalarField for AnalyticField {
    fn values(&self, xs: &[Vector3<f64>]) -> Result<Vec<f64>> {
        Ok(xs.iter().map(|x| self.eval([x.x, x.y, x.z])).collect())
    }

    fn jets(&self, xs: &[Vector3<f64>]) -> Result<Vec<FieldJet>> {
        Ok(xs.iter().map(|x| self.eval(Jet::seed(x)).into()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticVectorField {
    /// `F(x) = x`
    Position,
    Constant(Vector3<f64>),
    /// `(-y, x, 0)`
    RotationZ,
}

impl VectorField for AnalyticVectorField {
    fn jet(&self, x: &Vector3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>)> {
        Ok(match self {
            AnalyticVectorField::Position => (*x, Matrix3::identity()),
            AnalyticVectorField::Constant(v) => (*v, Matrix3::zeros()),
            AnalyticVectorField::RotationZ => {
                (Vector3::new(-x.y, x.x, 0.0), Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0))
            }
        })
    }
}

static NEXT_FIELD_ID: AtomicU64 = AtomicU64::new(1);

/// Neural scalar field: a 3→3 network whose scalar value is the mean of its
/// three outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFieldModel {
    pub mlp: Mlp,
    pub id: u64,
}

pub const FIELD_CHECKPOINT_KIND: &str = "scalar-field";

impl ScalarFieldModel {
    pub fn default_spec() -> MlpSpec {
        MlpSpec::new(3, 3, 10, 2)
    }

    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        Self::from_mlp(Mlp::new(spec, seed)?)
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.spec.input_dim != 3 || mlp.spec.output_dim != 3 {
            return Err(contract("scalar field networks map R^3 to R^3"));
        }
        Ok(ScalarFieldModel { mlp, id: NEXT_FIELD_ID.fetch_add(1, Ordering::Relaxed) })
    }

    /// The exact field `a·x + c`.
    pub fn linear(spec: MlpSpec, a: [f64; 3], c: f64) -> Result<Self> {
        let rows = DMatrix::from_fn(3, 3, |_, j| a[j]);
        Self::from_mlp(Mlp::from_params(spec, affine_params(&spec, &rows, &[c; 3])?, 0)?)
    }

    pub fn to_checkpoint(&self) -> crate::checkpoint::Checkpoint {
        crate::checkpoint::Checkpoint::new(FIELD_CHECKPOINT_KIND, self.mlp.clone()).with_meta("output_rule", "mean")
    }

    pub fn from_checkpoint(c: crate::checkpoint::Checkpoint) -> Result<Self> {
        if c.kind != FIELD_CHECKPOINT_KIND {
            return Err(contract(format!("checkpoint holds a `{}`, not a scalar field", c.kind)));
        }
        Self::from_mlp(c.mlp)
    }
}

impl ScalarField for ScalarFieldModel {
    fn values(&self, xs: &[Vector3<f64>]) -> Result<Vec<f64>> {
        par_chunked(xs, |chunk| {
            let y = self.mlp.forward_batch(&points_matrix(chunk))?;
            Ok((0..chunk.len()).map(|c| y.column(c).sum() / 3.0).collect())
        })
    }

    fn gradients(&self, xs: &[Vector3<f64>]) -> Result<Vec<(f64, Vector3<f64>)>> {
        par_chunked(xs, |chunk| {
            let (y, jacs) = self.mlp.jacobian_batch(&points_matrix(chunk))?;
            Ok((0..chunk.len())
                .map(|c| {
                    let j = &jacs[c];
                    (y.column(c).sum() / 3.0, Vector3::from_fn(|i, _| (j[(0, i)] + j[(1, i)] + j[(2, i)]) / 3.0))
                })
                .collect())
        })
    }

    fn jets(&self, xs: &[Vector3<f64>]) -> Result<Vec<FieldJet>> {
        par_chunked(xs, |chunk| {
            let so = self.mlp.second_order_batch(&points_matrix(chunk))?;
            Ok((0..chunk.len())
                .map(|c| {
                    let j = &so.jacobians[c];
                    let h = &so.hessians[c];
                    FieldJet {
                        value: so.values.column(c).sum() / 3.0,
                        grad: Vector3::from_fn(|i, _| (j[(0, i)] + j[(1, i)] + j[(2, i)]) / 3.0),
                        hess: Matrix3::from_fn(|a, b| (h[0][(a, b)] + h[1][(a, b)] + h[2][(a, b)]) / 3.0),
                    }
                })
                .collect())
        })
    }
}

/// `∇f̃ - (∇f̃·n)n`
pub fn surface_gradient(grad: &Vector3<f64>, n: &Vector3<f64>) -> Vector3<f64> {
    grad - n * grad.dot(n)
}

/// `tr J - nᵀJn` for the ambient Jacobian `J` of a vector field.
pub fn surface_divergence(jacobian: &Matrix3<f64>, n: &Vector3<f64>) -> f64 {
    jacobian.trace() - n.dot(&(jacobian * n))
}

/// Ambient Jacobian of the unit normal extended constantly along itself:
/// `[n_u n_v 0]·[S_u S_v n]⁻¹`.
pub fn normal_jacobian(f: &FundamentalForms) -> Result<Matrix3<f64>> {
    let c = f.s_u.cross(&f.s_v);
    let len = c.norm();
    let proj = Matrix3::identity() - f.normal * f.normal.transpose();
    let n_u = proj * (f.s_uu.cross(&f.s_v) + f.s_u.cross(&f.s_uv)) / len;
    let n_v = proj * (f.s_uv.cross(&f.s_v) + f.s_u.cross(&f.s_vv)) / len;
    let frame = Matrix3::from_columns(&[f.s_u, f.s_v, f.normal]);
    let inv = frame.try_inverse().ok_or(SnsError::DegenerateParametrization {
        point: [f.p.x, f.p.y, f.p.z],
        det: f.distortion * f.distortion,
    })?;
    Ok(Matrix3::from_columns(&[n_u, n_v, Vector3::zeros()]) * inv)
}

/// `Δf̃ - 2H(∇f̃·n) - nᵀ Hess(f̃) n`
pub fn lbo_meancurv(fj: &FieldJet, f: &FundamentalForms) -> f64 {
    let n = &f.normal;
    fj.hess.trace() - 2.0 * f.mean_curvature * fj.grad.dot(n) - n.dot(&(fj.hess * n))
}

/// Surface divergence of the surface gradient, with the gradient field's
/// Jacobian assembled from `Hess f̃` and the exact normal derivatives.
pub fn lbo_divgrad(fj: &FieldJet, f: &FundamentalForms) -> Result<f64> {
    let n = &f.normal;
    let g = &fj.grad;
    let jn = normal_jacobian(f)?;
    let jac = fj.hess - n * (fj.hess * n + jn.transpose() * g).transpose() - jn * g.dot(n);
    Ok(surface_divergence(&jac, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LboForm {
    DivGrad,
    MeanCurv,
}

impl LboForm {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "divgrad" => Some(LboForm::DivGrad),
            "meancurv" => Some(LboForm::MeanCurv),
            _ => None,
        }
    }

    pub fn apply(self, fj: &FieldJet, f: &FundamentalForms) -> Result<f64> {
        match self {
            LboForm::DivGrad => lbo_divgrad(fj, f),
            LboForm::MeanCurv => Ok(lbo_meancurv(fj, f)),
        }
    }
}

/// 2-norm condition number of a 3×3 matrix.
pub fn condition_number(m: &Matrix3<f64>) -> f64 {
    let s = m.singular_values();
    let (hi, lo) = (s.max(), s.min());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Ambient gradient and Hessian at `S(p)` of the field `h` with `h ∘ S = g`:
/// `∇h = J⁻ᵀ∇g`, `Hess h = J⁻ᵀ(Hess g - Σ_k (∇h)_k Hess S_k)J⁻¹`.
pub fn implicit_jet(g: &FieldJet, s: &SurfaceJet) -> Result<FieldJet> {
    let cond = condition_number(&s.jacobian);
    if !(cond < MAX_JACOBIAN_CONDITION) {
        return Err(SnsError::IllConditioned { cond });
    }
    let inv = s.jacobian.try_inverse().ok_or(SnsError::IllConditioned { cond })?;
    let inv_t = inv.transpose();
    let grad = inv_t * g.grad;
    let curv = (0..3).fold(Matrix3::zeros(), |acc, k| acc + s.hessians[k] * grad[k]);
    let hess = inv_t * (g.hess - curv) * inv;
    Ok(FieldJet { value: g.value, grad, hess: (hess + hess.transpose()) * 0.5 })
}

/// `J⁻ᵀ∇g`: the ambient gradient of the implicit field.
pub fn implicit_gradient(grad_g: &Vector3<f64>, jacobian: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let cond = condition_number(jacobian);
    if !(cond < MAX_JACOBIAN_CONDITION) {
        return Err(SnsError::IllConditioned { cond });
    }
    let inv = jacobian.try_inverse().ok_or(SnsError::IllConditioned { cond })?;
    Ok(inv.transpose() * grad_g)
}

/// Where a scalar field lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldDomain {
    /// Defined on R^3 and evaluated at the surface point `S(p)`.
    Ambient,
    /// Defined on the sphere (extended to R^3) and carried to the surface by
    /// `h ∘ S = g`.
    Sphere,
}

/// Geometry at a fixed set of sphere points, computed once and reused.
#[derive(Debug, Clone)]
pub struct GeometryCache {
    pub points: Vec<Vector3<f64>>,
    pub jets: Vec<SurfaceJet>,
    pub forms: Vec<FundamentalForms>,
    /// Free-form key, typically model source plus sample seed.
    pub key: String,
}

impl GeometryCache {
    pub fn build<S: Surface + ?Sized>(surface: &S, points: &[Vector3<f64>], key: &str) -> Result<Self> {
        let jets = surface.jets(points)?;
        let forms = fundamental_forms_batch(surface, points)?;
        Ok(GeometryCache { points: points.to_vec(), jets, forms, key: key.into() })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn surface_points(&self) -> Vec<Vector3<f64>> {
        self.forms.iter().map(|f| f.position).collect()
    }

    /// Ambient field jets at every cached surface point.
    pub fn field_jets<F: ScalarField + ?Sized>(&self, field: &F, domain: FieldDomain) -> Result<Vec<FieldJet>> {
        match domain {
            FieldDomain::Ambient => field.jets(&self.surface_points()),
            FieldDomain::Sphere => {
                let g = field.jets(&self.points)?;
                g.iter()
                    .zip(&self.jets)
                    .enumerate()
                    .map(|(i, (g, s))| implicit_jet(g, s).map_err(|e| SnsError::at(i, e)))
                    .collect()
            }
        }
    }

    pub fn lbo<F: ScalarField + ?Sized>(&self, field: &F, domain: FieldDomain, form: LboForm) -> Result<Vec<f64>> {
        let jets = self.field_jets(field, domain)?;
        self.lbo_of_jets(&jets, form)
    }

    pub fn lbo_of_jets(&self, jets: &[FieldJet], form: LboForm) -> Result<Vec<f64>> {
        jets.iter()
            .zip(&self.forms)
            .enumerate()
            .map(|(i, (j, f))| form.apply(j, f).map_err(|e| SnsError::at(i, e)))
            .collect()
    }

    pub fn surface_gradients<F: ScalarField + ?Sized>(&self, field: &F, domain: FieldDomain) -> Result<Vec<Vector3<f64>>> {
        let jets = self.field_jets(field, domain)?;
        Ok(jets.iter().zip(&self.forms).map(|(j, f)| surface_gradient(&j.grad, &f.normal)).collect())
    }

    pub fn divergence<V: VectorField + ?Sized>(&self, field: &V) -> Result<Vec<f64>> {
        self.forms
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let (_, jac) = field.jet(&f.position).map_err(|e| SnsError::at(i, e))?;
                Ok(surface_divergence(&jac, &f.normal))
            })
            .collect()
    }
}
