//! Residual softplus MLP in double precision with exact input derivatives.
//!
//! Architecture: `h0 = lift·x + b`, `h_{k+1} = h_k + σ(W_k h_k + b_k)`,
//! `y = proj·h_L + b`, with `σ` the softplus.
//!
//! All evaluation is batched. A batch is a matrix whose columns are samples;
//! derivative information is carried by stacking extra column groups next to
//! the primal columns (forward-mode tangents, and for Hessians the
//! second-order terms of every input pair). The Hessian is computed by this
//! layerwise second-order recurrence in closed form, not by nested
//! differentiation.
//!
//! Parameter gradients come from a reverse sweep over a [`Tape`] that may
//! include tangent groups, so losses that depend on input Jacobians (surface
//! normals, scalar-field gradients) are differentiated exactly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result, SnsError};

/// Name of the generator recorded in every artifact that consumed randomness.
pub const RNG_NAME: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softplus,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of the softplus (the logistic function).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub width: usize,
    pub n_blocks: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize, width: usize, n_blocks: usize) -> Self {
        MlpSpec { input_dim, output_dim, width, n_blocks, activation: Activation::Softplus }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.width == 0 || self.n_blocks == 0 {
            return Err(contract(format!("all MLP dimensions must be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

/// Affine layer `x ↦ weight·x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Dense { weight: DMatrix::zeros(out, inp), bias: DVector::zeros(out) }
    }

    fn uniform(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        let weight = DMatrix::from_fn(out, inp, |_, _| rng.gen_range(-bound..bound));
        let bias = DVector::from_fn(out, |_, _| rng.gen_range(-bound..bound));
        Dense { weight, bias }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub lift: Dense,
    pub blocks: Vec<Dense>,
    pub proj: Dense,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        MlpParams {
            lift: Dense::zeros(spec.width, spec.input_dim),
            blocks: (0..spec.n_blocks).map(|_| Dense::zeros(spec.width, spec.width)).collect(),
            proj: Dense::zeros(spec.output_dim, spec.width),
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
    pub fn init_uniform(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lift = Dense::uniform(spec.width, spec.input_dim, &mut rng);
        let blocks = (0..spec.n_blocks).map(|_| Dense::uniform(spec.width, spec.width, &mut rng)).collect();
        let proj = Dense::uniform(spec.output_dim, spec.width, &mut rng);
        MlpParams { lift, blocks, proj }
    }

    pub fn spec_matches(&self, spec: &MlpSpec) -> bool {
        self.lift.weight.shape() == (spec.width, spec.input_dim)
            && self.lift.bias.len() == spec.width
            && self.blocks.len() == spec.n_blocks
            && self
                .blocks
                .iter()
                .all(|b| b.weight.shape() == (spec.width, spec.width) && b.bias.len() == spec.width)
            && self.proj.weight.shape() == (spec.output_dim, spec.width)
            && self.proj.bias.len() == spec.output_dim
    }

    fn layers(&self) -> impl Iterator<Item = (String, &Dense)> {
        std::iter::once(("lift".to_string(), &self.lift))
            .chain(self.blocks.iter().enumerate().map(|(i, b)| (format!("blocks.{i}"), b)))
            .chain(std::iter::once(("proj".to_string(), &self.proj)))
    }

    /// Parameter blocks in declaration order, with their names.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.blocks.len() + 4);
        for (name, layer) in self.layers() {
            out.push((format!("{name}.weight"), layer.weight.as_slice()));
            out.push((format!("{name}.bias"), layer.bias.as_slice()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.blocks.len() + 4);
        out.push(self.lift.weight.as_mut_slice());
        out.push(self.lift.bias.as_mut_slice());
        for b in &mut self.blocks {
            out.push(b.weight.as_mut_slice());
            out.push(b.bias.as_mut_slice());
        }
        out.push(self.proj.weight.as_mut_slice());
        out.push(self.proj.bias.as_mut_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_congruent(&self, other: &MlpParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|((_, x), (_, y))| x.len() == y.len())
    }

    pub fn dot(&self, other: &MlpParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .map(|((_, a), (_, b))| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, a: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= a);
        }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &MlpParams) {
        let src: Vec<Vec<f64>> = other.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += a * s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// `c = alpha·op(a)·op(b) + beta·c` on column-major nalgebra storage.
fn gemm(alpha: f64, a: &DMatrix<f64>, ta: bool, b: &DMatrix<f64>, tb: bool, beta: f64, c: &mut DMatrix<f64>) {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let (m, k, rsa, csa) = if ta { (ac, ar, ar as isize, 1) } else { (ar, ac, 1, ar as isize) };
    let (k2, n, rsb, csb) = if tb { (bc, br, br as isize, 1) } else { (br, bc, 1, br as isize) };
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(c.shape(), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let rsc = 1;
    let csc = m as isize;
    // SAFETY: the strides above describe exactly the column-major buffers of
    // `a`, `b` and `c`, whose shapes were checked against (m, k, n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

fn affine(layer: &Dense, input: &DMatrix<f64>, primal_cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(layer.weight.nrows(), input.ncols());
    gemm(1.0, &layer.weight, false, input, false, 0.0, &mut out);
    let rows = out.nrows();
    let data = out.as_mut_slice();
    for c in 0..primal_cols {
        for (x, b) in data[c * rows..(c + 1) * rows].iter_mut().zip(layer.bias.iter()) {
            *x += b;
        }
    }
    out
}

fn check_finite(m: &DMatrix<f64>, layer: impl FnOnce() -> String) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SnsError::NumericalOverflow { layer: layer() })
    }
}

fn row_sums_primal(m: &DMatrix<f64>, primal_cols: usize, out: &mut DVector<f64>) {
    let rows = m.nrows();
    out.fill(0.0);
    let data = m.as_slice();
    for c in 0..primal_cols {
        for (o, x) in out.iter_mut().zip(&data[c * rows..(c + 1) * rows]) {
            *o += x;
        }
    }
}

/// Intermediate values of a batched forward pass with tangent groups.
///
/// Column layout of every stored matrix: `[primal | tangent 1 | … | tangent K]`,
/// each group `batch` columns wide.
#[derive(Debug, Clone)]
pub struct Tape {
    pub batch: usize,
    pub tangents: usize,
    input: DMatrix<f64>,
    hidden: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

/// Values, input Jacobians and input Hessians for a batch of points.
#[derive(Debug, Clone)]
pub struct SecondOrder {
    /// `output_dim × batch`
    pub values: DMatrix<f64>,
    /// Per sample, `output_dim × input_dim`.
    pub jacobians: Vec<DMatrix<f64>>,
    /// Per sample, per output, `input_dim × input_dim` (symmetric).
    pub hessians: Vec<Vec<DMatrix<f64>>>,
}

/// A network: its shape, its weights and the seed they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
    pub seed: u64,
}

impl Mlp {
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Mlp { spec, params: MlpParams::init_uniform(&spec, seed), seed })
    }

    pub fn from_params(spec: MlpSpec, params: MlpParams, seed: u64) -> Result<Self> {
        spec.validate()?;
        if !params.spec_matches(&spec) {
            return Err(contract("parameter shapes do not match the MLP spec"));
        }
        if !params.all_finite() {
            return Err(contract("parameters contain non-finite entries"));
        }
        Ok(Mlp { spec, params, seed })
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.spec.input_dim {
            return Err(contract(format!(
                "input has {} rows, network expects {}",
                x.nrows(),
                self.spec.input_dim
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(contract("non-finite network input"));
        }
        Ok(())
    }

    /// Batched forward pass carrying `tangents.len()` forward-mode directions.
    ///
    /// Returns the stacked outputs `[y | J·t1 | … | J·tK]` and the tape needed
    /// by [`Mlp::backward`].
    pub fn forward_tangents(&self, x: &DMatrix<f64>, tangents: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, Tape)> {
        self.check_input(x)?;
        let batch = x.ncols();
        let groups = 1 + tangents.len();
        let mut input = DMatrix::zeros(self.spec.input_dim, groups * batch);
        input.columns_mut(0, batch).copy_from(x);
        for (j, t) in tangents.iter().enumerate() {
            if t.shape() != x.shape() {
                return Err(contract("tangent batch shape differs from input batch"));
            }
            input.columns_mut((j + 1) * batch, batch).copy_from(t);
        }

        let mut h = affine(&self.params.lift, &input, batch);
        check_finite(&h, || "lift".into())?;
        let mut hidden = Vec::with_capacity(self.spec.n_blocks + 1);
        let mut pre = Vec::with_capacity(self.spec.n_blocks);
        let w = self.spec.width;
        for (k, blk) in self.params.blocks.iter().enumerate() {
            let z = affine(blk, &h, batch);
            let mut next = h.clone();
            {
                let zs = z.as_slice();
                let ns = next.as_mut_slice();
                for c in 0..batch {
                    for r in 0..w {
                        let zp = zs[c * w + r];
                        ns[c * w + r] += softplus(zp);
                        let s = sigmoid(zp);
                        for j in 1..groups {
                            let idx = (j * batch + c) * w + r;
                            ns[idx] += s * zs[idx];
                        }
                    }
                }
            }
            check_finite(&next, || format!("blocks.{k}"))?;
            hidden.push(h);
            pre.push(z);
            h = next;
        }
        let y = affine(&self.params.proj, &h, batch);
        check_finite(&y, || "proj".into())?;
        hidden.push(h);
        Ok((y, Tape { batch, tangents: tangents.len(), input, hidden, pre }))
    }

    /// Reverse sweep: given the cotangent of the stacked output of
    /// [`Mlp::forward_tangents`], returns the gradient for every parameter.
    ///
    /// The batch reduction happens inside blocked matrix products whose
    /// summation order depends only on the shapes, so results are
    /// bitwise reproducible for a fixed batch.
    pub fn backward(&self, tape: &Tape, ybar: &DMatrix<f64>) -> Result<MlpParams> {
        let batch = tape.batch;
        let groups = 1 + tape.tangents;
        if ybar.shape() != (self.spec.output_dim, groups * batch) {
            return Err(contract(format!(
                "cotangent shape {:?} does not match output stack ({}, {})",
                ybar.shape(),
                self.spec.output_dim,
                groups * batch
            )));
        }
        let mut grad = MlpParams::zeros(&self.spec);
        let h_last = tape.hidden.last().expect("tape has hidden states");
        gemm(1.0, ybar, false, h_last, true, 0.0, &mut grad.proj.weight);
        row_sums_primal(ybar, batch, &mut grad.proj.bias);

        let w = self.spec.width;
        let mut hbar = DMatrix::zeros(w, groups * batch);
        gemm(1.0, &self.params.proj.weight, true, ybar, false, 0.0, &mut hbar);

        for k in (0..self.spec.n_blocks).rev() {
            let z = &tape.pre[k];
            let h_in = &tape.hidden[k];
            let mut zbar = DMatrix::zeros(w, groups * batch);
            {
                let zs = z.as_slice();
                let hb = hbar.as_slice();
                let zb = zbar.as_mut_slice();
                for c in 0..batch {
                    for r in 0..w {
                        let zp = zs[c * w + r];
                        let s = sigmoid(zp);
                        let ds = s * (1.0 - s);
                        let mut acc = s * hb[c * w + r];
                        for j in 1..groups {
                            let idx = (j * batch + c) * w + r;
                            acc += ds * zs[idx] * hb[idx];
                            zb[idx] = s * hb[idx];
                        }
                        zb[c * w + r] = acc;
                    }
                }
            }
            let gb = &mut grad.blocks[k];
            gemm(1.0, &zbar, false, h_in, true, 0.0, &mut gb.weight);
            row_sums_primal(&zbar, batch, &mut gb.bias);
            // residual path plus the branch through W_k
            gemm(1.0, &self.params.blocks[k].weight, true, &zbar, false, 1.0, &mut hbar);
        }
        gemm(1.0, &hbar, false, &tape.input, true, 0.0, &mut grad.lift.weight);
        row_sums_primal(&hbar, batch, &mut grad.lift.bias);

        for (name, t) in grad.tensors() {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(SnsError::NonFiniteGradient { block: name });
            }
        }
        Ok(grad)
    }

    /// Batched outputs, `output_dim × batch`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_tangents(x, &[])?.0)
    }

    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        let xm = DMatrix::from_column_slice(x.len(), 1, x);
        let y = self.forward_batch(&xm)?;
        Ok(y.column(0).into_owned())
    }

    /// Input Jacobians for a batch: `output_dim × input_dim` per sample.
    pub fn jacobian_batch(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let n_in = self.spec.input_dim;
        let batch = x.ncols();
        let tangents: Vec<DMatrix<f64>> = (0..n_in)
            .map(|i| DMatrix::from_fn(n_in, batch, |r, _| if r == i { 1.0 } else { 0.0 }))
            .collect();
        let (y, _) = self.forward_tangents(x, &tangents)?;
        let values = y.columns(0, batch).into_owned();
        let jacs = (0..batch)
            .map(|c| DMatrix::from_fn(self.spec.output_dim, n_in, |o, i| y[(o, (i + 1) * batch + c)]))
            .collect();
        Ok((values, jacs))
    }

    pub fn jacobian_input(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let xm = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.jacobian_batch(&xm)?.1.remove(0))
    }

    /// Values, Jacobians and Hessians for a batch, via the layerwise
    /// second-order chain rule:
    /// `a_ij = σ''(z)·z_i·z_j + σ'(z)·z_ij` for the activation of each block.
    pub fn second_order_batch(&self, x: &DMatrix<f64>) -> Result<SecondOrder> {
        self.check_input(x)?;
        let n = self.spec.input_dim;
        let batch = x.ncols();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let groups = 1 + n + pairs.len();
        let mut input = DMatrix::zeros(n, groups * batch);
        input.columns_mut(0, batch).copy_from(x);
        for i in 0..n {
            for c in 0..batch {
                input[(i, (1 + i) * batch + c)] = 1.0;
            }
        }
        let w = self.spec.width;
        let mut h = affine(&self.params.lift, &input, batch);
        check_finite(&h, || "lift".into())?;
        for (k, blk) in self.params.blocks.iter().enumerate() {
            let z = affine(blk, &h, batch);
            let zs = z.as_slice();
            let hs = h.as_mut_slice();
            for c in 0..batch {
                for r in 0..w {
                    let zp = zs[c * w + r];
                    let s = sigmoid(zp);
                    let ds = s * (1.0 - s);
                    hs[c * w + r] += softplus(zp);
                    for i in 0..n {
                        let idx = ((1 + i) * batch + c) * w + r;
                        hs[idx] += s * zs[idx];
                    }
                    for (q, &(i, j)) in pairs.iter().enumerate() {
                        let zi = zs[((1 + i) * batch + c) * w + r];
                        let zj = zs[((1 + j) * batch + c) * w + r];
                        let idx = ((1 + n + q) * batch + c) * w + r;
                        hs[idx] += ds * zi * zj + s * zs[idx];
                    }
                }
            }
            check_finite(&h, || format!("blocks.{k}"))?;
        }
        let y = affine(&self.params.proj, &h, batch);
        check_finite(&y, || "proj".into())?;

        let m = self.spec.output_dim;
        let values = y.columns(0, batch).into_owned();
        let mut jacobians = Vec::with_capacity(batch);
        let mut hessians = Vec::with_capacity(batch);
        for c in 0..batch {
            jacobians.push(DMatrix::from_fn(m, n, |o, i| y[(o, (1 + i) * batch + c)]));
            let mut hs = vec![DMatrix::zeros(n, n); m];
            for (q, &(i, j)) in pairs.iter().enumerate() {
                for (o, ho) in hs.iter_mut().enumerate() {
                    let v = y[(o, (1 + n + q) * batch + c)];
                    ho[(i, j)] = v;
                    ho[(j, i)] = v;
                }
            }
            hessians.push(hs);
        }
        Ok(SecondOrder { values, jacobians, hessians })
    }

    /// Per-output Hessians with respect to the input.
    pub fn hessian_input(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let xm = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.second_order_batch(&xm)?.hessians.remove(0))
    }

    /// Gradient of a scalar loss with respect to all parameters, given the
    /// loss's cotangents with respect to each output column of the batch.
    pub fn param_grad(&self, x: &DMatrix<f64>, cotangents: &DMatrix<f64>) -> Result<MlpParams> {
        if cotangents.shape() != (self.spec.output_dim, x.ncols()) {
            return Err(contract("cotangent batch does not match the output batch"));
        }
        let (_, tape) = self.forward_tangents(x, &[])?;
        self.backward(&tape, cotangents)
    }
}

/// RMSProp with momentum:
/// `v ← s·v + (1−s)·g²`, `m ← μ·m + g/(√v + ε)`, `p ← p − lr·m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub momentum: f64,
    pub smoothing: f64,
    pub epsilon: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp { lr: 1e-4, momentum: 0.9, smoothing: 0.99, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: RmsProp,
    /// running average of squared gradients, one buffer per parameter block
    pub square_avg: Vec<Vec<f64>>,
    pub momentum_buf: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: RmsProp, params: &MlpParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        OptimizerState {
            config,
            square_avg: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            momentum_buf: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<()> {
        rmsprop_step(params, grads, self)
    }
}

pub fn rmsprop_step(params: &mut MlpParams, grads: &MlpParams, state: &mut OptimizerState) -> Result<()> {
    let gt = grads.tensors();
    if !params.is_congruent(grads) || gt.len() != state.square_avg.len() {
        return Err(contract("gradient or optimizer state is not congruent with parameters"));
    }
    for (name, g) in &gt {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(SnsError::NonFiniteGradient { block: name.clone() });
        }
    }
    let RmsProp { lr, momentum, smoothing, epsilon } = state.config;
    for (((p, (_, g)), v), m) in params
        .tensors_mut()
        .into_iter()
        .zip(gt)
        .zip(state.square_avg.iter_mut())
        .zip(state.momentum_buf.iter_mut())
    {
        for i in 0..p.len() {
            v[i] = smoothing * v[i] + (1.0 - smoothing) * g[i] * g[i];
            m[i] = momentum * m[i] + g[i] / (v[i].sqrt() + epsilon);
            p[i] -= lr * m[i];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn net(seed: u64, n_in: usize, n_out: usize, width: usize, blocks: usize) -> Mlp {
        Mlp::new(MlpSpec::new(n_in, n_out, width, blocks), seed).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn zero_params_give_zero_everything() {
        let spec = MlpSpec::new(3, 3, 8, 2);
        let m = Mlp::from_params(spec, MlpParams::zeros(&spec), 0).unwrap();
        let x = [0.3, -0.2, 0.9];
        assert!(m.forward(&x).unwrap().iter().all(|&v| v == 0.0));
        assert!(m.jacobian_input(&x).unwrap().iter().all(|&v| v == 0.0));
        assert!(m.hessian_input(&x).unwrap().iter().all(|h| h.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        // one block, one unit: y = proj·(h0 + σ(0)) with h0 = 0
        let spec = MlpSpec::new(1, 1, 1, 1);
        let mut p = MlpParams::zeros(&spec);
        p.proj.weight[(0, 0)] = 1.0;
        let m = Mlp::from_params(spec, p, 0).unwrap();
        let y = m.forward(&[5.0]).unwrap()[0];
        assert!((y - std::f64::consts::LN_2).abs() < 1e-16);
        assert_eq!(y, 0.6931471805599453);
    }

    #[test]
    fn forward_is_deterministic() {
        let a = net(7, 3, 3, 16, 2);
        let b = net(7, 3, 3, 16, 2);
        let x = [0.1, 0.2, 0.3];
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        assert_eq!(a.forward(&x).unwrap(), a.forward(&x).unwrap());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let m = net(11, 3, 3, 16, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let j = m.jacobian_input(&x).unwrap();
            for i in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let d = (m.forward(&xp).unwrap() - m.forward(&xm).unwrap()) / (2.0 * h);
                for o in 0..3 {
                    worst = worst.max(rel_err(d[o], j[(o, i)]));
                }
            }
        }
        assert!(worst < 1e-6, "worst {worst}");
    }

    #[test]
    fn jacobian_of_scaled_input() {
        let m = net(5, 3, 3, 16, 2);
        let p = [0.2, -0.4, 0.1];
        let p2: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        let j2 = m.jacobian_input(&p2).unwrap() * 2.0;
        // FD of p ↦ f(2p)
        let h = 1e-6;
        for i in 0..3 {
            let mut a = p2.clone();
            let mut b = p2.clone();
            a[i] += 2.0 * h;
            b[i] -= 2.0 * h;
            let d = (m.forward(&a).unwrap() - m.forward(&b).unwrap()) / (2.0 * h);
            for o in 0..3 {
                assert!(rel_err(d[o], j2[(o, i)]) < 1e-7);
            }
        }
    }

    #[test]
    fn hessian_matches_fd_of_jacobian_and_is_symmetric() {
        let m = net(13, 3, 3, 16, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let hs = m.hessian_input(&x).unwrap();
            for hm in &hs {
                assert_eq!(hm, &hm.transpose());
            }
            for i in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let d = (m.jacobian_input(&xp).unwrap() - m.jacobian_input(&xm).unwrap()) / (2.0 * h);
                for o in 0..3 {
                    for j in 0..3 {
                        worst = worst.max(rel_err(d[(o, j)], hs[o][(j, i)]));
                    }
                }
            }
        }
        assert!(worst < 1e-5, "worst {worst}");
    }

    #[test]
    fn batched_second_order_agrees_with_pointwise() {
        let m = net(2, 3, 2, 8, 3);
        let x = DMatrix::from_column_slice(3, 2, &[0.1, 0.2, 0.3, -0.5, 0.4, 0.0]);
        let so = m.second_order_batch(&x).unwrap();
        for c in 0..2 {
            let xc: Vec<f64> = x.column(c).iter().copied().collect();
            assert!((so.jacobians[c].clone() - m.jacobian_input(&xc).unwrap()).abs().max() < 1e-14);
            let y = m.forward(&xc).unwrap();
            assert!((so.values.column(c) - y).abs().max() < 1e-14);
        }
    }

    fn mse_loss(m: &Mlp, x: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
        let y = m.forward_batch(x).unwrap();
        (y - t).iter().map(|v| v * v).sum::<f64>() / x.ncols() as f64
    }

    fn mse_grad(m: &Mlp, x: &DMatrix<f64>, t: &DMatrix<f64>) -> MlpParams {
        let y = m.forward_batch(x).unwrap();
        let cot = (y - t) * (2.0 / x.ncols() as f64);
        m.param_grad(x, &cot).unwrap()
    }

    #[test]
    fn param_grad_matches_directional_fd() {
        let m = net(21, 3, 3, 12, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(3, 20, |_, _| rng.gen_range(-1.0..1.0));
        let t = DMatrix::from_fn(3, 20, |_, _| rng.gen_range(-1.0..1.0));
        let g = mse_grad(&m, &x, &t);
        let delta = MlpParams::init_uniform(&m.spec, 77);
        let eps = 1e-6;
        let mut plus = m.clone();
        plus.params.axpy(eps, &delta);
        let mut minus = m.clone();
        minus.params.axpy(-eps, &delta);
        let fd = (mse_loss(&plus, &x, &t) - mse_loss(&minus, &x, &t)) / (2.0 * eps);
        let an = g.dot(&delta);
        assert!((fd - an).abs() / an.abs().max(1e-12) < 1e-6, "{fd} vs {an}");
    }

    #[test]
    fn param_grad_zero_at_exact_fit_and_linear_in_loss_scale() {
        let m = net(22, 3, 3, 8, 2);
        let x = DMatrix::from_fn(3, 10, |r, c| (r as f64 - 1.0) * 0.1 * c as f64);
        let t = m.forward_batch(&x).unwrap();
        let g = mse_grad(&m, &x, &t);
        assert!(g.tensors().iter().all(|(_, v)| v.iter().all(|&e| e == 0.0)));

        let t2 = DMatrix::from_element(3, 10, 0.5);
        let y = m.forward_batch(&x).unwrap();
        let cot = (&y - &t2) * 0.2;
        let g1 = m.param_grad(&x, &cot).unwrap();
        let g3 = m.param_grad(&x, &(cot * 3.0)).unwrap();
        for ((_, a), (_, b)) in g1.tensors().iter().zip(g3.tensors()) {
            for (u, v) in a.iter().zip(b) {
                assert!((3.0 * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn backward_through_tangents_matches_fd() {
        // loss = Σ_c |J(x_c)·t_c|², which depends on the input Jacobian
        let m = net(31, 3, 3, 10, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = DMatrix::from_fn(3, 8, |_, _| rng.gen_range(-1.0..1.0));
        let t = DMatrix::from_fn(3, 8, |_, _| rng.gen_range(-1.0..1.0));
        let loss = |m: &Mlp| {
            let (y, _) = m.forward_tangents(&x, &[t.clone()]).unwrap();
            y.columns(8, 8).iter().map(|v| v * v).sum::<f64>() + y.columns(0, 8).sum()
        };
        let (y, tape) = m.forward_tangents(&x, &[t.clone()]).unwrap();
        let mut ybar = DMatrix::zeros(3, 16);
        ybar.columns_mut(0, 8).fill(1.0);
        ybar.columns_mut(8, 8).copy_from(&(y.columns(8, 8) * 2.0));
        let g = m.backward(&tape, &ybar).unwrap();
        let delta = MlpParams::init_uniform(&m.spec, 5);
        let eps = 1e-6;
        let mut p = m.clone();
        p.params.axpy(eps, &delta);
        let mut q = m.clone();
        q.params.axpy(-eps, &delta);
        let fd = (loss(&p) - loss(&q)) / (2.0 * eps);
        let an = g.dot(&delta);
        assert!((fd - an).abs() / an.abs() < 1e-6, "{fd} vs {an}");
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let m = net(1, 3, 3, 4, 1);
        assert!(m.forward(&[f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn overflow_names_the_layer() {
        let spec = MlpSpec::new(1, 1, 1, 2);
        let mut p = MlpParams::zeros(&spec);
        p.lift.weight[(0, 0)] = 1e300;
        p.blocks[0].weight[(0, 0)] = 1e300;
        let m = Mlp::from_params(spec, p, 0).unwrap();
        match m.forward(&[1e10]) {
            Err(SnsError::NumericalOverflow { layer }) => assert_eq!(layer, "lift"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rmsprop_zero_gradient_is_a_no_op() {
        let spec = MlpSpec::new(2, 1, 3, 1);
        let mut p = MlpParams::init_uniform(&spec, 1);
        let before = p.clone();
        let g = MlpParams::zeros(&spec);
        let mut st = OptimizerState::new(RmsProp::default(), &p);
        st.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn rmsprop_single_step_by_hand() {
        let spec = MlpSpec::new(1, 1, 1, 1);
        let mut p = MlpParams::zeros(&spec);
        p.proj.bias[0] = 1.0;
        let mut g = MlpParams::zeros(&spec);
        g.proj.bias[0] = 1.0;
        let mut st = OptimizerState::new(RmsProp::default(), &p);
        st.step(&mut p, &g).unwrap();
        let v = st.square_avg.last().unwrap()[0];
        let m = st.momentum_buf.last().unwrap()[0];
        assert!((v - 0.01).abs() < 1e-15);
        assert!((m - 1.0 / (0.1 + 1e-8)).abs() < 1e-12);
        // 1 - 1e-4 * 9.999999 = 0.9990000001
        assert!((p.proj.bias[0] - 0.9990000001).abs() < 1e-14, "{}", p.proj.bias[0]);
    }

    #[test]
    fn rmsprop_minimizes_a_quadratic() {
        let spec = MlpSpec::new(1, 1, 1, 1);
        let mut p = MlpParams::zeros(&spec);
        let mut st = OptimizerState::new(RmsProp::default(), &p);
        let mut steps = 0;
        while steps < 50_000 {
            let x = p.proj.bias[0];
            let mut g = MlpParams::zeros(&spec);
            g.proj.bias[0] = 2.0 * (x - 3.0);
            st.step(&mut p, &g).unwrap();
            steps += 1;
        }
        assert!((p.proj.bias[0] - 3.0).abs() < 1e-2, "{}", p.proj.bias[0]);
    }

    #[test]
    fn rmsprop_rejects_non_finite_gradient() {
        let spec = MlpSpec::new(1, 1, 2, 1);
        let mut p = MlpParams::zeros(&spec);
        let mut g = MlpParams::zeros(&spec);
        g.blocks[0].bias[1] = f64::INFINITY;
        let mut st = OptimizerState::new(RmsProp::default(), &p);
        match st.step(&mut p, &g) {
            Err(SnsError::NonFiniteGradient { block }) => assert_eq!(block, "blocks.0.bias"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
