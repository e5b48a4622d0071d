//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records primitive operations as they execute; [`Tape::backward`]
//! walks the recording once in reverse and accumulates gradients. Tapes are
//! rebuilt per minibatch and are single-writer; independent tapes may live on
//! different threads.
//!
//! Second-order support for gradient-penalty objectives comes in two modes:
//! a closed-form construction for penalties on a frozen scalar classifier
//! (the penalty is then an ordinary forward expression, see
//! `methods::irmv1`), and the generic central-difference Hessian-vector
//! fallback in [`penalty_grad_fd`]. Both report which mode produced them.

use crate::tensor::{Tensor, TensorError};
use crate::util;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    /// Parameter input; receives a gradient.
    Leaf,
    /// Data input; no gradient.
    Constant,
    MatMul(Var, Var),
    /// Row-broadcast addition of a [1 x k] bias to an [n x k] matrix.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var, f64),
    Elu(Var),
    Softplus(Var),
    Ln(Var),
    /// Row-wise softmax of an [n x k] matrix.
    Softmax(Var),
    /// Mean cross-entropy between row-wise softmax of logits and a fixed
    /// target distribution (usually one-hot), reduced over rows.
    SoftmaxCrossEntropy { logits: Var, target: Tensor },
    /// Mean squared error over all entries against a fixed target.
    Mse { pred: Var, target: Tensor },
    /// Sum of squared entries.
    SqNorm(Var),
    Sum(Var),
    Dot(Var, Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (n, k) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(n * k);
        for i in 0..n {
            for j in 0..k {
                data.push(xv.data()[i * k + j] + bv.data()[j]);
            }
        }
        let v = Tensor::new(vec![n, k], data)?;
        Ok(self.push(Op::AddBias(x, bias), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).scale(c);
        self.push(Op::Scale(x, c), v)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|t| t + c);
        self.push(Op::AddConst(x, c), v)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(elu);
        self.push(Op::Elu(x), v)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).map(util::softplus);
        self.push(Op::Softplus(x), v)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        self.push(Op::Ln(x), v)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = softmax_rows(self.value(x));
        self.push(Op::Softmax(x), v)
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var, TensorError> {
        let z = self.value(logits);
        if !z.same_shape(target) {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: z.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let (n, k) = (z.rows(), z.cols());
        let mut total = 0.0;
        for i in 0..n {
            let row = &z.data()[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..k {
                let y = target.data()[i * k + j];
                if y != 0.0 {
                    total += y * (lse - row[j]);
                }
            }
        }
        let value = total / n as f64;
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "softmax_cross_entropy" });
        }
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits, target: target.clone() },
            Tensor::scalar(value),
        ))
    }

    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var, TensorError> {
        let p = self.value(pred);
        if !p.same_shape(target) {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                lhs: p.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let m = p.len() as f64;
        let value: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / m;
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "mse" });
        }
        Ok(self.push(Op::Mse { pred, target: target.clone() }, Tensor::scalar(value)))
    }

    pub fn sqnorm(&mut self, x: Var) -> Var {
        let value: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Op::SqNorm(x), Tensor::scalar(value))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = self.value(x).sum();
        self.push(Op::Sum(x), Tensor::scalar(value))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).dot(self.value(b))?;
        Ok(self.push(Op::Dot(a, b), Tensor::scalar(value)))
    }

    /// Reverse pass from a scalar root. Every leaf reachable from the root
    /// receives its accumulated gradient; unreached leaves read back as
    /// exact zeros through [`Gradients::get`].
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(TensorError::NotScalar { op: "backward", shape: rv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for id in (0..=root.0).rev() {
            let Some(up) = grads[id].take() else { continue };
            self.accumulate_inputs(id, &up, &mut grads)?;
            grads[id] = Some(up);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_inputs(
        &self,
        id: usize,
        up: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let da = up.matmul_t(self.value(*b))?;
                let db = self.value(*a).t_matmul(up)?;
                add_grad(grads, *a, da, &self.nodes)?;
                add_grad(grads, *b, db, &self.nodes)?;
            }
            Op::AddBias(x, bias) => {
                add_grad(grads, *x, up.clone(), &self.nodes)?;
                add_grad(grads, *bias, up.col_sums(), &self.nodes)?;
            }
            Op::Add(a, b) => {
                add_grad(grads, *a, up.clone(), &self.nodes)?;
                add_grad(grads, *b, up.clone(), &self.nodes)?;
            }
            Op::Sub(a, b) => {
                add_grad(grads, *a, up.clone(), &self.nodes)?;
                add_grad(grads, *b, up.scale(-1.0), &self.nodes)?;
            }
            Op::Mul(a, b) => {
                let da = up.mul(self.value(*b))?;
                let db = up.mul(self.value(*a))?;
                add_grad(grads, *a, da, &self.nodes)?;
                add_grad(grads, *b, db, &self.nodes)?;
            }
            Op::Scale(x, c) => add_grad(grads, *x, up.scale(*c), &self.nodes)?,
            Op::AddConst(x, _) => add_grad(grads, *x, up.clone(), &self.nodes)?,
            Op::Elu(x) => {
                let d = self
                    .value(*x)
                    .zip(up, "elu_grad", |xi, u| u * if xi > 0.0 { 1.0 } else { xi.exp() })?;
                add_grad(grads, *x, d, &self.nodes)?;
            }
            Op::Softplus(x) => {
                let d = self.value(*x).zip(up, "softplus_grad", |xi, u| u * util::sigmoid(xi))?;
                add_grad(grads, *x, d, &self.nodes)?;
            }
            Op::Ln(x) => {
                let d = self.value(*x).zip(up, "ln_grad", |xi, u| u / xi)?;
                add_grad(grads, *x, d, &self.nodes)?;
            }
            Op::Softmax(x) => {
                // dz = s .* (u - rowsum(u .* s))
                let s = &node.value;
                let (n, k) = (s.rows(), s.cols());
                let mut d = vec![0.0; n * k];
                for i in 0..n {
                    let srow = &s.data()[i * k..(i + 1) * k];
                    let urow = &up.data()[i * k..(i + 1) * k];
                    let inner: f64 = srow.iter().zip(urow).map(|(&a, &b)| a * b).sum();
                    for j in 0..k {
                        d[i * k + j] = srow[j] * (urow[j] - inner);
                    }
                }
                add_grad(grads, *x, Tensor::new(vec![n, k], d)?, &self.nodes)?;
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let u = up.item()?;
                let s = softmax_rows(self.value(*logits));
                let n = s.rows() as f64;
                let d = s.zip(target, "ce_grad", |si, yi| u * (si - yi) / n)?;
                add_grad(grads, *logits, d, &self.nodes)?;
            }
            Op::Mse { pred, target } => {
                let u = up.item()?;
                let m = self.value(*pred).len() as f64;
                let d = self
                    .value(*pred)
                    .zip(target, "mse_grad", |pi, ti| u * 2.0 * (pi - ti) / m)?;
                add_grad(grads, *pred, d, &self.nodes)?;
            }
            Op::SqNorm(x) => {
                let u = up.item()?;
                let d = self.value(*x).scale(2.0 * u);
                add_grad(grads, *x, d, &self.nodes)?;
            }
            Op::Sum(x) => {
                let u = up.item()?;
                let d = Tensor::filled(self.value(*x).shape().to_vec(), u);
                add_grad(grads, *x, d, &self.nodes)?;
            }
            Op::Dot(a, b) => {
                let u = up.item()?;
                add_grad(grads, *a, self.value(*b).scale(u), &self.nodes)?;
                add_grad(grads, *b, self.value(*a).scale(u), &self.nodes)?;
            }
        }
        Ok(())
    }
}

fn add_grad(
    grads: &mut [Option<Tensor>],
    v: Var,
    contribution: Tensor,
    nodes: &[Node],
) -> Result<(), TensorError> {
    // Constants absorb no gradient; skipping them keeps the pass cheap.
    if matches!(nodes[v.0].op, Op::Constant) {
        return Ok(());
    }
    match &mut grads[v.0] {
        Some(g) => g.axpy(1.0, &contribution)?,
        slot => *slot = Some(contribution),
    }
    Ok(())
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn softmax_rows(z: &Tensor) -> Tensor {
    let (n, k) = (z.rows(), z.cols());
    let mut data = vec![0.0; n * k];
    for i in 0..n {
        let row = &z.data()[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..k {
            let e = (row[j] - m).exp();
            data[i * k + j] = e;
            sum += e;
        }
        for j in 0..k {
            data[i * k + j] /= sum;
        }
    }
    Tensor::new(z.shape().to_vec(), data).expect("softmax preserves shape")
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, exact zeros when `v` did not participate.
    pub fn get(&self, tape: &Tape, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros_like(tape.value(v)),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.all_finite())
    }
}

// ---------------------------------------------------------------------------
// Parameter sets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Part {
    /// Feature-extractor parameters (theta).
    Feature,
    /// Classifier parameters (omega).
    Classifier,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub part: Part,
    pub tensor: Tensor,
}

/// Named model parameters, partitioned into feature-extractor and classifier
/// parts. The partition is disjoint and exhaustive by construction.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    pub entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, part: Part, tensor: Tensor) {
        self.entries.push(ParamEntry { name: name.into(), part, tensor });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn part_indices(&self, part: Part) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.part == part)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn flatten_part(&self, part: Part) -> Vec<f64> {
        let mut out = Vec::new();
        for e in self.entries.iter().filter(|e| e.part == part) {
            out.extend_from_slice(e.tensor.data());
        }
        out
    }

    pub fn write_part(&mut self, part: Part, flat: &[f64]) {
        let mut off = 0;
        for e in self.entries.iter_mut().filter(|e| e.part == part) {
            let n = e.tensor.len();
            e.tensor.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat slice length does not match partition");
    }

    pub fn linf_part(&self, part: Part) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.part == part)
            .fold(0.0_f64, |m, e| m.max(e.tensor.linf_norm()))
    }

    /// p <- p - lr * (g + weight_decay * p), elementwise per entry.
    pub fn sgd_step(&mut self, grads: &[Tensor], lr: f64, weight_decay: f64) -> Result<(), TensorError> {
        assert!(lr > 0.0, "learning rate must be positive");
        assert!(weight_decay >= 0.0, "weight decay must be nonnegative");
        assert_eq!(grads.len(), self.entries.len(), "one gradient per entry");
        for (e, g) in self.entries.iter_mut().zip(grads) {
            if !e.tensor.same_shape(g) {
                return Err(TensorError::ShapeMismatch {
                    op: "sgd_step",
                    lhs: e.tensor.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            for (p, gv) in e.tensor.data_mut().iter_mut().zip(g.data()) {
                *p -= lr * (gv + weight_decay * *p);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`ParamSet::sgd_step`].
pub fn sgd_step(params: &mut ParamSet, grads: &[Tensor], lr: f64, weight_decay: f64) -> Result<(), TensorError> {
    params.sgd_step(grads, lr, weight_decay)
}

// ---------------------------------------------------------------------------
// Second-order: gradient of a squared gradient norm

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyMode {
    /// Penalty built as a closed-form forward expression and differentiated
    /// exactly by one reverse pass.
    ExactClosedForm,
    /// Central-difference Hessian-vector product.
    FiniteDiff,
}

#[derive(Debug, Clone)]
pub struct PenaltyGrads {
    /// Value of ||grad_wrt L||^2 at the given parameters.
    pub penalty: f64,
    /// Gradient of the penalty with respect to every parameter entry.
    pub grads: Vec<Tensor>,
    pub mode: PenaltyMode,
}

/// Gradient of `||grad_{wrt} L||^2` with respect to all parameters, by a
/// central-difference Hessian-vector product with step
/// `h = 1e-4 * (1 + linf(wrt params))`.
///
/// `eval_grad` evaluates the loss at arbitrary parameters and returns the
/// loss value plus the gradient for every entry. It must consume identical
/// randomness on every call (freeze dropout masks and reparameterization
/// draws before calling).
pub fn penalty_grad_fd(
    params: &ParamSet,
    wrt: Part,
    mut eval_grad: impl FnMut(&ParamSet) -> Result<(f64, Vec<Tensor>), TensorError>,
) -> Result<PenaltyGrads, TensorError> {
    let (loss0, g0) = eval_grad(params)?;
    if !loss0.is_finite() || g0.iter().any(|g| !g.all_finite()) {
        return Err(TensorError::NonFinite { op: "penalty_grad_fd" });
    }
    let wrt_idx = params.part_indices(wrt);
    let mut norm_sq = 0.0;
    for &i in &wrt_idx {
        norm_sq += g0[i].data().iter().map(|v| v * v).sum::<f64>();
    }
    let norm = norm_sq.sqrt();
    if norm == 0.0 {
        let zeros = params.entries.iter().map(|e| Tensor::zeros_like(&e.tensor)).collect();
        return Ok(PenaltyGrads { penalty: 0.0, grads: zeros, mode: PenaltyMode::FiniteDiff });
    }

    let h = 1e-4 * (1.0 + params.linf_part(wrt));
    let mut plus = params.clone();
    let mut minus = params.clone();
    for &i in &wrt_idx {
        let dir = g0[i].scale(1.0 / norm);
        plus.entries[i].tensor.axpy(h, &dir)?;
        minus.entries[i].tensor.axpy(-h, &dir)?;
    }
    let (_, gp) = eval_grad(&plus)?;
    let (_, gm) = eval_grad(&minus)?;
    let scale = norm / h;
    let mut grads = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut d = gp[i].clone();
        d.axpy(-1.0, &gm[i])?;
        grads.push(d.scale(scale));
    }
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(TensorError::NonFinite { op: "penalty_grad_fd" });
    }
    Ok(PenaltyGrads { penalty: norm_sq, grads, mode: PenaltyMode::FiniteDiff })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of_square(x0: f64) -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(x0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        g.get(&tape, x).item().unwrap()
    }

    #[test]
    fn square_gradient() {
        assert_eq!(grad_of_square(3.0), 6.0);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(c, c).unwrap();
        let root = tape.sum(y);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(&tape, x).item().unwrap(), 0.0);
    }

    #[test]
    fn elu_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3], vec![0.0, 1.0, -1.0]).unwrap());
        let y = tape.elu(x);
        let v = tape.value(y).data().to_vec();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 1.0);
        assert!((v[2] - (-0.6321205588285577)).abs() < 1e-15);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, TensorError::NotScalar { .. }));
    }

    #[test]
    fn matmul_chain_matches_finite_differences() {
        use crate::oracle::finite_diff_grad;
        let a0 = vec![0.3, -0.7, 1.2, 0.4, 0.9, -0.2];
        let f = |av: &[f64]| {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::new(vec![2, 3], av.to_vec()).unwrap());
            let b = tape.constant(Tensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.7]).unwrap());
            let c = tape.matmul(a, b).unwrap();
            let e = tape.elu(c);
            let root = tape.sqnorm(e);
            tape.value(root).item().unwrap()
        };
        let fd = finite_diff_grad(f, &a0, 1e-4).unwrap();

        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2, 3], a0.clone()).unwrap());
        let b = tape.constant(Tensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.7]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        let e = tape.elu(c);
        let root = tape.sqnorm(e);
        let g = tape.backward(root).unwrap().get(&tape, a);
        for (ga, gf) in g.data().iter().zip(&fd) {
            assert!((ga - gf).abs() <= 1e-5 * (1.0 + gf.abs()), "{ga} vs {gf}");
        }
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_softmax_minus_target() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::new(vec![1, 2], vec![2.0, -1.0]).unwrap());
        let y = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let loss = tape.softmax_cross_entropy(z, &y).unwrap();
        let g = tape.backward(loss).unwrap().get(&tape, z);
        let p0 = (2.0f64).exp() / ((2.0f64).exp() + (-1.0f64).exp());
        assert!((g.data()[0] - (p0 - 1.0)).abs() < 1e-12);
        assert!((g.data()[1] - (1.0 - p0)).abs() < 1e-12);
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![2, 2], vec![0.1, -0.4, 0.7, 1.3]).unwrap());
            let w = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.5, -0.5, 0.25]).unwrap());
            let h = tape.matmul(x, w).unwrap();
            let e = tape.elu(h);
            let root = tape.sqnorm(e);
            let g = tape.backward(root).unwrap();
            (g.get(&tape, x).data().to_vec(), g.get(&tape, w).data().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn penalty_fd_quadratic_closed_form() {
        // L(w) = w^2 at w = 1: grad of (dL/dw)^2 = 8w = 8.
        let mut params = ParamSet::default();
        params.push("w", Part::Classifier, Tensor::scalar(1.0));
        let eval = |p: &ParamSet| {
            let w = p.entries[0].tensor.item().unwrap();
            Ok((w * w, vec![Tensor::scalar(2.0 * w)]))
        };
        let out = penalty_grad_fd(&params, Part::Classifier, eval).unwrap();
        assert_eq!(out.mode, PenaltyMode::FiniteDiff);
        assert!((out.penalty - 4.0).abs() < 1e-12);
        assert!((out.grads[0].item().unwrap() - 8.0).abs() < 1e-6);
    }

    #[test]
    fn penalty_fd_constant_loss_is_zero() {
        let mut params = ParamSet::default();
        params.push("w", Part::Classifier, Tensor::scalar(0.3));
        let eval = |_: &ParamSet| Ok((7.0, vec![Tensor::scalar(0.0)]));
        let out = penalty_grad_fd(&params, Part::Classifier, eval).unwrap();
        assert_eq!(out.penalty, 0.0);
        assert_eq!(out.grads[0].item().unwrap(), 0.0);
    }

    #[test]
    fn sgd_step_hand_values() {
        let mut params = ParamSet::default();
        params.push("p", Part::Feature, Tensor::scalar(1.0));
        params.sgd_step(&[Tensor::scalar(1.0)], 0.5, 0.0).unwrap();
        assert_eq!(params.entries[0].tensor.item().unwrap(), 0.5);

        let mut params = ParamSet::default();
        params.push("p", Part::Feature, Tensor::scalar(2.0));
        params.sgd_step(&[Tensor::scalar(0.0)], 0.1, 0.00125).unwrap();
        assert!((params.entries[0].tensor.item().unwrap() - 1.99975).abs() < 1e-12);

        // zero gradient, zero decay: fixed point
        let mut params = ParamSet::default();
        params.push("p", Part::Feature, Tensor::scalar(0.75));
        params.sgd_step(&[Tensor::scalar(0.0)], 0.3, 0.0).unwrap();
        assert_eq!(params.entries[0].tensor.item().unwrap(), 0.75);
    }
}
