//! Reverse-mode gradient tape over a fixed set of dense operations.
//!
//! Every method records one node whose value is computed eagerly; calling
//! [`Tape::backward`] walks the nodes in reverse and applies each op's
//! hand-written adjoint. Parameters are pulled from a [`ParamStore`] by
//! name and their gradients come back as a [`Grads`] map.

use std::collections::BTreeMap;

use crate::error::{shape_err, Result};
use crate::numerics::ops::{self, sigmoid};
use crate::numerics::params::{Grads, ParamStore};
use crate::numerics::tensor::Tensor2D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    SoftmaxCols(Var),
    SoftmaxRows(Var),
    NormalizeRows(Var, f64),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Row(Var, usize),
    StackRows(Vec<Var>),
    ConcatCols(Var, Var),
    MeanRows(Var),
    MeanAbsDiff(Var, Tensor2D),
    BceWithLogits(Var, Tensor2D),
}

#[derive(Debug)]
struct Node {
    value: Tensor2D,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2D, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor2D {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn constant(&mut self, value: Tensor2D) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Looks up a stored parameter. Frozen entries become constants and get
    /// no gradient. Repeated lookups of one name share a node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let entry = store.entry(name)?;
        let v = if entry.frozen {
            self.push(entry.value.clone(), Op::Leaf)
        } else {
            self.push(entry.value.clone(), Op::Param)
        };
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_bt(self.value(b))?;
        Ok(self.push(v, Op::MatMulBT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).scale(factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 - x);
        self.push(v, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn softmax_cols(&mut self, a: Var) -> Result<Var> {
        let v = ops::softmax_over_slots(self.value(a))?;
        Ok(self.push(v, Op::SoftmaxCols(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let v = ops::softmax_rows(self.value(a))?;
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    /// Divides each row by its sum plus `eps`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for r in 0..v.rows() {
            let s: f64 = x.row(r).iter().sum::<f64>() + eps;
            v.row_mut(r).iter_mut().for_each(|e| *e /= s);
        }
        self.push(v, Op::NormalizeRows(a, eps))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let v = ops::layer_norm_rows(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(v, Op::LayerNorm { x, gamma, beta, eps }))
    }

    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        if index >= t.rows() {
            return Err(shape_err!("row {index} of {} rows", t.rows()));
        }
        let v = t.row_tensor(index);
        Ok(self.push(v, Op::Row(a, index)))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor2D> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor2D::vstack(&values)?;
        Ok(self.push(v, Op::StackRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = Tensor2D::hstack(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    /// Column means as a `1 × cols` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = t.sum_rows().scale(1.0 / t.rows() as f64);
        self.push(v, Op::MeanRows(a))
    }

    /// Mean absolute difference against a constant target (scalar node).
    pub fn mean_abs_diff(&mut self, a: Var, target: &Tensor2D) -> Result<Var> {
        let x = self.value(a);
        if !x.same_shape(target) {
            return Err(shape_err!(
                "L1 target {:?} vs prediction {:?}",
                target.shape(),
                x.shape()
            ));
        }
        let n = x.data().len() as f64;
        let total: f64 = x.data().iter().zip(target.data()).map(|(p, t)| (p - t).abs()).sum();
        Ok(self.push(Tensor2D::scalar(total / n), Op::MeanAbsDiff(a, target.clone())))
    }

    /// Mean binary cross-entropy of logits against `{0,1}` targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor2D) -> Result<Var> {
        let z = self.value(logits);
        if !z.same_shape(targets) {
            return Err(shape_err!(
                "BCE targets {:?} vs logits {:?}",
                targets.shape(),
                z.shape()
            ));
        }
        let n = z.data().len() as f64;
        let total: f64 = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(Tensor2D::scalar(total / n), Op::BceWithLogits(logits, targets.clone())))
    }

    /// Back-propagates from a scalar node; returns gradients for every
    /// non-frozen parameter touched by this tape (zeros where unused).
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).shape() != (1, 1) {
            return Err(shape_err!("backward from non-scalar {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor2D>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor2D::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param => grads[i] = Some(g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(self.value(*b))?;
                    let db = self.value(*a).matmul_at(&g)?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulBT(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_at(self.value(*a))?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.scale(-1.0));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.hadamard(self.value(*b))?;
                    let db = g.hadamard(self.value(*a))?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow(a, bias) => {
                    acc(&mut grads, *bias, g.sum_rows());
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g.scale(*f)),
                Op::OneMinus(a) => acc(&mut grads, *a, g.scale(-1.0)),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * y * (1.0 - y))),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * (1.0 - y * y))),
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(y, |g, y| g * y)),
                Op::SoftmaxCols(a) => {
                    let mut dx = Tensor2D::zeros(y.rows(), y.cols());
                    for c in 0..y.cols() {
                        let inner: f64 = (0..y.rows()).map(|r| g.get(r, c) * y.get(r, c)).sum();
                        for r in 0..y.rows() {
                            dx.set(r, c, y.get(r, c) * (g.get(r, c) - inner));
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::SoftmaxRows(a) => {
                    let mut dx = Tensor2D::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let inner: f64 = g.row(r).iter().zip(y.row(r)).map(|(g, y)| g * y).sum();
                        for ((d, &gv), &yv) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *d = yv * (gv - inner);
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::NormalizeRows(a, eps) => {
                    let x = self.value(*a);
                    let mut dx = Tensor2D::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let s: f64 = x.row(r).iter().sum::<f64>() + eps;
                        let gx: f64 = g.row(r).iter().zip(x.row(r)).map(|(g, x)| g * x).sum();
                        for (d, &gv) in dx.row_mut(r).iter_mut().zip(g.row(r)) {
                            *d = gv / s - gx / (s * s);
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let xv = self.value(*x);
                    let gam = self.value(*gamma).data();
                    let (rows, cols) = xv.shape();
                    let n = cols as f64;
                    let mut dx = Tensor2D::zeros(rows, cols);
                    let mut dgamma = vec![0.0; cols];
                    for r in 0..rows {
                        let row = xv.row(r);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let dxhat: Vec<f64> = g.row(r).iter().zip(gam).map(|(g, gm)| g * gm).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            dgamma[j] += g.get(r, j) * xhat[j];
                            dx.set(r, j, inv / n * (n * dxhat[j] - sum_d - xhat[j] * sum_dx));
                        }
                    }
                    acc(&mut grads, *gamma, Tensor2D::row_vector(dgamma));
                    acc(&mut grads, *beta, g.sum_rows());
                    acc(&mut grads, *x, dx);
                }
                Op::Row(a, index) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut da = Tensor2D::zeros(rows, cols);
                    da.row_mut(*index).copy_from_slice(g.data());
                    acc(&mut grads, *a, da);
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.value(*p).shape();
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        acc(&mut grads, *p, Tensor2D::new(rows, cols, slice)?);
                        offset += rows;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    acc(&mut grads, *a, g.col_slice(0, ca)?);
                    acc(&mut grads, *b, g.col_slice(ca, cb)?);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut da = Tensor2D::zeros(rows, cols);
                    for r in 0..rows {
                        for (d, &gv) in da.row_mut(r).iter_mut().zip(g.data()) {
                            *d = gv / rows as f64;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::MeanAbsDiff(a, target) => {
                    let x = self.value(*a);
                    let scale = g.data()[0] / x.data().len() as f64;
                    let da = x.zip_map(target, |p, t| {
                        if p > t {
                            scale
                        } else if p < t {
                            -scale
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *a, da);
                }
                Op::BceWithLogits(a, targets) => {
                    let z = self.value(*a);
                    let scale = g.data()[0] / z.data().len() as f64;
                    let da = z.zip_map(targets, |z, y| (sigmoid(z) - y) * scale);
                    acc(&mut grads, *a, da);
                }
            }
        }

        let mut out = Grads::new();
        for (name, &v) in &self.params {
            if matches!(self.nodes[v.0].op, Op::Param) {
                let (r, c) = self.value(v).shape();
                let g = grads
                    .get_mut(v.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor2D::zeros(r, c));
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Tensor2D>], v: Var, delta: Tensor2D) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{grad_check, GradCheckConfig};
    use crate::numerics::params::randn;
    use rand::SeedableRng;

    fn store_with(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for &(n, r, c) in shapes {
            s.insert(n, randn(&mut rng, r, c, 0.7));
        }
        s
    }

    fn check(store: &ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> Result<Var>) {
        let report = grad_check(
            |s: &ParamStore| {
                let mut t = Tape::new();
                let l = f(&mut t, s)?;
                Ok((t.scalar(l), t.backward(l)?))
            },
            store,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    // Reduces any matrix to a scalar through a fixed random projection so
    // that every output entry carries a distinct weight.
    fn project(t: &mut Tape, v: Var, seed: u64) -> Result<Var> {
        let (r, c) = t.value(v).shape();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = t.constant(randn(&mut rng, r, c, 1.0));
        let m = t.mul(v, w)?;
        let ones_r = t.constant(Tensor2D::filled(1, r, 1.0));
        let ones_c = t.constant(Tensor2D::filled(c, 1, 1.0));
        let s = t.matmul(ones_r, m)?;
        t.matmul(s, ones_c)
    }

    #[test]
    fn matmul_family_gradients() {
        let s = store_with(&[("a", 3, 4), ("b", 4, 2), ("c", 5, 4), ("bias", 1, 2)], 1);
        check(&s, |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let c = t.param(s, "c")?;
            let bias = t.param(s, "bias")?;
            let ab = t.matmul(a, b)?;
            let ab = t.add_row(ab, bias)?;
            let act = t.matmul_bt(a, c)?;
            let x = project(t, ab, 2)?;
            let y = project(t, act, 3)?;
            t.add(x, y)
        });
    }

    #[test]
    fn elementwise_gradients() {
        let s = store_with(&[("a", 3, 3), ("b", 3, 3)], 4);
        check(&s, |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let sa = t.sigmoid(a);
            let tb = t.tanh(b);
            let m = t.mul(sa, tb)?;
            let om = t.one_minus(m);
            let e = t.exp(om);
            let d = t.sub(e, a)?;
            let sc = t.scale(d, 0.3);
            project(t, sc, 5)
        });
    }

    #[test]
    fn softmax_and_norm_gradients() {
        let s = store_with(&[("a", 4, 5), ("g", 1, 5), ("be", 1, 5)], 6);
        check(&s, |t, s| {
            let a = t.param(s, "a")?;
            let g = t.param(s, "g")?;
            let be = t.param(s, "be")?;
            let sc = t.softmax_cols(a)?;
            let sr = t.softmax_rows(a)?;
            let nr = t.normalize_rows(sc, 1e-8);
            let ln = t.layer_norm(a, g, be, 1e-5)?;
            let x = project(t, sr, 7)?;
            let y = project(t, nr, 8)?;
            let z = project(t, ln, 9)?;
            let xy = t.add(x, y)?;
            t.add(xy, z)
        });
    }

    #[test]
    fn structural_gradients() {
        let s = store_with(&[("a", 3, 2), ("b", 3, 4)], 10);
        check(&s, |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let r0 = t.row(a, 0)?;
            let r2 = t.row(a, 2)?;
            let st = t.stack_rows(&[r2, r0, a])?;
            let cc = t.concat_cols(a, b)?;
            let mr = t.mean_rows(cc);
            let x = project(t, st, 11)?;
            let y = project(t, mr, 12)?;
            t.add(x, y)
        });
    }

    #[test]
    fn loss_gradients() {
        let s = store_with(&[("a", 2, 7)], 13);
        let target = Tensor2D::new(2, 7, (0..14).map(|i| (i % 2) as f64).collect()).unwrap();
        let l1_target = Tensor2D::filled(2, 7, 5.0);
        check(&s, |t, s| {
            let a = t.param(s, "a")?;
            let bce = t.bce_with_logits(a, &target)?;
            let e = t.exp(a);
            let l1 = t.mean_abs_diff(e, &l1_target)?;
            t.add(bce, l1)
        });
    }

    #[test]
    fn frozen_params_have_no_grad() {
        let mut s = store_with(&[("a", 1, 2)], 1);
        s.insert_frozen("w", Tensor2D::filled(2, 1, 1.0));
        let mut t = Tape::new();
        let a = t.param(&s, "a").unwrap();
        let w = t.param(&s, "w").unwrap();
        let y = t.matmul(a, w).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.contains_key("a"));
        assert!(!g.contains_key("w"));
    }

    #[test]
    fn backward_requires_scalar() {
        let s = store_with(&[("a", 2, 2)], 1);
        let mut t = Tape::new();
        let a = t.param(&s, "a").unwrap();
        assert!(t.backward(a).is_err());
    }
}
