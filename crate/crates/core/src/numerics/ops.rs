//! Forward kernels shared by the inference path and the gradient tape.

use crate::error::{invalid, shape_err, Result};
use crate::numerics::tensor::{dot, Tensor2D};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax down each column: for a `K × N` logit matrix every input
/// position `n` gets a distribution over the `K` slots.
///
/// The normalizer is summed in sorted order, so permuting the slots
/// permutes the output bit-exactly.
pub fn softmax_over_slots(logits: &Tensor2D) -> Result<Tensor2D> {
    if !logits.is_finite() {
        return Err(invalid!("softmax_over_slots: non-finite logits"));
    }
    let (k, n) = logits.shape();
    let mut out = Tensor2D::zeros(k, n);
    let mut sorted = Vec::with_capacity(k);
    for col in 0..n {
        let max = (0..k).map(|r| logits.get(r, col)).fold(f64::NEG_INFINITY, f64::max);
        sorted.clear();
        for r in 0..k {
            let e = (logits.get(r, col) - max).exp();
            out.set(r, col, e);
            sorted.push(e);
        }
        sorted.sort_by(f64::total_cmp);
        let total: f64 = sorted.iter().sum();
        for r in 0..k {
            out.set(r, col, out.get(r, col) / total);
        }
    }
    Ok(out)
}

/// Softmax along each row.
pub fn softmax_rows(logits: &Tensor2D) -> Result<Tensor2D> {
    if !logits.is_finite() {
        return Err(invalid!("softmax_rows: non-finite logits"));
    }
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Layer normalization over the feature axis of a single vector.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(shape_err!(
            "layer_norm: x has {}, gamma {}, beta {}",
            x.len(),
            gamma.len(),
            beta.len()
        ));
    }
    if x.is_empty() {
        return Err(invalid!("layer_norm: empty vector"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    Ok(x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| g * (v - mean) * inv + b)
        .collect())
}

/// Row-wise [`layer_norm`] with `1 × cols` gain and bias rows.
pub fn layer_norm_rows(x: &Tensor2D, gamma: &Tensor2D, beta: &Tensor2D, eps: f64) -> Result<Tensor2D> {
    let mut out = Tensor2D::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let y = layer_norm(x.row(r), gamma.data(), beta.data(), eps)?;
        out.row_mut(r).copy_from_slice(&y);
    }
    Ok(out)
}

/// `softmax(q · kᵀ / √d) · v` with `d = q.cols()`.
pub fn scaled_dot_attention(q: &Tensor2D, k: &Tensor2D, v: &Tensor2D) -> Result<Tensor2D> {
    if k.rows() != v.rows() {
        return Err(shape_err!("attention: {} keys but {} values", k.rows(), v.rows()));
    }
    let scores = q.matmul_bt(k)?.scale(1.0 / (q.cols() as f64).sqrt());
    softmax_rows(&scores)?.matmul(v)
}

/// Weights of one GRU cell in row convention (`x · W`).
///
/// ```text
/// z  = σ(u·W_z + s·U_z + b_z)
/// r  = σ(u·W_r + s·U_r + b_r)
/// h̃  = tanh(u·W_h + (r ⊙ s)·U_h + b_h)
/// s' = (1 − z) ⊙ s + z ⊙ h̃
/// ```
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_z: Tensor2D,
    pub u_z: Tensor2D,
    pub b_z: Tensor2D,
    pub w_r: Tensor2D,
    pub u_r: Tensor2D,
    pub b_r: Tensor2D,
    pub w_h: Tensor2D,
    pub u_h: Tensor2D,
    pub b_h: Tensor2D,
}

impl GruParams {
    pub const NAMES: [&'static str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Tensor2D::zeros(input, hidden),
            u_z: Tensor2D::zeros(hidden, hidden),
            b_z: Tensor2D::zeros(1, hidden),
            w_r: Tensor2D::zeros(input, hidden),
            u_r: Tensor2D::zeros(hidden, hidden),
            b_r: Tensor2D::zeros(1, hidden),
            w_h: Tensor2D::zeros(input, hidden),
            u_h: Tensor2D::zeros(hidden, hidden),
            b_h: Tensor2D::zeros(1, hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn tensors(&self) -> [&Tensor2D; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h,
        ]
    }

    pub fn from_tensors(t: [Tensor2D; 9]) -> Self {
        let [w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h] = t;
        Self {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        }
    }
}

/// One GRU update applied to a batch of rows (`u`: `B × in`, `s`: `B × hidden`).
pub fn gru_cell_rows(u: &Tensor2D, s: &Tensor2D, p: &GruParams) -> Result<Tensor2D> {
    if u.cols() != p.input_dim() || s.cols() != p.hidden_dim() || u.rows() != s.rows() {
        return Err(shape_err!(
            "gru: input {:?}, state {:?}, params {}→{}",
            u.shape(),
            s.shape(),
            p.input_dim(),
            p.hidden_dim()
        ));
    }
    let gate = |w: &Tensor2D, uw: &Tensor2D, b: &Tensor2D, state: &Tensor2D| -> Result<Tensor2D> {
        u.matmul(w)?.add(&state.matmul(uw)?)?.add_row(b)
    };
    let z = gate(&p.w_z, &p.u_z, &p.b_z, s)?.map(sigmoid);
    let r = gate(&p.w_r, &p.u_r, &p.b_r, s)?.map(sigmoid);
    let rs = r.hadamard(s)?;
    let h = gate(&p.w_h, &p.u_h, &p.b_h, &rs)?.map(f64::tanh);
    let mut out = s.clone();
    for ((o, &zv), &hv) in out.data_mut().iter_mut().zip(z.data()).zip(h.data()) {
        *o = (1.0 - zv) * *o + zv * hv;
    }
    Ok(out)
}

/// Single-vector GRU update.
pub fn gru_cell(u: &[f64], s: &[f64], p: &GruParams) -> Result<Vec<f64>> {
    let out = gru_cell_rows(&Tensor2D::row_vector(u.to_vec()), &Tensor2D::row_vector(s.to_vec()), p)?;
    Ok(out.into_data())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}
