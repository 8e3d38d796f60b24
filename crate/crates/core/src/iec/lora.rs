//! Low-rank adaptation of a frozen linear map: `W' = W + A·B`.
//!
//! Shapes follow the column convention: `W` is `d_out × d_in`, `A` is
//! `d_out × R`, `B` is `R × d_in`, and the adapted map sends `x` to
//! `W'·x`. Rank zero is the identity adaptation.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::numerics::params::randn;
use crate::numerics::{ParamStore, Tape, Tensor2D, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    pub a: Tensor2D,
    pub b: Tensor2D,
    pub target: String,
}

impl LoraAdapter {
    pub fn new(a: Tensor2D, b: Tensor2D, target: impl Into<String>) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(shape_err!(
                "LoRA rank mismatch: A is {:?}, B is {:?}",
                a.shape(),
                b.shape()
            ));
        }
        Ok(Self {
            a,
            b,
            target: target.into(),
        })
    }

    /// Zero-rank adapter for a `d_out × d_in` map.
    pub fn identity(d_out: usize, d_in: usize, target: impl Into<String>) -> Self {
        Self {
            a: Tensor2D::zeros(d_out, 0),
            b: Tensor2D::zeros(0, d_in),
            target: target.into(),
        }
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    fn check(&self, w: &Tensor2D) -> Result<()> {
        if self.a.rows() != w.rows() || self.b.cols() != w.cols() {
            return Err(shape_err!(
                "adapter for `{}` is {}x{} but W is {:?}",
                self.target,
                self.a.rows(),
                self.b.cols(),
                w.shape()
            ));
        }
        Ok(())
    }

    /// `W + A·B`
    pub fn merged(&self, w: &Tensor2D) -> Result<Tensor2D> {
        self.check(w)?;
        w.add(&self.a.matmul(&self.b)?)
    }
}

fn column(x: &[f64]) -> Tensor2D {
    Tensor2D::new(x.len(), 1, x.to_vec()).expect("column shape")
}

/// `W·x + A·(B·x)`
pub fn lora_forward(x: &[f64], w: &Tensor2D, adapter: &LoraAdapter) -> Result<Vec<f64>> {
    adapter.check(w)?;
    if x.len() != w.cols() {
        return Err(shape_err!("x has {} entries, W is {:?}", x.len(), w.shape()));
    }
    let x = column(x);
    let base = w.matmul(&x)?;
    let low = adapter.a.matmul(&adapter.b.matmul(&x)?)?;
    Ok(base.add(&low)?.into_data())
}

/// `(W + A·B)·x`
pub fn lora_forward_merged(x: &[f64], w: &Tensor2D, adapter: &LoraAdapter) -> Result<Vec<f64>> {
    let merged = adapter.merged(w)?;
    if x.len() != w.cols() {
        return Err(shape_err!("x has {} entries, W is {:?}", x.len(), w.shape()));
    }
    Ok(merged.matmul(&column(x))?.into_data())
}

/// Frozen base weight plus trainable adapter, stored as `{prefix}.w`,
/// `{prefix}.lora_a`, `{prefix}.lora_b`.
#[derive(Clone, Debug)]
pub struct LoraLinear {
    pub prefix: String,
    pub d_in: usize,
    pub d_out: usize,
    pub rank: usize,
}

impl LoraLinear {
    pub fn new(prefix: &str, d_in: usize, d_out: usize, rank: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            d_in,
            d_out,
            rank,
        }
    }

    pub fn weight(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn lora_a(&self) -> String {
        format!("{}.lora_a", self.prefix)
    }

    pub fn lora_b(&self) -> String {
        format!("{}.lora_b", self.prefix)
    }

    /// Frozen random base, `A = 0`, Gaussian `B`.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let std = (2.0 / (self.d_in + self.d_out) as f64).sqrt();
        store.insert_frozen(self.weight(), randn(rng, self.d_out, self.d_in, std));
        store.insert(self.lora_a(), Tensor2D::zeros(self.d_out, self.rank));
        let b_std = 1.0 / (self.d_in as f64).sqrt();
        store.insert(self.lora_b(), randn(rng, self.rank, self.d_in, b_std));
    }

    pub fn adapter(&self, store: &ParamStore) -> Result<LoraAdapter> {
        LoraAdapter::new(
            store.get(&self.lora_a())?.clone(),
            store.get(&self.lora_b())?.clone(),
            self.weight(),
        )
    }

    /// Row-batch form: `X·Wᵀ + (X·Bᵀ)·Aᵀ` for `X: n × d_in`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &self.weight())?;
        let base = tape.matmul_bt(x, w)?;
        if self.rank == 0 {
            return Ok(base);
        }
        let a = tape.param(store, &self.lora_a())?;
        let b = tape.param(store, &self.lora_b())?;
        let xb = tape.matmul_bt(x, b)?;
        let low = tape.matmul_bt(xb, a)?;
        tape.add(base, low)
    }
}
