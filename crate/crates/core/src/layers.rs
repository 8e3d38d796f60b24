//! Tape-level building blocks shared by the duration and emotion paths.
//!
//! Each layer owns parameter *names*, not values; values live in a
//! [`ParamStore`] and are pulled onto a [`Tape`] per forward pass, which is
//! what makes repeated applications share weights.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::numerics::params::{randn, xavier};
use crate::numerics::{GruParams, ParamStore, Tape, Tensor2D, Var};

pub const LN_EPS: f64 = 1e-5;

/// `y = x · W (+ b)` with `W: [in × out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(prefix: &str, input: usize, output: usize, bias: bool) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: bias.then(|| format!("{prefix}.b")),
            input,
            output,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.insert(&self.weight, xavier(rng, self.input, self.output));
        if let Some(b) = &self.bias {
            store.insert(b, Tensor2D::zeros(1, self.output));
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &self.weight)?;
        let y = tape.matmul(x, w)?;
        match &self.bias {
            Some(b) => {
                let b = tape.param(store, b)?;
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// GRU cell whose nine tensors are stored under `{prefix}.{w_z,u_z,...}`.
#[derive(Clone, Debug)]
pub struct Gru {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

struct GruVars {
    w: [Var; 9],
}

impl Gru {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            input,
            hidden,
        }
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for part in GruParams::NAMES {
            let t = match &part[..1] {
                "w" => xavier(rng, self.input, self.hidden),
                "u" => xavier(rng, self.hidden, self.hidden),
                _ => Tensor2D::zeros(1, self.hidden),
            };
            store.insert(self.name(part), t);
        }
    }

    /// Reads the stored weights as a plain [`GruParams`].
    pub fn params(&self, store: &ParamStore) -> Result<GruParams> {
        let mut out = Vec::with_capacity(9);
        for part in GruParams::NAMES {
            out.push(store.get(&self.name(part))?.clone());
        }
        Ok(GruParams::from_tensors(out.try_into().expect("nine tensors")))
    }

    fn vars(&self, tape: &mut Tape, store: &ParamStore) -> Result<GruVars> {
        let mut w = [None; 9];
        for (slot, part) in w.iter_mut().zip(GruParams::NAMES) {
            *slot = Some(tape.param(store, &self.name(part))?);
        }
        Ok(GruVars {
            w: w.map(|v| v.expect("filled")),
        })
    }

    /// One update for a batch of rows.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, u: Var, s: Var) -> Result<Var> {
        let v = self.vars(tape, store)?;
        let [w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h] = v.w;
        let gate = |tape: &mut Tape, w: Var, uw: Var, b: Var, state: Var| -> Result<Var> {
            let a = tape.matmul(u, w)?;
            let c = tape.matmul(state, uw)?;
            let sum = tape.add(a, c)?;
            tape.add_row(sum, b)
        };
        let z = gate(tape, w_z, u_z, b_z, s)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, w_r, u_r, b_r, s)?;
        let r = tape.sigmoid(r);
        let rs = tape.mul(r, s)?;
        let h = gate(tape, w_h, u_h, b_h, rs)?;
        let h = tape.tanh(h);
        let keep = tape.one_minus(z);
        let old = tape.mul(keep, s)?;
        let new = tape.mul(z, h)?;
        tape.add(old, new)
    }
}

/// Row-wise layer normalization with learned gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(prefix: &str, dim: usize) -> Self {
        Self {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.insert(&self.gamma, Tensor2D::filled(1, self.dim, 1.0));
        store.insert(&self.beta, Tensor2D::zeros(1, self.dim));
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, &self.gamma)?;
        let b = tape.param(store, &self.beta)?;
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Two-layer feed-forward map with a tanh in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new(prefix: &str, dim: usize, hidden: usize) -> Self {
        Self {
            first: Linear::new(&format!("{prefix}.l1"), dim, hidden, true),
            second: Linear::new(&format!("{prefix}.l2"), hidden, dim, true),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.first.init(store, rng);
        self.second.init(store, rng);
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, store, x)?;
        let h = tape.tanh(h);
        self.second.forward(tape, store, h)
    }
}

/// Single-head cross-attention from phoneme queries onto a small memory
/// (duration prototypes or emotion-entity embeddings). The memory is first
/// reduced from `d_src` to `d_model`; keys and values are then projections
/// of the reduced memory.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub reduce: Linear,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub d_model: usize,
}

/// Intermediate values of one cross-attention pass.
#[derive(Clone, Copy, Debug)]
pub struct CrossAttentionVars {
    pub reduced: Var,
    pub weights: Var,
    pub values: Var,
    pub output: Var,
}

impl CrossAttention {
    pub fn new(prefix: &str, d_src: usize, d_model: usize) -> Self {
        Self {
            reduce: Linear::new(&format!("{prefix}.reduce"), d_src, d_model, false),
            query: Linear::new(&format!("{prefix}.ca.q"), d_model, d_model, false),
            key: Linear::new(&format!("{prefix}.ca.k"), d_model, d_model, false),
            value: Linear::new(&format!("{prefix}.ca.v"), d_model, d_model, false),
            d_model,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for l in [&self.reduce, &self.query, &self.key, &self.value] {
            l.init(store, rng);
        }
    }

    pub fn forward_detailed(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        memory: Var,
    ) -> Result<CrossAttentionVars> {
        if tape.value(queries).rows() == 0 {
            return Err(crate::error::invalid!("cross-attention with no queries"));
        }
        if tape.value(memory).rows() == 0 {
            return Err(crate::error::invalid!("cross-attention with empty memory"));
        }
        if tape.value(queries).cols() != self.d_model {
            return Err(shape_err!(
                "queries have {} columns, expected {}",
                tape.value(queries).cols(),
                self.d_model
            ));
        }
        let reduced = self.reduce.forward(tape, store, memory)?;
        let q = self.query.forward(tape, store, queries)?;
        let k = self.key.forward(tape, store, reduced)?;
        let values = self.value.forward(tape, store, reduced)?;
        let scores = tape.matmul_bt(q, k)?;
        let scores = tape.scale(scores, 1.0 / (self.d_model as f64).sqrt());
        let weights = tape.softmax_rows(scores)?;
        let output = tape.matmul(weights, values)?;
        Ok(CrossAttentionVars {
            reduced,
            weights,
            values,
            output,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, queries: Var, memory: Var) -> Result<Var> {
        Ok(self.forward_detailed(tape, store, queries, memory)?.output)
    }
}

/// Bidirectional GRU over a sequence followed by one linear head per output.
#[derive(Clone, Debug)]
pub struct RecurrentPredictor {
    pub forward_cell: Gru,
    pub backward_cell: Gru,
    pub heads: Vec<Linear>,
    pub hidden: usize,
}

impl RecurrentPredictor {
    pub fn new(prefix: &str, input: usize, hidden: usize, heads: &[&str]) -> Self {
        Self {
            forward_cell: Gru::new(&format!("{prefix}.fwd"), input, hidden),
            backward_cell: Gru::new(&format!("{prefix}.bwd"), input, hidden),
            heads: heads
                .iter()
                .map(|h| Linear::new(&format!("{prefix}.{h}"), 2 * hidden, 1, true))
                .collect(),
            hidden,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.forward_cell.init(store, rng);
        self.backward_cell.init(store, rng);
        for h in &self.heads {
            store.insert(&h.weight, randn(rng, 2 * self.hidden, 1, 0.1));
            store.insert(h.bias.as_ref().expect("heads carry a bias"), Tensor2D::zeros(1, 1));
        }
    }

    /// Concatenated `[forward | backward]` hidden states, `L × 2·hidden`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let len = tape.value(x).rows();
        if len == 0 {
            return Err(crate::error::invalid!("recurrent predictor on an empty sequence"));
        }
        let rows = (0..len).map(|i| tape.row(x, i)).collect::<Result<Vec<_>>>()?;

        let mut state = tape.constant(Tensor2D::zeros(1, self.hidden));
        let mut fwd = Vec::with_capacity(len);
        for &r in &rows {
            state = self.forward_cell.step(tape, store, r, state)?;
            fwd.push(state);
        }
        let mut state = tape.constant(Tensor2D::zeros(1, self.hidden));
        let mut bwd = vec![state; len];
        for i in (0..len).rev() {
            state = self.backward_cell.step(tape, store, rows[i], state)?;
            bwd[i] = state;
        }
        let f = tape.stack_rows(&fwd)?;
        let b = tape.stack_rows(&bwd)?;
        tape.concat_cols(f, b)
    }

    /// One `L × 1` output per head.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Vec<Var>> {
        let h = self.encode(tape, store, x)?;
        self.heads.iter().map(|head| head.forward(tape, store, h)).collect()
    }
}
