//! Reusable network blocks: a stacked Conv1d feature extractor, the highway
//! combination head (gated mix of a nonlinear transform and a linear
//! autoregressive carry), and a two-layer MLP.
//!
//! Parameters are plain named buffers. Before a forward pass a block is
//! *bound* to a tape, which inserts every parameter as a gradient leaf;
//! the bound handle then builds the graph for as many samples as needed,
//! so one backward pass yields whole-batch gradients.

use rand::Rng;
use thiserror::Error;

use crate::rng::sub_rng;
use crate::tensor::{Tape, TensorError, TensorId};

/// Kernel time-extent of every conv layer.
pub const KERNEL: usize = 3;

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("conv stack of depth {depth} needs a window of at least {min}, got {window}")]
    WindowTooShortForDepth { depth: usize, window: usize, min: usize },
    #[error("highway window {hw} exceeds the input window {window}")]
    HighwayWindowTooLong { hw: usize, window: usize },
    #[error("{field} must be at least 1")]
    ZeroField { field: &'static str },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A named trainable buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Param {
    /// uniform(−a, a) with a = 1/√fan_in, drawn from the stream derived
    /// from `(seed, name)`.
    pub fn uniform(name: &str, shape: Vec<usize>, fan_in: usize, seed: u64) -> Param {
        let a = 1.0 / (fan_in as f64).sqrt();
        let mut rng = sub_rng(seed, name);
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-a..a)).collect();
        Param {
            name: name.to_string(),
            shape,
            data,
            grad: None,
        }
    }

    pub fn zeros(name: &str, shape: Vec<usize>) -> Param {
        let numel = shape.iter().product();
        Param {
            name: name.to_string(),
            shape,
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<TensorId, TensorError> {
        tape.leaf(self.data.clone(), self.shape.clone(), trainable)
    }

    /// Copy this parameter's gradient out of the tape, if backward reached it.
    fn take_grad(&mut self, tape: &Tape, id: TensorId) {
        if let Some(g) = tape.grad(id) {
            match &mut self.grad {
                Some(buf) => {
                    for (b, v) in buf.iter_mut().zip(g) {
                        *b += v;
                    }
                }
                None => self.grad = Some(g.to_vec()),
            }
        }
    }
}

/// `y = W·x + b` on a vector, via the tape.
fn linear_vec(tape: &mut Tape, w: TensorId, b: TensorId, x: TensorId) -> Result<TensorId, TensorError> {
    let in_dim = tape.shape(w)[1];
    let out_dim = tape.shape(w)[0];
    let col = tape.reshape(x, vec![in_dim, 1])?;
    let prod = tape.matmul(w, col)?;
    let flat = tape.reshape(prod, vec![out_dim])?;
    tape.add(flat, b)
}

// ── conv stack ───────────────────────────────────────────────────────

/// Stacked Conv1d + relu over the time axis, flattened and mapped to an
/// n-vector by a linear head.
#[derive(Debug, Clone)]
pub struct CnnStack {
    pub convs: Vec<(Param, Param)>, // (kernels [c_out×c_in×K], bias [c_out])
    pub head_w: Param,              // [n × channels·l_out]
    pub head_b: Param,              // [n]
    pub n: usize,
    pub window: usize,
    pub channels: usize,
}

pub struct BoundCnnStack {
    convs: Vec<(TensorId, TensorId)>,
    head_w: TensorId,
    head_b: TensorId,
    n: usize,
    channels: usize,
    l_out: usize,
}

impl CnnStack {
    pub fn new(
        prefix: &str,
        n: usize,
        window: usize,
        depth: usize,
        channels: usize,
        seed: u64,
    ) -> Result<CnnStack, LayerError> {
        if depth == 0 {
            return Err(LayerError::ZeroField { field: "depth" });
        }
        if channels == 0 {
            return Err(LayerError::ZeroField { field: "channels" });
        }
        let min = depth * (KERNEL - 1) + 1;
        if window < min {
            return Err(LayerError::WindowTooShortForDepth { depth, window, min });
        }
        let mut convs = Vec::with_capacity(depth);
        for i in 0..depth {
            let c_in = if i == 0 { n } else { channels };
            let w = Param::uniform(
                &format!("{prefix}.conv{i}.weight"),
                vec![channels, c_in, KERNEL],
                c_in * KERNEL,
                seed,
            );
            let b = Param::zeros(&format!("{prefix}.conv{i}.bias"), vec![channels]);
            convs.push((w, b));
        }
        let l_out = window - depth * (KERNEL - 1);
        let head_w = Param::uniform(
            &format!("{prefix}.head.weight"),
            vec![n, channels * l_out],
            channels * l_out,
            seed,
        );
        let head_b = Param::zeros(&format!("{prefix}.head.bias"), vec![n]);
        Ok(CnnStack {
            convs,
            head_w,
            head_b,
            n,
            window,
            channels,
        })
    }

    /// Closed-form parameter count for a given configuration.
    pub fn param_count(n: usize, window: usize, depth: usize, channels: usize) -> usize {
        let l_out = window - depth * (KERNEL - 1);
        let mut total = 0;
        for i in 0..depth {
            let c_in = if i == 0 { n } else { channels };
            total += channels * c_in * KERNEL + channels;
        }
        total + n * channels * l_out + n
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for (w, b) in &self.convs {
            out.push(w);
            out.push(b);
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (w, b) in &mut self.convs {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundCnnStack, TensorError> {
        let mut convs = Vec::with_capacity(self.convs.len());
        for (w, b) in &self.convs {
            convs.push((w.bind(tape, trainable)?, b.bind(tape, trainable)?));
        }
        Ok(BoundCnnStack {
            convs,
            head_w: self.head_w.bind(tape, trainable)?,
            head_b: self.head_b.bind(tape, trainable)?,
            n: self.n,
            channels: self.channels,
            l_out: self.window - self.convs.len() * (KERNEL - 1),
        })
    }

    pub fn take_grads(&mut self, tape: &Tape, bound: &BoundCnnStack) {
        for ((w, b), (wid, bid)) in self.convs.iter_mut().zip(&bound.convs) {
            w.take_grad(tape, *wid);
            b.take_grad(tape, *bid);
        }
        self.head_w.take_grad(tape, bound.head_w);
        self.head_b.take_grad(tape, bound.head_b);
    }
}

impl BoundCnnStack {
    /// `window` is an `[n × P]` tensor; the result is an `[n]` vector.
    pub fn forward(&self, tape: &mut Tape, window: TensorId) -> Result<TensorId, TensorError> {
        let mut cur = window;
        for (w, b) in &self.convs {
            let conv = tape.conv1d(cur, *w, *b)?;
            cur = tape.relu(conv)?;
        }
        let flat = tape.reshape(cur, vec![self.channels * self.l_out, 1])?;
        let mapped = tape.matmul(self.head_w, flat)?;
        let vec_out = tape.reshape(mapped, vec![self.n])?;
        tape.add(vec_out, self.head_b)
    }
}

// ── highway head ─────────────────────────────────────────────────────

/// Gated combination of a transform path and a linear carry path:
/// `out = transform ⊙ g + carry ⊙ (1 − g)` with `g = sigmoid(W_T·vec(X) + b)`.
/// The carry applies one shared weight vector to each variable's last `hw`
/// observations.
#[derive(Debug, Clone)]
pub struct HighwayHead {
    pub gate_w: Param,      // [n × n·window]
    pub gate_b: Param,      // [n]
    pub carry_w: Param,     // [hw]
    pub carry_b: Param,     // [1]
    pub n: usize,
    pub window: usize,
    pub hw: usize,
}

pub struct BoundHighwayHead {
    gate_w: TensorId,
    gate_b: TensorId,
    carry_w: TensorId,
    carry_b: TensorId,
    n: usize,
    window: usize,
    hw: usize,
}

impl HighwayHead {
    pub fn new(prefix: &str, n: usize, window: usize, hw: usize, seed: u64) -> Result<HighwayHead, LayerError> {
        if hw == 0 {
            return Err(LayerError::ZeroField { field: "hw" });
        }
        if hw > window {
            return Err(LayerError::HighwayWindowTooLong { hw, window });
        }
        Ok(HighwayHead {
            gate_w: Param::uniform(
                &format!("{prefix}.gate.weight"),
                vec![n, n * window],
                n * window,
                seed,
            ),
            gate_b: Param::zeros(&format!("{prefix}.gate.bias"), vec![n]),
            carry_w: Param::uniform(&format!("{prefix}.carry.weight"), vec![hw], hw, seed),
            carry_b: Param::zeros(&format!("{prefix}.carry.bias"), vec![1]),
            n,
            window,
            hw,
        })
    }

    pub fn param_count(n: usize, window: usize, hw: usize) -> usize {
        n * n * window + n + hw + 1
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gate_w, &self.gate_b, &self.carry_w, &self.carry_b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gate_w, &mut self.gate_b, &mut self.carry_w, &mut self.carry_b]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundHighwayHead, TensorError> {
        Ok(BoundHighwayHead {
            gate_w: self.gate_w.bind(tape, trainable)?,
            gate_b: self.gate_b.bind(tape, trainable)?,
            carry_w: self.carry_w.bind(tape, trainable)?,
            carry_b: self.carry_b.bind(tape, trainable)?,
            n: self.n,
            window: self.window,
            hw: self.hw,
        })
    }

    pub fn take_grads(&mut self, tape: &Tape, bound: &BoundHighwayHead) {
        self.gate_w.take_grad(tape, bound.gate_w);
        self.gate_b.take_grad(tape, bound.gate_b);
        self.carry_w.take_grad(tape, bound.carry_w);
        self.carry_b.take_grad(tape, bound.carry_b);
    }
}

impl BoundHighwayHead {
    pub fn forward(
        &self,
        tape: &mut Tape,
        transform_out: TensorId,
        window: TensorId,
    ) -> Result<TensorId, TensorError> {
        // gate from the flattened window
        let flat = tape.reshape(window, vec![self.n * self.window])?;
        let logits = linear_vec(tape, self.gate_w, self.gate_b, flat)?;
        let g = tape.sigmoid(logits)?;

        // carry: shared linear map over each variable's last hw observations
        let tail = tape.slice_cols(window, self.window - self.hw, self.hw)?;
        let w_col = tape.reshape(self.carry_w, vec![self.hw, 1])?;
        let carry_col = tape.matmul(tail, w_col)?;
        let carry_flat = tape.reshape(carry_col, vec![self.n])?;
        let carry = tape.add(carry_flat, self.carry_b)?;

        let gated_transform = tape.mul(transform_out, g)?;
        let ones = tape.leaf(vec![1.0; self.n], vec![self.n], false)?;
        let inv_g = tape.sub(ones, g)?;
        let gated_carry = tape.mul(carry, inv_g)?;
        tape.add(gated_transform, gated_carry)
    }
}

// ── mlp ──────────────────────────────────────────────────────────────

/// Hidden linear + relu + output linear, n → hidden → n.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden_w: Param, // [hidden × n]
    pub hidden_b: Param, // [hidden]
    pub out_w: Param,    // [n × hidden]
    pub out_b: Param,    // [n]
}

pub struct BoundMlp {
    hidden_w: TensorId,
    hidden_b: TensorId,
    out_w: TensorId,
    out_b: TensorId,
}

impl Mlp {
    pub fn new(prefix: &str, n: usize, hidden: usize, seed: u64) -> Result<Mlp, LayerError> {
        if hidden == 0 {
            return Err(LayerError::ZeroField { field: "mlp_hidden" });
        }
        Ok(Mlp {
            hidden_w: Param::uniform(&format!("{prefix}.hidden.weight"), vec![hidden, n], n, seed),
            hidden_b: Param::zeros(&format!("{prefix}.hidden.bias"), vec![hidden]),
            out_w: Param::uniform(&format!("{prefix}.out.weight"), vec![n, hidden], hidden, seed),
            out_b: Param::zeros(&format!("{prefix}.out.bias"), vec![n]),
        })
    }

    pub fn param_count(n: usize, hidden: usize) -> usize {
        hidden * n + hidden + n * hidden + n
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.hidden_w, &self.hidden_b, &self.out_w, &self.out_b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.hidden_w, &mut self.hidden_b, &mut self.out_w, &mut self.out_b]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundMlp, TensorError> {
        Ok(BoundMlp {
            hidden_w: self.hidden_w.bind(tape, trainable)?,
            hidden_b: self.hidden_b.bind(tape, trainable)?,
            out_w: self.out_w.bind(tape, trainable)?,
            out_b: self.out_b.bind(tape, trainable)?,
        })
    }

    pub fn take_grads(&mut self, tape: &Tape, bound: &BoundMlp) {
        self.hidden_w.take_grad(tape, bound.hidden_w);
        self.hidden_b.take_grad(tape, bound.hidden_b);
        self.out_w.take_grad(tape, bound.out_w);
        self.out_b.take_grad(tape, bound.out_b);
    }
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId, TensorError> {
        let h = linear_vec(tape, self.hidden_w, self.hidden_b, x)?;
        let a = tape.relu(h)?;
        linear_vec(tape, self.out_w, self.out_b, a)
    }
}
