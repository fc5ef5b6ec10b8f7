//! Dense f64 tensors on a dynamic reverse-mode gradient tape.
//!
//! The tape owns every tensor created during a forward pass; operations hand
//! back [`TensorId`] handles. Recording order is creation order, so replaying
//! the backward rules in reverse visits every node after all of its consumers.
//! A tape and its tensors belong to one logical thread for the duration of a
//! forward/backward pass.
//!
//! Deliberate conventions, relied on by tests: `relu'(0) = 0`, `sign(0) = 0`
//! in the L1 backward, and no broadcasting except scalar-with-tensor on the
//! binary elementwise ops.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("conv1d: input length {len} is shorter than kernel size {kernel}")]
    WindowTooShort { len: usize, kernel: usize },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// A dense real tensor. `data` is row-major; `grad`, when present, has the
/// same length as `data`.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: TensorId,
        b: TensorId,
        m: usize,
        k: usize,
        p: usize,
    },
    Conv1d {
        input: TensorId,
        kernels: TensorId,
        bias: TensorId,
        c_in: usize,
        c_out: usize,
        len: usize,
        k: usize,
    },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Neg { x: TensorId },
    Sigmoid { x: TensorId },
    Relu { x: TensorId },
    Scale { x: TensorId, c: f64 },
    Sum { x: TensorId },
    Reshape { x: TensorId },
    SliceCols {
        x: TensorId,
        rows: usize,
        cols: usize,
        start: usize,
        len: usize,
    },
    L1Loss { pred: TensorId, target: TensorId },
}

/// Recording tape. Forward evaluation is eager; [`Tape::backward`] replays
/// the recorded rules in reverse and accumulates gradients into every
/// `requires_grad` tensor reachable from the root.
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

type Result<T> = std::result::Result<T, TensorError>;

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor. `requires_grad` marks it as a gradient target.
    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel == 0 || data.len() != numel {
            return Err(TensorError::Invalid {
                op: "leaf",
                msg: format!("data length {} does not match shape {:?}", data.len(), shape),
            });
        }
        check_finite("leaf", &data)?;
        self.push(data, shape, Op::Leaf, requires_grad)
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Result<TensorId> {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
        });
        self.ops.push(op);
        Ok(id)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Scalar value of a one-element tensor.
    pub fn scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn zero_grad(&mut self, id: TensorId) {
        self.nodes[id.0].grad = None;
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// `a[m×k] · b[k×p] -> [m×p]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (asp, bsp) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if asp.len() != 2 || bsp.len() != 2 || asp[1] != bsp[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: asp.clone(),
                rhs: bsp.clone(),
            });
        }
        let (m, k, p) = (asp[0], asp[1], bsp[1]);
        let out = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, p);
        check_finite("matmul", &out)?;
        self.push(out, vec![m, p], Op::MatMul { a, b, m, k, p }, false)
    }

    /// Valid cross-correlation along the time axis, stride 1, no padding.
    /// `input[c_in×L] * kernels[c_out×c_in×k] + bias[c_out] -> [c_out×(L−k+1)]`.
    pub fn conv1d(&mut self, input: TensorId, kernels: TensorId, bias: TensorId) -> Result<TensorId> {
        let isp = self.nodes[input.0].shape.clone();
        let ksp = self.nodes[kernels.0].shape.clone();
        let bsp = self.nodes[bias.0].shape.clone();
        if isp.len() != 2 || ksp.len() != 3 || ksp[1] != isp[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: isp,
                rhs: ksp,
            });
        }
        let (c_in, len) = (isp[0], isp[1]);
        let (c_out, k) = (ksp[0], ksp[2]);
        if bsp != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: vec![c_out],
                rhs: bsp,
            });
        }
        if len < k {
            return Err(TensorError::WindowTooShort { len, kernel: k });
        }
        let l_out = len - k + 1;
        let x = &self.nodes[input.0].data;
        let w = &self.nodes[kernels.0].data;
        let b = &self.nodes[bias.0].data;
        let mut out = vec![0.0; c_out * l_out];
        for co in 0..c_out {
            let row = &mut out[co * l_out..(co + 1) * l_out];
            row.fill(b[co]);
            for ci in 0..c_in {
                let xrow = &x[ci * len..(ci + 1) * len];
                for j in 0..k {
                    let wv = w[co * c_in * k + ci * k + j];
                    for t in 0..l_out {
                        row[t] += wv * xrow[t + j];
                    }
                }
            }
        }
        check_finite("conv1d", &out)?;
        self.push(
            out,
            vec![c_out, l_out],
            Op::Conv1d {
                input,
                kernels,
                bias,
                c_in,
                c_out,
                len,
                k,
            },
            false,
        )
    }

    fn binary_shapes(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<Vec<usize>> {
        let (asp, bsp) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let (an, bn): (usize, usize) = (asp.iter().product(), bsp.iter().product());
        if asp == bsp {
            Ok(asp.clone())
        } else if an == 1 {
            Ok(bsp.clone())
        } else if bn == 1 {
            Ok(asp.clone())
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: asp.clone(),
                rhs: bsp.clone(),
            })
        }
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let shape = self.binary_shapes(op_name, a, b)?;
        let (ad, bd) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let numel: usize = shape.iter().product();
        let out: Vec<f64> = (0..numel)
            .map(|i| {
                let x = if ad.len() == 1 { ad[0] } else { ad[i] };
                let y = if bd.len() == 1 { bd[0] } else { bd[i] };
                f(x, y)
            })
            .collect();
        check_finite(op_name, &out)?;
        self.push(out, shape, op, false)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn neg(&mut self, x: TensorId) -> Result<TensorId> {
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|v| -v).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(out, shape, Op::Neg { x }, false)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        check_finite("sigmoid", &out)?;
        let shape = self.nodes[x.0].shape.clone();
        self.push(out, shape, Op::Sigmoid { x }, false)
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(out, shape, Op::Relu { x }, false)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v * c).collect();
        check_finite("scale", &out)?;
        let shape = self.nodes[x.0].shape.clone();
        self.push(out, shape, Op::Scale { x, c }, false)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        check_finite("sum", &[s])?;
        self.push(vec![s], vec![1], Op::Sum { x }, false)
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: shape,
            });
        }
        let data = self.nodes[x.0].data.clone();
        self.push(data, shape, Op::Reshape { x }, false)
    }

    /// Keep columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let sp = self.nodes[x.0].shape.clone();
        if sp.len() != 2 || start + len > sp[1] || len == 0 {
            return Err(TensorError::Invalid {
                op: "slice_cols",
                msg: format!("columns {}..{} out of shape {:?}", start, start + len, sp),
            });
        }
        let (rows, cols) = (sp[0], sp[1]);
        let src = &self.nodes[x.0].data;
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        self.push(
            out,
            vec![rows, len],
            Op::SliceCols {
                x,
                rows,
                cols,
                start,
                len,
            },
            false,
        )
    }

    /// Mean absolute error over all elements, as a `[1]` tensor.
    pub fn l1_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        if self.nodes[pred.0].shape != self.nodes[target.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: "l1_loss",
                lhs: self.nodes[pred.0].shape.clone(),
                rhs: self.nodes[target.0].shape.clone(),
            });
        }
        let (pd, td) = (&self.nodes[pred.0].data, &self.nodes[target.0].data);
        let count = pd.len() as f64;
        let s: f64 = pd.iter().zip(td).map(|(p, t)| (p - t).abs()).sum();
        let loss = s / count;
        check_finite("l1_loss", &[loss])?;
        self.push(vec![loss], vec![1], Op::L1Loss { pred, target }, false)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Gradients of `requires_grad`
    /// tensors accumulate across repeated calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if self.nodes[root.0].data.len() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: self.nodes[root.0].shape.clone(),
            });
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(gout) = adj[i].take() else { continue };
            match self.ops[i].clone() {
                Op::Leaf => {}
                Op::MatMul { a, b, m, k, p } => {
                    // dA = dY·Bᵀ, dB = Aᵀ·dY
                    let bd = &self.nodes[b.0].data;
                    let ad = &self.nodes[a.0].data;
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        for c in 0..k {
                            let mut s = 0.0;
                            for j in 0..p {
                                s += gout[r * p + j] * bd[c * p + j];
                            }
                            da[r * k + c] = s;
                        }
                    }
                    let mut db = vec![0.0; k * p];
                    for r in 0..k {
                        for c in 0..p {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += ad[j * k + r] * gout[j * p + c];
                            }
                            db[r * p + c] = s;
                        }
                    }
                    accumulate(&mut adj[a.0], &da);
                    accumulate(&mut adj[b.0], &db);
                }
                Op::Conv1d {
                    input,
                    kernels,
                    bias,
                    c_in,
                    c_out,
                    len,
                    k,
                } => {
                    let l_out = len - k + 1;
                    let x = &self.nodes[input.0].data;
                    let w = &self.nodes[kernels.0].data;
                    let mut dx = vec![0.0; c_in * len];
                    let mut dw = vec![0.0; c_out * c_in * k];
                    let mut db = vec![0.0; c_out];
                    for co in 0..c_out {
                        let grow = &gout[co * l_out..(co + 1) * l_out];
                        db[co] += grow.iter().sum::<f64>();
                        for ci in 0..c_in {
                            let xrow = &x[ci * len..(ci + 1) * len];
                            let dxrow = &mut dx[ci * len..(ci + 1) * len];
                            for j in 0..k {
                                let wv = w[co * c_in * k + ci * k + j];
                                let mut s = 0.0;
                                for t in 0..l_out {
                                    s += grow[t] * xrow[t + j];
                                    dxrow[t + j] += grow[t] * wv;
                                }
                                dw[co * c_in * k + ci * k + j] += s;
                            }
                        }
                    }
                    accumulate(&mut adj[input.0], &dx);
                    accumulate(&mut adj[kernels.0], &dw);
                    accumulate(&mut adj[bias.0], &db);
                }
                Op::Add { a, b } => {
                    self.binary_backprop(&mut adj, a, &gout, |g, _, _| g);
                    self.binary_backprop(&mut adj, b, &gout, |g, _, _| g);
                }
                Op::Sub { a, b } => {
                    self.binary_backprop(&mut adj, a, &gout, |g, _, _| g);
                    self.binary_backprop(&mut adj, b, &gout, |g, _, _| -g);
                }
                Op::Mul { a, b } => {
                    let bd = self.nodes[b.0].data.clone();
                    let ad = self.nodes[a.0].data.clone();
                    self.binary_backprop(&mut adj, a, &gout, |g, i, _| {
                        g * if bd.len() == 1 { bd[0] } else { bd[i] }
                    });
                    self.binary_backprop(&mut adj, b, &gout, |g, i, _| {
                        g * if ad.len() == 1 { ad[0] } else { ad[i] }
                    });
                }
                Op::Neg { x } => {
                    let dx: Vec<f64> = gout.iter().map(|g| -g).collect();
                    accumulate(&mut adj[x.0], &dx);
                }
                Op::Sigmoid { x } => {
                    let out = &self.nodes[i].data;
                    let dx: Vec<f64> = gout.iter().zip(out).map(|(g, &s)| g * s * (1.0 - s)).collect();
                    accumulate(&mut adj[x.0], &dx);
                }
                Op::Relu { x } => {
                    // subgradient at 0 is 0
                    let xd = &self.nodes[x.0].data;
                    let dx: Vec<f64> = gout
                        .iter()
                        .zip(xd)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut adj[x.0], &dx);
                }
                Op::Scale { x, c } => {
                    let dx: Vec<f64> = gout.iter().map(|g| g * c).collect();
                    accumulate(&mut adj[x.0], &dx);
                }
                Op::Sum { x } => {
                    let dx = vec![gout[0]; self.nodes[x.0].data.len()];
                    accumulate(&mut adj[x.0], &dx);
                }
                Op::Reshape { x } => {
                    accumulate(&mut adj[x.0], &gout);
                }
                Op::SliceCols {
                    x,
                    rows,
                    cols,
                    start,
                    len,
                } => {
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        dx[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&gout[r * len..(r + 1) * len]);
                    }
                    accumulate(&mut adj[x.0], &dx);
                }
                Op::L1Loss { pred, target } => {
                    // sign(0) defined as 0
                    let (pd, td) = (&self.nodes[pred.0].data, &self.nodes[target.0].data);
                    let count = pd.len() as f64;
                    let g = gout[0];
                    let dp: Vec<f64> = pd
                        .iter()
                        .zip(td)
                        .map(|(p, t)| g * sign(p - t) / count)
                        .collect();
                    let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                    accumulate(&mut adj[pred.0], &dp);
                    accumulate(&mut adj[target.0], &dt);
                }
            }
        }

        for (i, a) in adj.into_iter().enumerate() {
            if let Some(a) = a {
                if self.nodes[i].requires_grad {
                    match &mut self.nodes[i].grad {
                        Some(g) => {
                            for (gi, ai) in g.iter_mut().zip(&a) {
                                *gi += ai;
                            }
                        }
                        None => self.nodes[i].grad = Some(a),
                    }
                }
            }
        }
        Ok(())
    }

    /// Route an output gradient back through a possibly-scalar operand:
    /// a scalar operand collects the sum over all output positions.
    fn binary_backprop(
        &self,
        adj: &mut [Option<Vec<f64>>],
        operand: TensorId,
        gout: &[f64],
        per_elem: impl Fn(f64, usize, usize) -> f64,
    ) {
        let on = self.nodes[operand.0].data.len();
        if on == gout.len() {
            let d: Vec<f64> = gout
                .iter()
                .enumerate()
                .map(|(i, &g)| per_elem(g, i, on))
                .collect();
            accumulate(&mut adj[operand.0], &d);
        } else {
            debug_assert_eq!(on, 1);
            let s: f64 = gout
                .iter()
                .enumerate()
                .map(|(i, &g)| per_elem(g, i, on))
                .sum();
            accumulate(&mut adj[operand.0], &[s]);
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(buf) => {
            for (b, d) in buf.iter_mut().zip(delta) {
                *b += d;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}

/// Plain triple-loop matrix product, shared by forward and tests.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        let orow = &mut out[r * p..(r + 1) * p];
        for (c, &av) in arow.iter().enumerate() {
            let brow = &b[c * p..(c + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}
