//! The parallel forecaster: a long-term trend module (highway CNN over the
//! raw window, predicting the value one step before the target), a
//! short-term fluctuation module (highway CNN over the differenced window
//! plus an MLP on the last observation, predicting the first difference at
//! the target), and a parameter-free fusion that adds the two.
//!
//! Variants: `pfnet` (full), `ltpm_only` (trend network retargeted to the
//! final value, no fusion), `pfnet_xt` (fluctuation module without the MLP
//! branch). Trend and fluctuation parameters are fully disjoint.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::WindowedSample;
use crate::nn::{
    BoundCnnStack, BoundHighwayHead, BoundMlp, CnnStack, HighwayHead, LayerError, Mlp, Param,
};
use crate::tensor::{Tape, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("variant {requested} does not match this model's variant {actual}")]
    VariantMismatch { requested: Variant, actual: Variant },
    #[error("input has {got} variables, model expects {expected}")]
    VariableMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Pfnet,
    LtpmOnly,
    PfnetXt,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Pfnet => "pfnet",
            Variant::LtpmOnly => "ltpm_only",
            Variant::PfnetXt => "pfnet_xt",
        }
    }

    pub const ALL: [Variant; 3] = [Variant::Pfnet, Variant::LtpmOnly, Variant::PfnetXt];
}

impl fmt::Display for Variant {
    fmt_display_via_as_str!();
}

macro_rules! fmt_display_via_as_str {
    () => {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write!(f, "{}", self.as_str())
        }
    };
}
use fmt_display_via_as_str;

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pfnet" => Ok(Variant::Pfnet),
            "ltpm_only" => Ok(Variant::LtpmOnly),
            "pfnet_xt" => Ok(Variant::PfnetXt),
            other => Err(format!("unknown variant '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n: usize,
    pub window: usize,
    pub horizon: usize,
    pub depth: usize,
    pub channels: usize,
    pub hw: usize,
    pub mlp_hidden: usize,
    pub c1: f64,
    pub c2: f64,
}

/// Parameter collection for all three submodules.
#[derive(Debug, Clone)]
pub struct PfnetModel {
    pub variant: Variant,
    pub cfg: ModelConfig,
    pub trend_cnn: CnnStack,
    pub trend_head: HighwayHead,
    pub fluct_cnn: Option<CnnStack>,
    pub fluct_head: Option<HighwayHead>,
    pub level_mlp: Option<Mlp>,
}

impl PfnetModel {
    pub fn new(variant: Variant, cfg: ModelConfig, seed: u64) -> Result<PfnetModel, ModelError> {
        let trend_cnn = CnnStack::new("ltpm.cnn", cfg.n, cfg.window, cfg.depth, cfg.channels, seed)?;
        let trend_head = HighwayHead::new("ltpm.highway", cfg.n, cfg.window, cfg.hw, seed)?;
        let (fluct_cnn, fluct_head) = if variant == Variant::LtpmOnly {
            (None, None)
        } else {
            // the differenced window is one column shorter
            let dw = cfg.window - 1;
            (
                Some(CnnStack::new("sfpm.cnn", cfg.n, dw, cfg.depth, cfg.channels, seed)?),
                Some(HighwayHead::new("sfpm.highway", cfg.n, dw, cfg.hw, seed)?),
            )
        };
        let level_mlp = if variant == Variant::Pfnet {
            Some(Mlp::new("sfpm.mlp", cfg.n, cfg.mlp_hidden, seed)?)
        } else {
            None
        };
        Ok(PfnetModel {
            variant,
            cfg,
            trend_cnn,
            trend_head,
            fluct_cnn,
            fluct_head,
            level_mlp,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.trend_cnn.params();
        out.extend(self.trend_head.params());
        if let Some(c) = &self.fluct_cnn {
            out.extend(c.params());
        }
        if let Some(h) = &self.fluct_head {
            out.extend(h.params());
        }
        if let Some(m) = &self.level_mlp {
            out.extend(m.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.trend_cnn.params_mut();
        out.extend(self.trend_head.params_mut());
        if let Some(c) = &mut self.fluct_cnn {
            out.extend(c.params_mut());
        }
        if let Some(h) = &mut self.fluct_head {
            out.extend(h.params_mut());
        }
        if let Some(m) = &mut self.level_mlp {
            out.extend(m.params_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| p.data.clone()).collect()
    }

    pub fn restore(&mut self, snap: &[Vec<f64>]) {
        for (p, s) in self.params_mut().into_iter().zip(snap) {
            p.data.copy_from_slice(s);
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundPfnet, ModelError> {
        Ok(BoundPfnet {
            variant: self.variant,
            n: self.cfg.n,
            window: self.cfg.window,
            trend_cnn: self.trend_cnn.bind(tape, trainable)?,
            trend_head: self.trend_head.bind(tape, trainable)?,
            fluct_cnn: self.fluct_cnn.as_ref().map(|c| c.bind(tape, trainable)).transpose()?,
            fluct_head: self.fluct_head.as_ref().map(|h| h.bind(tape, trainable)).transpose()?,
            level_mlp: self.level_mlp.as_ref().map(|m| m.bind(tape, trainable)).transpose()?,
        })
    }

    pub fn take_grads(&mut self, tape: &Tape, bound: &BoundPfnet) {
        self.trend_cnn.take_grads(tape, &bound.trend_cnn);
        self.trend_head.take_grads(tape, &bound.trend_head);
        if let (Some(c), Some(b)) = (&mut self.fluct_cnn, &bound.fluct_cnn) {
            c.take_grads(tape, b);
        }
        if let (Some(h), Some(b)) = (&mut self.fluct_head, &bound.fluct_head) {
            h.take_grads(tape, b);
        }
        if let (Some(m), Some(b)) = (&mut self.level_mlp, &bound.level_mlp) {
            m.take_grads(tape, b);
        }
    }
}

/// Tape-bound model for one batch; inputs are tensor ids on the same tape.
pub struct BoundPfnet {
    pub variant: Variant,
    n: usize,
    window: usize,
    trend_cnn: BoundCnnStack,
    trend_head: BoundHighwayHead,
    fluct_cnn: Option<BoundCnnStack>,
    fluct_head: Option<BoundHighwayHead>,
    level_mlp: Option<BoundMlp>,
}

/// Per-sample predictions; trend/fluct are absent for `ltpm_only`.
pub struct ForwardOut {
    pub final_pred: TensorId,
    pub trend_pred: Option<TensorId>,
    pub fluct_pred: Option<TensorId>,
}

impl BoundPfnet {
    /// Highway CNN over the raw window: the trend estimate.
    pub fn trend_forward(&self, tape: &mut Tape, raw_window: TensorId) -> Result<TensorId, ModelError> {
        let transform = self.trend_cnn.forward(tape, raw_window)?;
        Ok(self.trend_head.forward(tape, transform, raw_window)?)
    }

    /// Highway CNN over the differenced window plus (for the full variant)
    /// an MLP on the last observation: the fluctuation estimate.
    pub fn fluct_forward(
        &self,
        tape: &mut Tape,
        diff_window: TensorId,
        last_obs: TensorId,
    ) -> Result<TensorId, ModelError> {
        let (cnn, head) = match (&self.fluct_cnn, &self.fluct_head) {
            (Some(c), Some(h)) => (c, h),
            _ => {
                return Err(ModelError::VariantMismatch {
                    requested: Variant::Pfnet,
                    actual: self.variant,
                })
            }
        };
        let transform = cnn.forward(tape, diff_window)?;
        let highway = head.forward(tape, transform, diff_window)?;
        match &self.level_mlp {
            Some(mlp) => {
                let level = mlp.forward(tape, last_obs)?;
                Ok(tape.add(highway, level)?)
            }
            None => Ok(highway),
        }
    }

    /// Full forward pass for this model's own variant.
    pub fn forward(
        &self,
        tape: &mut Tape,
        raw_window: TensorId,
        diff_window: TensorId,
        last_obs: TensorId,
    ) -> Result<ForwardOut, ModelError> {
        self.forward_variant(tape, self.variant, raw_window, diff_window, last_obs)
    }

    /// Forward pass for an explicitly requested variant; errors if the model
    /// was not constructed for it.
    pub fn forward_variant(
        &self,
        tape: &mut Tape,
        variant: Variant,
        raw_window: TensorId,
        diff_window: TensorId,
        last_obs: TensorId,
    ) -> Result<ForwardOut, ModelError> {
        if variant != self.variant {
            return Err(ModelError::VariantMismatch {
                requested: variant,
                actual: self.variant,
            });
        }
        if tape.shape(raw_window) != [self.n, self.window] {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "forward",
                lhs: vec![self.n, self.window],
                rhs: tape.shape(raw_window).to_vec(),
            }));
        }
        match variant {
            Variant::LtpmOnly => {
                // trend network aimed directly at the final value
                let final_pred = self.trend_forward(tape, raw_window)?;
                Ok(ForwardOut {
                    final_pred,
                    trend_pred: None,
                    fluct_pred: None,
                })
            }
            Variant::Pfnet | Variant::PfnetXt => {
                let trend = self.trend_forward(tape, raw_window)?;
                let fluct = self.fluct_forward(tape, diff_window, last_obs)?;
                let final_pred = fuse(tape, trend, fluct)?;
                Ok(ForwardOut {
                    final_pred,
                    trend_pred: Some(trend),
                    fluct_pred: Some(fluct),
                })
            }
        }
    }

    /// Graph for one sample's loss: the weighted triple loss for variants
    /// with a fluctuation module, plain L1 on the final value for
    /// `ltpm_only`.
    pub fn sample_loss(
        &self,
        tape: &mut Tape,
        sample: &WindowedSample,
        c1: f64,
        c2: f64,
    ) -> Result<TensorId, ModelError> {
        let n = self.n;
        let raw = tape.leaf(sample.input.raw_window.clone(), vec![n, self.window], false)?;
        let diff = tape.leaf(sample.input.diff_window.clone(), vec![n, self.window - 1], false)?;
        let last = tape.leaf(sample.input.last_obs.clone(), vec![n], false)?;
        let out = self.forward(tape, raw, diff, last)?;
        let target_final = tape.leaf(sample.target_final.clone(), vec![n], false)?;
        match (out.trend_pred, out.fluct_pred) {
            (Some(trend), Some(fluct)) => {
                let target_trend = tape.leaf(sample.target_trend.clone(), vec![n], false)?;
                let target_fluct = tape.leaf(sample.target_fluct.clone(), vec![n], false)?;
                Ok(triple_loss(
                    tape,
                    (out.final_pred, trend, fluct),
                    (target_final, target_trend, target_fluct),
                    c1,
                    c2,
                )?)
            }
            _ => Ok(tape.l1_loss(out.final_pred, target_final)?),
        }
    }
}

/// Information fusion: plain elementwise addition, no parameters.
pub fn fuse(tape: &mut Tape, trend: TensorId, fluct: TensorId) -> Result<TensorId, TensorError> {
    if tape.shape(trend) != tape.shape(fluct) {
        return Err(TensorError::ShapeMismatch {
            op: "fuse",
            lhs: tape.shape(trend).to_vec(),
            rhs: tape.shape(fluct).to_vec(),
        });
    }
    tape.add(trend, fluct)
}

/// `l1(final) + c1·l1(trend) + c2·l1(fluct)`, each term a mean absolute
/// error.
pub fn triple_loss(
    tape: &mut Tape,
    preds: (TensorId, TensorId, TensorId),
    targets: (TensorId, TensorId, TensorId),
    c1: f64,
    c2: f64,
) -> Result<TensorId, TensorError> {
    let l_final = tape.l1_loss(preds.0, targets.0)?;
    let l_trend = tape.l1_loss(preds.1, targets.1)?;
    let l_fluct = tape.l1_loss(preds.2, targets.2)?;
    let w_trend = tape.scale(l_trend, c1)?;
    let w_fluct = tape.scale(l_fluct, c2)?;
    let partial = tape.add(l_final, w_trend)?;
    tape.add(partial, w_fluct)
}

/// Mean loss over a batch of samples; the model must already be bound to
/// this tape.
pub fn batch_loss(
    tape: &mut Tape,
    bound: &BoundPfnet,
    samples: &[WindowedSample],
    c1: f64,
    c2: f64,
) -> Result<TensorId, ModelError> {
    debug_assert!(!samples.is_empty());
    let mut total: Option<TensorId> = None;
    for s in samples {
        let l = bound.sample_loss(tape, s, c1, c2)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(tape.scale(total.unwrap(), 1.0 / samples.len() as f64)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InputWindows;

    fn cfg(n: usize, window: usize) -> ModelConfig {
        ModelConfig {
            n,
            window,
            horizon: 3,
            depth: 1,
            channels: 3,
            hw: 4,
            mlp_hidden: 6,
            c1: 1.0,
            c2: 1.0,
        }
    }

    fn sample_inputs(n: usize, p: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let raw: Vec<f64> = (0..n * p).map(|_| next()).collect();
        let mut diff = Vec::with_capacity(n * (p - 1));
        for i in 0..n {
            for j in 0..p - 1 {
                diff.push(raw[i * p + j + 1] - raw[i * p + j]);
            }
        }
        let last: Vec<f64> = (0..n).map(|i| raw[i * p + p - 1]).collect();
        (raw, diff, last)
    }

    fn forward_values(model: &PfnetModel, raw: &[f64], diff: &[f64], last: &[f64]) -> Vec<f64> {
        let c = &model.cfg;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false).unwrap();
        let r = tape.leaf(raw.to_vec(), vec![c.n, c.window], false).unwrap();
        let d = tape.leaf(diff.to_vec(), vec![c.n, c.window - 1], false).unwrap();
        let l = tape.leaf(last.to_vec(), vec![c.n], false).unwrap();
        let out = bound.forward(&mut tape, r, d, l).unwrap();
        tape.data(out.final_pred).to_vec()
    }

    #[test]
    fn trend_output_shape_is_n() {
        let model = PfnetModel::new(Variant::Pfnet, cfg(4, 10), 3).unwrap();
        let (raw, _, _) = sample_inputs(4, 10, 1);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false).unwrap();
        let r = tape.leaf(raw, vec![4, 10], false).unwrap();
        let y = bound.trend_forward(&mut tape, r).unwrap();
        assert_eq!(tape.shape(y), &[4]);
    }

    #[test]
    fn trend_zero_window_gate_closed_gives_zero() {
        let mut model = PfnetModel::new(Variant::LtpmOnly, cfg(3, 8), 5).unwrap();
        for p in model.params_mut() {
            if p.name.ends_with("bias") {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        // force the gate shut so the linear carry path dominates
        model.trend_head.gate_b.data = vec![-60.0; 3];
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false).unwrap();
        let r = tape.leaf(vec![0.0; 24], vec![3, 8], false).unwrap();
        let y = bound.trend_forward(&mut tape, r).unwrap();
        assert!(tape.data(y).iter().all(|v| v.abs() < 1e-12));
    }

    /// Dense no-tape re-evaluation of the trend path.
    fn dense_trend(model: &PfnetModel, raw: &[f64]) -> Vec<f64> {
        let c = &model.cfg;
        dense_highway(
            &model.trend_head,
            &dense_cnn(&model.trend_cnn, raw, c.n, c.window),
            raw,
            c.n,
            c.window,
        )
    }

    fn dense_cnn(stack: &CnnStack, window: &[f64], n: usize, p: usize) -> Vec<f64> {
        let mut cur = window.to_vec();
        let mut c_in = n;
        let mut len = p;
        for (w, b) in &stack.convs {
            let c_out = b.data.len();
            let l_out = len - 2;
            let mut next = vec![0.0; c_out * l_out];
            for co in 0..c_out {
                for t in 0..l_out {
                    let mut acc = b.data[co];
                    for ci in 0..c_in {
                        for j in 0..3 {
                            acc += w.data[co * c_in * 3 + ci * 3 + j] * cur[ci * len + t + j];
                        }
                    }
                    next[co * l_out + t] = acc.max(0.0);
                }
            }
            cur = next;
            c_in = c_out;
            len = l_out;
        }
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = stack.head_b.data[i];
            for (j, v) in cur.iter().enumerate() {
                acc += stack.head_w.data[i * cur.len() + j] * v;
            }
            out[i] = acc;
        }
        out
    }

    fn dense_highway(head: &HighwayHead, transform: &[f64], window: &[f64], n: usize, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut logit = head.gate_b.data[i];
            for (j, v) in window.iter().enumerate() {
                logit += head.gate_w.data[i * n * p + j] * v;
            }
            let g = 1.0 / (1.0 + (-logit).exp());
            let mut carry = head.carry_b.data[0];
            for j in 0..head.hw {
                carry += head.carry_w.data[j] * window[i * p + (p - head.hw) + j];
            }
            out[i] = transform[i] * g + carry * (1.0 - g);
        }
        out
    }

    fn dense_mlp(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let hidden = mlp.hidden_b.data.len();
        let n = x.len();
        let mut h = vec![0.0; hidden];
        for i in 0..hidden {
            let mut acc = mlp.hidden_b.data[i];
            for j in 0..n {
                acc += mlp.hidden_w.data[i * n + j] * x[j];
            }
            h[i] = acc.max(0.0);
        }
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = mlp.out_b.data[i];
            for j in 0..hidden {
                acc += mlp.out_w.data[i * hidden + j] * h[j];
            }
            out[i] = acc;
        }
        out
    }

    #[test]
    fn trend_matches_layer_oracle_composition() {
        let model = PfnetModel::new(Variant::Pfnet, cfg(3, 9), 17).unwrap();
        let (raw, _, _) = sample_inputs(3, 9, 2);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false).unwrap();
        let r = tape.leaf(raw.clone(), vec![3, 9], false).unwrap();
        let y = bound.trend_forward(&mut tape, r).unwrap();
        let oracle = dense_trend(&model, &raw);
        for (a, b) in tape.data(y).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn fluct_mlp_zeroed_equals_highway_branch() {
        let mut model = PfnetModel::new(Variant::Pfnet, cfg(3, 9), 23).unwrap();
        let mlp = model.level_mlp.as_mut().unwrap();
        for p in [&mut mlp.hidden_w, &mut mlp.hidden_b, &mut mlp.out_w, &mut mlp.out_b] {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let xt_like = {
            let mut m = PfnetModel::new(Variant::PfnetXt, cfg(3, 9), 23).unwrap();
            // same seed gives identical shared-branch parameters by name
            m.trend_cnn = model.trend_cnn.clone();
            m
        };
        let (raw, diff, last) = sample_inputs(3, 9, 4);
        let a = forward_values(&model, &raw, &diff, &last);
        let b = forward_values(&xt_like, &raw, &diff, &last);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fluct_matches_branch_oracle_sum() {
        let model = PfnetModel::new(Variant::Pfnet, cfg(2, 7), 31).unwrap();
        let (_, diff, last) = sample_inputs(2, 7, 9);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false).unwrap();
        let d = tape.leaf(diff.clone(), vec![2, 6], false).unwrap();
        let l = tape.leaf(last.clone(), vec![2], false).unwrap();
        let y = bound.fluct_forward(&mut tape, d, l).unwrap();
        let cnn_out = dense_cnn(model.fluct_cnn.as_ref().unwrap(), &diff, 2, 6);
        let highway = dense_highway(model.fluct_head.as_ref().unwrap(), &cnn_out, &diff, 2, 6);
        let level = dense_mlp(model.level_mlp.as_ref().unwrap(), &last);
        for i in 0..2 {
            assert!((tape.data(y)[i] - (highway[i] + level[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_definition_and_exactness() {
        let mut tape = Tape::new();
        let a = tape.leaf(vec![1.0], vec![1], false).unwrap();
        let b = tape.leaf(vec![0.5], vec![1], false).unwrap();
        let y = fuse(&mut tape, a, b).unwrap();
        assert_eq!(tape.data(y), &[1.5]);

        // zero fluctuation: final equals trend
        let z = tape.leaf(vec![0.0], vec![1], false).unwrap();
        let y2 = fuse(&mut tape, a, z).unwrap();
        assert_eq!(tape.data(y2), tape.data(a));

        // fusion introduces no error beyond the addition itself
        let xs = [0.1, -2.7, 3.25, 1e-9];
        let ys = [0.3, 1.9, -0.5, 7.0];
        let av = tape.leaf(xs.to_vec(), vec![4], false).unwrap();
        let bv = tape.leaf(ys.to_vec(), vec![4], false).unwrap();
        let f = fuse(&mut tape, av, bv).unwrap();
        for i in 0..4 {
            assert_eq!(tape.data(f)[i].to_bits(), (xs[i] + ys[i]).to_bits());
        }
    }

    #[test]
    fn triple_loss_cases() {
        let mut tape = Tape::new();
        let t = tape.leaf(vec![1.0, 2.0], vec![2], false).unwrap();
        let zero = triple_loss(&mut tape, (t, t, t), (t, t, t), 1.0, 1.0).unwrap();
        assert_eq!(tape.scalar(zero), 0.0);

        // c1 = c2 = 0 reduces to plain L1 on the final prediction
        let p = tape.leaf(vec![2.0, 4.0], vec![2], false).unwrap();
        let l = triple_loss(&mut tape, (p, p, p), (t, t, t), 0.0, 0.0).unwrap();
        let plain = tape.l1_loss(p, t).unwrap();
        assert_eq!(tape.scalar(l), tape.scalar(plain));

        // per-term errors (1, 2, 3) with c1 = 0.5, c2 = 0.25 → 2.75
        let zero_t = tape.leaf(vec![0.0], vec![1], false).unwrap();
        let e1 = tape.leaf(vec![1.0], vec![1], false).unwrap();
        let e2 = tape.leaf(vec![2.0], vec![1], false).unwrap();
        let e3 = tape.leaf(vec![3.0], vec![1], false).unwrap();
        let l = triple_loss(&mut tape, (zero_t, zero_t, zero_t), (e1, e2, e3), 0.5, 0.25).unwrap();
        assert_eq!(tape.scalar(l), 2.75);
    }

    #[test]
    fn ltpm_only_ignores_diff_and_last() {
        let model = PfnetModel::new(Variant::LtpmOnly, cfg(3, 8), 41).unwrap();
        let (raw, diff, last) = sample_inputs(3, 8, 11);
        let base = forward_values(&model, &raw, &diff, &last);
        let mut diff2 = diff.clone();
        diff2.iter_mut().for_each(|v| *v += 5.0);
        let mut last2 = last.clone();
        last2.iter_mut().for_each(|v| *v -= 3.0);
        let perturbed = forward_values(&model, &raw, &diff2, &last2);
        assert_eq!(base, perturbed);
    }

    #[test]
    fn pfnet_xt_ignores_last_obs() {
        let model = PfnetModel::new(Variant::PfnetXt, cfg(3, 8), 43).unwrap();
        let (raw, diff, last) = sample_inputs(3, 8, 12);
        let base = forward_values(&model, &raw, &diff, &last);
        let mut last2 = last.clone();
        last2.iter_mut().for_each(|v| *v = -v + 2.0);
        let perturbed = forward_values(&model, &raw, &diff, &last2);
        assert_eq!(base, perturbed);
    }

    #[test]
    fn pfnet_equals_fused_submodule_outputs() {
        let model = PfnetModel::new(Variant::Pfnet, cfg(4, 10), 47).unwrap();
        let (raw, diff, last) = sample_inputs(4, 10, 13);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false).unwrap();
        let r = tape.leaf(raw.clone(), vec![4, 10], false).unwrap();
        let d = tape.leaf(diff.clone(), vec![4, 9], false).unwrap();
        let l = tape.leaf(last.clone(), vec![4], false).unwrap();
        let out = bound.forward(&mut tape, r, d, l).unwrap();
        let trend = bound.trend_forward(&mut tape, r).unwrap();
        let fluct = bound.fluct_forward(&mut tape, d, l).unwrap();
        let fused = fuse(&mut tape, trend, fluct).unwrap();
        assert_eq!(tape.data(out.final_pred), tape.data(fused));
    }

    #[test]
    fn variant_mismatch_is_reported() {
        let model = PfnetModel::new(Variant::LtpmOnly, cfg(2, 8), 3).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false).unwrap();
        let (raw, diff, last) = sample_inputs(2, 8, 3);
        let r = tape.leaf(raw, vec![2, 8], false).unwrap();
        let d = tape.leaf(diff, vec![2, 7], false).unwrap();
        let l = tape.leaf(last, vec![2], false).unwrap();
        assert!(matches!(
            bound.forward_variant(&mut tape, Variant::Pfnet, r, d, l),
            Err(ModelError::VariantMismatch { .. })
        ));
    }

    #[test]
    fn parameter_names_are_unique_and_branches_disjoint() {
        let model = PfnetModel::new(Variant::Pfnet, cfg(3, 9), 7).unwrap();
        let names: Vec<&str> = model.params().iter().map(|p| p.name.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len(), "duplicate parameter names");
        assert!(names.iter().any(|n| n.starts_with("ltpm.")));
        assert!(names.iter().any(|n| n.starts_with("sfpm.")));
    }

    #[test]
    fn every_parameter_gets_gradient_on_random_data() {
        let model_cfg = cfg(3, 9);
        for variant in Variant::ALL {
            let mut model = PfnetModel::new(variant, model_cfg, 19).unwrap();
            let (raw, diff, last) = sample_inputs(3, 9, 29);
            let sample = WindowedSample {
                input: InputWindows {
                    raw_window: raw,
                    diff_window: diff,
                    last_obs: last,
                },
                target_trend: vec![0.4, -0.2, 1.0],
                target_fluct: vec![0.1, 0.3, -0.5],
                target_final: vec![0.5, 0.1, 0.5],
                anchor: 0,
            };
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true).unwrap();
            let loss = bound.sample_loss(&mut tape, &sample, 1.0, 1.0).unwrap();
            tape.backward(loss).unwrap();
            model.take_grads(&tape, &bound);
            for p in model.params() {
                let g = p.grad.as_ref().unwrap_or_else(|| panic!("{} missing grad", p.name));
                assert!(
                    g.iter().any(|v| *v != 0.0),
                    "{variant}: parameter {} is dead wiring",
                    p.name
                );
            }
        }
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        // tiny full model, every parameter checked against central differences
        let model_cfg = ModelConfig {
            n: 2,
            window: 8,
            horizon: 3,
            depth: 1,
            channels: 3,
            hw: 4,
            mlp_hidden: 5,
            c1: 0.7,
            c2: 0.4,
        };
        let mut model = PfnetModel::new(Variant::Pfnet, model_cfg, 101).unwrap();
        let (raw, diff, last) = sample_inputs(2, 8, 55);
        let sample = WindowedSample {
            input: InputWindows {
                raw_window: raw,
                diff_window: diff,
                last_obs: last,
            },
            target_trend: vec![0.37, -0.81],
            target_fluct: vec![-0.12, 0.44],
            target_final: vec![0.25, -0.37],
            anchor: 0,
        };
        let loss_of = |m: &PfnetModel| {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape, false).unwrap();
            let l = bound.sample_loss(&mut tape, &sample, 0.7, 0.4).unwrap();
            tape.scalar(l)
        };

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true).unwrap();
        let loss = bound.sample_loss(&mut tape, &sample, 0.7, 0.4).unwrap();
        tape.backward(loss).unwrap();
        model.take_grads(&tape, &bound);

        let step = 1e-5;
        let param_count = model.params().len();
        for pi in 0..param_count {
            let (name, grad, values) = {
                let p = model.params()[pi];
                (p.name.clone(), p.grad.clone().unwrap(), p.data.clone())
            };
            for ei in 0..values.len() {
                let orig = values[ei];
                model.params_mut()[pi].data[ei] = orig + step;
                let up = loss_of(&model);
                model.params_mut()[pi].data[ei] = orig - step;
                let dn = loss_of(&model);
                model.params_mut()[pi].data[ei] = orig;
                let fd = (up - dn) / (2.0 * step);
                let denom = grad[ei].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (grad[ei] - fd).abs() / denom < 1e-4,
                    "{name}[{ei}]: analytic {} vs fd {fd}",
                    grad[ei]
                );
            }
        }
    }
}
