use serde::{Deserialize, Serialize};

use super::{
    half_norm_grad, penalty_weights, poly_distance_grad, regularizers, LayerParams, NetworkConfig, NetworkParams,
    PenaltyScale, WeightKind, SIGNOMIAL_EPS,
};
use crate::error::{Error, Result};
use crate::expr::sign;
use crate::maps::Dataset;
use crate::train::Alphas;

/// Input/target pairs packed contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Batch {
    pub fn from_indices(ds: &Dataset, indices: &[usize]) -> Self {
        let n = ds.dim();
        let mut x = Vec::with_capacity(indices.len() * n);
        let mut y = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            x.extend_from_slice(&ds.inputs[i]);
            y.extend_from_slice(&ds.targets[i]);
        }
        Self { n, x, y }
    }

    pub fn all(ds: &Dataset) -> Self {
        let idx: Vec<usize> = (0..ds.len()).collect();
        Self::from_indices(ds, &idx)
    }

    pub fn len(&self) -> usize {
        self.x.len().checked_div(self.n).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, m: usize) -> &[f64] {
        &self.x[m * self.n..(m + 1) * self.n]
    }

    pub fn target(&self, m: usize) -> &[f64] {
        &self.y[m * self.n..(m + 1) * self.n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mae: f64,
    pub l_half: f64,
    pub l_poly: f64,
    pub l_ops: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(mae: f64, (l_half, l_poly, l_ops): (f64, f64, f64), alphas: Alphas) -> Self {
        Self {
            mae,
            l_half,
            l_poly,
            l_ops,
            total: mae + alphas.half * l_half + alphas.poly * l_poly + alphas.ops * l_ops,
        }
    }
}

/// Intermediate values of one layer for one sample.
#[derive(Debug, Clone, Default)]
pub struct LayerTrace {
    pub input: Vec<f64>,
    /// `ln max(|u_i|, ε)`
    pub log_abs: Vec<f64>,
    /// `|u_i| > ε`; clamped inputs get no gradient through signomials.
    pub live: Vec<bool>,
    pub signomial: Vec<f64>,
    /// Operator pre-activations, operator-major.
    pub op_pre: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct StackTrace {
    pub layers: Vec<LayerTrace>,
    /// Output of the last layer.
    pub top: Vec<f64>,
}

/// Intermediates for every stack; also serves as reusable scratch space.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    pub stacks: Vec<StackTrace>,
    pub output: Vec<f64>,
}

pub type Workspace = ForwardTrace;

impl ForwardTrace {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let w = cfg.widths;
        let p = cfg.operators.len();
        let stacks = (0..cfg.stacks)
            .map(|_| StackTrace {
                layers: (0..cfg.layers)
                    .map(|l| {
                        let d = cfg.layer_input_dim(l);
                        LayerTrace {
                            input: vec![0.0; d],
                            log_abs: vec![0.0; d],
                            live: vec![false; d],
                            signomial: vec![0.0; w.signomial],
                            op_pre: vec![0.0; w.per_operator * p],
                        }
                    })
                    .collect(),
                top: vec![0.0; cfg.layer_output_dim()],
            })
            .collect();
        Self {
            stacks,
            output: vec![0.0; cfg.n],
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn layer_forward(
    cfg: &NetworkConfig,
    lp: &LayerParams,
    tr: &mut LayerTrace,
    out: &mut [f64],
) -> bool {
    let w = cfg.widths;
    let u = &tr.input;
    for j in 0..w.linear {
        out[j] = dot(lp.linear.row(j), u);
    }
    for (i, &v) in u.iter().enumerate() {
        let a = v.abs();
        let live = a > SIGNOMIAL_EPS;
        tr.live[i] = live;
        tr.log_abs[i] = if live { a.ln() } else { SIGNOMIAL_EPS.ln() };
    }
    for j in 0..w.signomial {
        let s = dot(lp.signomial.row(j), &tr.log_abs).exp();
        tr.signomial[j] = s;
        out[w.linear + j] = s;
    }
    for (p, op) in cfg.operators.iter().enumerate() {
        let base = cfg.operator_offset(p);
        for j in 0..w.per_operator {
            let z = dot(lp.operators[p].row(j), u);
            tr.op_pre[p * w.per_operator + j] = z;
            out[base + j] = op.apply(z);
        }
    }
    let last = out.len() - 1;
    out[last] = cfg.bias_value;
    out.iter().all(|v| v.is_finite())
}

fn forward_into(
    cfg: &NetworkConfig,
    params: &NetworkParams,
    x: &[f64],
    ws: &mut ForwardTrace,
) -> Result<()> {
    if x.len() != cfg.n {
        return Err(Error::DimensionMismatch {
            expected: cfg.n,
            actual: x.len(),
        });
    }
    ws.output.iter_mut().for_each(|v| *v = 0.0);
    for (k, (sp, st)) in params.stacks.iter().zip(ws.stacks.iter_mut()).enumerate() {
        let StackTrace { layers, top } = st;
        layers[0].input[..cfg.n].copy_from_slice(x);
        layers[0].input[cfg.n] = cfg.bias_value;
        let nl = layers.len();
        for l in 0..nl {
            let (head, tail) = layers.split_at_mut(l + 1);
            let tr = &mut head[l];
            let out: &mut [f64] = if l + 1 < nl { &mut tail[0].input } else { top };
            if !layer_forward(cfg, &sp.layers[l], tr, out) {
                return Err(Error::NumericOverflow { stack: k, layer: l });
            }
        }
        for (j, o) in ws.output.iter_mut().enumerate() {
            *o += dot(sp.readout.row(j), top);
        }
        if !ws.output.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow { stack: k, layer: nl });
        }
    }
    Ok(())
}

/// Network output for one state.
pub fn forward(cfg: &NetworkConfig, params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    let mut ws = ForwardTrace::new(cfg);
    forward_into(cfg, params, x, &mut ws)?;
    Ok(ws.output)
}

/// Network output together with every intermediate activation.
pub fn forward_trace(
    cfg: &NetworkConfig,
    params: &NetworkParams,
    x: &[f64],
) -> Result<ForwardTrace> {
    let mut ws = ForwardTrace::new(cfg);
    forward_into(cfg, params, x, &mut ws)?;
    Ok(ws)
}

/// Mean over the batch of the L1 norm of the residual.
pub fn mae(cfg: &NetworkConfig, params: &NetworkParams, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut ws = ForwardTrace::new(cfg);
    let mut acc = 0.0;
    for m in 0..batch.len() {
        forward_into(cfg, params, batch.input(m), &mut ws)?;
        acc += ws
            .output
            .iter()
            .zip(batch.target(m))
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>();
    }
    Ok(acc / batch.len() as f64)
}

fn layer_backward(
    cfg: &NetworkConfig,
    lp: &LayerParams,
    tr: &LayerTrace,
    dout: &[f64],
    grad: &mut LayerParams,
    din: &mut [f64],
) {
    let w = cfg.widths;
    let u = &tr.input;
    din.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..w.linear {
        let g = dout[j];
        if g == 0.0 {
            continue;
        }
        for (gw, ui) in grad.linear.row_mut(j).iter_mut().zip(u) {
            *gw += g * ui;
        }
        for (d, wi) in din.iter_mut().zip(lp.linear.row(j)) {
            *d += g * wi;
        }
    }
    for j in 0..w.signomial {
        // d s / d E_ji = s ln|u_i| ; d s / d u_i = s E_ji / u_i
        let g = dout[w.linear + j] * tr.signomial[j];
        if g == 0.0 {
            continue;
        }
        for (ge, la) in grad.signomial.row_mut(j).iter_mut().zip(&tr.log_abs) {
            *ge += g * la;
        }
        let e = lp.signomial.row(j);
        for i in 0..u.len() {
            if tr.live[i] {
                din[i] += g * e[i] / u[i];
            }
        }
    }
    for (p, op) in cfg.operators.iter().enumerate() {
        let base = cfg.operator_offset(p);
        for j in 0..w.per_operator {
            let g = dout[base + j] * op.derivative(tr.op_pre[p * w.per_operator + j]);
            if g == 0.0 {
                continue;
            }
            for (gw, ui) in grad.operators[p].row_mut(j).iter_mut().zip(u) {
                *gw += g * ui;
            }
            for (d, wi) in din.iter_mut().zip(lp.operators[p].row(j)) {
                *d += g * wi;
            }
        }
    }
}

/// Regularized loss on `batch` and its gradient with respect to every weight.
///
/// The data term is reverse-mode accumulated sample by sample through the stored forward
/// trace; penalty gradients are added per weight afterwards.
pub fn loss_and_gradient(
    cfg: &NetworkConfig,
    params: &NetworkParams,
    batch: &Batch,
    alphas: Alphas,
    scale: PenaltyScale,
) -> Result<(LossBreakdown, NetworkParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let m_count = batch.len() as f64;
    let mut grad = NetworkParams::zeros(cfg);
    let mut ws = ForwardTrace::new(cfg);
    let d_out = cfg.layer_output_dim();
    let mut dtop = vec![0.0; d_out];
    let mut dbufs: Vec<Vec<f64>> = (0..cfg.layers)
        .map(|l| vec![0.0; cfg.layer_input_dim(l)])
        .collect();
    let mut dres = vec![0.0; cfg.n];
    let mut abs_sum = 0.0;

    for m in 0..batch.len() {
        forward_into(cfg, params, batch.input(m), &mut ws)?;
        for (j, (p, t)) in ws.output.iter().zip(batch.target(m)).enumerate() {
            let r = p - t;
            abs_sum += r.abs();
            dres[j] = sign(r) / m_count;
        }
        for (k, sp) in params.stacks.iter().enumerate() {
            let st = &ws.stacks[k];
            let gs = &mut grad.stacks[k];
            dtop.iter_mut().for_each(|v| *v = 0.0);
            for (j, &dr) in dres.iter().enumerate() {
                if dr == 0.0 {
                    continue;
                }
                for ((gw, t), (d, w)) in gs
                    .readout
                    .row_mut(j)
                    .iter_mut()
                    .zip(&st.top)
                    .zip(dtop.iter_mut().zip(sp.readout.row(j)))
                {
                    *gw += dr * t;
                    *d += dr * w;
                }
            }
            // dbufs[l] holds the gradient with respect to the input of layer l
            for l in (0..cfg.layers).rev() {
                let (lo, hi) = dbufs.split_at_mut(l + 1);
                let upstream: &[f64] = if l + 1 == cfg.layers { &dtop } else { &hi[0] };
                layer_backward(cfg, &sp.layers[l], &st.layers[l], upstream, &mut gs.layers[l], &mut lo[l]);
            }
        }
    }

    let mae = abs_sum / m_count;
    let reg = regularizers(params, scale);

    let mut flat_g = grad.to_flat();
    let flat_p = params.to_flat();
    let pw = penalty_weights(params, scale);
    for (((g, w), kind), s) in flat_g.iter_mut().zip(&flat_p).zip(params.flat_kinds()).zip(pw) {
        *g += s * match kind {
            WeightKind::Linear | WeightKind::Readout => alphas.half * half_norm_grad(*w),
            WeightKind::Signomial => alphas.poly * poly_distance_grad(*w),
            WeightKind::Operator => alphas.ops * half_norm_grad(*w),
        };
    }
    grad.set_flat(&flat_g);

    Ok((LossBreakdown::new(mae, reg, alphas), grad))
}
