//! The trainable symbolic network.
//!
//! `K` stacks of `L` operational layers run in parallel on the same input and their readouts
//! are summed. The input to every stack is the state with a constant bias channel appended,
//! `u⁰ = (x, b)`. Each layer maps its input `u` to the concatenation
//!
//! ```text
//! [ W_lin·u ; s ; φ₁(W₁·u) ; … ; φ_P(W_P·u) ; b ]
//! ```
//!
//! where `s_j = Π_i max(|u_i|, ε)^{E_ji}` are signomial units and `φ_p` are the configured
//! unary operators. The bias channel is carried through every layer. A stack's output is
//! `W_out·u^L`.

mod checkpoint;
mod extract;
mod forward;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::UnaryOp;
use crate::rng::Gaussian;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use extract::extract;
pub use forward::{
    forward, forward_trace, loss_and_gradient, mae, Batch, ForwardTrace, LayerTrace,
    LossBreakdown, Workspace,
};

/// Signomial inputs are clamped below at this magnitude.
pub const SIGNOMIAL_EPS: f64 = 1e-12;
/// Standard deviation of the multiplicative-weight initialization.
pub const INIT_STD: f64 = 5e-4;
/// Signomial exponents start near the identity.
pub const EXPONENT_INIT_MEAN: f64 = 1.0;
pub const EXPONENT_INIT_STD: f64 = 0.25;
/// Smoothing inside the derivative of `|w|^{1/2}`.
pub const HALF_NORM_SMOOTHING: f64 = 1e-8;
/// Integer targets of the exponent penalty.
pub const POLY_TARGETS: [f64; 4] = [0.0, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub linear: usize,
    pub signomial: usize,
    pub per_operator: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Self {
            linear: 1,
            signomial: 1,
            per_operator: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// State dimension.
    pub n: usize,
    pub stacks: usize,
    pub layers: usize,
    pub operators: Vec<UnaryOp>,
    pub widths: Widths,
    pub bias_value: f64,
}

impl NetworkConfig {
    pub fn new(n: usize, stacks: usize, layers: usize, operators: Vec<UnaryOp>) -> Self {
        Self {
            n,
            stacks,
            layers,
            operators,
            widths: Widths::default(),
            bias_value: 2.0,
        }
    }

    /// One stack, one layer, `[sin, abs]`.
    pub fn logistic() -> Self {
        Self::new(1, 1, 1, vec![UnaryOp::Sin, UnaryOp::Abs])
    }

    /// Two stacks of two layers with `[exp]`; two layers are needed to feed a signomial into
    /// the exponential.
    pub fn gaussian() -> Self {
        Self::new(1, 2, 2, vec![UnaryOp::Exp])
    }

    /// Two stacks of two layers, `[sign, sin]`, two state dimensions.
    pub fn tinkerbell() -> Self {
        Self::new(2, 2, 2, vec![UnaryOp::Sign, UnaryOp::Sin])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("network config: {m}")));
        if self.n == 0 {
            return bad("state dimension must be at least 1");
        }
        if self.stacks == 0 || self.layers == 0 {
            return bad("need at least one stack and one layer");
        }
        let w = self.widths;
        if w.linear == 0 || w.signomial == 0 || (w.per_operator == 0 && !self.operators.is_empty())
        {
            return bad("sublayer widths must be at least 1");
        }
        if self.bias_value == 0.0 || !self.bias_value.is_finite() {
            return bad("bias value must be finite and non-zero");
        }
        Ok(())
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.n + 1
        } else {
            self.layer_output_dim()
        }
    }

    pub fn layer_output_dim(&self) -> usize {
        let w = self.widths;
        w.linear + w.signomial + w.per_operator * self.operators.len() + 1
    }

    /// Offset of operator block `p` within a layer output.
    pub fn operator_offset(&self, p: usize) -> usize {
        self.widths.linear + self.widths.signomial + p * self.widths.per_operator
    }

    pub fn param_count(&self) -> usize {
        let w = self.widths;
        let per_layer = |d: usize| {
            (w.linear + w.signomial + w.per_operator * self.operators.len()) * d
        };
        let stack: usize = (0..self.layers)
            .map(|l| per_layer(self.layer_input_dim(l)))
            .sum::<usize>()
            + self.n * self.layer_output_dim();
        stack * self.stacks
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub linear: Matrix,
    /// Signomial exponents.
    pub signomial: Matrix,
    /// One input-weight matrix per configured operator.
    pub operators: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackParams {
    pub layers: Vec<LayerParams>,
    pub readout: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub stacks: Vec<StackParams>,
}

/// Which regularizer a weight group belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Linear,
    Signomial,
    Operator,
    Readout,
}

impl NetworkParams {
    /// Shapes for `cfg` filled by `fill(kind)`.
    pub fn build(cfg: &NetworkConfig, mut fill: impl FnMut(WeightKind) -> f64) -> Self {
        let w = cfg.widths;
        let stacks = (0..cfg.stacks)
            .map(|_| {
                let layers = (0..cfg.layers)
                    .map(|l| {
                        let d = cfg.layer_input_dim(l);
                        LayerParams {
                            linear: Matrix::from_fn(w.linear, d, |_, _| fill(WeightKind::Linear)),
                            signomial: Matrix::from_fn(w.signomial, d, |_, _| {
                                fill(WeightKind::Signomial)
                            }),
                            operators: cfg
                                .operators
                                .iter()
                                .map(|_| {
                                    Matrix::from_fn(w.per_operator, d, |_, _| {
                                        fill(WeightKind::Operator)
                                    })
                                })
                                .collect(),
                        }
                    })
                    .collect();
                StackParams {
                    layers,
                    readout: Matrix::from_fn(cfg.n, cfg.layer_output_dim(), |_, _| {
                        fill(WeightKind::Readout)
                    }),
                }
            })
            .collect();
        Self { stacks }
    }

    pub fn zeros(cfg: &NetworkConfig) -> Self {
        Self::build(cfg, |_| 0.0)
    }

    /// Every matrix in a fixed order (per stack: layers in order, each linear, signomial,
    /// operators; then the readout), tagged with its kind and `(stack, layer)`. The readout is
    /// attributed to the last layer of its stack.
    pub fn groups(&self) -> Vec<(WeightKind, usize, usize, &Matrix)> {
        let mut out = Vec::new();
        for (k, s) in self.stacks.iter().enumerate() {
            for (l, layer) in s.layers.iter().enumerate() {
                out.push((WeightKind::Linear, k, l, &layer.linear));
                out.push((WeightKind::Signomial, k, l, &layer.signomial));
                for m in &layer.operators {
                    out.push((WeightKind::Operator, k, l, m));
                }
            }
            out.push((WeightKind::Readout, k, s.layers.len() - 1, &s.readout));
        }
        out
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for s in &mut self.stacks {
            for layer in &mut s.layers {
                out.push(&mut layer.linear);
                out.push(&mut layer.signomial);
                out.extend(layer.operators.iter_mut());
            }
            out.push(&mut s.readout);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|(_, _, _, m)| m.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.groups()
            .iter()
            .flat_map(|(_, _, _, m)| m.data.iter().copied())
            .collect()
    }

    /// Kind of every entry of [`NetworkParams::to_flat`].
    pub fn flat_kinds(&self) -> Vec<WeightKind> {
        self.groups()
            .iter()
            .flat_map(|(kind, _, _, m)| std::iter::repeat_n(*kind, m.data.len()))
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for m in self.matrices_mut() {
            let n = m.data.len();
            m.data.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups()
            .iter()
            .all(|(_, _, _, m)| m.data.iter().all(|v| v.is_finite()))
    }

    pub fn matches(&self, cfg: &NetworkConfig) -> bool {
        let reference = NetworkParams::zeros(cfg);
        let a = self.groups();
        let b = reference.groups();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.3.rows == y.3.rows && x.3.cols == y.3.cols)
    }
}

/// Multiplicative weights ~ N(0, 5e-4); signomial exponents ~ N(1, 0.25).
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> NetworkParams {
    let mut g = Gaussian::new(seed);
    NetworkParams::build(cfg, |kind| match kind {
        WeightKind::Signomial => g.sample(EXPONENT_INIT_MEAN, EXPONENT_INIT_STD),
        _ => g.sample(0.0, INIT_STD),
    })
}

/// `(|w| + eps)^{1/2} - eps^{1/2}`: within `1e-4` of `|w|^{1/2}`, zero at the origin, and
/// exactly the antiderivative of [`half_norm_grad`] away from it.
pub fn half_norm(w: f64) -> f64 {
    (w.abs() + HALF_NORM_SMOOTHING).sqrt() - HALF_NORM_SMOOTHING.sqrt()
}

/// Derivative of [`half_norm`], taken as zero at the origin.
pub fn half_norm_grad(w: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w.signum() / (2.0 * (w.abs() + HALF_NORM_SMOOTHING).sqrt())
    }
}

/// Distance from an exponent to the nearest of `{0, 1, 2, 3}`.
pub fn poly_distance(e: f64) -> f64 {
    POLY_TARGETS
        .iter()
        .map(|z| (e - z).abs())
        .fold(f64::INFINITY, f64::min)
}

pub fn poly_distance_grad(e: f64) -> f64 {
    let nearest = POLY_TARGETS
        .iter()
        .copied()
        .min_by(|a, b| (e - a).abs().total_cmp(&(e - b).abs()))
        .unwrap_or(0.0);
    crate::expr::sign(e - nearest)
}

/// How each penalty aggregates over the weights it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyScale {
    /// Plain sum over the weights.
    Sum,
    /// Sum divided by the number of weights the penalty covers in the whole network, so the
    /// pull on each weight does not grow with network size.
    #[default]
    Mean,
}

impl std::str::FromStr for PenaltyScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            _ => Err(Error::InvalidArgument(format!("unknown penalty scale '{s}'"))),
        }
    }
}

fn penalty_family(kind: WeightKind) -> usize {
    match kind {
        WeightKind::Linear | WeightKind::Readout => 0,
        WeightKind::Signomial => 1,
        WeightKind::Operator => 2,
    }
}

/// Multiplier of every entry of [`NetworkParams::to_flat`] inside its penalty.
pub fn penalty_weights(params: &NetworkParams, scale: PenaltyScale) -> Vec<f64> {
    let kinds = params.flat_kinds();
    let mut counts = [0usize; 3];
    for k in &kinds {
        counts[penalty_family(*k)] += 1;
    }
    kinds
        .iter()
        .map(|k| match scale {
            PenaltyScale::Sum => 1.0,
            PenaltyScale::Mean => 1.0 / counts[penalty_family(*k)] as f64,
        })
        .collect()
}

/// Penalties over the whole network, aggregated per `scale`: `(L_1/2, L_poly, L_ops)`.
pub fn regularizers(params: &NetworkParams, scale: PenaltyScale) -> (f64, f64, f64) {
    let mut out = [0.0; 3];
    let weights = penalty_weights(params, scale);
    for ((w, kind), m) in params.to_flat().iter().zip(params.flat_kinds()).zip(weights) {
        out[penalty_family(kind)] += m * match kind {
            WeightKind::Signomial => poly_distance(*w),
            _ => half_norm(*w),
        };
    }
    (out[0], out[1], out[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = NetworkConfig::tinkerbell();
        assert_eq!(init_params(&cfg, 5), init_params(&cfg, 5));
        assert_ne!(init_params(&cfg, 5), init_params(&cfg, 6));
    }

    #[test]
    fn init_std_of_linear_weights() {
        let mut cfg = NetworkConfig::new(1, 1, 1, vec![]);
        cfg.widths.linear = 50_000;
        let p = init_params(&cfg, 17);
        let w = &p.stacks[0].layers[0].linear.data;
        assert_eq!(w.len(), 100_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64).sqrt();
        assert!((sd / INIT_STD - 1.0).abs() < 0.05, "sd {sd}");
    }

    #[test]
    fn parameter_counts() {
        // d_in = 2, d_out = lin 1 + sig 1 + 2 operators + bias = 5
        assert_eq!(NetworkConfig::logistic().param_count(), 2 + 2 + 4 + 5);
        assert_eq!(NetworkConfig::gaussian().param_count(), 44);
        for cfg in [
            NetworkConfig::logistic(),
            NetworkConfig::gaussian(),
            NetworkConfig::tinkerbell(),
        ] {
            assert_eq!(init_params(&cfg, 0).len(), cfg.param_count());
        }
    }

    #[test]
    fn regularizer_values() {
        let mut cfg = NetworkConfig::logistic();
        cfg.operators.clear();
        let mut p = NetworkParams::build(&cfg, |k| {
            if k == WeightKind::Signomial {
                1.0
            } else {
                0.0
            }
        });
        assert_eq!(regularizers(&p, PenaltyScale::Sum), (0.0, 0.0, 0.0));
        p.stacks[0].layers[0].linear.set(0, 0, 0.25);
        assert!((regularizers(&p, PenaltyScale::Sum).0 - 0.5).abs() < 1e-4);
        p.stacks[0].layers[0].signomial.set(0, 1, 1.8);
        assert!((regularizers(&p, PenaltyScale::Sum).1 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn penalty_derivatives() {
        assert_eq!(half_norm_grad(0.0), 0.0);
        assert!((half_norm_grad(0.25) - 1.0 / (2.0 * (0.25f64 + 1e-8).sqrt())).abs() < 1e-15);
        assert!(half_norm_grad(-0.25) < 0.0);
        assert_eq!(poly_distance_grad(1.8), -1.0);
        assert_eq!(poly_distance_grad(2.2), 1.0);
        assert_eq!(poly_distance_grad(3.7), 1.0);
        assert_eq!(poly_distance_grad(-0.3), -1.0);
        assert_eq!(poly_distance(-0.3), 0.3);
    }

    #[test]
    fn flat_round_trip() {
        let cfg = NetworkConfig::tinkerbell();
        let p = init_params(&cfg, 1);
        let mut q = NetworkParams::zeros(&cfg);
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
        assert_eq!(p.flat_kinds().len(), p.len());
    }

    #[test]
    fn validation() {
        let mut cfg = NetworkConfig::logistic();
        assert!(cfg.validate().is_ok());
        cfg.bias_value = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = NetworkConfig::logistic();
        cfg.stacks = 0;
        assert!(cfg.validate().is_err());
    }
}
