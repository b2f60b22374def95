//! Forward-only dense layers, deterministic weight initialization,
//! elementary losses and a central-difference gradient checker.

use crate::error::{ensure_width, Error, Result};
use crate::geom::FeatureMatrix;

/// Element-wise non-linearity applied after a dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    pub fn code(self) -> u64 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Softplus => 3,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        Some(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Softplus,
            _ => return None,
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large |x|.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// One affine layer `act(W x + b)` with `W` stored `[out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: FeatureMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: FeatureMatrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        ensure_width("dense bias length", weight.rows(), bias.len())?;
        if !weight.is_finite() || !bias.iter().all(|b| b.is_finite()) {
            return Err(Error::NonFinite("dense layer parameters".into()));
        }
        Ok(Dense {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(in_width: usize, out_width: usize, activation: Activation) -> Self {
        Dense {
            weight: FeatureMatrix::zeros(out_width, in_width),
            bias: vec![0.0; out_width],
            activation,
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_width(&self) -> usize {
        self.weight.rows()
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (o, b) in self.bias.iter().enumerate() {
            let w = self.weight.row(o);
            let mut acc = *b;
            for (wi, xi) in w.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(self.activation.apply(acc));
        }
    }
}

/// Layered weights for one "MLP(·)" block.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights {
    layers: Vec<Dense>,
}

impl MlpWeights {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            ensure_width("MLP layer chaining", pair[0].out_width(), pair[1].in_width())?;
        }
        Ok(MlpWeights { layers })
    }

    /// Single identity-activated layer with `W = I`, `b = 0`.
    pub fn identity(width: usize) -> Self {
        MlpWeights {
            layers: vec![Dense {
                weight: FeatureMatrix::identity(width),
                bias: vec![0.0; width],
                activation: Activation::Identity,
            }],
        }
    }

    /// All-zero weights and biases over the given layer widths.
    pub fn zeros(widths: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::zeros(w[0], w[1], if i == last { output } else { hidden }))
            .collect();
        MlpWeights { layers }
    }

    /// Deterministic Glorot-uniform weights with zero biases. `stream`
    /// separates independent blocks that share a run seed.
    pub fn init(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        seed: u64,
        stream: u64,
    ) -> Self {
        let mut m = MlpWeights::zeros(widths, hidden, output);
        for (i, layer) in m.layers.iter_mut().enumerate() {
            let (out, inp) = (layer.out_width(), layer.in_width());
            layer.weight = init_weights(out, inp, seed ^ stream.wrapping_mul(0xA24B_AED4_963E_E407), i as u64);
        }
        m
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width()
    }

    /// Applies the block independently to every row of `x`.
    pub fn forward(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        ensure_width("MLP input width", self.in_width(), x.cols())?;
        let mut out = FeatureMatrix::zeros(x.rows(), self.out_width());
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (i, row) in x.iter_rows().enumerate() {
            self.forward_buffers(row, &mut a, &mut b);
            out.row_mut(i).copy_from_slice(&a);
        }
        Ok(out)
    }

    pub fn forward_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_width("MLP input width", self.in_width(), x.len())?;
        let mut a = Vec::new();
        let mut b = Vec::new();
        self.forward_buffers(x, &mut a, &mut b);
        Ok(a)
    }

    // Result ends up in `a`.
    fn forward_buffers(&self, x: &[f64], a: &mut Vec<f64>, b: &mut Vec<f64>) {
        self.layers[0].forward_into(x, a);
        for layer in &self.layers[1..] {
            layer.forward_into(a, b);
            std::mem::swap(a, b);
        }
    }
}

/// Per-channel maximum over all rows.
pub fn channel_max_pool(x: &FeatureMatrix) -> Result<Vec<f64>> {
    if x.rows() == 0 {
        return Err(Error::invalid("max-pool over zero rows"));
    }
    let mut out = x.row(0).to_vec();
    for row in x.iter_rows().skip(1) {
        for (o, &v) in out.iter_mut().zip(row) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(out)
}

pub const DEFAULT_BETA: f64 = 1.0;

/// Huber-style smooth-ℓ1 with transition point `beta`.
pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    }
}

pub fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

pub const PROB_CLAMP: f64 = 1e-7;

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy. Labels are read as `y > 0.5`; an empty input
/// yields 0.
pub fn cross_entropy(probs: &[f64], labels: &[bool]) -> Result<f64> {
    ensure_width("cross-entropy labels", probs.len(), labels.len())?;
    if probs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

/// Compares an analytic gradient against central differences and returns
/// the largest relative error over all coordinates.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if eps <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    ensure_width("analytic gradient length", params.len(), analytic.len())?;
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p);
        p[i] = orig - eps;
        let down = f(&p);
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform(−b, b) weights with `b = sqrt(6 / (in + out))`, produced by a
/// counter-based hash of `(seed, shape, layer, entry)`. Values are rounded to
/// f32 so they survive the binary weight format unchanged.
pub fn init_weights(out: usize, inp: usize, seed: u64, layer: u64) -> FeatureMatrix {
    let bound = (6.0 / (inp + out).max(1) as f64).sqrt();
    let mut b32 = bound as f32;
    if b32 as f64 > bound {
        b32 = f32::from_bits(b32.to_bits() - 1);
    }
    let key = splitmix64(seed)
        ^ splitmix64((out as u64) << 32 ^ inp as u64)
        ^ splitmix64(layer.wrapping_add(0x5851_F42D_4C95_7F2D));
    let data = (0..out * inp)
        .map(|c| {
            let h = splitmix64(key ^ splitmix64(c as u64));
            let u = (h >> 11) as f64 / (1u64 << 53) as f64;
            ((2.0 * u - 1.0) * b32 as f64) as f32 as f64
        })
        .collect();
    FeatureMatrix::from_vec(out, inp, data).expect("shape by construction")
}
