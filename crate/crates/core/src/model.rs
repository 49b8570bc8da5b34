//! Multinomial logistic regression trained with plain SGD.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FlowTable;
use crate::seed;

/// Weights (`k x d`, row-major, one row per class) and biases (`k`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    k: usize,
    d: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            k,
            d,
            weights: vec![0.0; k * d],
            bias: vec![0.0; k],
        }
    }

    pub fn from_parts(k: usize, d: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != k * d {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                actual: weights.len(),
            });
        }
        if bias.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: bias.len(),
            });
        }
        if k < 2 {
            return Err(Error::invalid("a softmax model needs k >= 2"));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(Self {
            k,
            d,
            weights,
            bias,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.d..(class + 1) * self.d]
    }

    /// Weights followed by biases.
    pub fn iter_flat(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    pub(crate) fn iter_flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.k * (self.d + 1)
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn same_shape(&self, other: &ModelParams) -> Result<()> {
        if self.k != other.k || self.d != other.d {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                actual: other.num_params(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.iter_flat().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn logits_into(&self, x: &[f64], z: &mut [f64]) {
        for (c, zc) in z.iter_mut().enumerate() {
            let row = self.weight_row(c);
            *zc = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[c];
        }
    }

    /// Applies `params -= lr * (grad + l2 * W)`. Biases are not regularized.
    pub fn step(&mut self, grad: &Gradient, learning_rate: f64, l2_strength: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= learning_rate * (g + l2_strength * *w);
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= learning_rate * g;
        }
    }

    /// Text form: a `k d` header line, then `k` lines of weights, then one
    /// line of biases. Values use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.k, self.d);
        let fmt = |vals: &[f64]| {
            vals.iter()
                .map(|v| format!("{v:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for c in 0..self.k {
            out += &fmt(self.weight_row(c));
            out.push('\n');
        }
        out += &fmt(&self.bias);
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Malformed {
            location: "model text".into(),
            message: m.into(),
        };
        let mut tokens = text.split_whitespace();
        let mut dim = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| bad(&format!("missing {what}")))?
                .parse()
                .map_err(|_| bad(&format!("bad {what}")))
        };
        let k = dim("k")?;
        let d = dim("d")?;
        let vals = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| bad(&format!("bad value `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != k * (d + 1) {
            return Err(bad(&format!(
                "expected {} values, found {}",
                k * (d + 1),
                vals.len()
            )));
        }
        let (w, b) = vals.split_at(k * d);
        Self::from_parts(k, d, w.to_vec(), b.to_vec())
    }

    /// Binary form: magic `FIDM`, `k` and `d` as little-endian u32, then
    /// the weights and biases as little-endian f64.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        for v in self.iter_flat() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Malformed {
                location: "model binary".into(),
                message: "bad magic".into(),
            });
        }
        let mut u = [0u8; 4];
        r.read_exact(&mut u)?;
        let k = u32::from_le_bytes(u) as usize;
        r.read_exact(&mut u)?;
        let d = u32::from_le_bytes(u) as usize;
        let mut vals = Vec::with_capacity(k * (d + 1));
        let mut b = [0u8; 8];
        for _ in 0..k * (d + 1) {
            r.read_exact(&mut b)?;
            vals.push(f64::from_le_bytes(b));
        }
        let bias = vals.split_off(k * d);
        Self::from_parts(k, d, vals, bias)
    }
}

const BINARY_MAGIC: &[u8; 4] = b"FIDM";

/// Gradient with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            weights: vec![0.0; params.weights.len()],
            bias: vec![0.0; params.bias.len()],
        }
    }

    pub fn iter_flat(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn clear(&mut self) {
        self.weights.fill(0.0);
        self.bias.fill(0.0);
    }

    /// Adds `scale * (p - onehot(y)) x^T` for one sample.
    fn accumulate(&mut self, probs: &[f64], x: &[f64], y: usize, scale: f64) {
        let d = x.len();
        for (c, &p) in probs.iter().enumerate() {
            let err = scale * (p - if c == y { 1.0 } else { 0.0 });
            self.bias[c] += err;
            for (g, &v) in self.weights[c * d..(c + 1) * d].iter_mut().zip(x) {
                *g += err * v;
            }
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub fn predict_proba(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check_input(x)?;
    let mut z = vec![0.0; params.k];
    params.logits_into(x, &mut z);
    softmax_in_place(&mut z);
    Ok(z)
}

/// Most probable class; ties go to the lowest id.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<usize> {
    let p = predict_proba(params, x)?;
    Ok(argmax(&p))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate().skip(1) {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted classes for every record of `table`.
pub fn predict_table(params: &ModelParams, table: &FlowTable) -> Result<Vec<usize>> {
    if table.d() != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            actual: table.d(),
        });
    }
    let mut z = vec![0.0; params.k];
    Ok(table
        .records()
        .iter()
        .map(|r| {
            // argmax of the logits equals argmax of the softmax
            params.logits_into(&r.features, &mut z);
            softmax_in_place(&mut z);
            argmax(&z)
        })
        .collect())
}

/// A labelled sample borrowed from a table or built by hand.
pub type Sample<'a> = (&'a [f64], usize);

/// Mean cross-entropy plus `l2_strength / 2 * ||W||^2`.
pub fn loss(params: &ModelParams, batch: &[Sample<'_>], l2_strength: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch".into()));
    }
    let mut z = vec![0.0; params.k];
    let mut total = 0.0;
    for &(x, y) in batch {
        params.check_input(x)?;
        check_label(params, y)?;
        params.logits_into(x, &mut z);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    Ok(total / batch.len() as f64 + 0.5 * l2_strength * params.weight_norm_sq())
}

/// Gradient of [`loss`] over `batch`, including the L2 term.
pub fn gradient(params: &ModelParams, batch: &[Sample<'_>], l2_strength: f64) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch".into()));
    }
    let mut g = Gradient::zeros_like(params);
    let mut z = vec![0.0; params.k];
    let scale = 1.0 / batch.len() as f64;
    for &(x, y) in batch {
        params.check_input(x)?;
        check_label(params, y)?;
        params.logits_into(x, &mut z);
        softmax_in_place(&mut z);
        g.accumulate(&z, x, y, scale);
    }
    for (gw, w) in g.weights.iter_mut().zip(&params.weights) {
        *gw += l2_strength * w;
    }
    Ok(g)
}

fn check_label(params: &ModelParams, y: usize) -> Result<()> {
    if y >= params.k {
        return Err(Error::invalid(format!(
            "label {y} out of range for k = {}",
            params.k
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Constant step size. Zero turns training into a no-op.
    pub learning_rate: f64,
    pub l2_strength: f64,
    pub epochs_per_round: usize,
    /// Samples per update; 1 is classic per-sample SGD.
    pub batch_size: usize,
    /// Shuffle seed. The runtime overrides this per party and round.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            l2_strength: 1e-4,
            epochs_per_round: 1,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be a non-negative finite number, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return Err(Error::invalid(format!(
                "l2_strength must be non-negative, got {}",
                self.l2_strength
            )));
        }
        if self.epochs_per_round == 0 {
            return Err(Error::invalid("epochs_per_round must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// One pass over `train` in a shuffled order drawn from `seed`.
///
/// Each mini-batch (one sample by default) applies
/// `W -= lr * (mean((p - onehot(y)) x^T) + l2 * W)` and
/// `b -= lr * mean(p - onehot(y))`.
pub fn sgd_epoch_seeded(
    params: &ModelParams,
    train: &FlowTable,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParams> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training table".into()));
    }
    if train.d() != params.d || train.k() != params.k {
        return Err(Error::DimensionMismatch {
            expected: params.num_params(),
            actual: train.k() * (train.d() + 1),
        });
    }
    let mut out = params.clone();
    if cfg.learning_rate == 0.0 {
        return Ok(out);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut seed::rng(seed));

    let records = train.records();
    let mut grad = Gradient::zeros_like(params);
    let mut z = vec![0.0; params.k];
    for chunk in order.chunks(cfg.batch_size) {
        grad.clear();
        let scale = 1.0 / chunk.len() as f64;
        for &i in chunk {
            let r = &records[i];
            out.logits_into(&r.features, &mut z);
            softmax_in_place(&mut z);
            grad.accumulate(&z, &r.features, r.label, scale);
        }
        out.step(&grad, cfg.learning_rate, cfg.l2_strength);
    }
    Ok(out)
}

/// [`sgd_epoch_seeded`] with `cfg.seed`.
pub fn sgd_epoch(
    params: &ModelParams,
    train: &FlowTable,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    sgd_epoch_seeded(params, train, cfg, cfg.seed)
}
