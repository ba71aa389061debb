//! Self-supervised non-linear read embeddings.
//!
//! A two-layer network maps a k-mer profile to an embedding:
//!
//! ```text
//! h   = sigmoid(W1 x + b1)          hidden, 512 by default
//! h^  = batchnorm(h)                batch statistics in training, running otherwise
//! h~  = dropout(h^)                 inverted dropout, training only
//! out = W2 h~ + b2                  256 by default
//! ```
//!
//! Training pairs come from splitting reads in half: the two halves of one
//! read form a positive pair, halves of two different reads a negative one.
//! The pair probability is `exp(-|e_i - e_j|^2)` and one of three losses
//! (Bernoulli, Poisson, squared hinge) is minimised with Adam. Gradients are
//! derived by hand through every layer, batch statistics included.

use std::io::{Read as IoRead, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::{self, KBNL_MAGIC};
use crate::kmer::{self, KmerConfig};
use crate::optim::{Adam, AdamConfig};
use crate::seqio::{Dataset, Read};

/// Largest k for which a `hidden x 4^k` first layer is reasonable.
pub const MAX_NL_K: usize = 8;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bernoulli,
    Poisson,
    Hinge,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(LossKind::Bernoulli),
            "poisson" => Ok(LossKind::Poisson),
            "hinge" => Ok(LossKind::Hinge),
            other => Err(Error::Usage(format!("unknown loss {other:?}"))),
        }
    }
}

/// How a profile becomes the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// counts / total
    #[default]
    Frequencies,
    RawCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NlTrainConfig {
    pub k: usize,
    pub hidden: usize,
    pub d_out: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub negatives_per_positive: usize,
    pub dropout: f64,
    pub loss: LossKind,
    pub input: InputMode,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for NlTrainConfig {
    fn default() -> Self {
        NlTrainConfig {
            k: 4,
            hidden: 512,
            d_out: 256,
            epochs: 300,
            minibatch: 10_000,
            negatives_per_positive: 200,
            dropout: 0.2,
            loss: LossKind::Bernoulli,
            input: InputMode::Frequencies,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl NlTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Usage("dropout must be in [0, 1)".into()));
        }
        if self.k == 0 || self.k > MAX_NL_K {
            return Err(Error::Usage(format!("k must be in 1..={MAX_NL_K}")));
        }
        if self.hidden == 0 || self.d_out == 0 || self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::Usage(
                "hidden, d_out, epochs and minibatch must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Weights of the two-layer embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub k: usize,
    /// `hidden x 4^k`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `d_out x hidden`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
    pub bn_running_mean: Array1<f64>,
    pub bn_running_var: Array1<f64>,
    pub bn_eps: f64,
    pub input: InputMode,
}

impl MlpParams {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases,
    /// unit gamma and running variance.
    pub fn init<R: Rng>(k: usize, hidden: usize, d_out: usize, rng: &mut R) -> Self {
        let input = 1usize << (2 * k);
        let a1 = 1.0 / (input as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let w1 = Array2::from_shape_simple_fn((hidden, input), || rng.random_range(-a1..a1));
        let w2 = Array2::from_shape_simple_fn((d_out, hidden), || rng.random_range(-a2..a2));
        MlpParams {
            k,
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(d_out),
            bn_gamma: Array1::ones(hidden),
            bn_beta: Array1::zeros(hidden),
            bn_running_mean: Array1::zeros(hidden),
            bn_running_var: Array1::ones(hidden),
            bn_eps: 1e-5,
            input: InputMode::Frequencies,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w2.nrows()
    }

    fn blocks(&self) -> [&[f64]; 8] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.bn_gamma.as_slice().expect("standard layout"),
            self.bn_beta.as_slice().expect("standard layout"),
            self.bn_running_mean.as_slice().expect("standard layout"),
            self.bn_running_var.as_slice().expect("standard layout"),
        ]
    }

    fn trainable_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.bn_gamma.as_slice_mut().expect("standard layout"),
            self.bn_beta.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Network input for a profile.
    pub fn input_vector(&self, p: &kmer::KmerProfile) -> Vec<f64> {
        input_vector(p, self.input)
    }
}

fn input_vector(p: &kmer::KmerProfile, mode: InputMode) -> Vec<f64> {
    match mode {
        InputMode::Frequencies => p.frequencies(),
        InputMode::RawCounts => p.as_f64(),
    }
}

/// KBNL layout: magic, `u32 k`, `u32 hidden`, `u32 d_out`, then `f32`
/// blocks W1, b1, W2, b2, gamma, beta, running mean, running variance,
/// followed by a two-value `f32` trailer `[bn_eps, raw_counts]`.
pub fn write_kbnl<W: Write>(p: &MlpParams, mut w: W) -> Result<()> {
    w.write_all(KBNL_MAGIC)?;
    formats::write_u32(&mut w, p.k as u32)?;
    formats::write_u32(&mut w, p.hidden() as u32)?;
    formats::write_u32(&mut w, p.d_out() as u32)?;
    for block in p.blocks() {
        formats::write_f32s(&mut w, block.iter().copied())?;
    }
    let raw = if p.input == InputMode::RawCounts { 1.0 } else { 0.0 };
    formats::write_f32s(&mut w, [p.bn_eps, raw].into_iter())
}

pub fn read_kbnl<R: IoRead>(mut r: R) -> Result<MlpParams> {
    formats::expect_magic(&mut r, KBNL_MAGIC)?;
    let k = formats::read_u32(&mut r)? as usize;
    let hidden = formats::read_u32(&mut r)? as usize;
    let d_out = formats::read_u32(&mut r)? as usize;
    if k == 0 || k > MAX_NL_K || hidden == 0 || d_out == 0 {
        return Err(Error::Format(format!(
            "implausible model header k={k} hidden={hidden} d_out={d_out}"
        )));
    }
    let input = 1usize << (2 * k);
    let mut take = |n: usize| formats::read_f32s(&mut r, n);
    let w1 = Array2::from_shape_vec((hidden, input), take(hidden * input)?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let b1 = Array1::from(take(hidden)?);
    let w2 = Array2::from_shape_vec((d_out, hidden), take(d_out * hidden)?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let b2 = Array1::from(take(d_out)?);
    let bn_gamma = Array1::from(take(hidden)?);
    let bn_beta = Array1::from(take(hidden)?);
    let bn_running_mean = Array1::from(take(hidden)?);
    let bn_running_var = Array1::from(take(hidden)?);
    // optional trailer
    let (bn_eps, mode) = match take(2) {
        Ok(t) => (
            t[0],
            if t[1] != 0.0 {
                InputMode::RawCounts
            } else {
                InputMode::Frequencies
            },
        ),
        Err(_) => (1e-5, InputMode::Frequencies),
    };
    if bn_running_var.iter().any(|&v| v <= 0.0) {
        return Err(Error::Format("running variance must be positive".into()));
    }
    Ok(MlpParams {
        k,
        w1,
        b1,
        w2,
        b2,
        bn_gamma,
        bn_beta,
        bn_running_mean,
        bn_running_var,
        bn_eps,
        input: mode,
    })
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Array2<f64>,
    /// sigmoid output
    h: Array2<f64>,
    /// normalised hidden
    hn: Array2<f64>,
    /// dropout mask, already scaled by 1/(1-p)
    mask: Array2<f64>,
    /// batchnorm output times mask
    ht: Array2<f64>,
    inv_std: Array1<f64>,
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
}

/// Inverted-dropout mask: entries are `1/(1-p)` with probability `1-p`,
/// else 0.
pub fn dropout_mask<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Array2<f64> {
    if p == 0.0 {
        return Array2::ones((rows, cols));
    }
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// Training-mode forward pass over a batch (rows are inputs) with batch
/// statistics and the given dropout mask. Running statistics are untouched.
pub fn forward_train(
    params: &MlpParams,
    x: &Array2<f64>,
    mask: Array2<f64>,
) -> Result<(Array2<f64>, ForwardCache)> {
    if x.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: x.ncols(),
        });
    }
    let batch = x.nrows() as f64;
    let mut h = x.dot(&params.w1.t());
    h += &params.b1;
    h.mapv_inplace(sigmoid);
    let mean = h.sum_axis(Axis(0)) / batch;
    let centered = &h - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / batch;
    let inv_std = var.mapv(|v| 1.0 / (v + params.bn_eps).sqrt());
    let hn = &centered * &inv_std;
    let mut ht = &hn * &params.bn_gamma;
    ht += &params.bn_beta;
    ht *= &mask;
    let mut out = ht.dot(&params.w2.t());
    out += &params.b2;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite activation".into()));
    }
    Ok((
        out,
        ForwardCache {
            x: x.clone(),
            h,
            hn,
            mask,
            ht,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

/// Inference-mode forward pass: running statistics, no dropout.
pub fn forward_infer(params: &MlpParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: x.ncols(),
        });
    }
    let mut h = x.dot(&params.w1.t());
    h += &params.b1;
    h.mapv_inplace(sigmoid);
    let scale = params
        .bn_running_var
        .mapv(|v| 1.0 / (v + params.bn_eps).sqrt())
        * &params.bn_gamma;
    h -= &params.bn_running_mean;
    h *= &scale;
    h += &params.bn_beta;
    let mut out = h.dot(&params.w2.t());
    out += &params.b2;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite activation".into()));
    }
    Ok(out)
}

/// Gradients of the trainable parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
}

impl MlpGrads {
    fn blocks(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.bn_gamma.as_slice().expect("standard layout"),
            self.bn_beta.as_slice().expect("standard layout"),
        ]
    }

    /// Gradient blocks flattened in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().concat()
    }
}

/// Back-propagates `d_out` (gradient w.r.t. the network output) through the
/// output layer, dropout, batch normalisation, sigmoid and input layer.
pub fn backward(params: &MlpParams, cache: &ForwardCache, d_out: &Array2<f64>) -> MlpGrads {
    let batch = cache.x.nrows() as f64;
    let w2 = d_out.t().dot(&cache.ht);
    let b2 = d_out.sum_axis(Axis(0));
    let d_ht = d_out.dot(&params.w2);
    let d_y = &d_ht * &cache.mask;
    let bn_gamma = (&d_y * &cache.hn).sum_axis(Axis(0));
    let bn_beta = d_y.sum_axis(Axis(0));
    let d_hn = &d_y * &params.bn_gamma;
    // d_h = inv_std / B * (B d_hn - sum(d_hn) - hn * sum(d_hn * hn))
    let sum_dhn = d_hn.sum_axis(Axis(0));
    let sum_dhn_hn = (&d_hn * &cache.hn).sum_axis(Axis(0));
    let mut d_h = &d_hn * batch - &sum_dhn - &cache.hn * &sum_dhn_hn;
    d_h *= &(&cache.inv_std / batch);
    let d_z1 = d_h * cache.h.mapv(|v| v * (1.0 - v));
    let w1 = d_z1.t().dot(&cache.x);
    let b1 = d_z1.sum_axis(Axis(0));
    MlpGrads {
        w1,
        b1,
        w2,
        b2,
        bn_gamma,
        bn_beta,
    }
}

/// `exp(-|e_i - e_j|^2)`.
pub fn pair_probability(e_i: &[f64], e_j: &[f64]) -> f64 {
    (-sq_dist(e_i, e_j)).exp()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean binary cross-entropy with clamped probabilities.
pub fn loss_bernoulli(y: &[f64], p: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    y.iter()
        .zip(p)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Mean Poisson negative log-likelihood `-y log(lambda) + lambda`.
pub fn loss_poisson_nl(y: &[f64], lambda: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    y.iter()
        .zip(lambda)
        .map(|(&y, &l)| {
            let l = l.max(PROB_CLAMP);
            -y * l.ln() + l
        })
        .sum::<f64>()
        / n
}

/// Mean of `y d^2 + (1-y) max(0, 1-d)^2` over pair distances `d`.
pub fn loss_hinge(y: &[f64], dist: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    y.iter()
        .zip(dist)
        .map(|(&y, &d)| y * d * d + (1.0 - y) * (1.0 - d).max(0.0).powi(2))
        .sum::<f64>()
        / n
}

/// Loss over a batch of embedded pairs and its gradient w.r.t. both sides.
/// Row `i` of `ea` and `eo` form pair `i` with label `y[i]`.
pub fn pair_loss_and_grad(
    kind: LossKind,
    ea: ArrayView2<f64>,
    eo: ArrayView2<f64>,
    y: &[f64],
) -> (f64, Array2<f64>, Array2<f64>) {
    let n = y.len();
    let inv_n = 1.0 / n.max(1) as f64;
    let delta = &ea - &eo;
    let d2: Vec<f64> = delta
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect();
    // dL/d(delta_i) = coef_i * delta_i
    let mut coef = vec![0.0; n];
    let loss = match kind {
        LossKind::Bernoulli => {
            let p: Vec<f64> = d2.iter().map(|d| (-d).exp()).collect();
            for i in 0..n {
                let inside = p[i] > PROB_CLAMP && p[i] < 1.0 - PROB_CLAMP;
                if inside {
                    // d/dD of -y log p - (1-y) log(1-p), times dD/d(delta) = 2 delta
                    let dl_dd = y[i] - (1.0 - y[i]) * p[i] / (1.0 - p[i]);
                    coef[i] = 2.0 * dl_dd * inv_n;
                }
            }
            loss_bernoulli(y, &p)
        }
        LossKind::Poisson => {
            let lambda: Vec<f64> = d2.iter().map(|d| (-d).exp()).collect();
            for i in 0..n {
                let inside = lambda[i] > PROB_CLAMP;
                let dl_dd = if inside { y[i] - lambda[i] } else { -lambda[i] };
                coef[i] = 2.0 * dl_dd * inv_n;
            }
            loss_poisson_nl(y, &lambda)
        }
        LossKind::Hinge => {
            let dist: Vec<f64> = d2.iter().map(|d| d.sqrt()).collect();
            for i in 0..n {
                let pull = 2.0 * y[i];
                let push = if dist[i] < 1.0 && dist[i] > 0.0 {
                    -2.0 * (1.0 - dist[i]) / dist[i]
                } else {
                    0.0
                };
                coef[i] = (pull + (1.0 - y[i]) * push) * inv_n;
            }
            loss_hinge(y, &dist)
        }
    };
    let coef = Array1::from(coef).insert_axis(Axis(1));
    let ga = &delta * &coef;
    let go = -&ga;
    (loss, ga, go)
}

/// Per-read halves turned into network inputs; rows `2i` and `2i+1` are the
/// left and right half of read `i`.
#[derive(Debug, Clone)]
pub struct HalfTable {
    pub inputs: Array2<f64>,
}

impl HalfTable {
    /// Left half gets the first `floor(l/2)` bases, right half the rest.
    pub fn build(dataset: &Dataset, k: usize, mode: InputMode) -> Result<Self> {
        let cfg = KmerConfig::new(k)?;
        let dim = cfg.dim();
        let mut inputs = Array2::zeros((2 * dataset.len(), dim));
        for (i, r) in dataset.reads().iter().enumerate() {
            if r.len() < 2 * k + 1 {
                return Err(Error::data(format!(
                    "read {} (length {}) is too short to split into two {k}-mer-bearing halves",
                    r.id,
                    r.len()
                )));
            }
            let mid = r.len() / 2;
            for (slot, half) in [&r.bases[..mid], &r.bases[mid..]].into_iter().enumerate() {
                let p = kmer::profile_bases(half, &cfg)?;
                if p.total == 0 {
                    return Err(Error::data(format!(
                        "half of read {} has no valid {k}-mer windows",
                        r.id
                    )));
                }
                let v = input_vector(&p, mode);
                inputs
                    .row_mut(2 * i + slot)
                    .assign(&Array1::from(v));
            }
        }
        Ok(HalfTable { inputs })
    }

    pub fn reads(&self) -> usize {
        self.inputs.nrows() / 2
    }
}

/// A pair of half indices into a [`HalfTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndex {
    pub anchor: usize,
    pub other: usize,
    pub positive: bool,
}

/// Pairs for one epoch plus a warning when negatives were impossible.
#[derive(Debug, Clone)]
pub struct EpochPairs {
    pub pairs: Vec<PairIndex>,
    pub warning: Option<String>,
}

/// One positive pair per read and `negatives` negatives that pair a random
/// half of the read with a random half of a different read.
pub fn make_pairs(reads: usize, negatives: usize, epoch_seed: u64) -> EpochPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut pairs = Vec::with_capacity(reads * (1 + negatives));
    let warning = (reads < 2 && negatives > 0)
        .then(|| "fewer than two reads: no negative pairs can be formed".to_string());
    for i in 0..reads {
        pairs.push(PairIndex {
            anchor: 2 * i,
            other: 2 * i + 1,
            positive: true,
        });
        if reads < 2 {
            continue;
        }
        for _ in 0..negatives {
            let mut j = rng.random_range(0..reads - 1);
            if j >= i {
                j += 1;
            }
            pairs.push(PairIndex {
                anchor: 2 * i + rng.random_range(0..2),
                other: 2 * j + rng.random_range(0..2),
                positive: false,
            });
        }
    }
    EpochPairs { pairs, warning }
}

/// Materialised minibatch: anchor inputs, other inputs and labels.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub anchors: Array2<f64>,
    pub others: Array2<f64>,
    pub y: Vec<f64>,
}

impl PairBatch {
    pub fn gather(halves: &HalfTable, pairs: &[PairIndex]) -> Self {
        let a: Vec<usize> = pairs.iter().map(|p| p.anchor).collect();
        let o: Vec<usize> = pairs.iter().map(|p| p.other).collect();
        PairBatch {
            anchors: halves.inputs.select(Axis(0), &a),
            others: halves.inputs.select(Axis(0), &o),
            y: pairs
                .iter()
                .map(|p| if p.positive { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Anchors stacked over others: the batch normalisation batch.
    pub fn stacked(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(0), &[self.anchors.view(), self.others.view()])
            .expect("equal widths")
    }
}

/// Loss and gradients of one minibatch in training mode with a fixed mask.
pub fn batch_loss_and_grad(
    params: &MlpParams,
    kind: LossKind,
    batch: &PairBatch,
    mask: Array2<f64>,
) -> Result<(f64, MlpGrads, ForwardCache)> {
    let x = batch.stacked();
    let n = batch.len();
    let (out, cache) = forward_train(params, &x, mask)?;
    let (loss, ga, go) = pair_loss_and_grad(
        kind,
        out.slice(s![..n, ..]),
        out.slice(s![n.., ..]),
        &batch.y,
    );
    let d_out = ndarray::concatenate(Axis(0), &[ga.view(), go.view()]).expect("equal widths");
    let grads = backward(params, &cache, &d_out);
    Ok((loss, grads, cache))
}

#[derive(Debug, Clone)]
pub struct NlFit {
    pub params: MlpParams,
    /// Mean minibatch loss per epoch.
    pub trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Trains the embedder on the halves of `dataset`'s reads.
pub fn train_nl(dataset: &Dataset, cfg: &NlTrainConfig) -> Result<NlFit> {
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(Error::data("training needs at least two reads"));
    }
    let halves = HalfTable::build(dataset, cfg.k, cfg.input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = MlpParams::init(cfg.k, cfg.hidden, cfg.d_out, &mut rng);
    params.bn_eps = cfg.bn_eps;
    params.input = cfg.input;
    let mut adams: Vec<Adam> = params
        .trainable_mut()
        .iter()
        .map(|b| Adam::new(cfg.adam, b.len()))
        .collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut warnings = Vec::new();
    let momentum = cfg.bn_momentum;
    for epoch in 0..cfg.epochs {
        let epoch_seed = cfg.seed.wrapping_add(0x1000_0000 * (epoch as u64 + 1));
        let EpochPairs { mut pairs, warning } =
            make_pairs(halves.reads(), cfg.negatives_per_positive, epoch_seed);
        if let Some(w) = warning {
            if epoch == 0 {
                warnings.push(w);
            }
        }
        pairs.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (step, chunk) in pairs.chunks(cfg.minibatch).enumerate() {
            let batch = PairBatch::gather(&halves, chunk);
            let mask = dropout_mask(2 * chunk.len(), params.hidden(), cfg.dropout, &mut rng);
            let (loss, grads, cache) = batch_loss_and_grad(&params, cfg.loss, &batch, mask)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            for ((block, g), adam) in params
                .trainable_mut()
                .into_iter()
                .zip(grads.blocks())
                .zip(adams.iter_mut())
            {
                adam.step(block, g);
            }
            let rows = (2 * chunk.len()) as f64;
            let unbias = if rows > 1.0 { rows / (rows - 1.0) } else { 1.0 };
            params.bn_running_mean =
                &params.bn_running_mean * (1.0 - momentum) + &cache.batch_mean * momentum;
            params.bn_running_var = &params.bn_running_var * (1.0 - momentum)
                + &cache.batch_var * (momentum * unbias);
            if !params.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            sum += loss * chunk.len() as f64;
            count += chunk.len();
        }
        trace.push(sum / count.max(1) as f64);
    }
    Ok(NlFit {
        params,
        trace,
        warnings,
    })
}

/// Embeds a whole read (not its halves) in inference mode.
pub fn embed_read_nl(read: &Read, params: &MlpParams) -> Result<Vec<f64>> {
    let m = embed_reads_nl(std::slice::from_ref(read), params)?;
    Ok(m.row(0).to_vec())
}

/// Batched [`embed_read_nl`]; row `i` embeds `reads[i]`.
pub fn embed_reads_nl(reads: &[Read], params: &MlpParams) -> Result<Array2<f64>> {
    let cfg = KmerConfig::new(params.k)?;
    let mut x = Array2::zeros((reads.len(), params.input_dim()));
    for (i, r) in reads.iter().enumerate() {
        let p = kmer::profile(r, &cfg)?;
        if p.total == 0 {
            return Err(Error::data(format!(
                "read {} has no valid {}-mer windows",
                r.id, params.k
            )));
        }
        x.row_mut(i).assign(&Array1::from(params.input_vector(&p)));
    }
    forward_infer(params, x.view())
}
