//! Grasp-success classifiers over nine-channel feature tensors.
//!
//! Two architectures share one parameter-vector representation: a small
//! LeNet-style network (the reference model) and a softmax regression on
//! pooled channel statistics for fast integration runs. Training is
//! single-threaded momentum SGD in `f64`, fully determined by its seed.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{read_tensor, write_tensor, FeatureTensor, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    #[default]
    OracleForceClosure,
    OracleCollision,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub tensor: FeatureTensor,
    pub label: bool,
    pub source: LabelSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub graspable: bool,
    /// Softmax mass on the graspable output.
    pub confidence: f64,
}

impl Prediction {
    /// Softmax over `[not graspable, graspable]`; a tie is not graspable.
    pub fn from_logits(z: [f64; 2]) -> Self {
        let m = z[0].max(z[1]);
        let e0 = (z[0] - m).exp();
        let e1 = (z[1] - m).exp();
        Self {
            graspable: z[1] > z[0],
            confidence: e1 / (e0 + e1),
        }
    }
}

/// Anything that maps a feature tensor to a two-way grasp decision.
pub trait GraspClassifier: Send + Sync {
    /// Side length of the square input maps.
    fn input_size(&self) -> usize;

    /// Raw outputs `[not graspable, graspable]`.
    fn logits(&self, tensor: &FeatureTensor) -> Result<[f64; 2]>;

    fn classify(&self, tensor: &FeatureTensor) -> Result<Prediction> {
        Ok(Prediction::from_logits(self.logits(tensor)?))
    }

    fn classify_batch(&self, tensors: &[FeatureTensor]) -> Result<Vec<Prediction>> {
        tensors.iter().map(|t| self.classify(t)).collect()
    }
}

const K: usize = 5;
const F1: usize = 16;
const F2: usize = 32;
const HIDDEN: usize = 128;
const POOLED: usize = 2 * CHANNELS;

/// Smallest LeNet input whose second pooled map is at least 1×1.
pub const LENET_MIN_INPUT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// conv 5×5×16, ReLU, max-pool 2, conv 5×5×32, ReLU, max-pool 2,
    /// dense 128, ReLU, dense 2.
    LeNet { input_size: usize },
    /// Dense 2 on the per-channel mean and maximum.
    Logistic { input_size: usize },
}

impl Architecture {
    pub fn input_size(&self) -> usize {
        match *self {
            Architecture::LeNet { input_size } | Architecture::Logistic { input_size } => {
                input_size
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Architecture::LeNet { input_size } if input_size < LENET_MIN_INPUT => {
                Err(Error::invalid(
                    "architecture",
                    format!("LeNet input must be at least {LENET_MIN_INPUT}, got {input_size}"),
                ))
            }
            Architecture::Logistic { input_size: 0 } => Err(Error::invalid(
                "architecture",
                "input size must be positive",
            )),
            _ => Ok(()),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Architecture::LeNet { input_size } => LeNetShape::new(input_size).layout().total,
            Architecture::Logistic { .. } => 2 * POOLED + 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LeNetShape {
    s: usize,
    c1: usize,
    p1: usize,
    c2: usize,
    p2: usize,
}

struct Layout {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    w3: Range<usize>,
    b3: Range<usize>,
    w4: Range<usize>,
    b4: Range<usize>,
    total: usize,
}

impl LeNetShape {
    fn new(s: usize) -> Self {
        let c1 = s - K + 1;
        let p1 = c1 / 2;
        let c2 = p1 - K + 1;
        Self {
            s,
            c1,
            p1,
            c2,
            p2: c2 / 2,
        }
    }

    fn flat(&self) -> usize {
        F2 * self.p2 * self.p2
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let w1 = take(F1 * CHANNELS * K * K);
        let b1 = take(F1);
        let w2 = take(F2 * F1 * K * K);
        let b2 = take(F2);
        let w3 = take(HIDDEN * self.flat());
        let b3 = take(HIDDEN);
        let w4 = take(2 * HIDDEN);
        let b4 = take(2);
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            w4,
            b4,
            total: at,
        }
    }
}

/// Per-channel affine input map `(x - mean) * scale`, fitted on the
/// training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: [f64; CHANNELS],
    pub scale: [f64; CHANNELS],
}

impl Default for Standardization {
    fn default() -> Self {
        Self {
            mean: [0.0; CHANNELS],
            scale: [1.0; CHANNELS],
        }
    }
}

impl Standardization {
    /// Channel mean and inverse standard deviation over every pixel of
    /// every tensor; a constant channel keeps scale 1.
    pub fn fit(tensors: &[&FeatureTensor]) -> Self {
        let mut out = Self::default();
        for c in 0..CHANNELS {
            let mut n = 0.0;
            let mut sum = 0.0;
            for t in tensors {
                for v in t.channel(c) {
                    sum += v;
                    n += 1.0;
                }
            }
            let mean = sum / n;
            let mut ss = 0.0;
            for t in tensors {
                for v in t.channel(c) {
                    ss += (v - mean) * (v - mean);
                }
            }
            let sd = (ss / n).sqrt();
            out.mean[c] = mean;
            out.scale[c] = if sd > 1e-12 { 1.0 / sd } else { 1.0 };
        }
        out
    }

    fn apply(&self, t: &FeatureTensor) -> Vec<f64> {
        let n = t.size * t.size;
        t.data
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = i / n;
                (v - self.mean[c]) * self.scale[c]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub dataset_hash: String,
    pub examples: usize,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub architecture: Architecture,
    pub standardization: Standardization,
    pub params: Vec<f64>,
    pub meta: TrainingMeta,
}

impl ClassifierModel {
    /// Fresh parameters: He-normal weights, zero biases.
    pub fn init(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; architecture.param_count()];
        let mut fill = |r: Range<usize>, fan_in: usize| {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive deviation");
            for p in &mut params[r] {
                *p = d.sample(&mut rng);
            }
        };
        match architecture {
            Architecture::LeNet { input_size } => {
                let shape = LeNetShape::new(input_size);
                let l = shape.layout();
                fill(l.w1, CHANNELS * K * K);
                fill(l.w2, F1 * K * K);
                fill(l.w3, shape.flat());
                fill(l.w4, HIDDEN);
            }
            Architecture::Logistic { .. } => fill(0..2 * POOLED, POOLED),
        }
        Ok(Self {
            architecture,
            standardization: Standardization::default(),
            params,
            meta: TrainingMeta {
                seed,
                ..Default::default()
            },
        })
    }

    fn check_input(&self, t: &FeatureTensor) -> Result<()> {
        let s = self.architecture.input_size();
        if t.size != s {
            return Err(Error::DimensionMismatch {
                expected: vec![CHANNELS, s, s],
                found: t.dims().to_vec(),
            });
        }
        Ok(())
    }

    /// Class-weighted cross-entropy of one example and, when `grad` is
    /// given, its gradient added into `grad`.
    fn example_loss(
        &self,
        input: &[f64],
        label: bool,
        weight: f64,
        grad: Option<&mut [f64]>,
    ) -> (f64, [f64; 2]) {
        match self.architecture {
            Architecture::LeNet { input_size } => lenet(
                &self.params,
                LeNetShape::new(input_size),
                input,
                label,
                weight,
                grad,
            ),
            Architecture::Logistic { input_size } => {
                logistic(&self.params, input_size, input, label, weight, grad)
            }
        }
    }
}

impl GraspClassifier for ClassifierModel {
    fn input_size(&self) -> usize {
        self.architecture.input_size()
    }

    fn logits(&self, tensor: &FeatureTensor) -> Result<[f64; 2]> {
        self.check_input(tensor)?;
        let x = self.standardization.apply(tensor);
        Ok(self.example_loss(&x, false, 0.0, None).1)
    }
}

/// Loss `-w log softmax(z)[label]` and `dL/dz`.
fn softmax_loss(z: [f64; 2], label: bool, weight: f64) -> (f64, [f64; 2]) {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    let y = usize::from(label);
    let p = [(z[0] - lse).exp(), (z[1] - lse).exp()];
    let mut dz = p;
    dz[y] -= 1.0;
    (weight * (lse - z[y]), dz.map(|d| d * weight))
}

fn conv_forward(input: &[f64], cin: usize, n: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let m = n - K + 1;
    for (o, plane) in out.chunks_exact_mut(m * m).enumerate() {
        plane.fill(b[o]);
        for c in 0..cin {
            let src = &input[c * n * n..(c + 1) * n * n];
            for ky in 0..K {
                for kx in 0..K {
                    let wv = w[((o * cin + c) * K + ky) * K + kx];
                    for y in 0..m {
                        let row = &src[(y + ky) * n + kx..(y + ky) * n + kx + m];
                        for (d, s) in plane[y * m..(y + 1) * m].iter_mut().zip(row) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    cin: usize,
    n: usize,
    w: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut din: Option<&mut [f64]>,
) {
    let m = n - K + 1;
    for (o, dplane) in dout.chunks_exact(m * m).enumerate() {
        db[o] += dplane.iter().sum::<f64>();
        for c in 0..cin {
            let src = &input[c * n * n..(c + 1) * n * n];
            for ky in 0..K {
                for kx in 0..K {
                    let wi = ((o * cin + c) * K + ky) * K + kx;
                    let mut acc = 0.0;
                    for y in 0..m {
                        let row = &src[(y + ky) * n + kx..(y + ky) * n + kx + m];
                        let drow = &dplane[y * m..(y + 1) * m];
                        acc += drow.iter().zip(row).map(|(d, s)| d * s).sum::<f64>();
                    }
                    dw[wi] += acc;
                    if let Some(din) = din.as_deref_mut() {
                        let wv = w[wi];
                        let dst = &mut din[c * n * n..(c + 1) * n * n];
                        for y in 0..m {
                            let drow = &dplane[y * m..(y + 1) * m];
                            let row = &mut dst[(y + ky) * n + kx..(y + ky) * n + kx + m];
                            for (r, d) in row.iter_mut().zip(drow) {
                                *r += wv * d;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 stride-2 max pool (odd edges dropped); records the flat source
/// index of each maximum, first one on ties.
fn pool_forward(input: &[f64], ch: usize, n: usize) -> (Vec<f64>, Vec<usize>) {
    let m = n / 2;
    let mut out = Vec::with_capacity(ch * m * m);
    let mut arg = Vec::with_capacity(ch * m * m);
    for c in 0..ch {
        let base = c * n * n;
        for y in 0..m {
            for x in 0..m {
                let mut best = base + 2 * y * n + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * n + 2 * x + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

fn relu(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

struct LeNetForward {
    a1: Vec<f64>,
    m1: Vec<f64>,
    arg1: Vec<usize>,
    a2: Vec<f64>,
    flat: Vec<f64>,
    arg2: Vec<usize>,
    h: Vec<f64>,
    z: [f64; 2],
}

impl LeNetForward {
    /// ReLU on/off states and pooling winners; the loss is smooth in the
    /// parameters while this pattern stays fixed.
    fn pattern(&self) -> (Vec<bool>, Vec<usize>) {
        let on = self
            .a1
            .iter()
            .chain(&self.a2)
            .chain(&self.h)
            .map(|v| *v > 0.0)
            .collect();
        let arg = self.arg1.iter().chain(&self.arg2).copied().collect();
        (on, arg)
    }
}

fn lenet_forward(params: &[f64], shape: LeNetShape, x: &[f64]) -> LeNetForward {
    let l = shape.layout();
    let LeNetShape { s, c1, p1, c2, .. } = shape;
    let flat_n = shape.flat();
    let mut a1 = vec![0.0; F1 * c1 * c1];
    conv_forward(
        x,
        CHANNELS,
        s,
        &params[l.w1.clone()],
        &params[l.b1.clone()],
        &mut a1,
    );
    relu(&mut a1);
    let (m1, arg1) = pool_forward(&a1, F1, c1);
    let mut a2 = vec![0.0; F2 * c2 * c2];
    conv_forward(
        &m1,
        F1,
        p1,
        &params[l.w2.clone()],
        &params[l.b2.clone()],
        &mut a2,
    );
    relu(&mut a2);
    let (flat, arg2) = pool_forward(&a2, F2, c2);
    let w3 = &params[l.w3.clone()];
    let mut h: Vec<f64> = params[l.b3.clone()].to_vec();
    for (j, hj) in h.iter_mut().enumerate() {
        let row = &w3[j * flat_n..(j + 1) * flat_n];
        *hj += row.iter().zip(&flat).map(|(w, v)| w * v).sum::<f64>();
    }
    relu(&mut h);
    let w4 = &params[l.w4.clone()];
    let b4 = &params[l.b4.clone()];
    let z = [0, 1].map(|k| {
        b4[k]
            + w4[k * HIDDEN..(k + 1) * HIDDEN]
                .iter()
                .zip(&h)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    });
    LeNetForward {
        a1,
        m1,
        arg1,
        a2,
        flat,
        arg2,
        h,
        z,
    }
}

fn lenet_backward(
    params: &[f64],
    shape: LeNetShape,
    x: &[f64],
    f: &LeNetForward,
    dz: [f64; 2],
    g: &mut [f64],
) {
    let l = shape.layout();
    let LeNetShape { s, p1, .. } = shape;
    let flat_n = shape.flat();
    let w3 = &params[l.w3.clone()];
    let w4 = &params[l.w4.clone()];
    let mut dh = vec![0.0; HIDDEN];
    for k in 0..2 {
        g[l.b4.start + k] += dz[k];
        for j in 0..HIDDEN {
            g[l.w4.start + k * HIDDEN + j] += dz[k] * f.h[j];
            dh[j] += dz[k] * w4[k * HIDDEN + j];
        }
    }
    let mut dflat = vec![0.0; flat_n];
    for j in 0..HIDDEN {
        if f.h[j] <= 0.0 {
            continue;
        }
        let d = dh[j];
        g[l.b3.start + j] += d;
        let gw = &mut g[l.w3.start + j * flat_n..l.w3.start + (j + 1) * flat_n];
        for (gw, v) in gw.iter_mut().zip(&f.flat) {
            *gw += d * v;
        }
        let row = &w3[j * flat_n..(j + 1) * flat_n];
        for (df, w) in dflat.iter_mut().zip(row) {
            *df += d * w;
        }
    }
    let mut da2 = vec![0.0; f.a2.len()];
    for (k, &i) in f.arg2.iter().enumerate() {
        if f.a2[i] > 0.0 {
            da2[i] += dflat[k];
        }
    }
    let mut dm1 = vec![0.0; f.m1.len()];
    {
        let (gw2, rest) = g[l.w2.start..].split_at_mut(l.w2.len());
        conv_backward(
            &f.m1,
            F1,
            p1,
            &params[l.w2.clone()],
            &da2,
            gw2,
            &mut rest[..F2],
            Some(&mut dm1),
        );
    }
    let mut da1 = vec![0.0; f.a1.len()];
    for (k, &i) in f.arg1.iter().enumerate() {
        if f.a1[i] > 0.0 {
            da1[i] += dm1[k];
        }
    }
    let (gw1, rest) = g[l.w1.start..].split_at_mut(l.w1.len());
    conv_backward(
        x,
        CHANNELS,
        s,
        &params[l.w1.clone()],
        &da1,
        gw1,
        &mut rest[..F1],
        None,
    );
}

fn lenet(
    params: &[f64],
    shape: LeNetShape,
    x: &[f64],
    label: bool,
    weight: f64,
    grad: Option<&mut [f64]>,
) -> (f64, [f64; 2]) {
    let f = lenet_forward(params, shape, x);
    let (loss, dz) = softmax_loss(f.z, label, weight);
    if let Some(g) = grad {
        lenet_backward(params, shape, x, &f, dz, g);
    }
    (loss, f.z)
}

/// Per-channel mean then per-channel maximum.
fn pooled_features(x: &[f64], size: usize) -> [f64; POOLED] {
    let n = size * size;
    let mut f = [0.0; POOLED];
    for c in 0..CHANNELS {
        let ch = &x[c * n..(c + 1) * n];
        f[c] = ch.iter().sum::<f64>() / n as f64;
        f[CHANNELS + c] = ch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    f
}

fn logistic(
    params: &[f64],
    size: usize,
    x: &[f64],
    label: bool,
    weight: f64,
    grad: Option<&mut [f64]>,
) -> (f64, [f64; 2]) {
    let f = pooled_features(x, size);
    let z = [0, 1].map(|k| {
        params[2 * POOLED + k]
            + params[k * POOLED..(k + 1) * POOLED]
                .iter()
                .zip(&f)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    });
    let (loss, dz) = softmax_loss(z, label, weight);
    if let Some(g) = grad {
        for k in 0..2 {
            for (i, v) in f.iter().enumerate() {
                g[k * POOLED + i] += dz[k] * v;
            }
            g[2 * POOLED + k] += dz[k];
        }
    }
    (loss, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stable default for both architectures on standardized inputs.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.01,
            batch_size: 16,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "training config",
                "epochs and batch size must be positive",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "training config",
                "learning rate must be positive and finite",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(
                "training config",
                "momentum must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Class-weighted mean loss over the full training set after the epoch.
    pub loss: f64,
    pub accuracy: f64,
}

/// SHA-256 over tensor sizes, value bits and labels, in dataset order.
pub fn dataset_hash(dataset: &[LabeledExample]) -> String {
    let mut h = Sha256::new();
    for ex in dataset {
        h.update((ex.tensor.size as u64).to_le_bytes());
        for v in &ex.tensor.data {
            h.update(v.to_le_bytes());
        }
        h.update([u8::from(ex.label)]);
    }
    hex::encode(h.finalize())
}

fn evaluate(
    model: &ClassifierModel,
    inputs: &[Vec<f64>],
    labels: &[bool],
    cw: [f64; 2],
) -> (f64, f64) {
    let mut loss = 0.0;
    let mut wsum = 0.0;
    let mut correct = 0usize;
    for (x, &y) in inputs.iter().zip(labels) {
        let w = cw[usize::from(y)];
        let (l, z) = model.example_loss(x, y, w, None);
        loss += l;
        wsum += w;
        correct += usize::from(Prediction::from_logits(z).graspable == y);
    }
    (loss / wsum, correct as f64 / inputs.len() as f64)
}

/// Trains a fresh model of `architecture` on `dataset`.
pub fn train(
    architecture: Architecture,
    dataset: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    architecture.validate()?;
    let n = dataset.len();
    let positives = dataset.iter().filter(|e| e.label).count();
    if positives == 0 || positives == n {
        return Err(Error::invalid(
            "training set",
            format!("needs both labels, got {positives} graspable of {n}"),
        ));
    }
    let size = architecture.input_size();
    if let Some(bad) = dataset.iter().find(|e| e.tensor.size != size) {
        return Err(Error::DimensionMismatch {
            expected: vec![CHANNELS, size, size],
            found: bad.tensor.dims().to_vec(),
        });
    }
    let mut model = ClassifierModel::init(architecture, cfg.seed)?;
    let tensors: Vec<&FeatureTensor> = dataset.iter().map(|e| &e.tensor).collect();
    model.standardization = Standardization::fit(&tensors);
    let inputs: Vec<Vec<f64>> = tensors
        .iter()
        .map(|t| model.standardization.apply(t))
        .collect();
    let labels: Vec<bool> = dataset.iter().map(|e| e.label).collect();
    let cw = [
        n as f64 / (2.0 * (n - positives) as f64),
        n as f64 / (2.0 * positives as f64),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5_eed0_f5cd);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut velocity = vec![0.0; model.params.len()];
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let w = cw[usize::from(labels[i])];
                batch_loss += model
                    .example_loss(&inputs[i], labels[i], w, Some(&mut grad))
                    .0;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let inv = 1.0 / batch.len() as f64;
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g * inv;
                *p -= cfg.learning_rate * *v;
            }
        }
        let (loss, accuracy) = evaluate(&model, &inputs, &labels, cw);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        debug!("epoch {epoch}: loss {loss:.6}, accuracy {accuracy:.4}");
        log.push(EpochRecord {
            epoch,
            loss,
            accuracy,
        });
    }
    let last = *log.last().expect("at least one epoch");
    info!(
        "trained {:?} on {n} examples: loss {:.6}, accuracy {:.4}",
        architecture, last.loss, last.accuracy
    );
    model.meta = TrainingMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        dataset_hash: dataset_hash(dataset),
        examples: n,
        final_loss: last.loss,
        final_accuracy: last.accuracy,
    };
    Ok((model, log))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub worst_parameter: usize,
    pub checked: usize,
    /// Parameters passed over because `p ± step` changes a ReLU state or a
    /// pooling winner, where the loss has a kink.
    pub skipped_kinks: usize,
}

impl ClassifierModel {
    /// Unweighted loss and, for piecewise-linear networks, the activation
    /// pattern it was computed under.
    fn loss_with_pattern(&self, x: &[f64], label: bool) -> (f64, Option<(Vec<bool>, Vec<usize>)>) {
        match self.architecture {
            Architecture::LeNet { input_size } => {
                let f = lenet_forward(&self.params, LeNetShape::new(input_size), x);
                (softmax_loss(f.z, label, 1.0).0, Some(f.pattern()))
            }
            Architecture::Logistic { .. } => (self.example_loss(x, label, 1.0, None).0, None),
        }
    }
}

/// Analytic gradient of the unweighted loss against central differences
/// on `count` distinct parameters visited in an order drawn with `seed`.
/// The relative error divides by `max(|analytic|, |numeric|, 1e-7)`.
pub fn gradient_check(
    model: &ClassifierModel,
    tensor: &FeatureTensor,
    label: bool,
    count: usize,
    step: f64,
    seed: u64,
) -> Result<GradientCheck> {
    model.check_input(tensor)?;
    let x = model.standardization.apply(tensor);
    let mut analytic = vec![0.0; model.params.len()];
    model.example_loss(&x, label, 1.0, Some(&mut analytic));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..model.params.len()).collect();
    order.shuffle(&mut rng);
    let mut probe = model.clone();
    let mut out = GradientCheck {
        max_relative_error: 0.0,
        worst_parameter: 0,
        checked: 0,
        skipped_kinks: 0,
    };
    for i in order {
        if out.checked == count {
            break;
        }
        let p = model.params[i];
        probe.params[i] = p + step;
        let (up, up_pattern) = probe.loss_with_pattern(&x, label);
        probe.params[i] = p - step;
        let (down, down_pattern) = probe.loss_with_pattern(&x, label);
        probe.params[i] = p;
        if up_pattern != down_pattern {
            out.skipped_kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
        if !(rel <= out.max_relative_error) {
            out.max_relative_error = rel;
            out.worst_parameter = i;
        }
        out.checked += 1;
    }
    Ok(out)
}

pub const MODEL_MAGIC: &[u8; 4] = b"GLCM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    architecture: Architecture,
    standardization: Standardization,
    meta: TrainingMeta,
}

/// Magic, version, length-prefixed JSON descriptor, parameter count, then
/// little-endian `f64` parameters.
pub fn encode_model(model: &ClassifierModel) -> Vec<u8> {
    let header = serde_json::to_vec(&ModelHeader {
        architecture: model.architecture,
        standardization: model.standardization,
        meta: model.meta.clone(),
    })
    .expect("model header serializes");
    let mut buf = Vec::with_capacity(20 + header.len() + 8 * model.params.len());
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    buf
}

pub fn decode_model(bytes: &[u8]) -> Result<ClassifierModel> {
    let corrupt = |m: &str| Error::CorruptModel(m.to_string());
    if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
        return Err(corrupt("missing GLCM magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < hlen + 8 {
        return Err(corrupt("truncated header"));
    }
    let header: ModelHeader =
        serde_json::from_slice(&body[..hlen]).map_err(|e| Error::CorruptModel(e.to_string()))?;
    header
        .architecture
        .validate()
        .map_err(|e| Error::CorruptModel(e.to_string()))?;
    let count = u64::from_le_bytes(body[hlen..hlen + 8].try_into().unwrap()) as usize;
    let expected = header.architecture.param_count();
    if count != expected {
        return Err(Error::CorruptModel(format!(
            "parameter count {count} does not match architecture ({expected})"
        )));
    }
    let data = &body[hlen + 8..];
    if data.len() != 8 * count {
        return Err(corrupt("parameter payload length mismatch"));
    }
    let params = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ClassifierModel {
        architecture: header.architecture,
        standardization: header.standardization,
        params,
        meta: header.meta,
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &ClassifierModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClassifierModel> {
    let path = path.as_ref();
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// One JSON record per line.
pub fn write_training_log(path: impl AsRef<Path>, log: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in log {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub const DATASET_INDEX: &str = "labels.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub tensor: String,
    pub label: bool,
    #[serde(default)]
    pub source: LabelSource,
}

/// Writes one tensor file per example plus a `labels.json` index.
pub fn save_dataset(dir: impl AsRef<Path>, dataset: &[LabeledExample]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = Vec::with_capacity(dataset.len());
    for (i, ex) in dataset.iter().enumerate() {
        let name = format!("tensor_{i:05}.f32");
        write_tensor(dir.join(&name), &ex.tensor, None)?;
        index.push(DatasetEntry {
            tensor: name,
            label: ex.label,
            source: ex.source,
        });
    }
    let path = dir.join(DATASET_INDEX);
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let dir = dir.as_ref();
    let path = dir.join(DATASET_INDEX);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: Vec<DatasetEntry> = serde_json::from_str(&text).map_err(|e| Error::Document {
        path: path.clone(),
        message: e.to_string(),
    })?;
    index
        .into_iter()
        .map(|e| {
            Ok(LabeledExample {
                tensor: read_tensor(dir.join(&e.tensor))?.0,
                label: e.label,
                source: e.source,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Two classes whose channel means sit `gap` standard deviations apart.
    pub(crate) fn separable(n: usize, size: usize, gap: f64, seed: u64) -> Vec<LabeledExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|i| {
                let label = i % 2 == 0;
                let shift = if label { gap / 2.0 } else { -gap / 2.0 };
                let data = (0..CHANNELS * size * size)
                    .map(|_| 1.0 + shift + noise.sample(&mut rng))
                    .collect();
                LabeledExample {
                    tensor: FeatureTensor::new(size, data).unwrap(),
                    label,
                    source: LabelSource::External,
                }
            })
            .collect()
    }

    #[test]
    fn prediction_tie_is_not_graspable() {
        let p = Prediction::from_logits([0.3, 0.3]);
        assert!(!p.graspable);
        assert_eq!(p.confidence, 0.5);
        let p = Prediction::from_logits([-800.0, 800.0]);
        assert!(p.graspable && p.confidence == 1.0);
    }

    #[test]
    fn lenet_param_count() {
        // 16: conv 12, pool 6, conv 2, pool 1, flat 32.
        let a = Architecture::LeNet { input_size: 16 };
        let expect = 16 * 9 * 25 + 16 + 32 * 16 * 25 + 32 + 128 * 32 + 128 + 256 + 2;
        assert_eq!(a.param_count(), expect);
        assert!(Architecture::LeNet { input_size: 15 }.validate().is_err());
        let m = ClassifierModel::init(a, 1).unwrap();
        assert_eq!(m.params.len(), expect);
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let mut d = separable(10, 4, 5.0, 0);
        for e in &mut d {
            e.label = true;
        }
        let err = train(
            Architecture::Logistic { input_size: 4 },
            &d,
            &TrainConfig::default(),
        );
        assert!(matches!(err, Err(Error::Invalid { .. })));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let d = separable(20, 16, 5.0, 0);
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 3,
            ..Default::default()
        };
        let err = train(Architecture::LeNet { input_size: 16 }, &d, &cfg);
        assert!(matches!(err, Err(Error::Diverged { epoch: 1 })), "{err:?}");
    }

    #[test]
    fn logistic_separates_and_loss_decreases() {
        let d = separable(200, 6, 5.0, 3);
        let (m, log) = train(
            Architecture::Logistic { input_size: 6 },
            &d,
            &TrainConfig::default(),
        )
        .unwrap();
        assert!(m.meta.final_accuracy >= 0.99);
        for w in log.windows(2) {
            assert!(w[1].loss <= w[0].loss + 1e-12, "{log:?}");
        }
    }

    #[test]
    fn dimension_mismatch_on_classify() {
        let m = ClassifierModel::init(Architecture::Logistic { input_size: 5 }, 0).unwrap();
        let t = FeatureTensor::new(4, vec![0.0; CHANNELS * 16]).unwrap();
        assert!(matches!(
            m.classify(&t),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gradient_check_passes_on_fresh_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for arch in [
            Architecture::LeNet { input_size: 20 },
            Architecture::Logistic { input_size: 7 },
        ] {
            let m = ClassifierModel::init(arch, 4).unwrap();
            let s = arch.input_size();
            let t = FeatureTensor::new(
                s,
                (0..CHANNELS * s * s)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap();
            let r = gradient_check(&m, &t, true, 100, 1e-4, 2).unwrap();
            assert_eq!(r.checked, 100.min(arch.param_count()));
            assert!(r.max_relative_error <= 1e-4, "{arch:?}: {r:?}");
        }
    }

    #[test]
    fn zero_input_gives_finite_gradients() {
        let m = ClassifierModel::init(Architecture::LeNet { input_size: 16 }, 0).unwrap();
        let t = FeatureTensor::new(16, vec![0.0; CHANNELS * 256]).unwrap();
        let r = gradient_check(&m, &t, false, 100, 1e-4, 0).unwrap();
        assert!(r.max_relative_error.is_finite());
    }

    #[test]
    fn model_codec_round_trip_and_failures() {
        let d = separable(20, 16, 5.0, 1);
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let (m, _) = train(Architecture::LeNet { input_size: 16 }, &d, &cfg).unwrap();
        let bytes = encode_model(&m);
        assert_eq!(&bytes[..4], b"GLCM");
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 8]),
            Err(Error::CorruptModel(_))
        ));
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(
            decode_model(&v),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
        assert!(matches!(decode_model(b"NOPE"), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d: Vec<LabeledExample> = separable(4, 3, 2.0, 0)
            .into_iter()
            .map(|mut e| {
                e.tensor
                    .data
                    .iter_mut()
                    .for_each(|v| *v = (*v as f32) as f64);
                e
            })
            .collect();
        save_dataset(dir.path(), &d).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
    }
}
