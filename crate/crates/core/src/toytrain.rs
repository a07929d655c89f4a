//! A tiny bias-free CNN and a synthetic stripe dataset, enough to run the
//! pruning schedule end to end on a laptop.
//!
//! Topology: `conv3x3 -> ReLU -> conv3x3 -> ReLU -> global mean -> dense`,
//! stride 1 with zero padding 1 on 8x8 inputs. Widths are free so that
//! compacted nets run through the same forward pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::FilterMatrix;
use crate::flops::{GraphNode, GraphSpec};
use crate::model_io::{BundleError, LayerShape, ModelBundle};
use crate::pruner::{
    run_schedule_with, CriterionSelector, FilterSelector, PruneConfig, PruneError, ScheduleOutcome, Trainer,
};
use crate::rng::Lcg;

pub const IMAGE_SIDE: usize = 8;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const IN_CHANNELS: usize = 3;
pub const HIDDEN: usize = 8;
pub const CLASSES: usize = 2;
pub const BATCH_SIZE: usize = 16;
pub const NOISE_SIGMA: f64 = 0.3;
const KERNEL: usize = 3;
const KK: usize = KERNEL * KERNEL;

pub const CONV1: &str = "conv1";
pub const CONV2: &str = "conv2";
pub const FC: &str = "fc";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("CacheMismatch: {0}")]
    CacheMismatch(String),
    #[error("InvalidLearningRate: {0}")]
    InvalidLearningRate(f64),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

impl TrainError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ShapeMismatch(_) => "ShapeMismatch",
            Self::CacheMismatch(_) => "CacheMismatch",
            Self::InvalidLearningRate(_) => "InvalidLearningRate",
            Self::Bundle(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub conv1: FilterMatrix,
    pub conv2: FilterMatrix,
    pub fc: FilterMatrix,
}

impl ToyNet {
    /// He-normal init of the 3-8-8-2 net from the portable generator.
    pub fn init(seed: u64) -> Self {
        Self::init_with_widths(seed, IN_CHANNELS, HIDDEN, HIDDEN, CLASSES)
    }

    pub fn init_with_widths(seed: u64, input: usize, hidden1: usize, hidden2: usize, classes: usize) -> Self {
        let mut rng = Lcg::new(seed);
        let mut he = |rows: usize, cols: usize| {
            let scale = (2.0 / cols as f64).sqrt();
            let values = (0..rows * cols).map(|_| scale * rng.next_normal()).collect();
            FilterMatrix::new(rows, cols, values).expect("finite init")
        };
        Self {
            conv1: he(hidden1, input * KK),
            conv2: he(hidden2, hidden1 * KK),
            fc: he(classes, hidden2),
        }
    }

    /// Hand-built weights that separate noise-free stripes perfectly:
    /// channel 0 responds to horizontal stripes, channel 1 to vertical.
    pub fn stripe_detector() -> Self {
        let mut conv1 = FilterMatrix::zeros(HIDDEN, IN_CHANNELS * KK).unwrap();
        for c in 0..IN_CHANNELS {
            // Second difference along y, then along x.
            for (ky, w) in [(0, 1.0), (1, -2.0), (2, 1.0)] {
                conv1.row_mut(0)[c * KK + ky * KERNEL + 1] = w;
            }
            for (kx, w) in [(0, 1.0), (1, -2.0), (2, 1.0)] {
                conv1.row_mut(1)[c * KK + KERNEL + kx] = w;
            }
        }
        let mut conv2 = FilterMatrix::zeros(HIDDEN, HIDDEN * KK).unwrap();
        for j in 0..HIDDEN {
            conv2.row_mut(j)[j * KK + 4] = 1.0;
        }
        let mut fc = FilterMatrix::zeros(CLASSES, HIDDEN).unwrap();
        fc.row_mut(0)[..2].copy_from_slice(&[1.0, -1.0]);
        fc.row_mut(1)[..2].copy_from_slice(&[-1.0, 1.0]);
        Self { conv1, conv2, fc }
    }

    pub fn input_channels(&self) -> usize {
        self.conv1.cols() / KK
    }

    fn widths(&self) -> [usize; 4] {
        [
            self.input_channels(),
            self.conv1.rows(),
            self.conv2.rows(),
            self.fc.rows(),
        ]
    }

    fn check(&self) -> Result<(), TrainError> {
        let ok = self.conv1.cols().is_multiple_of(KK)
            && self.conv2.cols() == self.conv1.rows() * KK
            && self.fc.cols() == self.conv2.rows();
        if ok {
            Ok(())
        } else {
            Err(TrainError::ShapeMismatch(format!(
                "inconsistent widths conv1 {}x{}, conv2 {}x{}, fc {}x{}",
                self.conv1.rows(),
                self.conv1.cols(),
                self.conv2.rows(),
                self.conv2.cols(),
                self.fc.rows(),
                self.fc.cols()
            )))
        }
    }

    pub fn to_bundle(&self) -> Result<ModelBundle, BundleError> {
        let [input, h1, h2, classes] = self.widths();
        ModelBundle::from_layers(vec![
            (LayerShape::conv2d(CONV1, input, h1, KERNEL), self.conv1.clone()),
            (LayerShape::conv2d(CONV2, h1, h2, KERNEL), self.conv2.clone()),
            (LayerShape::dense(FC, h2, classes), self.fc.clone()),
        ])
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self, TrainError> {
        let get = |name: &str| {
            bundle
                .tensor(name)
                .cloned()
                .ok_or_else(|| TrainError::ShapeMismatch(format!("bundle has no layer `{name}`")))
        };
        let net = Self {
            conv1: get(CONV1)?,
            conv2: get(CONV2)?,
            fc: get(FC)?,
        };
        net.check()?;
        Ok(net)
    }

    /// Copies this net's weights into an existing bundle of the same shape.
    pub fn write_into(&self, bundle: &mut ModelBundle) -> Result<(), TrainError> {
        for (name, tensor) in [(CONV1, &self.conv1), (CONV2, &self.conv2), (FC, &self.fc)] {
            let i = bundle
                .layer_index(name)
                .ok_or_else(|| TrainError::ShapeMismatch(format!("bundle has no layer `{name}`")))?;
            let slot = bundle.tensor_at_mut(i);
            if slot.rows() != tensor.rows() || slot.cols() != tensor.cols() {
                return Err(TrainError::ShapeMismatch(format!("layer `{name}` changed shape")));
            }
            slot.values_mut().copy_from_slice(tensor.values());
        }
        Ok(())
    }
}

/// The sequential graph of a toy net, for FLOPs and compact extraction.
pub fn toy_graph(net: &ToyNet) -> GraphSpec {
    let [input, h1, h2, classes] = net.widths();
    GraphSpec::new(vec![
        GraphNode::conv2d(CONV1, None, input, h1, KERNEL, IMAGE_SIDE),
        GraphNode::conv2d(CONV2, Some(CONV1), h1, h2, KERNEL, IMAGE_SIDE),
        GraphNode::dense(FC, Some(CONV2), h2, classes),
    ])
    .expect("toy graph is well formed")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// `n x 3 x 8 x 8`, row-major.
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let size = IN_CHANNELS * PIXELS;
        &self.images[i * size..(i + 1) * size]
    }

    /// Images and labels for the given sample indices, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut images = Vec::with_capacity(indices.len() * IN_CHANNELS * PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        (images, labels)
    }

    pub fn class_fraction(&self, class: usize) -> f64 {
        self.labels.iter().filter(|&&l| l == class).count() as f64 / self.len() as f64
    }
}

/// Stripe images: sample `i` has label `i % 2`; class 0 alternates +1/-1
/// along rows (horizontal stripes), class 1 along columns. The stripe phase
/// is random per sample and every pixel gets `N(0, 0.3^2)` noise.
pub fn gen_dataset(seed: u64, n: usize) -> SyntheticDataset {
    gen_dataset_with_noise(seed, n, NOISE_SIGMA)
}

pub fn gen_dataset_with_noise(seed: u64, n: usize, sigma: f64) -> SyntheticDataset {
    let mut rng = Lcg::new(seed);
    let mut images = Vec::with_capacity(n * IN_CHANNELS * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let phase = (rng.next_u64() >> 63) as usize;
        for _c in 0..IN_CHANNELS {
            for y in 0..IMAGE_SIDE {
                for x in 0..IMAGE_SIDE {
                    let coord = if label == 0 { y } else { x };
                    let base = if (coord + phase).is_multiple_of(2) { 1.0 } else { -1.0 };
                    images.push(base + sigma * rng.next_normal());
                }
            }
        }
        labels.push(label);
    }
    SyntheticDataset { images, labels, seed }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    widths: [usize; 4],
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    pooled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv1: Vec<f64>,
    pub conv2: Vec<f64>,
    pub fc: Vec<f64>,
}

/// 3x3 same-padded convolution of one image, `[in, 8, 8] -> [out, 8, 8]`.
fn conv3x3(weights: &FilterMatrix, input: &[f64], out: &mut [f64]) {
    let in_ch = weights.cols() / KK;
    for (o, filter) in weights.iter_rows().enumerate() {
        let plane = &mut out[o * PIXELS..(o + 1) * PIXELS];
        plane.fill(0.0);
        for c in 0..in_ch {
            let src = &input[c * PIXELS..(c + 1) * PIXELS];
            let k = &filter[c * KK..(c + 1) * KK];
            for y in 0..IMAGE_SIDE {
                for ky in 0..KERNEL {
                    let sy = y + ky;
                    if sy == 0 || sy > IMAGE_SIDE {
                        continue;
                    }
                    let row = &src[(sy - 1) * IMAGE_SIDE..sy * IMAGE_SIDE];
                    for x in 0..IMAGE_SIDE {
                        let mut acc = 0.0;
                        for kx in 0..KERNEL {
                            let sx = x + kx;
                            if sx == 0 || sx > IMAGE_SIDE {
                                continue;
                            }
                            acc += k[ky * KERNEL + kx] * row[sx - 1];
                        }
                        plane[y * IMAGE_SIDE + x] += acc;
                    }
                }
            }
        }
    }
}

/// Accumulates the weight gradient and (optionally) the input gradient of a
/// same-padded 3x3 convolution for one image.
fn conv3x3_backward(
    weights: &FilterMatrix,
    input: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let in_ch = weights.cols() / KK;
    let cols = weights.cols();
    for (o, filter) in weights.iter_rows().enumerate() {
        let g = &grad_out[o * PIXELS..(o + 1) * PIXELS];
        let gw = &mut grad_w[o * cols..(o + 1) * cols];
        for c in 0..in_ch {
            let src = &input[c * PIXELS..(c + 1) * PIXELS];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let w = filter[c * KK + ky * KERNEL + kx];
                    let mut acc = 0.0;
                    for y in 0..IMAGE_SIDE {
                        let sy = y + ky;
                        if sy == 0 || sy > IMAGE_SIDE {
                            continue;
                        }
                        for x in 0..IMAGE_SIDE {
                            let sx = x + kx;
                            if sx == 0 || sx > IMAGE_SIDE {
                                continue;
                            }
                            let gy = g[y * IMAGE_SIDE + x];
                            let s = (sy - 1) * IMAGE_SIDE + sx - 1;
                            acc += gy * src[s];
                            if let Some(gi) = grad_in.as_deref_mut() {
                                gi[c * PIXELS + s] += gy * w;
                            }
                        }
                    }
                    gw[c * KK + ky * KERNEL + kx] += acc;
                }
            }
        }
    }
}

/// Logits for a batch of `n x C x 8 x 8` images, `C` the net's input width.
pub fn forward(net: &ToyNet, images: &[f64]) -> Result<(Vec<f64>, ForwardCache), TrainError> {
    net.check()?;
    let widths = net.widths();
    let [input, h1, h2, classes] = widths;
    let per_image = input * PIXELS;
    if images.is_empty() || !images.len().is_multiple_of(per_image) {
        return Err(TrainError::ShapeMismatch(format!(
            "expected a multiple of {per_image} values ({input}x8x8 images), got {}",
            images.len()
        )));
    }
    let batch = images.len() / per_image;
    let mut pre1 = vec![0.0; batch * h1 * PIXELS];
    let mut act1 = vec![0.0; batch * h1 * PIXELS];
    let mut pre2 = vec![0.0; batch * h2 * PIXELS];
    let mut pooled = vec![0.0; batch * h2];
    let mut logits = vec![0.0; batch * classes];
    let mut act2 = vec![0.0; h2 * PIXELS];
    for b in 0..batch {
        let x = &images[b * per_image..(b + 1) * per_image];
        let z1 = &mut pre1[b * h1 * PIXELS..(b + 1) * h1 * PIXELS];
        conv3x3(&net.conv1, x, z1);
        let a1 = &mut act1[b * h1 * PIXELS..(b + 1) * h1 * PIXELS];
        for (a, &z) in a1.iter_mut().zip(z1.iter()) {
            *a = z.max(0.0);
        }
        let z2 = &mut pre2[b * h2 * PIXELS..(b + 1) * h2 * PIXELS];
        conv3x3(&net.conv2, a1, z2);
        for (a, &z) in act2.iter_mut().zip(z2.iter()) {
            *a = z.max(0.0);
        }
        let p = &mut pooled[b * h2..(b + 1) * h2];
        for (c, v) in p.iter_mut().enumerate() {
            *v = act2[c * PIXELS..(c + 1) * PIXELS].iter().sum::<f64>() / PIXELS as f64;
        }
        for (k, row) in net.fc.iter_rows().enumerate() {
            logits[b * classes + k] = row.iter().zip(p.iter()).map(|(w, v)| w * v).sum();
        }
    }
    Ok((
        logits,
        ForwardCache {
            batch,
            widths,
            input: images.to_vec(),
            pre1,
            act1,
            pre2,
            pooled,
        },
    ))
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean softmax cross-entropy of a batch of logits.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> f64 {
    let total: f64 = logits
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    total / labels.len() as f64
}

/// Gradients of mean softmax cross-entropy with respect to every weight.
pub fn backward(net: &ToyNet, cache: &ForwardCache, logits: &[f64], labels: &[usize]) -> Result<Gradients, TrainError> {
    if cache.widths != net.widths() {
        return Err(TrainError::CacheMismatch(format!(
            "cache was built for widths {:?}, net has {:?}",
            cache.widths,
            net.widths()
        )));
    }
    let [input, h1, h2, classes] = cache.widths;
    if labels.len() != cache.batch || logits.len() != cache.batch * classes {
        return Err(TrainError::CacheMismatch(format!(
            "cache holds {} samples, got {} labels and {} logits",
            cache.batch,
            labels.len(),
            logits.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(TrainError::ShapeMismatch(format!("label {bad} out of range")));
    }
    let inv_batch = 1.0 / cache.batch as f64;
    let mut grads = Gradients {
        conv1: vec![0.0; net.conv1.values().len()],
        conv2: vec![0.0; net.conv2.values().len()],
        fc: vec![0.0; net.fc.values().len()],
    };
    let mut d_pre2 = vec![0.0; h2 * PIXELS];
    let mut d_act1 = vec![0.0; h1 * PIXELS];
    for b in 0..cache.batch {
        let mut d_logits = softmax_row(&logits[b * classes..(b + 1) * classes]);
        d_logits[labels[b]] -= 1.0;
        d_logits.iter_mut().for_each(|v| *v *= inv_batch);

        let pooled = &cache.pooled[b * h2..(b + 1) * h2];
        let mut d_pooled = vec![0.0; h2];
        for (k, row) in net.fc.iter_rows().enumerate() {
            for c in 0..h2 {
                grads.fc[k * h2 + c] += d_logits[k] * pooled[c];
                d_pooled[c] += d_logits[k] * row[c];
            }
        }
        let pre2 = &cache.pre2[b * h2 * PIXELS..(b + 1) * h2 * PIXELS];
        for c in 0..h2 {
            let g = d_pooled[c] / PIXELS as f64;
            for p in 0..PIXELS {
                let idx = c * PIXELS + p;
                d_pre2[idx] = if pre2[idx] > 0.0 { g } else { 0.0 };
            }
        }
        let act1 = &cache.act1[b * h1 * PIXELS..(b + 1) * h1 * PIXELS];
        d_act1.fill(0.0);
        conv3x3_backward(&net.conv2, act1, &d_pre2, &mut grads.conv2, Some(&mut d_act1));
        let pre1 = &cache.pre1[b * h1 * PIXELS..(b + 1) * h1 * PIXELS];
        for (d, &z) in d_act1.iter_mut().zip(pre1) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        let x = &cache.input[b * input * PIXELS..(b + 1) * input * PIXELS];
        conv3x3_backward(&net.conv1, x, &d_act1, &mut grads.conv1, None);
    }
    Ok(grads)
}

/// Argmax accuracy; ties go to class 0.
pub fn evaluate(net: &ToyNet, data: &SyntheticDataset) -> Result<f64, TrainError> {
    let (logits, _) = forward(net, &data.images)?;
    Ok(accuracy(&logits, &data.labels, net.fc.rows()))
}

pub fn accuracy(logits: &[f64], labels: &[usize], classes: usize) -> f64 {
    let correct = logits
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    correct as f64 / labels.len() as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn evaluate_loss(net: &ToyNet, data: &SyntheticDataset) -> Result<f64, TrainError> {
    let (logits, _) = forward(net, &data.images)?;
    Ok(cross_entropy(&logits, &data.labels, net.fc.rows()))
}

/// Shuffle seed of an epoch: `seed XOR (epoch * 0x9E3779B97F4A7C15)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    Lcg::new(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).shuffle(&mut order);
    order
}

/// One pass of plain mini-batch SGD (batch 16). Returns the mean per-sample
/// loss seen during the pass.
pub fn train_epoch(
    net: &mut ToyNet,
    data: &SyntheticDataset,
    lr: f64,
    seed: u64,
    epoch: usize,
) -> Result<f64, TrainError> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(TrainError::InvalidLearningRate(lr));
    }
    let classes = net.fc.rows();
    let mut loss_sum = 0.0;
    for chunk in epoch_order(seed, epoch, data.len()).chunks(BATCH_SIZE) {
        let (images, labels) = data.gather(chunk);
        let (logits, cache) = forward(net, &images)?;
        loss_sum += cross_entropy(&logits, &labels, classes) * labels.len() as f64;
        if lr == 0.0 {
            continue;
        }
        let grads = backward(net, &cache, &logits, &labels)?;
        for (w, g) in [
            (&mut net.conv1, &grads.conv1),
            (&mut net.conv2, &grads.conv2),
            (&mut net.fc, &grads.fc),
        ] {
            for (wi, gi) in w.values_mut().iter_mut().zip(g) {
                *wi -= lr * gi;
            }
        }
    }
    Ok(loss_sum / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainReport {
    pub fn final_eval_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.eval_accuracy)
    }
}

/// Reference settings of the end-to-end toy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub n_train: usize,
    pub n_eval: usize,
}

impl Default for ToyRunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            epochs: 30,
            lr: DEFAULT_LR,
            n_train: 512,
            n_eval: 256,
        }
    }
}

pub const DEFAULT_LR: f64 = 0.05;

/// The evaluation split uses a seed far from any training seed.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ 0xE7A1_0000_0000_0000
}

/// Adapts the toy net to the schedule's trainer hook and records metrics
/// after every epoch (post-pruning).
pub struct ToyTrainer {
    pub train: SyntheticDataset,
    pub eval: SyntheticDataset,
    pub lr: f64,
    pub seed: u64,
    pub report: TrainReport,
    last_loss: f64,
}

impl ToyTrainer {
    pub fn new(cfg: &ToyRunConfig) -> Self {
        Self {
            train: gen_dataset(cfg.seed, cfg.n_train),
            eval: gen_dataset(eval_seed(cfg.seed), cfg.n_eval),
            lr: cfg.lr,
            seed: cfg.seed,
            report: TrainReport::default(),
            last_loss: 0.0,
        }
    }
}

impl Trainer for ToyTrainer {
    fn train_epoch(&mut self, bundle: &mut ModelBundle, epoch: usize) -> Result<f64, String> {
        let mut net = ToyNet::from_bundle(bundle).map_err(|e| e.to_string())?;
        let loss = train_epoch(&mut net, &self.train, self.lr, self.seed, epoch).map_err(|e| e.to_string())?;
        if !loss.is_finite() || !net.conv1.is_finite() || !net.conv2.is_finite() || !net.fc.is_finite() {
            return Err(format!("training diverged (loss {loss})"));
        }
        net.write_into(bundle).map_err(|e| e.to_string())?;
        self.last_loss = loss;
        Ok(loss)
    }

    fn end_epoch(&mut self, bundle: &ModelBundle, epoch: usize) -> Result<(), String> {
        let net = ToyNet::from_bundle(bundle).map_err(|e| e.to_string())?;
        self.report.epochs.push(EpochMetrics {
            epoch,
            loss: self.last_loss,
            train_accuracy: evaluate(&net, &self.train).map_err(|e| e.to_string())?,
            eval_accuracy: evaluate(&net, &self.eval).map_err(|e| e.to_string())?,
        });
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub outcome: ScheduleOutcome,
    pub report: TrainReport,
}

/// Trains a freshly initialised toy net for `cfg.epochs` epochs under the
/// pruning schedule `prune` (its `epoch_max` is overridden). Rate 0 gives
/// the unpruned baseline.
pub fn run_toy(cfg: &ToyRunConfig, prune: &PruneConfig) -> Result<ToyRun, PruneError> {
    run_toy_with(cfg, prune, &mut CriterionSelector(prune))
}

pub fn run_toy_with(
    cfg: &ToyRunConfig,
    prune: &PruneConfig,
    selector: &mut dyn FilterSelector,
) -> Result<ToyRun, PruneError> {
    let prune = PruneConfig {
        epoch_max: cfg.epochs,
        ..prune.clone()
    };
    let bundle = ToyNet::init(cfg.seed).to_bundle()?;
    let mut trainer = ToyTrainer::new(cfg);
    let outcome = run_schedule_with(bundle, &prune, &mut trainer, selector)?;
    Ok(ToyRun {
        outcome,
        report: trainer.report,
    })
}
