//! Loop-level reference versions of the toy network's forward pass.

use fpgm_core::toytrain::*;
use fpgm_core::FilterMatrix;

/// Plain nested-loop convolution over an explicitly zero-padded 10x10 copy.
pub fn naive_conv(weights: &FilterMatrix, input: &[f64], in_ch: usize) -> Vec<f64> {
    let side = IMAGE_SIDE;
    let padded_side = side + 2;
    let mut padded = vec![0.0; in_ch * padded_side * padded_side];
    for c in 0..in_ch {
        for y in 0..side {
            for x in 0..side {
                padded[c * padded_side * padded_side + (y + 1) * padded_side + (x + 1)] =
                    input[c * side * side + y * side + x];
            }
        }
    }
    let out_ch = weights.rows();
    let mut out = vec![0.0; out_ch * side * side];
    for o in 0..out_ch {
        for y in 0..side {
            for x in 0..side {
                let mut acc = 0.0;
                for c in 0..in_ch {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            acc += weights.row(o)[c * 9 + ky * 3 + kx]
                                * padded[c * padded_side * padded_side + (y + ky) * padded_side + (x + kx)];
                        }
                    }
                }
                out[o * side * side + y * side + x] = acc;
            }
        }
    }
    out
}

pub fn naive_logits(net: &ToyNet, image: &[f64]) -> Vec<f64> {
    let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
    let a1 = relu(naive_conv(&net.conv1, image, net.input_channels()));
    let a2 = relu(naive_conv(&net.conv2, &a1, net.conv1.rows()));
    let pooled: Vec<f64> = a2
        .chunks(PIXELS)
        .map(|p| p.iter().sum::<f64>() / PIXELS as f64)
        .collect();
    (0..net.fc.rows())
        .map(|k| net.fc.row(k).iter().zip(&pooled).map(|(w, p)| w * p).sum())
        .collect()
}

pub fn loss_of(net: &ToyNet, images: &[f64], labels: &[usize]) -> f64 {
    let (logits, _) = forward(net, images).unwrap();
    cross_entropy(&logits, labels, net.fc.rows())
}

/// Sign pattern of both ReLU inputs over a batch, from the naive oracle.
pub fn relu_pattern(net: &ToyNet, data: &SyntheticDataset) -> Vec<bool> {
    let mut signs = Vec::new();
    for i in 0..data.labels.len() {
        let z1 = naive_conv(&net.conv1, data.image(i), net.input_channels());
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let z2 = naive_conv(&net.conv2, &a1, net.conv1.rows());
        signs.extend(z1.iter().chain(&z2).map(|&v| v > 0.0));
    }
    signs
}

/// Central differences on every weight. Coordinates whose +-h perturbation
/// moves a ReLU input across zero are skipped, since the loss is not
/// differentiable there. Returns the worst relative error and the skip count.
pub fn finite_difference_error(seed: u64) -> (f64, usize) {
    let net = ToyNet::init(seed);
    let data = gen_dataset(seed + 100, 4);
    let (logits, cache) = forward(&net, &data.images).unwrap();
    let grads = backward(&net, &cache, &logits, &data.labels).unwrap();
    let h = 1e-5;
    let (mut worst, mut skipped) = (0.0f64, 0usize);
    for (which, analytic) in [(0, &grads.conv1), (1, &grads.conv2), (2, &grads.fc)] {
        for i in 0..analytic.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            for (n, delta) in [(&mut plus, h), (&mut minus, -h)] {
                let w = match which {
                    0 => n.conv1.values_mut(),
                    1 => n.conv2.values_mut(),
                    _ => n.fc.values_mut(),
                };
                w[i] += delta;
            }
            if which < 2 && relu_pattern(&plus, &data) != relu_pattern(&minus, &data) {
                skipped += 1;
                continue;
            }
            let numeric =
                (loss_of(&plus, &data.images, &data.labels) - loss_of(&minus, &data.images, &data.labels)) / (2.0 * h);
            let a = analytic[i];
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-7));
        }
    }
    (worst, skipped)
}
