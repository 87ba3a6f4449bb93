#![allow(dead_code)]

use fusekit::net::{Activation, Batch, Input, LayerSpec, NetworkSpec, Target};
use fusekit::rng;
use fusekit::Tensor;

pub fn random_features(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed);
    Tensor::matrix(rows, cols, rng::normal_vec(&mut r, rows * cols, 1.0)).unwrap()
}

pub fn regression_batch(rows: usize, input: usize, output: usize, seed: u64) -> Batch {
    Batch {
        input: Input::features(random_features(rows, input, seed)),
        target: Target::Regression(random_features(rows, output, seed ^ 0xABCD)),
    }
}

/// Feature network with a dense stem, optional residual norm/attention
/// block and a dense head. Widths are drawn from `seed`.
pub fn random_feature_net(seed: u64, with_norm: bool, with_attention: bool) -> NetworkSpec {
    let pick = |salt: u64, lo: usize, hi: usize| lo + (rng::derive(seed, salt) as usize) % (hi - lo + 1);
    let input = 3;
    let heads = pick(1, 1, 2);
    let head_dim = 2;
    let width = pick(3, 2, 5);
    let mut layers = vec![LayerSpec::dense(input, width, Activation::Tanh)];
    let mut links = Vec::new();
    if with_norm {
        layers.push(LayerSpec::norm(width));
    }
    if with_attention {
        layers.push(LayerSpec::attention(width, heads, head_dim, false));
        links.push((layers.len() - 1, layers.len()));
    }
    layers.push(LayerSpec::dense(width, pick(4, 2, 4), Activation::Gelu));
    layers.push(LayerSpec::dense(layers.last().unwrap().out_width(), 2, Activation::Identity));
    NetworkSpec::new(layers).with_residuals(links)
}

pub fn smooth_mlp(dims: &[usize]) -> NetworkSpec {
    NetworkSpec::mlp(dims, Activation::Tanh)
}
