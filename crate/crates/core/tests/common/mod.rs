//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng as _, RngCore};

use cytonet::data::synth::{generate, SynthClasses, SynthConfig};
use cytonet::nn::activation::{
    apply_mask, dropout_backward, dropout_mask, relu_backward, relu_forward,
};
use cytonet::nn::conv::{conv_backward, conv_forward};
use cytonet::nn::fc::{fc_backward, fc_forward};
use cytonet::nn::loss::softmax_cross_entropy;
use cytonet::nn::lrn::{lrn_backward, lrn_forward};
use cytonet::nn::pool::{maxpool_backward, maxpool_forward};
use cytonet::nn::{Init, LayerKind, LayerSpec, LrnParams, Network, NetworkSpec};
use cytonet::pipeline::PipelineConfig;
use cytonet::tensor::{finite_difference_gradient, max_relative_error};
use cytonet::Tensor;

pub const STEP: f64 = 1e-5;
/// Relative errors are measured against `max(|a|, |b|, FLOOR)`.
pub const FLOOR: f64 = 1e-6;

pub fn normal_tensor(dims: &[usize], rng: &mut dyn RngCore) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.random::<f64>() * 2.0 - 1.0).unwrap()
}

/// Values whose magnitude is at least `gap`, so kinks stay out of reach of the FD step.
fn away_from_zero(dims: &[usize], gap: f64, rng: &mut dyn RngCore) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| {
        let v = gap + rng.random::<f64>();
        if rng.random::<bool>() {
            v
        } else {
            -v
        }
    })
    .unwrap()
}

/// Distinct values in random order, spaced well beyond the FD step.
fn distinct(dims: &[usize], rng: &mut dyn RngCore) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_vec(dims, vals).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn rel(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.dims(), numeric.dims());
    max_relative_error(analytic.data(), numeric.data(), FLOOR)
}

fn fd(f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>) -> Tensor<f64> {
    finite_difference_gradient(f, x, STEP).unwrap()
}

/// Input, weight and bias gradients of a random convolution.
pub fn check_conv(rng: &mut dyn RngCore) -> f64 {
    let n = rng.random_range(1..=2);
    let cin = rng.random_range(1..=3);
    let cout = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..=1);
    let hw = k + rng.random_range(0..=3);
    let x = normal_tensor(&[n, cin, hw, hw], rng);
    let w = normal_tensor(&[cout, cin, k, k], rng);
    let b = normal_tensor(&[cout], rng);
    let out = conv_forward(&x, &w, &b, stride, pad).unwrap();
    let g = normal_tensor(out.dims(), rng);
    let grads = conv_backward(&g, &x, &w, &b, stride, pad).unwrap();
    let ex = rel(
        &grads.input,
        &fd(
            |p| dot(&conv_forward(p, &w, &b, stride, pad).unwrap(), &g),
            &x,
        ),
    );
    let ew = rel(
        &grads.weights,
        &fd(
            |p| dot(&conv_forward(&x, p, &b, stride, pad).unwrap(), &g),
            &w,
        ),
    );
    let eb = rel(
        &grads.biases,
        &fd(
            |p| dot(&conv_forward(&x, &w, p, stride, pad).unwrap(), &g),
            &b,
        ),
    );
    ex.max(ew).max(eb)
}

pub fn check_maxpool(rng: &mut dyn RngCore) -> f64 {
    let size = rng.random_range(2..=3);
    let stride = rng.random_range(1..=2);
    let hw = size + rng.random_range(0..=3);
    let x = distinct(
        &[rng.random_range(1..=2), rng.random_range(1..=3), hw, hw],
        rng,
    );
    let (y, argmax) = maxpool_forward(&x, size, stride).unwrap();
    let g = normal_tensor(y.dims(), rng);
    let analytic = maxpool_backward(&g, &argmax, x.dims()).unwrap();
    rel(
        &analytic,
        &fd(
            |p| dot(&maxpool_forward(p, size, stride).unwrap().0, &g),
            &x,
        ),
    )
}

pub fn check_relu(rng: &mut dyn RngCore) -> f64 {
    let x = away_from_zero(&[2, rng.random_range(1..=4), 3, 3], 1e-3, rng);
    let g = normal_tensor(x.dims(), rng);
    let analytic = relu_backward(&g, &x).unwrap();
    rel(&analytic, &fd(|p| dot(&relu_forward(p), &g), &x))
}

/// LRN with a large `alpha` so the cross-channel term is not negligible.
pub fn check_lrn(rng: &mut dyn RngCore) -> f64 {
    let p = LrnParams {
        k: 1.0 + rng.random::<f64>(),
        n: [1, 3, 5][rng.random_range(0..3)],
        alpha: 0.5 + rng.random::<f64>(),
        beta: 0.75,
    };
    let x = normal_tensor(
        &[rng.random_range(1..=2), rng.random_range(2..=7), 2, 3],
        rng,
    );
    let (y, scale) = lrn_forward(&x, &p).unwrap();
    let g = normal_tensor(y.dims(), rng);
    let analytic = lrn_backward(&g, &x, &scale, &p).unwrap();
    rel(
        &analytic,
        &fd(|q| dot(&lrn_forward(q, &p).unwrap().0, &g), &x),
    )
}

pub fn check_fc(rng: &mut dyn RngCore) -> f64 {
    let n = rng.random_range(1..=3);
    let dims = [n, rng.random_range(1..=3), 2, 2];
    let d: usize = dims[1..].iter().product();
    let o = rng.random_range(1..=5);
    let x = normal_tensor(&dims, rng);
    let w = normal_tensor(&[o, d], rng);
    let b = normal_tensor(&[o], rng);
    let g = normal_tensor(&[n, o], rng);
    let grads = fc_backward(&g, &x, &w, &b).unwrap();
    let ex = rel(
        &grads.input,
        &fd(|p| dot(&fc_forward(p, &w, &b).unwrap(), &g), &x),
    );
    let ew = rel(
        &grads.weights,
        &fd(|p| dot(&fc_forward(&x, p, &b).unwrap(), &g), &w),
    );
    let eb = rel(
        &grads.biases,
        &fd(|p| dot(&fc_forward(&x, &w, p).unwrap(), &g), &b),
    );
    ex.max(ew).max(eb)
}

pub fn check_dropout(rng: &mut dyn RngCore) -> f64 {
    let x = normal_tensor(&[2, 3, 2, 2], rng);
    let mask: Vec<f64> = dropout_mask(x.len(), 0.5, rng).unwrap();
    let g = normal_tensor(x.dims(), rng);
    let analytic = dropout_backward(&g, Some(&mask)).unwrap();
    rel(
        &analytic,
        &fd(|p| dot(&apply_mask(p, &mask).unwrap(), &g), &x),
    )
}

pub fn check_softmax_ce(rng: &mut dyn RngCore) -> f64 {
    let n = rng.random_range(1..=4);
    let k = rng.random_range(2..=7);
    let logits = normal_tensor(&[n, k], rng).scale(3.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let analytic = softmax_cross_entropy(&logits, &labels).unwrap().grad;
    rel(
        &analytic,
        &fd(|p| softmax_cross_entropy(p, &labels).unwrap().loss, &logits),
    )
}

/// A small network exercising every layer kind end to end.
pub fn small_network_spec() -> NetworkSpec {
    use LayerKind::*;
    let layers = vec![
        LayerSpec::new(
            "conv1",
            Conv {
                filter: 3,
                channels: 4,
                stride: 1,
                padding: 1,
            },
        ),
        LayerSpec::new("relu1", Relu),
        LayerSpec::new("pool1", MaxPool { size: 2, stride: 2 }),
        LayerSpec::new(
            "norm1",
            Lrn(LrnParams {
                k: 1.0,
                n: 3,
                alpha: 0.5,
                beta: 0.75,
            }),
        ),
        LayerSpec::new(
            "conv2",
            Conv {
                filter: 3,
                channels: 3,
                stride: 2,
                padding: 1,
            },
        ),
        LayerSpec::new("relu2", Relu),
        LayerSpec::new("fc6", Fc { width: 6 }),
        LayerSpec::new("relu6", Relu),
        LayerSpec::new("drop6", Dropout { ratio: 0.5 }),
        LayerSpec::new("fc8", Fc { width: 3 }),
        LayerSpec::new("prob", Softmax),
    ];
    NetworkSpec {
        input_shape: [2, 6, 6],
        num_classes: 3,
        layers,
    }
}

/// Whole-network parameter and input gradients against finite differences of the loss.
pub fn check_network(rng: &mut dyn RngCore) -> f64 {
    let net: Network<f64> =
        Network::initialized(small_network_spec(), Init::Gaussian { std: 0.5 }, rng).unwrap();
    let x = distinct(&[2, 2, 6, 6], rng);
    let labels = vec![0usize, 2];
    let (_, cache) = net.forward(&x, cytonet::nn::Mode::Train, rng).unwrap();
    let masks = cache.dropout_masks();
    let loss_of = |n: &Network<f64>, input: &Tensor<f64>| {
        let (logits, _) = n.forward_with_masks(input, &masks).unwrap();
        softmax_cross_entropy(&logits, &labels).unwrap().loss
    };
    let (logits, cache) = net.forward_with_masks(&x, &masks).unwrap();
    let out = softmax_cross_entropy(&logits, &labels).unwrap();
    let grads = net.backward(&out.grad, cache).unwrap();
    let mut worst = rel(&grads.input, &fd(|p| loss_of(&net, p), &x));
    for (idx, layer) in net.layers().iter().enumerate() {
        let Some(params) = &layer.params else {
            continue;
        };
        let g = grads.params[idx].as_ref().unwrap();
        let numeric_w = fd(
            |p| {
                let mut probe = net.clone();
                probe.layers_mut()[idx].params.as_mut().unwrap().weights = p.clone();
                loss_of(&probe, &x)
            },
            &params.weights,
        );
        let numeric_b = fd(
            |p| {
                let mut probe = net.clone();
                probe.layers_mut()[idx].params.as_mut().unwrap().biases = p.clone();
                loss_of(&probe, &x)
            },
            &params.biases,
        );
        worst = worst
            .max(rel(&g.weights, &numeric_w))
            .max(rel(&g.biases, &numeric_b));
    }
    worst
}

/// Writes a synthetic dataset and returns a desk config pointing at it.
pub fn synth_config(dir: &Path, cells: usize, seed: u64, classes: SynthClasses) -> PipelineConfig {
    let mut cfg = PipelineConfig::preset("desk").unwrap();
    let synth = SynthConfig {
        cells,
        seed,
        image_size: cfg.synth.image_size,
        classes,
    };
    cfg.manifest = generate(dir, &synth).unwrap();
    if classes == SynthClasses::FourClass {
        cfg.num_classes = 7;
    }
    cfg.seed = seed;
    cfg
}
