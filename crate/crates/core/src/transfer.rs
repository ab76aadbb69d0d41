//! Initializing a network from another network's convolutional layers.

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::checkpoint::{Checkpoint, Metadata};
use crate::error::{Error, Result};
use crate::nn::{Init, LayerKind, Network, NetworkSpec};
use crate::stream_rng;

/// Gaussian standard deviation for freshly initialized layers.
pub const FRESH_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOptions {
    /// Layers copied from the source, matched by name.
    pub layers: Vec<String>,
    pub fresh_std: f64,
    /// Learning-rate multiplier for the copied layers; fresh layers get 1.
    pub transferred_multiplier: f64,
}

impl TransferOptions {
    /// Transfer every conv layer, i.e. the whole stack up to the last pooling layer.
    pub fn conv_stack(spec: &NetworkSpec, transferred_multiplier: f64) -> Self {
        Self {
            layers: conv_layer_names(spec),
            fresh_std: FRESH_STD,
            transferred_multiplier,
        }
    }
}

pub fn conv_layer_names(spec: &NetworkSpec) -> Vec<String> {
    spec.layers
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
        .map(|l| l.name.clone())
        .collect()
}

/// Copy the named layers from `source`, Gaussian-initialize every other
/// parameterized layer (biases zero) and set learning-rate multipliers.
pub fn transfer_init(
    target: &mut Network<f32>,
    source: &Checkpoint,
    opts: &TransferOptions,
    rng: &mut dyn RngCore,
) -> Result<()> {
    if !(opts.fresh_std > 0.0 && opts.fresh_std.is_finite()) {
        return Err(Error::invalid(format!(
            "fresh layer std {} must be positive",
            opts.fresh_std
        )));
    }
    source.load_layers(target, &opts.layers)?;
    for name in target.param_layer_names() {
        if opts.layers.contains(&name) {
            target.set_lr_multiplier(&name, opts.transferred_multiplier)?;
        } else {
            target.init_layer(
                &name,
                Init::Gaussian {
                    std: opts.fresh_std,
                },
                rng,
            )?;
            target.set_lr_multiplier(&name, 1.0)?;
        }
    }
    Ok(())
}

/// Deterministic pseudo-random stand-in for a pre-trained source network.
pub fn make_pretrained_stub(spec: &NetworkSpec, seed: u64) -> Result<Checkpoint> {
    let mut rng = stream_rng(seed, 0);
    let mut net = Network::<f32>::initialized(spec.clone(), Init::Msra, &mut rng)?;
    let normal = Normal::new(0.0, FRESH_STD).expect("valid std");
    for layer in net.layers_mut() {
        if let Some(p) = layer.params.as_mut() {
            for b in p.biases.data_mut() {
                *b = normal.sample(&mut rng) as f32;
            }
        }
    }
    Ok(Checkpoint::from_network(
        &net,
        Metadata {
            num_classes: spec.num_classes as u32,
            epoch: 0,
            seed,
        },
    ))
}
