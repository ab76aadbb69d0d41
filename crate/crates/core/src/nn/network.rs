use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::activation::{self, Mode};
use crate::nn::conv;
use crate::nn::fc;
use crate::nn::loss::{self, LossOutput};
use crate::nn::lrn;
use crate::nn::pool;
use crate::nn::spec::{LayerKind, LayerSpec, NetworkSpec};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub params: Option<Params<T>>,
}

/// Weight initialization for conv/fc layers. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Gaussian {
        std: f64,
    },
    /// Zero-mean Gaussian with `std = sqrt(2 / fan_in)`.
    Msra,
}

enum Cache<T> {
    Nothing,
    Input(Tensor<T>),
    Pool {
        argmax: Vec<usize>,
        input_dims: Vec<usize>,
    },
    Lrn {
        input: Tensor<T>,
        scale: Tensor<T>,
    },
    Dropout(Option<Vec<T>>),
}

/// Per-layer state recorded by a forward pass and consumed by the matching backward.
pub struct ForwardCache<T> {
    entries: Vec<Cache<T>>,
}

impl<T: Real> ForwardCache<T> {
    /// Dropout masks by layer index, for replaying the same forward pass.
    pub fn dropout_masks(&self) -> Vec<Option<Vec<T>>> {
        self.entries
            .iter()
            .map(|c| match c {
                Cache::Dropout(m) => m.clone(),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// One entry per layer; `Some` for conv/fc layers.
    pub params: Vec<Option<Params<T>>>,
    pub input: Tensor<T>,
}

enum DropoutPlan<'a, T> {
    Sample(&'a mut dyn RngCore),
    Fixed(&'a [Option<Vec<T>>]),
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
}

impl<T: Real> Network<T> {
    /// Build a network with all parameters zero.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut shape = spec.input_shape.to_vec();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for ls in &spec.layers {
            let params = match &ls.kind {
                LayerKind::Conv {
                    filter, channels, ..
                } => Some(Params {
                    weights: Tensor::zeros(&[*channels, shape[0], *filter, *filter])?,
                    biases: Tensor::zeros(&[*channels])?,
                }),
                LayerKind::Fc { width } => Some(Params {
                    weights: Tensor::zeros(&[*width, shape.iter().product()])?,
                    biases: Tensor::zeros(&[*width])?,
                }),
                _ => None,
            };
            shape = ls.output_shape(&shape)?;
            layers.push(Layer {
                spec: ls.clone(),
                params,
            });
        }
        Ok(Network { spec, layers })
    }

    pub fn initialized(spec: NetworkSpec, init: Init, rng: &mut dyn RngCore) -> Result<Self> {
        let mut net = Self::new(spec)?;
        let names: Vec<String> = net.param_layer_names();
        for name in names {
            net.init_layer(&name, init, rng)?;
        }
        Ok(net)
    }

    pub fn init_layer(&mut self, name: &str, init: Init, rng: &mut dyn RngCore) -> Result<()> {
        let params = self
            .layer_mut(name)
            .and_then(|l| l.params.as_mut())
            .ok_or_else(|| Error::layer(name, "no such parameterized layer"))?;
        let fan_in = params.weights.len() / params.weights.dims()[0];
        let std = match init {
            Init::Gaussian { std } => std,
            Init::Msra => (2.0 / fan_in as f64).sqrt(),
        };
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::invalid(format!("initializer std {std}: {e}")))?;
        for w in params.weights.data_mut() {
            *w = T::from_f64_lossy(normal.sample(rng));
        }
        params.biases.data_mut().fill(T::zero());
        Ok(())
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer<T>> {
        self.layers.iter().find(|l| l.spec.name == name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer<T>> {
        self.layers.iter_mut().find(|l| l.spec.name == name)
    }

    pub fn param_layer_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| l.params.is_some())
            .map(|l| l.spec.name.clone())
            .collect()
    }

    /// Change a layer's learning-rate multiplier (kept in sync with the spec).
    pub fn set_lr_multiplier(&mut self, name: &str, multiplier: f64) -> Result<()> {
        if !(multiplier >= 0.0 && multiplier.is_finite()) {
            return Err(Error::layer(
                name,
                format!("invalid lr multiplier {multiplier}"),
            ));
        }
        let idx = self
            .layers
            .iter()
            .position(|l| l.spec.name == name)
            .ok_or_else(|| Error::layer(name, "no such layer"))?;
        self.layers[idx].spec.lr_multiplier = multiplier;
        self.spec.layers[idx].lr_multiplier = multiplier;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.weights.len() + p.biases.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    params: l.params.as_ref().map(|p| Params {
                        weights: p.weights.cast(),
                        biases: p.biases.cast(),
                    }),
                })
                .collect(),
        }
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let plan = match mode {
            Mode::Train => DropoutPlan::Sample(rng),
            Mode::Test => DropoutPlan::Identity,
        };
        self.forward_impl(x, plan)
    }

    /// Train-mode forward with caller-supplied dropout masks (indexed by layer).
    pub fn forward_with_masks(
        &self,
        x: &Tensor<T>,
        masks: &[Option<Vec<T>>],
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.forward_impl(x, DropoutPlan::Fixed(masks))
    }

    /// Test-mode class probabilities `[N, K]`.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (logits, _) = self.forward_impl(x, DropoutPlan::Identity)?;
        loss::softmax(&logits)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let ok = x.rank() == 4 && x.dims()[1..] == self.spec.input_shape;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "network input must be [N, {}, {}, {}], got {}",
                self.spec.input_shape[0],
                self.spec.input_shape[1],
                self.spec.input_shape[2],
                x.shape()
            )))
        }
    }

    fn forward_impl(
        &self,
        x: &Tensor<T>,
        mut plan: DropoutPlan<'_, T>,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let name = &layer.spec.name;
            let wrap = |e: Error| match e {
                Error::Layer { .. } => e,
                other => Error::layer(name, other.to_string()),
            };
            let (next, cache) = match &layer.spec.kind {
                LayerKind::Conv {
                    stride, padding, ..
                } => {
                    let p = layer.params.as_ref().expect("conv params");
                    let y = conv::conv_forward(&act, &p.weights, &p.biases, *stride, *padding)
                        .map_err(wrap)?;
                    (y, Cache::Input(act))
                }
                LayerKind::MaxPool { size, stride } => {
                    let (y, argmax) = pool::maxpool_forward(&act, *size, *stride).map_err(wrap)?;
                    let input_dims = act.dims().to_vec();
                    (y, Cache::Pool { argmax, input_dims })
                }
                LayerKind::Relu => (activation::relu_forward(&act), Cache::Input(act)),
                LayerKind::Lrn(params) => {
                    let (y, scale) = lrn::lrn_forward(&act, params).map_err(wrap)?;
                    (y, Cache::Lrn { input: act, scale })
                }
                LayerKind::Fc { .. } => {
                    let p = layer.params.as_ref().expect("fc params");
                    let y = fc::fc_forward(&act, &p.weights, &p.biases).map_err(wrap)?;
                    (y, Cache::Input(act))
                }
                LayerKind::Dropout { ratio } => match &mut plan {
                    DropoutPlan::Identity => (act, Cache::Dropout(None)),
                    DropoutPlan::Sample(rng) => {
                        let (y, mask) =
                            activation::dropout_forward(&act, *ratio, Mode::Train, &mut **rng)
                                .map_err(wrap)?;
                        (y, Cache::Dropout(mask))
                    }
                    DropoutPlan::Fixed(masks) => match masks.get(idx).and_then(|m| m.as_ref()) {
                        Some(mask) => {
                            let y = activation::apply_mask(&act, mask).map_err(wrap)?;
                            (y, Cache::Dropout(Some(mask.clone())))
                        }
                        None => (act, Cache::Dropout(None)),
                    },
                },
                LayerKind::Softmax => (act, Cache::Nothing),
            };
            act = next;
            entries.push(cache);
        }
        act.ensure_finite("network output")?;
        Ok((act, ForwardCache { entries }))
    }

    pub fn backward(
        &self,
        grad_logits: &Tensor<T>,
        cache: ForwardCache<T>,
    ) -> Result<Gradients<T>> {
        if cache.entries.len() != self.layers.len() {
            return Err(Error::invalid(
                "forward cache does not belong to this network",
            ));
        }
        let mut grad = grad_logits.clone();
        let mut params: Vec<Option<Params<T>>> = vec![None; self.layers.len()];
        for (idx, (layer, entry)) in self.layers.iter().zip(cache.entries).enumerate().rev() {
            let name = &layer.spec.name;
            let stale = || Error::layer(name, "stale or mismatched forward cache");
            grad = match (&layer.spec.kind, entry) {
                (
                    LayerKind::Conv {
                        stride, padding, ..
                    },
                    Cache::Input(x),
                ) => {
                    let p = layer.params.as_ref().expect("conv params");
                    let g =
                        conv::conv_backward(&grad, &x, &p.weights, &p.biases, *stride, *padding)?;
                    params[idx] = Some(Params {
                        weights: g.weights,
                        biases: g.biases,
                    });
                    g.input
                }
                (LayerKind::MaxPool { .. }, Cache::Pool { argmax, input_dims }) => {
                    pool::maxpool_backward(&grad, &argmax, &input_dims)?
                }
                (LayerKind::Relu, Cache::Input(x)) => activation::relu_backward(&grad, &x)?,
                (LayerKind::Lrn(p), Cache::Lrn { input, scale }) => {
                    lrn::lrn_backward(&grad, &input, &scale, p)?
                }
                (LayerKind::Fc { .. }, Cache::Input(x)) => {
                    let p = layer.params.as_ref().expect("fc params");
                    let g = fc::fc_backward(&grad, &x, &p.weights, &p.biases)?;
                    params[idx] = Some(Params {
                        weights: g.weights,
                        biases: g.biases,
                    });
                    g.input
                }
                (LayerKind::Dropout { .. }, Cache::Dropout(mask)) => {
                    activation::dropout_backward(&grad, mask.as_deref())?
                }
                (LayerKind::Softmax, Cache::Nothing) => grad,
                _ => return Err(stale()),
            };
        }
        Ok(Gradients {
            params,
            input: grad,
        })
    }

    /// Forward, softmax cross-entropy, and backward in one call.
    pub fn loss_and_gradients(
        &self,
        x: &Tensor<T>,
        labels: &[usize],
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(LossOutput<T>, Gradients<T>)> {
        let (logits, cache) = self.forward(x, mode, rng)?;
        let out = loss::softmax_cross_entropy(&logits, labels)?;
        let grads = self.backward(&out.grad, cache)?;
        Ok((out, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_gives_uniform_probs() {
        let net = Network::<f32>::new(NetworkSpec::tiny(16, 2)).unwrap();
        let x = Tensor::<f32>::zeros(&[3, 3, 16, 16]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, _) = net.forward(&x, Mode::Test, &mut rng).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let p = net.predict_proba(&x).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn wrong_input_shape() {
        let net = Network::<f32>::new(NetworkSpec::tiny(16, 2)).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 3, 15, 16]).unwrap();
        assert!(net.predict_proba(&x).is_err());
    }

    #[test]
    fn param_shapes_follow_the_trace() {
        let net = Network::<f32>::new(NetworkSpec::convnet_t(2)).unwrap();
        let dims = |n: &str| {
            net.layer(n)
                .unwrap()
                .params
                .as_ref()
                .unwrap()
                .weights
                .dims()
                .to_vec()
        };
        assert_eq!(dims("conv1"), vec![96, 3, 11, 11]);
        assert_eq!(dims("conv2"), vec![256, 96, 5, 5]);
        assert_eq!(dims("fc6"), vec![1024, 9216]);
        assert_eq!(dims("fc8"), vec![2, 256]);
    }

    #[test]
    fn msra_init_is_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let n1 = Network::<f32>::initialized(NetworkSpec::tiny(16, 2), Init::Msra, &mut a).unwrap();
        let n2 = Network::<f32>::initialized(NetworkSpec::tiny(16, 2), Init::Msra, &mut b).unwrap();
        assert_eq!(n1, n2);
        assert!(n1
            .layer("conv1")
            .unwrap()
            .params
            .as_ref()
            .unwrap()
            .weights
            .data()
            .iter()
            .any(|&v| v != 0.0));
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let net = Network::<f64>::new(NetworkSpec::tiny(8, 2)).unwrap();
        let other = Network::<f64>::new(NetworkSpec::convnet_t(2)).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 3, 8, 8]).unwrap();
        let (logits, cache) = net.forward_with_masks(&x, &[]).unwrap();
        assert!(other.backward(&logits, cache).is_err());
    }
}
