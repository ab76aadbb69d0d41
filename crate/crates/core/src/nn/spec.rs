use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    #[serde(default = "LrnParams::default_k")]
    pub k: f64,
    #[serde(default = "LrnParams::default_n")]
    pub n: usize,
    #[serde(default = "LrnParams::default_alpha")]
    pub alpha: f64,
    #[serde(default = "LrnParams::default_beta")]
    pub beta: f64,
}

impl LrnParams {
    fn default_k() -> f64 {
        2.0
    }
    fn default_n() -> usize {
        5
    }
    fn default_alpha() -> f64 {
        1e-4
    }
    fn default_beta() -> f64 {
        0.75
    }
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams {
            k: 2.0,
            n: 5,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        filter: usize,
        channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    #[serde(rename = "maxpool")]
    MaxPool {
        size: usize,
        stride: usize,
    },
    Relu,
    Lrn(LrnParams),
    Fc {
        width: usize,
    },
    Dropout {
        ratio: f64,
    },
    /// Marks the output as class probabilities. Only valid as the last layer;
    /// the network itself returns logits and the loss applies the softmax.
    Softmax,
}

fn one() -> usize {
    1
}

fn unit_multiplier() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    /// Scales the base learning rate for this layer. Zero freezes it.
    #[serde(default = "unit_multiplier")]
    pub lr_multiplier: f64,
}

impl LayerSpec {
    pub fn new(name: &str, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind,
            lr_multiplier: 1.0,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. } | LayerKind::Fc { .. })
    }

    /// Per-sample output shape for a per-sample input shape (`[C, H, W]` or `[D]`).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match input {
                [c, h, w] => Ok((*c, *h, *w)),
                _ => Err(Error::layer(
                    &self.name,
                    format!("{what} needs a [C, H, W] input, got {input:?}"),
                )),
            }
        };
        match &self.kind {
            LayerKind::Conv {
                filter,
                channels,
                stride,
                padding,
            } => {
                let (_, h, w) = spatial("conv")?;
                let oh = window_output(h, *filter, *stride, *padding)
                    .map_err(|m| Error::layer(&self.name, m))?;
                let ow = window_output(w, *filter, *stride, *padding)
                    .map_err(|m| Error::layer(&self.name, m))?;
                if *channels == 0 {
                    return Err(Error::layer(
                        &self.name,
                        "conv needs at least one output channel",
                    ));
                }
                Ok(vec![*channels, oh, ow])
            }
            LayerKind::MaxPool { size, stride } => {
                let (c, h, w) = spatial("maxpool")?;
                let oh =
                    window_output(h, *size, *stride, 0).map_err(|m| Error::layer(&self.name, m))?;
                let ow =
                    window_output(w, *size, *stride, 0).map_err(|m| Error::layer(&self.name, m))?;
                Ok(vec![c, oh, ow])
            }
            LayerKind::Lrn(p) => {
                spatial("lrn")?;
                if p.n == 0 || p.k <= 0.0 {
                    return Err(Error::layer(&self.name, "lrn needs n >= 1 and k > 0"));
                }
                Ok(input.to_vec())
            }
            LayerKind::Relu | LayerKind::Softmax => Ok(input.to_vec()),
            LayerKind::Dropout { ratio } => {
                if !(0.0..1.0).contains(ratio) {
                    return Err(Error::layer(
                        &self.name,
                        format!("dropout ratio {ratio} outside [0, 1)"),
                    ));
                }
                Ok(input.to_vec())
            }
            LayerKind::Fc { width } => {
                if *width == 0 {
                    return Err(Error::layer(&self.name, "fc width must be positive"));
                }
                Ok(vec![*width])
            }
        }
    }
}

/// `floor((input + 2 pad - window) / stride) + 1`, or an error when it would be empty.
pub fn window_output(
    input: usize,
    window: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, String> {
    if window == 0 || stride == 0 {
        return Err("window and stride must be positive".into());
    }
    let padded = input + 2 * pad;
    if window > padded {
        return Err(format!("window {window} exceeds padded extent {padded}"));
    }
    Ok((padded - window) / stride + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample input shape `[C, H, W]`.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// The fine-tuning architecture: five conv layers with LRN after the first
    /// two, three max-pools, and a 1024-256-K classifier head.
    pub fn convnet_t(num_classes: usize) -> Self {
        use LayerKind::*;
        let conv = |filter, channels, stride, padding| Conv {
            filter,
            channels,
            stride,
            padding,
        };
        let pool = || MaxPool { size: 3, stride: 2 };
        let layers = vec![
            LayerSpec::new("conv1", conv(11, 96, 4, 0)),
            LayerSpec::new("relu1", Relu),
            LayerSpec::new("pool1", pool()),
            LayerSpec::new("norm1", Lrn(LrnParams::default())),
            LayerSpec::new("conv2", conv(5, 256, 1, 2)),
            LayerSpec::new("relu2", Relu),
            LayerSpec::new("pool2", pool()),
            LayerSpec::new("norm2", Lrn(LrnParams::default())),
            LayerSpec::new("conv3", conv(3, 384, 1, 1)),
            LayerSpec::new("relu3", Relu),
            LayerSpec::new("conv4", conv(3, 384, 1, 1)),
            LayerSpec::new("relu4", Relu),
            LayerSpec::new("conv5", conv(3, 256, 1, 1)),
            LayerSpec::new("relu5", Relu),
            LayerSpec::new("pool5", pool()),
            LayerSpec::new("fc6", Fc { width: 1024 }),
            LayerSpec::new("relu6", Relu),
            LayerSpec::new("drop6", Dropout { ratio: 0.5 }),
            LayerSpec::new("fc7", Fc { width: 256 }),
            LayerSpec::new("relu7", Relu),
            LayerSpec::new("drop7", Dropout { ratio: 0.5 }),
            LayerSpec::new("fc8", Fc { width: num_classes }),
            LayerSpec::new("prob", Softmax),
        ];
        NetworkSpec {
            input_shape: [3, 227, 227],
            num_classes,
            layers,
        }
    }

    /// Three 3x3 conv blocks and a small two-layer head, for CPU-scale runs.
    /// Layer names reuse `conv1..conv3` and `fc6`/`fc8` so transfer works by name.
    pub fn tiny(input_hw: usize, num_classes: usize) -> Self {
        use LayerKind::*;
        let conv = |channels| Conv {
            filter: 3,
            channels,
            stride: 1,
            padding: 1,
        };
        let pool = || MaxPool { size: 2, stride: 2 };
        let layers = vec![
            LayerSpec::new("conv1", conv(8)),
            LayerSpec::new("relu1", Relu),
            LayerSpec::new("pool1", pool()),
            LayerSpec::new("conv2", conv(16)),
            LayerSpec::new("relu2", Relu),
            LayerSpec::new("pool2", pool()),
            LayerSpec::new("conv3", conv(16)),
            LayerSpec::new("relu3", Relu),
            LayerSpec::new("pool5", pool()),
            LayerSpec::new("fc6", Fc { width: 32 }),
            LayerSpec::new("relu6", Relu),
            LayerSpec::new("drop6", Dropout { ratio: 0.5 }),
            LayerSpec::new("fc8", Fc { width: num_classes }),
            LayerSpec::new("prob", Softmax),
        ];
        NetworkSpec {
            input_shape: [3, input_hw, input_hw],
            num_classes,
            layers,
        }
    }

    /// Output shape of every layer for one sample, validating the whole chain.
    pub fn shape_trace(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut shape = self.input_shape.to_vec();
        if shape.contains(&0) {
            return Err(Error::invalid(format!(
                "input shape {:?} has a zero extent",
                self.input_shape
            )));
        }
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut seen = std::collections::HashSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::layer(&layer.name, "duplicate layer name"));
            }
            if !(layer.lr_multiplier >= 0.0 && layer.lr_multiplier.is_finite()) {
                return Err(Error::layer(
                    &layer.name,
                    "lr_multiplier must be finite and >= 0",
                ));
            }
            if matches!(layer.kind, LayerKind::Softmax) && i + 1 != self.layers.len() {
                return Err(Error::layer(&layer.name, "softmax must be the last layer"));
            }
            shape = layer.output_shape(&shape)?;
            trace.push((layer.name.clone(), shape.clone()));
        }
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        let trace = self.shape_trace()?;
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        match trace.last() {
            Some((_, out)) if out == &vec![self.num_classes] => Ok(()),
            Some((name, out)) => Err(Error::layer(
                name,
                format!(
                    "network output {out:?} does not match num_classes {}",
                    self.num_classes
                ),
            )),
            None => Err(Error::invalid("network has no layers")),
        }
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convnet_t_shape_trace() {
        let spec = NetworkSpec::convnet_t(2);
        spec.validate().unwrap();
        let trace: Vec<Vec<usize>> = spec
            .shape_trace()
            .unwrap()
            .into_iter()
            .filter(|(name, _)| {
                name.starts_with("conv") || name.starts_with("pool") || name.starts_with("fc")
            })
            .map(|(_, s)| s)
            .collect();
        let expected: Vec<Vec<usize>> = vec![
            vec![96, 55, 55],
            vec![96, 27, 27],
            vec![256, 27, 27],
            vec![256, 13, 13],
            vec![384, 13, 13],
            vec![384, 13, 13],
            vec![256, 13, 13],
            vec![256, 6, 6],
            vec![1024],
            vec![256],
            vec![2],
        ];
        assert_eq!(trace, expected);
    }

    #[test]
    fn window_formula() {
        assert_eq!(window_output(227, 11, 4, 0).unwrap(), 55);
        assert_eq!(window_output(55, 3, 2, 0).unwrap(), 27);
        assert_eq!(window_output(27, 5, 1, 2).unwrap(), 27);
        assert!(window_output(2, 3, 1, 0).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = NetworkSpec::tiny(32, 2);
        spec.layers[11].kind = LayerKind::Dropout { ratio: 1.0 };
        assert!(spec.validate().is_err());

        let mut spec = NetworkSpec::tiny(32, 2);
        spec.num_classes = 7;
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("prob"), "{err}");

        let mut spec = NetworkSpec::tiny(32, 2);
        spec.layers[0].lr_multiplier = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let spec = NetworkSpec::convnet_t(7);
        let text = toml::to_string(&spec).unwrap();
        let back: NetworkSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
