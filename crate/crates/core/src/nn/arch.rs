use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One layer of a fixed-topology network. `name` prefixes every parameter key
/// the layer owns (`"<name>.weight"`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm1d {
        features: usize,
    },
    Relu,
    Flatten,
    MaxPool1d {
        width: usize,
    },
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Activation layout between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Flat(usize),
    Seq { channels: usize, len: usize },
}

impl ActShape {
    pub fn numel(self) -> usize {
        match self {
            ActShape::Flat(f) => f,
            ActShape::Seq { channels, len } => channels * len,
        }
    }

    /// Tensor shape for a batch of `n` activations.
    pub fn batch_shape(self, n: usize) -> Vec<usize> {
        match self {
            ActShape::Flat(f) => vec![n, f],
            ActShape::Seq { channels, len } => vec![n, channels, len],
        }
    }
}

/// Input width plus the ordered layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

/// Channel/kernel settings of the default two-block convolutional backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub pool_width: usize,
    pub conv2_channels: usize,
    pub conv2_kernel: usize,
    pub conv2_stride: usize,
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            conv1_channels: 16,
            conv1_kernel: 3,
            conv1_stride: 3,
            pool_width: 2,
            conv2_channels: 32,
            conv2_kernel: 3,
            conv2_stride: 2,
            dropout: 0.0,
        }
    }
}

impl Architecture {
    /// Conv block 1 (conv, bn, relu, pool), conv block 2 (conv, bn, relu),
    /// flatten, optional dropout, dense head.
    pub fn compact_cnn(input_dim: usize, n_classes: usize, cfg: &BackboneConfig) -> Result<Self> {
        let mut layers = vec![
            LayerSpec::new(
                "block1.conv",
                LayerKind::Conv1d {
                    in_channels: 1,
                    out_channels: cfg.conv1_channels,
                    kernel: cfg.conv1_kernel,
                    stride: cfg.conv1_stride,
                },
            ),
            LayerSpec::new("block1.bn", LayerKind::BatchNorm1d { features: cfg.conv1_channels }),
            LayerSpec::new("block1.relu", LayerKind::Relu),
            LayerSpec::new("block1.pool", LayerKind::MaxPool1d { width: cfg.pool_width }),
            LayerSpec::new(
                "block2.conv",
                LayerKind::Conv1d {
                    in_channels: cfg.conv1_channels,
                    out_channels: cfg.conv2_channels,
                    kernel: cfg.conv2_kernel,
                    stride: cfg.conv2_stride,
                },
            ),
            LayerSpec::new("block2.bn", LayerKind::BatchNorm1d { features: cfg.conv2_channels }),
            LayerSpec::new("block2.relu", LayerKind::Relu),
            LayerSpec::new("flatten", LayerKind::Flatten),
        ];
        if cfg.dropout > 0.0 {
            layers.push(LayerSpec::new("dropout", LayerKind::Dropout { rate: cfg.dropout }));
        }
        // flatten width depends on the conv arithmetic; resolve it by walking
        let mut arch = Architecture { input_dim, layers };
        let flat = arch.shapes()?.last().copied().expect("nonempty").numel();
        arch.layers.push(LayerSpec::new(
            "head",
            LayerKind::Dense {
                inputs: flat,
                outputs: n_classes,
            },
        ));
        arch.validate()?;
        Ok(arch)
    }

    /// Single dense layer, handy for probes and tests.
    pub fn linear(input_dim: usize, n_classes: usize) -> Self {
        Architecture {
            input_dim,
            layers: vec![LayerSpec::new(
                "head",
                LayerKind::Dense {
                    inputs: input_dim,
                    outputs: n_classes,
                },
            )],
        }
    }

    /// Output shape after every layer, validating compatibility on the way.
    pub fn shapes(&self) -> Result<Vec<ActShape>> {
        if self.input_dim == 0 {
            return Err(Error::Architecture("input_dim must be >= 1".into()));
        }
        let mut cur = ActShape::Flat(self.input_dim);
        let mut out = Vec::with_capacity(self.layers.len());
        let mut names = std::collections::HashSet::new();
        for spec in &self.layers {
            if !names.insert(spec.name.as_str()) {
                return Err(Error::Architecture(format!("duplicate layer name `{}`", spec.name)));
            }
            let bad = |msg: String| Error::Shape {
                layer: spec.name.clone(),
                msg,
            };
            cur = match (&spec.kind, cur) {
                (LayerKind::Dense { inputs, outputs }, ActShape::Flat(f)) => {
                    if *inputs == 0 || *outputs == 0 {
                        return Err(bad("dense sizes must be >= 1".into()));
                    }
                    if *inputs != f {
                        return Err(bad(format!("expects {inputs} inputs, receives {f}")));
                    }
                    ActShape::Flat(*outputs)
                }
                (LayerKind::Dense { .. }, s) => {
                    return Err(bad(format!("dense layer needs flat input, got {s:?}")))
                }
                (
                    LayerKind::Conv1d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                    },
                    s,
                ) => {
                    let (channels, len) = match s {
                        ActShape::Seq { channels, len } => (channels, len),
                        ActShape::Flat(f) => (1, f),
                    };
                    if *kernel == 0 || *stride == 0 || *out_channels == 0 {
                        return Err(bad("kernel, stride and channels must be >= 1".into()));
                    }
                    if *in_channels != channels {
                        return Err(bad(format!("expects {in_channels} channels, receives {channels}")));
                    }
                    if *kernel > len {
                        return Err(bad(format!("kernel {kernel} longer than sequence {len}")));
                    }
                    ActShape::Seq {
                        channels: *out_channels,
                        len: (len - kernel) / stride + 1,
                    }
                }
                (LayerKind::BatchNorm1d { features }, s) => {
                    let c = match s {
                        ActShape::Seq { channels, .. } => channels,
                        ActShape::Flat(f) => f,
                    };
                    if *features != c {
                        return Err(bad(format!("expects {features} features, receives {c}")));
                    }
                    s
                }
                (LayerKind::Relu, s) => s,
                (LayerKind::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(bad(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    s
                }
                (LayerKind::Flatten, s) => ActShape::Flat(s.numel()),
                (LayerKind::MaxPool1d { width }, ActShape::Seq { channels, len }) => {
                    if *width == 0 || *width > len {
                        return Err(bad(format!("pool width {width} invalid for length {len}")));
                    }
                    ActShape::Seq {
                        channels,
                        len: len / width,
                    }
                }
                (LayerKind::MaxPool1d { .. }, s) => {
                    return Err(bad(format!("pooling needs sequence input, got {s:?}")))
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        match shapes.last() {
            Some(ActShape::Flat(_)) => {}
            Some(s) => return Err(Error::Architecture(format!("network output must be flat, got {s:?}"))),
            None => return Err(Error::Architecture("no layers".into())),
        }
        if self.head_index().is_none() {
            return Err(Error::Architecture("no dense layer to act as class head".into()));
        }
        Ok(())
    }

    /// Index of the last dense layer, which acts as the class head.
    pub fn head_index(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l.kind, LayerKind::Dense { .. }))
    }

    pub fn n_classes(&self) -> usize {
        match self.shapes().ok().and_then(|s| s.last().copied()) {
            Some(ActShape::Flat(n)) => n,
            _ => 0,
        }
    }

    /// Stable 64-bit hash of the layer list and input width.
    pub fn fingerprint(&self) -> u64 {
        let canonical = serde_json::to_vec(self).expect("architecture serializes");
        let digest = Sha256::digest(&canonical);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    /// Same layers except, possibly, the width of the class head.
    pub fn same_trunk(&self, other: &Architecture) -> bool {
        if self.input_dim != other.input_dim || self.layers.len() != other.layers.len() {
            return false;
        }
        let head = self.head_index();
        self.layers.iter().zip(&other.layers).enumerate().all(|(i, (a, b))| {
            if Some(i) == head && a.name == b.name {
                matches!(
                    (&a.kind, &b.kind),
                    (LayerKind::Dense { inputs: x, .. }, LayerKind::Dense { inputs: y, .. }) if x == y
                )
            } else {
                a == b
            }
        })
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }
}
