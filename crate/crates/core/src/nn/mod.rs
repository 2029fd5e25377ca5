//! Residual classifiers and their parameter files.
//!
//! Both variants share one layout scheme: a stem convolution with batch norm
//! and ReLU, an optional 3x3/2 max pool, a sequence of stages of basic
//! residual blocks, global average pooling and a `k`-way linear head (one
//! logit per infrastructure outcome). A basic block is
//! `relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))`, where the shortcut
//! is the identity or, when the stride or width changes, a 1x1 convolution
//! followed by batch norm. Convolutions carry no bias.
//!
//! | variant    | stem                 | max pool | stages (width x blocks, entry stride) | features |
//! |------------|----------------------|----------|---------------------------------------|----------|
//! | `micro`    | 3x3/1 pad 1, 16      | no       | 16x2 /1, 32x2 /2                      | 32       |
//! | `resnet18` | 7x7/2 pad 3, 64      | 3x3/2 p1 | 64x2 /1, 128x2 /2, 256x2 /2, 512x2 /2 | 512      |
//!
//! Parameter paths follow the torchvision naming (`conv1.weight`,
//! `layer2.0.downsample.1.running_var`, `fc.bias`, ...). For `C` input
//! channels and `k` outputs the trainable parameter count is
//!
//! * micro: `144*C + 42_464 + 33*k`
//! * resnet18: `3136*C + 11_167_104 + 513*k`
//!
//! (11,689,512 for the ImageNet configuration `C = 3, k = 1000`).

mod checkpoint;
mod init;
mod model;
mod transfer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use init::XavierSpec;
pub use model::{build_network, Model, Param, BN_EPSILON, BN_MOMENTUM};
pub use transfer::{extend_input_channels, parse_slots, select_input_channels, FIRST_CONV};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Micro,
    Resnet18,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Micro => "micro",
            Variant::Resnet18 => "resnet18",
        }
    }

    pub(crate) fn layout(self) -> Layout {
        match self {
            Variant::Micro => Layout {
                stem_kernel: 3,
                stem_stride: 1,
                stem_padding: 1,
                stem_channels: 16,
                max_pool: false,
                stages: &[(16, 2, 1), (32, 2, 2)],
            },
            Variant::Resnet18 => Layout {
                stem_kernel: 7,
                stem_stride: 2,
                stem_padding: 3,
                stem_channels: 64,
                max_pool: true,
                stages: &[(64, 2, 1), (128, 2, 2), (256, 2, 2), (512, 2, 2)],
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Variant::Micro),
            "resnet18" => Ok(Variant::Resnet18),
            other => Err(Error::UnsupportedVariant(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_padding: usize,
    pub stem_channels: usize,
    pub max_pool: bool,
    /// `(width, blocks, entry stride)`
    pub stages: &'static [(usize, usize, usize)],
}

impl Layout {
    pub fn feature_dim(&self) -> usize {
        self.stages.last().map(|s| s.0).unwrap_or(self.stem_channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub input_channels: usize,
    pub num_outputs: usize,
    /// Spatial side length of the (square) network input.
    pub input_size: usize,
}

impl NetworkConfig {
    pub fn new(variant: Variant, input_channels: usize, num_outputs: usize) -> Self {
        Self {
            variant,
            input_channels,
            num_outputs,
            input_size: 224,
        }
    }

    pub fn with_input_size(mut self, side: usize) -> Self {
        self.input_size = side;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.num_outputs == 0 || self.input_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "network config needs positive channels, outputs and input size: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.variant.layout().feature_dim()
    }

    /// Every parameter and buffer of the layout, in construction order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let layout = self.variant.layout();
        let mut specs = Vec::new();
        let k = layout.stem_kernel;
        specs.push(ParamSpec::conv("conv1", layout.stem_channels, self.input_channels, k));
        push_bn(&mut specs, "bn1", layout.stem_channels);
        let mut width = layout.stem_channels;
        for (s, &(out, blocks, stride)) in layout.stages.iter().enumerate() {
            for b in 0..blocks {
                let prefix = format!("layer{}.{b}", s + 1);
                let block_stride = if b == 0 { stride } else { 1 };
                specs.push(ParamSpec::conv(&format!("{prefix}.conv1"), out, width, 3));
                push_bn(&mut specs, &format!("{prefix}.bn1"), out);
                specs.push(ParamSpec::conv(&format!("{prefix}.conv2"), out, out, 3));
                push_bn(&mut specs, &format!("{prefix}.bn2"), out);
                if block_stride != 1 || width != out {
                    specs.push(ParamSpec::conv(&format!("{prefix}.downsample.0"), out, width, 1));
                    push_bn(&mut specs, &format!("{prefix}.downsample.1"), out);
                }
                width = out;
            }
        }
        specs.push(ParamSpec {
            path: "fc.weight".into(),
            shape: vec![self.num_outputs, width],
            kind: ParamKind::LinearWeight,
        });
        specs.push(ParamSpec {
            path: "fc.bias".into(),
            shape: vec![self.num_outputs],
            kind: ParamKind::LinearBias,
        });
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.param_specs()
            .iter()
            .filter(|s| !s.kind.is_buffer())
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    LinearBias,
    BnGamma,
    BnBeta,
    BnRunningMean,
    BnRunningVar,
}

impl ParamKind {
    /// Running statistics are state, not optimized parameters.
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    fn conv(prefix: &str, filters: usize, channels: usize, kernel: usize) -> Self {
        Self {
            path: format!("{prefix}.weight"),
            shape: vec![filters, channels, kernel, kernel],
            kind: ParamKind::ConvWeight,
        }
    }
}

fn push_bn(specs: &mut Vec<ParamSpec>, prefix: &str, channels: usize) {
    for (suffix, kind) in [
        ("weight", ParamKind::BnGamma),
        ("bias", ParamKind::BnBeta),
        ("running_mean", ParamKind::BnRunningMean),
        ("running_var", ParamKind::BnRunningVar),
    ] {
        specs.push(ParamSpec {
            path: format!("{prefix}.{suffix}"),
            shape: vec![channels],
            kind,
        });
    }
}

/// Paths of the classification head.
pub fn is_head_param(path: &str) -> bool {
    path.starts_with("fc.")
}
