use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::conv;
use crate::error::{Error, Result};
use crate::volume::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv3d,
    Conv3dStrided,
    Dense,
}

impl LayerKind {
    pub fn stride(self) -> usize {
        match self {
            LayerKind::Conv3d | LayerKind::Dense => 1,
            LayerKind::Conv3dStrided => 2,
        }
    }

    pub fn is_conv(self) -> bool {
        !matches!(self, LayerKind::Dense)
    }

    pub fn code(self) -> u8 {
        match self {
            LayerKind::Conv3d => 0,
            LayerKind::Conv3dStrided => 1,
            LayerKind::Dense => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LayerKind::Conv3d),
            1 => Some(LayerKind::Conv3dStrided),
            2 => Some(LayerKind::Dense),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Softmax,
    None,
}

/// One layer of the classifier. Convolutions always use 3×3×3 kernels with
/// one voxel of zero padding; for dense layers `in_channels` is the number of
/// flattened input features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize) -> Self {
        Self { kind: LayerKind::Conv3d, in_channels, out_channels, activation: Activation::Relu }
    }

    pub fn strided(in_channels: usize, out_channels: usize) -> Self {
        Self { kind: LayerKind::Conv3dStrided, in_channels, out_channels, activation: Activation::Relu }
    }

    pub fn dense(in_features: usize, units: usize, activation: Activation) -> Self {
        Self { kind: LayerKind::Dense, in_channels: in_features, out_channels: units, activation }
    }

    pub fn stride(&self) -> usize {
        self.kind.stride()
    }

    pub fn weight_len(&self) -> usize {
        if self.kind.is_conv() {
            self.out_channels * self.in_channels * conv::KERNEL_VOLUME
        } else {
            self.out_channels * self.in_channels
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_channels
    }
}

/// Channels plus spatial extent of an activation tensor. Dense activations
/// use a 1×1×1 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub dims: Dims,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.channels * self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bound of the uniform weight initialization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// ±sqrt(6 / (fan_in + fan_out)).
    #[default]
    Glorot,
    /// ±sqrt(6 / fan_in); keeps the activation scale through deep ReLU stacks.
    He,
}

/// Layer stack of the standard classifier: `blocks` × (conv + strided conv)
/// with `channels` feature maps, then two dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub blocks: usize,
    pub channels: usize,
    pub hidden_units: usize,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { blocks: 4, channels: 8, hidden_units: 16, classes: 2 }
    }
}

impl Architecture {
    pub fn layer_specs(&self, input: Dims) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(2 * self.blocks + 2);
        let mut dims = input;
        let mut ch = 1;
        for _ in 0..self.blocks {
            specs.push(LayerSpec::conv(ch, self.channels));
            specs.push(LayerSpec::strided(self.channels, self.channels));
            ch = self.channels;
            dims = conv::out_dims(dims, 2);
        }
        specs.push(LayerSpec::dense(ch * dims.len(), self.hidden_units, Activation::Relu));
        specs.push(LayerSpec::dense(self.hidden_units, self.classes, Activation::Softmax));
        specs
    }

    /// Trainable parameters for a given input grid, without allocating weights.
    pub fn param_count(&self, input: Dims) -> usize {
        self.layer_specs(input).iter().map(LayerSpec::param_count).sum()
    }
}

/// Validates a layer stack against an input grid and returns every layer's
/// input and output shapes.
pub fn resolve_shapes(input: Dims, specs: &[LayerSpec]) -> Result<Vec<(Shape, Shape)>> {
    if specs.is_empty() {
        return Err(Error::InvalidSpec("model has no layers".into()));
    }
    let mut shapes = Vec::with_capacity(specs.len());
    let mut cur = Shape { channels: 1, dims: input };
    for (i, spec) in specs.iter().enumerate() {
        if spec.in_channels == 0 || spec.out_channels == 0 {
            return Err(Error::InvalidSpec(format!("layer {i} has zero channels")));
        }
        let last = i + 1 == specs.len();
        if spec.activation == Activation::Softmax && !(last && spec.kind == LayerKind::Dense) {
            return Err(Error::InvalidSpec(format!("softmax allowed only on the final dense layer (layer {i})")));
        }
        let out = match spec.kind {
            LayerKind::Conv3d | LayerKind::Conv3dStrided => {
                if specs[..i].iter().any(|s| s.kind == LayerKind::Dense) {
                    return Err(Error::InvalidSpec(format!("convolution after dense layer (layer {i})")));
                }
                if spec.in_channels != cur.channels {
                    return Err(Error::ShapeMismatch(format!("layer {i} expects {} channels, got {}", spec.in_channels, cur.channels)));
                }
                Shape { channels: spec.out_channels, dims: conv::out_dims(cur.dims, spec.stride()) }
            }
            LayerKind::Dense => {
                if spec.in_channels != cur.len() {
                    return Err(Error::ShapeMismatch(format!("dense layer {i} expects {} features, got {}", spec.in_channels, cur.len())));
                }
                Shape { channels: spec.out_channels, dims: Dims::cube(1) }
            }
        };
        shapes.push((cur, out));
        cur = out;
    }
    Ok(shapes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_parameter_count() {
        let n = Architecture::default().param_count(Dims::new(160, 240, 256));
        // conv stack 12_376, dense 19_200*16+16, output 16*2+2
        assert_eq!(n, 12_376 + 307_216 + 34);
        assert!((250_000..=350_000).contains(&n));
    }

    #[test]
    fn shape_chain_halves_even_axes() {
        let specs = Architecture::default().layer_specs(Dims::new(160, 240, 256));
        let shapes = resolve_shapes(Dims::new(160, 240, 256), &specs).unwrap();
        let strided: Vec<Dims> =
            shapes.iter().zip(&specs).filter(|(_, s)| s.kind == LayerKind::Conv3dStrided).map(|((_, o), _)| o.dims).collect();
        assert_eq!(strided[0], Dims::new(80, 120, 128));
        assert_eq!(strided[3], Dims::new(10, 15, 16));
    }

    #[test]
    fn rejects_inconsistent_stacks() {
        let d = Dims::cube(4);
        assert!(resolve_shapes(d, &[LayerSpec::conv(2, 4)]).is_err());
        assert!(resolve_shapes(d, &[LayerSpec::conv(1, 2), LayerSpec::dense(3, 2, Activation::Softmax)]).is_err());
        assert!(resolve_shapes(d, &[LayerSpec::dense(64, 2, Activation::Softmax), LayerSpec::dense(2, 2, Activation::None)]).is_err());
        assert!(resolve_shapes(d, &[]).is_err());
        assert!(resolve_shapes(d, &[LayerSpec::conv(1, 2), LayerSpec::dense(128, 2, Activation::Softmax)]).is_ok());
    }
}
