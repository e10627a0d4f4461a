use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::conv::{self, ConvGeometry};
use super::layer::{resolve_shapes, Activation, Architecture, LayerKind, LayerSpec, Shape, WeightInit};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::seed;
use crate::volume::{Dims, Volume};

/// Probability floor inside the cross-entropy logarithm.
pub const LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.spec.in_channels, self.spec.out_channels, self.in_shape.dims, self.spec.stride())
    }

    /// Pre-activation response of this layer.
    pub fn affine(&self, input: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.out_shape.len()];
        match self.spec.kind {
            LayerKind::Conv3d | LayerKind::Conv3dStrided => {
                conv::forward(&self.geometry(), input, &self.weights, &self.biases, &mut out);
            }
            LayerKind::Dense => dense_forward(input, &self.weights, &self.biases, &mut out),
        }
        out
    }
}

pub(crate) fn dense_forward<T: Real>(input: &[T], weights: &[T], biases: &[T], out: &mut [T]) {
    let n_in = input.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &weights[j * n_in..(j + 1) * n_in];
        let acc: f64 = row.iter().zip(input).map(|(&w, &x)| (w * x).as_f64()).sum();
        *o = T::from_f64(acc + biases[j].as_f64());
    }
}

/// Classifier network: an ordered layer stack with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    input_dims: Dims,
    layers: Vec<Layer<T>>,
}

/// Everything the backward and relevance passes need from a forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// Input of each layer (the previous layer's activation).
    pub inputs: Vec<Vec<T>>,
    /// Pre-activation output of each layer.
    pub pre: Vec<Vec<T>>,
    /// Softmax class probabilities.
    pub scores: Vec<T>,
}

impl<T> Trace<T> {
    pub fn logits(&self) -> &[T] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![T::zero(); l.biases.len()]).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|v| v.fill(T::zero()));
    }

    pub fn scale(&mut self, k: T) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.iter().all(|g| g.is_finite()))
    }

    pub fn max_abs(&self) -> T {
        self.weights.iter().chain(&self.biases).flat_map(|v| v.iter()).fold(T::zero(), |m, g| m.max(g.abs()))
    }
}

impl<T: Real> Model<T> {
    /// Zero-initialized model for an explicit layer stack.
    pub fn zeros(input_dims: Dims, specs: &[LayerSpec]) -> Result<Self> {
        let shapes = resolve_shapes(input_dims, specs)?;
        let layers = specs
            .iter()
            .zip(shapes)
            .map(|(spec, (in_shape, out_shape))| Layer {
                spec: *spec,
                in_shape,
                out_shape,
                weights: vec![T::zero(); spec.weight_len()],
                biases: vec![T::zero(); spec.out_channels],
            })
            .collect();
        Ok(Self { input_dims, layers })
    }

    /// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn init(input_dims: Dims, specs: &[LayerSpec], init_seed: u64) -> Result<Self> {
        Self::init_with(input_dims, specs, init_seed, WeightInit::Glorot)
    }

    /// Uniform weights with the bound chosen by `scheme`, zero biases.
    pub fn init_with(input_dims: Dims, specs: &[LayerSpec], init_seed: u64, scheme: WeightInit) -> Result<Self> {
        let mut model = Self::zeros(input_dims, specs)?;
        let mut rng = seed::rng(init_seed);
        for layer in &mut model.layers {
            let k = if layer.spec.kind.is_conv() { conv::KERNEL_VOLUME } else { 1 };
            let fan = match scheme {
                WeightInit::Glorot => (layer.spec.in_channels + layer.spec.out_channels) * k,
                WeightInit::He => layer.spec.in_channels * k,
            };
            let limit = libm::sqrt(6.0 / fan.max(1) as f64);
            for w in &mut layer.weights {
                *w = T::from_f64(rng.random_range(-limit..limit));
            }
        }
        Ok(model)
    }

    pub fn with_architecture(input_dims: Dims, arch: &Architecture, init_seed: u64) -> Result<Self> {
        Self::init(input_dims, &arch.layer_specs(input_dims), init_seed)
    }

    /// Rebuilds a model from stored layer specs and parameters.
    pub fn from_parts(input_dims: Dims, specs: &[LayerSpec], params: Vec<(Vec<T>, Vec<T>)>) -> Result<Self> {
        let mut model = Self::zeros(input_dims, specs)?;
        if params.len() != specs.len() {
            return Err(Error::ShapeMismatch(format!("{} parameter sets for {} layers", params.len(), specs.len())));
        }
        for (i, (layer, (w, b))) in model.layers.iter_mut().zip(params).enumerate() {
            if w.len() != layer.weights.len() || b.len() != layer.biases.len() {
                return Err(Error::ShapeMismatch(format!("layer {i} parameter lengths")));
            }
            layer.weights = w;
            layer.biases = b;
        }
        model.validate()?;
        Ok(model)
    }

    /// Rejects models with non-finite parameters.
    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        Ok(())
    }

    pub fn input_dims(&self) -> Dims {
        self.input_dims
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.out_channels)
    }

    /// Same model in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            input_dims: self.input_dims,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    in_shape: l.in_shape,
                    out_shape: l.out_shape,
                    weights: l.weights.iter().map(|w| U::from_f64(w.as_f64())).collect(),
                    biases: l.biases.iter().map(|b| U::from_f64(b.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Converts an image into the network's input tensor.
    pub fn input_tensor(&self, image: &Volume) -> Result<Vec<T>> {
        if image.dims() != self.input_dims {
            return Err(Error::ShapeMismatch(format!("image {} vs model input {}", image.dims(), self.input_dims)));
        }
        Ok(image.data().iter().map(|&v| T::from_f64(v as f64)).collect())
    }

    pub fn forward(&self, image: &Volume) -> Result<Trace<T>> {
        let x = self.input_tensor(image)?;
        Ok(self.forward_tensor(x))
    }

    /// Forward pass over a raw input tensor of the right length.
    pub fn forward_tensor(&self, input: Vec<T>) -> Trace<T> {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = input;
        let mut scores = Vec::new();
        for layer in &self.layers {
            let z = layer.affine(&x);
            let a = match layer.spec.activation {
                Activation::Relu => z.iter().map(|&v| v.max(T::zero())).collect(),
                Activation::Softmax => {
                    scores = softmax(&z);
                    Vec::new()
                }
                Activation::None => z.clone(),
            };
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        if scores.is_empty() {
            scores = x;
        }
        Trace { inputs, pre, scores }
    }

    /// Class probabilities only.
    pub fn predict(&self, image: &Volume) -> Result<Vec<T>> {
        Ok(self.forward(image)?.scores)
    }

    /// Accumulates the cross-entropy gradient of one sample into `grads` and
    /// returns its loss. The final layer must be a softmax layer.
    pub fn backward(&self, trace: &Trace<T>, label: usize, grads: &mut Gradients<T>) -> Result<f64> {
        self.check_trace(trace)?;
        if label >= self.num_classes() {
            return Err(Error::InvalidSpec(format!("label {label} out of range")));
        }
        let last = self.layers.last().expect("validated non-empty");
        if last.spec.activation != Activation::Softmax {
            return Err(Error::InvalidSpec("backward requires a softmax output layer".into()));
        }
        let loss = bce_loss(&trace.scores, label);
        // d loss / d logits for softmax + cross-entropy
        let mut delta: Vec<T> = trace.scores.clone();
        delta[label] -= T::one();

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &trace.inputs[li];
            let need_input_grad = li > 0;
            let mut grad_in = if need_input_grad { vec![T::zero(); input.len()] } else { Vec::new() };
            match layer.spec.kind {
                LayerKind::Dense => {
                    let n_in = input.len();
                    let gw = &mut grads.weights[li];
                    for (j, &d) in delta.iter().enumerate() {
                        grads.biases[li][j] += d;
                        if d == T::zero() {
                            continue;
                        }
                        let row = &mut gw[j * n_in..(j + 1) * n_in];
                        for (g, &x) in row.iter_mut().zip(input) {
                            *g += d * x;
                        }
                        if need_input_grad {
                            let wrow = &layer.weights[j * n_in..(j + 1) * n_in];
                            for (gi, &w) in grad_in.iter_mut().zip(wrow) {
                                *gi += d * w;
                            }
                        }
                    }
                }
                LayerKind::Conv3d | LayerKind::Conv3dStrided => {
                    let g = layer.geometry();
                    conv::backward_params(&g, input, &delta, &mut grads.weights[li], &mut grads.biases[li]);
                    if need_input_grad {
                        conv::backward_input(&g, &delta, &layer.weights, &mut grad_in);
                    }
                }
            }
            if need_input_grad {
                // input of layer li is the activation of layer li-1
                let prev = &self.layers[li - 1];
                if prev.spec.activation == Activation::Relu {
                    for (gi, &z) in grad_in.iter_mut().zip(&trace.pre[li - 1]) {
                        if z <= T::zero() {
                            *gi = T::zero();
                        }
                    }
                }
                delta = grad_in;
            }
        }
        Ok(loss)
    }

    fn check_trace(&self, trace: &Trace<T>) -> Result<()> {
        let n = self.layers.len();
        if trace.inputs.len() != n || trace.pre.len() != n {
            return Err(Error::ShapeMismatch("trace layer count".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if trace.inputs[i].len() != l.in_shape.len() || trace.pre[i].len() != l.out_shape.len() {
                return Err(Error::ShapeMismatch(format!("stale trace at layer {i}")));
            }
        }
        Ok(())
    }

    /// Mean cross-entropy loss over labelled tensors; used by finite
    /// difference checks.
    pub fn loss_on(&self, input: &[T], label: usize) -> f64 {
        bce_loss(&self.forward_tensor(input.to_vec()).scores, label)
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<f64> = z.iter().map(|&v| libm::exp((v - m).as_f64())).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| T::from_f64(v / s)).collect()
}

/// Cross-entropy of the true class: `-ln(max(p_label, 1e-12))`.
pub fn bce_loss<T: Real>(scores: &[T], label: usize) -> f64 {
    -libm::log(scores[label].as_f64().max(LOSS_EPS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::layer::LayerSpec;

    fn tiny_specs(d: Dims) -> Vec<LayerSpec> {
        Architecture { blocks: 2, channels: 2, hidden_units: 3, classes: 2 }.layer_specs(d)
    }

    #[test]
    fn symmetric_logits_give_half() {
        let p = softmax(&[0.0f64, 0.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn zero_model_is_indifferent() {
        let d = Dims::cube(4);
        let m = Model::<f64>::zeros(d, &tiny_specs(d)).unwrap();
        let img = Volume::new(d, 1.0, (0..64).map(|i| i as f32 / 7.0).collect()).unwrap();
        let p = m.predict(&img).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn loss_values() {
        assert_eq!(bce_loss(&[0.0f64, 1.0], 1), 0.0);
        assert!((bce_loss(&[0.5f64, 0.5], 0) - core::f64::consts::LN_2).abs() < 1e-6);
        let e_inv = libm::exp(-1.0);
        assert!((bce_loss(&[1.0 - e_inv, e_inv], 1) - 1.0).abs() < 1e-6);
        // clamped
        assert!((bce_loss(&[1.0f64, 0.0], 1) - 27.631021115928547).abs() < 1e-9);
    }

    #[test]
    fn rejects_mismatched_image_and_stale_trace() {
        let d = Dims::cube(4);
        let m = Model::<f64>::init(d, &tiny_specs(d), 1).unwrap();
        assert!(m.forward(&Volume::zeros(Dims::cube(5), 1.0)).is_err());
        let other = Model::<f64>::init(Dims::cube(6), &tiny_specs(Dims::cube(6)), 1).unwrap();
        let trace = other.forward(&Volume::zeros(Dims::cube(6), 1.0)).unwrap();
        let mut g = Gradients::zeros_like(&m);
        assert!(m.backward(&trace, 0, &mut g).is_err());
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let d = Dims::cube(2);
        let specs = [LayerSpec::dense(8, 2, Activation::Softmax)];
        let mut w = vec![0.0f64; 16];
        w[3] = f64::NAN;
        assert!(Model::from_parts(d, &specs, vec![(w, vec![0.0; 2])]).is_err());
    }
}
