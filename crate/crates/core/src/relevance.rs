//! Layer-wise relevance propagation with the α/β rule, mean heatmaps and
//! top-relevance windowing.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::conv;
use crate::net::{Layer, LayerKind, Model};
use crate::real::Real;
use crate::record::Class;
use crate::volume::{Dims, Volume};

/// Default number of histogram bins for [`top_relevance_threshold`].
pub const RELEVANCE_BINS: usize = 256;
/// Default fraction of total relevance kept by the display window.
pub const TOP_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrpParams {
    pub alpha: f64,
    pub beta: f64,
    /// Added to the magnitude of every denominator.
    pub epsilon: f64,
}

impl Default for LrpParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.0, epsilon: 1e-9 }
    }
}

impl LrpParams {
    pub fn validate(&self) -> Result<()> {
        if (self.alpha - self.beta - 1.0).abs() > 1e-12 || self.beta < 0.0 || !(self.epsilon >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "LRP needs alpha - beta = 1, beta >= 0, epsilon >= 0 (got {}, {}, {})",
                self.alpha, self.beta, self.epsilon
            )));
        }
        Ok(())
    }
}

/// Input relevance together with the per-layer relevance totals.
#[derive(Debug, Clone, PartialEq)]
pub struct Relevance {
    pub map: Volume,
    /// Output-layer relevance the propagation started from.
    pub target_score: f64,
    /// Total relevance entering each layer from above, from the output layer
    /// down to the input; the last entry is the input-map total.
    pub layer_totals: Vec<f64>,
}

/// A heatmap with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    pub relevance: Volume,
    pub image_id: String,
    pub session_id: String,
    /// Class whose score was explained.
    pub target: Class,
    pub truth: Class,
    pub target_score: f64,
}

fn split_signs<T: Real>(v: &[T]) -> (Vec<T>, Vec<T>) {
    let pos = v.iter().map(|&x| x.max(T::zero())).collect();
    let neg = v.iter().map(|&x| x.min(T::zero())).collect();
    (pos, neg)
}

/// `W·x` without bias.
fn apply<T: Real>(layer: &Layer<T>, w: &[T], x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); layer.out_shape.len()];
    match layer.spec.kind {
        LayerKind::Dense => {
            let n_in = x.len();
            for (j, o) in out.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                *o = T::from_f64(row.iter().zip(x).map(|(&a, &b)| (a * b).as_f64()).sum());
            }
        }
        _ => {
            let zeros = vec![T::zero(); layer.spec.out_channels];
            conv::forward(&layer.geometry(), x, w, &zeros, &mut out);
        }
    }
    out
}

/// `Wᵀ·s`.
fn apply_t<T: Real>(layer: &Layer<T>, w: &[T], s: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); layer.in_shape.len()];
    match layer.spec.kind {
        LayerKind::Dense => {
            let n_in = out.len();
            for (j, &sj) in s.iter().enumerate() {
                if sj == T::zero() {
                    continue;
                }
                for (o, &wij) in out.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *o += wij * sj;
                }
            }
        }
        _ => conv::backward_input(&layer.geometry(), s, w, &mut out),
    }
    out
}

/// Bias feeding output element `j`; conv biases are shared per channel.
fn bias_at<T: Real>(layer: &Layer<T>, j: usize) -> T {
    match layer.spec.kind {
        LayerKind::Dense => layer.biases[j],
        _ => layer.biases[j / layer.out_shape.dims.len()],
    }
}

/// Redistributes `upper` (relevance of the layer's outputs) onto its inputs.
fn propagate_layer<T: Real>(layer: &Layer<T>, x: &[T], upper: &[T], p: &LrpParams) -> Vec<T> {
    let (xp, xn) = split_signs(x);
    let (wp, wn) = split_signs(&layer.weights);
    let eps = T::from_f64(p.epsilon);
    let mut r = vec![T::zero(); x.len()];

    // positive contributions: x⁺w⁺ + x⁻w⁻ (+ positive bias)
    let mut z = apply(layer, &wp, &xp);
    for (zi, v) in z.iter_mut().zip(apply(layer, &wn, &xn)) {
        *zi += v;
    }
    let s: Vec<T> = z
        .iter()
        .zip(upper)
        .enumerate()
        .map(|(j, (&zj, &rj))| {
            let zj = zj + bias_at(layer, j).max(T::zero());
            if zj > T::zero() {
                rj / (zj + eps)
            } else {
                T::zero()
            }
        })
        .collect();
    let (cp, cn) = (apply_t(layer, &wp, &s), apply_t(layer, &wn, &s));
    let alpha = T::from_f64(p.alpha);
    for i in 0..r.len() {
        r[i] = alpha * (xp[i] * cp[i] + xn[i] * cn[i]);
    }

    if p.beta > 0.0 {
        // negative contributions: x⁺w⁻ + x⁻w⁺ (+ negative bias)
        let mut z = apply(layer, &wn, &xp);
        for (zi, v) in z.iter_mut().zip(apply(layer, &wp, &xn)) {
            *zi += v;
        }
        let s: Vec<T> = z
            .iter()
            .zip(upper)
            .enumerate()
            .map(|(j, (&zj, &rj))| {
                let zj = zj + bias_at(layer, j).min(T::zero());
                if zj < T::zero() {
                    rj / (zj - eps)
                } else {
                    T::zero()
                }
            })
            .collect();
        let (cn, cp) = (apply_t(layer, &wn, &s), apply_t(layer, &wp, &s));
        let beta = T::from_f64(p.beta);
        for i in 0..r.len() {
            r[i] -= beta * (xp[i] * cn[i] + xn[i] * cp[i]);
        }
    }
    r
}

fn total<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64()).sum()
}

/// Explains the pre-softmax score of class `target` for one image.
///
/// Relevance starts at the target score and passes through activations
/// unchanged. Outputs with no contribution of the relevant sign pass zero
/// relevance downward.
pub fn lrp<T: Real>(model: &Model<T>, image: &Volume, target: usize, params: &LrpParams) -> Result<Relevance> {
    params.validate()?;
    check_target(model, target)?;
    let trace = model.forward(image)?;
    let layers = model.layers();
    let logits = &trace.pre[layers.len() - 1];
    let mut r = vec![T::zero(); logits.len()];
    r[target] = logits[target];
    propagate(layers, &trace.inputs, r, logits[target].as_f64(), image, params)
}

/// Like [`lrp`], but starts from the margin `z_target - max_{j≠target} z_j`
/// by folding the difference of the two output rows into one unit.
///
/// The margin of the predicted class is never negative, so its heatmap is
/// non-negative under the alpha-one rule even when every logit is negative.
pub fn lrp_margin<T: Real>(model: &Model<T>, image: &Volume, target: usize, params: &LrpParams) -> Result<Relevance> {
    params.validate()?;
    check_target(model, target)?;
    let trace = model.forward(image)?;
    let layers = model.layers();
    let top = layers.len() - 1;
    let logits = &trace.pre[top];
    let rival = (0..logits.len())
        .filter(|&j| j != target)
        .max_by(|&a, &b| logits[a].partial_cmp(&logits[b]).unwrap_or(core::cmp::Ordering::Equal).then(b.cmp(&a)))
        .ok_or_else(|| Error::InvalidSpec("margin needs at least two classes".into()))?;
    let out = &layers[top];
    if out.spec.kind != LayerKind::Dense {
        return Err(Error::InvalidSpec("margin relevance needs a dense output layer".into()));
    }
    let n_in = out.in_shape.len();
    let row = |j: usize| &out.weights[j * n_in..(j + 1) * n_in];
    let mut folded = out.clone();
    folded.weights = row(target).iter().zip(row(rival)).map(|(&a, &b)| a - b).collect();
    folded.biases = vec![out.biases[target] - out.biases[rival]];
    folded.spec.out_channels = 1;
    folded.out_shape.channels = 1;
    let margin = logits[target] - logits[rival];
    let mut stack: Vec<Layer<T>> = layers[..top].to_vec();
    stack.push(folded);
    propagate(&stack, &trace.inputs, vec![margin], margin.as_f64(), image, params)
}

fn check_target<T: Real>(model: &Model<T>, target: usize) -> Result<()> {
    if target >= model.num_classes() {
        return Err(Error::InvalidSpec(format!("target class {target} out of range")));
    }
    Ok(())
}

fn propagate<T: Real>(
    layers: &[Layer<T>],
    inputs: &[Vec<T>],
    mut r: Vec<T>,
    target_score: f64,
    image: &Volume,
    params: &LrpParams,
) -> Result<Relevance> {
    if !target_score.is_finite() {
        return Err(Error::NonFinite("target score"));
    }
    let mut layer_totals = vec![total(&r)];
    for (li, layer) in layers.iter().enumerate().rev() {
        r = propagate_layer(layer, &inputs[li], &r, params);
        layer_totals.push(total(&r));
    }
    let data: Vec<f32> = r.iter().map(|v| v.as_f64() as f32).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("relevance"));
    }
    Ok(Relevance { map: Volume::new(image.dims(), image.spacing_mm(), data)?, target_score, layer_totals })
}

/// Voxelwise arithmetic mean of equally shaped maps.
pub fn mean_heatmap<'a>(maps: impl IntoIterator<Item = &'a Volume>) -> Result<Volume> {
    let mut it = maps.into_iter();
    let first = it.next().ok_or(Error::Empty("heatmap list"))?;
    let mut acc: Vec<f64> = first.data().iter().map(|&v| v as f64).collect();
    let mut n = 1usize;
    for m in it {
        first.ensure_same_dims(m)?;
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a += v as f64;
        }
        n += 1;
    }
    let data = acc.into_iter().map(|a| (a / n as f64) as f32).collect();
    Volume::new(first.dims(), first.spacing_mm(), data)
}

/// Lower edge of the histogram bin at which the relevance mass accumulated
/// from the top first reaches `fraction` of the total.
///
/// Bins are `[k·w, (k+1)·w)` over `[0, max]` with `w = max / bins`; the
/// maximum falls into the last bin. Each bin's mass is the sum of its values.
pub fn top_relevance_threshold(map: &Volume, fraction: f64, bins: usize) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) || bins == 0 {
        return Err(Error::InvalidSpec(format!("fraction {fraction} must lie in (0, 1] with bins > 0")));
    }
    if map.data().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidSpec("relevance map must be non-negative".into()));
    }
    let max = map.max() as f64;
    let total = map.sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("total relevance is zero".into()));
    }
    let width = max / bins as f64;
    let mut mass = vec![0.0f64; bins];
    for &v in map.data() {
        if v > 0.0 {
            let b = ((v as f64 / width) as usize).min(bins - 1);
            mass[b] += v as f64;
        }
    }
    let target = fraction * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    for b in (0..bins).rev() {
        acc += mass[b];
        if mass[b] > 0.0 && acc >= target {
            return Ok(b as f64 * width);
        }
    }
    // unreachable for positive totals; the lowest occupied bin covers all mass
    Ok(0.0)
}

/// Binary mask of positive voxels at or above the top-`fraction` threshold.
pub fn relevance_mask(map: &Volume, fraction: f64) -> Result<Volume> {
    relevance_mask_with_bins(map, fraction, RELEVANCE_BINS)
}

pub fn relevance_mask_with_bins(map: &Volume, fraction: f64, bins: usize) -> Result<Volume> {
    let t = top_relevance_threshold(map, fraction, bins)?;
    Ok(map.map(|v| if v > 0.0 && v as f64 >= t { 1.0 } else { 0.0 }))
}

/// Mask voxels with at least one 6-neighbour outside the mask or the grid.
pub fn mask_boundary(mask: &Volume) -> Vec<(usize, usize, usize)> {
    let d = mask.dims();
    let inside = |x: isize, y: isize, z: isize| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < d.nx
            && (y as usize) < d.ny
            && (z as usize) < d.nz
            && mask.get(x as usize, y as usize, z as usize) > 0.0
    };
    let mut out = Vec::new();
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                if mask.get(x, y, z) == 0.0 {
                    continue;
                }
                let (xi, yi, zi) = (x as isize, y as isize, z as isize);
                let n6 = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                if n6.iter().any(|&(dx, dy, dz)| !inside(xi + dx, yi + dy, zi + dz)) {
                    out.push((x, y, z));
                }
            }
        }
    }
    out
}

/// Fraction of the voxels of `selection` lying within Euclidean distance
/// `radius` (in voxels) of the boundary of `brain_mask`.
pub fn boundary_focus(selection: &Volume, brain_mask: &Volume, radius: f64) -> Result<f64> {
    selection.ensure_same_dims(brain_mask)?;
    let d: Dims = brain_mask.dims();
    let mut near = vec![false; d.len()];
    let r = libm::ceil(radius) as isize;
    for (bx, by, bz) in mask_boundary(brain_mask) {
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if ((dx * dx + dy * dy + dz * dz) as f64) > radius * radius {
                        continue;
                    }
                    let (x, y, z) = (bx as isize + dx, by as isize + dy, bz as isize + dz);
                    if x < 0 || y < 0 || z < 0 || x >= d.nx as isize || y >= d.ny as isize || z >= d.nz as isize {
                        continue;
                    }
                    near[d.index(x as usize, y as usize, z as usize)] = true;
                }
            }
        }
    }
    let (mut hit, mut count) = (0usize, 0usize);
    for (i, &v) in selection.data().iter().enumerate() {
        if v > 0.0 {
            count += 1;
            if near[i] {
                hit += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Empty("selection mask"));
    }
    Ok(hit as f64 / count as f64)
}
