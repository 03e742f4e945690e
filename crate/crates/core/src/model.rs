//! The conv-block network family:
//!
//! ```text
//! INPUT -> [[CONV -> RELU] x2 -> MAXPOOL (-> DROPOUT)] x N -> FC -> RELU (-> DROPOUT) -> FC
//! ```
//!
//! with `N` in `1..=6`. Dropout layers exist only when the rate is positive.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::GradCheckTarget;
use crate::init::{initialize, InitializerKind};
use crate::layers::*;
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAX_BLOCKS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_blocks: usize,
    pub kernel_size: usize,
    pub filters_per_block: Vec<usize>,
    pub fc_width: usize,
    pub dropout_rate: f64,
    pub initializer: InitializerKind,
    pub input_shape: [usize; 3],
    pub n_classes: usize,
}

/// 32, 64, 128, 256, 256, 256, ...
pub fn default_filters(n_blocks: usize) -> Vec<usize> {
    (0..n_blocks).map(|b| (32usize << b.min(3)).min(256)).collect()
}

impl ModelSpec {
    /// Spec with default kernel size 3, doubling filters, 128 hidden units,
    /// no dropout and `he_uniform` kernels.
    pub fn new(n_blocks: usize, input_shape: [usize; 3], n_classes: usize) -> Self {
        ModelSpec {
            n_blocks,
            kernel_size: 3,
            filters_per_block: default_filters(n_blocks),
            fc_width: 128,
            dropout_rate: 0.0,
            initializer: InitializerKind::HeUniform,
            input_shape,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BLOCKS).contains(&self.n_blocks) {
            return Err(Error::invalid(format!("n_blocks must be in 1..={MAX_BLOCKS}, got N={}", self.n_blocks)));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if self.filters_per_block.len() != self.n_blocks || self.filters_per_block.contains(&0) {
            return Err(Error::invalid(format!(
                "filters_per_block must list {} positive counts, got {:?}",
                self.n_blocks, self.filters_per_block
            )));
        }
        if self.fc_width == 0 {
            return Err(Error::invalid("fc_width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout_rate must be in [0,1), got {}", self.dropout_rate)));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        let [h, w, c] = self.input_shape;
        if c == 0 {
            return Err(Error::invalid("input must have at least one channel"));
        }
        let scale = 1usize << self.n_blocks;
        if h / scale < 1 || w / scale < 1 {
            return Err(Error::invalid(format!(
                "input {h}x{w} collapses below 1x1 after N={} poolings",
                self.n_blocks
            )));
        }
        Ok(())
    }

    /// Spatial side lengths `(h, w)` before the first block and after every pooling.
    pub fn spatial_trace(&self) -> Vec<(usize, usize)> {
        let [mut h, mut w, _] = self.input_shape;
        let mut trace = vec![(h, w)];
        for _ in 0..self.n_blocks {
            h /= 2;
            w /= 2;
            trace.push((h, w));
        }
        trace
    }

    pub fn flatten_len(&self) -> usize {
        let &(h, w) = self.spatial_trace().last().expect("trace is never empty");
        h * w * self.filters_per_block[self.n_blocks - 1]
    }

    /// Weight shapes in parameter order: 2N conv kernels, then the two FC matrices.
    pub fn weight_shapes(&self) -> Vec<Vec<usize>> {
        let k = self.kernel_size;
        let mut shapes = Vec::with_capacity(2 * self.n_blocks + 2);
        let mut cin = self.input_shape[2];
        for &f in &self.filters_per_block {
            shapes.push(vec![k, k, cin, f]);
            shapes.push(vec![k, k, f, f]);
            cin = f;
        }
        shapes.push(vec![self.flatten_len(), self.fc_width]);
        shapes.push(vec![self.fc_width, self.n_classes]);
        shapes
    }

    /// The full layer sequence.
    pub fn layers(&self) -> Vec<Layer> {
        let dropout = self.dropout_rate > 0.0;
        let mut layers = Vec::new();
        let mut param = 0;
        for _ in 0..self.n_blocks {
            for _ in 0..2 {
                layers.push(Layer::Conv { param });
                layers.push(Layer::Relu);
                param += 1;
            }
            layers.push(Layer::MaxPool);
            if dropout {
                layers.push(Layer::Dropout);
            }
        }
        layers.push(Layer::Dense { param });
        layers.push(Layer::Relu);
        if dropout {
            layers.push(Layer::Dropout);
        }
        layers.push(Layer::Dense { param: param + 1 });
        layers
    }

    /// Human-readable label such as `x3 Conv block (adamax he_normal)`.
    pub fn label(&self) -> String {
        format!("x{} Conv block", self.n_blocks)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    /// `param` indexes into [`ModelParams::layers`].
    Conv {
        param: usize,
    },
    Relu,
    MaxPool,
    Dropout,
    Dense {
        param: usize,
    },
}

/// Exact trainable scalar count (weights plus biases).
pub fn count_parameters(spec: &ModelSpec) -> usize {
    spec.weight_shapes().iter().map(|s| s.iter().product::<usize>() + s[s.len() - 1]).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayer<T> {
    pub id: String,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub layers: Vec<ParamLayer<T>>,
}

pub(crate) fn param_ids(spec: &ModelSpec) -> Vec<String> {
    let mut ids = Vec::new();
    for b in 1..=spec.n_blocks {
        ids.push(format!("block{b}_conv1"));
        ids.push(format!("block{b}_conv2"));
    }
    ids.push("fc_hidden".into());
    ids.push("fc_out".into());
    ids
}

/// Initializes every weight tensor from its own substream keyed by layer index;
/// biases start at zero.
pub fn build<T: Scalar>(spec: &ModelSpec, seed: SeedStream) -> Result<ModelParams<T>> {
    spec.validate()?;
    let init = seed.named("init");
    let layers = spec
        .weight_shapes()
        .into_iter()
        .zip(param_ids(spec))
        .enumerate()
        .map(|(i, (shape, id))| {
            let weights = initialize(spec.initializer, &shape, &mut init.child(i as u64).rng())?;
            let bias = Tensor::zeros(&[shape[shape.len() - 1]]);
            Ok(ParamLayer { id, weights, bias })
        })
        .collect::<Result<_>>()?;
    Ok(ModelParams { layers })
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| ParamLayer {
                    id: l.id.clone(),
                    weights: Tensor::zeros(l.weights.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn add_assign(&mut self, other: &ModelParams<T>) -> Result<()> {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.scale(factor);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| ParamLayer { id: l.id.clone(), weights: l.weights.cast(), bias: l.bias.cast() })
                .collect(),
        }
    }

    /// Checks tensor shapes against the spec.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let shapes = spec.weight_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::shape(
                "model params",
                format!("spec needs {} layers, params have {}", shapes.len(), self.layers.len()),
            ));
        }
        for (shape, layer) in shapes.iter().zip(&self.layers) {
            layer.weights.expect_shape("model params", shape)?;
            layer.bias.expect_shape("model params", &shape[shape.len() - 1..])?;
        }
        Ok(())
    }
}

enum Cache<T> {
    Conv(Conv2dCache<T>),
    Relu(ReluCache<T>),
    Pool(MaxPoolCache),
    Dropout(DropoutCache<T>),
    Dense(DenseCache<T>),
}

/// One image's forward pass with everything backward needs.
pub struct Trace<T> {
    pub logits: Tensor<T>,
    caches: Vec<Cache<T>>,
}

fn check_image<T: Scalar>(spec: &ModelSpec, image: &Tensor<T>) -> Result<()> {
    if image.shape() != spec.input_shape {
        return Err(Error::shape(
            "model forward",
            format!("image {:?} does not match input shape {:?}", image.shape(), spec.input_shape),
        ));
    }
    Ok(())
}

pub fn forward_traced<T: Scalar, R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    image: &Tensor<T>,
    training: bool,
    rng: &mut R,
) -> Result<Trace<T>> {
    check_image(spec, image)?;
    let mut x = image.clone();
    let mut caches = Vec::new();
    for layer in spec.layers() {
        let (out, cache) = match layer {
            Layer::Conv { param } => {
                let p = &params.layers[param];
                let io = conv2d_forward(&x, &p.weights, &p.bias)?;
                (io.output, Cache::Conv(io.cache))
            }
            Layer::Relu => {
                let io = relu_forward(&x);
                (io.output, Cache::Relu(io.cache))
            }
            Layer::MaxPool => {
                let io = maxpool2d_forward(&x)?;
                (io.output, Cache::Pool(io.cache))
            }
            Layer::Dropout => {
                let io = dropout_forward(&x, spec.dropout_rate, training, rng)?;
                (io.output, Cache::Dropout(io.cache))
            }
            Layer::Dense { param } => {
                let p = &params.layers[param];
                let io = dense_forward(&x, &p.weights, &p.bias)?;
                (io.output, Cache::Dense(io.cache))
            }
        };
        x = out;
        caches.push(cache);
    }
    Ok(Trace { logits: x, caches })
}

/// Accumulates `d(loss)/d(params)` for one traced example into `grads`.
pub fn backward_into<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    trace: Trace<T>,
    dlogits: Tensor<T>,
    grads: &mut ModelParams<T>,
) -> Result<()> {
    let mut g = dlogits;
    for (layer, cache) in spec.layers().into_iter().zip(trace.caches).rev() {
        g = match (layer, cache) {
            (Layer::Conv { param }, Cache::Conv(c)) => {
                let d = conv2d_backward(&c, &params.layers[param].weights, &g)?;
                grads.layers[param].weights.add_assign(&d.kernels)?;
                grads.layers[param].bias.add_assign(&d.bias)?;
                d.input
            }
            (Layer::Dense { param }, Cache::Dense(c)) => {
                let d = dense_backward(&c, &params.layers[param].weights, &g)?;
                grads.layers[param].weights.add_assign(&d.weights)?;
                grads.layers[param].bias.add_assign(&d.bias)?;
                d.input
            }
            (Layer::Relu, Cache::Relu(c)) => relu_backward(&c, &g)?,
            (Layer::MaxPool, Cache::Pool(c)) => maxpool2d_backward(&c, &g)?,
            (Layer::Dropout, Cache::Dropout(c)) => dropout_backward(&c, &g)?,
            _ => unreachable!("trace was produced from the same layer list"),
        };
    }
    Ok(())
}

/// Batched inference or training-mode forward pass returning `[batch, K]`
/// logits. Image `i` draws its dropout mask from `seed.child(i)`.
pub fn forward<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    images: &[Tensor<T>],
    training: bool,
    seed: SeedStream,
) -> Result<Tensor<T>> {
    if images.is_empty() {
        return Err(Error::invalid("empty image batch"));
    }
    params.check_against(spec)?;
    let rows: Vec<Tensor<T>> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| Ok(forward_traced(spec, params, img, training, &mut seed.child(i as u64).rng())?.logits))
        .collect::<Result<_>>()?;
    let data = rows.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::new(&[images.len(), spec.n_classes], data)
}

/// Loss and parameter gradient for a single labelled image.
pub fn loss_and_gradient<T: Scalar, R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    image: &Tensor<T>,
    label: usize,
    class_weights: Option<&[T]>,
    training: bool,
    rng: &mut R,
) -> Result<(T, ModelParams<T>)> {
    let trace = forward_traced(spec, params, image, training, rng)?;
    let (loss, dlogits) = softmax_cross_entropy(&trace.logits, label, class_weights)?;
    let mut grads = params.zeros_like();
    backward_into(spec, params, trace, dlogits, &mut grads)?;
    Ok((loss, grads))
}

/// Balanced heuristic `total / (K * count[c])`.
pub fn compute_class_weights(class_counts: &[usize]) -> Result<Vec<f64>> {
    if class_counts.is_empty() {
        return Err(Error::invalid("no classes to weight"));
    }
    if let Some(c) = class_counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} has no samples and cannot be weighted")));
    }
    let total: usize = class_counts.iter().sum();
    let k = class_counts.len() as f64;
    Ok(class_counts.iter().map(|&n| total as f64 / (k * n as f64)).collect())
}

/// End-to-end loss of one image as a function of every parameter tensor,
/// for finite-difference checking.
pub struct ModelLossCheck {
    pub spec: ModelSpec,
    pub params: ModelParams<f64>,
    pub image: Tensor<f64>,
    pub label: usize,
    pub class_weights: Option<Vec<f64>>,
    /// Dropout runs in training mode with a mask fixed by this seed.
    pub dropout_seed: u64,
}

impl ModelLossCheck {
    fn unflatten(&self, args: &[Tensor<f64>]) -> ModelParams<f64> {
        let mut params = self.params.clone();
        for (dst, src) in params.tensors_mut().zip(args) {
            *dst = src.clone();
        }
        params
    }
}

impl GradCheckTarget for ModelLossCheck {
    fn arguments(&self) -> Vec<Tensor<f64>> {
        self.params.tensors().cloned().collect()
    }

    fn forward(&self, args: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let params = self.unflatten(args);
        let mut rng = SeedStream::new(self.dropout_seed).rng();
        let trace = forward_traced(&self.spec, &params, &self.image, true, &mut rng)?;
        let (loss, _) = softmax_cross_entropy(&trace.logits, self.label, self.class_weights.as_deref())?;
        Tensor::new(&[1], vec![loss])
    }

    fn backward(&self, args: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let params = self.unflatten(args);
        let mut rng = SeedStream::new(self.dropout_seed).rng();
        let (_, mut grads) = loss_and_gradient(
            &self.spec,
            &params,
            &self.image,
            self.label,
            self.class_weights.as_deref(),
            true,
            &mut rng,
        )?;
        grads.scale(upstream.data()[0]);
        Ok(grads.tensors().cloned().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_filter_schedule() {
        assert_eq!(default_filters(6), vec![32, 64, 128, 256, 256, 256]);
    }

    #[test]
    fn single_block_shapes() {
        let spec = ModelSpec::new(1, [200, 200, 3], 6);
        assert_eq!(spec.weight_shapes(), vec![vec![3, 3, 3, 32], vec![3, 3, 32, 32], vec![320_000, 128], vec![128, 6]]);
        assert_eq!(spec.spatial_trace(), vec![(200, 200), (100, 100)]);
    }

    #[test]
    fn six_block_trace() {
        let spec = ModelSpec::new(6, [200, 200, 3], 6);
        let sides: Vec<usize> = spec.spatial_trace().iter().map(|&(h, _)| h).collect();
        assert_eq!(sides, vec![200, 100, 50, 25, 12, 6, 3]);
    }

    #[test]
    fn rejects_block_counts_outside_range() {
        for n in [0, 7, 8] {
            let mut spec = ModelSpec::new(1, [200, 200, 3], 6);
            spec.n_blocks = n;
            spec.filters_per_block = default_filters(n);
            let err = spec.validate().unwrap_err();
            assert!(err.to_string().contains(&format!("N={n}")), "{err}");
        }
    }

    #[test]
    fn rejects_spatial_collapse() {
        let spec = ModelSpec::new(4, [8, 8, 3], 2);
        let err = build::<f32>(&spec, SeedStream::new(0)).unwrap_err();
        assert!(err.to_string().contains("N=4"), "{err}");
    }

    #[test]
    fn layer_grammar() {
        let mut spec = ModelSpec::new(2, [16, 16, 3], 3);
        let conv = spec.layers().iter().filter(|l| matches!(l, Layer::Conv { .. })).count();
        let dense = spec.layers().iter().filter(|l| matches!(l, Layer::Dense { .. })).count();
        assert_eq!((conv, dense), (4, 2));
        assert!(!spec.layers().contains(&Layer::Dropout));
        spec.dropout_rate = 0.2;
        assert_eq!(spec.layers().iter().filter(|&&l| l == Layer::Dropout).count(), 3);
    }

    #[test]
    fn parameter_counts() {
        let spec = ModelSpec::new(1, [200, 200, 3], 6);
        let p: usize = count_parameters(&spec);
        assert_eq!(p, 896 + (9 * 32 * 32 + 32) + (320_000 * 128 + 128) + 774);
    }

    #[test]
    fn class_weights() {
        assert_eq!(compute_class_weights(&[10, 10, 10]).unwrap(), vec![1.0; 3]);
        let w = compute_class_weights(&[100, 50, 50]).unwrap();
        for (a, e) in w.iter().zip([2.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0]) {
            assert!((a - e).abs() < 1e-12);
        }
        let w = compute_class_weights(&[1, 999]).unwrap();
        assert!(w[0] > w[1]);
        assert!(compute_class_weights(&[3, 0]).is_err());
    }

    #[test]
    fn forward_rejects_wrong_image() {
        let spec = ModelSpec::new(1, [8, 8, 3], 2);
        let params = build::<f32>(&spec, SeedStream::new(0)).unwrap();
        let bad = Tensor::zeros(&[8, 8, 1]);
        assert!(forward(&spec, &params, &[bad], false, SeedStream::new(0)).is_err());
    }
}
