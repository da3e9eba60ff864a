use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerCache, LayerSpec, Shape};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Dropout rate used by the built-in architectures.
pub const DEFAULT_DROPOUT: f64 = 0.3;

/// Batch size used for inference-only passes.
pub const INFERENCE_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Three conv blocks `[16, 32, 64]`, two pools, 64 hidden units.
    SmallCnn,
    /// Four conv blocks `[32, 64, 128, 128]`, three pools, 200 hidden units.
    EnhancedCnn,
    Custom,
}

impl Architecture {
    pub fn default_filters(self) -> &'static [usize] {
        match self {
            Architecture::SmallCnn | Architecture::Custom => &[16, 32, 64],
            Architecture::EnhancedCnn => &[32, 64, 128, 128],
        }
    }

    pub fn default_hidden(self) -> usize {
        match self {
            Architecture::SmallCnn | Architecture::Custom => 64,
            Architecture::EnhancedCnn => 200,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::SmallCnn => "small_cnn",
            Architecture::EnhancedCnn => "enhanced_cnn",
            Architecture::Custom => "custom",
        }
    }
}

/// Conv-relu(-pool) blocks, pooling after every block but the last, then
/// dropout, a hidden dense layer and the softmax head.
pub fn cnn_specs(
    filters: &[usize],
    hidden: usize,
    n_classes: usize,
    dropout: f64,
) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for (i, &f) in filters.iter().enumerate() {
        specs.push(LayerSpec::Conv(f));
        specs.push(LayerSpec::Relu);
        if i + 1 < filters.len() {
            specs.push(LayerSpec::MaxPool);
        }
    }
    specs.extend([
        LayerSpec::Dropout(dropout),
        LayerSpec::Flatten,
        LayerSpec::Dense(hidden),
        LayerSpec::Relu,
        LayerSpec::Dense(n_classes),
        LayerSpec::Softmax,
    ]);
    specs
}

/// Ordered layer stack ending in a softmax over `n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    architecture: Architecture,
    input: Shape,
    n_classes: usize,
    layers: Vec<Layer>,
    /// `shapes[i]` is the per-sample input shape of layer `i`.
    shapes: Vec<Shape>,
    generation: u64,
}

/// Activations retained by [`Model::forward`] for [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    batch: usize,
    layers: Vec<LayerCache>,
    /// Pre-softmax outputs.
    pub logits: Tensor,
}

/// Parameter gradients in [`Model::params`] order, plus the input gradient
/// when it was requested.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Option<Tensor>,
}

impl Model {
    /// Builds one of the named architectures for an `(H, W, C)` input.
    pub fn build(
        architecture: Architecture,
        input_shape: (usize, usize, usize),
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::build_with(architecture, input_shape, n_classes, None, None, seed)
    }

    /// As [`Model::build`], with optional filter and hidden-width overrides.
    pub fn build_with(
        architecture: Architecture,
        input_shape: (usize, usize, usize),
        n_classes: usize,
        filters: Option<&[usize]>,
        hidden: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let filters = filters.unwrap_or(architecture.default_filters());
        if filters.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one conv block is required".into(),
            ));
        }
        let hidden = hidden.unwrap_or(architecture.default_hidden());
        let specs = cnn_specs(filters, hidden, n_classes, DEFAULT_DROPOUT);
        Self::from_specs(architecture, input_shape, &specs, n_classes, seed)
    }

    /// Builds an arbitrary stack; shapes are validated link by link.
    pub fn from_specs(
        architecture: Architecture,
        input_shape: (usize, usize, usize),
        specs: &[LayerSpec],
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let (h, w, c) = input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidArgument(format!(
                "empty input shape {input_shape:?}"
            )));
        }
        if n_classes < 2 {
            return Err(Error::InvalidArgument(
                "at least two classes are required".into(),
            ));
        }
        if specs.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::InvalidArgument("final layer must be softmax".into()));
        }
        let input = Shape::Spatial { h, w, c };
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        let mut shapes = Vec::with_capacity(specs.len() + 1);
        for (i, &spec) in specs.iter().enumerate() {
            let mut stream = rng::substream(seed, &[0x696e_6974, i as u64]);
            let (layer, next) = Layer::from_spec(spec, shape, &mut stream)
                .map_err(|e| Error::InvalidArgument(format!("layer {i}: {e}")))?;
            shapes.push(shape);
            layers.push(layer);
            shape = next;
        }
        if shape != Shape::Flat(n_classes) {
            return Err(Error::InvalidArgument(format!(
                "network emits {shape:?}, expected {n_classes} class scores"
            )));
        }
        shapes.push(shape);
        Ok(Self {
            architecture,
            input,
            n_classes,
            layers,
            shapes,
            generation: 0,
        })
    }

    /// Reassembles a model from already-initialised layers (checkpoint load).
    pub(crate) fn from_layers(
        architecture: Architecture,
        input_shape: (usize, usize, usize),
        n_classes: usize,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        let mut model = Self::from_specs(architecture, input_shape, &specs, n_classes, 0)?;
        for (slot, layer) in model.layers.iter_mut().zip(layers) {
            let expected: Vec<Vec<usize>> =
                slot.params().iter().map(|p| p.shape().to_vec()).collect();
            let found: Vec<Vec<usize>> =
                layer.params().iter().map(|p| p.shape().to_vec()).collect();
            if expected != found {
                return Err(Error::Dimension(format!(
                    "parameter shapes {found:?} do not fit layer expecting {expected:?}"
                )));
            }
            *slot = layer;
        }
        Ok(model)
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self.input {
            Shape::Spatial { h, w, c } => (h, w, c),
            Shape::Flat(_) => unreachable!("models always take spatial input"),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Per-sample input shape of each layer, followed by the output shape.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    /// Mutable parameters. Any cache produced before this call is stale.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.generation += 1;
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let expected = self
            .input
            .batched(batch.shape().first().copied().unwrap_or(0));
        if batch.shape() != expected.as_slice() {
            return Err(Error::Shape {
                expected,
                found: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Full forward pass keeping every activation needed for backward.
    ///
    /// `seed` selects the dropout masks; it is ignored when `training` is off.
    pub fn forward(
        &self,
        batch: &Tensor,
        training: bool,
        seed: u64,
    ) -> Result<(Tensor, ForwardCache)> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (i, layer) in self.layers[..last].iter().enumerate() {
            let mut stream = rng::substream(seed, &[0x6472_6f70, i as u64]);
            let (y, cache) = layer.forward(&x, self.shapes[i], training, &mut stream, true)?;
            caches.push(cache.expect("cache requested"));
            x = y;
        }
        let mut unused = rng::stream(0);
        let (probs, cache) =
            self.layers[last].forward(&x, self.shapes[last], training, &mut unused, true)?;
        caches.push(cache.expect("cache requested"));
        Ok((
            probs,
            ForwardCache {
                generation: self.generation,
                batch: batch.batch(),
                layers: caches,
                logits: x,
            },
        ))
    }

    /// Inference-mode probabilities, evaluated in chunks without caching.
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let n = batch.batch();
        let mut out = Vec::with_capacity(n * self.n_classes);
        let mut unused = rng::stream(0);
        let mut start = 0;
        while start < n {
            let end = (start + INFERENCE_BATCH).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let mut x = batch.gather(&idx)?;
            for (i, layer) in self.layers.iter().enumerate() {
                x = layer
                    .forward(&x, self.shapes[i], false, &mut unused, false)?
                    .0;
            }
            out.extend_from_slice(x.data());
            start = end;
        }
        Tensor::new(vec![n, self.n_classes], out)
    }

    /// Class with the highest probability for each sample.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(self.predict_proba(batch)?.argmax_rows())
    }

    /// Backpropagates a gradient with respect to the pre-softmax logits.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Gradients> {
        self.backward_impl(cache, grad_logits, false)
    }

    /// As [`Model::backward`], also returning the gradient w.r.t. the input batch.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache,
        grad_logits: &Tensor,
    ) -> Result<Gradients> {
        self.backward_impl(cache, grad_logits, true)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        grad_logits: &Tensor,
        want_input: bool,
    ) -> Result<Gradients> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache(
                "cache belongs to a different model".into(),
            ));
        }
        let expected = vec![cache.batch, self.n_classes];
        if grad_logits.shape() != expected.as_slice() {
            return Err(Error::Shape {
                expected,
                found: grad_logits.shape().to_vec(),
            });
        }
        let last = self.layers.len() - 1;
        let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        let mut grad = grad_logits.clone();
        let mut input_grad = None;
        for i in (0..last).rev() {
            let need = want_input || i > 0;
            let (dx, grads) =
                self.layers[i].backward(self.shapes[i], &cache.layers[i], &grad, need)?;
            per_layer[i] = grads;
            match dx {
                Some(dx) if i > 0 => grad = dx,
                Some(dx) => input_grad = Some(dx),
                None => {}
            }
        }
        Ok(Gradients {
            params: per_layer.into_iter().flatten().collect(),
            input: input_grad,
        })
    }
}
