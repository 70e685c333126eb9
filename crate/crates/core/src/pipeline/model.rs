//! The convolutional feature extractor Ψ and the dense head that turns its
//! features into a binary prediction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// 2×2 max-pooling after the activation.
    pub pool: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// `[channels, height, width]` of the input images.
    pub input: [usize; 3],
    pub blocks: Vec<ConvBlock>,
    pub head: Vec<usize>,
    pub outputs: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let block = |channels| ConvBlock {
            channels,
            kernel: 3,
            stride: 1,
            pool: true,
        };
        Self {
            input: [3, 32, 32],
            blocks: vec![block(8), block(16), block(32)],
            head: vec![128, 64],
            outputs: 2,
        }
    }
}

impl ModelSpec {
    pub fn with_input(mut self, input: [usize; 3]) -> Self {
        self.input = input;
        self
    }

    /// `[channels, height, width]` after every block, last entry first
    /// flattened into the feature dimension.
    fn block_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 || b.kernel == 0 || b.stride == 0 {
                return Err(Error::Config(format!("block {i}: channels, kernel and stride must be positive")));
            }
            let [_, h, w] = shape;
            let (h, w) = ((h - 1) / b.stride + 1, (w - 1) / b.stride + 1);
            let (h, w) = if b.pool { (h / 2, w / 2) } else { (h, w) };
            if h == 0 || w == 0 {
                return Err(Error::Dimension(format!("block {i} reduces the input {:?} to nothing", self.input)));
            }
            shape = [b.channels, h, w];
            out.push(shape);
        }
        Ok(out)
    }

    pub fn feature_dim(&self) -> Result<usize> {
        let shapes = self.block_shapes()?;
        let [c, h, w] = shapes.last().copied().unwrap_or(self.input);
        Ok(c * h * w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.contains(&0) {
            return Err(Error::Config(format!("input shape {:?} has a zero axis", self.input)));
        }
        if self.outputs < 2 {
            return Err(Error::Config("the head needs at least two outputs".into()));
        }
        if self.head.contains(&0) {
            return Err(Error::Config("head layer sizes must be positive".into()));
        }
        self.feature_dim().map(|_| ())
    }
}

/// Parameter names of the extractor start with `conv`, head names with
/// `dense`.
pub fn is_extractor_param(name: &str) -> bool {
    name.starts_with("conv")
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

fn he_normal(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("consistent shape")
}

impl Model {
    /// He-normal weights and zero biases drawn from `seed`.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut channels = spec.input[0];
        for (i, b) in spec.blocks.iter().enumerate() {
            let fan_in = channels * b.kernel * b.kernel;
            params.insert(
                format!("conv{i}.weight"),
                he_normal(&mut rng, vec![b.channels, channels, b.kernel, b.kernel], fan_in),
            );
            params.insert(format!("conv{i}.bias"), Tensor::zeros(&[b.channels]));
            channels = b.channels;
        }
        let mut width = spec.feature_dim()?;
        for (i, &size) in spec.head.iter().chain(std::iter::once(&spec.outputs)).enumerate() {
            params.insert(format!("dense{i}.weight"), he_normal(&mut rng, vec![width, size], width));
            params.insert(format!("dense{i}.bias"), Tensor::zeros(&[size]));
            width = size;
        }
        Ok(Self { spec, params })
    }

    /// Rebuilds a model from checkpointed parameters, checking every shape
    /// against the model spec.
    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        let fresh = Self::init(spec, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Dimension(format!(
                "checkpoint has {} tensors, the model spec needs {}",
                params.len(),
                fresh.params.len()
            )));
        }
        for (_, name, t) in fresh.params.iter() {
            let found = params
                .by_name(name)
                .ok_or_else(|| Error::Dimension(format!("checkpoint lacks tensor `{name}`")))?;
            if found.shape() != t.shape() {
                return Err(Error::Dimension(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    found.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self {
            spec: fresh.spec,
            params,
        })
    }

    fn id(&self, name: &str) -> ParamId {
        self.params.id(name).expect("parameter created by init")
    }

    /// Name of the weight tensor of the last convolution, the layer whose
    /// filters the redundancy loss acts on.
    pub fn last_conv_weight(&self) -> Option<String> {
        self.spec.blocks.len().checked_sub(1).map(|i| format!("conv{i}.weight"))
    }

    /// Records the extractor on `g`. With `trainable == false` the weights
    /// enter as constants.
    pub fn extractor(&self, g: &mut Graph, images: Tensor, trainable: bool) -> Result<NodeId> {
        let [c, h, w] = self.spec.input;
        if images.rank() != 4 || images.shape()[1..] != [c, h, w] {
            return Err(Error::Dimension(format!(
                "images of shape {:?} do not match model input {:?}",
                images.shape(),
                self.spec.input
            )));
        }
        let mut x = g.input(images);
        for (i, b) in self.spec.blocks.iter().enumerate() {
            let wt = self.node(g, &format!("conv{i}.weight"), trainable);
            let bias = self.node(g, &format!("conv{i}.bias"), trainable);
            x = g.conv2d(x, wt, bias, b.stride, Padding::Same)?;
            x = g.relu(x);
            if b.pool {
                x = g.max_pool2(x)?;
            }
        }
        g.flatten(x)
    }

    /// Records the head on top of `features`, returning the logits node.
    pub fn head(&self, g: &mut Graph, features: NodeId, trainable: bool) -> Result<NodeId> {
        let width = g.value(features).shape().get(1).copied().unwrap_or(0);
        let expected = self.spec.feature_dim()?;
        if width != expected {
            return Err(Error::Dimension(format!(
                "features have dimension {width}, the head expects {expected}"
            )));
        }
        let layers = self.spec.head.len() + 1;
        let mut x = features;
        for i in 0..layers {
            let wt = self.node(g, &format!("dense{i}.weight"), trainable);
            let bias = self.node(g, &format!("dense{i}.bias"), trainable);
            x = g.dense(x, wt, bias)?;
            if i + 1 < layers {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    fn node(&self, g: &mut Graph, name: &str, trainable: bool) -> NodeId {
        let id = self.id(name);
        if trainable {
            g.param(&self.params, id)
        } else {
            g.input(self.params.get(id).clone())
        }
    }

    /// Extractor features for `images` (`n×C×H×W`) computed in chunks.
    pub fn features(&self, images: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = images.shape().first().copied().unwrap_or(0);
        let per: usize = images.shape().iter().skip(1).product();
        let dim = self.spec.feature_dim()?;
        let mut out = Vec::with_capacity(n * dim);
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let mut shape = images.shape().to_vec();
            shape[0] = end - start;
            let part = Tensor::new(shape, images.data()[start * per..end * per].to_vec())?;
            let mut g = Graph::new();
            let f = self.extractor(&mut g, part, false)?;
            out.extend_from_slice(g.value(f).data());
            start = end;
        }
        Tensor::new(vec![n, dim], out)
    }

    /// Head logits for precomputed features.
    pub fn logits_from_features(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let f = g.input(features.clone());
        let out = self.head(&mut g, f, false)?;
        Ok(g.value(out).clone())
    }

    pub fn logits(&self, images: &Tensor, chunk: usize) -> Result<Tensor> {
        self.logits_from_features(&self.features(images, chunk)?)
    }
}

/// Class predictions and the logits they were taken from; ties go to the
/// lower class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub classes: Vec<u8>,
    pub scores: Tensor,
}

pub fn argmax_rows(logits: &Tensor) -> Result<Vec<u8>> {
    if logits.rank() != 2 || logits.shape()[1] == 0 {
        return Err(Error::Dimension(format!("logits must be n×k, found {:?}", logits.shape())));
    }
    let k = logits.shape()[1];
    Ok(logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect())
}

pub fn predict(model: &Model, images: &Tensor) -> Result<Predictions> {
    let scores = model.logits(images, 256)?;
    Ok(Predictions {
        classes: argmax_rows(&scores)?,
        scores,
    })
}
