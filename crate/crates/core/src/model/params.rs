use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, ShapeChain};
use crate::error::{Error, Result};
use crate::features::Bandwidth;
use crate::nnops::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Selu,
    Linear,
}

/// Weights of the two convolution layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    pub conv1_weight: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_weight: Tensor,
    pub conv2_bias: Tensor,
}

/// Either one convolution stack shared by both bandwidths, or one unshared
/// stack per bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvStage {
    Shared(ConvStack),
    Parallel { wideband: ConvStack, narrowband: ConvStack },
}

impl ConvStage {
    /// The stack that processes input of the given bandwidth.
    pub fn route(&self, bandwidth: Bandwidth) -> &ConvStack {
        match (self, bandwidth) {
            (ConvStage::Shared(s), _) => s,
            (ConvStage::Parallel { wideband, .. }, Bandwidth::Wideband) => wideband,
            (ConvStage::Parallel { narrowband, .. }, Bandwidth::Narrowband) => narrowband,
        }
    }

    pub fn route_mut(&mut self, bandwidth: Bandwidth) -> &mut ConvStack {
        match (self, bandwidth) {
            (ConvStage::Shared(s), _) => s,
            (ConvStage::Parallel { wideband, .. }, Bandwidth::Wideband) => wideband,
            (ConvStage::Parallel { narrowband, .. }, Bandwidth::Narrowband) => narrowband,
        }
    }
}

/// `o = f(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// Trainable bandwidth embeddings `e0` (wideband) and `e1` (narrowband) and
/// the projection `V` into the pre-activation of the attached layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthEmbedding {
    pub wideband: Tensor,
    pub narrowband: Tensor,
    pub projection: Tensor,
}

impl BandwidthEmbedding {
    pub fn vector(&self, bandwidth: Bandwidth) -> &Tensor {
        match bandwidth {
            Bandwidth::Wideband => &self.wideband,
            Bandwidth::Narrowband => &self.narrowband,
        }
    }

    pub fn vector_mut(&mut self, bandwidth: Bandwidth) -> &mut Tensor {
        match bandwidth {
            Bandwidth::Wideband => &mut self.wideband,
            Bandwidth::Narrowband => &mut self.narrowband,
        }
    }
}

/// Every trainable tensor of a model. Also used, zero-initialized, as the
/// gradient accumulator and optimizer state of the same model.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub conv: ConvStage,
    /// SELU dense layers, bottleneck, then output.
    pub dense: Vec<DenseLayer>,
    pub embedding: Option<BandwidthEmbedding>,
}

fn lecun(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).unwrap()
}

impl ConvStack {
    fn init(chain: &ShapeChain, rng: &mut impl Rng) -> Self {
        let (c1, c2) = (chain.conv1, chain.conv2);
        ConvStack {
            conv1_weight: lecun(&[c1.c_out, c1.c_in, c1.kh, c1.kw], c1.c_in * c1.kh * c1.kw, rng),
            conv1_bias: Tensor::zeros(&[c1.c_out]),
            conv2_weight: lecun(&[c2.c_out, c2.c_in, c2.kh, c2.kw], c2.c_in * c2.kh * c2.kw, rng),
            conv2_bias: Tensor::zeros(&[c2.c_out]),
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}conv1.weight"), &self.conv1_weight),
            (format!("{prefix}conv1.bias"), &self.conv1_bias),
            (format!("{prefix}conv2.weight"), &self.conv2_weight),
            (format!("{prefix}conv2.bias"), &self.conv2_bias),
        ]
    }

    fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}conv1.weight"), &mut self.conv1_weight),
            (format!("{prefix}conv1.bias"), &mut self.conv1_bias),
            (format!("{prefix}conv2.weight"), &mut self.conv2_weight),
            (format!("{prefix}conv2.bias"), &mut self.conv2_bias),
        ]
    }
}

/// Standard deviation of the initial embedding vectors (variance 0.01).
pub const EMBEDDING_INIT_STD: f64 = 0.1;

pub(crate) fn dense_layer_name(config: &ModelConfig, index: usize) -> String {
    let n_dense = config.dense_layers;
    if index < n_dense {
        format!("dense{}", index + 1)
    } else if index == n_dense {
        "bottleneck".to_string()
    } else {
        "output".to_string()
    }
}

impl Params {
    /// Randomly initialized parameters: LeCun-normal weights, zero biases,
    /// embeddings drawn from N(0, 0.01).
    pub fn init(config: &ModelConfig, chain: &ShapeChain, rng: &mut impl Rng) -> Result<Self> {
        let conv = if config.variant.has_parallel_conv() {
            let wideband = ConvStack::init(chain, rng);
            let narrowband = ConvStack::init(chain, rng);
            ConvStage::Parallel { wideband, narrowband }
        } else {
            ConvStage::Shared(ConvStack::init(chain, rng))
        };
        let mut dense = Vec::new();
        let mut fan_in = chain.flatten;
        let units = config.layer_units();
        for (i, &n) in units.iter().enumerate() {
            dense.push(DenseLayer {
                weight: lecun(&[n, fan_in], fan_in, rng),
                bias: Tensor::zeros(&[n]),
                activation: if i < config.dense_layers {
                    Activation::Selu
                } else {
                    Activation::Linear
                },
            });
            fan_in = n;
        }
        let embedding = if config.variant.has_embeddings() {
            let n = config.embedding_dim;
            let projection = lecun(&[config.embedding_units()?, n], n, rng);
            let normal = Normal::new(0.0, EMBEDDING_INIT_STD).unwrap();
            let mut draw = || Tensor::new(vec![n], (0..n).map(|_| normal.sample(rng)).collect()).unwrap();
            let wideband = draw();
            let narrowband = draw();
            Some(BandwidthEmbedding { wideband, narrowband, projection })
        } else {
            None
        };
        Ok(Params { conv, dense, embedding })
    }

    /// Same structure, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        p.visit_mut(|_, t| t.fill(0.0));
        p
    }

    /// Tensors with stable, unique names, in a fixed order.
    pub fn named(&self, config: &ModelConfig) -> Vec<(String, &Tensor)> {
        let mut out = match &self.conv {
            ConvStage::Shared(s) => s.named(""),
            ConvStage::Parallel { wideband, narrowband } => {
                let mut v = wideband.named("conv_wb.");
                v.extend(narrowband.named("conv_nb."));
                v
            }
        };
        for (i, layer) in self.dense.iter().enumerate() {
            let name = dense_layer_name(config, i);
            out.push((format!("{name}.weight"), &layer.weight));
            out.push((format!("{name}.bias"), &layer.bias));
        }
        if let Some(e) = &self.embedding {
            out.push(("embedding.e0".into(), &e.wideband));
            out.push(("embedding.e1".into(), &e.narrowband));
            out.push(("embedding.projection".into(), &e.projection));
        }
        out
    }

    pub fn named_mut(&mut self, config: &ModelConfig) -> Vec<(String, &mut Tensor)> {
        let mut out = match &mut self.conv {
            ConvStage::Shared(s) => s.named_mut(""),
            ConvStage::Parallel { wideband, narrowband } => {
                let mut v = wideband.named_mut("conv_wb.");
                v.extend(narrowband.named_mut("conv_nb."));
                v
            }
        };
        for (i, layer) in self.dense.iter_mut().enumerate() {
            let name = dense_layer_name(config, i);
            out.push((format!("{name}.weight"), &mut layer.weight));
            out.push((format!("{name}.bias"), &mut layer.bias));
        }
        if let Some(e) = &mut self.embedding {
            out.push(("embedding.e0".into(), &mut e.wideband));
            out.push(("embedding.e1".into(), &mut e.narrowband));
            out.push(("embedding.projection".into(), &mut e.projection));
        }
        out
    }

    fn tensors(&self) -> Vec<&Tensor> {
        fn stack<'a>(s: &'a ConvStack, out: &mut Vec<&'a Tensor>) {
            out.extend([&s.conv1_weight, &s.conv1_bias, &s.conv2_weight, &s.conv2_bias]);
        }
        let mut out = Vec::new();
        match &self.conv {
            ConvStage::Shared(s) => stack(s, &mut out),
            ConvStage::Parallel { wideband, narrowband } => {
                stack(wideband, &mut out);
                stack(narrowband, &mut out);
            }
        }
        for l in &self.dense {
            out.extend([&l.weight, &l.bias]);
        }
        if let Some(e) = &self.embedding {
            out.extend([&e.wideband, &e.narrowband, &e.projection]);
        }
        out
    }

    fn visit_mut(&mut self, mut f: impl FnMut(usize, &mut Tensor)) {
        let mut i = 0;
        let mut stack = |s: &mut ConvStack, f: &mut dyn FnMut(usize, &mut Tensor)| {
            for t in [&mut s.conv1_weight, &mut s.conv1_bias, &mut s.conv2_weight, &mut s.conv2_bias] {
                f(i, t);
                i += 1;
            }
        };
        match &mut self.conv {
            ConvStage::Shared(s) => stack(s, &mut f),
            ConvStage::Parallel { wideband, narrowband } => {
                stack(wideband, &mut f);
                stack(narrowband, &mut f);
            }
        }
        for l in &mut self.dense {
            for t in [&mut l.weight, &mut l.bias] {
                f(i, t);
                i += 1;
            }
        }
        if let Some(e) = &mut self.embedding {
            for t in [&mut e.wideband, &mut e.narrowband, &mut e.projection] {
                f(i, t);
                i += 1;
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_same_structure(&self, other: &Params) -> Result<()> {
        let (a, b) = (self.tensors(), other.tensors());
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.shape() != y.shape()) {
            return Err(Error::Shape("parameter sets have different structure".into()));
        }
        Ok(())
    }

    /// `self += other`, element-wise.
    pub fn add_assign(&mut self, other: &Params) -> Result<()> {
        self.check_same_structure(other)?;
        let src = other.tensors();
        self.visit_mut(|i, t| {
            for (a, b) in t.data_mut().iter_mut().zip(src[i].data()) {
                *a += b;
            }
        });
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.visit_mut(|_, t| t.data_mut().iter_mut().for_each(|v| *v *= factor));
    }

    /// `self = f(self, other)` element-wise.
    pub fn zip_apply(&mut self, other: &Params, mut f: impl FnMut(&mut f64, f64)) -> Result<()> {
        self.check_same_structure(other)?;
        let src = other.tensors();
        self.visit_mut(|i, t| {
            for (a, &b) in t.data_mut().iter_mut().zip(src[i].data()) {
                f(a, b);
            }
        });
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    /// Largest absolute value over every tensor.
    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().map(|t| t.max_abs()).fold(0.0, f64::max)
    }
}
