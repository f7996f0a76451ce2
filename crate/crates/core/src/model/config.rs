use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureScenario;
use crate::nnops::{ConvGeometry, PoolGeometry};

/// Which conditioning mechanisms a model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Embeddings,
    ParallelConv,
    EmbeddingsAndParallelConv,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::Embeddings,
        Variant::ParallelConv,
        Variant::EmbeddingsAndParallelConv,
    ];

    pub fn has_embeddings(self) -> bool {
        matches!(self, Variant::Embeddings | Variant::EmbeddingsAndParallelConv)
    }

    pub fn has_parallel_conv(self) -> bool {
        matches!(self, Variant::ParallelConv | Variant::EmbeddingsAndParallelConv)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Embeddings => "embeddings",
            Variant::ParallelConv => "parallel_conv",
            Variant::EmbeddingsAndParallelConv => "embeddings_and_parallel_conv",
        }
    }

    /// Row label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "",
            Variant::Embeddings => "+ Embeddings",
            Variant::ParallelConv => "+ Parallel Conv.",
            Variant::EmbeddingsAndParallelConv => "+ Embeddings & Parallel Conv.",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::Config(format!("unknown variant {s:?}; valid variants: {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvConfig {
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    #[serde(default)]
    pub pad_h: usize,
    #[serde(default)]
    pub pad_w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolPlacement {
    AfterConv1,
    AfterConv2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub placement: PoolPlacement,
}

/// Architecture of the acoustic model.
///
/// Layers are numbered from 1: the two convolutions are layers 1 and 2, the
/// SELU dense layers follow from 3, then the linear bottleneck and the
/// softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Frames of context on each side of the centre frame.
    pub context: usize,
    pub n_mels: usize,
    pub conv1: ConvConfig,
    pub conv2: ConvConfig,
    pub pool: PoolConfig,
    pub dense_layers: usize,
    pub dense_units: usize,
    pub bottleneck_units: usize,
    pub n_classes: usize,
    pub embedding_dim: usize,
    /// Layer receiving the embedding bias correction.
    pub embedding_layer: usize,
    /// How input features were computed; evaluation refuses features
    /// prepared differently.
    #[serde(default)]
    pub features: FeatureScenario,
}

impl ModelConfig {
    /// Full-size architecture: 128 filters of 9x9 and 3x4, 1024-unit dense
    /// layers, 512-unit bottleneck, ~8000 outputs, 128-dim embeddings.
    pub fn full_scale(variant: Variant) -> Self {
        ModelConfig {
            variant,
            context: 10,
            n_mels: 40,
            conv1: ConvConfig { filters: 128, kh: 9, kw: 9, pad_h: 4, pad_w: 4 },
            conv2: ConvConfig { filters: 128, kh: 3, kw: 4, pad_h: 0, pad_w: 0 },
            pool: PoolConfig { kh: 1, kw: 3, sh: 1, sw: 3, placement: PoolPlacement::AfterConv1 },
            dense_layers: 3,
            dense_units: 1024,
            bottleneck_units: 512,
            n_classes: 8000,
            embedding_dim: 128,
            embedding_layer: 3,
            features: FeatureScenario::Native,
        }
    }

    /// Reduced dimensions used for gradient checking: same topology and input
    /// geometry, 8 filters, 32/16 dense units, 8 classes, 8-dim embeddings.
    pub fn reduced(variant: Variant) -> Self {
        ModelConfig {
            conv1: ConvConfig { filters: 8, ..Self::full_scale(variant).conv1 },
            conv2: ConvConfig { filters: 8, ..Self::full_scale(variant).conv2 },
            dense_units: 32,
            bottleneck_units: 16,
            n_classes: 8,
            embedding_dim: 8,
            ..Self::full_scale(variant)
        }
    }

    /// Desk-scale default for training on the synthetic corpus.
    pub fn desk_scale(variant: Variant) -> Self {
        ModelConfig {
            conv1: ConvConfig { filters: 4, ..Self::full_scale(variant).conv1 },
            ..Self::reduced(variant)
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelConfig { variant, ..self.clone() }
    }

    pub fn input_rows(&self) -> usize {
        2 * self.context + 1
    }

    pub fn input_len(&self) -> usize {
        self.input_rows() * self.n_mels
    }

    /// Number of the bottleneck layer.
    pub fn bottleneck_layer(&self) -> usize {
        3 + self.dense_layers
    }

    /// Width of each layer from 3 (first dense) to the output.
    pub fn layer_units(&self) -> Vec<usize> {
        let mut units = vec![self.dense_units; self.dense_layers];
        units.push(self.bottleneck_units);
        units.push(self.n_classes);
        units
    }

    pub fn embedding_units(&self) -> Result<usize> {
        let l = self.embedding_layer;
        if l < 3 || l > self.bottleneck_layer() {
            return Err(Error::Config(format!(
                "embedding layer {l} must be a dense or bottleneck layer (3..={})",
                self.bottleneck_layer()
            )));
        }
        Ok(self.layer_units()[l - 3])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolves and checks the convolution/pooling shape chain.
    pub fn shape_chain(&self) -> Result<ShapeChain> {
        let nonzero = [
            ("context rows", self.input_rows()),
            ("n_mels", self.n_mels),
            ("dense_units", self.dense_units),
            ("bottleneck_units", self.bottleneck_units),
            ("embedding_dim", self.embedding_dim),
        ];
        for (name, v) in nonzero {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        if self.variant.has_embeddings() {
            self.embedding_units()?;
        }
        let wrap = |stage: &str, e: Error| Error::Config(format!("shape chain broken at {stage}: {e}"));
        let conv1 = ConvGeometry {
            c_in: 1,
            h: self.input_rows(),
            w: self.n_mels,
            c_out: self.conv1.filters,
            kh: self.conv1.kh,
            kw: self.conv1.kw,
            pad_h: self.conv1.pad_h,
            pad_w: self.conv1.pad_w,
        };
        conv1.validate().map_err(|e| wrap("conv1", e))?;
        let pool_at = |c: usize, h: usize, w: usize| PoolGeometry {
            c,
            h,
            w,
            kh: self.pool.kh,
            kw: self.pool.kw,
            sh: self.pool.sh,
            sw: self.pool.sw,
        };
        let (pool, conv2) = match self.pool.placement {
            PoolPlacement::AfterConv1 => {
                let pool = pool_at(conv1.c_out, conv1.out_h(), conv1.out_w());
                pool.validate().map_err(|e| wrap("pool", e))?;
                let conv2 = self.conv2_geometry(conv1.c_out, pool.out_h(), pool.out_w());
                (pool, conv2)
            }
            PoolPlacement::AfterConv2 => {
                let conv2 = self.conv2_geometry(conv1.c_out, conv1.out_h(), conv1.out_w());
                conv2.validate().map_err(|e| wrap("conv2", e))?;
                (pool_at(conv2.c_out, conv2.out_h(), conv2.out_w()), conv2)
            }
        };
        conv2.validate().map_err(|e| wrap("conv2", e))?;
        pool.validate().map_err(|e| wrap("pool", e))?;
        let flatten = match self.pool.placement {
            PoolPlacement::AfterConv1 => conv2.output_len(),
            PoolPlacement::AfterConv2 => pool.output_len(),
        };
        Ok(ShapeChain {
            conv1,
            pool,
            conv2,
            placement: self.pool.placement,
            flatten,
        })
    }

    fn conv2_geometry(&self, c_in: usize, h: usize, w: usize) -> ConvGeometry {
        ConvGeometry {
            c_in,
            h,
            w,
            c_out: self.conv2.filters,
            kh: self.conv2.kh,
            kw: self.conv2.kw,
            pad_h: self.conv2.pad_h,
            pad_w: self.conv2.pad_w,
        }
    }

    /// Parameters in one convolution stack (both layers, with biases).
    pub fn conv_stack_params(&self) -> Result<usize> {
        let chain = self.shape_chain()?;
        Ok(chain.conv1.filter_len() + chain.conv1.c_out + chain.conv2.filter_len() + chain.conv2.c_out)
    }

    /// Total trainable parameters, computed without allocating the model.
    pub fn param_count(&self) -> Result<usize> {
        let chain = self.shape_chain()?;
        let stacks = if self.variant.has_parallel_conv() { 2 } else { 1 };
        let mut total = stacks * self.conv_stack_params()?;
        let mut fan_in = chain.flatten;
        for units in self.layer_units() {
            total += units * fan_in + units;
            fan_in = units;
        }
        if self.variant.has_embeddings() {
            total += 2 * self.embedding_dim + self.embedding_units()? * self.embedding_dim;
        }
        Ok(total)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk_scale(Variant::Baseline)
    }
}

/// Resolved layer geometries from the input patch to the flattened
/// convolution output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeChain {
    pub conv1: ConvGeometry,
    pub pool: PoolGeometry,
    pub conv2: ConvGeometry,
    pub placement: PoolPlacement,
    pub flatten: usize,
}
