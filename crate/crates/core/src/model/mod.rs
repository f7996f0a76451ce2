//! The four acoustic-model variants.
//!
//! Every variant runs the same pipeline on a `(2k+1) x D` context patch:
//! conv1, max pooling and SELU, conv2 and SELU, a stack of SELU dense
//! layers, a linear bottleneck and the output logits. Embedding variants add
//! `V e^c` to the pre-activation of one dense layer; parallel variants pick
//! the convolution stack by bandwidth.

mod checkpoint;
mod config;
mod params;

pub use checkpoint::{decode_model, encode_model, load_model, load_model_expecting, save_model};
pub use config::{ConvConfig, ModelConfig, PoolConfig, PoolPlacement, ShapeChain, Variant};
pub use params::{
    Activation, BandwidthEmbedding, ConvStack, ConvStage, DenseLayer, Params, EMBEDDING_INIT_STD,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::Bandwidth;
use crate::nnops::{dense_accumulate_backward, dense_into, selu_derivative, selu_scalar, softmax_into};
use crate::rng;

/// Examples per sequential leaf in batch gradient computation. The leaf
/// layout is fixed so the summation order does not depend on thread count.
pub const GRADIENT_GRAIN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    chain: ShapeChain,
    pub params: Params,
}

/// One labelled classifier input.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub patch: &'a [f64],
    pub bandwidth: Bandwidth,
    pub target: usize,
}

/// Scratch buffers for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    xp1: Vec<f64>,
    z1: Vec<f64>,
    arg1: Vec<usize>,
    pre1: Vec<f64>,
    a1: Vec<f64>,
    xp2: Vec<f64>,
    z2: Vec<f64>,
    arg2: Vec<usize>,
    pre2: Vec<f64>,
    a2: Vec<f64>,
    bias_hat: Vec<f64>,
    u: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    probs: Vec<f64>,
    g_u: Vec<f64>,
    g_h: Vec<Vec<f64>>,
    g_a2: Vec<f64>,
    g_z2: Vec<f64>,
    g_xp2: Vec<f64>,
    g_a1: Vec<f64>,
    g_z1: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    pub fn new(model: &Model) -> Self {
        let c = &model.chain;
        let after1 = c.placement == PoolPlacement::AfterConv1;
        let stage1 = if after1 { c.pool.output_len() } else { c.conv1.output_len() };
        let stage2 = c.flatten;
        let units = model.config.layer_units();
        let max_units = units.iter().copied().max().unwrap_or(0);
        Workspace {
            xp1: vec![0.0; c.conv1.padded_len()],
            z1: vec![0.0; c.conv1.output_len()],
            arg1: vec![0; if after1 { stage1 } else { 0 }],
            pre1: vec![0.0; stage1],
            a1: vec![0.0; stage1],
            xp2: vec![0.0; c.conv2.padded_len()],
            z2: vec![0.0; c.conv2.output_len()],
            arg2: vec![0; if after1 { 0 } else { stage2 }],
            pre2: vec![0.0; stage2],
            a2: vec![0.0; stage2],
            bias_hat: vec![0.0; max_units],
            u: units.iter().map(|&n| vec![0.0; n]).collect(),
            h: units.iter().map(|&n| vec![0.0; n]).collect(),
            probs: vec![0.0; model.config.n_classes],
            g_u: vec![0.0; max_units],
            g_h: units.iter().map(|&n| vec![0.0; n]).collect(),
            g_a2: vec![0.0; stage2],
            g_z2: vec![0.0; c.conv2.output_len()],
            g_xp2: vec![0.0; c.conv2.padded_len()],
            g_a1: vec![0.0; stage1],
            g_z1: vec![0.0; c.conv1.output_len()],
            scratch: vec![0.0; max_units],
        }
    }

    /// Logits of the most recent forward pass.
    pub fn logits(&self) -> &[f64] {
        self.u.last().expect("model has an output layer")
    }

    /// Flattened convolution output fed to the first dense layer.
    pub fn conv_output(&self) -> &[f64] {
        &self.a2
    }

    /// Activation of dense layer `i` (counting the bottleneck and output).
    pub fn layer_output(&self, i: usize) -> &[f64] {
        &self.h[i]
    }
}

fn selu_into(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = selu_scalar(v);
    }
}

fn selu_grad_in_place(pre: &[f64], g: &mut [f64]) {
    for (g, &x) in g.iter_mut().zip(pre) {
        *g *= selu_derivative(x);
    }
}

/// `out = V e + b`, the bias correction of an embedding layer.
fn corrected_bias(e: &BandwidthEmbedding, bandwidth: Bandwidth, b: &[f64], out: &mut [f64]) {
    dense_into(e.vector(bandwidth).data(), e.projection.data(), b, out);
}

/// Builds a randomly initialized model; identical seeds give bit-identical
/// parameters.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    let chain = config.shape_chain()?;
    let mut r = rng::stream(seed, &[rng::label::INIT]);
    let params = Params::init(config, &chain, &mut r)?;
    Ok(Model { config: config.clone(), chain, params })
}

impl Model {
    /// Assembles a model from existing parameters, checking every tensor
    /// shape against the configuration.
    pub fn from_params(config: &ModelConfig, params: Params) -> Result<Model> {
        let template = build_template(config)?;
        let expected = template.params.named(config);
        let got = params.named(config);
        if expected.len() != got.len()
            || expected.iter().zip(&got).any(|((n1, t1), (n2, t2))| n1 != n2 || t1.shape() != t2.shape())
        {
            return Err(Error::Shape("parameters do not match the model configuration".into()));
        }
        Ok(Model { params, ..template })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn chain(&self) -> &ShapeChain {
        &self.chain
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(self)
    }

    fn embedding_index(&self) -> Option<usize> {
        self.params.embedding.as_ref().map(|_| self.config.embedding_layer - 3)
    }

    fn check_patch(&self, patch: &[f64]) -> Result<()> {
        if patch.len() != self.config.input_len() {
            return Err(Error::Shape(format!(
                "patch of {} values, model expects {}x{}",
                patch.len(),
                self.config.input_rows(),
                self.config.n_mels
            )));
        }
        Ok(())
    }

    /// Runs the forward pass into `ws`; the logits are in [`Workspace::logits`].
    pub fn forward_into(&self, ws: &mut Workspace, patch: &[f64], bandwidth: Bandwidth) -> Result<()> {
        self.check_patch(patch)?;
        let c = &self.chain;
        let stack = self.params.conv.route(bandwidth);
        let after1 = c.placement == PoolPlacement::AfterConv1;

        c.conv1.pad_into(patch, &mut ws.xp1);
        if after1 {
            c.conv1.forward_padded(&ws.xp1, stack.conv1_weight.data(), stack.conv1_bias.data(), &mut ws.z1);
            c.pool.forward_into(&ws.z1, &mut ws.pre1, &mut ws.arg1);
        } else {
            c.conv1.forward_padded(&ws.xp1, stack.conv1_weight.data(), stack.conv1_bias.data(), &mut ws.pre1);
        }
        selu_into(&ws.pre1, &mut ws.a1);

        c.conv2.pad_into(&ws.a1, &mut ws.xp2);
        if after1 {
            c.conv2.forward_padded(&ws.xp2, stack.conv2_weight.data(), stack.conv2_bias.data(), &mut ws.pre2);
        } else {
            c.conv2.forward_padded(&ws.xp2, stack.conv2_weight.data(), stack.conv2_bias.data(), &mut ws.z2);
            c.pool.forward_into(&ws.z2, &mut ws.pre2, &mut ws.arg2);
        }
        selu_into(&ws.pre2, &mut ws.a2);

        let emb_at = self.embedding_index();
        for (i, layer) in self.params.dense.iter().enumerate() {
            let (before, rest) = ws.h.split_at_mut(i);
            let input: &[f64] = if i == 0 { &ws.a2 } else { &before[i - 1] };
            let u = &mut ws.u[i];
            if emb_at == Some(i) {
                let e = self.params.embedding.as_ref().expect("embedding present");
                let n = u.len();
                corrected_bias(e, bandwidth, layer.bias.data(), &mut ws.bias_hat[..n]);
                dense_into(input, layer.weight.data(), &ws.bias_hat[..n], u);
            } else {
                dense_into(input, layer.weight.data(), layer.bias.data(), u);
            }
            match layer.activation {
                Activation::Selu => selu_into(u, &mut rest[0]),
                Activation::Linear => rest[0].copy_from_slice(u),
            }
        }
        Ok(())
    }

    /// Logits for one patch.
    pub fn forward(&self, patch: &[f64], bandwidth: Bandwidth) -> Result<Vec<f64>> {
        let mut ws = self.workspace();
        self.forward_into(&mut ws, patch, bandwidth)?;
        Ok(ws.logits().to_vec())
    }

    /// Same as [`Model::forward`] with a raw bandwidth flag.
    pub fn forward_flag(&self, patch: &[f64], flag: u32) -> Result<Vec<f64>> {
        self.forward(patch, Bandwidth::from_flag(flag)?)
    }

    /// Index of the largest logit (first on ties).
    pub fn predict(&self, ws: &mut Workspace, patch: &[f64], bandwidth: Bandwidth) -> Result<usize> {
        self.forward_into(ws, patch, bandwidth)?;
        let logits = ws.logits();
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        Ok(best)
    }

    /// Cross-entropy loss of one example; adds its gradient into `grads`.
    pub fn accumulate_gradient(
        &self,
        ws: &mut Workspace,
        example: &Example<'_>,
        grads: &mut Params,
    ) -> Result<f64> {
        let k = self.config.n_classes;
        if example.target >= k {
            return Err(Error::Index { index: example.target, len: k });
        }
        self.forward_into(ws, example.patch, example.bandwidth)?;
        let bw = example.bandwidth;
        let n_layers = self.params.dense.len();
        let (log_sum, max) = softmax_into(&ws.u[n_layers - 1], &mut ws.probs);
        let loss = log_sum - (ws.u[n_layers - 1][example.target] - max);

        // Dense stack, top down. g_u holds the pre-activation gradient.
        let emb_at = self.embedding_index();
        ws.g_h[n_layers - 1].copy_from_slice(&ws.probs);
        ws.g_h[n_layers - 1][example.target] -= 1.0;
        for i in (0..n_layers).rev() {
            let layer = &self.params.dense[i];
            let n = ws.u[i].len();
            let g_u = &mut ws.g_u[..n];
            g_u.copy_from_slice(&ws.g_h[i]);
            if layer.activation == Activation::Selu {
                selu_grad_in_place(&ws.u[i], g_u);
            }
            let gl = &mut grads.dense[i];
            let (input, g_input): (&[f64], &mut [f64]) = if i == 0 {
                ws.g_a2.fill(0.0);
                (&ws.a2, &mut ws.g_a2)
            } else {
                let (lo, _) = ws.g_h.split_at_mut(i);
                lo[i - 1].fill(0.0);
                (&ws.h[i - 1], &mut lo[i - 1])
            };
            dense_accumulate_backward(
                input,
                layer.weight.data(),
                g_u,
                gl.weight.data_mut(),
                gl.bias.data_mut(),
                Some(g_input),
            );
            if emb_at == Some(i) {
                let e = self.params.embedding.as_ref().expect("embedding present");
                let ge = grads.embedding.as_mut().expect("gradient embedding present");
                let scratch = &mut ws.scratch[..n];
                let BandwidthEmbedding { wideband, narrowband, projection } = ge;
                let g_vec = match bw {
                    Bandwidth::Wideband => wideband,
                    Bandwidth::Narrowband => narrowband,
                };
                dense_accumulate_backward(
                    e.vector(bw).data(),
                    e.projection.data(),
                    g_u,
                    projection.data_mut(),
                    scratch,
                    Some(g_vec.data_mut()),
                );
            }
        }

        // Convolution stages of the routed stack.
        let c = &self.chain;
        let after1 = c.placement == PoolPlacement::AfterConv1;
        let stack = self.params.conv.route(bw);
        let gs = grads.conv.route_mut(bw);

        selu_grad_in_place(&ws.pre2, &mut ws.g_a2);
        let g_z2: &[f64] = if after1 {
            &ws.g_a2
        } else {
            ws.g_z2.fill(0.0);
            c.pool.backward_accumulate(&ws.g_a2, &ws.arg2, &mut ws.g_z2);
            &ws.g_z2
        };
        ws.g_xp2.fill(0.0);
        c.conv2.backward_padded(
            &ws.xp2,
            stack.conv2_weight.data(),
            g_z2,
            gs.conv2_weight.data_mut(),
            gs.conv2_bias.data_mut(),
            Some(&mut ws.g_xp2),
        );
        ws.g_a1.fill(0.0);
        c.conv2.unpad_accumulate(&ws.g_xp2, &mut ws.g_a1);
        selu_grad_in_place(&ws.pre1, &mut ws.g_a1);
        let g_z1: &[f64] = if after1 {
            ws.g_z1.fill(0.0);
            c.pool.backward_accumulate(&ws.g_a1, &ws.arg1, &mut ws.g_z1);
            &ws.g_z1
        } else {
            &ws.g_a1
        };
        c.conv1.backward_padded(
            &ws.xp1,
            stack.conv1_weight.data(),
            g_z1,
            gs.conv1_weight.data_mut(),
            gs.conv1_bias.data_mut(),
            None,
        );
        Ok(loss)
    }

    /// Loss and parameter gradient of a single example.
    pub fn backward(&self, patch: &[f64], bandwidth: Bandwidth, target: usize) -> Result<(f64, Params)> {
        let mut grads = self.params.zeros_like();
        let mut ws = self.workspace();
        let loss = self.accumulate_gradient(&mut ws, &Example { patch, bandwidth, target }, &mut grads)?;
        Ok((loss, grads))
    }

    /// Summed loss and summed gradient over a batch.
    ///
    /// The batch is halved recursively down to leaves of at most
    /// [`GRADIENT_GRAIN`] examples, so the floating-point summation order
    /// depends only on the batch length. A non-finite loss aborts with the
    /// index of the offending example.
    pub fn batch_gradient(&self, batch: &[Example<'_>]) -> Result<(f64, Params)> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        self.batch_gradient_range(batch, 0)
    }

    fn batch_gradient_range(&self, batch: &[Example<'_>], offset: usize) -> Result<(f64, Params)> {
        if batch.len() <= GRADIENT_GRAIN {
            let mut grads = self.params.zeros_like();
            let mut ws = self.workspace();
            let mut total = 0.0;
            for (i, ex) in batch.iter().enumerate() {
                let loss = self.accumulate_gradient(&mut ws, ex, &mut grads)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss at batch example {}", offset + i)));
                }
                total += loss;
            }
            return Ok((total, grads));
        }
        let mid = batch.len() / 2;
        let (left, right) = rayon::join(
            || self.batch_gradient_range(&batch[..mid], offset),
            || self.batch_gradient_range(&batch[mid..], offset + mid),
        );
        let (l_loss, mut l_grads) = left?;
        let (r_loss, r_grads) = right?;
        l_grads.add_assign(&r_grads)?;
        Ok((l_loss + r_loss, l_grads))
    }

    /// Summed loss over a batch without gradients.
    pub fn batch_loss(&self, batch: &[Example<'_>]) -> Result<f64> {
        let losses: Vec<f64> = batch
            .par_chunks(GRADIENT_GRAIN)
            .map(|chunk| {
                let mut ws = self.workspace();
                let mut total = 0.0;
                for ex in chunk {
                    let k = self.config.n_classes;
                    if ex.target >= k {
                        return Err(Error::Index { index: ex.target, len: k });
                    }
                    self.forward_into(&mut ws, ex.patch, ex.bandwidth)?;
                    let logits = ws.logits();
                    let mut probs = vec![0.0; k];
                    let (log_sum, max) = softmax_into(logits, &mut probs);
                    total += log_sum - (logits[ex.target] - max);
                }
                Ok(total)
            })
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum())
    }

    /// Summed loss over a small batch, evaluated sequentially, with a hash of
    /// the piecewise-linear state of the pass: the sign of every SELU input
    /// and every pooling argmax. Two parameter settings with equal hashes lie
    /// on the same smooth piece of the loss.
    pub fn loss_and_kink_signature(&self, batch: &[Example<'_>]) -> Result<(f64, u64)> {
        let mut ws = self.workspace();
        let mut total = 0.0;
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        let mut feed = |v: u64| hash = rng::mix64(hash ^ v);
        for ex in batch {
            let k = self.config.n_classes;
            if ex.target >= k {
                return Err(Error::Index { index: ex.target, len: k });
            }
            self.forward_into(&mut ws, ex.patch, ex.bandwidth)?;
            let n_layers = self.params.dense.len();
            let logits = &ws.u[n_layers - 1];
            let (log_sum, max) = softmax_into(logits, &mut ws.probs);
            total += log_sum - (logits[ex.target] - max);
            let selu_inputs = [&ws.pre1, &ws.pre2].into_iter().chain(
                ws.u.iter().zip(&self.params.dense).take(n_layers).filter(|(_, l)| l.activation == Activation::Selu).map(|(u, _)| u),
            );
            for values in selu_inputs {
                for chunk in values.chunks(64) {
                    let bits = chunk.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | (((v > 0.0) as u64) << i));
                    feed(bits);
                }
            }
            for &a in ws.arg1.iter().chain(&ws.arg2) {
                feed(a as u64);
            }
        }
        Ok((total, hash))
    }

    /// `V e^c + b` at the embedding layer.
    pub fn effective_bias(&self, bandwidth: Bandwidth) -> Result<Vec<f64>> {
        let (e, idx) = self.embedding_or_err()?;
        let b = self.params.dense[idx].bias.data();
        let mut out = vec![0.0; b.len()];
        corrected_bias(e, bandwidth, b, &mut out);
        Ok(out)
    }

    fn embedding_or_err(&self) -> Result<(&BandwidthEmbedding, usize)> {
        match (&self.params.embedding, self.embedding_index()) {
            (Some(e), Some(i)) => Ok((e, i)),
            _ => Err(Error::Variant(format!(
                "{} model has no bandwidth embedding",
                self.config.variant
            ))),
        }
    }

    /// Folds the embedding of one bandwidth into the layer bias, giving a
    /// baseline model whose forward pass equals this model's forward pass
    /// for that bandwidth. A parallel stack keeps only the routed branch.
    pub fn fold_embedding(&self, bandwidth: Bandwidth) -> Result<Model> {
        let (_, idx) = self.embedding_or_err()?;
        let bias = self.effective_bias(bandwidth)?;
        let mut dense = self.params.dense.clone();
        dense[idx].bias.data_mut().copy_from_slice(&bias);
        let params = Params {
            conv: ConvStage::Shared(self.params.conv.route(bandwidth).clone()),
            dense,
            embedding: None,
        };
        let config = self.config.with_variant(Variant::Baseline);
        Ok(Model { config, chain: self.chain, params })
    }
}

/// A model of the right structure; parameter values are meaningless.
pub(crate) fn build_template(config: &ModelConfig) -> Result<Model> {
    build_model(config, 0)
}
