//! The shared-weight convolutional encoder and regression head.
//!
//! The encoder stacks conv blocks (1-D convolution, batch normalization,
//! ReLU) and ends in global average pooling over time, producing one latent
//! vector per chunk. The head regresses a rating from the latent through two
//! linear layers with a ReLU between them and a sigmoid on the output.
//! Twin-branch use (pairs) is the same parameter set applied to both inputs.

pub mod checkpoint;
pub mod layers;

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contour::Chunk;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use layers::{
    global_avg_pool, global_avg_pool_backward, quantize, relu2, relu2_backward, relu3,
    relu3_backward, sigmoid, BatchNorm1d, BnCache, Conv1d, Linear,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedArray};

/// Encoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub input_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            conv_channels: vec![4, 8, 16],
            kernel_size: 7,
            stride: 3,
            input_len: crate::contour::DEFAULT_CHUNK_LEN,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() {
            return Err(Error::Validation("need at least one conv block".into()));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::Validation("conv channels must be positive".into()));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "kernel size must be a positive odd integer, got {}",
                self.kernel_size
            )));
        }
        if self.stride == 0 {
            return Err(Error::Validation("stride must be positive".into()));
        }
        if self.kernel_size > self.input_len {
            return Err(Error::Validation(format!(
                "kernel size {} exceeds input length {}",
                self.kernel_size, self.input_len
            )));
        }
        // Every block must keep at least one output frame.
        let mut len = self.input_len;
        for (i, _) in self.conv_channels.iter().enumerate() {
            if len < self.kernel_size {
                return Err(Error::Validation(format!(
                    "conv block {i} input length {len} is below kernel size {}",
                    self.kernel_size
                )));
            }
            len = (len - self.kernel_size) / self.stride + 1;
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        *self.conv_channels.last().expect("non-empty channels")
    }

    /// Time lengths after each conv block.
    pub fn block_out_lens(&self) -> Vec<usize> {
        let mut lens = Vec::with_capacity(self.conv_channels.len());
        let mut len = self.input_len;
        for _ in &self.conv_channels {
            len = (len - self.kernel_size) / self.stride + 1;
            lens.push(len);
        }
        lens
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub bn: BatchNorm1d,
}

#[derive(Debug, Clone)]
pub struct Head {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: EncoderConfig,
    pub blocks: Vec<ConvBlock>,
    pub head: Head,
}

/// Activations saved during a training-mode forward pass.
pub struct ForwardCache {
    /// Input to each block; entry `i + 1` is block `i`'s ReLU output.
    block_inputs: Vec<Array3<f64>>,
    bn: Vec<BnCache>,
    /// Pooled latents [B, latent_dim].
    pub latents: Array2<f64>,
    head: Option<HeadCache>,
}

struct HeadCache {
    hidden: Array2<f64>,
    preds: Vec<f64>,
}

/// Parameter gradients in canonical order (encoder blocks, then head).
pub struct Gradients {
    pub conv_weights: Vec<Array3<f64>>,
    pub conv_biases: Vec<Array1<f64>>,
    pub bn_gammas: Vec<Array1<f64>>,
    pub bn_betas: Vec<Array1<f64>>,
    pub head: Option<HeadGrads>,
}

pub struct HeadGrads {
    pub fc1_weight: Array2<f64>,
    pub fc1_bias: Array1<f64>,
    pub fc2_weight: Array2<f64>,
    pub fc2_bias: Array1<f64>,
    /// Gradient with respect to the head's latent inputs.
    pub input_grad: Array2<f64>,
}

impl Gradients {
    pub fn encoder_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for i in 0..self.conv_weights.len() {
            out.push(self.conv_weights[i].as_slice().unwrap());
            out.push(self.conv_biases[i].as_slice().unwrap());
            out.push(self.bn_gammas[i].as_slice().unwrap());
            out.push(self.bn_betas[i].as_slice().unwrap());
        }
        out
    }

    pub fn head_slices(&self) -> Vec<&[f64]> {
        let head = self.head.as_ref().expect("head gradients present");
        vec![
            head.fc1_weight.as_slice().unwrap(),
            head.fc1_bias.as_slice().unwrap(),
            head.fc2_weight.as_slice().unwrap(),
            head.fc2_bias.as_slice().unwrap(),
        ]
    }

    pub fn all_slices(&self) -> Vec<&[f64]> {
        let mut out = self.encoder_slices();
        out.extend(self.head_slices());
        out
    }
}

fn init_uniform(rng: &mut impl Rng, fan_in: usize, count: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..count)
        .map(|_| quantize(rng.random_range(-bound..bound)))
        .collect()
}

impl Model {
    /// Fan-in-scaled uniform weights, zero biases, identity batch norm,
    /// drawn from the seed's init stream.
    pub fn new_seeded(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        let mut blocks = Vec::with_capacity(config.conv_channels.len());
        let mut in_channels = 1usize;
        for &out_channels in &config.conv_channels {
            let fan_in = in_channels * config.kernel_size;
            let weight = Array3::from_shape_vec(
                (out_channels, in_channels, config.kernel_size),
                init_uniform(&mut rng, fan_in, out_channels * in_channels * config.kernel_size),
            )
            .expect("weight shape");
            blocks.push(ConvBlock {
                conv: Conv1d {
                    weight,
                    bias: Array1::zeros(out_channels),
                    stride: config.stride,
                },
                bn: BatchNorm1d::new(out_channels),
            });
            in_channels = out_channels;
        }
        let latent = config.latent_dim();
        let fc1 = Linear {
            weight: Array2::from_shape_vec(
                (latent, latent),
                init_uniform(&mut rng, latent, latent * latent),
            )
            .expect("fc1 shape"),
            bias: Array1::zeros(latent),
        };
        let fc2 = Linear {
            weight: Array2::from_shape_vec((1, latent), init_uniform(&mut rng, latent, latent))
                .expect("fc2 shape"),
            bias: Array1::zeros(1),
        };
        Ok(Model {
            config,
            blocks,
            head: Head { fc1, fc2 },
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim()
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        let (_, cin, tin) = x.dim();
        if cin != 1 || tin != self.config.input_len {
            return Err(Error::Shape(format!(
                "expected input [B, 1, {}], got [{}, {cin}, {tin}]",
                self.config.input_len,
                x.dim().0
            )));
        }
        Ok(())
    }

    /// Training-mode forward through the encoder only. Updates batch-norm
    /// running statistics.
    pub fn forward_encoder_train(&mut self, x: &Array3<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut block_inputs = vec![x.clone()];
        let mut bn_caches = Vec::with_capacity(self.blocks.len());
        for block in self.blocks.iter_mut() {
            let conv_out = block.conv.forward(block_inputs.last().unwrap());
            let (bn_out, cache) = block.bn.forward_train(&conv_out);
            bn_caches.push(cache);
            block_inputs.push(relu3(&bn_out));
        }
        let latents = global_avg_pool(block_inputs.last().unwrap());
        Ok(ForwardCache {
            block_inputs,
            bn: bn_caches,
            latents,
            head: None,
        })
    }

    /// Training-mode forward through encoder and head.
    pub fn forward_train(&mut self, x: &Array3<f64>) -> Result<(ForwardCache, Vec<f64>)> {
        let mut cache = self.forward_encoder_train(x)?;
        let hidden = relu2(&self.head.fc1.forward(&cache.latents));
        let logits = self.head.fc2.forward(&hidden);
        let preds: Vec<f64> = (0..logits.dim().0).map(|b| sigmoid(logits[[b, 0]])).collect();
        cache.head = Some(HeadCache {
            hidden,
            preds: preds.clone(),
        });
        Ok((cache, preds))
    }

    /// Head-only training forward from given latents (two-step phase 2,
    /// where the encoder is frozen in inference mode).
    pub fn forward_head_train(&self, latents: &Array2<f64>) -> Result<(HeadOnlyCache, Vec<f64>)> {
        if latents.dim().1 != self.latent_dim() {
            return Err(Error::Shape(format!(
                "latent dimension {} does not match head input {}",
                latents.dim().1,
                self.latent_dim()
            )));
        }
        let hidden = relu2(&self.head.fc1.forward(latents));
        let logits = self.head.fc2.forward(&hidden);
        let preds: Vec<f64> = (0..logits.dim().0).map(|b| sigmoid(logits[[b, 0]])).collect();
        Ok((
            HeadOnlyCache {
                latents: latents.clone(),
                hidden,
                preds: preds.clone(),
            },
            preds,
        ))
    }

    /// Backward pass. `grad_preds` is dL/dprediction per sample (empty slice
    /// when the head was not run); `grad_latents_extra` is an additional
    /// dL/dlatent term (the contrastive contribution), added to whatever
    /// flows back from the head.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_preds: &[f64],
        grad_latents_extra: Option<&Array2<f64>>,
    ) -> Result<Gradients> {
        let (bsz, latent_dim) = cache.latents.dim();
        let mut grad_latents = Array2::zeros((bsz, latent_dim));
        let mut head_grads = None;

        if let Some(head_cache) = &cache.head {
            if grad_preds.len() != bsz {
                return Err(Error::Shape(format!(
                    "expected {bsz} prediction gradients, got {}",
                    grad_preds.len()
                )));
            }
            let mut dlogits = Array2::zeros((bsz, 1));
            for b in 0..bsz {
                let p = head_cache.preds[b];
                dlogits[[b, 0]] = grad_preds[b] * p * (1.0 - p);
            }
            let (dhidden, gw2, gb2) = self.head.fc2.backward(&head_cache.hidden, &dlogits);
            let dhidden = relu2_backward(&head_cache.hidden, &dhidden);
            let (dlatent, gw1, gb1) = self.head.fc1.backward(&cache.latents, &dhidden);
            grad_latents = dlatent.clone();
            head_grads = Some(HeadGrads {
                fc1_weight: gw1,
                fc1_bias: gb1,
                fc2_weight: gw2,
                fc2_bias: gb2,
                input_grad: dlatent,
            });
        } else if !grad_preds.is_empty() {
            return Err(Error::Shape(
                "prediction gradients supplied but the head was not run".into(),
            ));
        }

        if let Some(extra) = grad_latents_extra {
            if extra.dim() != (bsz, latent_dim) {
                return Err(Error::Shape(format!(
                    "latent gradient shape {:?} does not match [{bsz}, {latent_dim}]",
                    extra.dim()
                )));
            }
            grad_latents += extra;
        }

        // Unpool, then walk the blocks in reverse.
        let tlen = cache.block_inputs.last().unwrap().dim().2;
        let mut grad = global_avg_pool_backward(&grad_latents, tlen);
        let nblocks = self.blocks.len();
        let mut conv_weights = vec![Array3::zeros((0, 0, 0)); nblocks];
        let mut conv_biases = vec![Array1::zeros(0); nblocks];
        let mut bn_gammas = vec![Array1::zeros(0); nblocks];
        let mut bn_betas = vec![Array1::zeros(0); nblocks];
        for i in (0..nblocks).rev() {
            let block = &self.blocks[i];
            let relu_out = &cache.block_inputs[i + 1];
            let grad_bn_out = relu3_backward(relu_out, &grad);
            let (grad_conv_out, ggamma, gbeta) = block.bn.backward(&cache.bn[i], &grad_bn_out);
            let (gx, gw, gb) = block.conv.backward(&cache.block_inputs[i], &grad_conv_out);
            conv_weights[i] = gw;
            conv_biases[i] = gb;
            bn_gammas[i] = ggamma;
            bn_betas[i] = gbeta;
            grad = gx;
        }
        Ok(Gradients {
            conv_weights,
            conv_biases,
            bn_gammas,
            bn_betas,
            head: head_grads,
        })
    }

    /// Head-only backward (two-step phase 2).
    pub fn backward_head(
        &self,
        cache: &HeadOnlyCache,
        grad_preds: &[f64],
    ) -> Result<HeadGrads> {
        let bsz = cache.latents.dim().0;
        if grad_preds.len() != bsz {
            return Err(Error::Shape(format!(
                "expected {bsz} prediction gradients, got {}",
                grad_preds.len()
            )));
        }
        let mut dlogits = Array2::zeros((bsz, 1));
        for b in 0..bsz {
            let p = cache.preds[b];
            dlogits[[b, 0]] = grad_preds[b] * p * (1.0 - p);
        }
        let (dhidden, gw2, gb2) = self.head.fc2.backward(&cache.hidden, &dlogits);
        let dhidden = relu2_backward(&cache.hidden, &dhidden);
        let (dinput, gw1, gb1) = self.head.fc1.backward(&cache.latents, &dhidden);
        Ok(HeadGrads {
            fc1_weight: gw1,
            fc1_bias: gb1,
            fc2_weight: gw2,
            fc2_bias: gb2,
            input_grad: dinput,
        })
    }

    /// Inference-mode encoder over a batch [B, 1, T] -> latents [B, C].
    pub fn encode_batch_eval(&self, x: &Array3<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for block in &self.blocks {
            let conv_out = block.conv.forward(&cur);
            cur = relu3(&block.bn.forward_eval(&conv_out));
        }
        Ok(global_avg_pool(&cur))
    }

    /// Head inference from latents.
    pub fn predict_from_latents(&self, latents: &Array2<f64>) -> Result<Vec<f64>> {
        if latents.dim().1 != self.latent_dim() {
            return Err(Error::Shape(format!(
                "latent dimension {} does not match head input {}",
                latents.dim().1,
                self.latent_dim()
            )));
        }
        let hidden = relu2(&self.head.fc1.forward(latents));
        let logits = self.head.fc2.forward(&hidden);
        Ok((0..logits.dim().0).map(|b| sigmoid(logits[[b, 0]])).collect())
    }

    /// Inference forward over a batch: latents and predicted ratings.
    pub fn forward_batch_eval(&self, x: &Array3<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        let latents = self.encode_batch_eval(x)?;
        let preds = self.predict_from_latents(&latents)?;
        Ok((latents, preds))
    }

    fn chunk_to_input(&self, chunk: &Chunk) -> Result<Array3<f64>> {
        if chunk.values.len() != self.config.input_len {
            return Err(Error::Shape(format!(
                "chunk length {} does not match encoder input length {}",
                chunk.values.len(),
                self.config.input_len
            )));
        }
        Ok(Array3::from_shape_vec((1, 1, chunk.values.len()), chunk.values.clone())
            .expect("chunk shape"))
    }

    /// Encode one chunk in inference mode.
    pub fn encode(&self, chunk: &Chunk) -> Result<Vec<f64>> {
        let latents = self.encode_batch_eval(&self.chunk_to_input(chunk)?)?;
        Ok(latents.row(0).to_vec())
    }

    /// Encode two chunks with the shared parameter set.
    pub fn encode_pair(&self, a: &Chunk, b: &Chunk) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.encode(a)?, self.encode(b)?))
    }

    /// Regress a rating from one latent vector; strictly inside (0, 1).
    pub fn regress(&self, latent: &[f64]) -> Result<f64> {
        let arr = Array2::from_shape_vec((1, latent.len()), latent.to_vec()).expect("latent shape");
        Ok(self.predict_from_latents(&arr)?[0])
    }

    /// Full single-chunk forward: (latent, predicted rating).
    pub fn forward(&self, chunk: &Chunk) -> Result<(Vec<f64>, f64)> {
        let latent = self.encode(chunk)?;
        let rating = self.regress(&latent)?;
        Ok((latent, rating))
    }

    pub fn encoder_param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for block in self.blocks.iter_mut() {
            out.push(block.conv.weight.as_slice_mut().unwrap());
            out.push(block.conv.bias.as_slice_mut().unwrap());
            out.push(block.bn.gamma.as_slice_mut().unwrap());
            out.push(block.bn.beta.as_slice_mut().unwrap());
        }
        out
    }

    pub fn head_param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.head.fc1.weight.as_slice_mut().unwrap(),
            self.head.fc1.bias.as_slice_mut().unwrap(),
            self.head.fc2.weight.as_slice_mut().unwrap(),
            self.head.fc2.bias.as_slice_mut().unwrap(),
        ]
    }

    pub fn all_param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for block in self.blocks.iter_mut() {
            out.push(block.conv.weight.as_slice_mut().unwrap());
            out.push(block.conv.bias.as_slice_mut().unwrap());
            out.push(block.bn.gamma.as_slice_mut().unwrap());
            out.push(block.bn.beta.as_slice_mut().unwrap());
        }
        out.push(self.head.fc1.weight.as_slice_mut().unwrap());
        out.push(self.head.fc1.bias.as_slice_mut().unwrap());
        out.push(self.head.fc2.weight.as_slice_mut().unwrap());
        out.push(self.head.fc2.bias.as_slice_mut().unwrap());
        out
    }

    /// All parameters plus batch-norm running statistics, canonical order.
    /// Used for best-epoch snapshots and bitwise freeze checks.
    pub fn state_vector(&self) -> Vec<f64> {
        let mut out = self.encoder_state_vector();
        out.extend(self.head.fc1.weight.iter());
        out.extend(self.head.fc1.bias.iter());
        out.extend(self.head.fc2.weight.iter());
        out.extend(self.head.fc2.bias.iter());
        out
    }

    /// Encoder parameters and running statistics only.
    pub fn encoder_state_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.extend(block.conv.weight.iter());
            out.extend(block.conv.bias.iter());
            out.extend(block.bn.gamma.iter());
            out.extend(block.bn.beta.iter());
            out.extend(block.bn.running_mean.iter());
            out.extend(block.bn.running_var.iter());
        }
        out
    }

    pub fn restore_state(&mut self, state: &[f64]) -> Result<()> {
        let mut cursor = 0usize;
        let mut take = |slice: &mut [f64]| -> Result<()> {
            let end = cursor + slice.len();
            if end > state.len() {
                return Err(Error::Shape("state vector too short".into()));
            }
            slice.copy_from_slice(&state[cursor..end]);
            cursor = end;
            Ok(())
        };
        for block in self.blocks.iter_mut() {
            take(block.conv.weight.as_slice_mut().unwrap())?;
            take(block.conv.bias.as_slice_mut().unwrap())?;
            take(block.bn.gamma.as_slice_mut().unwrap())?;
            take(block.bn.beta.as_slice_mut().unwrap())?;
            take(block.bn.running_mean.as_slice_mut().unwrap())?;
            take(block.bn.running_var.as_slice_mut().unwrap())?;
        }
        take(self.head.fc1.weight.as_slice_mut().unwrap())?;
        take(self.head.fc1.bias.as_slice_mut().unwrap())?;
        take(self.head.fc2.weight.as_slice_mut().unwrap())?;
        take(self.head.fc2.bias.as_slice_mut().unwrap())?;
        if cursor != state.len() {
            return Err(Error::Shape(format!(
                "state vector length {} does not match model ({cursor})",
                state.len()
            )));
        }
        Ok(())
    }
}

pub struct HeadOnlyCache {
    latents: Array2<f64>,
    hidden: Array2<f64>,
    preds: Vec<f64>,
}
