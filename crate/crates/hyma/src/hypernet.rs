//! The HYMA hypernetwork: a per-pair conditioning codebook (or a learnt
//! compression of image-encoder features), layer-specific embeddings, and a
//! generator MLP whose fixed-size output slab is sliced into each connector
//! layer's weights-then-bias block.

use crate::connectors::{ConnectorLayout, ConnectorParams};
use crate::error::{Error, Result};
use crate::numerics::{NodeId, ParamSet, Tape, Tensor};
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConditioningMode {
    #[default]
    Codebook,
    EncoderCompression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperNetConfig {
    pub cond_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub num_pairs: usize,
    pub max_layers: usize,
    /// Shared generator output size: max over pairs of the largest layer block.
    pub slab_size: usize,
    /// Mean layer block size across all pairs' layouts; used by init scaling.
    pub mean_layer_block: usize,
    pub conditioning_mode: ConditioningMode,
    /// D_A of the pair's image encoder, required in encoder-compression mode.
    pub compressor_in_dim: Option<usize>,
}

impl HyperNetConfig {
    /// Derive slab and layer bounds from the layouts of every pair in the zoo.
    pub fn for_layouts(
        layouts: &[ConnectorLayout],
        cond_dim: usize,
        generator_hidden: Vec<usize>,
        conditioning_mode: ConditioningMode,
        compressor_in_dim: Option<usize>,
    ) -> Result<Self> {
        if layouts.is_empty() {
            return Err(Error::Config("no pair layouts".into()));
        }
        if cond_dim == 0 {
            return Err(Error::Config("cond_dim must be positive".into()));
        }
        if conditioning_mode == ConditioningMode::EncoderCompression && compressor_in_dim.is_none()
        {
            return Err(Error::Config(
                "encoder-compression mode needs compressor_in_dim".into(),
            ));
        }
        let slab_size = layouts.iter().map(|l| l.max_layer_size()).max().unwrap();
        let max_layers = layouts.iter().map(|l| l.num_layers()).max().unwrap();
        let blocks: Vec<usize> = layouts
            .iter()
            .flat_map(|l| l.layer_shapes.iter().map(|s| s.block_len()))
            .collect();
        let mean_layer_block = blocks.iter().sum::<usize>() / blocks.len();
        Ok(HyperNetConfig {
            cond_dim,
            generator_hidden,
            num_pairs: layouts.len(),
            max_layers,
            slab_size,
            mean_layer_block,
            conditioning_mode,
            compressor_in_dim,
        })
    }

    /// A layout too large for the slab is a build-time configuration error,
    /// never a step-time one.
    pub fn check_layout(&self, layout: &ConnectorLayout) -> Result<()> {
        if layout.num_layers() > self.max_layers {
            return Err(Error::Config(format!(
                "layout has {} layers, hypernetwork supports {}",
                layout.num_layers(),
                self.max_layers
            )));
        }
        if layout.max_layer_size() > self.slab_size {
            return Err(Error::Config(format!(
                "layer block {} exceeds slab size {}",
                layout.max_layer_size(),
                self.slab_size
            )));
        }
        Ok(())
    }

    /// Generator MLP widths, input to output.
    fn generator_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.cond_dim];
        dims.extend(&self.generator_hidden);
        dims.push(self.slab_size);
        dims
    }
}

/// Forward FLOPs of generating θ^k for one pair: the generator MLP runs once
/// per connector layer on a 1×C conditioning vector, plus the feature
/// compressor in encoder-compression mode (2 FLOPs per MAC throughout).
pub fn flops_generate(config: &HyperNetConfig, layout: &ConnectorLayout) -> u128 {
    let dims = config.generator_dims();
    let per_layer: u128 = dims
        .windows(2)
        .map(|w| 2 * w[0] as u128 * w[1] as u128)
        .sum();
    let compress = match config.conditioning_mode {
        ConditioningMode::Codebook => 0,
        ConditioningMode::EncoderCompression => {
            2 * config.cond_dim as u128 * config.compressor_in_dim.unwrap_or(0) as u128
        }
    };
    layout.num_layers() as u128 * per_layer + compress
}

/// Everything Adam updates: codebook, layer embeddings, generator parameters,
/// and the optional encoder-feature compressor.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperNetState {
    pub config: HyperNetConfig,
    pub params: ParamSet,
}

/// Seeded initialization. Codebook and layer embeddings are N(0, 1/C);
/// generator hidden layers are fan-in-scaled; the generator output layer is
/// down-scaled by the slab-to-mean-block ratio so generated connector weights
/// start near the variance of a directly built fan-in init.
pub fn init(config: &HyperNetConfig, seed: u64) -> Result<HyperNetState> {
    let mut r = rng::substream(seed, "hypernet-init");
    let c = config.cond_dim;
    let mut params = ParamSet::new();

    let gauss = |n: usize, std: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v: f64 = rng.sample(StandardNormal);
                v * std
            })
            .collect()
    };

    let emb_std = 1.0 / (c as f64).sqrt();
    if config.conditioning_mode == ConditioningMode::Codebook {
        params.push(
            "codebook",
            Tensor::new(vec![config.num_pairs, c], gauss(config.num_pairs * c, emb_std, &mut r))?
                .with_grad(),
        )?;
    } else {
        let d_in = config
            .compressor_in_dim
            .ok_or_else(|| Error::Config("missing compressor_in_dim".into()))?;
        let std = 1.0 / (d_in as f64).sqrt();
        params.push(
            "compressor.w",
            Tensor::new(vec![c, d_in], gauss(c * d_in, std, &mut r))?.with_grad(),
        )?;
        params.push("compressor.b", Tensor::zeros(vec![c]).with_grad())?;
    }
    params.push(
        "layer_emb",
        Tensor::new(
            vec![config.max_layers, c],
            gauss(config.max_layers * c, emb_std, &mut r),
        )?
        .with_grad(),
    )?;

    let dims = config.generator_dims();
    let last = dims.len() - 2;
    for i in 0..dims.len() - 1 {
        let (fan_in, fan_out) = (dims[i], dims[i + 1]);
        let std = if i == last {
            let ratio = config.slab_size as f64 / config.mean_layer_block as f64;
            1.0 / (fan_in as f64 * ratio).sqrt()
        } else {
            1.0 / (fan_in as f64).sqrt()
        };
        params.push(
            format!("gen.layer{i}.w"),
            Tensor::new(vec![fan_out, fan_in], gauss(fan_out * fan_in, std, &mut r))?.with_grad(),
        )?;
        params.push(format!("gen.layer{i}.b"), Tensor::zeros(vec![fan_out]).with_grad())?;
    }
    Ok(HyperNetState { config: config.clone(), params })
}

impl HyperNetState {
    /// Register every leaf on a fresh tape, in parameter order.
    pub fn leaves_on_tape(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect()
    }

    fn leaf(&self, leaves: &[NodeId], name: &str) -> Result<NodeId> {
        self.params
            .index_of(name)
            .map(|i| leaves[i])
            .ok_or_else(|| Error::Config(format!("no leaf `{name}`")))
    }

    /// Conditioning vector c^k as a 1×C tape node. In encoder-compression
    /// mode `batch_features` must be the pair's image-encoder batch (b×D_A);
    /// the batch average is recomputed every step and gradients flow into the
    /// compressor only.
    pub fn condition(
        &self,
        tape: &mut Tape,
        leaves: &[NodeId],
        k: usize,
        batch_features: Option<NodeId>,
    ) -> Result<NodeId> {
        if k >= self.config.num_pairs {
            return Err(Error::Range(format!(
                "pair index {k} >= {}",
                self.config.num_pairs
            )));
        }
        match self.config.conditioning_mode {
            ConditioningMode::Codebook => {
                let codebook = self.leaf(leaves, "codebook")?;
                tape.select_row(codebook, k)
            }
            ConditioningMode::EncoderCompression => {
                let feats = batch_features.ok_or_else(|| {
                    Error::Argument("encoder-compression mode requires batch features".into())
                })?;
                let mean = tape.mean_rows(feats)?;
                let w = self.leaf(leaves, "compressor.w")?;
                let b = self.leaf(leaves, "compressor.b")?;
                let wt = tape.transpose(w)?;
                let z = tape.matmul(mean, wt)?;
                tape.add_bias_row(z, b)
            }
        }
    }

    /// Generate connector layer nodes for pair k: per layer j the generator
    /// maps c^k + e_j to a slab, whose first rows·cols + rows entries become
    /// that layer's weights-then-bias block.
    pub fn generate_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &[NodeId],
        k: usize,
        layout: &ConnectorLayout,
        batch_features: Option<NodeId>,
    ) -> Result<Vec<(NodeId, NodeId)>> {
        self.config.check_layout(layout)?;
        let cond = self.condition(tape, leaves, k, batch_features)?;
        let layer_emb = self.leaf(leaves, "layer_emb")?;
        let dims = self.config.generator_dims();

        let mut out = Vec::with_capacity(layout.num_layers());
        for (j, shape) in layout.layer_shapes.iter().enumerate() {
            let ej = tape.select_row(layer_emb, j)?;
            let mut h = tape.add(cond, ej)?;
            for i in 0..dims.len() - 1 {
                let w = self.leaf(leaves, &format!("gen.layer{i}.w"))?;
                let b = self.leaf(leaves, &format!("gen.layer{i}.b"))?;
                let wt = tape.transpose(w)?;
                let z = tape.matmul(h, wt)?;
                let z = tape.add_bias_row(z, b)?;
                h = if i + 2 < dims.len() { tape.gelu(z) } else { z };
            }
            let slab = tape.reshape(h, vec![self.config.slab_size])?;
            let wlen = shape.rows * shape.cols;
            let wflat = tape.slice_1d(slab, 0, wlen)?;
            let w = tape.reshape(wflat, vec![shape.rows, shape.cols])?;
            let b = tape.slice_1d(slab, wlen, shape.rows)?;
            out.push((w, b));
        }
        Ok(out)
    }

    /// Generate θ^k as plain values (evaluation path).
    pub fn generate(
        &self,
        k: usize,
        layout: &ConnectorLayout,
        batch_features: Option<&Tensor>,
    ) -> Result<ConnectorParams> {
        let mut tape = Tape::new();
        let leaves = self.leaves_on_tape(&mut tape);
        let feats = batch_features.map(|t| tape.leaf(t.clone()));
        let layers = self.generate_on_tape(&mut tape, &leaves, k, layout, feats)?;
        let mut theta = Vec::with_capacity(layout.total_params());
        for (w, b) in layers {
            theta.extend_from_slice(&tape.value(w).data);
            theta.extend_from_slice(&tape.value(b).data);
        }
        ConnectorParams::new(layout.clone(), theta)
    }
}
