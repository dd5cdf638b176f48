//! Connector shape contracts (Linear, MLP1, MLP2), the canonical flattened
//! parameter layout, forward passes, and the per-pass FLOPs conventions used
//! by every search strategy.
//!
//! Canonical θ layout, frozen for hypernetwork slicing: layer 0 weights
//! (row-major), layer 0 bias, layer 1 weights, ... Activation between layers
//! is gelu. Connectors map the modality-B (text) embedding into modality-A
//! (image) space.

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};
use serde::{Deserialize, Serialize};

pub const MLP_HIDDEN: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectorKind {
    Linear,
    Mlp1,
    Mlp2,
}

/// One affine layer's shape: `rows × cols` weights plus a bias of length `rows`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
}

impl LayerShape {
    pub fn block_len(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorLayout {
    pub kind: ConnectorKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub layer_shapes: Vec<LayerShape>,
}

impl ConnectorLayout {
    pub fn total_params(&self) -> usize {
        self.layer_shapes.iter().map(|l| l.block_len()).sum()
    }

    /// Largest per-layer flattened weight+bias block (the slab requirement).
    pub fn max_layer_size(&self) -> usize {
        self.layer_shapes
            .iter()
            .map(|l| l.block_len())
            .max()
            .unwrap_or(0)
    }

    pub fn num_layers(&self) -> usize {
        self.layer_shapes.len()
    }
}

pub fn make_layout(kind: ConnectorKind, in_dim: usize, out_dim: usize) -> ConnectorLayout {
    let h = MLP_HIDDEN;
    let layer_shapes = match kind {
        ConnectorKind::Linear => vec![LayerShape {
            rows: out_dim,
            cols: in_dim,
        }],
        ConnectorKind::Mlp1 => vec![
            LayerShape { rows: h, cols: in_dim },
            LayerShape { rows: out_dim, cols: h },
        ],
        ConnectorKind::Mlp2 => vec![
            LayerShape { rows: h, cols: in_dim },
            LayerShape { rows: h, cols: h },
            LayerShape { rows: out_dim, cols: h },
        ],
    };
    ConnectorLayout {
        kind,
        in_dim,
        out_dim,
        layer_shapes,
    }
}

/// Flattened connector parameters against a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorParams {
    pub layout: ConnectorLayout,
    pub theta: Vec<f64>,
}

impl ConnectorParams {
    pub fn new(layout: ConnectorLayout, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != layout.total_params() {
            return Err(Error::Dimension(format!(
                "theta length {} != layout total {}",
                theta.len(),
                layout.total_params()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite theta".into()));
        }
        Ok(ConnectorParams { layout, theta })
    }

    pub fn zeros(layout: ConnectorLayout) -> Self {
        let theta = vec![0.0; layout.total_params()];
        ConnectorParams { layout, theta }
    }

    /// Fan-in-scaled Gaussian init (weights N(0, 1/cols), biases 0).
    pub fn init_fan_in(layout: ConnectorLayout, seed: u64) -> Self {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = crate::rng::substream(seed, "connector-init");
        let mut theta = Vec::with_capacity(layout.total_params());
        for l in &layout.layer_shapes {
            let std = 1.0 / (l.cols as f64).sqrt();
            for _ in 0..l.rows * l.cols {
                let v: f64 = rng.sample(StandardNormal);
                theta.push(v * std);
            }
            theta.extend(std::iter::repeat(0.0).take(l.rows));
        }
        ConnectorParams { layout, theta }
    }

    /// Per-layer (weights, bias) views in canonical order.
    pub fn unflatten(&self) -> Vec<(Tensor, Tensor)> {
        let mut out = Vec::with_capacity(self.layout.num_layers());
        let mut off = 0;
        for l in &self.layout.layer_shapes {
            let w = Tensor::new(
                vec![l.rows, l.cols],
                self.theta[off..off + l.rows * l.cols].to_vec(),
            )
            .expect("layout-sized");
            off += l.rows * l.cols;
            let b = Tensor::new(vec![l.rows], self.theta[off..off + l.rows].to_vec())
                .expect("layout-sized");
            off += l.rows;
            out.push((w, b));
        }
        out
    }

    pub fn flatten(layout: ConnectorLayout, layers: &[(Tensor, Tensor)]) -> Result<Self> {
        let mut theta = Vec::with_capacity(layout.total_params());
        for ((w, b), shape) in layers.iter().zip(&layout.layer_shapes) {
            if w.shape != [shape.rows, shape.cols] || b.shape != [shape.rows] {
                return Err(Error::Dimension("flatten: layer shape mismatch".into()));
            }
            theta.extend_from_slice(&w.data);
            theta.extend_from_slice(&b.data);
        }
        ConnectorParams::new(layout, theta)
    }
}

/// Differentiable forward pass: per-layer tape nodes `(weights, bias)` applied
/// as `gelu(affine(...))` with no activation after the last layer. Shared by
/// the direct trainer and the hypernetwork path so slab slicing introduces no
/// numeric change.
pub fn forward_on_tape(
    tape: &mut Tape,
    layers: &[(NodeId, NodeId)],
    layout: &ConnectorLayout,
    x: NodeId,
) -> Result<NodeId> {
    if tape.value(x).cols() != layout.in_dim {
        return Err(Error::Dimension(format!(
            "input width {} != in_dim {}",
            tape.value(x).cols(),
            layout.in_dim
        )));
    }
    let mut h = x;
    for (j, &(w, b)) in layers.iter().enumerate() {
        let wt = tape.transpose(w)?;
        let z = tape.matmul(h, wt)?;
        let z = tape.add_bias_row(z, b)?;
        h = if j + 1 < layers.len() { tape.gelu(z) } else { z };
    }
    Ok(h)
}

/// Inference forward pass on plain tensors (no graph).
pub fn forward(params: &ConnectorParams, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone());
    let layers: Vec<(NodeId, NodeId)> = params
        .unflatten()
        .into_iter()
        .map(|(w, b)| (tape.leaf(w), tape.leaf(b)))
        .collect();
    let out = forward_on_tape(&mut tape, &layers, &params.layout, xid)?;
    Ok(tape.value(out).clone())
}

// FLOPs conventions, fixed once and used by every strategy:
//   2 FLOPs per multiply-accumulate; backward = 2x forward; frozen encoders
//   are charged forward-only at 2·param_count per sample.

pub fn flops_per_forward(layout: &ConnectorLayout, batch: u64) -> u128 {
    let per_sample: u128 = layout
        .layer_shapes
        .iter()
        .map(|l| 2 * (l.rows as u128) * (l.cols as u128))
        .sum();
    batch as u128 * per_sample
}

/// InfoNCE similarity-matrix cost: b×b dot products of out_dim-vectors,
/// forward + backward.
pub fn flops_similarity(batch: u64, out_dim: usize) -> u128 {
    2 * (batch as u128) * (batch as u128) * (out_dim as u128) * 3
}

pub fn flops_encoder_embed(batch: u64, param_count: u64) -> u128 {
    2 * (param_count as u128) * (batch as u128)
}

/// One connector training step: forward + backward on the connector (3x
/// forward), the quadratic InfoNCE term, and the frozen-encoder embed cost
/// for both encoders of the pair.
pub fn flops_per_train_step(
    layout: &ConnectorLayout,
    batch: u64,
    enc_a_params: u64,
    enc_b_params: u64,
) -> u128 {
    3 * flops_per_forward(layout, batch)
        + flops_similarity(batch, layout.out_dim)
        + flops_encoder_embed(batch, enc_a_params)
        + flops_encoder_embed(batch, enc_b_params)
}
