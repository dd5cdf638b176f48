//! Frozen-encoder abstraction: the model zoo, synthetic encoder generation
//! with a planted quality ordering, and the on-disk embedding-bank format.

mod bank;
mod synthetic;

pub use bank::{read_bank, write_bank, Bank};
pub use synthetic::{generate_synthetic_zoo, Nonlinearity, SyntheticEncoderSpec};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    A,
    B,
}

/// A frozen, deterministic map from sample index to a D-dimensional embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderHandle {
    pub id: String,
    pub modality: Modality,
    pub dim: usize,
    pub param_count: u64,
    /// External benchmark score for UniT-1; supplied by config, never computed.
    pub unimodal_score: Option<f64>,
}

/// N modality-A plus M modality-B encoders with the canonical row-major pair
/// enumeration k = n·M + m.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelZoo {
    pub encoders_a: Vec<EncoderHandle>,
    pub encoders_b: Vec<EncoderHandle>,
}

impl ModelZoo {
    pub fn new(encoders_a: Vec<EncoderHandle>, encoders_b: Vec<EncoderHandle>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in encoders_a.iter().chain(&encoders_b) {
            if !seen.insert(&e.id) {
                return Err(Error::Config(format!("duplicate encoder id `{}`", e.id)));
            }
        }
        Ok(ModelZoo {
            encoders_a,
            encoders_b,
        })
    }

    pub fn n(&self) -> usize {
        self.encoders_a.len()
    }

    pub fn m(&self) -> usize {
        self.encoders_b.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.n() * self.m()
    }

    pub fn pair_index(&self, n: usize, m: usize) -> Result<usize> {
        if n >= self.n() || m >= self.m() {
            return Err(Error::Range(format!("pair ({n},{m}) outside zoo")));
        }
        Ok(n * self.m() + m)
    }

    pub fn pair_of(&self, k: usize) -> Result<(usize, usize)> {
        if k >= self.num_pairs() {
            return Err(Error::Range(format!("pair index {k} >= {}", self.num_pairs())));
        }
        Ok((k / self.m(), k % self.m()))
    }

    pub fn encoder_a(&self, n: usize) -> &EncoderHandle {
        &self.encoders_a[n]
    }

    pub fn encoder_b(&self, m: usize) -> &EncoderHandle {
        &self.encoders_b[m]
    }

    pub fn find(&self, id: &str) -> Option<(Modality, usize)> {
        if let Some(i) = self.encoders_a.iter().position(|e| e.id == id) {
            return Some((Modality::A, i));
        }
        self.encoders_b
            .iter()
            .position(|e| e.id == id)
            .map(|i| (Modality::B, i))
    }
}

/// Index-aligned embedding banks, one per encoder, with a train/val split.
/// Row i across banks corresponds to the same underlying (image, caption) pair.
#[derive(Debug, Clone)]
pub struct PairedEmbeddingDataset {
    pub banks: BTreeMap<String, Bank>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub count: usize,
}

impl PairedEmbeddingDataset {
    pub fn new(banks: BTreeMap<String, Bank>, train: Vec<usize>, val: Vec<usize>) -> Result<Self> {
        let mut count = None;
        for (id, b) in &banks {
            match count {
                None => count = Some(b.count),
                Some(c) if c != b.count => {
                    return Err(Error::Config(format!(
                        "bank `{id}` has {} rows, expected {c}",
                        b.count
                    )))
                }
                _ => {}
            }
        }
        let count = count.ok_or_else(|| Error::Config("no banks".into()))?;
        let overlap = train.iter().any(|i| val.contains(i));
        if overlap {
            return Err(Error::Config("train/val splits overlap".into()));
        }
        if train.iter().chain(&val).any(|&i| i >= count) {
            return Err(Error::Range("split index outside dataset".into()));
        }
        Ok(PairedEmbeddingDataset {
            banks,
            train,
            val,
            count,
        })
    }

    /// Deterministic split: a seeded shuffle of 0..count, with the first
    /// `val_fraction` share becoming validation.
    pub fn split_indices(count: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..count).collect();
        let mut rng = crate::rng::substream(seed, "dataset-split");
        idx.shuffle(&mut rng);
        let nval = ((count as f64) * val_fraction).floor() as usize;
        let val = idx[..nval].to_vec();
        let train = idx[nval..].to_vec();
        (train, val)
    }

    pub fn bank(&self, encoder_id: &str) -> Result<&Bank> {
        self.banks
            .get(encoder_id)
            .ok_or_else(|| Error::Config(format!("no bank for encoder `{encoder_id}`")))
    }
}

/// Fetch rows `indices` from an encoder's bank. Encoders are frozen, so the
/// result never requires gradients.
pub fn embed_batch(handle: &EncoderHandle, dataset: &PairedEmbeddingDataset, indices: &[usize]) -> Result<Tensor> {
    let bank = dataset.bank(&handle.id)?;
    if bank.dim != handle.dim {
        return Err(Error::Config(format!(
            "bank dim {} != encoder dim {} for `{}`",
            bank.dim, handle.dim, handle.id
        )));
    }
    let mut data = Vec::with_capacity(indices.len() * bank.dim);
    for &i in indices {
        if i >= bank.count {
            return Err(Error::Range(format!(
                "sample index {i} >= bank count {}",
                bank.count
            )));
        }
        data.extend_from_slice(bank.row(i));
    }
    let t = Tensor::new(vec![indices.len(), bank.dim], data)?;
    debug_assert!(!t.requires_grad);
    Ok(t)
}
