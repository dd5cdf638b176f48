//! Contrastive InfoNCE stitching loss plus the frozen-model scorers:
//! retrieval recall@k, prompt-matching classification, and QIP-style VQA.
//! Ties everywhere break toward the lower candidate index.

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};

pub const DEFAULT_TAU: f64 = 0.07;

/// InfoNCE over a batch where row i of `stitched` and row i of `anchors` form
/// the positive pair. Cosine similarity (unit rows, dot product), logits
/// divided by `tau`, row-wise softmax cross-entropy via max-subtracted
/// log-sum-exp. `symmetric` averages the row-wise and column-wise losses;
/// default is one-directional (rows).
pub fn info_nce_on_tape(
    tape: &mut Tape,
    stitched: NodeId,
    anchors: NodeId,
    tau: f64,
    symmetric: bool,
) -> Result<NodeId> {
    if tau <= 0.0 {
        return Err(Error::Argument(format!("temperature {tau} must be positive")));
    }
    let b = tape.value(stitched).rows();
    if tape.value(anchors).rows() != b {
        return Err(Error::Dimension("stitched/anchor batch mismatch".into()));
    }
    let sn = tape.l2_normalize_rows(stitched)?;
    let an = tape.l2_normalize_rows(anchors)?;
    let ant = tape.transpose(an)?;
    let sim = tape.matmul(sn, ant)?;
    let logits = tape.scale(sim, 1.0 / tau);

    let row_loss = |tape: &mut Tape, logits: NodeId| -> Result<NodeId> {
        let lse = tape.row_logsumexp(logits)?;
        let diag = tape.take_diag(logits)?;
        let per_row = tape.sub(lse, diag)?;
        Ok(tape.mean_all(per_row))
    };

    let loss = row_loss(tape, logits)?;
    if symmetric {
        let lt = tape.transpose(logits)?;
        let col = row_loss(tape, lt)?;
        let sum = tape.add(loss, col)?;
        Ok(tape.scale(sum, 0.5))
    } else {
        Ok(loss)
    }
}

/// Loss-only entry point on plain tensors.
pub fn info_nce(stitched: &Tensor, anchors: &Tensor, tau: f64, symmetric: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.leaf(stitched.clone());
    let a = tape.leaf(anchors.clone());
    let l = info_nce_on_tape(&mut tape, s, a, tau, symmetric)?;
    Ok(tape.value(l).data[0])
}

/// Fraction of items whose gold candidate ranks in the top k by score.
/// Ties rank the lower candidate index first.
pub fn recall_at_k(scores: &Tensor, gold: &[usize], k: usize) -> Result<f64> {
    let (items, cands) = (scores.rows(), scores.cols());
    if k > cands || k == 0 {
        return Err(Error::Argument(format!("k={k} outside 1..={cands}")));
    }
    if gold.len() != items {
        return Err(Error::Dimension("gold length != item count".into()));
    }
    let mut hits = 0usize;
    for i in 0..items {
        let row = scores.row(i);
        let g = gold[i];
        if g >= cands {
            return Err(Error::Range(format!("gold index {g} >= {cands}")));
        }
        // rank of gold = number of candidates strictly better, plus ties at
        // lower index
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > row[g] || (s == row[g] && j < g))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / items as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine-similarity score matrix: item rows vs candidate rows.
pub fn cosine_scores(items: &Tensor, candidates: &Tensor) -> Result<Tensor> {
    if items.cols() != candidates.cols() {
        return Err(Error::Dimension("width mismatch in cosine_scores".into()));
    }
    let mut data = Vec::with_capacity(items.rows() * candidates.rows());
    for i in 0..items.rows() {
        for j in 0..candidates.rows() {
            data.push(cosine(items.row(i), candidates.row(j)));
        }
    }
    Tensor::new(vec![items.rows(), candidates.rows()], data)
}

/// Zero-shot classification: match each image to the argmax-cosine stitched
/// class-prompt embedding; returns top-1 accuracy.
pub fn classify_by_prompt(
    stitched_class_bank: &Tensor,
    image_bank: &Tensor,
    gold: &[usize],
) -> Result<f64> {
    let scores = cosine_scores(image_bank, stitched_class_bank)?;
    recall_at_k(&scores, gold, 1)
}

/// QIP-style VQA: per item, match the image against its own candidate prompt
/// embeddings; identical machinery to prompt classification with per-item
/// candidate sets.
pub fn vqa_qip_score(
    prompt_banks: &[Tensor],
    image_bank: &Tensor,
    gold: &[usize],
) -> Result<f64> {
    if prompt_banks.len() != image_bank.rows() || gold.len() != image_bank.rows() {
        return Err(Error::Dimension("per-item banks/gold mismatch".into()));
    }
    let mut correct = 0usize;
    for (i, prompts) in prompt_banks.iter().enumerate() {
        if prompts.rows() < 2 {
            return Err(Error::Argument(format!(
                "item {i} needs at least 2 candidate prompts"
            )));
        }
        let img = image_bank.row(i);
        let mut best = (0usize, f64::NEG_INFINITY);
        for j in 0..prompts.rows() {
            let s = cosine(img, prompts.row(j));
            if s > best.1 {
                best = (j, s);
            }
        }
        if best.0 == gold[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / prompt_banks.len() as f64)
}
