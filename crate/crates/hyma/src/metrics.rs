//! Ranking agreement metrics between a candidate strategy's pair ordering and
//! a reference ordering: NDCG@k with linear gains and Spearman rank
//! correlation with average ranks over ties.

use crate::error::{Error, Result};

/// Sort pair indices by descending score, ties broken by ascending pair index.
pub fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// NDCG@k of `candidate` against `reference`, both indexed by pair. Gains are
/// the raw reference scores (linear gains); discounts 1/log2(rank+1). Requires
/// nonnegative reference gains so the ideal ordering is well defined.
pub fn ndcg_at_k(candidate: &[f64], reference: &[f64], k: usize) -> Result<f64> {
    let n = candidate.len();
    if reference.len() != n {
        return Err(Error::Dimension("candidate/reference length mismatch".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Argument(format!("k={k} outside 1..={n}")));
    }
    if reference.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Argument(
            "reference gains must be finite and nonnegative".into(),
        ));
    }
    let dcg = |order: &[usize]| -> f64 {
        order
            .iter()
            .take(k)
            .enumerate()
            .map(|(rank, &idx)| reference[idx] / ((rank + 2) as f64).log2())
            .sum()
    };
    let got = dcg(&ranking_order(candidate));
    let ideal = dcg(&ranking_order(reference));
    if ideal == 0.0 {
        return Err(Error::Degenerate(
            "all reference gains are zero; NDCG undefined".into(),
        ));
    }
    Ok(got / ideal)
}

/// Average ranks (1-based) with ties sharing the mean of their rank span.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // mean of ranks i+1 ..= j+1
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation computed as the Pearson correlation of average
/// ranks. Errors if either side has zero rank variance.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension("length mismatch in spearman_rho".into()));
    }
    if a.len() < 2 {
        return Err(Error::Argument("need at least 2 items".into()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Argument("scores must be finite".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        let da = ra[i] - ma;
        let db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero rank variance on one side".into(),
        ));
    }
    Ok(cov / (va * vb).sqrt())
}

/// One row of the strategy-vs-reference comparison table.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DeltaRow {
    pub strategy: String,
    pub top1_pair: usize,
    pub top1_metric: f64,
    pub delta_vs_reference: f64,
    pub spearman_rho: f64,
    pub ndcg_at_k: f64,
    pub flops: u128,
}

/// Builds the comparison table: each strategy's top-1 pick scored on the
/// reference scale, with rank-agreement stats and FLOPs spent.
pub fn delta_table(
    reference: &[f64],
    strategies: &[(String, Vec<f64>, u128)],
    k: usize,
) -> Result<Vec<DeltaRow>> {
    let ref_best = ranking_order(reference)[0];
    let ref_best_score = reference[ref_best];
    let mut rows = Vec::with_capacity(strategies.len());
    for (name, scores, flops) in strategies {
        if scores.len() != reference.len() {
            return Err(Error::Dimension(format!(
                "strategy `{name}` score length mismatch"
            )));
        }
        let top1 = ranking_order(scores)[0];
        rows.push(DeltaRow {
            strategy: name.clone(),
            top1_pair: top1,
            top1_metric: reference[top1],
            delta_vs_reference: reference[top1] - ref_best_score,
            spearman_rho: spearman_rho(scores, reference)?,
            ndcg_at_k: ndcg_at_k(scores, reference, k)?,
            flops: *flops,
        });
    }
    Ok(rows)
}

/// CSV rendering of the delta table (header + one line per strategy).
pub fn delta_table_csv(rows: &[DeltaRow]) -> String {
    let mut out = String::from(
        "strategy,top1_pair,top1_metric,delta_vs_reference,spearman_rho,ndcg_at_k,flops\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.strategy,
            r.top1_pair,
            r.top1_metric,
            r.delta_vs_reference,
            r.spearman_rho,
            r.ndcg_at_k,
            r.flops
        ));
    }
    out
}
