//! Pair-search strategies over the zoo: exhaustive grid search (the reference
//! ranking), the hypernetwork search, random trials, UniT-1, an external
//! advisor, budgeted prune-by-median (AutoPair), and constrained grid search
//! on a data subset. Every strategy emits a `StrategyOutcome` with a ranked
//! pair list, the winning connector, and a FLOPs bill that reconciles with the
//! ledger exactly. Outcomes carry no wall-clock fields, so a rerun with the
//! same config and seed serializes byte-identically.

use crate::connectors::{self, ConnectorKind, ConnectorParams};
use crate::embeddings::{embed_batch, ModelZoo, PairedEmbeddingDataset};
use crate::error::{Error, Result};
use crate::hypernet::HyperNetConfig;
use crate::objectives::{cosine_scores, recall_at_k};
use crate::rng;
use crate::trainer::{
    data_batch_indices, Trainer, TrainConfig, TrainMode, TrainerState, RunRecord,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPair {
    pub pair: usize,
    pub metric: f64,
    /// Training diverged; ranked last regardless of metric.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub name: String,
    pub flops: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: String,
    /// Descending by metric; failed pairs last; ties by pair index.
    pub ranked: Vec<RankedPair>,
    pub winner_pair: usize,
    pub winner_theta: ConnectorParams,
    pub flops_total: u128,
    pub stages: Vec<StageLog>,
}

impl StrategyOutcome {
    fn build(
        strategy: &str,
        mut ranked: Vec<RankedPair>,
        winners: &[(usize, ConnectorParams)],
        stages: Vec<StageLog>,
    ) -> Result<StrategyOutcome> {
        if ranked.is_empty() {
            return Err(Error::Degenerate("empty ranking".into()));
        }
        ranked.sort_by(|a, b| {
            a.failed
                .cmp(&b.failed)
                .then(b.metric.partial_cmp(&a.metric).unwrap_or(std::cmp::Ordering::Equal))
                .then(a.pair.cmp(&b.pair))
        });
        let winner_pair = ranked[0].pair;
        let winner_theta = winners
            .iter()
            .find(|(k, _)| *k == winner_pair)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Degenerate("winner has no trained connector".into()))?;
        let flops_total = stages.iter().map(|s| s.flops).sum();
        Ok(StrategyOutcome {
            strategy: strategy.into(),
            ranked,
            winner_pair,
            winner_theta,
            flops_total,
            stages,
        })
    }

    /// Metric per pair on the full pair grid, for rank-agreement metrics.
    /// Pairs absent from this outcome's ranking get `None`.
    pub fn metric_by_pair(&self, num_pairs: usize) -> Vec<Option<f64>> {
        let mut v = vec![None; num_pairs];
        for r in &self.ranked {
            v[r.pair] = Some(if r.failed { f64::MIN } else { r.metric });
        }
        v
    }
}

/// Evaluation: stitch the validation text embeddings through θ and measure
/// recall@1 of text-to-image retrieval against the index-aligned image
/// embeddings. Returns the metric and the forward-only FLOPs spent.
pub fn eval_pair(
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
    k: usize,
    theta: &ConnectorParams,
) -> Result<(f64, u128)> {
    let (n, m) = zoo.pair_of(k)?;
    let split = if dataset.val.is_empty() {
        &dataset.train
    } else {
        &dataset.val
    };
    let xb = embed_batch(zoo.encoder_b(m), dataset, split)?;
    let xa = embed_batch(zoo.encoder_a(n), dataset, split)?;
    let stitched = connectors::forward(theta, &xb)?;
    let scores = cosine_scores(&stitched, &xa)?;
    let gold: Vec<usize> = (0..split.len()).collect();
    let metric = recall_at_k(&scores, &gold, 1)?;
    let b = split.len() as u128;
    let flops = connectors::flops_per_forward(&theta.layout, split.len() as u64)
        + 2 * b * b * theta.layout.out_dim as u128
        + connectors::flops_encoder_embed(split.len() as u64, zoo.encoder_a(n).param_count)
        + connectors::flops_encoder_embed(split.len() as u64, zoo.encoder_b(m).param_count);
    Ok((metric, flops))
}

/// Train one pair to the full schedule, evaluating at every epoch end and
/// keeping the best-performing checkpoint's connector and metric.
fn train_and_pick_best(
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
    kind: ConnectorKind,
    config: &TrainConfig,
    k: usize,
) -> Result<(RankedPair, ConnectorParams, u128, Vec<RunRecord>)> {
    let mut cfg = config.clone();
    cfg.mode = TrainMode::DirectPair;
    cfg.model_batch = 1;
    let trainer = Trainer::new(zoo, dataset, kind, cfg, vec![k])?;
    let mut state = trainer.init_state(None)?;
    let mut records = Vec::new();
    let mut best: Option<(f64, ConnectorParams)> = None;
    let mut eval_flops: u128 = 0;
    let mut diverged = false;
    let mut checkpoints: Vec<usize> = (1..=trainer.config.epochs)
        .map(|e| e * trainer.steps_per_epoch)
        .collect();
    if checkpoints.is_empty() {
        checkpoints.push(0);
    }
    for to in checkpoints {
        if let Err(e) = trainer.run(&mut state, to, &mut records) {
            match e {
                Error::Divergence { .. } | Error::NonFiniteGradient(_) => {
                    diverged = true;
                    break;
                }
                other => return Err(other),
            }
        }
        let theta = trainer.connector_for(&state, k)?;
        let (metric, ef) = eval_pair(zoo, dataset, k, &theta)?;
        eval_flops += ef;
        if best.as_ref().map_or(true, |(b, _)| metric > *b) {
            best = Some((metric, theta));
        }
    }
    let never_evaluated = best.is_none();
    let (metric, theta) = match best {
        Some(b) => b,
        // divergence before the first checkpoint: rank last on the init θ
        None => (0.0, trainer.connector_for(&state, k)?),
    };
    Ok((
        RankedPair {
            pair: k,
            metric: if diverged && never_evaluated { -1.0 } else { metric },
            failed: diverged,
        },
        theta,
        state.flops_cum + eval_flops,
        records,
    ))
}

/// A finished strategy: the serializable outcome, the per-step training log,
/// and (for the hypernetwork strategy) the final trainer state so callers can
/// checkpoint it.
pub struct SearchRun {
    pub outcome: StrategyOutcome,
    pub records: Vec<RunRecord>,
    pub hyma_state: Option<TrainerState>,
}

impl SearchRun {
    fn plain(outcome: StrategyOutcome, records: Vec<RunRecord>) -> Self {
        SearchRun {
            outcome,
            records,
            hyma_state: None,
        }
    }
}

/// Exhaustive grid search: independently train and evaluate every pair; the
/// resulting ranking is the reference for all agreement metrics.
pub fn run_grid_search(
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
    kind: ConnectorKind,
    config: &TrainConfig,
) -> Result<SearchRun> {
    let mut ranked = Vec::new();
    let mut winners = Vec::new();
    let mut stages = Vec::new();
    let mut records = Vec::new();
    for k in 0..zoo.num_pairs() {
        let (r, theta, flops, recs) = train_and_pick_best(zoo, dataset, kind, config, k)?;
        ranked.push(r);
        winners.push((k, theta));
        stages.push(StageLog {
            name: format!("pair-{k}"),
            flops,
        });
        records.extend(recs);
    }
    Ok(SearchRun::plain(
        StrategyOutcome::build("grid", ranked, &winners, stages)?,
        records,
    ))
}

/// Best Guess: the hypothetical bill of training only the eventual winner.
/// Derived from a finished grid outcome, never trained twice.
pub fn bestguess_flops(grid: &StrategyOutcome) -> Result<u128> {
    let name = format!("pair-{}", grid.winner_pair);
    grid.stages
        .iter()
        .find(|s| s.name == name)
        .map(|s| s.flops)
        .ok_or_else(|| Error::Argument("outcome has no per-pair stage log".into()))
}

/// HYMA: one hypernetwork training run over all pairs, then per-pair
/// generation and evaluation.
pub fn run_hyma_search(
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
    kind: ConnectorKind,
    hyper: &HyperNetConfig,
    config: &TrainConfig,
) -> Result<SearchRun> {
    let mut cfg = config.clone();
    cfg.mode = TrainMode::Hypernet;
    let trainer = Trainer::new(zoo, dataset, kind, cfg, (0..zoo.num_pairs()).collect())?;
    let mut state = trainer.init_state(Some(hyper))?;
    let mut records = Vec::new();
    trainer.run(&mut state, trainer.total_steps, &mut records)?;

    let mut ranked = Vec::new();
    let mut winners = Vec::new();
    let mut rank_flops: u128 = 0;
    for k in 0..zoo.num_pairs() {
        let theta = trainer.connector_for(&state, k)?;
        rank_flops += crate::hypernet::flops_generate(hyper, &trainer.layouts[k]);
        let (metric, ef) = eval_pair(zoo, dataset, k, &theta)?;
        rank_flops += ef;
        ranked.push(RankedPair {
            pair: k,
            metric,
            failed: false,
        });
        winners.push((k, theta));
    }
    let stages = vec![
        StageLog {
            name: "train".into(),
            flops: state.flops_cum,
        },
        StageLog {
            name: "rank".into(),
            flops: rank_flops,
        },
    ];
    Ok(SearchRun {
        outcome: StrategyOutcome::build("hyma", ranked, &winners, stages)?,
        records,
        hyma_state: Some(state),
    })
}

/// Random baseline: `trials` independent uniform pair draws, each trained
/// directly; the reported metric of a pair is its best across trials.
pub fn run_random(
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
    kind: ConnectorKind,
    config: &TrainConfig,
    trials: usize,
) -> Result<SearchRun> {
    if trials == 0 {
        return Err(Error::Argument("need at least 1 trial".into()));
    }
    let mut per_pair: std::collections::BTreeMap<usize, (RankedPair, ConnectorParams)> =
        Default::default();
    let mut stages = Vec::new();
    let mut records = Vec::new();
    for t in 0..trials {
        let k = rng::substream_indexed(config.seed, "random-strategy", t as u64)
            .gen_range(0..zoo.num_pairs());
        let (r, theta, flops, recs) = train_and_pick_best(zoo, dataset, kind, config, k)?;
        stages.push(StageLog {
            name: format!("trial-{t}-pair-{k}"),
            flops,
        });
        records.extend(recs);
        match per_pair.get(&k) {
            Some((prev, _)) if prev.metric >= r.metric => {}
            _ => {
                per_pair.insert(k, (r, theta));
            }
        }
    }
    let (ranked, winners): (Vec<_>, Vec<_>) = per_pair
        .into_iter()
        .map(|(k, (r, t))| (r, (k, t)))
        .unzip();
    Ok(SearchRun::plain(
        StrategyOutcome::build("random", ranked, &winners, stages)?,
        records,
    ))
}

/// Mean metric across a random outcome's trial records; the headline number
/// the baseline reports.
pub fn random_mean_metric(outcome: &StrategyOutcome) -> f64 {
    let s: f64 = outcome.ranked.iter().map(|r| r.metric).sum();
    s / outcome.ranked.len() as f64
}

/// UniT-1: stitch the top-scoring encoder of each modality (ties to the lower
/// index) and train only that pair.
pub fn run_unit1(
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
    kind: ConnectorKind,
    config: &TrainConfig,
) -> Result<SearchRun> {
    let pick = |handles: &[crate::embeddings::EncoderHandle]| -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, h) in handles.iter().enumerate() {
            let s = h.unimodal_score.ok_or_else(|| {
                Error::Config(format!("encoder `{}` has no unimodal score", h.id))
            })?;
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        Ok(best.expect("non-empty zoo").0)
    };
    let n = pick(&zoo.encoders_a)?;
    let m = pick(&zoo.encoders_b)?;
    let k = zoo.pair_index(n, m)?;
    let (r, theta, flops, recs) = train_and_pick_best(zoo, dataset, kind, config, k)?;
    Ok(SearchRun::plain(
        StrategyOutcome::build(
            "unit1",
            vec![r],
            &[(k, theta)],
            vec![StageLog {
                name: format!("pair-{k}"),
                flops,
            }],
        )?,
        recs,
    ))
}

// ---------------------------------------------------------------------------
// Advisor strategy
// ---------------------------------------------------------------------------

/// Transport-agnostic advisor: send a prompt, receive free-form text.
pub trait Advisor {
    fn ask(&mut self, prompt: &str) -> Result<String>;
}

/// Deterministic advisor for tests and offline runs: replies are consumed in
/// order; running out is a transport failure.
pub struct ScriptedAdvisor {
    replies: Vec<String>,
    cursor: usize,
}

impl ScriptedAdvisor {
    pub fn new(replies: Vec<String>) -> Self {
        ScriptedAdvisor { replies, cursor: 0 }
    }
}

impl Advisor for ScriptedAdvisor {
    fn ask(&mut self, _prompt: &str) -> Result<String> {
        if self.cursor >= self.replies.len() {
            return Err(Error::AdvisorUnavailable("script exhausted".into()));
        }
        let r = self.replies[self.cursor].clone();
        self.cursor += 1;
        Ok(r)
    }
}

/// Prompt rendered from zoo metadata; the reply contract is a bracketed
/// `(image_encoder, text_encoder)` tuple and nothing else.
pub fn render_advisor_prompt(
    zoo: &ModelZoo,
    task: &str,
    dataset_desc: &str,
    kind: ConnectorKind,
) -> String {
    let list = |hs: &[crate::embeddings::EncoderHandle]| -> String {
        hs.iter()
            .map(|h| {
                format!(
                    "- {} (dim {}, params {}, benchmark {})",
                    h.id,
                    h.dim,
                    h.param_count,
                    h.unimodal_score
                        .map_or("n/a".into(), |s| format!("{s:.3}"))
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    format!(
        "You are an oracle which will predict the best-performing pair of \
         frozen encoders for a multi-modal stitching task.\n\
         Task: {task}\nDataset: {dataset_desc}\nConnector: {kind:?}\n\
         Image encoders:\n{}\nText encoders:\n{}\n\
         Answer in (image_encoder, text_encoder) format ONLY.",
        list(&zoo.encoders_a),
        list(&zoo.encoders_b),
    )
}

/// Extract the `(image_encoder, text_encoder)` tuple from a possibly prose-
/// wrapped reply: the last parenthesized, comma-separated pair of known ids.
pub fn parse_advisor_reply(zoo: &ModelZoo, reply: &str) -> Result<usize> {
    let mut found: Option<(usize, usize)> = None;
    let bytes = reply.as_bytes();
    let mut i = 0;
    while let Some(open) = reply[i..].find('(').map(|p| p + i) {
        if let Some(close) = reply[open + 1..].find(')').map(|p| p + open + 1) {
            let inner = &reply[open + 1..close];
            if let Some((a, b)) = inner.split_once(',') {
                let (a, b) = (a.trim(), b.trim());
                if let (Some((ma, na)), Some((mb, nb))) = (zoo.find(a), zoo.find(b)) {
                    use crate::embeddings::Modality;
                    if ma == Modality::A && mb == Modality::B {
                        found = Some((na, nb));
                    }
                }
            }
            i = close + 1;
        } else {
            break;
        }
        if i >= bytes.len() {
            break;
        }
    }
    match found {
        Some((n, m)) => zoo.pair_index(n, m),
        None => Err(Error::AdvisorParse(format!(
            "no (image_encoder, text_encoder) tuple with known ids in reply: {reply:?}"
        ))),
    }
}

/// Ask an external advisor which pair to train; one retry on a malformed
/// reply, then the parse error surfaces.
pub fn run_ask_advisor(
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
    kind: ConnectorKind,
    config: &TrainConfig,
    advisor: &mut dyn Advisor,
    task: &str,
    dataset_desc: &str,
) -> Result<SearchRun> {
    let prompt = render_advisor_prompt(zoo, task, dataset_desc, kind);
    let k = match parse_advisor_reply(zoo, &advisor.ask(&prompt)?) {
        Ok(k) => k,
        Err(Error::AdvisorParse(_)) => parse_advisor_reply(zoo, &advisor.ask(&prompt)?)?,
        Err(e) => return Err(e),
    };
    let (r, theta, flops, recs) = train_and_pick_best(zoo, dataset, kind, config, k)?;
    Ok(SearchRun::plain(
        StrategyOutcome::build(
            "ask",
            vec![r],
            &[(k, theta)],
            vec![StageLog {
                name: format!("pair-{k}"),
                flops,
            }],
        )?,
        recs,
    ))
}

// ---------------------------------------------------------------------------
// AutoPair: rounds of 2-epoch training, prune metric <= median, one budget.
// The control loop is written against an abstract arm so the prune and budget
// semantics can be exercised on mocked learning curves.
// ---------------------------------------------------------------------------

/// One competitor in the AutoPair tournament.
pub trait PairArm {
    fn pair(&self) -> usize;
    /// FLOPs the next training step would cost (0 if the schedule is done).
    fn next_step_cost(&self) -> u128;
    fn steps_per_epoch(&self) -> usize;
    fn schedule_done(&self) -> bool;
    fn train_step(&mut self) -> Result<u128>;
    /// Current eval metric plus the FLOPs the evaluation costs.
    fn eval(&mut self) -> Result<(f64, u128)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoPairRound {
    pub survivors_before: Vec<usize>,
    pub metrics: Vec<(usize, f64)>,
    pub median: f64,
    pub pruned: Vec<usize>,
    pub partial: bool,
}

pub struct AutoPairReport {
    pub rounds: Vec<AutoPairRound>,
    pub ranked: Vec<RankedPair>,
    pub flops_spent: u128,
}

fn median_of(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// The AutoPair control loop: each round trains every survivor for two epochs
/// (resuming its parameters), ranks by eval metric, and prunes every pair at
/// or below the median; a sole survivor trains until the budget is exhausted.
/// No step starts that would exceed `budget`.
pub fn autopair_core(arms: &mut [&mut dyn PairArm], budget: u128) -> Result<AutoPairReport> {
    if budget == 0 {
        return Err(Error::Argument("budget must be positive".into()));
    }
    if arms.is_empty() {
        return Err(Error::Argument("no pairs to search".into()));
    }
    let mut remaining = budget;
    let mut survivors: Vec<usize> = (0..arms.len()).collect();
    let mut latest: Vec<Option<f64>> = vec![None; arms.len()];
    let mut rounds = Vec::new();

    loop {
        let mut partial = false;
        // train each survivor two epochs, step-gated on the budget
        'pairs: for &i in &survivors {
            let steps = 2 * arms[i].steps_per_epoch();
            for _ in 0..steps {
                if arms[i].schedule_done() {
                    break;
                }
                let cost = arms[i].next_step_cost();
                if cost > remaining {
                    partial = true;
                    break 'pairs;
                }
                remaining -= arms[i].train_step()?;
            }
        }
        // rank on the eval metric (evaluation is charged to the budget but
        // never gated: a ranking must always be produced)
        let mut metrics = Vec::with_capacity(survivors.len());
        for &i in &survivors {
            let (m, ef) = arms[i].eval()?;
            remaining = remaining.saturating_sub(ef);
            latest[i] = Some(m);
            metrics.push((arms[i].pair(), m));
        }
        if survivors.len() == 1 || partial {
            if partial {
                let mut sorted: Vec<f64> = metrics.iter().map(|&(_, m)| m).collect();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                rounds.push(AutoPairRound {
                    survivors_before: survivors.iter().map(|&i| arms[i].pair()).collect(),
                    metrics,
                    median: median_of(&sorted),
                    pruned: Vec::new(),
                    partial: true,
                });
            }
            break;
        }
        let mut sorted: Vec<f64> = metrics.iter().map(|&(_, m)| m).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = median_of(&sorted);
        let keep: Vec<usize> = survivors
            .iter()
            .copied()
            .filter(|&i| latest[i].unwrap() > median)
            .collect();
        let keep = if keep.is_empty() {
            // all metrics tied at the median: keep the best single pair
            let best = *survivors
                .iter()
                .max_by(|&&a, &&b| latest[a].unwrap().partial_cmp(&latest[b].unwrap()).unwrap())
                .unwrap();
            vec![best]
        } else {
            keep
        };
        let pruned: Vec<usize> = survivors
            .iter()
            .filter(|i| !keep.contains(i))
            .map(|&i| arms[i].pair())
            .collect();
        rounds.push(AutoPairRound {
            survivors_before: survivors.iter().map(|&i| arms[i].pair()).collect(),
            metrics,
            median,
            pruned,
            partial: false,
        });
        survivors = keep;
        if survivors.len() == 1 {
            // sole survivor trains to the budget, then a final ranking forms
            let i = survivors[0];
            loop {
                if arms[i].schedule_done() {
                    break;
                }
                let cost = arms[i].next_step_cost();
                if cost > remaining {
                    break;
                }
                remaining -= arms[i].train_step()?;
            }
            let (m, ef) = arms[i].eval()?;
            remaining = remaining.saturating_sub(ef);
            latest[i] = Some(m);
            break;
        }
    }

    let mut ranked: Vec<RankedPair> = (0..arms.len())
        .filter_map(|i| {
            latest[i].map(|m| RankedPair {
                pair: arms[i].pair(),
                metric: m,
                failed: false,
            })
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.metric
            .partial_cmp(&a.metric)
            .unwrap()
            .then(a.pair.cmp(&b.pair))
    });
    Ok(AutoPairReport {
        rounds,
        ranked,
        flops_spent: budget - remaining,
    })
}

/// Real arm wrapping the direct trainer; parameters persist across rounds.
struct TrainerArm<'a> {
    trainer: Trainer<'a>,
    state: TrainerState,
    records: Vec<RunRecord>,
    k: usize,
}

impl PairArm for TrainerArm<'_> {
    fn pair(&self) -> usize {
        self.k
    }
    fn next_step_cost(&self) -> u128 {
        if self.schedule_done() {
            return 0;
        }
        let b = data_batch_indices(
            &self.trainer.dataset.train,
            self.trainer.config.data_batch,
            self.trainer.config.seed,
            self.state.step,
        )
        .len();
        self.trainer.flops_for_pair_step(self.k, b, None)
    }
    fn steps_per_epoch(&self) -> usize {
        self.trainer.steps_per_epoch
    }
    fn schedule_done(&self) -> bool {
        self.state.step >= self.trainer.total_steps
    }
    fn train_step(&mut self) -> Result<u128> {
        let before = self.state.flops_cum;
        let to = self.state.step + 1;
        self.trainer.run(&mut self.state, to, &mut self.records)?;
        Ok(self.state.flops_cum - before)
    }
    fn eval(&mut self) -> Result<(f64, u128)> {
        let theta = self.trainer.connector_for(&self.state, self.k)?;
        eval_pair(self.trainer.zoo, self.trainer.dataset, self.k, &theta)
    }
}

/// AutoPair over the real zoo under a FLOPs budget (conventionally the HYMA
/// bill on the same zoo).
pub fn run_autopair(
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
    kind: ConnectorKind,
    config: &TrainConfig,
    budget_flops: u128,
) -> Result<SearchRun> {
    let mut arms: Vec<TrainerArm> = (0..zoo.num_pairs())
        .map(|k| -> Result<TrainerArm> {
            let mut cfg = config.clone();
            cfg.mode = TrainMode::DirectPair;
            cfg.model_batch = 1;
            let trainer = Trainer::new(zoo, dataset, kind, cfg, vec![k])?;
            let state = trainer.init_state(None)?;
            Ok(TrainerArm {
                trainer,
                state,
                records: Vec::new(),
                k,
            })
        })
        .collect::<Result<_>>()?;
    let report = {
        let mut dyns: Vec<&mut dyn PairArm> = arms.iter_mut().map(|a| a as _).collect();
        autopair_core(&mut dyns, budget_flops)?
    };
    let winner = report.ranked[0].pair;
    let winners: Vec<(usize, ConnectorParams)> = arms
        .iter()
        .filter(|a| a.k == winner)
        .map(|a| -> Result<_> {
            Ok((a.k, a.trainer.connector_for(&a.state, a.k)?))
        })
        .collect::<Result<_>>()?;
    let stages = vec![StageLog {
        name: "tournament".into(),
        flops: report.flops_spent,
    }];
    let mut records = Vec::new();
    for a in arms {
        records.extend(a.records);
    }
    Ok(SearchRun::plain(
        StrategyOutcome::build("autopair", report.ranked, &winners, stages)?,
        records,
    ))
}

/// Constrained grid search: identical to grid search but each pair trains on
/// a seeded random `data_fraction` of the training split. Fraction 1.0 is
/// byte-identical to `run_grid_search` under the same seed.
pub fn run_cgs(
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
    kind: ConnectorKind,
    config: &TrainConfig,
    data_fraction: f64,
) -> Result<SearchRun> {
    if !(0.0 < data_fraction && data_fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "data_fraction {data_fraction} outside (0, 1]"
        )));
    }
    let keep = ((dataset.train.len() as f64) * data_fraction).floor() as usize;
    if keep == 0 {
        return Err(Error::Argument("data fraction leaves no samples".into()));
    }
    // choose positions by seeded shuffle, then restore original order so
    // fraction 1.0 leaves the training split untouched
    let mut pos: Vec<usize> = (0..dataset.train.len()).collect();
    use rand::seq::SliceRandom;
    pos.shuffle(&mut rng::substream(config.seed, "cgs-subset"));
    let mut pos = pos[..keep].to_vec();
    pos.sort_unstable();
    let train: Vec<usize> = pos.iter().map(|&p| dataset.train[p]).collect();
    let reduced = PairedEmbeddingDataset {
        banks: dataset.banks.clone(),
        train,
        val: dataset.val.clone(),
        count: dataset.count,
    };
    let mut cfg = config.clone();
    cfg.data_batch = cfg.data_batch.min(reduced.train.len());
    let mut run = run_grid_search(zoo, &reduced, kind, &cfg)?;
    if data_fraction < 1.0 {
        run.outcome.strategy = "cgs".into();
    }
    Ok(run)
}

/// Efficiency ratios reported beside every comparison: FLOPs of the reference
/// strategies over HYMA's bill.
pub fn efficiency_ratios(
    grid: &StrategyOutcome,
    hyma: &StrategyOutcome,
) -> Result<(f64, f64)> {
    if hyma.flops_total == 0 {
        return Err(Error::Degenerate("zero-cost run".into()));
    }
    let bg = bestguess_flops(grid)?;
    Ok((
        grid.flops_total as f64 / hyma.flops_total as f64,
        bg as f64 / hyma.flops_total as f64,
    ))
}
