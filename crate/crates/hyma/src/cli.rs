//! Run configuration, experiment orchestration, and the on-disk results
//! store. One JSON config file fully determines an experiment; every command
//! is idempotent with respect to the config and seed, and a strategy's output
//! directory holds either a finalized run or one explicitly marked aborted.

use crate::connectors::{self, ConnectorKind, ConnectorLayout};
use crate::embeddings::{
    read_bank, write_bank, Bank, EncoderHandle, ModelZoo, PairedEmbeddingDataset,
    SyntheticEncoderSpec,
};
use crate::error::{Error, Result};
use crate::hypernet::{ConditioningMode, HyperNetConfig};
use crate::metrics::{ndcg_at_k, spearman_rho};
use crate::search::{
    self, bestguess_flops, eval_pair, random_mean_metric, ScriptedAdvisor, SearchRun,
    StrategyOutcome,
};
use crate::trainer::{
    data_batch_indices, pair_sampler, records_to_jsonl, save_checkpoint, Trainer, TrainConfig,
    TrainMode,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

pub const STRATEGY_NAMES: [&str; 7] =
    ["grid", "hyma", "random", "unit1", "ask", "autopair", "cgs"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZooConfig {
    Synthetic {
        encoders_a: Vec<SyntheticEncoderSpec>,
        encoders_b: Vec<SyntheticEncoderSpec>,
        sample_count: usize,
        val_fraction: f64,
    },
    Banks {
        encoders_a: Vec<EncoderHandle>,
        encoders_b: Vec<EncoderHandle>,
        bank_dir: PathBuf,
        val_fraction: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperSpec {
    pub cond_dim: usize,
    pub generator_hidden: Vec<usize>,
    #[serde(default)]
    pub conditioning_mode: ConditioningMode,
}

fn default_cgs_fraction() -> f64 {
    1.0 / 3.0
}
fn default_random_trials() -> usize {
    5
}
fn default_task() -> String {
    "image-text retrieval".into()
}
fn default_dataset_desc() -> String {
    "index-aligned paired embedding banks".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub connector: ConnectorKind,
    pub zoo: ZooConfig,
    pub train: TrainConfig,
    pub hyper: HyperSpec,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub strategies: Vec<String>,
    #[serde(default)]
    pub autopair_budget: Option<u128>,
    #[serde(default = "default_cgs_fraction")]
    pub cgs_fraction: f64,
    #[serde(default = "default_random_trials")]
    pub random_trials: usize,
    /// Scripted advisor replies; a live endpoint would plug in behind the
    /// same trait, configured here and authenticated via environment.
    #[serde(default)]
    pub advisor_replies: Vec<String>,
    #[serde(default = "default_task")]
    pub task: String,
    #[serde(default = "default_dataset_desc")]
    pub dataset_desc: String,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let raw = std::fs::read_to_string(path)?;
    let mut cfg: RunConfig = serde_json::from_str(&raw)?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion(format!(
            "config schema_version {} (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    // one root seed governs every substream
    cfg.train.seed = cfg.seed;
    for name in &cfg.strategies {
        if !STRATEGY_NAMES.contains(&name.as_str()) {
            return Err(Error::Config(format!("unknown strategy `{name}`")));
        }
    }
    Ok(cfg)
}

/// Materialize the zoo and dataset a config describes.
pub fn load_world(cfg: &RunConfig) -> Result<(ModelZoo, PairedEmbeddingDataset)> {
    match &cfg.zoo {
        ZooConfig::Synthetic {
            encoders_a,
            encoders_b,
            sample_count,
            val_fraction,
        } => crate::embeddings::generate_synthetic_zoo(
            encoders_a,
            encoders_b,
            *sample_count,
            cfg.seed,
            *val_fraction,
        ),
        ZooConfig::Banks {
            encoders_a,
            encoders_b,
            bank_dir,
            val_fraction,
        } => {
            let zoo = ModelZoo::new(encoders_a.clone(), encoders_b.clone())?;
            let mut banks: BTreeMap<String, Bank> = BTreeMap::new();
            for h in encoders_a.iter().chain(encoders_b) {
                let path = bank_dir.join(format!("{}.emb", h.id));
                banks.insert(h.id.clone(), read_bank(&path)?);
            }
            let count = banks
                .values()
                .next()
                .ok_or_else(|| Error::Config("no banks".into()))?
                .count;
            let (train, val) =
                PairedEmbeddingDataset::split_indices(count, *val_fraction, cfg.seed);
            let dataset = PairedEmbeddingDataset::new(banks, train, val)?;
            Ok((zoo, dataset))
        }
    }
}

fn layouts_for(cfg: &RunConfig, zoo: &ModelZoo) -> Vec<ConnectorLayout> {
    (0..zoo.num_pairs())
        .map(|k| {
            let (n, m) = zoo.pair_of(k).expect("valid pair");
            connectors::make_layout(cfg.connector, zoo.encoder_b(m).dim, zoo.encoder_a(n).dim)
        })
        .collect()
}

pub fn build_hyper(cfg: &RunConfig, zoo: &ModelZoo) -> Result<HyperNetConfig> {
    let layouts = layouts_for(cfg, zoo);
    let compressor_in_dim = match cfg.hyper.conditioning_mode {
        ConditioningMode::Codebook => None,
        ConditioningMode::EncoderCompression => {
            let d = zoo.encoders_a[0].dim;
            if zoo.encoders_a.iter().any(|h| h.dim != d) {
                return Err(Error::Config(
                    "encoder-compression mode needs uniform image-encoder dims".into(),
                ));
            }
            Some(d)
        }
    };
    HyperNetConfig::for_layouts(
        &layouts,
        cfg.hyper.cond_dim,
        cfg.hyper.generator_hidden.clone(),
        cfg.hyper.conditioning_mode,
        compressor_in_dim,
    )
}

// ---------------------------------------------------------------------------
// Results store
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: String, // running | finalized | aborted
    pub strategy: String,
    pub config: RunConfig,
    #[serde(default)]
    pub error: Option<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn strategy_dir(cfg: &RunConfig, strategy: &str) -> PathBuf {
    cfg.output_dir.join(strategy)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Materialize a synthetic zoo to bank files plus a manifest recording the
/// planted quality order.
pub fn cmd_gen_synthetic(cfg: &RunConfig, out: &mut impl std::io::Write) -> Result<()> {
    let (encoders_a, encoders_b) = match &cfg.zoo {
        ZooConfig::Synthetic {
            encoders_a,
            encoders_b,
            ..
        } => (encoders_a.clone(), encoders_b.clone()),
        ZooConfig::Banks { .. } => {
            return Err(Error::Config(
                "gen-synthetic requires a synthetic zoo config".into(),
            ))
        }
    };
    let (zoo, dataset) = load_world(cfg)?;
    let dir = cfg.output_dir.join("banks");
    std::fs::create_dir_all(&dir)?;
    for (id, bank) in &dataset.banks {
        write_bank(&dir.join(format!("{id}.emb")), bank)?;
    }
    // planted order: pairs ranked by the product of their planted qualities
    let mut planted: Vec<(usize, f64)> = (0..zoo.num_pairs())
        .map(|k| {
            let (n, m) = zoo.pair_of(k).expect("valid");
            (k, encoders_a[n].quality * encoders_b[m].quality)
        })
        .collect();
    planted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    #[derive(Serialize)]
    struct GenManifest<'a> {
        schema_version: u32,
        seed: u64,
        sample_count: usize,
        encoders_a: &'a [SyntheticEncoderSpec],
        encoders_b: &'a [SyntheticEncoderSpec],
        planted_order: Vec<(usize, f64)>,
    }
    let sample_count = dataset.count;
    write_json(
        &dir.join("manifest.json"),
        &GenManifest {
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            sample_count,
            encoders_a: &encoders_a,
            encoders_b: &encoders_b,
            planted_order: planted.clone(),
        },
    )?;
    writeln!(out, "wrote {} banks to {}", dataset.banks.len(), dir.display())?;
    writeln!(out, "planted pair order (pair, quality product):")?;
    for (k, q) in planted {
        let (n, m) = zoo.pair_of(k).expect("valid");
        writeln!(out, "  pair {k} = ({}, {}): {q:.4}", encoders_a[n].id, encoders_b[m].id)?;
    }
    Ok(())
}

/// Planted quality products per pair, the reference order for synthetic zoos.
pub fn planted_qualities(cfg: &RunConfig, zoo: &ModelZoo) -> Option<Vec<f64>> {
    match &cfg.zoo {
        ZooConfig::Synthetic {
            encoders_a,
            encoders_b,
            ..
        } => Some(
            (0..zoo.num_pairs())
                .map(|k| {
                    let (n, m) = zoo.pair_of(k).expect("valid");
                    encoders_a[n].quality * encoders_b[m].quality
                })
                .collect(),
        ),
        ZooConfig::Banks { .. } => None,
    }
}

fn dispatch_strategy(
    cfg: &RunConfig,
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
    strategy: &str,
) -> Result<SearchRun> {
    match strategy {
        "grid" => search::run_grid_search(zoo, dataset, cfg.connector, &cfg.train),
        "hyma" => {
            let hyper = build_hyper(cfg, zoo)?;
            search::run_hyma_search(zoo, dataset, cfg.connector, &hyper, &cfg.train)
        }
        "random" => {
            search::run_random(zoo, dataset, cfg.connector, &cfg.train, cfg.random_trials)
        }
        "unit1" => search::run_unit1(zoo, dataset, cfg.connector, &cfg.train),
        "ask" => {
            let mut advisor = ScriptedAdvisor::new(cfg.advisor_replies.clone());
            search::run_ask_advisor(
                zoo,
                dataset,
                cfg.connector,
                &cfg.train,
                &mut advisor,
                &cfg.task,
                &cfg.dataset_desc,
            )
        }
        "autopair" => {
            let budget = match cfg.autopair_budget {
                Some(b) => b,
                None => predict_hyma_flops(cfg, zoo, dataset)?,
            };
            search::run_autopair(zoo, dataset, cfg.connector, &cfg.train, budget)
        }
        "cgs" => search::run_cgs(zoo, dataset, cfg.connector, &cfg.train, cfg.cgs_fraction),
        other => Err(Error::Config(format!("unknown strategy `{other}`"))),
    }
}

/// Run one strategy end to end and persist outcome, run records, checkpoint
/// (hypernetwork strategy), and a finalized manifest.
pub fn cmd_search(cfg: &RunConfig, strategy: &str, out: &mut impl std::io::Write) -> Result<()> {
    let dir = strategy_dir(cfg, strategy);
    std::fs::create_dir_all(&dir)?;
    let manifest_path = dir.join("manifest.json");
    write_json(
        &manifest_path,
        &RunManifest {
            status: "running".into(),
            strategy: strategy.into(),
            config: cfg.clone(),
            error: None,
        },
    )?;
    let result = (|| -> Result<SearchRun> {
        let (zoo, dataset) = load_world(cfg)?;
        let run = dispatch_strategy(cfg, &zoo, &dataset, strategy)?;
        write_json(&dir.join("outcome.json"), &run.outcome)?;
        std::fs::write(dir.join("runrecords.jsonl"), records_to_jsonl(&run.records)?)?;
        if let Some(state) = &run.hyma_state {
            let mut tcfg = cfg.train.clone();
            tcfg.mode = TrainMode::Hypernet;
            let trainer = Trainer::new(
                &zoo,
                &dataset,
                cfg.connector,
                tcfg,
                (0..zoo.num_pairs()).collect(),
            )?;
            save_checkpoint(&dir.join("checkpoint.bin"), &trainer, state)?;
        }
        Ok(run)
    })();
    match result {
        Ok(run) => {
            write_json(
                &manifest_path,
                &RunManifest {
                    status: "finalized".into(),
                    strategy: strategy.into(),
                    config: cfg.clone(),
                    error: None,
                },
            )?;
            writeln!(
                out,
                "{strategy}: winner pair {} (metric {:.4}), {} FLOPs",
                run.outcome.winner_pair,
                run.outcome.ranked[0].metric,
                run.outcome.flops_total
            )?;
            if strategy == "random" {
                writeln!(out, "random mean metric: {:.4}", random_mean_metric(&run.outcome))?;
            }
            Ok(())
        }
        Err(e) => {
            write_json(
                &manifest_path,
                &RunManifest {
                    status: "aborted".into(),
                    strategy: strategy.into(),
                    config: cfg.clone(),
                    error: Some(e.to_string()),
                },
            )?;
            Err(e)
        }
    }
}

fn load_outcome(path: &Path) -> Result<StrategyOutcome> {
    let raw = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&raw)?)
}

/// Re-evaluate a stored outcome's winning connector on the current dataset.
pub fn cmd_eval(cfg: &RunConfig, strategy: &str, out: &mut impl std::io::Write) -> Result<()> {
    let outcome = load_outcome(&strategy_dir(cfg, strategy).join("outcome.json"))?;
    let (zoo, dataset) = load_world(cfg)?;
    let (metric, flops) = eval_pair(&zoo, &dataset, outcome.winner_pair, &outcome.winner_theta)?;
    writeln!(
        out,
        "{strategy}: pair {} recall@1 {:.4} ({} eval FLOPs)",
        outcome.winner_pair, metric, flops
    )?;
    Ok(())
}

/// Rank agreement between a stored candidate outcome and the oracle outcome.
pub fn cmd_rank_compare(
    oracle_path: &Path,
    candidate_path: &Path,
    ks: &[usize],
    out: &mut impl std::io::Write,
) -> Result<()> {
    let oracle = load_outcome(oracle_path)?;
    let candidate = load_outcome(candidate_path)?;
    let mut pairs: Vec<usize> = candidate.ranked.iter().map(|r| r.pair).collect();
    pairs.sort_unstable();
    let metric_of = |o: &StrategyOutcome, k: usize| -> Result<f64> {
        o.ranked
            .iter()
            .find(|r| r.pair == k)
            .map(|r| r.metric)
            .ok_or_else(|| Error::Argument(format!("oracle outcome lacks pair {k}")))
    };
    let cand: Vec<f64> = pairs
        .iter()
        .map(|&k| metric_of(&candidate, k))
        .collect::<Result<_>>()?;
    let refr: Vec<f64> = pairs
        .iter()
        .map(|&k| metric_of(&oracle, k))
        .collect::<Result<_>>()?;
    let rho = spearman_rho(&cand, &refr)?;
    writeln!(out, "k,ndcg,spearman_rho")?;
    for &k in ks {
        let ndcg = ndcg_at_k(&cand, &refr, k)?;
        writeln!(out, "{k},{ndcg:.6},{rho:.6}")?;
    }
    writeln!(
        out,
        "candidate `{}` vs oracle `{}` over {} pairs: rho {:.4}",
        candidate.strategy,
        oracle.strategy,
        pairs.len(),
        rho
    )?;
    Ok(())
}

/// Closed-form FLOPs bill of one full direct training run of pair k.
pub fn predict_direct_flops(
    cfg: &RunConfig,
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
    k: usize,
) -> Result<u128> {
    let mut tcfg = cfg.train.clone();
    tcfg.mode = TrainMode::DirectPair;
    tcfg.model_batch = 1;
    let trainer = Trainer::new(zoo, dataset, cfg.connector, tcfg, vec![k])?;
    let mut total = 0u128;
    for s in 0..trainer.total_steps {
        let b = data_batch_indices(&dataset.train, cfg.train.data_batch, cfg.seed, s).len();
        total += trainer.flops_for_pair_step(k, b, None);
    }
    Ok(total)
}

/// Closed-form FLOPs bill of the hypernetwork training run.
pub fn predict_hyma_flops(
    cfg: &RunConfig,
    zoo: &ModelZoo,
    dataset: &PairedEmbeddingDataset,
) -> Result<u128> {
    let hyper = build_hyper(cfg, zoo)?;
    let mut tcfg = cfg.train.clone();
    tcfg.mode = TrainMode::Hypernet;
    let trainer = Trainer::new(
        zoo,
        dataset,
        cfg.connector,
        tcfg,
        (0..zoo.num_pairs()).collect(),
    )?;
    let mut total = 0u128;
    for s in 0..trainer.total_steps {
        let b = data_batch_indices(&dataset.train, cfg.train.data_batch, cfg.seed, s).len();
        for k in pair_sampler(zoo.num_pairs(), cfg.train.model_batch, cfg.seed, s) {
            total += trainer.flops_for_pair_step(k, b, Some(&hyper));
        }
    }
    Ok(total)
}

/// Predicted per-strategy training bills with no training performed.
pub fn cmd_flops(cfg: &RunConfig, out: &mut impl std::io::Write) -> Result<()> {
    let (zoo, dataset) = load_world(cfg)?;
    let nm = zoo.num_pairs();
    let mut grid_total = 0u128;
    writeln!(out, "strategy,detail,flops")?;
    for k in 0..nm {
        let f = predict_direct_flops(cfg, &zoo, &dataset, k)?;
        writeln!(out, "grid,pair-{k},{f}")?;
        grid_total += f;
    }
    writeln!(out, "grid,total,{grid_total}")?;
    let hyma_total = predict_hyma_flops(cfg, &zoo, &dataset)?;
    writeln!(out, "hyma,total,{hyma_total}")?;
    writeln!(
        out,
        "ratio grid/hyma: {:.4}",
        grid_total as f64 / hyma_total as f64
    )?;
    // each optimizer step shows B_d samples to B_m of the NM pairs
    let total_samples = (cfg.train.epochs * dataset.train.len()) as f64;
    let exposure = total_samples / (nm as f64 / cfg.train.model_batch as f64);
    writeln!(out, "hyma per-pair sample exposure: {exposure:.1}")?;
    Ok(())
}

/// Summarize stored outcomes: winner deltas vs the grid oracle, rank
/// agreement for full-coverage strategies, and efficiency ratios.
pub fn cmd_report(cfg: &RunConfig, out: &mut impl std::io::Write) -> Result<()> {
    let grid = load_outcome(&strategy_dir(cfg, "grid").join("outcome.json"))?;
    let grid_metric = |k: usize| -> Option<f64> {
        grid.ranked.iter().find(|r| r.pair == k).map(|r| r.metric)
    };
    let grid_best = grid.ranked[0].metric;
    writeln!(
        out,
        "strategy,winner_pair,winner_metric_on_grid_scale,delta_vs_grid,flops,spearman_rho,ndcg"
    )?;
    let nm = grid.ranked.len();
    let k_ndcg = nm.min(3);
    for name in STRATEGY_NAMES {
        let path = strategy_dir(cfg, name).join("outcome.json");
        if !path.exists() {
            continue;
        }
        let o = load_outcome(&path)?;
        let wm = grid_metric(o.winner_pair).unwrap_or(f64::NAN);
        let (rho, ndcg) = if o.ranked.len() == nm {
            let pairs: Vec<usize> = (0..nm).collect();
            let cand: Vec<f64> = pairs
                .iter()
                .map(|&k| o.ranked.iter().find(|r| r.pair == k).map(|r| r.metric))
                .collect::<Option<_>>()
                .unwrap_or_default();
            let refr: Vec<f64> = pairs.iter().filter_map(|&k| grid_metric(k)).collect();
            if cand.len() == nm && refr.len() == nm {
                (
                    spearman_rho(&cand, &refr).map(|v| format!("{v:.4}")).unwrap_or_default(),
                    ndcg_at_k(&cand, &refr, k_ndcg)
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_default(),
                )
            } else {
                (String::new(), String::new())
            }
        } else {
            (String::new(), String::new())
        };
        writeln!(
            out,
            "{},{},{:.4},{:.4},{},{},{}",
            o.strategy,
            o.winner_pair,
            wm,
            wm - grid_best,
            o.flops_total,
            rho,
            ndcg
        )?;
    }
    let hyma_path = strategy_dir(cfg, "hyma").join("outcome.json");
    if hyma_path.exists() {
        let hyma = load_outcome(&hyma_path)?;
        let (gs, bg) = search::efficiency_ratios(&grid, &hyma)?;
        writeln!(out, "efficiency grid/hyma: {gs:.2}x")?;
        writeln!(out, "efficiency bestguess/hyma: {bg:.2}x")?;
        writeln!(
            out,
            "bestguess flops: {}",
            bestguess_flops(&grid)?
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::Nonlinearity;

    fn spec(id: &str, q: f64, seed: u64) -> SyntheticEncoderSpec {
        SyntheticEncoderSpec {
            id: id.into(),
            latent_dim: 4,
            dim: 6,
            quality: q,
            seed,
            nonlinearity: Nonlinearity::None,
            unimodal_score: Some(q),
        }
    }

    fn test_config(dir: &Path) -> RunConfig {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 17,
            connector: ConnectorKind::Linear,
            zoo: ZooConfig::Synthetic {
                encoders_a: vec![spec("vit-a", 1.0, 1), spec("vit-b", 0.3, 2)],
                encoders_b: vec![spec("bert-a", 0.9, 3)],
                sample_count: 48,
                val_fraction: 0.25,
            },
            train: TrainConfig {
                data_batch: 12,
                epochs: 2,
                warmup_steps: 2,
                tau: 0.2,
                ..TrainConfig::default()
            },
            hyper: HyperSpec {
                cond_dim: 4,
                generator_hidden: vec![8],
                conditioning_mode: ConditioningMode::Codebook,
            },
            output_dir: dir.to_path_buf(),
            strategies: vec!["grid".into(), "hyma".into()],
            autopair_budget: None,
            cgs_fraction: 1.0 / 3.0,
            random_trials: 2,
            advisor_replies: vec!["(vit-a, bert-a)".into()],
            task: default_task(),
            dataset_desc: default_dataset_desc(),
        }
    }

    #[test]
    fn config_round_trip_and_schema_gate() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let path = dir.path().join("cfg.json");
        write_json(&path, &cfg).unwrap();
        let loaded = load_config(&path).unwrap();
        assert_eq!(loaded.seed, 17);
        assert_eq!(loaded.train.seed, 17); // root seed propagates

        let mut bad = cfg.clone();
        bad.schema_version = 99;
        write_json(&path, &bad).unwrap();
        assert!(matches!(
            load_config(&path),
            Err(Error::UnsupportedVersion(_))
        ));

        let mut unknown = cfg;
        unknown.strategies = vec!["bayes".into()];
        write_json(&path, &unknown).unwrap();
        assert!(load_config(&path).is_err());
    }

    #[test]
    fn gen_synthetic_is_idempotent_and_prints_planted_order() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let mut out1 = Vec::new();
        cmd_gen_synthetic(&cfg, &mut out1).unwrap();
        let m1 = std::fs::read(dir.path().join("banks/manifest.json")).unwrap();
        let b1 = std::fs::read(dir.path().join("banks/vit-a.emb")).unwrap();
        let mut out2 = Vec::new();
        cmd_gen_synthetic(&cfg, &mut out2).unwrap();
        let m2 = std::fs::read(dir.path().join("banks/manifest.json")).unwrap();
        let b2 = std::fs::read(dir.path().join("banks/vit-a.emb")).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(b1, b2);
        assert_eq!(out1, out2);
        let text = String::from_utf8(out1).unwrap();
        // planted order: (vit-a, bert-a) 0.9 > (vit-b, bert-a) 0.27
        let pos0 = text.find("pair 0").unwrap();
        let pos1 = text.find("pair 1").unwrap();
        assert!(pos0 < pos1);
    }

    #[test]
    fn banks_zoo_loads_what_gen_synthetic_wrote() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        cmd_gen_synthetic(&cfg, &mut Vec::new()).unwrap();
        let (zoo_s, data_s) = load_world(&cfg).unwrap();

        let banks_cfg = RunConfig {
            zoo: ZooConfig::Banks {
                encoders_a: zoo_s.encoders_a.clone(),
                encoders_b: zoo_s.encoders_b.clone(),
                bank_dir: dir.path().join("banks"),
                val_fraction: 0.25,
            },
            ..test_config(dir.path())
        };
        let (zoo_b, data_b) = load_world(&banks_cfg).unwrap();
        assert_eq!(zoo_b.num_pairs(), zoo_s.num_pairs());
        assert_eq!(data_b.count, data_s.count);
        // same seed -> same split
        assert_eq!(data_b.train, data_s.train);
        // bank payloads round-trip exactly through the f32 storage format
        let a = &data_s.banks.get("vit-a").unwrap().data;
        let b = &data_b.banks.get("vit-a").unwrap().data;
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(*x as f32, *y as f32);
        }
    }

    #[test]
    fn search_writes_finalized_store_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        cmd_search(&cfg, "grid", &mut Vec::new()).unwrap();
        let outcome1 = std::fs::read(dir.path().join("grid/outcome.json")).unwrap();
        let manifest: RunManifest = serde_json::from_slice(
            &std::fs::read(dir.path().join("grid/manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest.status, "finalized");
        assert!(dir.path().join("grid/runrecords.jsonl").exists());

        cmd_search(&cfg, "grid", &mut Vec::new()).unwrap();
        let outcome2 = std::fs::read(dir.path().join("grid/outcome.json")).unwrap();
        assert_eq!(outcome1, outcome2);
    }

    #[test]
    fn hyma_search_writes_checkpoint_and_report_prints_ratios() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        cmd_search(&cfg, "grid", &mut Vec::new()).unwrap();
        cmd_search(&cfg, "hyma", &mut Vec::new()).unwrap();
        assert!(dir.path().join("hyma/checkpoint.bin").exists());
        let mut report = Vec::new();
        cmd_report(&cfg, &mut report).unwrap();
        let text = String::from_utf8(report).unwrap();
        assert!(text.contains("efficiency grid/hyma:"), "{text}");
        assert!(text.contains("bestguess/hyma:"));
    }

    #[test]
    fn failed_search_marks_manifest_aborted() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.advisor_replies = vec![]; // transport failure
        assert!(cmd_search(&cfg, "ask", &mut Vec::new()).is_err());
        let manifest: RunManifest = serde_json::from_slice(
            &std::fs::read(dir.path().join("ask/manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest.status, "aborted");
        assert!(manifest.error.is_some());
    }

    #[test]
    fn rank_compare_self_is_perfect() {
        use crate::connectors::{make_layout, ConnectorParams};
        use crate::search::{RankedPair, StageLog};
        let dir = tempfile::tempdir().unwrap();
        let layout = make_layout(ConnectorKind::Linear, 6, 6);
        let outcome = StrategyOutcome {
            strategy: "grid".into(),
            ranked: vec![
                RankedPair { pair: 1, metric: 0.8, failed: false },
                RankedPair { pair: 0, metric: 0.4, failed: false },
                RankedPair { pair: 2, metric: 0.1, failed: false },
            ],
            winner_pair: 1,
            winner_theta: ConnectorParams::init_fan_in(layout, 3),
            flops_total: 100,
            stages: vec![StageLog { name: "pair-1".into(), flops: 100 }],
        };
        let p = dir.path().join("outcome.json");
        write_json(&p, &outcome).unwrap();
        let mut out = Vec::new();
        cmd_rank_compare(&p, &p, &[1, 3], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("1,1.000000,1.000000"), "{text}");
        assert!(text.contains("3,1.000000,1.000000"));
    }

    #[test]
    fn flops_prediction_matches_measured_grid_bill() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        let (zoo, dataset) = load_world(&cfg).unwrap();
        // measured: records' final flops_cum per pair
        let run = search::run_grid_search(&zoo, &dataset, cfg.connector, &cfg.train).unwrap();
        for k in 0..zoo.num_pairs() {
            let predicted = predict_direct_flops(&cfg, &zoo, &dataset, k).unwrap();
            let measured = run
                .records
                .iter()
                .filter(|r| r.k == k)
                .map(|r| r.flops_cum)
                .max()
                .unwrap();
            assert_eq!(predicted, measured);
        }
        let mut out = Vec::new();
        cmd_flops(&cfg, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("ratio grid/hyma:"));
        assert!(text.contains("per-pair sample exposure"));
    }

    #[test]
    fn eval_command_reports_winner_metric() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path());
        cmd_search(&cfg, "unit1", &mut Vec::new()).unwrap();
        let mut out = Vec::new();
        cmd_eval(&cfg, "unit1", &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("recall@1"), "{text}");
    }
}
