//! Multi-seed comparison of model variants on a shared time split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::train::train;
use super::{Dgin, ModelConfig, Variant};
use crate::datamodel::{BehaviorEvent, Instance, KeyField, Timestamp, UserId};
use crate::embedding::Vocab;
use crate::error::{DginError, Result};
use crate::store::TwoLevelIndex;

/// Minimum number of seeds per variant.
pub const MIN_SEEDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub key_field: KeyField,
    pub seeds: Vec<u64>,
    pub aucs: Vec<f64>,
    pub loglosses: Vec<f64>,
    pub mean_auc: f64,
    pub sd_auc: f64,
    pub mean_logloss: f64,
}

/// Everything a variant run reads.
#[derive(Debug, Clone, Copy)]
pub struct AblationData<'a> {
    pub histories: &'a BTreeMap<UserId, Vec<BehaviorEvent>>,
    pub train: &'a [Instance],
    pub test: &'a [Instance],
    pub vocab: Vocab,
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Builds the store a variant sees, pinned to the reference time `as_of`.
pub fn build_store(
    config: &ModelConfig,
    variant: Variant,
    histories: &BTreeMap<UserId, Vec<BehaviorEvent>>,
    as_of: Timestamp,
) -> Result<TwoLevelIndex> {
    let mut store = if variant.clicks_only() {
        let filtered: BTreeMap<UserId, Vec<BehaviorEvent>> = histories
            .iter()
            .map(|(&u, evs)| (u, evs.iter().filter(|e| variant.keeps(e)).copied().collect()))
            .collect();
        TwoLevelIndex::build(config.store_config(), &filtered)?
    } else {
        TwoLevelIndex::build(config.store_config(), histories)?
    };
    store.advance_to(as_of);
    Ok(store)
}

/// Latest event time across all histories.
pub fn history_end(histories: &BTreeMap<UserId, Vec<BehaviorEvent>>) -> Timestamp {
    histories
        .values()
        .filter_map(|evs| evs.last().map(|e| e.timestamp))
        .max()
        .unwrap_or(0)
}

/// Trains `variant` once per seed and reports test metrics.
pub fn run_variant(
    base: &ModelConfig,
    variant: Variant,
    key_field: KeyField,
    data: AblationData<'_>,
    seeds: &[u64],
) -> Result<AblationRow> {
    let mut config = base.clone();
    config.variant = variant;
    config.key_field = key_field;
    let store = build_store(&config, variant, data.histories, history_end(data.histories))?;
    let mut aucs = Vec::with_capacity(seeds.len());
    let mut loglosses = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        config.seed = seed;
        let mut model = Dgin::new(config.clone(), data.vocab)?;
        let report = train(&mut model, &store, data.train, data.test, None)?;
        aucs.push(report.final_test.auc);
        loglosses.push(report.final_test.logloss);
    }
    let (mean_auc, sd_auc) = mean_sd(&aucs);
    Ok(AblationRow {
        variant,
        key_field,
        seeds: seeds.to_vec(),
        mean_logloss: mean_sd(&loglosses).0,
        aucs,
        loglosses,
        mean_auc,
        sd_auc,
    })
}

/// Runs the full ladder in [`Variant::LADDER`] order under `base.key_field`.
pub fn ablate(base: &ModelConfig, data: AblationData<'_>, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.len() < MIN_SEEDS {
        return Err(DginError::Config(format!(
            "ablation needs at least {MIN_SEEDS} seeds, got {}",
            seeds.len()
        )));
    }
    Variant::LADDER
        .into_iter()
        .map(|v| run_variant(base, v, base.key_field, data, seeds))
        .collect()
}
