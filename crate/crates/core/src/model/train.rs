//! Mini-batch training with Adam, per-epoch evaluation and checkpoints.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, Dgin, MetricReport, ModelConfig};
use crate::datamodel::{Instance, UserId};
use crate::embedding::Vocab;
use crate::error::{DginError, Result};
use crate::numerics::{adam_step, checkpoint, AdamConfig};
use crate::store::TwoLevelIndex;

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_logloss: f64,
    pub test_auc: f64,
    pub test_logloss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub final_test: MetricReport,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Splits off the last calendar day (UTC) as the test set.
pub fn split_by_time(mut instances: Vec<Instance>) -> Result<(Vec<Instance>, Vec<Instance>)> {
    let last_day = instances
        .iter()
        .map(|i| i.decision_timestamp.div_euclid(SECONDS_PER_DAY))
        .max()
        .ok_or_else(|| DginError::Precondition("no instances to split".into()))?;
    instances.sort_by_key(|i| i.decision_timestamp);
    let cut = instances.partition_point(|i| i.decision_timestamp.div_euclid(SECONDS_PER_DAY) < last_day);
    let test = instances.split_off(cut);
    check_time_split(&instances, &test)?;
    Ok((instances, test))
}

/// Every training decision must precede every test decision.
pub fn check_time_split(train: &[Instance], test: &[Instance]) -> Result<()> {
    let latest_train = train.iter().map(|i| i.decision_timestamp).max();
    let earliest_test = test.iter().map(|i| i.decision_timestamp).min();
    if let (Some(a), Some(b)) = (latest_train, earliest_test) {
        if a >= b {
            return Err(DginError::Precondition(format!(
                "training decision at {a} is not before test decision at {b}"
            )));
        }
    }
    Ok(())
}

/// Shuffled batches that keep each user's instances adjacent, so a batch
/// touches few users and their group rows are computed once per batch.
pub fn user_grouped_batches(instances: &[Instance], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut by_user: BTreeMap<UserId, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        by_user.entry(inst.user_id).or_default().push(i);
    }
    let mut users: Vec<Vec<usize>> = by_user.into_values().collect();
    users.shuffle(rng);
    let mut order = Vec::with_capacity(instances.len());
    for mut idx in users {
        idx.shuffle(rng);
        order.extend(idx);
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// One Adam step on `batch`; returns the batch loss before the update.
pub fn train_step(
    model: &mut Dgin,
    store: &TwoLevelIndex,
    batch: &[Instance],
    adam: &AdamConfig,
    step: usize,
) -> Result<f64> {
    let (loss, grads) = model.loss_and_gradients(store, batch)?;
    if !loss.is_finite() {
        return Err(DginError::NonFiniteLoss { step });
    }
    grads.accumulate_into(&mut model.params);
    adam_step(&mut model.params, adam)?;
    Ok(loss)
}

/// Trains for `config.epochs` epochs. With `out_dir`, appends one metrics
/// record per epoch to `metrics.jsonl` and writes a checkpoint after each
/// completed epoch; an aborted run leaves the last good checkpoint in place.
pub fn train(
    model: &mut Dgin,
    store: &TwoLevelIndex,
    train: &[Instance],
    test: &[Instance],
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    check_time_split(train, test)?;
    if train.is_empty() {
        return Err(DginError::Precondition("empty training set".into()));
    }
    let cfg = model.config.clone();
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let started = Instant::now();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| DginError::io(dir, e))?;
    }
    let mut final_test = None;
    for epoch in 1..=cfg.epochs {
        let mut weighted = 0.0;
        for batch_idx in user_grouped_batches(train, cfg.batch_size, &mut rng) {
            let batch: Vec<Instance> = batch_idx.iter().map(|&i| train[i]).collect();
            let loss = train_step(model, store, &batch, &adam, step_losses.len())?;
            weighted += loss * batch.len() as f64;
            step_losses.push(loss);
        }
        let test_report = if test.is_empty() {
            None
        } else {
            let scores = model.predict(store, test)?;
            let labels: Vec<f64> = test.iter().map(Instance::label_f64).collect();
            Some(evaluate(&scores, &labels)?)
        };
        let record = EpochRecord {
            epoch,
            train_logloss: weighted / train.len() as f64,
            test_auc: test_report.map_or(f64::NAN, |r| r.auc),
            test_logloss: test_report.map_or(f64::NAN, |r| r.logloss),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(dir) = out_dir {
            save_model(model, dir)?;
            let log = dir.join("metrics.jsonl");
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log)
                .map_err(|e| DginError::io(&log, e))?;
            writeln!(f, "{}", serde_json::to_string(&record)?).map_err(|e| DginError::io(&log, e))?;
        }
        epochs.push(record);
        final_test = test_report;
    }
    Ok(TrainReport {
        epochs,
        final_test: final_test.unwrap_or(MetricReport {
            auc: f64::NAN,
            logloss: f64::NAN,
            n: 0,
            positives: 0,
        }),
        step_losses,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelManifest {
    config: ModelConfig,
    vocab: Vocab,
    schema_hash: String,
}

pub fn model_manifest_path(dir: &Path) -> PathBuf {
    dir.join("model.json")
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.manifest")
}

/// Writes `model.json` and the parameter checkpoint into `dir`.
pub fn save_model(model: &Dgin, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DginError::io(dir, e))?;
    let m = ModelManifest {
        config: model.config.clone(),
        vocab: model.vocab,
        schema_hash: model.schema_hash(),
    };
    let path = model_manifest_path(dir);
    fs::write(&path, serde_json::to_vec_pretty(&m)?).map_err(|e| DginError::io(&path, e))?;
    checkpoint::save(&model.params, &m.schema_hash, &checkpoint_path(dir))
}

/// Rebuilds a model from `model.json` and restores its parameters.
pub fn load_model(dir: &Path) -> Result<Dgin> {
    let path = model_manifest_path(dir);
    let text = fs::read(&path).map_err(|e| DginError::io(&path, e))?;
    let m: ModelManifest = serde_json::from_slice(&text)?;
    let mut model = Dgin::new(m.config, m.vocab)?;
    let hash = model.schema_hash();
    if hash != m.schema_hash {
        return Err(DginError::SchemaMismatch {
            expected: hash,
            found: m.schema_hash,
        });
    }
    checkpoint::restore_into(&mut model.params, &hash, &checkpoint_path(dir))?;
    Ok(model)
}
