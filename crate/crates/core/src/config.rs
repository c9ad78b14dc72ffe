//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Later [`KvConfig::set`]
//! calls (command-line overrides) replace file values.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::datamodel::KeyField;
use crate::error::{DginError, Result};
use crate::model::{ModelConfig, Variant};
use crate::synthgen::GenConfig;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DginError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(DginError::Config(format!("line {}: empty key", n + 1)));
            }
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(DginError::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DginError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| DginError::Config(format!("`{key} = {v}`: {e}")))
            })
            .transpose()
    }

    /// Overwrites `slot` when `key` is present.
    pub fn fill<T>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Fails on any key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(DginError::Config(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// The subset of entries whose key is in `keys`.
    pub fn restrict(&self, keys: &[&str]) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keys.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "dim",
    "heads",
    "max_members",
    "max_groups",
    "subsequence_len",
    "baseline_len",
    "user_buckets",
    "key_field",
    "variant",
    "mlp_widths",
    "lr",
    "batch_size",
    "epochs",
    "seed",
];

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .map_err(|e| DginError::Config(format!("mlp_widths `{s}`: {e}")))
        })
        .collect()
}

impl ModelConfig {
    /// Defaults overridden by the model keys of `kv`; other keys are ignored.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = ModelConfig::default();
        kv.fill("dim", &mut c.dim)?;
        kv.fill("heads", &mut c.heads)?;
        kv.fill("max_members", &mut c.max_members)?;
        kv.fill("max_groups", &mut c.max_groups)?;
        kv.fill("subsequence_len", &mut c.subsequence_len)?;
        kv.fill("baseline_len", &mut c.baseline_len)?;
        if let Some(b) = kv.get::<u64>("user_buckets")? {
            c.user_buckets = Some(b);
        }
        kv.fill::<KeyField>("key_field", &mut c.key_field)?;
        kv.fill::<Variant>("variant", &mut c.variant)?;
        if let Some(w) = kv.raw("mlp_widths") {
            c.mlp_widths = parse_widths(w)?;
        }
        kv.fill("lr", &mut c.lr)?;
        kv.fill("batch_size", &mut c.batch_size)?;
        kv.fill("epochs", &mut c.epochs)?;
        kv.fill("seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }
}

pub const GEN_KEYS: &[&str] = &[
    "seed",
    "n_users",
    "n_items",
    "n_categories",
    "n_locations",
    "n_surfaces",
    "horizon_days",
    "train_days",
    "n_train_instances",
    "n_test_instances",
    "mean_events_per_user",
    "events_sigma",
    "max_events_per_user",
    "menu_min",
    "menu_max",
    "zipf_exponent",
    "exploration",
    "history_candidate_fraction",
    "hot_window_days",
    "base_ctr",
    "w_presence",
    "w_repeat_purchase",
    "w_weekday_pattern",
    "w_intensity",
    "w_decision_habit",
];

impl GenConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = GenConfig::default();
        kv.fill("seed", &mut c.seed)?;
        kv.fill("n_users", &mut c.n_users)?;
        kv.fill("n_items", &mut c.n_items)?;
        kv.fill("n_categories", &mut c.n_categories)?;
        kv.fill("n_locations", &mut c.n_locations)?;
        kv.fill("n_surfaces", &mut c.n_surfaces)?;
        kv.fill("horizon_days", &mut c.horizon_days)?;
        kv.fill("train_days", &mut c.train_days)?;
        kv.fill("n_train_instances", &mut c.n_train_instances)?;
        kv.fill("n_test_instances", &mut c.n_test_instances)?;
        kv.fill("mean_events_per_user", &mut c.mean_events_per_user)?;
        kv.fill("events_sigma", &mut c.events_sigma)?;
        kv.fill("max_events_per_user", &mut c.max_events_per_user)?;
        kv.fill("menu_min", &mut c.menu_min)?;
        kv.fill("menu_max", &mut c.menu_max)?;
        kv.fill("zipf_exponent", &mut c.zipf_exponent)?;
        kv.fill("exploration", &mut c.exploration)?;
        kv.fill("history_candidate_fraction", &mut c.history_candidate_fraction)?;
        kv.fill("hot_window_days", &mut c.hot_window_days)?;
        kv.fill("base_ctr", &mut c.base_ctr)?;
        kv.fill("w_presence", &mut c.weights.presence)?;
        kv.fill("w_repeat_purchase", &mut c.weights.repeat_purchase)?;
        kv.fill("w_weekday_pattern", &mut c.weights.weekday_pattern)?;
        kv.fill("w_intensity", &mut c.weights.intensity)?;
        kv.fill("w_decision_habit", &mut c.weights.decision_habit)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        let w = &self.weights;
        let pairs: [(&str, String); 25] = [
            ("seed", self.seed.to_string()),
            ("n_users", self.n_users.to_string()),
            ("n_items", self.n_items.to_string()),
            ("n_categories", self.n_categories.to_string()),
            ("n_locations", self.n_locations.to_string()),
            ("n_surfaces", self.n_surfaces.to_string()),
            ("horizon_days", self.horizon_days.to_string()),
            ("train_days", self.train_days.to_string()),
            ("n_train_instances", self.n_train_instances.to_string()),
            ("n_test_instances", self.n_test_instances.to_string()),
            ("mean_events_per_user", self.mean_events_per_user.to_string()),
            ("events_sigma", self.events_sigma.to_string()),
            ("max_events_per_user", self.max_events_per_user.to_string()),
            ("menu_min", self.menu_min.to_string()),
            ("menu_max", self.menu_max.to_string()),
            ("zipf_exponent", self.zipf_exponent.to_string()),
            ("exploration", self.exploration.to_string()),
            (
                "history_candidate_fraction",
                self.history_candidate_fraction.to_string(),
            ),
            ("hot_window_days", self.hot_window_days.to_string()),
            ("base_ctr", self.base_ctr.to_string()),
            ("w_presence", w.presence.to_string()),
            ("w_repeat_purchase", w.repeat_purchase.to_string()),
            ("w_weekday_pattern", w.weekday_pattern.to_string()),
            ("w_intensity", w.intensity.to_string()),
            ("w_decision_habit", w.decision_habit.to_string()),
        ];
        for (k, v) in pairs {
            kv.set(k, v);
        }
        kv
    }
}
