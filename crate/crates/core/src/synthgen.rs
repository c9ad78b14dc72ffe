//! Deterministic synthetic lifelong-behavior data with a planted label model.
//!
//! Users revisit a Zipf-weighted personal menu of items. Each (user, item)
//! pair carries latent traits: a weekday/weekend habit, an engagement level
//! driving carts and favorites, a purchase propensity, and a "hot" flag that
//! only shows in the dwell times of its recent events. The click label of an
//! instance is a logistic function of terms each readable through one model
//! pathway:
//!
//! | term              | readable from                                  |
//! |-------------------|------------------------------------------------|
//! | presence          | group identity (candidate has a group)         |
//! | intensity         | per-type counts (carts, favorites)             |
//! | repeat purchase   | purchase counts, invisible to click-only views |
//! | weekday pattern   | member timestamps vs. the decision day         |
//! | decision habit    | dwell of recent events in the candidate group  |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distributions::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Zipf};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    serialize_event, write_instances, write_jsonl, BehaviorEvent, BehaviorType, CandidateItem, Context, Instance,
    ItemId, Timestamp, UserId,
};
use crate::embedding::is_weekend;
use crate::error::{DginError, Result};
use crate::model::compute_auc;
use crate::numerics::sigmoid;

/// Monday 2024-01-01 00:00 UTC; history day 0.
pub const START_TIMESTAMP: Timestamp = 1_704_067_200;
const DAY: i64 = 86_400;
/// Most events a history day can hold.
pub const EVENTS_PER_DAY_CAPACITY: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalWeights {
    pub presence: f64,
    pub repeat_purchase: f64,
    pub weekday_pattern: f64,
    pub intensity: f64,
    pub decision_habit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_users: u64,
    pub n_items: u64,
    pub n_categories: u64,
    pub n_locations: u64,
    pub n_surfaces: u32,
    /// Days of history before the first decision day.
    pub horizon_days: u32,
    /// Decision days for training; the test day follows them.
    pub train_days: u32,
    pub n_train_instances: usize,
    pub n_test_instances: usize,
    pub mean_events_per_user: f64,
    /// Log-scale spread of per-user event counts.
    pub events_sigma: f64,
    pub max_events_per_user: usize,
    pub menu_min: usize,
    pub menu_max: usize,
    pub zipf_exponent: f64,
    /// Share of visits to an item outside the personal menu.
    pub exploration: f64,
    /// Share of candidates drawn from the user's own history.
    pub history_candidate_fraction: f64,
    /// Trailing history days in which the hot flag shapes dwell times.
    pub hot_window_days: u32,
    pub base_ctr: f64,
    pub weights: SignalWeights,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_users: 1000,
            n_items: 20_000,
            n_categories: 200,
            n_locations: 100,
            n_surfaces: 4,
            horizon_days: 365,
            train_days: 6,
            n_train_instances: 50_000,
            n_test_instances: 10_000,
            mean_events_per_user: 8000.0,
            events_sigma: 0.3,
            max_events_per_user: 10_000,
            menu_min: 40,
            menu_max: 120,
            zipf_exponent: 1.1,
            exploration: 0.05,
            history_candidate_fraction: 0.6,
            hot_window_days: 14,
            base_ctr: 0.2,
            weights: SignalWeights {
                presence: 1.0,
                repeat_purchase: 0.8,
                weekday_pattern: 1.0,
                intensity: 0.8,
                decision_habit: 1.0,
            },
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let weights = [
            w.presence,
            w.repeat_purchase,
            w.weekday_pattern,
            w.intensity,
            w.decision_habit,
        ];
        if weights.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(DginError::Config(
                "signal weights must be finite and non-negative".into(),
            ));
        }
        if self.n_users == 0
            || self.n_items == 0
            || self.n_categories == 0
            || self.n_locations == 0
            || self.n_surfaces == 0
        {
            return Err(DginError::Config("population sizes must be positive".into()));
        }
        if self.n_items < self.n_categories {
            return Err(DginError::Config(format!(
                "n_items {} is below n_categories {}",
                self.n_items, self.n_categories
            )));
        }
        if self.menu_min == 0 || self.menu_min > self.menu_max || self.menu_max as u64 > self.n_items {
            return Err(DginError::Config(format!(
                "menu size range {}..={} is invalid for {} items",
                self.menu_min, self.menu_max, self.n_items
            )));
        }
        if self.horizon_days == 0 || self.train_days == 0 {
            return Err(DginError::Config("horizon_days and train_days must be positive".into()));
        }
        if self.mean_events_per_user.is_nan() || self.mean_events_per_user < 1.0 {
            return Err(DginError::Config("mean_events_per_user must be at least 1".into()));
        }
        if self.mean_events_per_user > self.horizon_days as f64 * EVENTS_PER_DAY_CAPACITY {
            return Err(DginError::Config(format!(
                "infeasible: {} mean events exceed the {}-day horizon capacity of {}",
                self.mean_events_per_user,
                self.horizon_days,
                self.horizon_days as f64 * EVENTS_PER_DAY_CAPACITY
            )));
        }
        if self.max_events_per_user == 0
            || self.events_sigma.is_nan()
            || self.events_sigma < 0.0
            || self.zipf_exponent.is_nan()
            || self.zipf_exponent <= 0.0
        {
            return Err(DginError::Config("invalid event-count or Zipf parameters".into()));
        }
        for (name, p) in [
            ("exploration", self.exploration),
            ("history_candidate_fraction", self.history_candidate_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DginError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.base_ctr > 0.0 && self.base_ctr < 1.0) {
            return Err(DginError::Config("base_ctr must lie in (0, 1)".into()));
        }
        if self.hot_window_days > self.horizon_days {
            return Err(DginError::Config("hot_window_days exceeds the horizon".into()));
        }
        Ok(())
    }

    pub fn test_day(&self) -> u32 {
        self.horizon_days + self.train_days
    }
}

/// Static item attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    category: Vec<u64>,
    price_cents: Vec<u64>,
    location: Vec<u64>,
}

impl Catalog {
    pub fn new(cfg: &GenConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::MAX);
        let price = LogNormal::new((1500.0f64).ln(), 0.6).expect("valid lognormal");
        let n = cfg.n_items as usize;
        let mut c = Self {
            category: Vec::with_capacity(n),
            price_cents: Vec::with_capacity(n),
            location: Vec::with_capacity(n),
        };
        for _ in 0..n {
            c.category.push(rng.gen_range(1..=cfg.n_categories));
            c.price_cents
                .push((price.sample(&mut rng).round() as u64).clamp(100, 100_000));
            c.location.push(rng.gen_range(1..=cfg.n_locations));
        }
        c
    }

    pub fn candidate(&self, item: ItemId) -> CandidateItem {
        let i = (item - 1) as usize;
        CandidateItem {
            item_id: item,
            category_id: self.category[i],
            price_cents: self.price_cents[i],
            location_cell: self.location[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Habit {
    Weekday,
    Weekend,
    Any,
}

impl Habit {
    fn admits(self, day: u32) -> bool {
        let weekend = is_weekend(day_start(day));
        match self {
            Habit::Weekday => !weekend,
            Habit::Weekend => weekend,
            Habit::Any => true,
        }
    }

    /// +1 when the decision day suits the habit, −1 when it contradicts it.
    fn alignment(self, day: u32) -> f64 {
        match self {
            Habit::Any => 0.0,
            h if h.admits(day) => 1.0,
            _ => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PairTraits {
    habit: Habit,
    hot: bool,
    engagement: f64,
    p_buy: f64,
}

impl PairTraits {
    fn draw(rng: &mut impl Rng) -> Self {
        let u: f64 = rng.gen();
        Self {
            habit: if u < 0.35 {
                Habit::Weekday
            } else if u < 0.7 {
                Habit::Weekend
            } else {
                Habit::Any
            },
            hot: rng.gen_bool(0.5),
            engagement: rng.gen(),
            p_buy: rng.gen_range(0.05..0.8),
        }
    }
}

/// What the label model knows about one (user, item) pair at the end of history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSummary {
    pub habit: Habit,
    pub hot: bool,
    pub events: u64,
    pub clicks: u64,
    pub carts_and_favorites: u64,
    pub purchases: u64,
    /// Whether the pair has events inside the hot window.
    pub recent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserHistory {
    pub user_id: UserId,
    /// Chronological.
    pub events: Vec<BehaviorEvent>,
    pub pairs: BTreeMap<ItemId, PairSummary>,
}

fn day_start(day: u32) -> Timestamp {
    START_TIMESTAMP + day as i64 * DAY
}

fn user_rng(cfg: &GenConfig, user: UserId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(user);
    rng
}

fn dwell(rng: &mut impl Rng, base: &LogNormal<f64>, factor: f64) -> u64 {
    ((base.sample(rng) * factor).round() as u64).clamp(1, 3600)
}

/// Generates one user's history.
pub fn generate_user(cfg: &GenConfig, catalog: &Catalog, user: UserId) -> UserHistory {
    let mut rng = user_rng(cfg, user);
    let sigma = cfg.events_sigma;
    let count_dist =
        LogNormal::new(cfg.mean_events_per_user.ln() - sigma * sigma / 2.0, sigma).expect("valid lognormal");
    let target = (count_dist.sample(&mut rng).round() as usize).clamp(1, cfg.max_events_per_user);
    let home = rng.gen_range(1..=cfg.n_locations);
    let menu_size = rng.gen_range(cfg.menu_min..=cfg.menu_max);
    let menu: Vec<ItemId> = sample(&mut rng, cfg.n_items as usize, menu_size)
        .into_iter()
        .map(|i| i as ItemId + 1)
        .collect();
    let zipf = Zipf::new(menu_size as u64, cfg.zipf_exponent).expect("valid zipf");
    let dwell_base = LogNormal::new((20.0f64).ln(), 0.8).expect("valid lognormal");
    let hot_from = cfg.horizon_days - cfg.hot_window_days;

    let mut traits: BTreeMap<ItemId, PairTraits> = BTreeMap::new();
    let mut events: Vec<BehaviorEvent> = Vec::with_capacity(target + 8);
    while events.len() < target {
        let item = if rng.gen_bool(cfg.exploration) {
            rng.gen_range(1..=cfg.n_items)
        } else {
            menu[zipf.sample(&mut rng) as usize - 1]
        };
        let t = *traits.entry(item).or_insert_with(|| PairTraits::draw(&mut rng));
        let day = loop {
            let d = rng.gen_range(0..cfg.horizon_days);
            if t.habit.admits(d) {
                break d;
            }
        };
        let dwell_factor = match (day >= hot_from, t.hot) {
            (false, _) => 1.0,
            (true, true) => 6.0,
            (true, false) => 0.3,
        };
        let location = if rng.gen_bool(0.8) {
            home
        } else {
            rng.gen_range(1..=cfg.n_locations)
        };
        let c = catalog.candidate(item);
        let mut ts = day_start(day) + rng.gen_range(8 * 3600..22 * 3600);
        let mut kinds = Vec::with_capacity(6);
        if rng.gen_bool(0.85) {
            kinds.push(BehaviorType::Click);
            if rng.gen_bool(0.5) {
                kinds.push(BehaviorType::BrowseDishes);
            }
            if rng.gen_bool(0.3) {
                kinds.push(BehaviorType::ViewComments);
            }
            if rng.gen_bool(0.5 * t.engagement) {
                kinds.push(BehaviorType::AddToFavorite);
            }
            if rng.gen_bool(0.6 * t.engagement) {
                kinds.push(BehaviorType::AddToCart);
            }
            if rng.gen_bool(t.p_buy) {
                kinds.push(BehaviorType::Purchase);
            }
        } else {
            // Direct reorder.
            kinds.push(BehaviorType::Purchase);
        }
        for kind in kinds {
            let d = dwell(&mut rng, &dwell_base, dwell_factor);
            events.push(BehaviorEvent {
                item_id: item,
                category_id: c.category_id,
                price_cents: if kind == BehaviorType::Purchase {
                    c.price_cents
                } else {
                    0
                },
                timestamp: ts,
                location_cell: location,
                behavior_type: kind,
                dwell_seconds: d,
            });
            ts += d as i64 + 1;
        }
    }
    events.truncate(target);
    events.sort_by_key(|e| e.timestamp);

    let recent_from = day_start(hot_from);
    let mut pairs: BTreeMap<ItemId, PairSummary> = BTreeMap::new();
    for e in &events {
        let t = traits[&e.item_id];
        let p = pairs.entry(e.item_id).or_insert(PairSummary {
            habit: t.habit,
            hot: t.hot,
            events: 0,
            clicks: 0,
            carts_and_favorites: 0,
            purchases: 0,
            recent: false,
        });
        p.events += 1;
        match e.behavior_type {
            BehaviorType::Click => p.clicks += 1,
            BehaviorType::AddToCart | BehaviorType::AddToFavorite => p.carts_and_favorites += 1,
            BehaviorType::Purchase => p.purchases += 1,
            _ => {}
        }
        p.recent |= e.timestamp >= recent_from;
    }
    UserHistory {
        user_id: user,
        events,
        pairs,
    }
}

/// Per-term values of the label model for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Components {
    pub presence: f64,
    pub intensity: f64,
    pub repeat_purchase: f64,
    pub weekday_pattern: f64,
    pub decision_habit: f64,
}

impl Components {
    fn of(pair: Option<&PairSummary>, decision_day: u32) -> Self {
        let Some(p) = pair else {
            return Self::default();
        };
        Self {
            presence: 1.0,
            intensity: p.carts_and_favorites as f64 / p.clicks.max(1) as f64,
            repeat_purchase: p.purchases as f64 / p.clicks.max(1) as f64,
            weekday_pattern: p.habit.alignment(decision_day),
            decision_habit: match (p.recent, p.hot) {
                (false, _) => 0.0,
                (true, true) => 1.0,
                (true, false) => -1.0,
            },
        }
    }

    fn weighted(&self, w: &SignalWeights) -> f64 {
        w.presence * self.presence
            + w.intensity * self.intensity
            + w.repeat_purchase * self.repeat_purchase
            + w.weekday_pattern * self.weekday_pattern
            + w.decision_habit * self.decision_habit
    }
}

/// The latent side of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub decision_timestamp: Timestamp,
    pub latent_p: f64,
    pub logit: f64,
    pub components: Components,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub histories: BTreeMap<UserId, Vec<BehaviorEvent>>,
    /// Train instances first, then the test day, each sorted by time.
    pub instances: Vec<Instance>,
    pub truth: Vec<GroundTruth>,
}

struct Draft {
    instance: Instance,
    components: Components,
    score: f64,
}

/// Bias giving a mean latent probability of `target` over `scores`.
fn calibrate_bias(scores: &[f64], target: f64) -> f64 {
    let mean_p = |b: f64| scores.iter().map(|s| sigmoid(b + s)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generates histories user by user, handing each to `sink`, then draws the
/// labeled instances.
pub fn generate_with(
    cfg: &GenConfig,
    mut sink: impl FnMut(&UserHistory) -> Result<()>,
) -> Result<(Vec<Instance>, Vec<GroundTruth>)> {
    cfg.validate()?;
    let catalog = Catalog::new(cfg);
    let mut pair_lists: BTreeMap<UserId, Vec<(ItemId, PairSummary)>> = BTreeMap::new();
    for user in 1..=cfg.n_users {
        let h = generate_user(cfg, &catalog, user);
        sink(&h)?;
        pair_lists.insert(user, h.pairs.into_iter().collect());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX - 1);
    let total = cfg.n_train_instances + cfg.n_test_instances;
    let mut drafts = Vec::with_capacity(total);
    for i in 0..total {
        let user = rng.gen_range(1..=cfg.n_users);
        let day = if i < cfg.n_train_instances {
            cfg.horizon_days + rng.gen_range(0..cfg.train_days)
        } else {
            cfg.test_day()
        };
        let hour = rng.gen_range(8u32..22);
        let ts = day_start(day) + hour as i64 * 3600 + rng.gen_range(0..3600);
        let weekday = day % 7;
        let pairs = &pair_lists[&user];
        let item = if !pairs.is_empty() && rng.gen_bool(cfg.history_candidate_fraction) {
            pairs[rng.gen_range(0..pairs.len())].0
        } else {
            rng.gen_range(1..=cfg.n_items)
        };
        let pair = pairs
            .binary_search_by_key(&item, |(it, _)| *it)
            .ok()
            .map(|k| &pairs[k].1);
        let components = Components::of(pair, day);
        drafts.push(Draft {
            instance: Instance {
                user_id: user,
                candidate: catalog.candidate(item),
                context: Context {
                    hour_of_week: weekday * 24 + hour,
                    surface_id: rng.gen_range(1..=cfg.n_surfaces),
                },
                decision_timestamp: ts,
                label: 0,
            },
            score: components.weighted(&cfg.weights),
            components,
        });
    }
    let scores: Vec<f64> = drafts.iter().map(|d| d.score).collect();
    let bias = calibrate_bias(&scores, cfg.base_ctr);
    let mut instances = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    for mut d in drafts {
        let logit = bias + d.score;
        let p = sigmoid(logit);
        d.instance.label = rng.gen_bool(p) as u32;
        truth.push(GroundTruth {
            user_id: d.instance.user_id,
            item_id: d.instance.candidate.item_id,
            decision_timestamp: d.instance.decision_timestamp,
            latent_p: p,
            logit,
            components: d.components,
            label: d.instance.label,
        });
        instances.push(d.instance);
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by_key(|&i| (instances[i].decision_timestamp, instances[i].user_id, i));
    Ok((
        order.iter().map(|&i| instances[i]).collect(),
        order.iter().map(|&i| truth[i]).collect(),
    ))
}

/// Everything in memory.
pub fn generate(cfg: &GenConfig) -> Result<GeneratedData> {
    let mut histories = BTreeMap::new();
    let (instances, truth) = generate_with(cfg, |h| {
        histories.insert(h.user_id, h.events.clone());
        Ok(())
    })?;
    Ok(GeneratedData {
        histories,
        instances,
        truth,
    })
}

pub const EVENTS_FILE: &str = "events.jsonl";
pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const GEN_CONFIG_FILE: &str = "gen.cfg";

/// Streams a dataset into `dir`: events, instances, ground truth and the
/// generator config that produced them.
pub fn write_dataset(cfg: &GenConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DginError::io(dir, e))?;
    let events_path = dir.join(EVENTS_FILE);
    let f = File::create(&events_path).map_err(|e| DginError::io(&events_path, e))?;
    let mut w = BufWriter::new(f);
    let (instances, truth) = generate_with(cfg, |h| {
        for e in &h.events {
            writeln!(w, "{}", serialize_event(h.user_id, e)).map_err(|e| DginError::io(&events_path, e))?;
        }
        Ok(())
    })?;
    w.flush().map_err(|e| DginError::io(&events_path, e))?;
    write_instances(&dir.join(INSTANCES_FILE), &instances)?;
    write_jsonl(&dir.join(GROUND_TRUTH_FILE), &truth)?;
    let cfg_path = dir.join(GEN_CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_kv().to_text()).map_err(|e| DginError::io(&cfg_path, e))
}

/// AUC of the latent probabilities against the realized labels.
pub fn oracle_auc(truth: &[GroundTruth]) -> Result<f64> {
    let scores: Vec<f64> = truth.iter().map(|t| t.latent_p).collect();
    let labels: Vec<f64> = truth.iter().map(|t| t.label as f64).collect();
    compute_auc(&scores, &labels)
}
