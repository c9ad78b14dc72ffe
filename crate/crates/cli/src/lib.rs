//! The `dgin` command line: data generation, store maintenance, training,
//! evaluation, ablation and the serving-cache check.
//!
//! Every command writes its outputs and a `manifest.json` under `--out`.
//! Exit codes: 0 success, 1 validation failure, 2 I/O, configuration or
//! usage error.

pub mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dgin_core::config::{KvConfig, GEN_KEYS, MODEL_KEYS};
use dgin_core::datamodel::{group_by_user, parse_event_log, read_instances, validate_instance};
use dgin_core::model::ablate::{ablate, AblationData, AblationRow};
use dgin_core::model::train::{load_model, split_by_time, train};
use dgin_core::serving::{cache_check, GroupCache};
use dgin_core::store::{load_snapshot, save_snapshot};
use dgin_core::synthgen::{write_dataset, EVENTS_FILE, INSTANCES_FILE};
use dgin_core::{
    BehaviorEvent, CandidateItem, Context, Dgin, DginError, Instance, KeyField, ModelConfig, StoreConfig,
    TwoLevelIndex, UserId, Variant,
};
use serde::Serialize;

use crate::manifest::{hash_paths, RunManifest, MANIFEST_FILE};

pub const SNAPSHOT_FILE: &str = "snapshot.jsonl";
pub const ABLATION_FILE: &str = "ablation.json";
pub const EVAL_FILE: &str = "eval.json";
pub const CACHE_FILE: &str = "group_cache.json";
pub const CACHE_REPORT_FILE: &str = "cache_check.json";
pub const QUERY_FILE: &str = "query.json";
pub const UPDATE_REPORT_FILE: &str = "update_report.json";

#[derive(Debug, Parser)]
#[command(name = "dgin", version, about = "Grouped lifelong-sequence CTR model toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; receives every artifact and `manifest.json`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Configuration override, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic event log, instances and ground truth.
    Gen,
    /// Build, update or query a store snapshot.
    Store {
        #[command(subcommand)]
        action: StoreAction,
    },
    #[command(name = "store-build")]
    StoreBuild(StoreBuildArgs),
    #[command(name = "store-update")]
    StoreUpdate(StoreUpdateArgs),
    #[command(name = "store-query")]
    StoreQuery(StoreQueryArgs),
    /// Train one model variant with a time split of the instances.
    Train(TrainArgs),
    /// Score instances with a trained model.
    Eval(EvalArgs),
    /// Train every variant over several seeds.
    Ablate(AblateArgs),
    /// Verify that cached group representations reproduce fresh ones bit for bit.
    CacheCheck(CacheCheckArgs),
}

#[derive(Debug, Subcommand)]
pub enum StoreAction {
    Build(StoreBuildArgs),
    Update(StoreUpdateArgs),
    Query(StoreQueryArgs),
}

#[derive(Debug, Args)]
pub struct StoreBuildArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub key: Option<KeyField>,
    /// Members kept per group.
    #[arg(long = "B")]
    pub max_members: Option<usize>,
    /// Groups served per user.
    #[arg(long = "G")]
    pub max_groups: Option<usize>,
    /// Events kept per group for candidate subsequences.
    #[arg(long = "T")]
    pub subsequence_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StoreUpdateArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
}

#[derive(Debug, Args)]
pub struct StoreQueryArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub user: UserId,
    /// Candidate item as JSON, e.g. `{"item_id":1,"category_id":2,"price_cents":900,"location_cell":3}`.
    #[arg(long)]
    pub candidate: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding `events.jsonl` and `instances.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    /// Prebuilt store; built from the event log when absent.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub key: Option<KeyField>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Instances to score; defaults to the test day of `--data`.
    #[arg(long)]
    pub instances: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Number of seeds, counting up from `--seed` (default 1).
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long)]
    pub key: Option<KeyField>,
}

#[derive(Debug, Args)]
pub struct CacheCheckArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Instances to compare on; defaults to one probe per stored user.
    #[arg(long)]
    pub instances: Option<PathBuf>,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Inputs were read but did not pass a check (exit 1).
    Validation(String),
    /// I/O, configuration or usage problem (exit 2).
    Setup(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Setup(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Setup(m) => m,
        }
    }
}

impl From<DginError> for Failure {
    fn from(e: DginError) -> Self {
        match e {
            DginError::Io { .. }
            | DginError::Json(_)
            | DginError::Config(_)
            | DginError::Usage(_)
            | DginError::Parse(_)
            | DginError::TooManyMalformed { .. }
            | DginError::SchemaMismatch { .. } => Failure::Setup(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

/// What a command leaves behind for the manifest.
#[derive(Debug, Default)]
struct Outcome {
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    logs: Vec<PathBuf>,
    /// Set when the command finished but a check failed.
    validation_failure: Option<String>,
}

struct Session {
    kv: KvConfig,
    seed: Option<u64>,
    out: PathBuf,
}

impl Session {
    fn model_config(&self) -> CmdResult<ModelConfig> {
        Ok(ModelConfig::from_kv(&self.kv.restrict(MODEL_KEYS))?)
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Setup(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Setup(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

fn load_kv(common: &Common) -> CmdResult<KvConfig> {
    let mut kv = match &common.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    };
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::Setup(format!("--set expects KEY=VALUE, got `{s}`")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(seed) = common.seed {
        kv.set("seed", seed.to_string());
    }
    let known: Vec<&str> = GEN_KEYS.iter().chain(MODEL_KEYS).copied().collect();
    kv.reject_unknown(&known)?;
    Ok(kv)
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Gen => "gen",
        Command::Store { action } => match action {
            StoreAction::Build(_) => "store-build",
            StoreAction::Update(_) => "store-update",
            StoreAction::Query(_) => "store-query",
        },
        Command::StoreBuild(_) => "store-build",
        Command::StoreUpdate(_) => "store-update",
        Command::StoreQuery(_) => "store-query",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Ablate(_) => "ablate",
        Command::CacheCheck(_) => "cache-check",
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CmdResult<()> {
    let started = Instant::now();
    let kv = load_kv(&cli.common)?;
    let out = cli
        .common
        .out
        .clone()
        .ok_or_else(|| Failure::Setup("--out is required".into()))?;
    fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    let name = command_name(&cli.command);
    let mut session = Session {
        kv,
        seed: cli.common.seed,
        out,
    };
    let outcome = match &cli.command {
        Command::Gen => gen(&session),
        Command::Store { action } => match action {
            StoreAction::Build(a) => store_build(&mut session, a),
            StoreAction::Update(a) => store_update(&session, a),
            StoreAction::Query(a) => store_query(&session, a),
        },
        Command::StoreBuild(a) => store_build(&mut session, a),
        Command::StoreUpdate(a) => store_update(&session, a),
        Command::StoreQuery(a) => store_query(&session, a),
        Command::Train(a) => train_cmd(&mut session, a),
        Command::Eval(a) => eval_cmd(&session, a),
        Command::Ablate(a) => ablate_cmd(&mut session, a),
        Command::CacheCheck(a) => cache_check_cmd(&session, a),
    }?;
    let mut inputs = outcome.inputs;
    inputs.extend(cli.common.config.clone());
    let exit_code = if outcome.validation_failure.is_some() { 1 } else { 0 };
    let manifest = RunManifest {
        command: name.to_string(),
        config_hash: session.kv.hash(),
        config: session.kv.to_text(),
        seed: session.seed,
        inputs: hash_paths(&inputs).map_err(|e| Failure::Setup(e.to_string()))?,
        artifacts: hash_paths(&outcome.artifacts).map_err(|e| Failure::Setup(e.to_string()))?,
        logs: outcome.logs,
        wall_seconds: started.elapsed().as_secs_f64(),
        exit_code,
    };
    write_json(&session.out.join(MANIFEST_FILE), &manifest)?;
    match outcome.validation_failure {
        Some(m) => Err(Failure::Validation(m)),
        None => Ok(()),
    }
}

fn gen(s: &Session) -> CmdResult<Outcome> {
    let cfg = dgin_core::synthgen::GenConfig::from_kv(&s.kv.restrict(GEN_KEYS))?;
    write_dataset(&cfg, &s.out)?;
    let artifacts = ["events.jsonl", "instances.jsonl", "ground_truth.jsonl", "gen.cfg"]
        .iter()
        .map(|f| s.out.join(f))
        .collect();
    println!("wrote {} users to {}", cfg.n_users, s.out.display());
    Ok(Outcome {
        artifacts,
        ..Outcome::default()
    })
}

fn read_histories(path: &Path) -> CmdResult<std::collections::BTreeMap<UserId, Vec<BehaviorEvent>>> {
    let log = parse_event_log(path)?;
    if log.malformed > 0 {
        eprintln!("warning: skipped {} malformed lines of {}", log.malformed, log.total);
    }
    Ok(group_by_user(log.events))
}

fn store_build(s: &mut Session, a: &StoreBuildArgs) -> CmdResult<Outcome> {
    if let Some(k) = a.key {
        s.kv.set("key_field", k.name());
    }
    if let Some(b) = a.max_members {
        s.kv.set("max_members", b.to_string());
    }
    if let Some(g) = a.max_groups {
        s.kv.set("max_groups", g.to_string());
    }
    if let Some(t) = a.subsequence_len {
        s.kv.set("subsequence_len", t.to_string());
    }
    let config = s.model_config()?.store_config();
    let histories = read_histories(&a.events)?;
    let store = TwoLevelIndex::build(config, &histories)?;
    let path = s.out.join(SNAPSHOT_FILE);
    save_snapshot(&store, &path)?;
    println!("{} users, as of {}", store.user_count(), store.as_of());
    Ok(Outcome {
        inputs: vec![a.events.clone()],
        artifacts: vec![path],
        ..Outcome::default()
    })
}

#[derive(Serialize)]
struct UpdateSummary {
    applied: usize,
    rejected: Vec<String>,
}

fn store_update(s: &Session, a: &StoreUpdateArgs) -> CmdResult<Outcome> {
    let mut store = load_snapshot(&a.snapshot)?;
    let log = parse_event_log(&a.events)?;
    let report = store.streaming_update(log.events);
    let path = s.out.join(SNAPSHOT_FILE);
    save_snapshot(&store, &path)?;
    let summary = UpdateSummary {
        applied: report.applied,
        rejected: report.rejected.iter().map(ToString::to_string).collect(),
    };
    let report_path = s.out.join(UPDATE_REPORT_FILE);
    write_json(&report_path, &summary)?;
    println!("applied {}, rejected {}", summary.applied, summary.rejected.len());
    Ok(Outcome {
        inputs: vec![a.snapshot.clone(), a.events.clone()],
        artifacts: vec![path, report_path],
        validation_failure: (!summary.rejected.is_empty())
            .then(|| format!("{} out-of-order events rejected", summary.rejected.len())),
        ..Outcome::default()
    })
}

#[derive(Serialize)]
struct QueryResult<'a> {
    user_id: UserId,
    known: bool,
    groups: Vec<&'a dgin_core::InterestGroup>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subsequence: Option<Vec<BehaviorEvent>>,
}

fn store_query(s: &Session, a: &StoreQueryArgs) -> CmdResult<Outcome> {
    let store = load_snapshot(&a.snapshot)?;
    let subsequence = match &a.candidate {
        Some(json) => {
            let c: CandidateItem =
                serde_json::from_str(json).map_err(|e| Failure::Setup(format!("--candidate: {e}")))?;
            let key = store.config().key_field;
            Some(
                store
                    .candidate_subsequence(a.user, &c, key, store.config().subsequence_len)?
                    .events,
            )
        }
        None => None,
    };
    let result = QueryResult {
        user_id: a.user,
        known: store.user(a.user).is_some(),
        groups: store.top_groups(a.user),
        subsequence,
    };
    let path = s.out.join(QUERY_FILE);
    write_json(&path, &result)?;
    let line = serde_json::to_string(&result).map_err(|e| Failure::Setup(e.to_string()))?;
    // A closed pipe (e.g. `| head`) is not an error for a query.
    let _ = writeln!(std::io::stdout().lock(), "{line}");
    Ok(Outcome {
        inputs: vec![a.snapshot.clone()],
        artifacts: vec![path],
        ..Outcome::default()
    })
}

/// Event log, time-split instances and the store a model reads.
struct Dataset {
    histories: std::collections::BTreeMap<UserId, Vec<BehaviorEvent>>,
    instances: Vec<Instance>,
    inputs: Vec<PathBuf>,
}

fn read_dataset(dir: &Path) -> CmdResult<Dataset> {
    let events = dir.join(EVENTS_FILE);
    let inst = dir.join(INSTANCES_FILE);
    Ok(Dataset {
        histories: read_histories(&events)?,
        instances: read_instances(&inst)?,
        inputs: vec![events, inst],
    })
}

fn store_for(
    config: &ModelConfig,
    snapshot: Option<&Path>,
    data: &Dataset,
    inputs: &mut Vec<PathBuf>,
) -> CmdResult<TwoLevelIndex> {
    match snapshot {
        Some(p) => {
            inputs.push(p.to_path_buf());
            Ok(load_snapshot(p)?)
        }
        None => {
            let sc: StoreConfig = config.store_config();
            let histories = if config.variant.clicks_only() {
                data.histories
                    .iter()
                    .map(|(&u, evs)| (u, evs.iter().filter(|e| config.variant.keeps(e)).copied().collect()))
                    .collect()
            } else {
                data.histories.clone()
            };
            let mut store = TwoLevelIndex::build(sc, &histories)?;
            store.advance_to(dgin_core::model::ablate::history_end(&data.histories));
            Ok(store)
        }
    }
}

/// Fails with exit 1 when any instance breaks a data invariant against `store`.
fn check_instances(instances: &[Instance], store: &TwoLevelIndex) -> CmdResult<()> {
    let bad: Vec<_> = instances
        .iter()
        .filter_map(|i| {
            let v = validate_instance(i, store);
            // Cold-start users are served through the null interests.
            let v: Vec<_> = v
                .into_iter()
                .filter(|x| !matches!(x, dgin_core::datamodel::Violation::UnknownUser(_)))
                .collect();
            (!v.is_empty()).then_some((i.user_id, v))
        })
        .collect();
    match bad.first() {
        None => Ok(()),
        Some((u, v)) => Err(Failure::Validation(format!(
            "{} instances violate data invariants (first: user {u}: {v:?})",
            bad.len()
        ))),
    }
}

fn train_cmd(s: &mut Session, a: &TrainArgs) -> CmdResult<Outcome> {
    if let Some(v) = a.variant {
        s.kv.set("variant", v.name());
    }
    if let Some(k) = a.key {
        s.kv.set("key_field", k.name());
    }
    if let Some(e) = a.epochs {
        s.kv.set("epochs", e.to_string());
    }
    let config = s.model_config()?;
    let data = read_dataset(&a.data)?;
    let mut inputs = data.inputs.clone();
    let store = store_for(&config, a.snapshot.as_deref(), &data, &mut inputs)?;
    check_instances(&data.instances, &store)?;
    let vocab = dgin_core::model::vocab_from_data(
        data.histories
            .iter()
            .flat_map(|(u, es)| es.iter().map(move |e| (*u, e))),
        &data.instances,
    );
    let (train_set, test_set) = split_by_time(data.instances.clone())?;
    let mut model = Dgin::new(config, vocab)?;
    let metrics = s.out.join("metrics.jsonl");
    if metrics.exists() {
        fs::remove_file(&metrics).map_err(|e| io_failure(&metrics, e))?;
    }
    let report = train(&mut model, &store, &train_set, &test_set, Some(&s.out))?;
    let snapshot = s.out.join(SNAPSHOT_FILE);
    save_snapshot(&store, &snapshot)?;
    if let Some(last) = report.epochs.last() {
        println!(
            "epoch {}: train logloss {:.4}, test auc {:.4}, test logloss {:.4}",
            last.epoch, last.train_logloss, last.test_auc, last.test_logloss
        );
    }
    let ckpt = dgin_core::model::train::checkpoint_path(&s.out);
    Ok(Outcome {
        inputs,
        artifacts: vec![
            dgin_core::model::train::model_manifest_path(&s.out),
            ckpt.clone(),
            dgin_core::numerics::checkpoint::blob_path(&ckpt),
            snapshot,
        ],
        logs: vec![metrics],
        validation_failure: None,
    })
}

fn eval_cmd(s: &Session, a: &EvalArgs) -> CmdResult<Outcome> {
    let model = load_model(&a.model)?;
    let data = read_dataset(&a.data)?;
    let mut inputs = data.inputs.clone();
    inputs.push(dgin_core::model::train::checkpoint_path(&a.model));
    let snapshot = a.snapshot.clone().or_else(|| {
        let p = a.model.join(SNAPSHOT_FILE);
        p.exists().then_some(p)
    });
    let store = store_for(&model.config, snapshot.as_deref(), &data, &mut inputs)?;
    let instances = match &a.instances {
        Some(p) => {
            inputs.push(p.clone());
            read_instances(p)?
        }
        None => split_by_time(data.instances.clone())?.1,
    };
    check_instances(&instances, &store)?;
    let scores = model.predict(&store, &instances)?;
    let labels: Vec<f64> = instances.iter().map(Instance::label_f64).collect();
    let report = dgin_core::model::evaluate(&scores, &labels)?;
    let path = s.out.join(EVAL_FILE);
    write_json(&path, &report)?;
    println!(
        "auc {:.4} logloss {:.4} over {} instances",
        report.auc, report.logloss, report.n
    );
    Ok(Outcome {
        inputs,
        artifacts: vec![path],
        ..Outcome::default()
    })
}

#[derive(Serialize)]
struct AblationTable {
    key_field: KeyField,
    rows: Vec<AblationRow>,
}

fn ablate_cmd(s: &mut Session, a: &AblateArgs) -> CmdResult<Outcome> {
    if let Some(k) = a.key {
        s.kv.set("key_field", k.name());
    }
    let base = s.model_config()?;
    let data = read_dataset(&a.data)?;
    let (train_set, test_set) = split_by_time(data.instances.clone())?;
    let vocab = dgin_core::model::vocab_from_data(
        data.histories
            .iter()
            .flat_map(|(u, es)| es.iter().map(move |e| (*u, e))),
        &data.instances,
    );
    let first = s.seed.unwrap_or(1);
    let seeds: Vec<u64> = (first..first + a.seeds as u64).collect();
    let rows = ablate(
        &base,
        AblationData {
            histories: &data.histories,
            train: &train_set,
            test: &test_set,
            vocab,
        },
        &seeds,
    )?;
    for r in &rows {
        println!(
            "{:<20} auc {:.4} ± {:.4}  logloss {:.4}",
            r.variant.name(),
            r.mean_auc,
            r.sd_auc,
            r.mean_logloss
        );
    }
    let path = s.out.join(ABLATION_FILE);
    write_json(
        &path,
        &AblationTable {
            key_field: base.key_field,
            rows,
        },
    )?;
    Ok(Outcome {
        inputs: data.inputs,
        artifacts: vec![path],
        ..Outcome::default()
    })
}

/// One instance per stored user: the most recent event of the user's top
/// group as candidate, decided one second after the store's reference time.
pub fn probe_instances(store: &TwoLevelIndex) -> Vec<Instance> {
    let t = store.as_of() + 1;
    store
        .users()
        .filter_map(|entry| {
            let g = store.top_groups(entry.user_id).into_iter().next()?;
            let e = g.recent_events.last()?;
            Some(Instance {
                user_id: entry.user_id,
                candidate: CandidateItem {
                    item_id: e.item_id,
                    category_id: e.category_id,
                    price_cents: e.price_cents,
                    location_cell: e.location_cell,
                },
                context: Context {
                    hour_of_week: 0,
                    surface_id: 1,
                },
                decision_timestamp: t,
                label: 0,
            })
        })
        .collect()
}

fn cache_check_cmd(s: &Session, a: &CacheCheckArgs) -> CmdResult<Outcome> {
    let model = load_model(&a.ckpt)?;
    let store = load_snapshot(&a.snapshot)?;
    let mut inputs = vec![a.snapshot.clone(), dgin_core::model::train::checkpoint_path(&a.ckpt)];
    let instances = match &a.instances {
        Some(p) => {
            inputs.push(p.clone());
            read_instances(p)?
        }
        None => probe_instances(&store),
    };
    let cache_path = s.out.join(CACHE_FILE);
    GroupCache::build(&model, &store)?.save(&cache_path)?;
    // Check against the cache as read back from disk, the way a server would.
    let cache = GroupCache::load(&cache_path)?;
    let report = cache_check(&model, &store, &cache, &instances)?;
    let report_path = s.out.join(CACHE_REPORT_FILE);
    write_json(&report_path, &report)?;
    println!(
        "{} instances, {} mismatched values, max |diff| {:e}",
        report.instances, report.mismatched_values, report.max_abs_diff
    );
    Ok(Outcome {
        inputs,
        artifacts: vec![cache_path.clone(), GroupCache::blob_path(&cache_path), report_path],
        validation_failure: (!report.bit_exact())
            .then(|| format!("{} cached values differ from fresh ones", report.mismatched_values)),
        ..Outcome::default()
    })
}
