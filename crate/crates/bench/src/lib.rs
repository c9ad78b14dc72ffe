//! Shared fixtures for the criterion benches.

use dgin_core::model::ablate::{build_store, history_end};
use dgin_core::model::train::split_by_time;
use dgin_core::model::vocab_from_data;
use dgin_core::numerics::ValueGrid;
use dgin_core::synthgen::{generate, GenConfig, GeneratedData};
use dgin_core::{Dgin, Instance, ModelConfig, TwoLevelIndex};

/// Deterministic grid with entries in `[-1, 1)`.
pub fn grid(rows: usize, cols: usize, seed: u64) -> ValueGrid {
    let mut state = seed.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1);
    let values = (0..rows * cols)
        .map(|_| {
            state = state
                .wrapping_mul(6_364_136_223_846_793_005)
                .wrapping_add(1_442_695_040_888_963_407);
            (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    ValueGrid::from_vec(rows, cols, values).expect("shape matches")
}

pub fn small_gen_config() -> GenConfig {
    GenConfig {
        n_users: 200,
        n_items: 400,
        n_categories: 40,
        mean_events_per_user: 1000.0,
        menu_min: 10,
        menu_max: 30,
        horizon_days: 60,
        hot_window_days: 7,
        n_train_instances: 2000,
        n_test_instances: 500,
        ..GenConfig::default()
    }
}

pub fn small_data() -> GeneratedData {
    generate(&small_gen_config()).expect("valid config")
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        dim: 8,
        max_members: 8,
        max_groups: 64,
        subsequence_len: 10,
        ..ModelConfig::default()
    }
}

/// A model, its store and the training instances of [`small_data`].
pub fn model_fixture(config: ModelConfig, data: &GeneratedData) -> (Dgin, TwoLevelIndex, Vec<Instance>) {
    let vocab = vocab_from_data(
        data.histories
            .iter()
            .flat_map(|(u, es)| es.iter().map(move |e| (*u, e))),
        &data.instances,
    );
    let store = build_store(&config, config.variant, &data.histories, history_end(&data.histories)).expect("store");
    let (train, _) = split_by_time(data.instances.clone()).expect("split");
    (Dgin::new(config, vocab).expect("model"), store, train)
}
