mod common;

use common::*;
use dgin_core::model::train::{load_model, save_model, train};
use dgin_core::serving::{cache_check, GroupCache};
use dgin_core::{Dgin, Variant};

#[test]
fn zero_parameters_predict_one_half() {
    let f = tiny_fixture(1);
    for variant in Variant::LADDER {
        let config = tiny_model_config(variant);
        let store = f.store(&config);
        let mut model = Dgin::new(config, f.vocab).unwrap();
        model.params.iter_mut().for_each(|p| p.grid.fill(0.0));
        for p in model.predict(&store, &f.test).unwrap() {
            assert_eq!(p, 0.5, "{variant}");
        }
    }
}

#[test]
fn same_seed_gives_identical_models() {
    let f = tiny_fixture(2);
    let config = tiny_model_config(Variant::Full);
    let store = f.store(&config);
    let a = Dgin::new(config.clone(), f.vocab).unwrap();
    let b = Dgin::new(config.clone(), f.vocab).unwrap();
    assert_eq!(a.predict(&store, &f.test).unwrap(), b.predict(&store, &f.test).unwrap());
    let c = Dgin::new(dgin_core::ModelConfig { seed: 1, ..config }, f.vocab).unwrap();
    assert_ne!(a.predict(&store, &f.test).unwrap(), c.predict(&store, &f.test).unwrap());
}

#[test]
fn batching_does_not_change_predictions() {
    let f = tiny_fixture(3);
    for variant in [Variant::Full, Variant::TruncatedBaseline] {
        let config = tiny_model_config(variant);
        let store = f.store(&config);
        let model = Dgin::new(config, f.vocab).unwrap();
        let batch = model.predict_batch(&store, &f.test[..20], None).unwrap();
        for (inst, p) in f.test[..20].iter().zip(&batch) {
            let single = model.forward(inst, &store).unwrap();
            assert!((single.logit - p.logit).abs() < 1e-12, "{variant}");
        }
    }
}

#[test]
fn variants_carry_the_expected_pathways() {
    let f = tiny_fixture(4);
    for variant in Variant::LADDER {
        let m = Dgin::new(tiny_model_config(variant), f.vocab).unwrap();
        assert_eq!(m.group_module.is_some(), variant.uses_group_module(), "{variant}");
        assert_eq!(m.target_module.is_some(), variant.uses_target_module(), "{variant}");
        assert_eq!(m.baseline.is_some(), variant == Variant::TruncatedBaseline, "{variant}");
        if let Some(gm) = &m.group_module {
            assert_eq!(gm.layout.stats_width > 0, variant.uses_stats(), "{variant}");
            assert_eq!(gm.member_attention.is_some(), variant.uses_aggregated(), "{variant}");
        }
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let f = tiny_fixture(5);
    let config = dgin_core::ModelConfig {
        lr: 0.0,
        ..tiny_model_config(Variant::Full)
    };
    let store = f.store(&config);
    let mut model = Dgin::new(config, f.vocab).unwrap();
    let before: Vec<_> = model.params.iter().map(|(_, p)| p.grid.clone()).collect();
    train(&mut model, &store, &f.train, &f.test, None).unwrap();
    let after: Vec<_> = model.params.iter().map(|(_, p)| p.grid.clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let f = tiny_fixture(6);
    let config = dgin_core::ModelConfig {
        epochs: 3,
        lr: 3e-3,
        ..tiny_model_config(Variant::Full)
    };
    let store = f.store(&config);
    let run = || {
        let mut model = Dgin::new(config.clone(), f.vocab).unwrap();
        train(&mut model, &store, &f.train, &f.test, None).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.step_losses, b.step_losses);
    assert_eq!(a.epochs.len(), 3);
    assert!(a.epochs[2].train_logloss < a.epochs[0].train_logloss);
}

#[test]
fn training_rejects_test_data_that_precedes_training_data() {
    let f = tiny_fixture(7);
    let config = tiny_model_config(Variant::Simple);
    let store = f.store(&config);
    let mut model = Dgin::new(config, f.vocab).unwrap();
    assert!(train(&mut model, &store, &f.test, &f.train, None).is_err());
}

#[test]
fn saved_model_reloads_with_identical_predictions() {
    let f = tiny_fixture(8);
    let config = tiny_model_config(Variant::Full);
    let store = f.store(&config);
    let dir = tempfile::tempdir().unwrap();
    let mut model = Dgin::new(config, f.vocab).unwrap();
    train(&mut model, &store, &f.train, &f.test, Some(dir.path())).unwrap();
    let loaded = load_model(dir.path()).unwrap();
    assert_eq!(
        model.predict(&store, &f.test).unwrap(),
        loaded.predict(&store, &f.test).unwrap()
    );
    save_model(&loaded, dir.path()).unwrap();
}

#[test]
fn group_cache_round_trips_and_matches_fresh_computation() {
    let f = tiny_fixture(9);
    let config = tiny_model_config(Variant::Full);
    let store = f.store(&config);
    let model = Dgin::new(config, f.vocab).unwrap();
    let cache = GroupCache::build(&model, &store).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    cache.save(&path).unwrap();
    let loaded = GroupCache::load(&path).unwrap();
    assert_eq!(cache, loaded);
    let report = cache_check(&model, &store, &loaded, &f.test).unwrap();
    assert_eq!(report.instances, f.test.len());
    assert!(report.bit_exact(), "{report:?}");
}

#[test]
fn cache_from_another_model_is_refused() {
    let f = tiny_fixture(10);
    let config = tiny_model_config(Variant::Full);
    let store = f.store(&config);
    let model = Dgin::new(config, f.vocab).unwrap();
    let other = Dgin::new(tiny_model_config(Variant::SimpleStatsAgg), f.vocab).unwrap();
    let cache = GroupCache::build(&other, &store).unwrap();
    assert!(cache_check(&model, &store, &cache, &f.test).is_err());
    let baseline = Dgin::new(tiny_model_config(Variant::TruncatedBaseline), f.vocab).unwrap();
    assert!(GroupCache::build(&baseline, &store).is_err());
}

#[test]
fn a_single_user_bucket_shares_one_embedding_row() {
    let f = tiny_fixture(11);
    let config = dgin_core::ModelConfig {
        user_buckets: Some(1),
        ..tiny_model_config(Variant::Simple)
    };
    let model = Dgin::new(config, f.vocab).unwrap();
    let e = &model.embedder;
    let field = dgin_core::embedding::Field::UserId;
    assert_eq!(e.categorical(field, 1), e.categorical(field, 37));
    assert_ne!(
        model.schema_hash(),
        Dgin::new(tiny_model_config(Variant::Simple), f.vocab)
            .unwrap()
            .schema_hash()
    );
}
