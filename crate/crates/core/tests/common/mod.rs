//! Straight-line reference implementations shared by the integration tests.
//! Everything here works on plain nested vectors with explicit loops.

#![allow(dead_code)]

use dgin_core::datamodel::KeyField;
use dgin_core::embedding::{Schema, Vocab};
use dgin_core::group_module::GroupModule;
use dgin_core::numerics::LAYER_NORM_EPS;
use dgin_core::target_module::{FeedForward, NormParams, TargetModule};
use dgin_core::{Embedder, ParamSet, ValueGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn rows_of(g: &ValueGrid) -> Rows {
    (0..g.rows()).map(|r| g.row(r).to_vec()).collect()
}

pub fn max_diff(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    let mut m: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.len(), y.len(), "column count");
        for (u, v) in x.iter().zip(y) {
            m = m.max((u - v).abs());
        }
    }
    m
}

pub fn random_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Rows {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn grid(rows: &Rows) -> ValueGrid {
    ValueGrid::from_rows(rows)
}

pub fn small_vocab() -> Vocab {
    Vocab {
        users: 20,
        items: 30,
        categories: 6,
        location_cells: 8,
        surfaces: 3,
    }
}

pub fn small_embedder(dim: usize, params: &mut ParamSet, seed: u64) -> Embedder {
    let schema = Schema::new(dim, KeyField::ItemId, small_vocab()).unwrap();
    Embedder::register(schema, params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn matmul(a: &Rows, w: &ValueGrid) -> Rows {
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), w.rows());
            (0..w.cols())
                .map(|j| {
                    let mut s = 0.0;
                    for (k, x) in row.iter().enumerate() {
                        s += x * w.row(k)[j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

fn add_bias(a: &Rows, b: &ValueGrid) -> Rows {
    a.iter()
        .map(|x| x.iter().zip(b.row(0)).map(|(u, v)| u + v).collect())
        .collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// One head at a time: project, score, softmax, weight the values, concatenate, then `W^O`.
pub fn naive_mha(
    queries: &Rows,
    kv: &Rows,
    wq: &ValueGrid,
    wk: &ValueGrid,
    wv: &ValueGrid,
    wo: &ValueGrid,
    heads: usize,
) -> Rows {
    let width = wq.cols();
    let dh = width / heads;
    let mut concat = vec![vec![0.0; width]; queries.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let head_proj = |x: &Rows, w: &ValueGrid| -> Rows {
            x.iter()
                .map(|row| {
                    cols.clone()
                        .map(|j| row.iter().enumerate().map(|(k, v)| v * w.row(k)[j]).sum())
                        .collect()
                })
                .collect()
        };
        let q = head_proj(queries, wq);
        let k = head_proj(kv, wk);
        let v = head_proj(kv, wv);
        for (qi, qrow) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|krow| qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let p = softmax(&scores);
            for j in 0..dh {
                concat[qi][h * dh + j] = p.iter().zip(&v).map(|(pk, vrow)| pk * vrow[j]).sum();
            }
        }
    }
    matmul(&concat, wo)
}

fn layer_norm(x: &Rows, gain: &ValueGrid, shift: &ValueGrid) -> Rows {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + LAYER_NORM_EPS).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / sd * gain.row(0)[j] + shift.row(0)[j])
                .collect()
        })
        .collect()
}

fn norm(params: &ParamSet, n: &NormParams, x: &Rows) -> Rows {
    layer_norm(x, &params.get(n.gain).grid, &params.get(n.shift).grid)
}

fn ffn(params: &ParamSet, f: &FeedForward, x: &Rows) -> Rows {
    let h = add_bias(&matmul(x, &params.get(f.w1).grid), &params.get(f.b1).grid);
    let h: Rows = h
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    add_bias(&matmul(&h, &params.get(f.w2).grid), &params.get(f.b2).grid)
}

pub fn mha_with(params: &ParamSet, m: &dgin_core::attention::MultiHeadAttention, queries: &Rows, kv: &Rows) -> Rows {
    naive_mha(
        queries,
        kv,
        &params.get(m.wq).grid,
        &params.get(m.wk).grid,
        &params.get(m.wv).grid,
        &params.get(m.wo).grid,
        m.heads,
    )
}

pub struct NaiveTm {
    pub interest: Vec<f64>,
    pub out_mhsa: Rows,
    pub out_enc: Rows,
}

/// Encoder and decoder written out for one candidate over the unmasked rows of `e_t`.
pub fn naive_tm(params: &ParamSet, tm: &TargetModule, e_t: &Rows, mask: &[bool], candidate: &[f64]) -> NaiveTm {
    let live: Rows = e_t
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(r, _)| r.clone())
        .collect();
    if live.is_empty() {
        return NaiveTm {
            interest: params.get(tm.null_decision).grid.row(0).to_vec(),
            out_mhsa: vec![],
            out_enc: vec![],
        };
    }
    let a = mha_with(params, &tm.encoder_attention, &live, &live);
    let out_mhsa = norm(params, &tm.encoder_norm1, &add(&live, &a));
    let f = ffn(params, &tm.encoder_ffn, &out_mhsa);
    let out_enc = norm(params, &tm.encoder_norm2, &add(&out_mhsa, &f));

    let q = add_bias(
        &matmul(&vec![candidate.to_vec()], &params.get(tm.projection_w).grid),
        &params.get(tm.projection_b).grid,
    );
    let m = mha_with(params, &tm.decoder_attention, &q, &out_enc);
    let y = norm(params, &tm.decoder_norm1, &add(&q, &m));
    let f = ffn(params, &tm.decoder_ffn, &y);
    let z = norm(params, &tm.decoder_norm2, &add(&y, &f));
    NaiveTm {
        interest: z[0].clone(),
        out_mhsa,
        out_enc,
    }
}

/// AUC as the fraction of (positive, negative) pairs ordered correctly, ties counting one half.
pub fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        if labels[i] != 1.0 {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] != 0.0 {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Self-attention among the unmasked members; masked rows stay zero.
pub fn naive_group_mhsa(params: &ParamSet, gm: &GroupModule, e_b: &Rows, mask: &[bool]) -> Rows {
    let mhsa = gm.member_attention.as_ref().unwrap();
    let live: Vec<usize> = (0..e_b.len()).filter(|&r| mask[r]).collect();
    let x: Rows = live.iter().map(|&r| e_b[r].clone()).collect();
    let y = mha_with(params, mhsa, &x, &x);
    let mut out = vec![vec![0.0; mhsa.model_width]; e_b.len()];
    for (i, &r) in live.iter().enumerate() {
        out[r] = y[i].clone();
    }
    out
}

/// Candidate-as-query attention over the unmasked group rows, or the null interest.
pub fn naive_mhta_gm(params: &ParamSet, gm: &GroupModule, candidate: &[f64], e_g: &Rows, mask: &[bool]) -> Vec<f64> {
    let live: Rows = e_g
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(r, _)| r.clone())
        .collect();
    if live.is_empty() {
        return params.get(gm.null_interest).grid.row(0).to_vec();
    }
    mha_with(params, &gm.target_attention, &vec![candidate.to_vec()], &live)[0].clone()
}

pub struct Modules {
    pub params: ParamSet,
    pub embedder: Embedder,
    pub gm: GroupModule,
    pub tm: TargetModule,
}

/// Full-variant group and target modules at embedding width `dim`.
pub fn modules(dim: usize, heads: usize, seed: u64) -> Modules {
    let mut params = ParamSet::new();
    let embedder = small_embedder(dim, &mut params, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let gm = GroupModule::register(&embedder, heads, true, true, &mut params, &mut rng).unwrap();
    let tm = TargetModule::register(&embedder, heads, &mut params, &mut rng).unwrap();
    Modules {
        params,
        embedder,
        gm,
        tm,
    }
}

/// A dataset small enough to train on in a second.
pub fn tiny_gen_config(seed: u64) -> dgin_core::synthgen::GenConfig {
    dgin_core::synthgen::GenConfig {
        seed,
        n_users: 40,
        n_items: 150,
        n_categories: 15,
        mean_events_per_user: 150.0,
        menu_min: 8,
        menu_max: 16,
        horizon_days: 30,
        hot_window_days: 7,
        n_train_instances: 300,
        n_test_instances: 80,
        ..Default::default()
    }
}

pub fn tiny_model_config(variant: dgin_core::Variant) -> dgin_core::ModelConfig {
    dgin_core::ModelConfig {
        dim: 4,
        max_members: 4,
        max_groups: 16,
        subsequence_len: 5,
        mlp_widths: vec![16, 8, 1],
        batch_size: 64,
        epochs: 1,
        variant,
        ..Default::default()
    }
}

pub struct Fixture {
    pub data: dgin_core::synthgen::GeneratedData,
    pub train: Vec<dgin_core::Instance>,
    pub test: Vec<dgin_core::Instance>,
    pub vocab: Vocab,
}

pub fn tiny_fixture(seed: u64) -> Fixture {
    let data = dgin_core::synthgen::generate(&tiny_gen_config(seed)).unwrap();
    let (train, test) = dgin_core::model::train::split_by_time(data.instances.clone()).unwrap();
    let vocab = dgin_core::model::vocab_from_data(
        data.histories
            .iter()
            .flat_map(|(&u, evs)| evs.iter().map(move |e| (u, e))),
        &data.instances,
    );
    Fixture {
        data,
        train,
        test,
        vocab,
    }
}

impl Fixture {
    pub fn store(&self, config: &dgin_core::ModelConfig) -> dgin_core::TwoLevelIndex {
        use dgin_core::model::ablate::{build_store, history_end};
        build_store(
            config,
            config.variant,
            &self.data.histories,
            history_end(&self.data.histories),
        )
        .unwrap()
    }
}
