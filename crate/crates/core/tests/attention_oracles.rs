mod common;

use common::*;
use dgin_core::group_module::{aggregate, IntraGroupInput};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn member_width(m: &Modules) -> usize {
    m.gm.member_attention.as_ref().unwrap().model_width
}

#[test]
fn group_mhsa_matches_naive_oracle_with_padding() {
    let m = modules(4, 2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let e_b = random_rows(&mut rng, 5, member_width(&m));
    let mask = [true, true, false, true, false];
    let got =
        m.gm.mhsa(
            &m.params,
            &IntraGroupInput {
                e_b: grid(&e_b),
                member_mask: mask.to_vec(),
            },
        )
        .unwrap();
    let want = naive_group_mhsa(&m.params, &m.gm, &e_b, &mask);
    assert!(max_diff(&rows_of(&got), &want) < TOL);
    assert!(got.row(2).iter().chain(got.row(4)).all(|&v| v == 0.0));
}

#[test]
fn singleton_group_attends_only_to_itself() {
    let m = modules(4, 2, 3);
    let mhsa = m.gm.member_attention.as_ref().unwrap();
    let x = random_rows(&mut ChaCha8Rng::seed_from_u64(4), 1, member_width(&m));
    let got =
        m.gm.mhsa(
            &m.params,
            &IntraGroupInput {
                e_b: grid(&x),
                member_mask: vec![true],
            },
        )
        .unwrap();
    // With one key the softmax weight is 1, leaving (x W^V) W^O.
    let wv = &m.params.get(mhsa.wv).grid;
    let wo = &m.params.get(mhsa.wo).grid;
    let v = dgin_core::numerics::kernels::matmul(&grid(&x), wv).unwrap();
    let want = dgin_core::numerics::kernels::matmul(&v, wo).unwrap();
    assert!(got.max_abs_diff(&want) < TOL);
}

#[test]
fn fully_masked_group_is_rejected() {
    let m = modules(4, 2, 5);
    let input = IntraGroupInput {
        e_b: grid(&vec![vec![0.5; member_width(&m)]; 2]),
        member_mask: vec![false, false],
    };
    assert!(m.gm.mhsa(&m.params, &input).is_err());
    assert!(aggregate(&input.e_b, &input.member_mask).is_err());
}

#[test]
fn aggregate_is_the_mean_of_unmasked_rows() {
    let rows = vec![vec![1.0, 2.0], vec![100.0, 100.0], vec![3.0, 6.0]];
    let got = aggregate(&grid(&rows), &[true, false, true]).unwrap();
    assert_eq!(got.row(0), &[2.0, 4.0]);
}

#[test]
fn mhta_gm_matches_naive_oracle() {
    let m = modules(4, 2, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cand = random_rows(&mut rng, 1, m.gm.target_attention.query_width);
    let e_g = random_rows(&mut rng, 4, m.gm.layout.width());
    let mask = [true, false, true, true];
    let got = m.gm.mhta_gm(&m.params, &grid(&cand), &grid(&e_g), &mask).unwrap();
    let want = naive_mhta_gm(&m.params, &m.gm, &cand[0], &e_g, &mask);
    assert!(max_diff(&rows_of(&got), &vec![want]) < TOL);
}

#[test]
fn mhta_gm_without_groups_returns_the_null_interest() {
    let m = modules(4, 2, 8);
    let cand = vec![vec![0.3; m.gm.target_attention.query_width]];
    let e_g = vec![vec![0.0; m.gm.layout.width()]; 3];
    let got = m.gm.mhta_gm(&m.params, &grid(&cand), &grid(&e_g), &[false; 3]).unwrap();
    assert_eq!(got.row(0), m.params.get(m.gm.null_interest).grid.row(0));
}

#[test]
fn tm_forward_matches_naive_oracle() {
    let m = modules(4, 2, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let e_t = random_rows(&mut rng, 5, m.tm.width);
    let cand = random_rows(&mut rng, 1, m.tm.candidate_width);
    let mask = [true, true, true, false, false];
    let got = m.tm.tm_forward(&m.params, &grid(&e_t), &mask, &grid(&cand)).unwrap();
    let want = naive_tm(&m.params, &m.tm, &e_t, &mask, &cand[0]);
    assert!(!got.is_null);
    assert!(max_diff(&rows_of(&got.out_mhsa), &want.out_mhsa) < TOL);
    assert!(max_diff(&rows_of(&got.out_enc), &want.out_enc) < TOL);
    assert!(max_diff(&rows_of(&got.interest_tm), &vec![want.interest]) < TOL);
}

#[test]
fn tm_forward_with_one_behavior() {
    let m = modules(4, 2, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let e_t = random_rows(&mut rng, 1, m.tm.width);
    let cand = random_rows(&mut rng, 1, m.tm.candidate_width);
    let got = m.tm.tm_forward(&m.params, &grid(&e_t), &[true], &grid(&cand)).unwrap();
    let want = naive_tm(&m.params, &m.tm, &e_t, &[true], &cand[0]);
    assert!(max_diff(&rows_of(&got.interest_tm), &vec![want.interest]) < TOL);
}

#[test]
fn tm_forward_on_empty_subsequence_returns_the_null_decision() {
    let m = modules(4, 2, 13);
    let e_t = vec![vec![0.0; m.tm.width]; 2];
    let cand = vec![vec![0.1; m.tm.candidate_width]];
    let got =
        m.tm.tm_forward(&m.params, &grid(&e_t), &[false, false], &grid(&cand))
            .unwrap();
    assert!(got.is_null);
    assert_eq!(got.interest_tm.row(0), m.params.get(m.tm.null_decision).grid.row(0));
}

#[test]
fn project_candidate_is_an_affine_map() {
    let m = modules(4, 2, 14);
    let zero = grid(&vec![vec![0.0; m.tm.candidate_width]]);
    let got = m.tm.project_candidate(&m.params, &zero).unwrap();
    assert_eq!(got.row(0), m.params.get(m.tm.projection_b).grid.row(0));
    assert_eq!(got.cols(), m.tm.width);
}

#[test]
fn shape_mismatches_are_errors() {
    let m = modules(4, 2, 15);
    let bad = grid(&vec![vec![0.0; 3]]);
    assert!(m.tm.tm_forward(&m.params, &bad, &[true], &bad).is_err());
    assert!(m.gm.mhta_gm(&m.params, &bad, &bad, &[true]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pooled_group_output_ignores_member_order(seed in 0u64..1000, n in 1usize..6, shift in 0usize..6) {
        let m = modules(4, 2, 16);
        let e_b = random_rows(&mut ChaCha8Rng::seed_from_u64(seed), n, member_width(&m));
        let mut rotated = e_b.clone();
        rotated.rotate_left(shift % n);
        let pool = |rows: &Rows| {
            let input = IntraGroupInput { e_b: grid(rows), member_mask: vec![true; rows.len()] };
            aggregate(&m.gm.mhsa(&m.params, &input).unwrap(), &input.member_mask).unwrap()
        };
        prop_assert!(pool(&e_b).max_abs_diff(&pool(&rotated)) < 1e-12);
    }

    #[test]
    fn padding_rows_do_not_change_live_outputs(seed in 0u64..1000, n in 1usize..5, pad in 1usize..4) {
        let m = modules(4, 2, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e_t = random_rows(&mut rng, n, m.tm.width);
        let cand = grid(&random_rows(&mut rng, 1, m.tm.candidate_width));
        let mut padded = e_t.clone();
        padded.extend(random_rows(&mut rng, pad, m.tm.width));
        let mut mask = vec![true; n];
        mask.extend(vec![false; pad]);
        let a = m.tm.tm_forward(&m.params, &grid(&e_t), &vec![true; n], &cand).unwrap();
        let b = m.tm.tm_forward(&m.params, &grid(&padded), &mask, &cand).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn target_attention_ignores_group_order(seed in 0u64..1000, n in 1usize..6) {
        let m = modules(4, 2, 18);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cand = grid(&random_rows(&mut rng, 1, m.gm.target_attention.query_width));
        let e_g = random_rows(&mut rng, n, m.gm.layout.width());
        let mut reversed = e_g.clone();
        reversed.reverse();
        let a = m.gm.mhta_gm(&m.params, &cand, &grid(&e_g), &vec![true; n]).unwrap();
        let b = m.gm.mhta_gm(&m.params, &cand, &grid(&reversed), &vec![true; n]).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
