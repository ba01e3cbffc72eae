use super::*;
use crate::autodiff::{grad_check, Array, Graph, DEFAULT_EPS, GRAD_TOL};

fn scalar_of(g: &Graph<f64>, t: Tensor) -> f64 {
    g.value(t).item()
}

#[test]
fn mel_l1_zero_and_unit_offsets() {
    let mut g: Graph<f64> = Graph::new();
    let a = Array::new(vec![3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    let pred = g.leaf(a.clone());
    let same = g.constant(a.clone());
    let mask = vec![true; 3];
    let l = mel_l1(&mut g, pred, same, &mask).unwrap();
    assert_eq!(scalar_of(&g, l), 0.0);

    let shifted = g.constant(a.map(|v| v + 1.0));
    let l = mel_l1(&mut g, pred, shifted, &mask).unwrap();
    assert!((scalar_of(&g, l) - 1.0).abs() < 1e-12);
}

#[test]
fn mel_l1_masked_frames_are_excluded() {
    // 4 frames x 2 bins; last two frames masked. Hand oracle over the
    // first half: (|1-0| + |2-0| + |3-0| + |4-0|) / 4 = 2.5.
    let mut g: Graph<f64> = Graph::new();
    let pred = g.leaf(Array::new(vec![4, 2], vec![1.0, 2.0, 3.0, 4.0, 9.0, 9.0, 9.0, 9.0]));
    let target = g.constant(Array::zeros(&[4, 2]));
    let mask = vec![true, true, false, false];
    let l = mel_l1(&mut g, pred, target, &mask).unwrap();
    assert!((scalar_of(&g, l) - 2.5).abs() < 1e-12);
}

#[test]
fn duration_l2_fixtures() {
    let mut g: Graph<f64> = Graph::new();
    // Perfect prediction.
    let pred = g.leaf(Array::new(vec![2], vec![2.0f64.ln(), 5.0f64.ln()]));
    let l = duration_l2(&mut g, pred, &[2.0, 5.0], &[true, true]).unwrap();
    assert!(scalar_of(&g, l) < 1e-24);

    // log 0 prediction against 1 frame (log 1 == 0).
    let pred = g.leaf(Array::new(vec![1], vec![0.0]));
    let l = duration_l2(&mut g, pred, &[1.0], &[true]).unwrap();
    assert_eq!(scalar_of(&g, l), 0.0);

    // Hand arithmetic: targets ln(e)=1, ln(e^2)=2 -> mean(1, 4) = 2.5.
    let pred = g.leaf(Array::new(vec![2], vec![0.0, 0.0]));
    let e = std::f64::consts::E;
    let l = duration_l2(&mut g, pred, &[e, e * e], &[true, true]).unwrap();
    assert!((scalar_of(&g, l) - 2.5).abs() < 1e-12);

    // Zero frames under the mask is a contract error.
    let pred = g.leaf(Array::new(vec![1], vec![0.0]));
    assert!(duration_l2(&mut g, pred, &[0.0], &[true]).is_err());
}

#[test]
fn pitch_metric_equal_pitches_and_rows_is_zero() {
    let mut g: Graph<f64> = Graph::new();
    let repr = g.leaf(Array::new(vec![3, 2], vec![0.4, -1.0, 0.4, -1.0, 0.4, -1.0]));
    let l = pitch_metric_loss(&mut g, repr, &[60, 60, 60], &[true; 3], 1).unwrap();
    assert_eq!(scalar_of(&g, l), 0.0);
}

#[test]
fn pitch_metric_geometric_embedding_is_exact_zero() {
    // repr(p) = 2^(p/12) * v: the frequency ratio cancels identically.
    let pitches: Vec<u8> = vec![60, 67, 64, 72, 52];
    let v = [0.3, -0.7, 1.1];
    let mut data = Vec::new();
    for &p in &pitches {
        let s = (f64::from(p) / 12.0).exp2();
        data.extend(v.iter().map(|&x| s * x));
    }
    let mut g: Graph<f64> = Graph::new();
    let repr = g.leaf(Array::new(vec![5, 3], data));
    let l = pitch_metric_loss(&mut g, repr, &pitches, &[true; 5], 1).unwrap();
    assert!(scalar_of(&g, l).abs() < 1e-6, "{}", scalar_of(&g, l));
}

#[test]
fn pitch_metric_hand_fixture_edge_policy() {
    // N=2, k=1, one-dim rows [1, 1], pitches [60, 72]:
    // position 0 sees (0,1) with r=0.5 -> 0.5; position 1 sees (1,0) with
    // r=2 -> 1; mean = 0.75.
    let mut g: Graph<f64> = Graph::new();
    let repr = g.leaf(Array::new(vec![2, 1], vec![1.0, 1.0]));
    let l = pitch_metric_loss(&mut g, repr, &[60, 72], &[true, true], 1).unwrap();
    assert!((scalar_of(&g, l) - 0.75).abs() < 1e-12);
}

#[test]
fn pitch_metric_is_reverse_invariant_and_homogeneous() {
    let pitches: Vec<u8> = vec![55, 60, 59, 70];
    let data: Vec<f64> = (0..8).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();

    let run = |rows: Vec<f64>, ids: Vec<u8>| {
        let mut g: Graph<f64> = Graph::new();
        let repr = g.leaf(Array::new(vec![4, 2], rows));
        let l = pitch_metric_loss(&mut g, repr, &ids, &[true; 4], 2).unwrap();
        scalar_of(&g, l)
    };

    let forward = run(data.clone(), pitches.clone());
    let mut rev_rows = Vec::new();
    for r in (0..4).rev() {
        rev_rows.extend_from_slice(&data[r * 2..(r + 1) * 2]);
    }
    let reversed = run(rev_rows, pitches.iter().rev().copied().collect());
    assert!((forward - reversed).abs() < 1e-12);

    let scaled = run(data.iter().map(|v| v * 3.5).collect(), pitches);
    assert!((scaled - 3.5 * forward).abs() < 1e-12);
}

#[test]
fn pitch_metric_skips_padding() {
    // Same loss whether the padding rows exist or not.
    let mut g: Graph<f64> = Graph::new();
    let repr = g.leaf(Array::new(vec![2, 1], vec![1.0, 1.0]));
    let bare = pitch_metric_loss(&mut g, repr, &[60, 72], &[true, true], 1).unwrap();

    let padded = g.leaf(Array::new(vec![4, 1], vec![1.0, 1.0, 9.0, 9.0]));
    let l = pitch_metric_loss(&mut g, padded, &[60, 72, 0, 0], &[true, true, false, false], 1).unwrap();
    assert_eq!(scalar_of(&g, bare), scalar_of(&g, l));
}

#[test]
fn class_weight_fixtures() {
    let t = ClassWeightTable::from_counts(&[10, 30, 60]).unwrap();
    assert_eq!(t.weight(0), 10.0);
    assert!((t.weight(1) - 10.0 / 3.0).abs() < 1e-12);
    assert!((t.weight(2) - 5.0 / 3.0).abs() < 1e-12);

    let t = ClassWeightTable::from_counts(&[50, 50]).unwrap();
    assert_eq!(t.weights(), &[2.0, 2.0]);

    let t = ClassWeightTable::from_counts(&[5, 0, 5]).unwrap();
    assert_eq!(t.weight(1), 0.0);

    assert!(ClassWeightTable::from_counts(&[0, 0]).is_err());
}

fn one_hot_table(class: usize, weight: f64) -> ClassWeightTable {
    // Picks counts so that O / O_class equals `weight` exactly.
    let mut counts = vec![0u64; 84];
    let per = 10u64;
    counts[class] = per;
    let total_needed = (weight * per as f64).round() as u64;
    if total_needed > per {
        let other = if class == 0 { 1 } else { 0 };
        counts[other] = total_needed - per;
    }
    ClassWeightTable::from_counts(&counts).unwrap()
}

#[test]
fn classifier_loss_uniform_logits() {
    // Uniform logits, true-class weight 1 -> -log(1/84) = ln 84.
    let mut g: Graph<f64> = Graph::new();
    let logits = g.leaf(Array::zeros(&[1, 84]));
    let table = one_hot_table(51, 1.0); // pitch id 52
    let l = pitch_classifier_loss(&mut g, logits, &[52], &table, &[true]).unwrap();
    assert!((scalar_of(&g, l) - 84.0f64.ln()).abs() < 1e-9, "{}", scalar_of(&g, l));
    assert!((scalar_of(&g, l) - 4.4308).abs() < 1e-4);

    // Doubling the class weight doubles the loss.
    let table2 = one_hot_table(51, 2.0);
    let l2 = pitch_classifier_loss(&mut g, logits, &[52], &table2, &[true]).unwrap();
    assert!((scalar_of(&g, l2) - 2.0 * 84.0f64.ln()).abs() < 1e-9);
    assert!((scalar_of(&g, l2) - 8.8617).abs() < 1e-4);
}

#[test]
fn classifier_loss_saturated_correct_logit_is_near_zero() {
    let mut g: Graph<f64> = Graph::new();
    let mut a = Array::zeros(&[1, 84]);
    a.data_mut()[51] = 30.0;
    let logits = g.leaf(a);
    let table = one_hot_table(51, 1.0);
    let l = pitch_classifier_loss(&mut g, logits, &[52], &table, &[true]).unwrap();
    assert!(scalar_of(&g, l) < 1e-10);
}

#[test]
fn classifier_rejects_out_of_class_ids() {
    let mut g: Graph<f64> = Graph::new();
    let logits = g.leaf(Array::zeros(&[1, 84]));
    let table = one_hot_table(51, 1.0);
    assert!(pitch_classifier_loss(&mut g, logits, &[85], &table, &[true]).is_err());
    assert!(pitch_classifier_loss(&mut g, logits, &[0], &table, &[true]).is_err());
}

#[test]
fn classifier_zero_weight_class_contributes_nothing() {
    let mut g: Graph<f64> = Graph::new();
    let logits = g.leaf(Array::new(vec![2, 84], vec![0.3; 168]));
    // Only class 51 (id 52) has mass; id 60 has weight 0.
    let table = one_hot_table(51, 1.0);
    let l = pitch_classifier_loss(&mut g, logits, &[52, 60], &table, &[true, true]).unwrap();
    // Position with id 60 contributes 0 but still counts in the mean.
    assert!((scalar_of(&g, l) - 84.0f64.ln() / 2.0).abs() < 1e-9);
}

#[test]
fn classifier_gradient_sums_to_zero_per_position() {
    let mut g: Graph<f64> = Graph::new();
    let data: Vec<f64> = (0..84).map(|i| (i as f64 * 0.17).sin()).collect();
    let logits = g.leaf(Array::new(vec![1, 84], data));
    let table = one_hot_table(51, 1.0);
    let l = pitch_classifier_loss(&mut g, logits, &[52], &table, &[true]).unwrap();
    g.backward(l).unwrap();
    let grad_sum: f64 = g.grad(logits).unwrap().data().iter().sum();
    assert!(grad_sum.abs() < 1e-12, "{grad_sum}");
}

#[test]
fn total_loss_arithmetic() {
    let mut g: Graph<f64> = Graph::new();
    let mel = g.leaf(Array::scalar(1.0));
    let dur = g.leaf(Array::scalar(0.5));
    let pm = g.leaf(Array::scalar(0.2));
    let pc = g.leaf(Array::scalar(0.1));
    let w = LossWeights::new(1.0, 0.5).unwrap();
    let l = total_loss(&mut g, mel, dur, Some(pm), Some(pc), &w).unwrap();
    assert!((scalar_of(&g, l) - 1.75).abs() < 1e-12);

    let w0 = LossWeights::new(0.0, 0.0).unwrap();
    let l = total_loss(&mut g, mel, dur, Some(pm), Some(pc), &w0).unwrap();
    assert!((scalar_of(&g, l) - 1.5).abs() < 1e-12);

    let nan = g.leaf(Array::scalar(f64::NAN));
    assert!(matches!(
        total_loss(&mut g, nan, dur, None, None, &w0),
        Err(crate::Error::Divergence(_))
    ));
}

#[test]
fn ablation_weight_presets_match_reported_values() {
    for (l1, l2) in [(1.0, 0.0), (0.0, 0.5), (1.1, 0.2)] {
        let w = LossWeights::new(l1, l2).unwrap();
        assert_eq!((w.lambda1, w.lambda2), (l1, l2));
    }
}

#[test]
fn losses_pass_grad_check() {
    let n = 3;
    let d = 4;
    let mask = vec![true; n];

    let err = grad_check(
        &|g, ts| {
            let target = g.constant(Array::new(vec![n, d], vec![0.9; n * d]));
            mel_l1(g, ts[0], target, &mask)
        },
        &[Array::new(vec![n, d], (0..n * d).map(|i| 0.1 * i as f64 - 0.8).collect())],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < GRAD_TOL, "mel_l1 {err}");

    let err = grad_check(
        &|g, ts| duration_l2(g, ts[0], &[3.0, 7.0, 2.0], &mask),
        &[Array::new(vec![n], vec![0.4, 1.9, 0.2])],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < GRAD_TOL, "duration_l2 {err}");

    let err = grad_check(
        &|g, ts| pitch_metric_loss(g, ts[0], &[60, 64, 59], &mask, 2),
        &[Array::new(vec![n, d], (0..n * d).map(|i| 0.3 + 0.2 * i as f64).collect())],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < GRAD_TOL, "pitch_metric {err}");

    let table = ClassWeightTable::from_counts(&(1..=84u64).collect::<Vec<_>>()).unwrap();
    let err = grad_check(
        &|g, ts| pitch_classifier_loss(g, ts[0], &[52, 70, 84], &table, &mask),
        &[Array::new(vec![n, 84], (0..n * 84).map(|i| ((i * 13) % 7) as f64 * 0.3).collect())],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < GRAD_TOL, "pitch_classifier {err}");
}
