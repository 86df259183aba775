mod common;

use proptest::prelude::*;
use quasitrack_core::contrastive::{
    accumulated_multi_positive, assign_samples, gradient_check, loss_embed, loss_total, single_positive_logsum_form,
    single_positive_softmax_form, BatchEmbeddings, LossConfig, LossVariant, Polarity, RegionSample, SampleBatch,
};
use quasitrack_core::{BoundingBox, Embedding};
use rand::Rng;
use rand_distr::StandardNormal;

const VARIANTS: [LossVariant; 3] = [LossVariant::SinglePositive, LossVariant::NaiveMulti, LossVariant::AccumulatedMulti];

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut worst: f64 = 0.0;
    for k in 0..50u64 {
        let dim = [4, 16, 64][k as usize % 3];
        let mut rng = common::rng(k);
        let batch = common::random_batch(&mut rng, 8, 8, 3);
        let emb = common::random_embeddings(&mut rng, &batch, dim);
        for variant in VARIANTS {
            let cfg = LossConfig { variant, ..LossConfig::default() };
            let (_, grad) = loss_total(&batch, &emb, &cfg).unwrap();
            let report = gradient_check(&batch, &emb, &cfg, &grad, 1e-5).unwrap();
            worst = worst.max(report.max_rel_err);
        }
    }
    assert!(worst < 1e-6, "max relative error {worst}");
}

#[test]
fn zero_weights_give_exact_zero_error() {
    let mut rng = common::rng(3);
    let batch = common::random_batch(&mut rng, 8, 8, 3);
    let emb = common::random_embeddings(&mut rng, &batch, 4);
    let cfg = LossConfig { embed_weight: 0.0, aux_weight: 0.0, ..LossConfig::default() };
    let (loss, grad) = loss_total(&batch, &emb, &cfg).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(gradient_check(&batch, &emb, &cfg, &grad, 1e-5).unwrap().max_rel_err, 0.0);
}

#[test]
fn corrupted_gradient_is_caught() {
    let mut rng = common::rng(4);
    let batch = common::random_batch(&mut rng, 8, 8, 3);
    let emb = common::random_embeddings(&mut rng, &batch, 4);
    let cfg = LossConfig::default();
    let (_, mut grad) = loss_total(&batch, &emb, &cfg).unwrap();
    grad.key[0][0] += 1e-2;
    assert!(gradient_check(&batch, &emb, &cfg, &grad, 1e-5).unwrap().max_rel_err > 1e-6);
}

#[test]
fn single_positive_forms_agree() {
    let mut rng = common::rng(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..20);
        let scale = rng.random_range(0.1..20.0);
        let pos: f64 = scale * rng.sample::<f64, _>(StandardNormal);
        let negs: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let a = single_positive_softmax_form(pos, &negs);
        let b = single_positive_logsum_form(pos, &negs);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        assert!((accumulated_multi_positive(&[pos], &negs) - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

fn rotate(emb: &BatchEmbeddings, q: &[Vec<f64>]) -> BatchEmbeddings {
    let apply = |e: &Embedding| {
        Embedding::new(q.iter().map(|row| row.iter().zip(e.as_slice()).map(|(a, b)| a * b).sum()).collect()).unwrap()
    };
    BatchEmbeddings { key: emb.key.iter().map(apply).collect(), reference: emb.reference.iter().map(apply).collect() }
}

// Orthogonal matrix by Gram-Schmidt on a gaussian matrix.
fn random_orthogonal(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &q {
            let p: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

fn region(identity: Option<u64>) -> RegionSample {
    let bbox = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    match identity {
        Some(id) => RegionSample { bbox, identity: Some(id), polarity: Polarity::Positive, max_iou: 1.0 },
        None => RegionSample { bbox, identity: None, polarity: Polarity::Negative, max_iou: 0.0 },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_invariant_to_shared_rotation(seed in 0u64..10_000, dim in 2usize..9) {
        let mut rng = common::rng(seed);
        let batch = common::random_batch(&mut rng, 6, 7, 3);
        let emb = common::random_embeddings(&mut rng, &batch, dim);
        let q = random_orthogonal(&mut rng, dim);
        let rotated = rotate(&emb, &q);
        for variant in VARIANTS {
            let a = loss_embed(&batch, &emb, variant).unwrap();
            let b = loss_embed(&batch, &rotated, variant).unwrap();
            prop_assert!((a - b).abs() < 1e-10, "{:?}: {} vs {}", variant, a, b);
        }
    }

    #[test]
    fn adding_a_negative_never_lowers_loss(seed in 0u64..10_000) {
        let mut rng = common::rng(seed);
        let batch = common::random_batch(&mut rng, 5, 6, 2);
        let emb = common::random_embeddings(&mut rng, &batch, 4);
        let mut reference = batch.reference.clone();
        reference.push(region(None));
        let mut ref_emb = emb.reference.clone();
        ref_emb.push(common::gaussian_embedding(&mut rng, 4, 1.0));
        let n = reference.len();
        let bigger = SampleBatch::from_samples(batch.key.clone(), reference, batch.key_source.clone(), (0..n).collect());
        let bigger_emb = BatchEmbeddings { key: emb.key.clone(), reference: ref_emb };
        for variant in VARIANTS {
            let a = loss_embed(&batch, &emb, variant).unwrap();
            let b = loss_embed(&bigger, &bigger_emb, variant).unwrap();
            prop_assert!(b >= a, "{:?}: {} -> {}", variant, a, b);
        }
    }

    #[test]
    fn duplicated_positive_raises_accumulated_loss(
        pos in prop::collection::vec(-5.0..5.0f64, 1..5),
        negs in prop::collection::vec(-5.0..5.0f64, 1..6),
        pick in any::<prop::sample::Index>(),
    ) {
        let mut more = pos.clone();
        more.push(pos[pick.index(pos.len())]);
        prop_assert!(accumulated_multi_positive(&more, &negs) > accumulated_multi_positive(&pos, &negs));
    }

    #[test]
    fn polarity_partition_is_exhaustive(
        regions in prop::collection::vec((0.0..50.0f64, 0.0..50.0f64, 1.0..20.0f64, 1.0..20.0f64), 1..20),
        gts in prop::collection::vec((0.0..50.0f64, 0.0..50.0f64, 1.0..20.0f64, 1.0..20.0f64), 0..5),
    ) {
        let r: Vec<BoundingBox> = regions.iter().map(|&(x, y, w, h)| BoundingBox::from_xywh(x, y, w, h).unwrap()).collect();
        let g: Vec<(BoundingBox, u64)> = gts.iter().enumerate().map(|(i, &(x, y, w, h))| (BoundingBox::from_xywh(x, y, w, h).unwrap(), i as u64)).collect();
        let out = assign_samples(&r, &g, 0.7, 0.3);
        prop_assert_eq!(out.len(), r.len());
        for s in &out {
            let expected = if s.max_iou > 0.7 {
                Polarity::Positive
            } else if s.max_iou < 0.3 {
                Polarity::Negative
            } else {
                Polarity::Ignored
            };
            prop_assert_eq!(s.polarity, expected);
            prop_assert_eq!(s.identity.is_some(), s.polarity == Polarity::Positive);
        }
    }
}

#[test]
fn region_helper_is_consistent() {
    let b = SampleBatch::from_samples(vec![region(Some(1))], vec![region(Some(1)), region(None)], vec![0], vec![0, 1]);
    assert!(b.is_positive(0, 0));
    assert!(!b.is_positive(0, 1));
}
