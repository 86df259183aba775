#![allow(dead_code)]

use quasitrack_core::contrastive::{BatchEmbeddings, Polarity, RegionSample, SampleBatch};
use quasitrack_core::{BoundingBox, Embedding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_embedding(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Embedding {
    Embedding::new((0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Random batch with a few identities; roughly a third of samples negative.
pub fn random_batch(rng: &mut ChaCha8Rng, keys: usize, refs: usize, identities: u64) -> SampleBatch {
    let bbox = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let mut draw = |n: usize| -> Vec<RegionSample> {
        (0..n)
            .map(|_| {
                if rng.random_bool(0.66) {
                    RegionSample {
                        bbox,
                        identity: Some(rng.random_range(0..identities)),
                        polarity: Polarity::Positive,
                        max_iou: 0.9,
                    }
                } else {
                    RegionSample { bbox, identity: None, polarity: Polarity::Negative, max_iou: 0.1 }
                }
            })
            .collect()
    };
    let mut key = draw(keys);
    let reference = draw(refs);
    // guarantee at least one positive pair
    if let Some(r) = reference.iter().find(|r| r.polarity == Polarity::Positive) {
        key[0] = r.clone();
    } else {
        let mut reference = reference;
        reference[0] = RegionSample { bbox, identity: Some(0), polarity: Polarity::Positive, max_iou: 0.9 };
        key[0] = reference[0].clone();
        return SampleBatch::from_samples(key, reference, (0..keys).collect(), (0..refs).collect());
    }
    SampleBatch::from_samples(key, reference, (0..keys).collect(), (0..refs).collect())
}

pub fn random_embeddings(rng: &mut ChaCha8Rng, batch: &SampleBatch, dim: usize) -> BatchEmbeddings {
    let scale = 1.0 / (dim as f64).sqrt() * 2.0;
    BatchEmbeddings {
        key: (0..batch.key.len()).map(|_| gaussian_embedding(rng, dim, scale)).collect(),
        reference: (0..batch.reference.len()).map(|_| gaussian_embedding(rng, dim, scale)).collect(),
    }
}
