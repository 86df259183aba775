//! Analytic-vs-numeric gradient comparison on random batches.

use quasitrack_core::contrastive::{
    gradient_check, loss_total, BatchEmbeddings, LossConfig, LossVariant, Polarity, RegionSample, SampleBatch,
};
use quasitrack_core::{BoundingBox, Embedding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
pub const FINITE_DIFFERENCE_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    /// Embedding dimensions, cycled over the runs.
    pub dims: Vec<usize>,
    pub keys: usize,
    pub refs: usize,
    pub identities: u64,
    pub runs: usize,
    pub seed: u64,
    pub embed_weight: f64,
    pub aux_weight: f64,
    /// Perturbs one analytic component; the check must then fail.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            dims: vec![4, 16, 64],
            keys: 8,
            refs: 8,
            identities: 3,
            runs: 50,
            seed: 0,
            embed_weight: 0.25,
            aux_weight: 1.0,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRun {
    pub seed: u64,
    pub dim: usize,
    pub variant: LossVariant,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub runs: Vec<GradcheckRun>,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOLERANCE
    }
}

/// About two thirds of the samples are positives over a few identities; at
/// least one positive pair is guaranteed.
pub fn random_batch(rng: &mut ChaCha8Rng, keys: usize, refs: usize, identities: u64) -> SampleBatch {
    let bbox = BoundingBox::new(0.0, 0.0, 1.0, 1.0).expect("unit box");
    let positive = |id| RegionSample { bbox, identity: Some(id), polarity: Polarity::Positive, max_iou: 0.9 };
    let negative = RegionSample { bbox, identity: None, polarity: Polarity::Negative, max_iou: 0.1 };
    let mut draw = |n: usize| -> Vec<RegionSample> {
        (0..n)
            .map(|_| if rng.random_bool(0.66) { positive(rng.random_range(0..identities.max(1))) } else { negative.clone() })
            .collect()
    };
    let mut key = draw(keys.max(1));
    let mut reference = draw(refs.max(1));
    match reference.iter().find(|r| r.polarity == Polarity::Positive) {
        Some(r) => key[0] = r.clone(),
        None => {
            reference[0] = positive(0);
            key[0] = positive(0);
        }
    }
    let (k, r) = (key.len(), reference.len());
    SampleBatch::from_samples(key, reference, (0..k).collect(), (0..r).collect())
}

pub fn random_embeddings(rng: &mut ChaCha8Rng, batch: &SampleBatch, dim: usize) -> BatchEmbeddings {
    let scale = 2.0 / (dim as f64).sqrt();
    let mut draw = |n: usize| -> Vec<Embedding> {
        (0..n)
            .map(|_| Embedding::new((0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).expect("finite"))
            .collect()
    };
    let key = draw(batch.key.len());
    let reference = draw(batch.reference.len());
    BatchEmbeddings { key, reference }
}

pub fn run(opts: &GradcheckOptions) -> quasitrack_core::Result<GradcheckReport> {
    let variants = [LossVariant::SinglePositive, LossVariant::NaiveMulti, LossVariant::AccumulatedMulti];
    let mut runs = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..opts.runs {
        let seed = opts.seed.wrapping_add(i as u64);
        let dim = opts.dims[i % opts.dims.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = random_batch(&mut rng, opts.keys, opts.refs, opts.identities);
        let emb = random_embeddings(&mut rng, &batch, dim);
        for variant in variants {
            let cfg = LossConfig { variant, embed_weight: opts.embed_weight, aux_weight: opts.aux_weight, ..LossConfig::default() };
            let (_, mut grad) = loss_total(&batch, &emb, &cfg)?;
            if opts.corrupt {
                grad.key[0][0] += 1e-2;
            }
            let r = gradient_check(&batch, &emb, &cfg, &grad, FINITE_DIFFERENCE_STEP)?;
            worst = worst.max(r.max_rel_err);
            runs.push(GradcheckRun { seed, dim, variant, max_rel_err: r.max_rel_err });
        }
    }
    Ok(GradcheckReport { runs, max_rel_err: worst })
}
