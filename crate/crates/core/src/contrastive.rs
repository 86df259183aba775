//! Quasi-dense contrastive supervision.
//!
//! Region proposals on a key frame and a reference frame are assigned to
//! ground-truth identities by IoU, subsampled, and every key sample is
//! contrasted against every reference sample. The objective combines a
//! multi-positive log-sum-exp term on raw dot products with an auxiliary
//! squared cosine term, and every loss here comes with its exact gradient
//! with respect to the embeddings.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::similarity::{dot, Embedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Polarity {
    Positive,
    Negative,
    Ignored,
}

/// A region proposal after assignment to ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSample {
    pub bbox: BoundingBox,
    /// Ground-truth identity; present exactly for positive samples.
    pub identity: Option<u64>,
    pub polarity: Polarity,
    /// IoU with the best-overlapping ground truth (0 without ground truth).
    pub max_iou: f64,
}

/// Assigns each region to its best-overlapping ground truth.
///
/// Positive when `max_iou > pos_iou`, negative when `max_iou < neg_iou`,
/// ignored otherwise. Ties in IoU go to the lower ground-truth index.
pub fn assign_samples(
    regions: &[BoundingBox],
    gts: &[(BoundingBox, u64)],
    pos_iou: f64,
    neg_iou: f64,
) -> Vec<RegionSample> {
    debug_assert!(neg_iou <= pos_iou);
    regions
        .iter()
        .map(|r| {
            let mut best: Option<(f64, u64)> = None;
            for (g, id) in gts {
                let o = iou(r, g);
                if best.is_none_or(|(b, _)| o > b) {
                    best = Some((o, *id));
                }
            }
            let (max_iou, id) = best.unwrap_or((0.0, 0));
            let polarity = if max_iou > pos_iou && best.is_some() {
                Polarity::Positive
            } else if max_iou < neg_iou {
                Polarity::Negative
            } else {
                Polarity::Ignored
            };
            RegionSample {
                bbox: *r,
                identity: (polarity == Polarity::Positive).then_some(id),
                polarity,
                max_iou,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplerConfig {
    /// Samples drawn from the key frame.
    pub key_size: usize,
    /// Samples drawn from the reference frame.
    pub ref_size: usize,
    /// Positive-to-negative ratio targeted on both frames.
    pub pos_neg_ratio: f64,
    /// Upper IoU bound of negatives; the balanced bins cover `[0, neg_iou)`.
    pub neg_iou: f64,
    /// Number of equal-width IoU bins for negative sampling.
    pub iou_bins: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            key_size: 128,
            ref_size: 256,
            pos_neg_ratio: 1.0,
            neg_iou: 0.3,
            iou_bins: 3,
        }
    }
}

/// Sampled key and reference regions with their pairwise positivity.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub key: Vec<RegionSample>,
    pub reference: Vec<RegionSample>,
    /// Index of each key sample in the caller's key region list.
    pub key_source: Vec<usize>,
    /// Index of each reference sample in the caller's reference region list.
    pub ref_source: Vec<usize>,
    positivity: Vec<bool>,
}

impl SampleBatch {
    /// Builds a batch from already-selected samples. Positivity is derived:
    /// a pair is positive iff both samples are positive with equal identity.
    pub fn from_samples(
        key: Vec<RegionSample>,
        reference: Vec<RegionSample>,
        key_source: Vec<usize>,
        ref_source: Vec<usize>,
    ) -> Self {
        let mut positivity = Vec::with_capacity(key.len() * reference.len());
        for k in &key {
            for r in &reference {
                positivity.push(
                    k.polarity == Polarity::Positive
                        && r.polarity == Polarity::Positive
                        && k.identity.is_some()
                        && k.identity == r.identity,
                );
            }
        }
        Self { key, reference, key_source, ref_source, positivity }
    }

    pub fn is_positive(&self, key: usize, reference: usize) -> bool {
        self.positivity[key * self.reference.len() + reference]
    }

    pub fn positive_pairs(&self) -> usize {
        self.positivity.iter().filter(|&&p| p).count()
    }
}

fn draw_positives(pool: &[usize], quota: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool = pool.to_vec();
    pool.shuffle(rng);
    pool.truncate(quota);
    pool.sort_unstable();
    pool
}

/// IoU-balanced draw: negatives are bucketed into equal-width IoU bins over
/// `[0, neg_iou)` and drawn round-robin across the non-empty bins.
fn draw_negatives(
    samples: &[RegionSample],
    pool: &[usize],
    quota: usize,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let bins_n = cfg.iou_bins.max(1);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); bins_n];
    for &i in pool {
        let frac = if cfg.neg_iou > 0.0 { samples[i].max_iou / cfg.neg_iou } else { 0.0 };
        let b = ((frac * bins_n as f64) as usize).min(bins_n - 1);
        bins[b].push(i);
    }
    for b in &mut bins {
        b.shuffle(rng);
    }
    let mut cursors = vec![0usize; bins_n];
    let mut out = Vec::with_capacity(quota.min(pool.len()));
    while out.len() < quota {
        let mut progressed = false;
        for (b, bin) in bins.iter().enumerate() {
            if out.len() == quota {
                break;
            }
            if cursors[b] < bin.len() {
                out.push(bin[cursors[b]]);
                cursors[b] += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    out.sort_unstable();
    out
}

fn sample_frame(
    samples: &[RegionSample],
    size: usize,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let pos: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].polarity == Polarity::Positive)
        .collect();
    let neg: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].polarity == Polarity::Negative)
        .collect();
    let ratio = cfg.pos_neg_ratio.max(0.0);
    let pos_quota = libm::round(size as f64 * ratio / (1.0 + ratio)) as usize;
    let mut chosen = draw_positives(&pos, pos_quota, rng);
    let neg_quota = size - chosen.len();
    chosen.extend(draw_negatives(samples, &neg, neg_quota, cfg, rng));
    chosen
}

/// Draws `key_size` key samples and `ref_size` reference samples.
///
/// Positives are subsampled uniformly; negatives fill the remainder with
/// IoU-balanced sampling. Frames with too few samples are partially filled.
/// Deterministic for a fixed seed.
pub fn sample_batch(
    key_samples: &[RegionSample],
    ref_samples: &[RegionSample],
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SampleBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key_idx = sample_frame(key_samples, cfg.key_size, cfg, &mut rng);
    let ref_idx = sample_frame(ref_samples, cfg.ref_size, cfg, &mut rng);
    let batch = SampleBatch::from_samples(
        key_idx.iter().map(|&i| key_samples[i].clone()).collect(),
        ref_idx.iter().map(|&i| ref_samples[i].clone()).collect(),
        key_idx,
        ref_idx,
    );
    if batch.positive_pairs() == 0 {
        return Err(Error::NoPositivePairs);
    }
    Ok(batch)
}

/// Which embedding objective to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LossVariant {
    /// Softmax cross-entropy with one positive; keys with several positives
    /// average the single-positive loss over them.
    SinglePositive,
    /// Sum of single-positive losses over all positives.
    NaiveMulti,
    /// `log(1 + sum_{k+} sum_{k-} exp(v.k- - v.k+))`.
    AccumulatedMulti,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossConfig {
    /// Weight of the embedding term.
    pub embed_weight: f64,
    /// Weight of the auxiliary cosine term.
    pub aux_weight: f64,
    /// Hard negatives per positive pair in the auxiliary term.
    pub aux_neg_ratio: usize,
    pub variant: LossVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            embed_weight: 0.25,
            aux_weight: 1.0,
            aux_neg_ratio: 3,
            variant: LossVariant::AccumulatedMulti,
        }
    }
}

/// Key and reference embeddings, aligned with a [`SampleBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEmbeddings {
    pub key: Vec<Embedding>,
    pub reference: Vec<Embedding>,
}

/// Gradient of a scalar loss with respect to every embedding component.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGradient {
    pub key: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
}

impl EmbeddingGradient {
    fn zeros_like(emb: &BatchEmbeddings) -> Self {
        Self {
            key: emb.key.iter().map(|e| vec![0.0; e.dim()]).collect(),
            reference: emb.reference.iter().map(|e| vec![0.0; e.dim()]).collect(),
        }
    }

    fn add_scaled(&mut self, other: &EmbeddingGradient, scale: f64) {
        let pairs = self.key.iter_mut().zip(&other.key).chain(self.reference.iter_mut().zip(&other.reference));
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.key
            .iter()
            .chain(&self.reference)
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + libm::log(xs.map(|x| libm::exp(x - max)).sum::<f64>())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Single-positive loss as softmax cross-entropy:
/// `-log(exp(p) / (exp(p) + sum exp(n)))`.
pub fn single_positive_softmax_form(pos: f64, negs: &[f64]) -> f64 {
    log_sum_exp(core::iter::once(pos).chain(negs.iter().copied())) - pos
}

/// Single-positive loss in log-sum form: `log(1 + sum exp(n - p))`.
pub fn single_positive_logsum_form(pos: f64, negs: &[f64]) -> f64 {
    if negs.is_empty() {
        return 0.0;
    }
    libm::log1p(negs.iter().map(|n| libm::exp(n - pos)).sum::<f64>())
}

/// Accumulated multi-positive loss `log(1 + sum_p sum_n exp(n - p))`.
pub fn accumulated_multi_positive(pos: &[f64], negs: &[f64]) -> f64 {
    if pos.is_empty() || negs.is_empty() {
        return 0.0;
    }
    softplus(log_sum_exp(negs.iter().copied()) + log_sum_exp(pos.iter().map(|p| -p)))
}

/// Per-key loss and its derivative with respect to each logit.
/// `positive` flags which entries of `logits` are positive targets.
fn key_loss(variant: LossVariant, logits: &[f64], positive: &[bool], dlogit: &mut [f64]) -> f64 {
    let pos_count = positive.iter().filter(|&&p| p).count();
    let neg_count = positive.len() - pos_count;
    dlogit.iter_mut().for_each(|g| *g = 0.0);
    if pos_count == 0 || neg_count == 0 {
        return 0.0;
    }
    let negs = || logits.iter().zip(positive).filter(|(_, &p)| !p).map(|(&l, _)| l);
    let lse_neg = log_sum_exp(negs());
    match variant {
        LossVariant::AccumulatedMulti => {
            let lse_pos = log_sum_exp(logits.iter().zip(positive).filter(|(_, &p)| p).map(|(&l, _)| -l));
            let a = lse_neg + lse_pos;
            let s = sigmoid(a);
            for ((g, &l), &p) in dlogit.iter_mut().zip(logits).zip(positive) {
                *g = if p { -s * libm::exp(-l - lse_pos) } else { s * libm::exp(l - lse_neg) };
            }
            softplus(a)
        }
        LossVariant::SinglePositive | LossVariant::NaiveMulti => {
            let scale = if variant == LossVariant::SinglePositive { 1.0 / pos_count as f64 } else { 1.0 };
            let mut total = 0.0;
            let mut neg_weight = 0.0;
            for ((g, &l), &p) in dlogit.iter_mut().zip(logits).zip(positive) {
                if p {
                    let z = lse_neg - l;
                    total += softplus(z);
                    let s = sigmoid(z);
                    *g = -scale * s;
                    neg_weight += s;
                }
            }
            for ((g, &l), &p) in dlogit.iter_mut().zip(logits).zip(positive) {
                if !p {
                    *g = scale * neg_weight * libm::exp(l - lse_neg);
                }
            }
            scale * total
        }
    }
}

fn check_batch_dims(batch: &SampleBatch, emb: &BatchEmbeddings) -> Result<usize> {
    if emb.key.len() != batch.key.len() {
        return Err(Error::DimensionMismatch { expected: batch.key.len(), found: emb.key.len() });
    }
    if emb.reference.len() != batch.reference.len() {
        return Err(Error::DimensionMismatch { expected: batch.reference.len(), found: emb.reference.len() });
    }
    let dim = emb.key.first().or(emb.reference.first()).map_or(0, Embedding::dim);
    for e in emb.key.iter().chain(&emb.reference) {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: e.dim() });
        }
    }
    Ok(dim)
}

/// Embedding loss and gradient: the mean per-key loss over keys that have
/// at least one positive reference. Keys without positives are skipped;
/// references without a positive key act as negatives.
pub fn loss_embed_with_grad(
    batch: &SampleBatch,
    emb: &BatchEmbeddings,
    variant: LossVariant,
) -> Result<(f64, EmbeddingGradient)> {
    check_batch_dims(batch, emb)?;
    let nref = batch.reference.len();
    let mut grad = EmbeddingGradient::zeros_like(emb);
    let mut logits = vec![0.0; nref];
    let mut positive = vec![false; nref];
    let mut dlogit = vec![0.0; nref];
    let mut total = 0.0;
    let mut contributing = 0usize;
    let mut per_key: Vec<(usize, Vec<f64>)> = Vec::new();

    for i in 0..batch.key.len() {
        for j in 0..nref {
            positive[j] = batch.is_positive(i, j);
        }
        if !positive.iter().any(|&p| p) {
            continue;
        }
        for j in 0..nref {
            logits[j] = emb.key[i].dot(&emb.reference[j]);
        }
        total += key_loss(variant, &logits, &positive, &mut dlogit);
        contributing += 1;
        per_key.push((i, dlogit.clone()));
    }
    if contributing == 0 {
        return Err(Error::NoPositivePairs);
    }
    let inv = 1.0 / contributing as f64;
    for (i, dl) in per_key {
        for (j, &g) in dl.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let g = g * inv;
            let v = emb.key[i].as_slice();
            let k = emb.reference[j].as_slice();
            for (d, &kk) in grad.key[i].iter_mut().zip(k) {
                *d += g * kk;
            }
            for (d, &vv) in grad.reference[j].iter_mut().zip(v) {
                *d += g * vv;
            }
        }
    }
    Ok((total * inv, grad))
}

/// Embedding loss value only.
pub fn loss_embed(batch: &SampleBatch, emb: &BatchEmbeddings, variant: LossVariant) -> Result<f64> {
    loss_embed_with_grad(batch, emb, variant).map(|(l, _)| l)
}

/// Pairs used by the auxiliary loss: every positive pair plus the
/// `neg_ratio * positives` negative pairs with the highest cosine.
/// Returned as `(key, reference, cosine, target)`.
fn aux_pairs(
    batch: &SampleBatch,
    emb: &BatchEmbeddings,
    neg_ratio: usize,
) -> Result<Vec<(usize, usize, f64, f64)>> {
    let norms = |side: &'static str, es: &[Embedding]| -> Result<Vec<f64>> {
        es.iter()
            .enumerate()
            .map(|(index, e)| {
                let n = e.norm();
                if n > 0.0 {
                    Ok(n)
                } else {
                    Err(Error::ZeroNorm { side, index })
                }
            })
            .collect()
    };
    let kn = norms("key", &emb.key)?;
    let rn = norms("reference", &emb.reference)?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..batch.key.len() {
        for j in 0..batch.reference.len() {
            let c = emb.key[i].dot(&emb.reference[j]) / (kn[i] * rn[j]);
            if batch.is_positive(i, j) {
                pos.push((i, j, c, 1.0));
            } else {
                neg.push((i, j, c, 0.0));
            }
        }
    }
    if pos.is_empty() {
        return Err(Error::NoPositivePairs);
    }
    neg.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    neg.truncate(neg_ratio * pos.len());
    pos.extend(neg);
    Ok(pos)
}

/// Auxiliary loss and gradient: mean of `(cos(v, k) - c)^2` over the
/// selected pairs, `c = 1` for positives and `0` for hard negatives.
pub fn loss_aux_with_grad(
    batch: &SampleBatch,
    emb: &BatchEmbeddings,
    neg_ratio: usize,
) -> Result<(f64, EmbeddingGradient)> {
    check_batch_dims(batch, emb)?;
    let pairs = aux_pairs(batch, emb, neg_ratio)?;
    let mut grad = EmbeddingGradient::zeros_like(emb);
    let inv = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for &(i, j, c, target) in &pairs {
        let r = c - target;
        total += r * r;
        let g = 2.0 * r * inv;
        let v = emb.key[i].as_slice();
        let k = emb.reference[j].as_slice();
        let vn2 = dot(v, v);
        let kn2 = dot(k, k);
        let vk = libm::sqrt(vn2 * kn2);
        // d cos / dv = k / (|v||k|) - cos v / |v|^2
        for (d, (&vv, &kk)) in grad.key[i].iter_mut().zip(v.iter().zip(k)) {
            *d += g * (kk / vk - c * vv / vn2);
        }
        for (d, (&vv, &kk)) in grad.reference[j].iter_mut().zip(v.iter().zip(k)) {
            *d += g * (vv / vk - c * kk / kn2);
        }
    }
    Ok((total * inv, grad))
}

/// Auxiliary loss value only.
pub fn loss_aux(batch: &SampleBatch, emb: &BatchEmbeddings, neg_ratio: usize) -> Result<f64> {
    loss_aux_with_grad(batch, emb, neg_ratio).map(|(l, _)| l)
}

/// `embed_weight * L_embed + aux_weight * L_aux` with its exact gradient.
pub fn loss_total(
    batch: &SampleBatch,
    emb: &BatchEmbeddings,
    cfg: &LossConfig,
) -> Result<(f64, EmbeddingGradient)> {
    check_batch_dims(batch, emb)?;
    let mut grad = EmbeddingGradient::zeros_like(emb);
    let mut total = 0.0;
    if cfg.embed_weight != 0.0 {
        let (l, g) = loss_embed_with_grad(batch, emb, cfg.variant)?;
        total += cfg.embed_weight * l;
        grad.add_scaled(&g, cfg.embed_weight);
    }
    if cfg.aux_weight != 0.0 {
        let (l, g) = loss_aux_with_grad(batch, emb, cfg.aux_neg_ratio)?;
        total += cfg.aux_weight * l;
        grad.add_scaled(&g, cfg.aux_weight);
    }
    Ok((total, grad))
}

/// Lower bound on the denominator of the elementwise relative error used by
/// [`gradient_check`]; components smaller than this are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub components: usize,
}

/// Elementwise relative error `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
    (analytic - numeric).abs() / denom
}

fn component_mut(emb: &mut BatchEmbeddings, is_key: bool, sample: usize, dim: usize) -> &mut f64 {
    let e = if is_key { &mut emb.key[sample] } else { &mut emb.reference[sample] };
    &mut e.as_mut_slice()[dim]
}

/// Compares `analytic` against central finite differences of
/// [`loss_total`] with step `h`.
pub fn gradient_check(
    batch: &SampleBatch,
    emb: &BatchEmbeddings,
    cfg: &LossConfig,
    analytic: &EmbeddingGradient,
    h: f64,
) -> Result<GradCheck> {
    let mut probe = emb.clone();
    let mut report = GradCheck { max_rel_err: 0.0, max_abs_err: 0.0, components: 0 };
    let sides = [(true, emb.key.len()), (false, emb.reference.len())];
    for (is_key, count) in sides {
        for s in 0..count {
            let dim = if is_key { emb.key[s].dim() } else { emb.reference[s].dim() };
            for d in 0..dim {
                let orig = *component_mut(&mut probe, is_key, s, d);
                *component_mut(&mut probe, is_key, s, d) = orig + h;
                let plus = loss_total(batch, &probe, cfg)?.0;
                *component_mut(&mut probe, is_key, s, d) = orig - h;
                let minus = loss_total(batch, &probe, cfg)?.0;
                *component_mut(&mut probe, is_key, s, d) = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = if is_key { analytic.key[s][d] } else { analytic.reference[s][d] };
                report.max_rel_err = report.max_rel_err.max(relative_error(a, numeric));
                report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
                report.components += 1;
            }
        }
    }
    Ok(report)
}

/// A linear embedding head `e = W x` mapping region features to embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    input_dim: usize,
    output_dim: usize,
    weights: Vec<f64>,
}

impl LinearHead {
    /// Gaussian initialization with standard deviation `1 / sqrt(input_dim)`.
    pub fn random(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / libm::sqrt(input_dim.max(1) as f64);
        let weights = (0..input_dim * output_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        Self { input_dim, output_dim, weights }
    }

    pub fn from_weights(input_dim: usize, output_dim: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), input_dim * output_dim);
        Self { input_dim, output_dim, weights }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn embed(&self, features: &[f64]) -> Result<Embedding> {
        if features.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, found: features.len() });
        }
        let out = self
            .weights
            .chunks_exact(self.input_dim.max(1))
            .take(self.output_dim)
            .map(|row| dot(row, features))
            .collect();
        Embedding::new(out)
    }
}

/// A sampled frame pair together with the raw features of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub batch: SampleBatch,
    pub key_features: Vec<Vec<f64>>,
    pub ref_features: Vec<Vec<f64>>,
}

impl TrainingPair {
    pub fn embed(&self, head: &LinearHead) -> Result<BatchEmbeddings> {
        Ok(BatchEmbeddings {
            key: self.key_features.iter().map(|x| head.embed(x)).collect::<Result<_>>()?,
            reference: self.ref_features.iter().map(|x| head.embed(x)).collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub steps: usize,
    pub learning_rate: f64,
    pub output_dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub head: LinearHead,
    /// `(step, loss)` evaluated before each update.
    pub trace: Vec<(usize, f64)>,
}

/// Loss above which optimization is considered divergent.
pub const DIVERGENCE_LOSS: f64 = 1e9;

/// Plain gradient descent on [`loss_total`].
///
/// The parameters are a [`LinearHead`] shared by all samples; the gradient
/// with respect to the head is the embedding gradient chained through
/// `e = W x`. Pairs are visited cyclically, one per step.
pub fn optimize_embeddings(
    pairs: &[TrainingPair],
    cfg: &LossConfig,
    opts: &OptimizeOptions,
) -> Result<OptimizeOutcome> {
    let input_dim = pairs
        .iter()
        .flat_map(|p| p.key_features.iter().chain(&p.ref_features))
        .map(Vec::len)
        .next()
        .ok_or(Error::NoPositivePairs)?;
    let mut head = LinearHead::random(input_dim, opts.output_dim, opts.seed);
    let mut trace = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let pair = &pairs[step % pairs.len()];
        let emb = pair.embed(&head)?;
        let (loss, grad) = loss_total(&pair.batch, &emb, cfg)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged { step, loss });
        }
        trace.push((step, loss));
        let mut wgrad = vec![0.0; head.weights.len()];
        let samples = grad
            .key
            .iter()
            .zip(&pair.key_features)
            .chain(grad.reference.iter().zip(&pair.ref_features));
        for (g, x) in samples {
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = &mut wgrad[o * input_dim..(o + 1) * input_dim];
                for (w, &xi) in row.iter_mut().zip(x) {
                    *w += go * xi;
                }
            }
        }
        for (w, g) in head.weights.iter_mut().zip(&wgrad) {
            *w -= opts.learning_rate * g;
        }
        if head.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { step, loss: f64::NAN });
        }
    }
    Ok(OptimizeOutcome { head, trace })
}

/// Fraction of queries whose highest-dot-product gallery entry carries the
/// same identity. Ties go to the lower gallery index.
pub fn nearest_neighbor_accuracy(queries: &[(Embedding, u64)], gallery: &[(Embedding, u64)]) -> f64 {
    if queries.is_empty() || gallery.is_empty() {
        return 0.0;
    }
    let hits = queries
        .iter()
        .filter(|(q, id)| {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (j, (g, _)) in gallery.iter().enumerate() {
                let s = q.dot(g);
                if s > best.0 {
                    best = (s, j);
                }
            }
            gallery[best.1].1 == *id
        })
        .count();
    hits as f64 / queries.len() as f64
}
