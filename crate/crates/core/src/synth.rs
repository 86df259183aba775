//! Deterministic synthetic worlds.
//!
//! Identities move inside an image according to a motion model; each one
//! carries a unit prototype on the sphere. Detections are ground-truth boxes
//! passed through a noise process (misses, jitter, clutter, class flips) and
//! embedded as `sqrt(temperature) * normalize(prototype + noise)`, so the dot
//! product of two clean embeddings of one identity equals the temperature.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::contrastive::{assign_samples, sample_batch, LinearHead, SamplerConfig, TrainingPair};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::metrics::{ObjectBox, TrackSet};
use crate::similarity::{dot, Embedding};
use crate::tracker::{Detection, TrackHistory};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum Motion {
    Static,
    /// Constant velocity of `speed` pixels per frame in a random direction,
    /// reflected at the image border.
    Linear { speed: f64 },
    /// Gaussian steps with standard deviation `sigma` pixels.
    RandomWalk { sigma: f64 },
}

/// An identity hidden from `start` to `end` (inclusive).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Occlusion {
    pub identity: u64,
    pub start: u32,
    pub end: u32,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct WorldConfig {
    pub identities: usize,
    pub frames: u32,
    /// Identity `i` belongs to class `(i - 1) % classes`.
    pub classes: u32,
    pub image_width: f64,
    pub image_height: f64,
    /// Range of box widths in pixels.
    pub box_width: [f64; 2],
    /// Range of height / width ratios.
    pub aspect: [f64; 2],
    pub motion: Motion,
    pub dim: usize,
    /// Required minimum of `1 - cos` between any two prototypes.
    pub margin: f64,
    /// Logit scale of clean same-identity pairs.
    pub temperature: f64,
    /// Standard deviation of the gaussian added to prototypes.
    pub embed_noise: f64,
    /// Per visible object and frame, probability of spawning a false positive.
    pub fp_rate: f64,
    /// Probability that a visible object is not detected.
    pub fn_rate: f64,
    /// Standard deviation of the per-coordinate box noise in pixels.
    pub box_jitter: f64,
    /// Consecutive frames a false positive reappears with the same box and
    /// embedding.
    pub fp_persistence: u32,
    /// Probability that a detection reports a wrong class.
    pub class_flip_rate: f64,
    pub occlusions: Vec<Occlusion>,
    pub tp_score: [f64; 2],
    pub fp_score: [f64; 2],
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            identities: 10,
            frames: 100,
            classes: 1,
            image_width: 1280.0,
            image_height: 720.0,
            box_width: [30.0, 60.0],
            aspect: [1.0, 2.0],
            motion: Motion::Linear { speed: 2.0 },
            dim: 32,
            margin: 0.5,
            temperature: 10.0,
            embed_noise: 0.0,
            fp_rate: 0.0,
            fn_rate: 0.0,
            box_jitter: 0.0,
            fp_persistence: 1,
            class_flip_rate: 0.0,
            occlusions: Vec::new(),
            tp_score: [0.6, 1.0],
            fp_score: [0.36, 0.5],
            seed: 0,
        }
    }
}

impl WorldConfig {
    /// Noise-free world of 20 identities over 200 frames.
    pub fn clean(seed: u64) -> Self {
        Self { identities: 20, frames: 200, seed, ..Self::default() }
    }

    /// Appearance noise at which cosine matching starts to fail, with misses
    /// and recurring low-score clutter.
    pub fn noisy(seed: u64) -> Self {
        Self {
            identities: 15,
            frames: 100,
            embed_noise: 0.13,
            fp_rate: 0.05,
            fn_rate: 0.2,
            fp_persistence: 5,
            box_jitter: 2.0,
            seed,
            ..Self::default()
        }
    }

    /// Separable identities moving fast enough that boxes stop overlapping
    /// between frames at low frame rates.
    pub fn moving(seed: u64) -> Self {
        Self {
            identities: 10,
            frames: 300,
            motion: Motion::Linear { speed: 4.0 },
            box_jitter: 1.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.into()));
        for (name, v) in [("fp_rate", self.fp_rate), ("fn_rate", self.fn_rate), ("class_flip_rate", self.class_flip_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&alloc::format!("{name} = {v} is outside [0, 1]"));
            }
        }
        for (name, v) in [("embed_noise", self.embed_noise), ("box_jitter", self.box_jitter), ("temperature", self.temperature)] {
            if !(v >= 0.0) {
                return bad(&alloc::format!("{name} = {v} must be non-negative"));
            }
        }
        match self.motion {
            Motion::Linear { speed: s } | Motion::RandomWalk { sigma: s } if !(s >= 0.0) => {
                return bad("motion parameter must be non-negative");
            }
            _ => {}
        }
        if self.dim == 0 || self.classes == 0 {
            return bad("dim and classes must be positive");
        }
        let ranges = [self.box_width, self.aspect, self.tp_score, self.fp_score];
        if ranges.iter().any(|r| !(r[0] > 0.0 && r[1] >= r[0])) || self.tp_score[1] > 1.0 || self.fp_score[1] > 1.0 {
            return bad("box_width, aspect and score ranges must be positive [lo, hi] intervals, scores at most 1");
        }
        if self.box_width[1] * self.aspect[1] >= self.image_height || self.box_width[1] >= self.image_width {
            return bad("boxes must fit inside the image");
        }
        Ok(())
    }
}

/// Detections of one frame with the identity behind each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pub frame: u32,
    pub detections: Vec<Detection>,
    /// `None` for false positives. Diagnostic only.
    pub identities: Vec<Option<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub gt: TrackSet,
    pub frames: Vec<SceneFrame>,
    /// Unit prototype of identity `i + 1`.
    pub prototypes: Vec<Embedding>,
    pub temperature: f64,
}

impl Scenario {
    /// `(frame, detections)` pairs in frame order.
    pub fn detection_stream(&self) -> impl Iterator<Item = (u32, &[Detection])> {
        self.frames.iter().map(|f| (f.frame, f.detections.as_slice()))
    }

    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|f| f.detections.len()).sum()
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let n = libm::sqrt(dot(v, v));
    if n > 0.0 && n.is_finite() {
        v.iter_mut().for_each(|x| *x /= n);
        true
    } else {
        false
    }
}

fn min_margin(protos: &[Vec<f64>]) -> f64 {
    let mut best = 2.0f64;
    for i in 0..protos.len() {
        for j in i + 1..protos.len() {
            best = best.min(1.0 - dot(&protos[i], &protos[j]));
        }
    }
    best
}

const REPULSION_STEPS: usize = 400;
const REPULSION_RATE: f64 = 0.2;
const REPULSION_SHARPNESS: f64 = 20.0;

/// Spreads `n` unit vectors over the sphere by iterated pairwise repulsion
/// and checks the smallest pairwise `1 - cos` against `margin`.
pub fn place_prototypes(n: usize, dim: usize, margin: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Embedding>> {
    let mut protos: Vec<Vec<f64>> = (0..n)
        .map(|_| loop {
            let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
            if normalize(&mut v) {
                break v;
            }
        })
        .collect();
    // each vector steps away from a softmax-weighted mix of its neighbors,
    // concentrated on the closest ones
    for _ in 0..REPULSION_STEPS {
        let mut next = protos.clone();
        for i in 0..n {
            let cos: Vec<f64> = (0..n).map(|j| if i == j { f64::NEG_INFINITY } else { dot(&protos[i], &protos[j]) }).collect();
            let top = cos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !top.is_finite() {
                continue;
            }
            let w: Vec<f64> = cos.iter().map(|&c| libm::exp(REPULSION_SHARPNESS * (c - top))).collect();
            let z: f64 = w.iter().sum();
            for j in 0..n {
                if w[j] > 0.0 {
                    for (x, p) in next[i].iter_mut().zip(&protos[j]) {
                        *x -= REPULSION_RATE * w[j] / z * p;
                    }
                }
            }
            normalize(&mut next[i]);
        }
        protos = next;
    }
    let achieved = min_margin(&protos);
    if achieved < margin {
        return Err(Error::MarginUnreachable { identities: n, dim, margin, achieved });
    }
    protos.into_iter().map(Embedding::new).collect()
}

/// `sqrt(temperature) * normalize(prototype + noise * z)`.
fn observe(proto: &Embedding, noise: f64, temperature: f64, rng: &mut ChaCha8Rng) -> Embedding {
    let scale = libm::sqrt(temperature);
    let mut v: Vec<f64> = proto.as_slice().iter().map(|&p| p + noise * gaussian(rng)).collect();
    if !normalize(&mut v) {
        v = proto.as_slice().to_vec();
    }
    v.iter_mut().for_each(|x| *x *= scale);
    Embedding::new(v).expect("finite")
}

fn random_unit(dim: usize, temperature: f64, rng: &mut ChaCha8Rng) -> Embedding {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        if normalize(&mut v) {
            let s = libm::sqrt(temperature);
            v.iter_mut().for_each(|x| *x *= s);
            return Embedding::new(v).expect("finite");
        }
    }
}

struct Agent {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    w: f64,
    h: f64,
    class_id: u32,
}

impl Agent {
    fn advance(&mut self, motion: Motion, width: f64, height: f64, rng: &mut ChaCha8Rng) {
        match motion {
            Motion::Static => {}
            Motion::Linear { .. } => {
                self.cx += self.vx;
                self.cy += self.vy;
            }
            Motion::RandomWalk { sigma } => {
                self.cx += sigma * gaussian(rng);
                self.cy += sigma * gaussian(rng);
            }
        }
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        if self.cx < hw {
            self.cx = 2.0 * hw - self.cx;
            self.vx = self.vx.abs();
        } else if self.cx > width - hw {
            self.cx = 2.0 * (width - hw) - self.cx;
            self.vx = -self.vx.abs();
        }
        if self.cy < hh {
            self.cy = 2.0 * hh - self.cy;
            self.vy = self.vy.abs();
        } else if self.cy > height - hh {
            self.cy = 2.0 * (height - hh) - self.cy;
            self.vy = -self.vy.abs();
        }
        self.cx = self.cx.clamp(hw, width - hw);
        self.cy = self.cy.clamp(hh, height - hh);
    }

    fn bbox(&self) -> BoundingBox {
        BoundingBox::from_center(self.cx, self.cy, self.w, self.h).expect("positive size")
    }
}

struct Clutter {
    bbox: BoundingBox,
    class_id: u32,
    embedding: Embedding,
    remaining: u32,
}

fn jitter(b: &BoundingBox, sigma: f64, rng: &mut ChaCha8Rng) -> BoundingBox {
    if sigma == 0.0 {
        return *b;
    }
    let [x1, y1, x2, y2] = b.to_array().map(|c| c + sigma * gaussian(rng));
    let (x1, x2) = if x2 > x1 { (x1, x2) } else { (x1, x1 + 1.0) };
    let (y1, y2) = if y2 > y1 { (y1, y2) } else { (y1, y1 + 1.0) };
    BoundingBox::new(x1, y1, x2, y2).expect("ordered")
}

/// Generates a scenario. Frames are numbered from 1; identities from 1.
/// A pure function of `cfg`.
pub fn generate(cfg: &WorldConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes = place_prototypes(cfg.identities, cfg.dim, cfg.margin, &mut rng)?;
    let (width, height) = (cfg.image_width, cfg.image_height);
    let mut agents: Vec<Agent> = (0..cfg.identities)
        .map(|i| {
            let w = uniform(&mut rng, cfg.box_width);
            let h = w * uniform(&mut rng, cfg.aspect);
            let cx = rng.random_range(w / 2.0..width - w / 2.0);
            let cy = rng.random_range(h / 2.0..height - h / 2.0);
            let (vx, vy) = match cfg.motion {
                Motion::Linear { speed } => {
                    let a = rng.random_range(0.0..core::f64::consts::TAU);
                    (speed * libm::cos(a), speed * libm::sin(a))
                }
                _ => (0.0, 0.0),
            };
            Agent { cx, cy, vx, vy, w, h, class_id: i as u32 % cfg.classes }
        })
        .collect();

    let mut gt = TrackSet::new();
    let mut frames = Vec::with_capacity(cfg.frames as usize);
    let mut clutter: Vec<Clutter> = Vec::new();
    for frame in 1..=cfg.frames {
        gt.touch(frame);
        let mut detections = Vec::new();
        let mut identities = Vec::new();
        for (i, agent) in agents.iter_mut().enumerate() {
            if frame > 1 {
                agent.advance(cfg.motion, width, height, &mut rng);
            }
            let id = i as u64 + 1;
            let visible = !cfg.occlusions.iter().any(|o| o.identity == id && (o.start..=o.end).contains(&frame));
            let bbox = agent.bbox();
            gt.push(frame, ObjectBox { id, class_id: agent.class_id, bbox, visible });
            if !visible {
                continue;
            }
            if cfg.fp_rate > 0.0 && rng.random_bool(cfg.fp_rate) {
                let w = uniform(&mut rng, cfg.box_width);
                let h = w * uniform(&mut rng, cfg.aspect);
                let cx = rng.random_range(w / 2.0..width - w / 2.0);
                let cy = rng.random_range(h / 2.0..height - h / 2.0);
                clutter.push(Clutter {
                    bbox: BoundingBox::from_center(cx, cy, w, h).expect("positive size"),
                    class_id: rng.random_range(0..cfg.classes),
                    embedding: random_unit(cfg.dim, cfg.temperature, &mut rng),
                    remaining: cfg.fp_persistence.max(1),
                });
            }
            if cfg.fn_rate > 0.0 && rng.random_bool(cfg.fn_rate) {
                continue;
            }
            let mut class_id = agent.class_id;
            if cfg.classes > 1 && cfg.class_flip_rate > 0.0 && rng.random_bool(cfg.class_flip_rate) {
                class_id = (class_id + rng.random_range(1..cfg.classes)) % cfg.classes;
            }
            detections.push(Detection {
                bbox: jitter(&bbox, cfg.box_jitter, &mut rng),
                class_id,
                score: uniform(&mut rng, cfg.tp_score),
                embedding: observe(&prototypes[i], cfg.embed_noise, cfg.temperature, &mut rng),
            });
            identities.push(Some(id));
        }
        for c in &mut clutter {
            detections.push(Detection {
                bbox: c.bbox,
                class_id: c.class_id,
                score: uniform(&mut rng, cfg.fp_score),
                embedding: c.embedding.clone(),
            });
            identities.push(None);
            c.remaining -= 1;
        }
        clutter.retain(|c| c.remaining > 0);
        frames.push(SceneFrame { frame, detections, identities });
    }
    Ok(Scenario { gt, frames, prototypes, temperature: cfg.temperature })
}

/// Keeps frames at positions `0, k, 2k, ...` and renumbers them `1, 2, ...`.
pub fn subsample(scenario: &Scenario, k: usize) -> Scenario {
    let k = k.max(1);
    let mut renumber = BTreeMap::new();
    let mut frames = Vec::new();
    for (n, f) in scenario.frames.iter().step_by(k).enumerate() {
        let new = n as u32 + 1;
        renumber.insert(f.frame, new);
        frames.push(SceneFrame { frame: new, ..f.clone() });
    }
    let mut gt = TrackSet::new();
    for (f, objs) in scenario.gt.frames() {
        if let Some(&new) = renumber.get(&f) {
            gt.touch(new);
            for o in objs {
                gt.push(new, *o);
            }
        }
    }
    Scenario { gt, frames, prototypes: scenario.prototypes.clone(), temperature: scenario.temperature }
}

/// Motion-free location baseline: each detection, in descending score
/// order, continues the previous frame's unclaimed track with the highest
/// IoU above `iou_threshold`, or starts a new track.
pub fn iou_baseline_track(scenario: &Scenario, iou_threshold: f64) -> TrackSet {
    let mut out = TrackSet::new();
    let mut previous: Vec<(u64, BoundingBox)> = Vec::new();
    let mut next_id = 1u64;
    for f in &scenario.frames {
        out.touch(f.frame);
        let order = crate::geometry::score_order(f.detections.iter().map(|d| d.score));
        let mut claimed = vec![false; previous.len()];
        let mut current = Vec::with_capacity(order.len());
        for i in order {
            let d = &f.detections[i];
            let mut best: Option<(usize, f64)> = None;
            for (j, (_, b)) in previous.iter().enumerate() {
                let o = iou(&d.bbox, b);
                if !claimed[j] && o > iou_threshold && best.is_none_or(|(_, bo)| o > bo) {
                    best = Some((j, o));
                }
            }
            let id = match best {
                Some((j, _)) => {
                    claimed[j] = true;
                    previous[j].0
                }
                None => {
                    next_id += 1;
                    next_id - 1
                }
            };
            out.push(f.frame, ObjectBox { id, class_id: d.class_id, bbox: d.bbox, visible: true });
            current.push((id, d.bbox));
        }
        previous = current;
    }
    out
}

/// Tracking oracle: the scenario's detections associated by their true
/// identities. False positives are dropped.
pub fn tracking_oracle(scenario: &Scenario) -> TrackSet {
    let mut out = TrackSet::new();
    for f in &scenario.frames {
        out.touch(f.frame);
        for (d, id) in f.detections.iter().zip(&f.identities) {
            if let Some(id) = id {
                out.push(f.frame, ObjectBox { id: *id, class_id: d.class_id, bbox: d.bbox, visible: true });
            }
        }
    }
    out
}

/// Detection oracle input: every visible ground-truth box as a detection
/// with score 1 and its identity's embedding, observed with `embed_noise`.
pub fn detection_oracle(scenario: &Scenario, embed_noise: f64, seed: u64) -> Vec<SceneFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scenario
        .gt
        .frames()
        .map(|(frame, objs)| {
            let visible: Vec<&ObjectBox> = objs.iter().filter(|o| o.visible).collect();
            SceneFrame {
                frame,
                detections: visible
                    .iter()
                    .map(|o| Detection {
                        bbox: o.bbox,
                        class_id: o.class_id,
                        score: 1.0,
                        embedding: observe(&scenario.prototypes[o.id as usize - 1], embed_noise, scenario.temperature, &mut rng),
                    })
                    .collect(),
                identities: visible.iter().map(|o| Some(o.id)).collect(),
            }
        })
        .collect()
}

/// Tracker output as an evaluable set. Interpolated points are included.
pub fn histories_to_set(histories: &[TrackHistory]) -> TrackSet {
    let mut out = TrackSet::new();
    for h in histories {
        for p in &h.points {
            out.push(p.frame, ObjectBox { id: h.track_id, class_id: h.class_id, bbox: p.bbox, visible: true });
        }
    }
    out
}

/// Region-feature world for training an embedding head.
///
/// A region's feature is `[signal; nuisance]`. The signal blends the
/// prototype of the overlapped identity with a per-region background vector
/// by the region's IoU; the nuisance block is independent noise of scale
/// `nuisance_scale` that a good head must learn to ignore.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FeatureWorldConfig {
    pub identities: usize,
    pub signal_dim: usize,
    pub nuisance_dim: usize,
    pub nuisance_scale: f64,
    pub feature_noise: f64,
    /// Frames used for training pairs.
    pub train_frames: usize,
    /// Proposals drawn around each object per frame.
    pub proposals_per_object: usize,
    pub background_proposals: usize,
    /// Held-out (query, gallery) frame pairs for evaluation.
    pub eval_pairs: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for FeatureWorldConfig {
    fn default() -> Self {
        Self {
            identities: 8,
            signal_dim: 8,
            nuisance_dim: 8,
            nuisance_scale: 1.0,
            feature_noise: 0.1,
            train_frames: 6,
            proposals_per_object: 12,
            background_proposals: 32,
            eval_pairs: 8,
            sampler: SamplerConfig { key_size: 48, ref_size: 64, ..SamplerConfig::default() },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWorld {
    /// Consecutive training frame pairs.
    pub pairs: Vec<TrainingPair>,
    /// Ground-truth box features of held-out frames as (query, gallery)
    /// frame pairs.
    pub eval: Vec<(Vec<(Vec<f64>, u64)>, Vec<(Vec<f64>, u64)>)>,
}

impl FeatureWorld {
    pub fn input_dim(&self) -> usize {
        self.eval.first().and_then(|e| e.0.first()).map_or(0, |q| q.0.len())
    }

    /// Cross-frame nearest-neighbor identity accuracy under `head`, averaged
    /// over the evaluation frame pairs.
    pub fn accuracy(&self, head: &LinearHead) -> Result<f64> {
        let embed = |set: &[(Vec<f64>, u64)]| -> Result<Vec<(Embedding, u64)>> {
            set.iter().map(|(x, id)| Ok((head.embed(x)?, *id))).collect()
        };
        let mut total = 0.0;
        for (q, g) in &self.eval {
            total += crate::contrastive::nearest_neighbor_accuracy(&embed(q)?, &embed(g)?);
        }
        Ok(total / self.eval.len().max(1) as f64)
    }
}

struct FeatureFrame {
    gts: Vec<(BoundingBox, u64)>,
    regions: Vec<BoundingBox>,
}

fn feature_frame(cfg: &FeatureWorldConfig, rng: &mut ChaCha8Rng) -> FeatureFrame {
    let (width, height) = (640.0, 360.0);
    let gts: Vec<(BoundingBox, u64)> = (0..cfg.identities)
        .map(|i| {
            let w = rng.random_range(30.0..60.0);
            let h = w * rng.random_range(1.0..2.0);
            let cx = rng.random_range(w / 2.0..width - w / 2.0);
            let cy = rng.random_range(h / 2.0..height - h / 2.0);
            (BoundingBox::from_center(cx, cy, w, h).expect("positive size"), i as u64 + 1)
        })
        .collect();
    let mut regions = Vec::new();
    for (b, _) in &gts {
        regions.push(*b);
        for _ in 0..cfg.proposals_per_object {
            let spread = rng.random_range(0.02..0.6);
            let (cx, cy) = b.center();
            let w = b.width() * libm::exp(spread * 0.5 * gaussian(rng));
            let h = b.height() * libm::exp(spread * 0.5 * gaussian(rng));
            let cx = cx + spread * b.width() * gaussian(rng);
            let cy = cy + spread * b.height() * gaussian(rng);
            regions.push(BoundingBox::from_center(cx, cy, w, h).expect("positive size"));
        }
    }
    for _ in 0..cfg.background_proposals {
        let w = rng.random_range(20.0..80.0);
        let h = rng.random_range(20.0..120.0);
        let cx = rng.random_range(0.0..width);
        let cy = rng.random_range(0.0..height);
        regions.push(BoundingBox::from_center(cx, cy, w, h).expect("positive size"));
    }
    FeatureFrame { gts, regions }
}

fn region_feature(
    region: &BoundingBox,
    gts: &[(BoundingBox, u64)],
    protos: &[Embedding],
    cfg: &FeatureWorldConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut best = (0.0, 0usize);
    for (k, (g, _)) in gts.iter().enumerate() {
        let o = iou(region, g);
        if o > best.0 {
            best = (o, k);
        }
    }
    let (o, k) = best;
    let proto = protos[gts.get(k).map_or(0, |g| g.1 as usize - 1)].as_slice();
    let mut background: Vec<f64> = (0..cfg.signal_dim).map(|_| gaussian(rng)).collect();
    normalize(&mut background);
    let mut x: Vec<f64> = proto
        .iter()
        .zip(&background)
        .map(|(p, b)| o * p + (1.0 - o) * b + cfg.feature_noise * gaussian(rng))
        .collect();
    x.extend((0..cfg.nuisance_dim).map(|_| cfg.nuisance_scale * gaussian(rng)));
    x
}

/// Builds training pairs from consecutive frames and a held-out query and
/// gallery frame. A pure function of `cfg`.
pub fn feature_world(cfg: &FeatureWorldConfig) -> Result<FeatureWorld> {
    if cfg.identities == 0 || cfg.signal_dim == 0 || cfg.train_frames < 2 {
        return Err(Error::InvalidConfig("feature world needs identities, signal dimensions and two frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let protos = place_prototypes(cfg.identities, cfg.signal_dim, 0.0, &mut rng)?;
    let frames: Vec<FeatureFrame> = (0..cfg.train_frames + 2 * cfg.eval_pairs).map(|_| feature_frame(cfg, &mut rng)).collect();
    let mut featured = Vec::with_capacity(frames.len());
    for f in &frames {
        let feats: Vec<Vec<f64>> = f.regions.iter().map(|r| region_feature(r, &f.gts, &protos, cfg, &mut rng)).collect();
        featured.push(feats);
    }
    let mut pairs = Vec::new();
    for t in 0..cfg.train_frames - 1 {
        let key = assign_samples(&frames[t].regions, &frames[t].gts, 0.7, 0.3);
        let reference = assign_samples(&frames[t + 1].regions, &frames[t + 1].gts, 0.7, 0.3);
        let batch = sample_batch(&key, &reference, &cfg.sampler, cfg.seed.wrapping_add(t as u64))?;
        pairs.push(TrainingPair {
            key_features: batch.key_source.iter().map(|&i| featured[t][i].clone()).collect(),
            ref_features: batch.ref_source.iter().map(|&i| featured[t + 1][i].clone()).collect(),
            batch,
        });
    }
    // ground-truth boxes are the first region of each object block
    let held_out = |n: usize| -> Vec<(Vec<f64>, u64)> {
        let f = &frames[n];
        (0..f.gts.len())
            .map(|k| (featured[n][k * (cfg.proposals_per_object + 1)].clone(), f.gts[k].1))
            .collect()
    };
    let eval = (0..cfg.eval_pairs)
        .map(|k| (held_out(cfg.train_frames + 2 * k), held_out(cfg.train_frames + 2 * k + 1)))
        .collect();
    Ok(FeatureWorld { pairs, eval })
}
