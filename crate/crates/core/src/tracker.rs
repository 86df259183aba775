//! Appearance-only association engine.
//!
//! Each frame: confidence filtering, duplicate removal, similarity against
//! live tracks and backdrops, greedy association in descending detection
//! score, track creation, backdrop insertion, and expiry. Optional
//! near-online tracklet merging and linear interpolation run on top.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{center_distance, nms, BoundingBox, ScoredBox};
use crate::similarity::{bisoftmax_from_logits, dot_matrix, Embedding, SimilarityMatrix};

/// One detector output for a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub class_id: u32,
    pub score: f64,
    pub embedding: Embedding,
}

/// A box a track occupied on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub frame: u32,
    pub bbox: BoundingBox,
    pub score: f64,
    /// True for boxes filled in by interpolation.
    pub interpolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub class_id: u32,
    /// Momentum-smoothed appearance.
    pub embedding: Embedding,
    pub last_box: BoundingBox,
    pub last_active_frame: u32,
    pub created_frame: u32,
    pub history: Vec<TrackPoint>,
}

/// An unmatched low-confidence detection kept as a matching candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Backdrop {
    pub embedding: Embedding,
    pub bbox: BoundingBox,
    pub class_id: u32,
    pub frame: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SimilarityMetric {
    /// Bi-directional softmax over raw dot products.
    BiSoftmax,
    /// Plain cosine similarity.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MergeConfig {
    /// How many frames after creation a track may still be merged.
    pub window: u32,
    /// Minimum bi-softmax score between the young and the vanished track.
    pub threshold: f64,
    /// Maximum center distance in pixels.
    pub max_distance: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { window: 10, threshold: 0.5, max_distance: 50.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrackerConfig {
    /// Minimum score for an unmatched detection to start a track.
    pub new_track_threshold: f64,
    /// Minimum detection score to be matched to an existing track.
    pub match_min_score: f64,
    /// Minimum similarity for a match.
    pub match_threshold: f64,
    /// Frames a track may stay unmatched before it is dropped.
    pub max_inactive_frames: u32,
    /// Frames a backdrop stays a candidate; 0 disables backdrops.
    pub backdrop_frames: u32,
    /// Weight of the new embedding in the momentum update.
    pub momentum: f64,
    /// Detections below this score are discarded.
    pub det_confidence: f64,
    pub nms_threshold: f64,
    /// Duplicate removal across classes (otherwise NMS is per class).
    pub class_agnostic_nms: bool,
    /// Only associate detections and candidates of the same class.
    pub same_class_only: bool,
    /// Ignore candidates farther than this many pixels (center distance).
    pub distance_gate: Option<f64>,
    pub merge: Option<MergeConfig>,
    pub interpolate: bool,
    pub metric: SimilarityMetric,
}

impl Default for TrackerConfig {
    /// The BDD100K settings.
    fn default() -> Self {
        Self {
            new_track_threshold: 0.5,
            match_min_score: 0.35,
            match_threshold: 0.5,
            max_inactive_frames: 10,
            backdrop_frames: 1,
            momentum: 0.8,
            det_confidence: 0.1,
            nms_threshold: 0.65,
            class_agnostic_nms: true,
            same_class_only: true,
            distance_gate: None,
            merge: None,
            interpolate: false,
            metric: SimilarityMetric::BiSoftmax,
        }
    }
}

impl TrackerConfig {
    /// Checks value ranges. Returns soft warnings for legal but unusual
    /// settings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let unit = [
            ("new_track_threshold", self.new_track_threshold),
            ("match_min_score", self.match_min_score),
            ("match_threshold", self.match_threshold),
            ("momentum", self.momentum),
            ("det_confidence", self.det_confidence),
            ("nms_threshold", self.nms_threshold),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if let Some(d) = self.distance_gate {
            if !(d >= 0.0) {
                return Err(Error::InvalidConfig(format!("distance_gate = {d} must be non-negative")));
            }
        }
        if let Some(m) = &self.merge {
            if !(0.0..=1.0).contains(&m.threshold) || !(m.max_distance >= 0.0) {
                return Err(Error::InvalidConfig(String::from("merge threshold must be in [0, 1] and distance non-negative")));
            }
        }
        let mut warnings = Vec::new();
        if self.new_track_threshold < self.match_min_score {
            warnings.push(format!(
                "new_track_threshold ({}) is below match_min_score ({})",
                self.new_track_threshold, self.match_min_score
            ));
        }
        Ok(warnings)
    }
}

/// `m * new + (1 - m) * old`, componentwise, without renormalization.
pub fn momentum_update(old: &Embedding, new: &Embedding, m: f64) -> Result<Embedding> {
    if old.dim() != new.dim() {
        return Err(Error::DimensionMismatch { expected: old.dim(), found: new.dim() });
    }
    if m == 1.0 {
        return Ok(new.clone());
    }
    if m == 0.0 {
        return Ok(old.clone());
    }
    let values = old
        .as_slice()
        .iter()
        .zip(new.as_slice())
        .map(|(o, n)| m * n + (1.0 - m) * o)
        .collect();
    Embedding::new(values)
}

/// A detection confirmed on a track in the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub track_id: u64,
    /// Index into the detection list passed to [`Tracker::step`].
    pub input_index: usize,
    pub detection: Detection,
}

/// Final per-track output.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackHistory {
    pub track_id: u64,
    pub class_id: u32,
    pub points: Vec<TrackPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Candidate {
    Track(usize),
    Backdrop(usize),
}

/// Tracker state for one video sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    finished: Vec<Track>,
    backdrops: Vec<Backdrop>,
    next_id: u64,
    last_frame: Option<u32>,
    dim: Option<usize>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            finished: Vec::new(),
            backdrops: Vec::new(),
            next_id: 1,
            last_frame: None,
            dim: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Tracks still eligible for matching.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn backdrops(&self) -> &[Backdrop] {
        &self.backdrops
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.last_frame
    }

    fn validate_detections(&mut self, dets: &[Detection]) -> Result<()> {
        for (index, d) in dets.iter().enumerate() {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::InvalidDetection { index, reason: "score must be finite and in [0, 1]" });
            }
            match self.dim {
                Some(dim) if dim != d.embedding.dim() => {
                    return Err(Error::DimensionMismatch { expected: dim, found: d.embedding.dim() })
                }
                Some(_) => {}
                None => self.dim = Some(d.embedding.dim()),
            }
        }
        Ok(())
    }

    fn expire(&mut self, tracks_before: u32, backdrops_at: u32) {
        let k = self.cfg.max_inactive_frames;
        let (keep, gone): (Vec<Track>, Vec<Track>) = core::mem::take(&mut self.tracks)
            .into_iter()
            .partition(|t| tracks_before.saturating_sub(t.last_active_frame) <= k);
        self.tracks = keep;
        self.finished.extend(gone);
        let l = self.cfg.backdrop_frames;
        self.backdrops
            .retain(|b| backdrops_at.saturating_sub(b.frame) <= l && l > 0);
    }

    /// Processes one frame and returns the detections confirmed on tracks.
    pub fn step(&mut self, frame: u32, detections: &[Detection]) -> Result<Vec<Association>> {
        if let Some(previous) = self.last_frame {
            if frame <= previous {
                return Err(Error::NonMonotonicFrame { frame, previous });
            }
        }
        self.validate_detections(detections)?;
        self.last_frame = Some(frame);
        // Drop what can no longer be a candidate if frame indices skipped.
        self.expire(frame.saturating_sub(1), frame);

        let confident: Vec<usize> = (0..detections.len())
            .filter(|&i| detections[i].score >= self.cfg.det_confidence)
            .collect();
        let boxes: Vec<ScoredBox> = confident
            .iter()
            .map(|&i| ScoredBox {
                bbox: detections[i].bbox,
                score: detections[i].score,
                class_id: detections[i].class_id,
            })
            .collect();
        let order: Vec<usize> = nms(&boxes, self.cfg.nms_threshold, self.cfg.class_agnostic_nms)
            .into_iter()
            .map(|k| confident[k])
            .collect();

        let candidates: Vec<Candidate> = (0..self.tracks.len())
            .map(Candidate::Track)
            .chain((0..self.backdrops.len()).map(Candidate::Backdrop))
            .collect();
        let scores = self.score_matrix(detections, &order, &candidates);

        let mut claimed = vec![false; self.tracks.len()];
        let mut out = Vec::new();
        let mut new_tracks = Vec::new();
        let mut new_backdrops = Vec::new();
        for (row, &di) in order.iter().enumerate() {
            let det = &detections[di];
            let best = scores.as_ref().and_then(|s| s.argmax_row(row));
            let matched_track = match best {
                Some((j, c)) if c > self.cfg.match_threshold && det.score > self.cfg.match_min_score => {
                    match candidates[j] {
                        Candidate::Track(t) if !claimed[t] => Some(t),
                        _ => None,
                    }
                }
                _ => None,
            };
            if let Some(t) = matched_track {
                claimed[t] = true;
                let track = &mut self.tracks[t];
                track.embedding = momentum_update(&track.embedding, &det.embedding, self.cfg.momentum)?;
                track.last_box = det.bbox;
                track.last_active_frame = frame;
                track.history.push(TrackPoint { frame, bbox: det.bbox, score: det.score, interpolated: false });
                out.push(Association { track_id: track.id, input_index: di, detection: det.clone() });
            } else if det.score > self.cfg.new_track_threshold {
                let id = self.next_id;
                self.next_id += 1;
                new_tracks.push(Track {
                    id,
                    class_id: det.class_id,
                    embedding: det.embedding.clone(),
                    last_box: det.bbox,
                    last_active_frame: frame,
                    created_frame: frame,
                    history: vec![TrackPoint { frame, bbox: det.bbox, score: det.score, interpolated: false }],
                });
                out.push(Association { track_id: id, input_index: di, detection: det.clone() });
            } else {
                new_backdrops.push(Backdrop {
                    embedding: det.embedding.clone(),
                    bbox: det.bbox,
                    class_id: det.class_id,
                    frame,
                });
            }
        }
        self.tracks.extend(new_tracks);
        self.backdrops.extend(new_backdrops);
        // Keep only what can still be a candidate on the next frame.
        self.expire(frame, frame + 1);
        if let Some(merge) = self.cfg.merge {
            self.merge_tracklets(&merge);
        }
        Ok(out)
    }

    /// Similarity of the ordered detections against the candidates, with
    /// inadmissible pairs set to `-inf`. `None` when there is nothing to
    /// compare.
    fn score_matrix(&self, dets: &[Detection], order: &[usize], cands: &[Candidate]) -> Option<SimilarityMatrix> {
        if order.is_empty() || cands.is_empty() {
            return None;
        }
        let cand_view: Vec<(&Embedding, &BoundingBox, u32)> = cands
            .iter()
            .map(|c| match *c {
                Candidate::Track(t) => {
                    let t = &self.tracks[t];
                    (&t.embedding, &t.last_box, t.class_id)
                }
                Candidate::Backdrop(b) => {
                    let b = &self.backdrops[b];
                    (&b.embedding, &b.bbox, b.class_id)
                }
            })
            .collect();
        let rows: Vec<&[f64]> = order.iter().map(|&di| dets[di].embedding.as_slice()).collect();
        let cols: Vec<&[f64]> = cand_view.iter().map(|(e, _, _)| e.as_slice()).collect();
        let mut values = dot_matrix(&rows, &cols);
        if self.cfg.metric == SimilarityMetric::Cosine {
            let cand_norms: Vec<f64> = cand_view.iter().map(|(e, _, _)| e.norm()).collect();
            for (row, &di) in values.chunks_mut(cands.len()).zip(order) {
                let dn = dets[di].embedding.norm();
                for (v, cn) in row.iter_mut().zip(&cand_norms) {
                    let denom = dn * cn;
                    *v = if denom > 0.0 { *v / denom } else { 0.0 };
                }
            }
        }
        if self.cfg.same_class_only || self.cfg.distance_gate.is_some() {
            for (row, &di) in values.chunks_mut(cands.len()).zip(order) {
                let det = &dets[di];
                for (v, (_, bbox, class_id)) in row.iter_mut().zip(&cand_view) {
                    let admissible = (!self.cfg.same_class_only || det.class_id == *class_id)
                        && self.cfg.distance_gate.is_none_or(|d| center_distance(&det.bbox, bbox) <= d);
                    if !admissible {
                        *v = f64::NEG_INFINITY;
                    }
                }
            }
        }
        let matrix = SimilarityMatrix::from_values(order.len(), cands.len(), values);
        Some(match self.cfg.metric {
            SimilarityMetric::Cosine => matrix,
            SimilarityMetric::BiSoftmax => {
                let f = bisoftmax_from_logits(&matrix);
                let masked = f
                    .values()
                    .iter()
                    .zip(matrix.values())
                    .map(|(&p, &l)| if l == f64::NEG_INFINITY { f64::NEG_INFINITY } else { p })
                    .collect();
                SimilarityMatrix::from_values(order.len(), cands.len(), masked)
            }
        })
    }

    /// Near-online tracklet merging.
    ///
    /// A track created within the last `window` frames is merged into a
    /// vanished track (one whose last activity precedes the young track's
    /// creation) when their bi-softmax score exceeds the threshold and the
    /// young track's first box lies within `max_distance` of the vanished
    /// track's last box. Each vanished track absorbs at most one young
    /// track, best score first. The young track's ID is retired.
    pub fn merge_tracklets(&mut self, merge: &MergeConfig) {
        let Some(now) = self.last_frame else { return };
        let young: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| now - self.tracks[i].created_frame <= merge.window)
            .collect();
        let vanished: Vec<usize> = (0..self.tracks.len())
            .filter(|&j| young.iter().any(|&y| self.tracks[j].last_active_frame < self.tracks[y].created_frame))
            .collect();
        if young.is_empty() || vanished.is_empty() {
            return;
        }
        let mut logits = Vec::with_capacity(young.len() * vanished.len());
        for &y in &young {
            for &v in &vanished {
                let (ty, tv) = (&self.tracks[y], &self.tracks[v]);
                let admissible = tv.last_active_frame < ty.created_frame
                    && (!self.cfg.same_class_only || ty.class_id == tv.class_id);
                logits.push(if admissible { ty.embedding.dot(&tv.embedding) } else { f64::NEG_INFINITY });
            }
        }
        let logits = SimilarityMatrix::from_values(young.len(), vanished.len(), logits);
        let f = bisoftmax_from_logits(&logits);

        let mut pairs = Vec::new();
        for (r, &y) in young.iter().enumerate() {
            for (c, &v) in vanished.iter().enumerate() {
                if logits.get(r, c) == f64::NEG_INFINITY {
                    continue;
                }
                let score = f.get(r, c);
                let first = self.tracks[y].history.first().map_or(self.tracks[y].last_box, |p| p.bbox);
                if score > merge.threshold && center_distance(&first, &self.tracks[v].last_box) <= merge.max_distance {
                    pairs.push((score, r, c));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));

        let mut young_used = vec![false; young.len()];
        let mut vanished_used = vec![false; vanished.len()];
        let mut absorbed = Vec::new();
        for (_, r, c) in pairs {
            if young_used[r] || vanished_used[c] {
                continue;
            }
            // a track that already absorbed another cannot itself be absorbed
            let (y, v) = (young[r], vanished[c]);
            if absorbed.iter().any(|&(yy, vv)| yy == v || vv == y) {
                continue;
            }
            young_used[r] = true;
            vanished_used[c] = true;
            absorbed.push((y, v));
        }
        for &(y, v) in &absorbed {
            let young_track = self.tracks[y].clone();
            let target = &mut self.tracks[v];
            target.history.extend(young_track.history);
            target.embedding = young_track.embedding;
            target.last_box = young_track.last_box;
            target.last_active_frame = young_track.last_active_frame;
        }
        let mut remove: Vec<usize> = absorbed.iter().map(|&(y, _)| y).collect();
        remove.sort_unstable();
        for y in remove.into_iter().rev() {
            self.tracks.remove(y);
        }
    }

    /// Consumes the tracker and returns every track's history, sorted by
    /// track ID, interpolated when configured.
    pub fn finish(self) -> Vec<TrackHistory> {
        let interpolate = self.cfg.interpolate;
        let mut all: Vec<Track> = self.finished;
        all.extend(self.tracks);
        all.sort_by_key(|t| t.id);
        let histories: Vec<TrackHistory> = all
            .into_iter()
            .map(|t| TrackHistory { track_id: t.id, class_id: t.class_id, points: t.history })
            .collect();
        if interpolate {
            interpolate_tracks(&histories)
        } else {
            histories
        }
    }
}

/// Fills every interior gap of each track with linearly interpolated boxes.
/// Inserted points are flagged and carry the mean score of the endpoints.
pub fn interpolate_tracks(histories: &[TrackHistory]) -> Vec<TrackHistory> {
    histories
        .iter()
        .map(|h| {
            let mut points = Vec::with_capacity(h.points.len());
            for (i, p) in h.points.iter().enumerate() {
                if let Some(prev) = i.checked_sub(1).map(|k| &h.points[k]) {
                    let gap = p.frame - prev.frame;
                    for s in 1..gap {
                        let t = s as f64 / gap as f64;
                        points.push(TrackPoint {
                            frame: prev.frame + s,
                            bbox: prev.bbox.lerp(&p.bbox, t),
                            score: 0.5 * (prev.score + p.score),
                            interpolated: true,
                        });
                    }
                }
                points.push(p.clone());
            }
            TrackHistory { track_id: h.track_id, class_id: h.class_id, points }
        })
        .collect()
}

/// Runs a whole sequence through a fresh tracker.
pub fn run_sequence<'a, I>(cfg: &TrackerConfig, frames: I) -> Result<Vec<TrackHistory>>
where
    I: IntoIterator<Item = (u32, &'a [Detection])>,
{
    let mut tracker = Tracker::new(cfg.clone())?;
    for (frame, dets) in frames {
        tracker.step(frame, dets)?;
    }
    Ok(tracker.finish())
}
