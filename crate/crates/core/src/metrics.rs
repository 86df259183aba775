//! CLEAR-MOT, IDF1 and HOTA evaluation.
//!
//! Per-frame matchings are exact: among all one-to-one matchings of pairs
//! passing the IoU threshold, the one with the most pairs wins, and among
//! those the one with the largest total IoU.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::assignment::maximize_positive;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

/// One object on one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectBox {
    pub id: u64,
    pub class_id: u32,
    pub bbox: BoundingBox,
    /// Ground-truth visibility; invisible objects are not evaluated.
    pub visible: bool,
}

/// Objects per frame, used for both ground truth and predictions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    frames: BTreeMap<u32, Vec<ObjectBox>>,
}

impl TrackSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, frame: u32, object: ObjectBox) {
        self.frames.entry(frame).or_default().push(object);
    }

    /// Makes sure `frame` exists even when it holds no objects.
    pub fn touch(&mut self, frame: u32) {
        self.frames.entry(frame).or_default();
    }

    pub fn frames(&self) -> impl Iterator<Item = (u32, &[ObjectBox])> {
        self.frames.iter().map(|(&f, v)| (f, v.as_slice()))
    }

    pub fn frame(&self, frame: u32) -> &[ObjectBox] {
        self.frames.get(&frame).map_or(&[], Vec::as_slice)
    }

    pub fn frame_range(&self) -> Option<(u32, u32)> {
        Some((*self.frames.keys().next()?, *self.frames.keys().next_back()?))
    }

    pub fn len(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> BTreeSet<u32> {
        self.frames.values().flatten().map(|o| o.class_id).collect()
    }

    /// Keeps the objects satisfying `keep`; frames are retained even when
    /// they become empty.
    pub fn filtered(&self, mut keep: impl FnMut(&ObjectBox) -> bool) -> TrackSet {
        let frames = self
            .frames
            .iter()
            .map(|(&f, v)| (f, v.iter().filter(|o| keep(o)).copied().collect()))
            .collect();
        TrackSet { frames }
    }

    fn visible(&self) -> TrackSet {
        self.filtered(|o| o.visible)
    }
}

fn union_frames(a: &TrackSet, b: &TrackSet) -> Vec<u32> {
    a.frames.keys().chain(b.frames.keys()).copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Best matching between `gt` and `pred` restricted to pairs with
/// `IoU >= threshold`: most pairs first, then largest IoU sum. Returns
/// `(gt_index, pred_index, iou)` triples.
pub fn match_frame(gt: &[BoundingBox], pred: &[BoundingBox], threshold: f64) -> Vec<(usize, usize, f64)> {
    let (n, m) = (gt.len(), pred.len());
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let ious: Vec<f64> = gt.iter().flat_map(|g| pred.iter().map(move |p| iou(g, p))).collect();
    let big = (n.min(m) + 1) as f64;
    let profit: Vec<f64> = ious.iter().map(|&o| if o >= threshold { big + o } else { 0.0 }).collect();
    maximize_positive(n, m, &profit)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j, ious[i * m + j])))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearMot {
    pub mota: f64,
    /// Mean IoU of matched pairs (0 without matches).
    pub motp: f64,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub mt: usize,
    pub ml: usize,
    pub matches: usize,
    pub gt_dets: usize,
    pub gt_tracks: usize,
    /// Sum of IoU over matches.
    pub iou_sum: f64,
}

/// CLEAR-MOT with match persistence: a ground truth keeps last frame's
/// prediction while their IoU stays above the threshold; the remaining
/// objects are matched optimally. An identity switch is counted when a
/// ground truth's matched prediction differs from its last matched one.
pub fn clear_mot(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> Result<ClearMot> {
    let gt = gt.visible();
    if gt.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let mut fp = 0;
    let mut fn_ = 0;
    let mut idsw = 0;
    let mut matches = 0;
    let mut iou_sum = 0.0;
    let mut prev: BTreeMap<u64, u64> = BTreeMap::new();
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut present: BTreeMap<u64, usize> = BTreeMap::new();
    let mut covered: BTreeMap<u64, usize> = BTreeMap::new();

    for frame in union_frames(&gt, pred) {
        let g = gt.frame(frame);
        let p = pred.frame(frame);
        for o in g {
            *present.entry(o.id).or_default() += 1;
        }
        let mut g_used = vec![false; g.len()];
        let mut p_used = vec![false; p.len()];
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (gi, go) in g.iter().enumerate() {
            let Some(&pid) = prev.get(&go.id) else { continue };
            if let Some(pj) = p.iter().position(|po| po.id == pid) {
                let o = iou(&go.bbox, &p[pj].bbox);
                if !p_used[pj] && o >= iou_threshold {
                    g_used[gi] = true;
                    p_used[pj] = true;
                    pairs.push((gi, pj, o));
                }
            }
        }
        let g_rest: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let p_rest: Vec<usize> = (0..p.len()).filter(|&j| !p_used[j]).collect();
        let gb: Vec<BoundingBox> = g_rest.iter().map(|&i| g[i].bbox).collect();
        let pb: Vec<BoundingBox> = p_rest.iter().map(|&j| p[j].bbox).collect();
        for (a, b, o) in match_frame(&gb, &pb, iou_threshold) {
            pairs.push((g_rest[a], p_rest[b], o));
        }

        prev.clear();
        for &(gi, pj, o) in &pairs {
            let (gid, pid) = (g[gi].id, p[pj].id);
            if let Some(&before) = last.get(&gid) {
                if before != pid {
                    idsw += 1;
                }
            }
            last.insert(gid, pid);
            prev.insert(gid, pid);
            *covered.entry(gid).or_default() += 1;
            iou_sum += o;
        }
        matches += pairs.len();
        fn_ += g.len() - pairs.len();
        fp += p.len() - pairs.len();
    }

    let gt_dets = gt.len();
    let mut mt = 0;
    let mut ml = 0;
    for (id, &n) in &present {
        let ratio = covered.get(id).copied().unwrap_or(0) as f64 / n as f64;
        if ratio >= 0.8 {
            mt += 1;
        } else if ratio <= 0.2 {
            ml += 1;
        }
    }
    Ok(ClearMot {
        mota: 1.0 - (fn_ + fp + idsw) as f64 / gt_dets as f64,
        motp: if matches > 0 { iou_sum / matches as f64 } else { 0.0 },
        fp,
        fn_,
        idsw,
        mt,
        ml,
        matches,
        gt_dets,
        gt_tracks: present.len(),
        iou_sum,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Idf1 {
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

impl Idf1 {
    fn from_counts(idtp: usize, idfp: usize, idfn: usize) -> Self {
        let denom = 2 * idtp + idfp + idfn;
        let idf1 = if denom == 0 { 0.0 } else { 2.0 * idtp as f64 / denom as f64 };
        Self { idf1, idtp, idfp, idfn }
    }
}

/// Identity F1 with a global one-to-one assignment of ground-truth to
/// predicted trajectories maximizing the number of frames on which the
/// assigned pair overlaps by at least `iou_threshold`.
pub fn idf1(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> Result<Idf1> {
    let gt = gt.visible();
    if gt.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let gt_ids: Vec<u64> = gt.frames.values().flatten().map(|o| o.id).collect::<BTreeSet<_>>().into_iter().collect();
    let pred_ids: Vec<u64> = pred.frames.values().flatten().map(|o| o.id).collect::<BTreeSet<_>>().into_iter().collect();
    let gi: BTreeMap<u64, usize> = gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let pi: BTreeMap<u64, usize> = pred_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let cols = pred_ids.len();
    let mut overlap = vec![0.0f64; gt_ids.len() * cols];
    for frame in union_frames(&gt, pred) {
        for g in gt.frame(frame) {
            for p in pred.frame(frame) {
                if iou(&g.bbox, &p.bbox) >= iou_threshold {
                    overlap[gi[&g.id] * cols + pi[&p.id]] += 1.0;
                }
            }
        }
    }
    let assignment = maximize_positive(gt_ids.len(), cols, &overlap);
    let idtp: usize = assignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| overlap[i * cols + j] as usize))
        .sum();
    Ok(Idf1::from_counts(idtp, pred.len() - idtp, gt.len() - idtp))
}

/// Localization thresholds 0.05, 0.10, ..., 0.95.
pub fn hota_alphas() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

/// HOTA components at one localization threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct HotaAlpha {
    pub alpha: f64,
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub det_re: f64,
    pub det_pr: f64,
    pub ass_re: f64,
    pub ass_pr: f64,
}

impl HotaAlpha {
    fn from_parts(alpha: f64, tp: usize, fn_: usize, fp: usize, ass: [f64; 3]) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let det_a = ratio(tp, tp + fn_ + fp);
        let [ass_a, ass_re, ass_pr] = ass;
        HotaAlpha {
            alpha,
            tp,
            fn_,
            fp,
            hota: libm::sqrt(det_a * ass_a),
            det_a,
            ass_a,
            det_re: ratio(tp, tp + fn_),
            det_pr: ratio(tp, tp + fp),
            ass_re,
            ass_pr,
        }
    }
}

/// HOTA scores averaged over the localization thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct Hota {
    pub per_alpha: Vec<HotaAlpha>,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub det_re: f64,
    pub det_pr: f64,
    pub ass_re: f64,
    pub ass_pr: f64,
}

impl Hota {
    fn from_alphas(per_alpha: Vec<HotaAlpha>) -> Self {
        let n = per_alpha.len().max(1) as f64;
        let mean = |f: fn(&HotaAlpha) -> f64| per_alpha.iter().map(f).sum::<f64>() / n;
        Hota {
            hota: mean(|a| a.hota),
            det_a: mean(|a| a.det_a),
            ass_a: mean(|a| a.ass_a),
            det_re: mean(|a| a.det_re),
            det_pr: mean(|a| a.det_pr),
            ass_re: mean(|a| a.ass_re),
            ass_pr: mean(|a| a.ass_pr),
            per_alpha,
        }
    }
}

/// Higher-order tracking accuracy.
///
/// For each threshold the per-frame matching is computed independently;
/// a true positive pairing ground truth `g` with prediction `p` scores
/// `TPA / (TPA + FNA + FPA)`, where `TPA` counts the true positives pairing
/// the same `g` and `p` over the sequence.
pub fn hota(gt: &TrackSet, pred: &TrackSet) -> Result<Hota> {
    let gt = gt.visible();
    if gt.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let mut gt_count: BTreeMap<u64, usize> = BTreeMap::new();
    let mut pred_count: BTreeMap<u64, usize> = BTreeMap::new();
    for o in gt.frames.values().flatten() {
        *gt_count.entry(o.id).or_default() += 1;
    }
    for o in pred.frames.values().flatten() {
        *pred_count.entry(o.id).or_default() += 1;
    }
    let frames = union_frames(&gt, pred);
    let per_alpha = hota_alphas()
        .into_iter()
        .map(|alpha| {
            let mut pair_tp: BTreeMap<(u64, u64), usize> = BTreeMap::new();
            let mut tp = 0;
            for &frame in &frames {
                let g = gt.frame(frame);
                let p = pred.frame(frame);
                let gb: Vec<BoundingBox> = g.iter().map(|o| o.bbox).collect();
                let pb: Vec<BoundingBox> = p.iter().map(|o| o.bbox).collect();
                for (i, j, _) in match_frame(&gb, &pb, alpha) {
                    *pair_tp.entry((g[i].id, p[j].id)).or_default() += 1;
                    tp += 1;
                }
            }
            let ass = association_scores(&pair_tp, &gt_count, &pred_count, tp);
            HotaAlpha::from_parts(alpha, tp, gt.len() - tp, pred.len() - tp, ass)
        })
        .collect();
    Ok(Hota::from_alphas(per_alpha))
}

/// TP-weighted `[AssA, AssRe, AssPr]`.
fn association_scores(
    pair_tp: &BTreeMap<(u64, u64), usize>,
    gt_count: &BTreeMap<u64, usize>,
    pred_count: &BTreeMap<u64, usize>,
    tp: usize,
) -> [f64; 3] {
    if tp == 0 {
        return [0.0; 3];
    }
    let mut sums = [0.0; 3];
    for (&(g, p), &c) in pair_tp {
        let (c, ng, np) = (c as f64, gt_count[&g] as f64, pred_count[&p] as f64);
        sums[0] += c * c / (ng + np - c);
        sums[1] += c * c / ng;
        sums[2] += c * c / np;
    }
    sums.map(|s| s / tp as f64)
}

/// All scores for one class (or for the whole set).
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub gt_dets: usize,
    pub pred_dets: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub mt: usize,
    pub ml: usize,
    pub gt_tracks: usize,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
    /// `None` when there is no ground truth.
    pub mota: Option<f64>,
    pub motp: Option<f64>,
    pub idf1: Option<f64>,
    pub hota: Option<Hota>,
}

impl Summary {
    fn prediction_only(pred_dets: usize) -> Self {
        Summary {
            gt_dets: 0,
            pred_dets,
            fp: pred_dets,
            fn_: 0,
            idsw: 0,
            mt: 0,
            ml: 0,
            gt_tracks: 0,
            idtp: 0,
            idfp: pred_dets,
            idfn: 0,
            mota: None,
            motp: None,
            idf1: None,
            hota: None,
        }
    }
}

/// Runs every metric on one ground-truth/prediction pair.
pub fn evaluate(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> Summary {
    let clear = match clear_mot(gt, pred, iou_threshold) {
        Ok(c) => c,
        Err(_) => return Summary::prediction_only(pred.len()),
    };
    // both succeed whenever clear_mot does
    let id = idf1(gt, pred, iou_threshold).expect("ground truth present");
    let h = hota(gt, pred).expect("ground truth present");
    Summary {
        gt_dets: clear.gt_dets,
        pred_dets: pred.len(),
        fp: clear.fp,
        fn_: clear.fn_,
        idsw: clear.idsw,
        mt: clear.mt,
        ml: clear.ml,
        gt_tracks: clear.gt_tracks,
        idtp: id.idtp,
        idfp: id.idfp,
        idfn: id.idfn,
        mota: Some(clear.mota),
        motp: Some(clear.motp),
        idf1: Some(id.idf1),
        hota: Some(h),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_id: u32,
    pub summary: Summary,
}

/// Per-class scores, their combination, and class means.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// Counts summed over classes; HOTA association terms are TP-weighted.
    pub aggregate: Summary,
    /// Mean MOTA over classes that have ground truth.
    pub mean_mota: Option<f64>,
    /// Mean IDF1 over classes that have ground truth.
    pub mean_idf1: Option<f64>,
    pub mean_hota: Option<f64>,
}

/// Evaluates every class of the union of both class vocabularies
/// separately and combines the results.
pub fn per_class_report(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> EvalReport {
    let classes: BTreeSet<u32> = gt.classes().union(&pred.classes()).copied().collect();
    let reports: Vec<ClassReport> = classes
        .into_iter()
        .map(|c| ClassReport {
            class_id: c,
            summary: evaluate(&gt.filtered(|o| o.class_id == c), &pred.filtered(|o| o.class_id == c), iou_threshold),
        })
        .collect();
    let aggregate = combine(reports.iter().map(|r| &r.summary));
    let scored: Vec<&Summary> = reports.iter().map(|r| &r.summary).filter(|s| s.mota.is_some()).collect();
    let mean = |f: &dyn Fn(&Summary) -> f64| {
        (!scored.is_empty()).then(|| scored.iter().map(|s| f(s)).sum::<f64>() / scored.len() as f64)
    };
    EvalReport {
        mean_mota: mean(&|s| s.mota.unwrap_or(0.0)),
        mean_idf1: mean(&|s| s.idf1.unwrap_or(0.0)),
        mean_hota: mean(&|s| s.hota.as_ref().map_or(0.0, |h| h.hota)),
        classes: reports,
        aggregate,
    }
}

/// Sums counts across summaries and recomputes the ratios.
pub fn combine<'a>(parts: impl Iterator<Item = &'a Summary> + Clone) -> Summary {
    let sum = |f: fn(&Summary) -> usize| parts.clone().map(f).sum::<usize>();
    let gt_dets = sum(|s| s.gt_dets);
    let fp = sum(|s| s.fp);
    let fn_ = sum(|s| s.fn_);
    let idsw = sum(|s| s.idsw);
    let (idtp, idfp, idfn) = (sum(|s| s.idtp), sum(|s| s.idfp), sum(|s| s.idfn));
    let matches: usize = parts.clone().map(|s| s.gt_dets - s.fn_).sum();
    let iou_sum: f64 = parts
        .clone()
        .filter_map(|s| s.motp.map(|m| m * (s.gt_dets - s.fn_) as f64))
        .sum();

    let has_gt = gt_dets > 0;
    let hota = has_gt.then(|| {
        let alphas = hota_alphas();
        let per_alpha = alphas
            .iter()
            .enumerate()
            .map(|(k, &alpha)| {
                let rows: Vec<&HotaAlpha> = parts.clone().filter_map(|s| s.hota.as_ref()).map(|h| &h.per_alpha[k]).collect();
                let tp: usize = rows.iter().map(|a| a.tp).sum();
                let fn_a: usize = rows.iter().map(|a| a.fn_).sum();
                // classes without ground truth contribute only false positives
                let fp_a: usize = rows.iter().map(|a| a.fp).sum::<usize>()
                    + parts.clone().filter(|s| s.hota.is_none()).map(|s| s.pred_dets).sum::<usize>();
                let weighted = |f: fn(&HotaAlpha) -> f64| {
                    if tp == 0 {
                        0.0
                    } else {
                        rows.iter().map(|a| f(a) * a.tp as f64).sum::<f64>() / tp as f64
                    }
                };
                let ass = [weighted(|a| a.ass_a), weighted(|a| a.ass_re), weighted(|a| a.ass_pr)];
                HotaAlpha::from_parts(alpha, tp, fn_a, fp_a, ass)
            })
            .collect();
        Hota::from_alphas(per_alpha)
    });
    let id = Idf1::from_counts(idtp, idfp, idfn);
    Summary {
        gt_dets,
        pred_dets: sum(|s| s.pred_dets),
        fp,
        fn_,
        idsw,
        mt: sum(|s| s.mt),
        ml: sum(|s| s.ml),
        gt_tracks: sum(|s| s.gt_tracks),
        idtp,
        idfp,
        idfn,
        mota: has_gt.then(|| 1.0 - (fn_ + fp + idsw) as f64 / gt_dets as f64),
        motp: has_gt.then(|| if matches > 0 { iou_sum / matches as f64 } else { 0.0 }),
        idf1: has_gt.then_some(id.idf1),
        hota,
    }
}
