//! Exhaustive-enumeration reference for the tracking metrics. Every
//! per-frame matching and every trajectory assignment is enumerated
//! explicitly; nothing here calls into the library except the conversion
//! to `TrackSet`.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use quasitrack_core::metrics::{ObjectBox, TrackSet};
use quasitrack_core::BoundingBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub frame: u32,
    pub id: u64,
    pub class_id: u32,
    pub b: [f64; 4],
    pub visible: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Instance {
    pub gt: Vec<Row>,
    pub pred: Vec<Row>,
}

impl Instance {
    pub fn track_sets(&self) -> (TrackSet, TrackSet) {
        (to_set(&self.gt), to_set(&self.pred))
    }
}

pub fn to_set(rows: &[Row]) -> TrackSet {
    let mut s = TrackSet::new();
    for r in rows {
        let bbox = BoundingBox::new(r.b[0], r.b[1], r.b[2], r.b[3]).unwrap();
        s.push(r.frame, ObjectBox { id: r.id, class_id: r.class_id, bbox, visible: r.visible });
    }
    s
}

pub fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Random small instance: up to 4 identities, up to 5 frames, jittered
/// predictions with occasional relabels, misses and clutter.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = rng.random_range(1..=4u64);
    let frames = rng.random_range(1..=5u32);
    let mut inst = Instance::default();
    let mut pos: Vec<[f64; 2]> = (0..ids).map(|_| [rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)]).collect();
    let mut label: Vec<u64> = (0..ids).map(|i| 10 + i).collect();
    for f in 1..=frames {
        let mut used = BTreeSet::new();
        for i in 0..ids as usize {
            pos[i][0] += rng.random_range(-3.0..3.0);
            pos[i][1] += rng.random_range(-3.0..3.0);
            if !rng.random_bool(0.85) {
                continue;
            }
            let g = [pos[i][0], pos[i][1], pos[i][0] + 10.0, pos[i][1] + 10.0];
            inst.gt.push(Row { frame: f, id: i as u64 + 1, class_id: 1, b: g, visible: rng.random_bool(0.9) });
            if rng.random_bool(0.25) {
                label[i] = rng.random_range(10..16);
            }
            if rng.random_bool(0.8) && used.insert(label[i]) {
                let j = 4.0;
                let p = [
                    g[0] + rng.random_range(-j..j),
                    g[1] + rng.random_range(-j..j),
                    g[2] + rng.random_range(-j..j),
                    g[3] + rng.random_range(-j..j),
                ];
                if p[2] > p[0] && p[3] > p[1] {
                    inst.pred.push(Row { frame: f, id: label[i], class_id: 1, b: p, visible: true });
                }
            }
        }
        if rng.random_bool(0.3) {
            let id = rng.random_range(10..17);
            if used.insert(id) {
                let x = rng.random_range(0.0..35.0);
                let y = rng.random_range(0.0..35.0);
                inst.pred.push(Row { frame: f, id, class_id: 1, b: [x, y, x + 10.0, y + 10.0], visible: true });
            }
        }
    }
    inst
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClearRef {
    pub mota: f64,
    pub motp: f64,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub mt: usize,
    pub ml: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Idf1Ref {
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HotaRef {
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

#[derive(Debug, Clone)]
pub struct Reference {
    pub clear: ClearRef,
    pub idf1: Idf1Ref,
    pub hota: Vec<HotaRef>,
    /// Some optimum was tied with a different matching.
    pub ambiguous: bool,
}

/// Enumerates every partial matching of `n x m` over admissible pairs and
/// returns the best by (pairs, IoU sum). The flag reports a tie.
fn best_matching(ious: &[Vec<f64>], thr: f64) -> (Vec<(usize, usize)>, bool) {
    let n = ious.len();
    let m = ious.first().map_or(0, Vec::len);
    let mut all: Vec<(usize, f64, Vec<(usize, usize)>)> = Vec::new();
    fn go(i: usize, n: usize, m: usize, ious: &[Vec<f64>], thr: f64, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<(usize, f64, Vec<(usize, usize)>)>) {
        if i == n {
            let s = cur.iter().map(|&(a, b)| ious[a][b]).sum();
            out.push((cur.len(), s, cur.clone()));
            return;
        }
        go(i + 1, n, m, ious, thr, used, cur, out);
        for j in 0..m {
            if !used[j] && ious[i][j] >= thr {
                used[j] = true;
                cur.push((i, j));
                go(i + 1, n, m, ious, thr, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    go(0, n, m, ious, thr, &mut vec![false; m], &mut Vec::new(), &mut all);
    let best_n = all.iter().map(|a| a.0).max().unwrap_or(0);
    let best_s = all.iter().filter(|a| a.0 == best_n).map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<_> = all.iter().filter(|a| a.0 == best_n && a.1 >= best_s - 1e-9).collect();
    (winners[0].2.clone(), winners.len() > 1)
}

fn frames_of(inst: &Instance) -> Vec<u32> {
    inst.gt.iter().chain(&inst.pred).map(|r| r.frame).collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn evaluate(inst: &Instance, thr: f64) -> Option<Reference> {
    let gt: Vec<Row> = inst.gt.iter().copied().filter(|r| r.visible).collect();
    if gt.is_empty() {
        return None;
    }
    let pred = &inst.pred;
    let frames = frames_of(inst);
    let mut ambiguous = false;

    // CLEAR
    let mut clear = ClearRef::default();
    let mut prev: BTreeMap<u64, u64> = BTreeMap::new();
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut covered: BTreeMap<u64, usize> = BTreeMap::new();
    let mut matches = 0usize;
    let mut iou_sum = 0.0;
    for &f in &frames {
        let g: Vec<&Row> = gt.iter().filter(|r| r.frame == f).collect();
        let p: Vec<&Row> = pred.iter().filter(|r| r.frame == f).collect();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (i, gr) in g.iter().enumerate() {
            if let Some(&pid) = prev.get(&gr.id) {
                if let Some(j) = p.iter().position(|pr| pr.id == pid) {
                    if box_iou(&gr.b, &p[j].b) >= thr {
                        pairs.push((i, j));
                    }
                }
            }
        }
        let gi: Vec<usize> = (0..g.len()).filter(|i| !pairs.iter().any(|x| x.0 == *i)).collect();
        let pj: Vec<usize> = (0..p.len()).filter(|j| !pairs.iter().any(|x| x.1 == *j)).collect();
        let ious: Vec<Vec<f64>> = gi.iter().map(|&i| pj.iter().map(|&j| box_iou(&g[i].b, &p[j].b)).collect()).collect();
        let (rest, tie) = best_matching(&ious, thr);
        ambiguous |= tie;
        pairs.extend(rest.into_iter().map(|(a, b)| (gi[a], pj[b])));
        prev.clear();
        for &(i, j) in &pairs {
            if last.get(&g[i].id).is_some_and(|&q| q != p[j].id) {
                clear.idsw += 1;
            }
            last.insert(g[i].id, p[j].id);
            prev.insert(g[i].id, p[j].id);
            *covered.entry(g[i].id).or_default() += 1;
            iou_sum += box_iou(&g[i].b, &p[j].b);
        }
        matches += pairs.len();
        clear.fn_ += g.len() - pairs.len();
        clear.fp += p.len() - pairs.len();
    }
    let mut lens: BTreeMap<u64, usize> = BTreeMap::new();
    for r in &gt {
        *lens.entry(r.id).or_default() += 1;
    }
    for (id, n) in &lens {
        let c = covered.get(id).copied().unwrap_or(0);
        if 5 * c >= 4 * n {
            clear.mt += 1;
        } else if 5 * c <= *n {
            clear.ml += 1;
        }
    }
    clear.mota = 1.0 - (clear.fp + clear.fn_ + clear.idsw) as f64 / gt.len() as f64;
    clear.motp = if matches == 0 { 0.0 } else { iou_sum / matches as f64 };

    // IDF1: all injective maps from GT ids to pred ids (or unassigned)
    let gids: Vec<u64> = lens.keys().copied().collect();
    let pids: Vec<u64> = pred.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let overlap = |g: u64, p: u64| -> usize {
        gt.iter()
            .filter(|a| a.id == g)
            .filter(|a| pred.iter().any(|b| b.id == p && b.frame == a.frame && box_iou(&a.b, &b.b) >= thr))
            .count()
    };
    fn best_map(k: usize, gids: &[u64], pids: &[u64], used: &mut Vec<bool>, ov: &dyn Fn(u64, u64) -> usize) -> usize {
        if k == gids.len() {
            return 0;
        }
        let mut best = best_map(k + 1, gids, pids, used, ov);
        for j in 0..pids.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(ov(gids[k], pids[j]) + best_map(k + 1, gids, pids, used, ov));
                used[j] = false;
            }
        }
        best
    }
    let idtp = best_map(0, &gids, &pids, &mut vec![false; pids.len()], &overlap);
    let idfp = pred.len() - idtp;
    let idfn = gt.len() - idtp;
    let idf1 = Idf1Ref { idf1: idtp as f64 / (idtp as f64 + 0.5 * idfn as f64 + 0.5 * idfp as f64), idtp, idfp, idfn };

    // HOTA
    let mut pred_len: BTreeMap<u64, usize> = BTreeMap::new();
    for r in pred {
        *pred_len.entry(r.id).or_default() += 1;
    }
    let mut hota = Vec::new();
    for k in 1..=19 {
        let alpha = k as f64 * 0.05;
        let mut tps: Vec<(u64, u64)> = Vec::new();
        for &f in &frames {
            let g: Vec<&Row> = gt.iter().filter(|r| r.frame == f).collect();
            let p: Vec<&Row> = pred.iter().filter(|r| r.frame == f).collect();
            let ious: Vec<Vec<f64>> = g.iter().map(|a| p.iter().map(|b| box_iou(&a.b, &b.b)).collect()).collect();
            let (m, tie) = best_matching(&ious, alpha);
            ambiguous |= tie;
            tps.extend(m.into_iter().map(|(i, j)| (g[i].id, p[j].id)));
        }
        let tp = tps.len();
        let fn_ = gt.len() - tp;
        let fp = pred.len() - tp;
        let (mut a, mut re, mut pr) = (0.0, 0.0, 0.0);
        // mean over each TP of its own TPA/(TPA+FNA+FPA)
        for &(g, p) in &tps {
            let tpa = tps.iter().filter(|&&x| x == (g, p)).count() as f64;
            let fna = lens[&g] as f64 - tpa;
            let fpa = pred_len[&p] as f64 - tpa;
            a += tpa / (tpa + fna + fpa);
            re += tpa / (tpa + fna);
            pr += tpa / (tpa + fpa);
        }
        let div = |x: f64| if tp == 0 { 0.0 } else { x / tp as f64 };
        let det_a = tp as f64 / (tp + fn_ + fp) as f64;
        let ass_a = div(a);
        hota.push(HotaRef {
            tp,
            fn_,
            fp,
            hota: (det_a * ass_a).sqrt(),
            det_a,
            ass_a,
            det_re: tp as f64 / (tp + fn_) as f64,
            det_pr: if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 },
            ass_re: div(re),
            ass_pr: div(pr),
        });
    }
    Some(Reference { clear, idf1, hota, ambiguous })
}

fn close(name: &str, a: f64, b: f64) -> Result<(), String> {
    if (a - b).abs() <= 1e-12 {
        Ok(())
    } else {
        Err(format!("{name}: library {a} vs oracle {b}"))
    }
}

fn same(name: &str, a: usize, b: usize) -> Result<(), String> {
    if a == b {
        Ok(())
    } else {
        Err(format!("{name}: library {a} vs oracle {b}"))
    }
}

/// Compares the library against the oracle. `Ok(false)` means the instance
/// was skipped (no visible ground truth or a tied optimum).
pub fn check(inst: &Instance, thr: f64) -> Result<bool, String> {
    use quasitrack_core::metrics::{clear_mot, hota, idf1};
    let (gt, pred) = inst.track_sets();
    let Some(r) = evaluate(inst, thr) else {
        return if clear_mot(&gt, &pred, thr).is_err() { Ok(false) } else { Err("expected NoGroundTruth".into()) };
    };
    if r.ambiguous {
        return Ok(false);
    }
    let c = clear_mot(&gt, &pred, thr).map_err(|e| e.to_string())?;
    same("FP", c.fp, r.clear.fp)?;
    same("FN", c.fn_, r.clear.fn_)?;
    same("IDSW", c.idsw, r.clear.idsw)?;
    same("MT", c.mt, r.clear.mt)?;
    same("ML", c.ml, r.clear.ml)?;
    close("MOTA", c.mota, r.clear.mota)?;
    close("MOTP", c.motp, r.clear.motp)?;
    let i = idf1(&gt, &pred, thr).map_err(|e| e.to_string())?;
    same("IDTP", i.idtp, r.idf1.idtp)?;
    same("IDFP", i.idfp, r.idf1.idfp)?;
    same("IDFN", i.idfn, r.idf1.idfn)?;
    close("IDF1", i.idf1, r.idf1.idf1)?;
    let h = hota(&gt, &pred).map_err(|e| e.to_string())?;
    for (a, b) in h.per_alpha.iter().zip(&r.hota) {
        same("TP", a.tp, b.tp)?;
        same("FN", a.fn_, b.fn_)?;
        same("FP", a.fp, b.fp)?;
        close("HOTA", a.hota, b.hota)?;
        close("DetA", a.det_a, b.det_a)?;
        close("AssA", a.ass_a, b.ass_a)?;
        close("DetRe", a.det_re, b.det_re)?;
        close("DetPr", a.det_pr, b.det_pr)?;
        close("AssRe", a.ass_re, b.ass_re)?;
        close("AssPr", a.ass_pr, b.ass_pr)?;
    }
    let mean = r.hota.iter().map(|x| x.hota).sum::<f64>() / 19.0;
    close("HOTA mean", h.hota, mean)?;
    Ok(true)
}
