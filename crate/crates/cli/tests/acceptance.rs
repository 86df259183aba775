//! End-to-end acceptance: every criterion runs once and prints one line.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::fs;
use std::process::Command;
use std::time::Instant;

use quasitrack::ablate::{self, AblationSpec, Baseline, LossName, Toggle};
use quasitrack::gradcheck::{self, GradcheckOptions};
use quasitrack_core::contrastive::{single_positive_logsum_form, single_positive_softmax_form};
use quasitrack_core::metrics::{clear_mot, idf1};
use quasitrack_core::similarity::{bisoftmax_from_logits, bisoftmax_matrix, logits, softmax_terms};
use quasitrack_core::synth::{detection_oracle, generate, histories_to_set, WorldConfig};
use quasitrack_core::tracker::{Detection, SimilarityMetric, Tracker, TrackerConfig};
use quasitrack_core::{BoundingBox, Embedding, SimilarityMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = (bool, String);

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let report = gradcheck::run(&GradcheckOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let batches = report.runs.len() / 3;
    (
        report.max_rel_err < 1e-6 && secs < 30.0 && batches >= 50,
        format!("{batches} batches, D in {{4, 16, 64}}, max relative error {:.2e}, {secs:.1} s", report.max_rel_err),
    )
}

fn single_positive_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..20);
        let scale = rng.random_range(0.1..20.0);
        let pos = scale * rng.sample::<f64, _>(StandardNormal);
        let negs: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let (a, b) = (single_positive_softmax_form(pos, &negs), single_positive_logsum_form(pos, &negs));
        worst = worst.max((a - b).abs() / a.abs().max(1.0));
    }
    (worst <= 1e-12, format!("1000 instances, max deviation {worst:.2e}"))
}

fn gaussian_set(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> Vec<Embedding> {
    (0..n)
        .map(|_| Embedding::new((0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap())
        .collect()
}

fn bisoftmax_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut range_ok, mut sum_err, mut shift_err): (bool, f64, f64) = (true, 0.0, 0.0);
    for _ in 0..500 {
        let (n, m, dim) = (rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..16));
        let scale = rng.random_range(0.1..5.0);
        let (d, c) = (gaussian_set(&mut rng, n, dim, scale), gaussian_set(&mut rng, m, dim, scale));
        let l = logits(&d, &c).unwrap();
        let f = bisoftmax_from_logits(&l);
        range_ok &= f.values().iter().all(|&v| v > 0.0 && v <= 1.0);
        let t = softmax_terms(&l);
        for i in 0..n {
            sum_err = sum_err.max(((0..m).map(|j| t.forward.get(i, j)).sum::<f64>() - 1.0).abs());
        }
        for j in 0..m {
            sum_err = sum_err.max(((0..n).map(|i| t.backward.get(i, j)).sum::<f64>() - 1.0).abs());
        }
        let shift = rng.random_range(-100.0..100.0);
        let shifted = SimilarityMatrix::from_values(n, m, l.values().iter().map(|v| v + shift).collect());
        for (a, b) in f.values().iter().zip(bisoftmax_from_logits(&shifted).values()) {
            shift_err = shift_err.max((a - b).abs());
        }
    }
    let single = (0..100).all(|_| {
        let dim = rng.random_range(1..16);
        let (d, c) = (gaussian_set(&mut rng, 1, dim, 3.0), gaussian_set(&mut rng, 1, dim, 3.0));
        bisoftmax_matrix(&d, &c).unwrap().get(0, 0) == 1.0
    });
    (
        range_ok && single && sum_err <= 1e-12 && shift_err <= 1e-12,
        format!("range {range_ok}, 1x1 exact {single}, softmax sum error {sum_err:.1e}, shift error {shift_err:.1e}"),
    )
}

fn detection_oracle_analogue() -> Outcome {
    let start = Instant::now();
    let s = generate(&WorldConfig::clean(0)).unwrap();
    let frames = detection_oracle(&s, 0.0, 0);
    // boxes are ground truth, so duplicate removal is off
    let cfg = TrackerConfig { nms_threshold: 1.0, ..TrackerConfig::default() };
    let mut t = Tracker::new(cfg).unwrap();
    for f in &frames {
        t.step(f.frame, &f.detections).unwrap();
    }
    let pred = histories_to_set(&t.finish());
    let c = clear_mot(&s.gt, &pred, 0.5).unwrap();
    let i = idf1(&s.gt, &pred, 0.5).unwrap();
    let secs = start.elapsed().as_secs_f64();
    (
        c.mota == 1.0 && i.idf1 == 1.0 && c.idsw == 0 && secs < 10.0,
        format!("20 identities x 200 frames: MOTA {}, IDF1 {}, IDSW {}, {secs:.2} s", c.mota, i.idf1, c.idsw),
    )
}

fn metrics_oracle() -> Outcome {
    let (mut checked, mut failures, mut seed) = (0usize, Vec::new(), 0u64);
    while checked < 300 && seed < 2000 {
        let inst = oracle::random_instance(seed);
        match oracle::check(&inst, 0.5) {
            Ok(true) => checked += 1,
            Ok(false) => {}
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
        seed += 1;
    }
    (
        checked >= 200 && failures.is_empty(),
        format!("{checked} instances agree, {} disagree{}", failures.len(), failures.first().map_or(String::new(), |f| format!(" ({f})"))),
    )
}

fn table5_direction() -> Outcome {
    let mut spec = AblationSpec::default();
    spec.set_axis("metric=cosine,bisoftmax").unwrap();
    spec.set_axis("backdrops=on,off").unwrap();
    let rows = ablate::run(&spec, &TrackerConfig::default(), 0).unwrap();
    let idf1_of = |m: SimilarityMetric| {
        ablate::mean(&rows, |c| c.metric == m && c.backdrops == Toggle::On, |r| r.idf1).unwrap()
    };
    let idsw_of = |b: Toggle| {
        ablate::mean(&rows, |c| c.metric == SimilarityMetric::BiSoftmax && c.backdrops == b, |r| Some(r.idsw as f64)).unwrap()
    };
    let (bi, cos) = (idf1_of(SimilarityMetric::BiSoftmax), idf1_of(SimilarityMetric::Cosine));
    let (on, off) = (idsw_of(Toggle::On), idsw_of(Toggle::Off));
    (
        bi > cos && on < off,
        format!("10 seeds: IDF1 bi-softmax {bi:.4} vs cosine {cos:.4}; IDSW backdrops on {on:.1} vs off {off:.1}"),
    )
}

fn loss_direction() -> Outcome {
    let mut spec = AblationSpec::default();
    spec.scenario.insert("frames".into(), toml::Value::Integer(5));
    spec.sweep.loss = Some(vec![LossName::SinglePositive, LossName::AccumulatedMulti]);
    let rows = ablate::run(&spec, &TrackerConfig::default(), 0).unwrap();
    let acc = |l: LossName| -> Vec<f64> { rows.iter().filter(|r| r.config.loss == Some(l)).map(|r| r.accuracy.unwrap()).collect() };
    let (single, multi) = (acc(LossName::SinglePositive), acc(LossName::AccumulatedMulti));
    let wins = single.iter().zip(&multi).filter(|(s, m)| m >= s).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (
        wins == single.len() && single.len() == 10 && mean(&multi) >= 0.95,
        format!(
            "accuracy multi-positive {:.4} vs single-positive {:.4}; multi >= single on {wins}/{} seeds",
            mean(&multi),
            mean(&single),
            single.len()
        ),
    )
}

fn frame_rate_direction() -> Outcome {
    let mut spec = AblationSpec::default();
    spec.scenario.insert("preset".into(), toml::Value::String("moving".into()));
    spec.runs = 3;
    spec.sweep.baseline = Some(vec![Baseline::Appearance, Baseline::Iou]);
    spec.sweep.subsample = Some(vec![1, 5, 30]);
    let rows = ablate::run(&spec, &TrackerConfig::default(), 0).unwrap();
    let at = |b: Baseline, k: usize| ablate::mean(&rows, |c| c.baseline == b && c.subsample == k, |r| r.idf1).unwrap();
    let drop = |b: Baseline, k: usize| (at(b, 1) - at(b, k)) / at(b, 1);
    let ok = [5, 30].iter().all(|&k| drop(Baseline::Appearance, k) < drop(Baseline::Iou, k))
        && at(Baseline::Iou, 30) < 0.2
        && at(Baseline::Appearance, 30) > 0.8;
    let fmt = |b: Baseline| format!("{:.3}/{:.3}/{:.3}", at(b, 1), at(b, 5), at(b, 30));
    (ok, format!("IDF1 at k = 1/5/30: appearance {}, IoU baseline {}", fmt(Baseline::Appearance), fmt(Baseline::Iou)))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_quasitrack")).current_dir(dir.path()).args(args).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["synth", "--preset", "noisy", "--out-dir", "s", "--seed", "11"]);
    run(&["track", "s/det.txt", "-o", "t1.txt"]);
    run(&["track", "s/det.txt", "-o", "t2.txt"]);
    let sweep = ["ablate", "--axis", "metric=cosine,bisoftmax", "--axis", "subsample=1,2", "--runs", "3", "--seed", "11"];
    run(&[&sweep[..], &["-o", "a1.csv"]].concat());
    run(&[&sweep[..], &["-o", "a2.csv"]].concat());
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    let track_same = read("t1.txt") == read("t2.txt") && !read("t1.txt").is_empty();
    let ablate_same = read("a1.csv") == read("a2.csv");
    (track_same && ablate_same, format!("track identical {track_same}, ablate identical {ablate_same}"))
}

fn throughput() -> Outcome {
    const DIM: usize = 256;
    const TRACKS: usize = 500;
    const PER_FRAME: usize = 100;
    const FRAMES: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let scale = (10.0 / DIM as f64).sqrt();
    let identities: Vec<Detection> = (0..TRACKS)
        .map(|i| Detection {
            bbox: BoundingBox::from_xywh((i % 25) as f64 * 50.0, (i / 25) as f64 * 50.0, 40.0, 40.0).unwrap(),
            class_id: 0,
            score: 0.9,
            embedding: gaussian_set(&mut rng, 1, DIM, scale).pop().unwrap(),
        })
        .collect();
    let mut t = Tracker::new(TrackerConfig::default()).unwrap();
    t.step(1, &identities).unwrap();
    let frames: Vec<Vec<Detection>> = (0..FRAMES)
        .map(|f| (0..PER_FRAME).map(|i| identities[(f * PER_FRAME + i) % TRACKS].clone()).collect())
        .collect();
    let candidates = t.tracks().len();
    let start = Instant::now();
    let mut matched = 0;
    for (f, dets) in frames.iter().enumerate() {
        matched += t.step(f as u32 + 2, dets).unwrap().len();
    }
    let fps = FRAMES as f64 / start.elapsed().as_secs_f64();
    (
        fps >= 100.0 && candidates == TRACKS && matched == FRAMES * PER_FRAME,
        format!("{PER_FRAME} detections x {candidates} candidates, D = {DIM}: {fps:.0} frames/s"),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_correctness),
        ("single-positive identity", single_positive_identity),
        ("bi-softmax invariants", bisoftmax_invariants),
        ("detection oracle", detection_oracle_analogue),
        ("metrics oracle", metrics_oracle),
        ("matching ablation direction", table5_direction),
        ("loss ablation direction", loss_direction),
        ("frame-rate robustness", frame_rate_direction),
        ("determinism", determinism),
        ("throughput", throughput),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check();
        println!("criterion {:>2} {:<28} {}  {detail}", i + 1, name, if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
