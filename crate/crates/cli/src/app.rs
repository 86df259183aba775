//! Command-line surface.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::builder::PossibleValuesParser;
use clap::{Args, CommandFactory, Parser, Subcommand};
use quasitrack_core::metrics::{per_class_report, EvalReport, Summary};
use quasitrack_core::synth::{generate, subsample, WorldConfig};
use quasitrack_core::tracker::{TrackHistory, Tracker, TrackerConfig};
use thiserror::Error;

use crate::ablate::{self, AblateError, AblationSpec};
use crate::formats::{self, DetectionReader, FormatError, Role};
use crate::gradcheck::{self, GradcheckOptions, GRADCHECK_TOLERANCE};
use crate::profiles::{self, ConfigError, PROFILE_NAMES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Invariant(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Invariant(_) => EXIT_INVARIANT,
        }
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::UnknownProfile(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<AblateError> for Failure {
    fn from(e: AblateError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<quasitrack_core::Error> for Failure {
    fn from(e: quasitrack_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "quasitrack", version, about = "Appearance-only multi-object tracking")]
pub struct Cli {
    /// Base seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Benchmark tracker settings.
    #[arg(long, global = true, value_parser = PossibleValuesParser::new(PROFILE_NAMES))]
    pub profile: Option<String>,
    /// TOML tracker settings; keys override the profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track detection files and write MOT rows.
    Track(TrackArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Write a synthetic scenario as det.txt and gt.txt.
    Synth(SynthArgs),
    /// Run an ablation sweep and write CSV.
    Ablate(AblateArgs),
    /// Compare analytic loss gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Detection files; each is an independent sequence.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output file for a single input (stdout when omitted).
    #[arg(short, long, conflicts_with = "out_dir")]
    pub output: Option<PathBuf>,
    /// Output directory; each input writes `<stem>.txt`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub gt: PathBuf,
    pub pred: PathBuf,
    /// Print one row per class.
    #[arg(long)]
    pub per_class: bool,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Machine-readable report.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "clean", value_parser = PossibleValuesParser::new(["clean", "noisy", "moving"]))]
    pub preset: String,
    /// TOML world settings overriding the preset.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Keep every k-th frame.
    #[arg(long, default_value_t = 1)]
    pub subsample: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// TOML sweep file.
    pub spec: Option<PathBuf>,
    /// Sweep axis as `key=v1,v2`, e.g. `metric=cosine,bisoftmax`.
    #[arg(long = "axis")]
    pub axes: Vec<String>,
    /// Number of consecutive seeds when the sweep file lists none.
    #[arg(long)]
    pub runs: Option<usize>,
    /// CSV output (stdout when omitted).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 16, 64])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub keys: usize,
    #[arg(long, default_value_t = 8)]
    pub refs: usize,
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    #[arg(long, default_value_t = 0.25)]
    pub embed_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub aux_weight: f64,
    /// Perturb the analytic gradient; the check must fail.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return EXIT_OK;
            }
            let text = e.render().to_string();
            eprint!("{text}");
            if !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return EXIT_USAGE;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Track(a) => track_command(cli, a),
        Command::Eval(a) => eval_command(a),
        Command::Synth(a) => synth_command(cli, a),
        Command::Ablate(a) => ablate_command(cli, a),
        Command::Gradcheck(a) => gradcheck_command(cli, a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Data(format!("cannot open {}: {e}", path.display())))
}

fn tracker_config(cli: &Cli) -> Result<TrackerConfig, Failure> {
    let cfg = profiles::load_config(cli.profile.as_deref(), cli.config.as_deref())?;
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

/// Tracks one detection stream.
pub fn track_stream<R: BufRead>(input: R, cfg: &TrackerConfig) -> Result<Vec<TrackHistory>, Failure> {
    let mut reader = DetectionReader::new(input)?;
    let mut tracker = Tracker::new(cfg.clone())?;
    while let Some((frame, dets)) = reader.next_frame()? {
        tracker
            .step(frame, &dets)
            .map_err(|e| Failure::Data(format!("frame {frame}: {e}")))?;
    }
    Ok(tracker.finish())
}

fn write_output(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    match path {
        Some(p) => formats::write_atomic(p, write)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn track_one(input: &Path, output: Option<&Path>, cfg: &TrackerConfig) -> Result<(), Failure> {
    let start = Instant::now();
    let histories = track_stream(open(input)?, cfg).map_err(|f| match f {
        Failure::Data(m) => Failure::Data(format!("{}: {m}", input.display())),
        other => other,
    })?;
    let rows = formats::histories_to_mot(&histories);
    write_output(output, |w| formats::write_mot(w, &rows))?;
    eprintln!(
        "{}: {} tracks, {} rows, {:.1} ms",
        input.display(),
        histories.len(),
        rows.len(),
        start.elapsed().as_secs_f64() * 1e3
    );
    Ok(())
}

fn track_command(cli: &Cli, a: &TrackArgs) -> Result<(), Failure> {
    let cfg = tracker_config(cli)?;
    if a.inputs.len() == 1 && a.out_dir.is_none() {
        return track_one(&a.inputs[0], a.output.as_deref(), &cfg);
    }
    let dir = a
        .out_dir
        .as_deref()
        .ok_or_else(|| Failure::Usage("several inputs need --out-dir".into()))?;
    let outputs: Vec<PathBuf> = a
        .inputs
        .iter()
        .map(|p| dir.join(format!("{}.txt", p.file_stem().unwrap_or_default().to_string_lossy())))
        .collect();
    // one worker per sequence; workers share only the read-only config
    let results: Vec<Result<(), Failure>> = std::thread::scope(|scope| {
        let handles: Vec<_> = a
            .inputs
            .iter()
            .zip(&outputs)
            .map(|(i, o)| {
                let cfg = &cfg;
                scope.spawn(move || track_one(i, Some(o), cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("tracking worker panicked")).collect()
    });
    results.into_iter().collect()
}

fn fmt_ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:.4}", x))
}

fn summary_line(name: &str, s: &Summary) -> String {
    format!(
        "{name:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7} {:>5} {:>4} {:>4}",
        s.gt_dets,
        s.pred_dets,
        fmt_ratio(s.mota),
        fmt_ratio(s.idf1),
        fmt_ratio(s.hota.as_ref().map(|h| h.hota)),
        s.fp,
        s.fn_,
        s.idsw,
        s.mt,
        s.ml
    )
}

/// Human-readable report.
pub fn format_report(r: &EvalReport, per_class: bool) -> String {
    let mut out = format!(
        "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7} {:>5} {:>4} {:>4}\n",
        "class", "gt", "pred", "MOTA", "IDF1", "HOTA", "FP", "FN", "IDSW", "MT", "ML"
    );
    if per_class {
        for c in &r.classes {
            out.push_str(&summary_line(&c.class_id.to_string(), &c.summary));
            out.push('\n');
        }
    }
    out.push_str(&summary_line("all", &r.aggregate));
    out.push('\n');
    if per_class {
        out.push_str(&format!(
            "mMOTA {}  mIDF1 {}  mHOTA {}\n",
            fmt_ratio(r.mean_mota),
            fmt_ratio(r.mean_idf1),
            fmt_ratio(r.mean_hota)
        ));
    }
    out
}

fn summary_json(s: &Summary) -> serde_json::Value {
    let h = s.hota.as_ref();
    serde_json::json!({
        "gt_dets": s.gt_dets,
        "pred_dets": s.pred_dets,
        "fp": s.fp,
        "fn": s.fn_,
        "idsw": s.idsw,
        "mt": s.mt,
        "ml": s.ml,
        "gt_tracks": s.gt_tracks,
        "idtp": s.idtp,
        "idfp": s.idfp,
        "idfn": s.idfn,
        "mota": s.mota,
        "motp": s.motp,
        "idf1": s.idf1,
        "hota": h.map(|h| h.hota),
        "deta": h.map(|h| h.det_a),
        "assa": h.map(|h| h.ass_a),
        "detre": h.map(|h| h.det_re),
        "detpr": h.map(|h| h.det_pr),
        "assre": h.map(|h| h.ass_re),
        "asspr": h.map(|h| h.ass_pr),
    })
}

/// Machine-readable report; keys are sorted.
pub fn report_json(r: &EvalReport) -> serde_json::Value {
    let classes: serde_json::Map<String, serde_json::Value> =
        r.classes.iter().map(|c| (c.class_id.to_string(), summary_json(&c.summary))).collect();
    serde_json::json!({
        "aggregate": summary_json(&r.aggregate),
        "classes": classes,
        "mean_mota": r.mean_mota,
        "mean_idf1": r.mean_idf1,
        "mean_hota": r.mean_hota,
    })
}

fn eval_command(a: &EvalArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&a.iou) {
        return Err(Failure::Usage(format!("--iou {} is outside [0, 1]", a.iou)));
    }
    let gt = formats::to_track_set(&formats::read_mot(open(&a.gt)?)?, Role::GroundTruth);
    let pred = formats::to_track_set(&formats::read_mot(open(&a.pred)?)?, Role::Prediction);
    if let (Some((g0, g1)), Some((p0, p1))) = (gt.frame_range(), pred.frame_range()) {
        if p1 < g0 || g1 < p0 {
            eprintln!("warning: frame ranges {g0}..={g1} and {p0}..={p1} are disjoint; scoring their union");
        }
    }
    let report = per_class_report(&gt, &pred, a.iou);
    print!("{}", format_report(&report, a.per_class));
    if let Some(path) = &a.json {
        let text = serde_json::to_string_pretty(&report_json(&report)).expect("plain values");
        formats::write_atomic(path, |w| writeln!(w, "{text}"))?;
    }
    Ok(())
}

fn read_toml_table(path: &Path) -> Result<toml::Table, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    text.parse().map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn synth_command(cli: &Cli, a: &SynthArgs) -> Result<(), Failure> {
    if a.subsample == 0 {
        return Err(Failure::Usage("--subsample must be positive".into()));
    }
    let mut spec = AblationSpec::default();
    if let Some(path) = &a.world {
        spec.scenario = read_toml_table(path)?;
    }
    spec.scenario.insert("preset".into(), toml::Value::String(a.preset.clone()));
    let world: WorldConfig = spec.world(cli.seed)?;
    let scenario = subsample(&generate(&world)?, a.subsample);
    formats::export_scenario(&scenario, &a.out_dir)?;
    eprintln!(
        "{}: {} frames, {} detections, {} identities",
        a.out_dir.display(),
        scenario.frames.len(),
        scenario.detection_count(),
        world.identities
    );
    Ok(())
}

fn ablate_command(cli: &Cli, a: &AblateArgs) -> Result<(), Failure> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Data(format!("cannot read {}: {e}", p.display())))?;
            AblationSpec::parse(&text)?
        }
        None => AblationSpec::default(),
    };
    for axis in &a.axes {
        spec.set_axis(axis).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(r) = a.runs {
        spec.runs = r;
    }
    let base = tracker_config(cli)?;
    let start = Instant::now();
    let rows = ablate::run(&spec, &base, cli.seed)?;
    let mut buf = Vec::new();
    ablate::write_csv(&mut buf, &rows)?;
    write_output(a.output.as_deref(), |w| w.write_all(&buf))?;
    eprintln!("{} rows, {:.1} s", rows.len(), start.elapsed().as_secs_f64());
    Ok(())
}

fn gradcheck_command(cli: &Cli, a: &GradcheckArgs) -> Result<(), Failure> {
    if a.dims.is_empty() || a.dims.contains(&0) || a.runs == 0 {
        return Err(Failure::Usage("dims and runs must be positive".into()));
    }
    let opts = GradcheckOptions {
        dims: a.dims.clone(),
        keys: a.keys,
        refs: a.refs,
        runs: a.runs,
        seed: cli.seed,
        embed_weight: a.embed_weight,
        aux_weight: a.aux_weight,
        corrupt: a.corrupt,
        ..GradcheckOptions::default()
    };
    let report = gradcheck::run(&opts)?;
    for d in &opts.dims {
        let worst = report.runs.iter().filter(|r| r.dim == *d).map(|r| r.max_rel_err).fold(0.0, f64::max);
        println!("dim {d:>4}: max relative error {worst:.3e}");
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!("{verdict}: max relative error {:.3e} (tolerance {GRADCHECK_TOLERANCE:e})", report.max_rel_err);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Invariant(format!("gradient check failed: {:.3e}", report.max_rel_err)))
    }
}
