//! Text formats.
//!
//! Detections with embeddings:
//!
//! ```text
//! # quasitrack detections version=1 dim=3
//! 1,0,0.9,10.0,20.0,40.0,80.0,0.5,-1.25,3.0
//! ```
//!
//! Columns are `frame,class,score,x1,y1,x2,y2` followed by `dim` embedding
//! components. Frames are non-decreasing.
//!
//! Tracks and ground truth use the 9-column MOT layout
//! `frame,id,x,y,w,h,conf,class,visibility`.

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use quasitrack_core::metrics::{ObjectBox, TrackSet};
use quasitrack_core::synth::Scenario;
use quasitrack_core::tracker::{Detection, TrackHistory};
use quasitrack_core::{BoundingBox, Embedding};
use thiserror::Error;

pub const DETECTION_FORMAT_VERSION: u32 = 1;
const HEADER_TAG: &str = "# quasitrack detections";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse { line, message: message.into() }
}

/// Shortest representation that parses back to the same value.
fn real(v: f64) -> String {
    format!("{v:?}")
}

fn field<T: std::str::FromStr>(line: usize, name: &str, s: &str) -> Result<T, FormatError> {
    s.trim().parse().map_err(|_| parse_err(line, format!("cannot parse {name} from {s:?}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub frame: u32,
    pub detection: Detection,
}

pub fn detection_header(dim: usize) -> String {
    format!("{HEADER_TAG} version={DETECTION_FORMAT_VERSION} dim={dim}")
}

pub fn format_detection(frame: u32, d: &Detection) -> String {
    let b = d.bbox;
    let mut s = format!(
        "{frame},{},{},{},{},{},{}",
        d.class_id,
        real(d.score),
        real(b.x1()),
        real(b.y1()),
        real(b.x2()),
        real(b.y2())
    );
    for v in d.embedding.as_slice() {
        s.push(',');
        s.push_str(&real(*v));
    }
    s
}

pub fn write_detections<'a, W: Write + ?Sized>(
    out: &mut W,
    dim: usize,
    records: impl IntoIterator<Item = (u32, &'a Detection)>,
) -> io::Result<()> {
    writeln!(out, "{}", detection_header(dim))?;
    for (frame, d) in records {
        writeln!(out, "{}", format_detection(frame, d))?;
    }
    Ok(())
}

fn parse_header(line: usize, s: &str) -> Result<usize, FormatError> {
    let rest = s
        .strip_prefix(HEADER_TAG)
        .ok_or_else(|| parse_err(line, format!("expected header starting with {HEADER_TAG:?}")))?;
    let (mut version, mut dim) = (None, None);
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("version", v)) => version = Some(field::<u32>(line, "version", v)?),
            Some(("dim", v)) => dim = Some(field::<usize>(line, "dim", v)?),
            _ => return Err(parse_err(line, format!("unexpected header entry {kv:?}"))),
        }
    }
    match version {
        Some(DETECTION_FORMAT_VERSION) => {}
        Some(v) => return Err(parse_err(line, format!("unsupported format version {v}"))),
        None => return Err(parse_err(line, "header lacks version")),
    }
    dim.ok_or_else(|| parse_err(line, "header lacks dim"))
}

fn parse_detection(line: usize, s: &str, dim: usize) -> Result<DetectionRecord, FormatError> {
    let cols: Vec<&str> = s.split(',').collect();
    if cols.len() != 7 + dim {
        return Err(parse_err(
            line,
            format!("dimension mismatch: expected {} columns (dim {dim}), found {}", 7 + dim, cols.len()),
        ));
    }
    let frame = field(line, "frame", cols[0])?;
    let class_id = field(line, "class", cols[1])?;
    let score = field(line, "score", cols[2])?;
    let c: Vec<f64> = cols[3..7].iter().map(|v| field(line, "box coordinate", v)).collect::<Result<_, _>>()?;
    let bbox = BoundingBox::new(c[0], c[1], c[2], c[3]).map_err(|e| parse_err(line, e.to_string()))?;
    let values: Vec<f64> = cols[7..].iter().map(|v| field(line, "embedding component", v)).collect::<Result<_, _>>()?;
    let embedding = Embedding::new(values).map_err(|e| parse_err(line, e.to_string()))?;
    Ok(DetectionRecord { frame, detection: Detection { bbox, class_id, score, embedding } })
}

/// Streaming reader. The header is read on construction; an input without
/// any lines is an empty file with unknown dimension.
pub struct DetectionReader<R> {
    lines: io::Lines<R>,
    line: usize,
    dim: Option<usize>,
    last_frame: Option<u32>,
    pending: Option<DetectionRecord>,
}

impl<R: BufRead> DetectionReader<R> {
    pub fn new(input: R) -> Result<Self, FormatError> {
        let mut r = Self { lines: input.lines(), line: 0, dim: None, last_frame: None, pending: None };
        if let Some((n, s)) = r.next_line()? {
            r.dim = Some(parse_header(n, &s)?);
        }
        Ok(r)
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn next_line(&mut self) -> Result<Option<(usize, String)>, FormatError> {
        for s in self.lines.by_ref() {
            self.line += 1;
            let s = s?;
            if !s.trim().is_empty() {
                return Ok(Some((self.line, s)));
            }
        }
        Ok(None)
    }

    pub fn next_record(&mut self) -> Result<Option<DetectionRecord>, FormatError> {
        if let Some(p) = self.pending.take() {
            return Ok(Some(p));
        }
        let Some((n, s)) = self.next_line()? else { return Ok(None) };
        let dim = self.dim.expect("header parsed before rows");
        let rec = parse_detection(n, &s, dim)?;
        if let Some(prev) = self.last_frame {
            if rec.frame < prev {
                return Err(parse_err(n, format!("frame {} after frame {prev}", rec.frame)));
            }
        }
        self.last_frame = Some(rec.frame);
        Ok(Some(rec))
    }

    /// All detections of the next frame present in the file.
    pub fn next_frame(&mut self) -> Result<Option<(u32, Vec<Detection>)>, FormatError> {
        let Some(first) = self.next_record()? else { return Ok(None) };
        let frame = first.frame;
        let mut dets = vec![first.detection];
        while let Some(r) = self.next_record()? {
            if r.frame != frame {
                self.pending = Some(r);
                break;
            }
            dets.push(r.detection);
        }
        Ok(Some((frame, dets)))
    }
}

pub fn read_detections<R: BufRead>(input: R) -> Result<(Option<usize>, Vec<DetectionRecord>), FormatError> {
    let mut r = DetectionReader::new(input)?;
    let mut out = Vec::new();
    while let Some(rec) = r.next_record()? {
        out.push(rec);
    }
    Ok((r.dim(), out))
}

/// One row of the MOT layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRecord {
    pub frame: u32,
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub conf: f64,
    pub class_id: u32,
    pub visibility: f64,
}

impl MotRecord {
    pub fn bbox(&self) -> Option<BoundingBox> {
        BoundingBox::from_xywh(self.x, self.y, self.w, self.h).ok()
    }
}

pub fn format_mot(r: &MotRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.frame,
        r.id,
        real(r.x),
        real(r.y),
        real(r.w),
        real(r.h),
        real(r.conf),
        r.class_id,
        real(r.visibility)
    )
}

pub fn parse_mot_line(line: usize, s: &str) -> Result<MotRecord, FormatError> {
    let cols: Vec<&str> = s.split(',').collect();
    if cols.len() != 9 {
        return Err(parse_err(line, format!("expected 9 columns, found {}", cols.len())));
    }
    let r = MotRecord {
        frame: field(line, "frame", cols[0])?,
        id: field(line, "id", cols[1])?,
        x: field(line, "x", cols[2])?,
        y: field(line, "y", cols[3])?,
        w: field(line, "w", cols[4])?,
        h: field(line, "h", cols[5])?,
        conf: field(line, "conf", cols[6])?,
        class_id: field(line, "class", cols[7])?,
        visibility: field(line, "visibility", cols[8])?,
    };
    if r.bbox().is_none() {
        return Err(parse_err(line, "box must be finite with w, h >= 0"));
    }
    Ok(r)
}

pub fn read_mot<R: BufRead>(input: R) -> Result<Vec<MotRecord>, FormatError> {
    let mut out = Vec::new();
    for (i, s) in input.lines().enumerate() {
        let s = s?;
        if !s.trim().is_empty() {
            out.push(parse_mot_line(i + 1, &s)?);
        }
    }
    Ok(out)
}

pub fn write_mot<'a, W: Write + ?Sized>(out: &mut W, records: impl IntoIterator<Item = &'a MotRecord>) -> io::Result<()> {
    for r in records {
        writeln!(out, "{}", format_mot(r))?;
    }
    Ok(())
}

/// How rows become evaluable objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Rows with `conf == 0` or `visibility <= 0` are ignored regions.
    GroundTruth,
    /// Every row is a prediction.
    Prediction,
}

pub fn to_track_set(records: &[MotRecord], role: Role) -> TrackSet {
    let mut set = TrackSet::new();
    for r in records {
        let visible = match role {
            Role::GroundTruth => r.conf != 0.0 && r.visibility > 0.0,
            Role::Prediction => true,
        };
        let bbox = r.bbox().expect("validated on parse");
        set.push(r.frame, ObjectBox { id: r.id, class_id: r.class_id, bbox, visible });
    }
    set
}

/// One row per (frame, track), ordered by frame then track ID.
pub fn histories_to_mot(histories: &[TrackHistory]) -> Vec<MotRecord> {
    let mut rows: Vec<MotRecord> = histories
        .iter()
        .flat_map(|h| {
            h.points.iter().map(move |p| MotRecord {
                frame: p.frame,
                id: h.track_id,
                x: p.bbox.x1(),
                y: p.bbox.y1(),
                w: p.bbox.width(),
                h: p.bbox.height(),
                conf: p.score,
                class_id: h.class_id,
                visibility: 1.0,
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.id));
    rows
}

pub fn track_set_to_mot(set: &TrackSet) -> Vec<MotRecord> {
    set.frames()
        .flat_map(|(frame, objs)| {
            objs.iter().map(move |o| MotRecord {
                frame,
                id: o.id,
                x: o.bbox.x1(),
                y: o.bbox.y1(),
                w: o.bbox.width(),
                h: o.bbox.height(),
                conf: 1.0,
                class_id: o.class_id,
                visibility: if o.visible { 1.0 } else { 0.0 },
            })
        })
        .collect()
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Writes `det.txt` and `gt.txt` for a synthetic scenario.
pub fn export_scenario(s: &Scenario, dir: &Path) -> io::Result<()> {
    let dim = s.prototypes.first().map_or(0, Embedding::dim);
    write_atomic(&dir.join("det.txt"), |w| {
        write_detections(w, dim, s.frames.iter().flat_map(|f| f.detections.iter().map(move |d| (f.frame, d))))
    })?;
    write_atomic(&dir.join("gt.txt"), |w| write_mot(w, &track_set_to_mot(&s.gt)))
}
