use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{Detection, Sequence};
use crate::error::{Error, Result};

/// Object classes known to KITTI besides the tracked ones. Rows of these
/// classes are kept as evaluation masks.
pub const KITTI_CLASSES: [&str; 8] = [
    "Car",
    "Van",
    "Truck",
    "Pedestrian",
    "Person_sitting",
    "Cyclist",
    "Tram",
    "Misc",
];
pub const DONT_CARE: &str = "DontCare";
/// Extra class seen in some detection dumps.
const PERSON: &str = "Person";

/// Which categories are tracking targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub tracked: Vec<String>,
}

impl Vocabulary {
    pub fn new(tracked: &[String]) -> Self {
        Self {
            tracked: tracked.to_vec(),
        }
    }

    pub fn index(&self, category: &str) -> Option<usize> {
        self.tracked.iter().position(|c| c == category)
    }

    fn classify(&self, category: &str) -> Result<bool> {
        if self.index(category).is_some() {
            return Ok(true);
        }
        if category == DONT_CARE || category == PERSON || KITTI_CLASSES.contains(&category) {
            return Ok(false);
        }
        Err(Error::Config(format!("unknown object category `{category}`")))
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            tracked: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
        }
    }
}

fn field<T: std::str::FromStr>(cols: &[&str], i: usize, line: usize, what: &str) -> Result<T> {
    cols[i].parse().map_err(|_| Error::Parse {
        line,
        msg: format!("column {} ({what}) is not a number: `{}`", i + 1, cols[i]),
    })
}

/// Parses one non-empty line. `line` is 1-based and only used in errors.
pub fn parse_line(text: &str, line: usize) -> Result<Detection> {
    let cols: Vec<&str> = text.split_whitespace().collect();
    if cols.len() != 17 && cols.len() != 18 {
        return Err(Error::Parse {
            line,
            msg: format!("expected 17 or 18 columns, found {}", cols.len()),
        });
    }
    let frame: i64 = field(&cols, 0, line, "frame")?;
    let frame = usize::try_from(frame).map_err(|_| Error::Parse {
        line,
        msg: format!("negative frame {frame}"),
    })?;
    let track: i64 = field(&cols, 1, line, "track id")?;
    let track_id = match track {
        -1 => None,
        t if t >= 0 => Some(t as u64),
        t => {
            return Err(Error::Parse {
                line,
                msg: format!("invalid track id {t}"),
            })
        }
    };
    let f = |i, what| field::<f64>(&cols, i, line, what);
    let bbox = [f(6, "x1")?, f(7, "y1")?, f(8, "x2")?, f(9, "y2")?];
    if bbox.iter().any(|v| !v.is_finite()) || bbox[2] < bbox[0] || bbox[3] < bbox[1] {
        return Err(Error::Parse {
            line,
            msg: format!("invalid box {bbox:?}"),
        });
    }
    let score = if cols.len() == 18 { f(17, "score")? } else { 1.0 };
    Ok(Detection {
        frame,
        track_id,
        category: cols[2].to_string(),
        truncated: f(3, "truncated")?,
        occluded: f(4, "occluded")?,
        alpha: f(5, "alpha")?,
        bbox,
        dimensions: [f(10, "height")?, f(11, "width")?, f(12, "length")?],
        location: [f(13, "x")?, f(14, "y")?, f(15, "z")?],
        rotation_y: f(16, "rotation_y")?,
        score,
        ignore: false,
    })
}

/// One KITTI line with the score column always present.
pub fn format_line(d: &Detection) -> String {
    let mut s = String::with_capacity(128);
    let track = d.track_id.map_or(-1, |t| t as i64);
    let _ = write!(
        s,
        "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
        d.frame,
        track,
        d.category,
        d.truncated,
        d.occluded,
        d.alpha,
        d.bbox[0],
        d.bbox[1],
        d.bbox[2],
        d.bbox[3],
        d.dimensions[0],
        d.dimensions[1],
        d.dimensions[2],
        d.location[0],
        d.location[1],
        d.location[2],
        d.rotation_y,
        d.score
    );
    s
}

/// Reads a whole label or detection file. Rows of tracked categories
/// become targets; all other known classes become masks.
pub fn parse_kitti<R: BufRead>(reader: R, name: &str, vocab: &Vocabulary) -> Result<Sequence> {
    let mut seq = Sequence::new(name);
    let mut frames = FrameReader::new(reader, vocab.clone());
    while let Some((frame, targets, masks)) = frames.next_frame()? {
        seq.ensure_frames(frame + 1);
        seq.frames[frame] = targets;
        seq.masks[frame] = masks;
    }
    Ok(seq)
}

pub fn parse_kitti_str(text: &str, name: &str, vocab: &Vocabulary) -> Result<Sequence> {
    parse_kitti(text.as_bytes(), name, vocab)
}

pub fn read_kitti_file(path: &std::path::Path, vocab: &Vocabulary) -> Result<Sequence> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path)?;
    parse_kitti(std::io::BufReader::new(file), &name, vocab)
}

/// Lines of one sequence, ordered by frame, then targets by track id, then
/// masks.
pub fn write_kitti(seq: &Sequence) -> String {
    let mut out = String::new();
    for f in 0..seq.frames.len() {
        for d in sorted_frame(&seq.frames[f]) {
            out.push_str(&format_line(d));
            out.push('\n');
        }
        for d in &seq.masks[f] {
            out.push_str(&format_line(d));
            out.push('\n');
        }
    }
    out
}

fn sorted_frame(frame: &[Detection]) -> Vec<&Detection> {
    let mut v: Vec<&Detection> = frame.iter().collect();
    v.sort_by_key(|d| d.track_id.map_or(-1, |t| t as i64));
    v
}

/// Streams frames from a KITTI file without holding the whole sequence.
///
/// Lines must be grouped by non-decreasing frame number.
pub struct FrameReader<R> {
    lines: std::io::Lines<R>,
    vocab: Vocabulary,
    line_no: usize,
    pending: Option<Detection>,
    done: bool,
}

pub type Frame = (usize, Vec<Detection>, Vec<Detection>);

impl<R: BufRead> FrameReader<R> {
    pub fn new(reader: R, vocab: Vocabulary) -> Self {
        Self {
            lines: reader.lines(),
            vocab,
            line_no: 0,
            pending: None,
            done: false,
        }
    }

    fn next_detection(&mut self) -> Result<Option<Detection>> {
        if let Some(d) = self.pending.take() {
            return Ok(Some(d));
        }
        while !self.done {
            match self.lines.next() {
                None => self.done = true,
                Some(line) => {
                    let line = line?;
                    self.line_no += 1;
                    if line.trim().is_empty() {
                        continue;
                    }
                    return parse_line(&line, self.line_no).map(Some);
                }
            }
        }
        Ok(None)
    }

    /// Next non-empty frame as `(frame, targets, masks)`; frames without
    /// rows are skipped, callers fill the gaps.
    pub fn next_frame(&mut self) -> Result<Option<Frame>> {
        let Some(first) = self.next_detection()? else {
            return Ok(None);
        };
        let frame = first.frame;
        let mut targets = Vec::new();
        let mut masks = Vec::new();
        let mut cur = Some(first);
        while let Some(d) = cur {
            if d.frame != frame {
                if d.frame < frame {
                    return Err(Error::Parse {
                        line: self.line_no,
                        msg: format!("frame {} after frame {frame}", d.frame),
                    });
                }
                self.pending = Some(d);
                break;
            }
            if self.vocab.classify(&d.category).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", self.line_no)),
                e => e,
            })? {
                targets.push(d);
            } else {
                masks.push(d);
            }
            cur = self.next_detection()?;
        }
        Ok(Some((frame, targets, masks)))
    }
}

/// Writes frames as they are produced.
pub struct FrameWriter<W: Write> {
    out: W,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    /// Writes one frame's rows sorted by track id.
    pub fn write_frame(&mut self, rows: &[Detection]) -> Result<()> {
        for d in sorted_frame(rows) {
            writeln!(self.out, "{}", format_line(d))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
