//! Plain-text labels, one box per line:
//!
//! ```text
//! # seq_id frame_idx x y z w l h theta
//! car_0001 0 10.0 2.5 -0.8 1.8 4.2 1.6 0.3
//! ```
//!
//! Fields are whitespace separated, `#` starts a comment. A comment of the
//! form `# category <seq_id> <label>` attaches a category to a sequence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataio::{Frame, TrackSequence};
use crate::error::{Error, Result};
use crate::geometry::{Box7, PointCloud};

const FIELDS: [&str; 9] = ["seq_id", "frame_idx", "x", "y", "z", "w", "l", "h", "theta"];
pub const DEFAULT_CATEGORY: &str = "object";

/// Parses label text into sequences with empty point clouds, grouped by
/// sequence id and sorted by frame index.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<TrackSequence>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_owned(),
        line,
        msg,
    };
    let mut groups: BTreeMap<String, BTreeMap<usize, Box7>> = BTreeMap::new();
    let mut categories: BTreeMap<String, String> = BTreeMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if let Some(comment) = raw.trim_start().strip_prefix('#') {
            let parts: Vec<&str> = comment.split_whitespace().collect();
            if let ["category", id, label] = parts[..] {
                categories.insert(id.to_owned(), label.to_owned());
            }
            continue;
        }
        let body = raw.split('#').next().unwrap_or("");
        let tok: Vec<&str> = body.split_whitespace().collect();
        if tok.is_empty() {
            continue;
        }
        if tok.len() < FIELDS.len() {
            return Err(err(line, format!("missing field `{}`", FIELDS[tok.len()])));
        }
        if tok.len() > FIELDS.len() {
            return Err(err(line, format!("expected {} fields, found {}", FIELDS.len(), tok.len())));
        }
        let frame: usize = tok[1]
            .parse()
            .map_err(|_| err(line, format!("malformed frame_idx `{}`", tok[1])))?;
        let mut v = [0.0; 7];
        for (k, slot) in v.iter_mut().enumerate() {
            let s = tok[k + 2];
            *slot = s
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(line, format!("malformed {} `{s}`", FIELDS[k + 2])))?;
        }
        let b = Box7::from_array(v).map_err(|e| err(line, e.to_string()))?;
        let seq = groups.entry(tok[0].to_owned()).or_default();
        if seq.insert(frame, b).is_some() {
            return Err(err(line, format!("duplicate frame {frame} for `{}`", tok[0])));
        }
    }

    Ok(groups
        .into_iter()
        .map(|(id, frames)| {
            let category = categories.get(&id).cloned().unwrap_or_else(|| DEFAULT_CATEGORY.to_owned());
            let frames = frames
                .into_iter()
                .map(|(index, gt)| Frame {
                    index,
                    points: PointCloud::default(),
                    gt,
                })
                .collect();
            TrackSequence { id, category, frames }
        })
        .collect())
}

pub fn read_annotations(path: &Path) -> Result<Vec<TrackSequence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

/// Inverse of [`parse_annotations`]; floats use shortest round-trip form.
pub fn format_annotations(seqs: &[TrackSequence]) -> String {
    let mut out = String::from("# seq_id frame_idx x y z w l h theta\n");
    for s in seqs {
        if s.category != DEFAULT_CATEGORY {
            writeln!(out, "# category {} {}", s.id, s.category).unwrap();
        }
    }
    for s in seqs {
        for f in &s.frames {
            write!(out, "{} {}", s.id, f.index).unwrap();
            for v in f.gt.to_array() {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_annotations(path: &Path, seqs: &[TrackSequence]) -> Result<()> {
    fs::write(path, format_annotations(seqs)).map_err(|e| Error::io(path, e))
}
