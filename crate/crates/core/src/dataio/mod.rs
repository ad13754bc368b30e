//! Sequences, on-disk formats and the synthetic scene generator.
//!
//! A dataset directory holds `labels.txt` (see [`annotations`]) and one scan
//! per frame at `velodyne/<seq_id>/<frame_idx:06>.bin` (see [`velodyne`]).

pub mod annotations;
pub mod synth;
pub mod velodyne;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Box7, PointCloud};

pub use annotations::{read_annotations, write_annotations};
pub use synth::{generate_dataset, generate_scene, SceneSpec};
pub use velodyne::{read_velodyne_scan, write_velodyne_scan};

pub const LABELS_FILE: &str = "labels.txt";
pub const SCAN_DIR: &str = "velodyne";

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub points: PointCloud,
    pub gt: Box7,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackSequence {
    pub id: String,
    pub category: String,
    pub frames: Vec<Frame>,
}

impl TrackSequence {
    pub fn new(id: impl Into<String>, category: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        let id = id.into();
        if frames.is_empty() {
            return Err(Error::arg(format!("sequence `{id}` has no frames")));
        }
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::arg(format!("sequence id `{id}` must be a non-empty word")));
        }
        Ok(Self {
            id,
            category: category.into(),
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn boxes(&self) -> Vec<Box7> {
        self.frames.iter().map(|f| f.gt).collect()
    }

    /// Points inside the first ground-truth box.
    pub fn first_box_points(&self) -> usize {
        let f = &self.frames[0];
        f.points.iter().filter(|p| f.gt.contains(**p)).count()
    }
}

/// Drops sequences whose first box holds no points; such tracklets are not
/// scored.
pub fn evaluable(seqs: Vec<TrackSequence>) -> Vec<TrackSequence> {
    seqs.into_iter().filter(|s| s.first_box_points() > 0).collect()
}

pub fn scan_path(dir: &Path, seq_id: &str, frame: usize) -> PathBuf {
    dir.join(SCAN_DIR).join(seq_id).join(format!("{frame:06}.bin"))
}

pub fn write_dataset(dir: &Path, seqs: &[TrackSequence]) -> Result<()> {
    for s in seqs {
        let sub = dir.join(SCAN_DIR).join(&s.id);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for f in &s.frames {
            write_velodyne_scan(&scan_path(dir, &s.id, f.index), &f.points)?;
        }
    }
    write_annotations(&dir.join(LABELS_FILE), seqs)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<TrackSequence>> {
    let mut seqs = read_annotations(&dir.join(LABELS_FILE))?;
    for s in &mut seqs {
        for f in &mut s.frames {
            f.points = read_velodyne_scan(&scan_path(dir, &s.id, f.index))?;
        }
    }
    Ok(seqs)
}

/// Deterministic split by sequence id. `ratio` is the training fraction.
pub fn split_train_test(
    seqs: Vec<TrackSequence>,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<TrackSequence>, Vec<TrackSequence>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::arg(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut ids: Vec<String> = seqs.iter().map(|s| s.id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * ids.len() as f64).round() as usize;
    let train_ids: std::collections::HashSet<&String> = ids[..n_train].iter().collect();
    let (train, test) = seqs.into_iter().partition(|s| train_ids.contains(&s.id));
    Ok((train, test))
}
