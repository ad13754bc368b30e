//! Frame-by-frame tracking: template and search-area construction, one
//! network pass per frame, and the sequence driver.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataio::TrackSequence;
use crate::error::{Error, Result};
use crate::geometry::{to_object_frame, Box7, PointCloud};
use crate::model::BatModel;
use crate::point_ops::random_subsample;
use crate::rpn::select_best;

/// Which earlier boxes contribute points to the template.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateStrategy {
    FirstGt,
    #[serde(rename = "previous")]
    PreviousResult,
    #[default]
    FirstAndPrevious,
    AllPrevious,
}

impl FromStr for TemplateStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first_gt" => Ok(Self::FirstGt),
            "previous" => Ok(Self::PreviousResult),
            "first_and_previous" => Ok(Self::FirstAndPrevious),
            "all_previous" => Ok(Self::AllPrevious),
            _ => Err(Error::Config(format!(
                "unknown template strategy `{s}` (first_gt|previous|first_and_previous|all_previous)"
            ))),
        }
    }
}

impl fmt::Display for TemplateStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FirstGt => "first_gt",
            Self::PreviousResult => "previous",
            Self::FirstAndPrevious => "first_and_previous",
            Self::AllPrevious => "all_previous",
        })
    }
}

/// Where the search area is anchored: the tracker's own previous output or
/// the previous ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    #[default]
    #[serde(rename = "long")]
    LongTerm,
    #[serde(rename = "short")]
    ShortTerm,
}

impl FromStr for SearchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long" => Ok(Self::LongTerm),
            "short" => Ok(Self::ShortTerm),
            _ => Err(Error::Config(format!("unknown mode `{s}` (short|long)"))),
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LongTerm => "long",
            Self::ShortTerm => "short",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    pub k: usize,
    pub template_strategy: TemplateStrategy,
    pub search_mode: SearchMode,
    pub search_margin: f64,
    pub n_template_points: usize,
    pub n_search_points: usize,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            k: 4,
            template_strategy: TemplateStrategy::default(),
            search_mode: SearchMode::default(),
            search_margin: 2.0,
            n_template_points: 128,
            n_search_points: 256,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.search_margin > 0.0) {
            return Err(Error::Config("search_margin must be positive".into()));
        }
        if self.n_template_points == 0 || self.n_search_points == 0 {
            return Err(Error::Config("point counts must be positive".into()));
        }
        Ok(())
    }
}

/// Canonical template box: the first box at the origin with zero heading.
pub fn template_box(first: &Box7) -> Box7 {
    Box7 {
        center: [0.0; 3],
        size: first.size,
        heading: 0.0,
    }
}

/// Merges the crops of the boxes chosen by `strategy`, each in its own
/// box's frame, and subsamples to `n` points. `history[0]` must hold the
/// ground-truth first box.
pub fn make_template<R: Rng + ?Sized>(
    history: &[(PointCloud, Box7)],
    strategy: TemplateStrategy,
    n: usize,
    rng: &mut R,
) -> Result<(PointCloud, Box7)> {
    let last = history.len().checked_sub(1).ok_or(Error::Empty("make_template"))?;
    let picks: Vec<usize> = match strategy {
        TemplateStrategy::FirstGt => vec![0],
        TemplateStrategy::PreviousResult => vec![last],
        TemplateStrategy::FirstAndPrevious if last == 0 => vec![0],
        TemplateStrategy::FirstAndPrevious => vec![0, last],
        TemplateStrategy::AllPrevious => (0..=last).collect(),
    };
    let mut merged = PointCloud::default();
    for i in picks {
        let (cloud, b) = &history[i];
        merged.extend(&to_object_frame(&cloud.crop(b), b));
    }
    if merged.is_empty() {
        return Err(Error::EmptyTemplate);
    }
    Ok((random_subsample(&merged, n, rng)?, template_box(&history[0].1)))
}

/// Points around a reference box, in that box's object frame.
#[derive(Clone, Debug)]
pub struct SearchArea {
    pub points: PointCloud,
    /// Maps search-frame boxes back to the world with [`Box7::from_frame_of`].
    pub frame: Box7,
    /// Points in the region before subsampling.
    pub raw_count: usize,
}

impl SearchArea {
    pub fn to_world(&self, local: &Box7) -> Box7 {
        local.from_frame_of(&self.frame)
    }
}

pub fn make_search_area<R: Rng + ?Sized>(
    frame: &PointCloud,
    reference: &Box7,
    margin: f64,
    n: usize,
    rng: &mut R,
) -> Result<SearchArea> {
    let region = reference.enlarge(margin)?;
    let crop = frame.crop(&region);
    if crop.is_empty() {
        return Err(Error::EmptySearch);
    }
    let local = to_object_frame(&crop, reference);
    Ok(SearchArea {
        points: random_subsample(&local, n, rng)?,
        frame: *reference,
        raw_count: crop.len(),
    })
}

/// One prediction in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameOutput {
    pub bbox: Box7,
    /// Targetness probability of the chosen proposal.
    pub score: f64,
    pub fuse_micros: f64,
}

/// Runs the network once and returns the best proposal with `size`.
pub fn track_frame(
    model: &BatModel,
    template: &PointCloud,
    template_box: &Box7,
    search: &SearchArea,
    k: usize,
    size: [f64; 3],
) -> Result<FrameOutput> {
    if template.is_empty() {
        return Err(Error::EmptyTemplate);
    }
    if search.points.is_empty() {
        return Err(Error::EmptySearch);
    }
    let mut tape = Tape::new();
    let bind = model.bind(&mut tape, false);
    let pass = model.forward(&mut tape, &bind, template, template_box, &search.points, k)?;
    let best = select_best(&pass.proposals.to_proposals(&tape))?;
    let local = Box7::new(best.center, size, best.heading)?;
    Ok(FrameOutput {
        bbox: search.to_world(&local),
        score: 1.0 / (1.0 + (-best.score).exp()),
        fuse_micros: pass.fuse_time.as_secs_f64() * 1e6,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub frame: usize,
    pub bbox: Box7,
    pub score: f64,
    pub micros: u64,
    pub fuse_micros: f64,
    pub search_points: usize,
    pub template_points: usize,
    /// Set when the tracker fell back to the previous box.
    pub held: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub seq_id: String,
    pub frames: Vec<FrameResult>,
}

impl TrackResult {
    pub fn boxes(&self) -> Vec<Box7> {
        self.frames.iter().map(|f| f.bbox).collect()
    }

    /// One line per frame: `frame x y z w l h theta score micros`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# frame x y z w l h theta score micros\n");
        for f in &self.frames {
            write!(out, "{}", f.frame).unwrap();
            for v in f.bbox.to_array() {
                write!(out, " {v}").unwrap();
            }
            writeln!(out, " {} {}", f.score, f.micros).unwrap();
        }
        out
    }

    pub fn parse(seq_id: &str, text: &str, path: &Path) -> Result<Self> {
        let mut frames = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg,
            };
            let tok: Vec<&str> = body.split_whitespace().collect();
            if tok.len() != 10 {
                return Err(err(format!("expected 10 fields, found {}", tok.len())));
            }
            let frame = tok[0].parse().map_err(|_| err(format!("malformed frame `{}`", tok[0])))?;
            let mut v = [0.0; 8];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = tok[k + 1].parse().map_err(|_| err(format!("malformed number `{}`", tok[k + 1])))?;
            }
            let micros = tok[9].parse().map_err(|_| err(format!("malformed micros `{}`", tok[9])))?;
            let bbox = Box7::from_array([v[0], v[1], v[2], v[3], v[4], v[5], v[6]]).map_err(|e| err(e.to_string()))?;
            frames.push(FrameResult {
                frame,
                bbox,
                score: v[7],
                micros,
                fuse_micros: 0.0,
                search_points: 0,
                template_points: 0,
                held: false,
            });
        }
        Ok(Self {
            seq_id: seq_id.to_owned(),
            frames,
        })
    }
}

/// Tracks `seq` from its first ground-truth box. Per-frame failures hold
/// the previous box.
pub fn track_sequence(model: &BatModel, seq: &TrackSequence, cfg: &TrackerConfig) -> Result<TrackResult> {
    cfg.validate()?;
    let first = seq.frames.first().ok_or(Error::Empty("track_sequence"))?;
    let size = first.gt.size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history: Vec<(PointCloud, Box7)> = vec![(first.points.clone(), first.gt)];
    let mut frames = vec![FrameResult {
        frame: first.index,
        bbox: first.gt,
        score: 1.0,
        micros: 0,
        fuse_micros: 0.0,
        search_points: first.points.len(),
        template_points: 0,
        held: false,
    }];
    let mut last_template: Option<(PointCloud, Box7)> = None;

    for t in 1..seq.frames.len() {
        let start = Instant::now();
        let prev = history[t - 1].1;
        let frame = &seq.frames[t];
        let template = match make_template(&history, cfg.template_strategy, cfg.n_template_points, &mut rng) {
            Ok(tpl) => {
                last_template = Some(tpl.clone());
                Some(tpl)
            }
            Err(e) => {
                log::warn!("{} frame {}: {e}; reusing previous template", seq.id, frame.index);
                last_template.clone()
            }
        };
        let reference = match cfg.search_mode {
            SearchMode::LongTerm => prev,
            SearchMode::ShortTerm => seq.frames[t - 1].gt,
        };
        let search = make_search_area(&frame.points, &reference, cfg.search_margin, cfg.n_search_points, &mut rng);
        let outcome = match (&template, &search) {
            (Some((tp, tb)), Ok(sa)) => track_frame(model, tp, tb, sa, cfg.k, size),
            (None, _) => Err(Error::EmptyTemplate),
            (_, Err(_)) => Err(Error::EmptySearch),
        };
        let (bbox, score, fuse_micros, held) = match outcome {
            Ok(o) => (o.bbox, o.score, o.fuse_micros, false),
            Err(e) => {
                log::warn!("{} frame {}: {e}; holding previous box", seq.id, frame.index);
                (prev, 0.0, 0.0, true)
            }
        };
        frames.push(FrameResult {
            frame: frame.index,
            bbox,
            score,
            micros: start.elapsed().as_micros() as u64,
            fuse_micros,
            search_points: search.as_ref().map_or(0, |s| s.raw_count),
            template_points: template.as_ref().map_or(0, |t| t.0.len()),
            held,
        });
        history.push((frame.points.clone(), bbox));
    }
    Ok(TrackResult {
        seq_id: seq.id.clone(),
        frames,
    })
}
