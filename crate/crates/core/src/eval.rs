//! One-pass evaluation: Success and Precision, sparsity bins, BoxCloud
//! error histograms and report files.
//!
//! Both scores skip frame 0, whose box is given. A sequence with no other
//! frame scores 100.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::boxcloud::{compute_boxcloud, BoxCloud};
use crate::dataio::TrackSequence;
use crate::error::{Error, Result};
use crate::geometry::{center_distance, iou_3d, Box7};
use crate::model::BatModel;
use crate::tracker::{make_search_area, make_template, TemplateStrategy, TrackerConfig};

/// Upper end of the precision window, meters.
pub const PRECISION_RANGE: f64 = 2.0;
pub const DEFAULT_SPARSITY_EDGES: [usize; 5] = [10, 30, 50, 100, 150];
pub const DEFAULT_MSE_EDGES: [f64; 6] = [0.01, 0.05, 0.1, 0.2, 0.5, 1.0];

fn check_lengths(pred: &[Box7], gt: &[Box7]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::arg(format!("{} predictions for {} frames", pred.len(), gt.len())));
    }
    Ok(())
}

/// Per-frame 3D IoU, frame 0 excluded.
pub fn frame_overlaps(pred: &[Box7], gt: &[Box7]) -> Result<Vec<f64>> {
    check_lengths(pred, gt)?;
    Ok(pred.iter().zip(gt).skip(1).map(|(p, g)| iou_3d(p, g)).collect())
}

/// Per-frame center distance, frame 0 excluded.
pub fn frame_distances(pred: &[Box7], gt: &[Box7]) -> Result<Vec<f64>> {
    check_lengths(pred, gt)?;
    Ok(pred.iter().zip(gt).skip(1).map(|(p, g)| center_distance(p, g)).collect())
}

fn mean_or_full(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    if n == 0 {
        return 100.0;
    }
    100.0 * v.sum::<f64>() / n as f64
}

/// Area under the overlap-threshold curve, as a percentage. Equals the
/// mean IoU.
pub fn success_from_overlaps(ious: &[f64]) -> f64 {
    mean_or_full(ious.iter().copied())
}

/// Area under the center-distance curve over `[0, 2]` m, normalized to a
/// percentage.
pub fn precision_from_distances(dists: &[f64]) -> f64 {
    mean_or_full(
        dists
            .iter()
            .map(|d| ((PRECISION_RANGE - d) / PRECISION_RANGE).clamp(0.0, 1.0)),
    )
}

pub fn success_score(pred: &[Box7], gt: &[Box7]) -> Result<f64> {
    Ok(success_from_overlaps(&frame_overlaps(pred, gt)?))
}

pub fn precision_score(pred: &[Box7], gt: &[Box7]) -> Result<f64> {
    Ok(precision_from_distances(&frame_distances(pred, gt)?))
}

/// `(τ, fraction of frames with IoU > τ)` on an even grid of `n` points
/// over `[0, 1]`.
pub fn success_curve(ious: &[f64], n: usize) -> Vec<(f64, f64)> {
    curve(n, 1.0, |t| frac(ious, |u| u > t))
}

/// `(τ, fraction of frames with distance < τ)` over `[0, 2]` m.
pub fn precision_curve(dists: &[f64], n: usize) -> Vec<(f64, f64)> {
    curve(n, PRECISION_RANGE, |t| frac(dists, |d| d < t))
}

fn frac(v: &[f64], f: impl Fn(f64) -> bool) -> f64 {
    if v.is_empty() {
        return 1.0;
    }
    v.iter().filter(|x| f(**x)).count() as f64 / v.len() as f64
}

fn curve(n: usize, hi: f64, f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let t = hi * i as f64 / (n - 1) as f64;
            (t, f(t))
        })
        .collect()
}

/// Scores for one tracked sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceScore {
    pub id: String,
    pub category: String,
    /// Points in the first ground-truth box.
    pub first_points: usize,
    pub overlaps: Vec<f64>,
    pub distances: Vec<f64>,
    pub success: f64,
    pub precision: f64,
}

pub fn score_sequence(seq: &TrackSequence, pred: &[Box7]) -> Result<SequenceScore> {
    let gt = seq.boxes();
    let overlaps = frame_overlaps(pred, &gt)?;
    let distances = frame_distances(pred, &gt)?;
    Ok(SequenceScore {
        id: seq.id.clone(),
        category: seq.category.clone(),
        first_points: seq.first_box_points(),
        success: success_from_overlaps(&overlaps),
        precision: precision_from_distances(&distances),
        overlaps,
        distances,
    })
}

/// Frame-weighted totals over many sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub sequences: usize,
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
}

pub fn summarize(scores: &[SequenceScore]) -> Summary {
    let ious: Vec<f64> = scores.iter().flat_map(|s| s.overlaps.iter().copied()).collect();
    let dists: Vec<f64> = scores.iter().flat_map(|s| s.distances.iter().copied()).collect();
    Summary {
        sequences: scores.len(),
        frames: ious.len(),
        success: success_from_overlaps(&ious),
        precision: precision_from_distances(&dists),
    }
}

/// One row of the sparsity table; `success` is `None` for an empty bin.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityBin {
    pub lo: usize,
    pub hi: Option<usize>,
    pub sequences: usize,
    pub success: Option<f64>,
    pub precision: Option<f64>,
}

/// Groups sequences by first-box point count into `[0, e₀), [e₀, e₁), …,
/// [e_last, ∞)` and averages per-sequence scores in each bin.
pub fn sparsity_report(scores: &[SequenceScore], edges: &[usize]) -> Result<Vec<SparsityBin>> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("bin edges must be strictly ascending"));
    }
    let mut bounds = vec![0];
    bounds.extend(edges.iter().copied().filter(|&e| e > 0));
    let bins = (0..bounds.len())
        .map(|i| {
            let (lo, hi) = (bounds[i], bounds.get(i + 1).copied());
            let members: Vec<&SequenceScore> = scores
                .iter()
                .filter(|s| s.first_points >= lo && hi.is_none_or(|h| s.first_points < h))
                .collect();
            let mean = |f: fn(&SequenceScore) -> f64| {
                (!members.is_empty()).then(|| members.iter().map(|s| f(s)).sum::<f64>() / members.len() as f64)
            };
            SparsityBin {
                lo,
                hi,
                sequences: members.len(),
                success: mean(|s| s.success),
                precision: mean(|s| s.precision),
            }
        })
        .collect();
    Ok(bins)
}

/// Histogram of per-point BoxCloud squared error.
#[derive(Clone, Debug, PartialEq)]
pub struct MseHistogram {
    pub edges: Vec<f64>,
    /// `edges.len() + 1` buckets: `[0, e₀), …, [e_last, ∞)`.
    pub counts: Vec<usize>,
    pub values: Vec<f64>,
}

impl MseHistogram {
    pub fn from_values(values: Vec<f64>, edges: &[f64]) -> Self {
        let mut counts = vec![0; edges.len() + 1];
        for v in &values {
            counts[edges.partition_point(|e| e <= v)] += 1;
        }
        Self {
            edges: edges.to_vec(),
            counts,
            values,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn median(&self) -> Option<f64> {
        if self.values.is_empty() {
            return None;
        }
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }
}

/// Mean over the nine coordinates of the squared error, one value per row
/// whose mask is set.
pub fn masked_boxcloud_mse(pred: &BoxCloud, gt: &BoxCloud, mask: &[bool]) -> Vec<f64> {
    pred.coords
        .iter()
        .zip(&gt.coords)
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|((p, g), _)| p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 9.0)
        .collect()
}

/// BoxCloud error of search seeds inside the true box, over every frame
/// after the first. Templates come from the first and previous true boxes;
/// the search area is anchored on the previous true box.
pub fn boxcloud_mse_report(
    model: &BatModel,
    seqs: &[TrackSequence],
    cfg: &TrackerConfig,
    edges: &[f64],
) -> Result<MseHistogram> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values = Vec::new();
    for seq in seqs {
        for t in 1..seq.len() {
            let history = [
                (seq.frames[0].points.clone(), seq.frames[0].gt),
                (seq.frames[t - 1].points.clone(), seq.frames[t - 1].gt),
            ];
            let Ok((template, tbox)) =
                make_template(&history, TemplateStrategy::FirstAndPrevious, cfg.n_template_points, &mut rng)
            else {
                continue;
            };
            let reference = seq.frames[t - 1].gt;
            let Ok(search) = make_search_area(&seq.frames[t].points, &reference, cfg.search_margin, cfg.n_search_points, &mut rng)
            else {
                continue;
            };
            let gt_local = seq.frames[t].gt.in_frame_of(&reference);
            let mut tape = Tape::new();
            let bind = model.bind(&mut tape, false);
            let pass = model.forward(&mut tape, &bind, &template, &tbox, &search.points, cfg.k)?;
            let seeds = &pass.fused.positions;
            let pred = BoxCloud::from_tensor(tape.value(pass.fused.predicted_boxcloud))?;
            let truth = compute_boxcloud(seeds, &gt_local);
            let mask: Vec<bool> = seeds.iter().map(|p| gt_local.contains(*p)).collect();
            values.extend(masked_boxcloud_mse(&pred, &truth, &mask));
        }
    }
    Ok(MseHistogram::from_values(values, edges))
}

pub fn format_scores_csv(scores: &[SequenceScore]) -> String {
    let mut out = String::from("seq_id,category,frames,first_points,success,precision\n");
    for s in scores {
        writeln!(
            out,
            "{},{},{},{},{:.4},{:.4}",
            s.id,
            s.category,
            s.overlaps.len(),
            s.first_points,
            s.success,
            s.precision
        )
        .unwrap();
    }
    let total = summarize(scores);
    writeln!(out, "ALL,-,{},-,{:.4},{:.4}", total.frames, total.success, total.precision).unwrap();
    out
}

/// Two columns per line: threshold and fraction.
pub fn format_curve(points: &[(f64, f64)]) -> String {
    let mut out = String::new();
    for (t, f) in points {
        writeln!(out, "{t:.4} {f:.6}").unwrap();
    }
    out
}

pub fn format_sparsity_csv(bins: &[SparsityBin]) -> String {
    let mut out = String::from("lo,hi,sequences,success,precision\n");
    let opt = |v: Option<f64>| v.map_or("absent".to_string(), |x| format!("{x:.4}"));
    for b in bins {
        let hi = b.hi.map_or("inf".to_string(), |h| h.to_string());
        writeln!(out, "{},{hi},{},{},{}", b.lo, b.sequences, opt(b.success), opt(b.precision)).unwrap();
    }
    out
}

pub fn format_mse_csv(h: &MseHistogram) -> String {
    let mut out = String::from("lo,hi,count\n");
    let mut lo = 0.0;
    for (i, c) in h.counts.iter().enumerate() {
        let hi = h.edges.get(i).map_or("inf".to_string(), |e| e.to_string());
        writeln!(out, "{lo},{hi},{c}").unwrap();
        if let Some(e) = h.edges.get(i) {
            lo = *e;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, h: f64) -> Box7 {
        Box7::new([x, y, 0.0], [1.0, 2.0, 1.0], h).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let g = vec![b(0.0, 0.0, 0.0); 3];
        assert_eq!(success_score(&g, &g).unwrap(), 100.0);
        assert_eq!(precision_score(&g, &g).unwrap(), 100.0);
        // unit-width boxes offset half a width along x: IoU 1/3
        let gt = vec![b(0.0, 0.0, 0.0), b(0.0, 0.0, 0.0)];
        let pr = vec![b(0.0, 0.0, 0.0), b(0.5, 0.0, 0.0)];
        assert!((success_score(&pr, &gt).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        let pr = vec![b(0.0, 0.0, 0.0), b(0.0, 1.0, 0.0)];
        assert_eq!(precision_score(&pr, &gt).unwrap(), 50.0);
        let pr = vec![b(0.0, 0.0, 0.0), b(0.0, 2.0, 0.0)];
        assert_eq!(precision_score(&pr, &gt).unwrap(), 0.0);
        assert_eq!(success_score(&g[..1], &g[..1]).unwrap(), 100.0);
        assert!(success_score(&g[..1], &g).is_err());
    }

    #[test]
    fn iou_half_gives_fifty() {
        assert_eq!(success_from_overlaps(&[0.5]), 50.0);
    }

    #[test]
    fn sparsity_bins_mark_absent() {
        let mk = |id: &str, n: usize, s: f64| SequenceScore {
            id: id.into(),
            category: "c".into(),
            first_points: n,
            overlaps: vec![s / 100.0],
            distances: vec![0.0],
            success: s,
            precision: 100.0,
        };
        let scores = [mk("a", 5, 40.0), mk("b", 12, 60.0), mk("c", 200, 80.0)];
        let bins = sparsity_report(&scores, &DEFAULT_SPARSITY_EDGES).unwrap();
        assert_eq!(bins.len(), 6);
        assert_eq!(bins[0].success, Some(40.0));
        assert_eq!(bins[1].success, Some(60.0));
        assert_eq!(bins[2].success, None);
        assert_eq!(bins[5].success, Some(80.0));
        assert!(format_sparsity_csv(&bins).contains("30,50,0,absent,absent"));
        assert!(sparsity_report(&scores, &[5, 5]).is_err());
    }

    #[test]
    fn mse_histogram_mass_and_perfect_predictor() {
        let h = MseHistogram::from_values(vec![0.0; 7], &DEFAULT_MSE_EDGES);
        assert_eq!(h.counts[0], 7);
        let h = MseHistogram::from_values(vec![0.0, 0.05, 0.3, 9.0], &DEFAULT_MSE_EDGES);
        assert_eq!(h.total(), 4);
        assert_eq!(h.counts, vec![1, 0, 1, 0, 1, 0, 1]);
        assert_eq!(h.median(), Some(0.175));
    }

    proptest! {
        #[test]
        fn closed_forms_match_discrete_integration(
            ious in prop::collection::vec(0.0f64..1.0, 1..30),
            dists in prop::collection::vec(0.0f64..3.0, 1..30),
        ) {
            // trapezoid integration over 1001 thresholds
            let trap = |c: Vec<(f64, f64)>| c.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum::<f64>();
            let s = 100.0 * trap(success_curve(&ious, 1001));
            prop_assert!((s - success_from_overlaps(&ious)).abs() <= 0.05 + 1e-9);
            let p = 100.0 * trap(precision_curve(&dists, 1001)) / PRECISION_RANGE;
            prop_assert!((p - precision_from_distances(&dists)).abs() <= 0.05 + 1e-9);
        }

        #[test]
        fn scores_are_bounded_and_rigidly_invariant(
            xs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 2..8),
            tx in -10.0f64..10.0, rot in -3.0f64..3.0,
        ) {
            let gt: Vec<Box7> = xs.iter().map(|_| b(0.0, 0.0, 0.0)).collect();
            let pr: Vec<Box7> = xs.iter().map(|&(x, y, h)| b(x * 0.3, y * 0.3, h)).collect();
            let m = Box7::new([tx, -tx, 0.5], [1.0; 3], rot).unwrap();
            let mv = |v: &[Box7]| v.iter().map(|q| q.from_frame_of(&m)).collect::<Vec<_>>();
            let (s0, p0) = (success_score(&pr, &gt).unwrap(), precision_score(&pr, &gt).unwrap());
            let (s1, p1) = (success_score(&mv(&pr), &mv(&gt)).unwrap(), precision_score(&mv(&pr), &mv(&gt)).unwrap());
            prop_assert!((0.0..=100.0).contains(&s0) && (0.0..=100.0).contains(&p0));
            prop_assert!((s0 - s1).abs() < 1e-6 && (p0 - p1).abs() < 1e-9);
        }

        #[test]
        fn concatenation_is_frame_weighted(
            a in prop::collection::vec(0.0f64..1.0, 1..10),
            c in prop::collection::vec(0.0f64..1.0, 1..10),
        ) {
            let all: Vec<f64> = a.iter().chain(&c).copied().collect();
            let w = (success_from_overlaps(&a) * a.len() as f64 + success_from_overlaps(&c) * c.len() as f64) / all.len() as f64;
            prop_assert!((success_from_overlaps(&all) - w).abs() < 1e-9);
        }
    }
}
