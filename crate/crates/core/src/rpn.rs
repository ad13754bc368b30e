//! Voting proposal head: seeds vote for the target center, votes are
//! clustered, and each cluster regresses a `(x, y, z, θ)` proposal with a
//! targetness score.

use rand::Rng;

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::baff::FusedSearch;
use crate::error::{Error, Result};
use crate::geometry::{dist3, normalize_angle, Box7, Point3, PointCloud};
use crate::nn::{Binding, Mlp};
use crate::point_ops::{ball_query, farthest_point_sampling};

/// Positive-proposal radius around the true center, in meters.
pub const POSITIVE_RADIUS: f64 = 0.3;

#[derive(Clone, Debug)]
pub struct VoteSet {
    pub seed_positions: PointCloud,
    /// `M2 × 3`
    pub positions: Var,
    /// `M2 × D`
    pub features: Var,
    /// `M2 × 1` targetness logits.
    pub seed_scores: Var,
}

/// Proposals on a tape, one row per cluster.
#[derive(Clone, Debug)]
pub struct ProposalSet {
    /// `P × 3` vote positions chosen as cluster centers.
    pub cluster_centers: Var,
    /// `P × 3` cluster center plus regressed residual.
    pub centers: Var,
    /// `P × 1`
    pub headings: Var,
    /// `P × 1` logits.
    pub scores: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proposal {
    pub center: Point3,
    pub heading: f64,
    pub score: f64,
}

impl ProposalSet {
    pub fn to_proposals(&self, tape: &Tape) -> Vec<Proposal> {
        let c = tape.value(self.centers);
        let h = tape.value(self.headings);
        let s = tape.value(self.scores);
        (0..c.rows())
            .map(|i| Proposal {
                center: [c.at(i, 0), c.at(i, 1), c.at(i, 2)],
                heading: normalize_angle(h.at(i, 0)),
                score: s.at(i, 0),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rpn {
    pub vote: Mlp,
    pub seedscore: Mlp,
    pub prop_mlp: Mlp,
    pub prop_head: Mlp,
    pub feature_dim: usize,
}

/// The four proposal-head terms and their sum.
#[derive(Clone, Copy, Debug)]
pub struct RpnLoss {
    pub total: Var,
    pub vote: Var,
    pub seed: Var,
    pub prop_score: Var,
    pub prop_reg: Var,
}

impl Rpn {
    pub fn new(feature_dim: usize) -> Self {
        let d = feature_dim;
        Self {
            vote: Mlp::new("rpn.vote", &[d, d, d, 3 + d], false),
            seedscore: Mlp::new("rpn.seedscore", &[d, d, d, 1], false),
            prop_mlp: Mlp::new("rpn.prop.mlp", &[3 + d + 1, d, d, d], true),
            prop_head: Mlp::new("rpn.prop.head", &[d, d, 5], false),
            feature_dim: d,
        }
    }

    /// Vote head output layer starts at zero so initial votes sit on seeds.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        self.vote.init(params, rng);
        self.vote.zero_output(params);
        self.seedscore.init(params, rng);
        self.prop_mlp.init(params, rng);
        self.prop_head.init(params, rng);
    }

    pub fn vote(&self, tape: &mut Tape, bind: &Binding, fused: &FusedSearch) -> Result<VoteSet> {
        let d = self.feature_dim;
        let out = self.vote.forward(tape, bind, fused.features)?;
        let offset = tape.slice_cols(out, 0, 3)?;
        let dfeat = tape.slice_cols(out, 3, 3 + d)?;
        let seeds = tape.constant(Tensor::new(vec![fused.positions.len(), 3], fused.positions.flat())?);
        let positions = tape.add(seeds, offset)?;
        let features = tape.add(fused.features, dfeat)?;
        let seed_scores = self.seedscore.forward(tape, bind, fused.features)?;
        Ok(VoteSet {
            seed_positions: fused.positions.clone(),
            positions,
            features,
            seed_scores,
        })
    }

    /// FPS over votes (start index 0), ball-query grouping, per-cluster
    /// mini-PointNet regressing `(Δcenter, θ, score)`.
    pub fn cluster_and_propose(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        votes: &VoteSet,
        n_proposals: usize,
        radius: f64,
        max_k: usize,
    ) -> Result<ProposalSet> {
        let vp = tape.value(votes.positions);
        let vote_cloud = PointCloud::new((0..vp.rows()).map(|i| [vp.at(i, 0), vp.at(i, 1), vp.at(i, 2)]).collect());
        if n_proposals == 0 {
            return Err(Error::arg("n_proposals must be at least 1"));
        }
        let centers_idx = farthest_point_sampling(&vote_cloud, n_proposals, 0)?;
        let centers_idx = centers_idx.row(0).to_vec();
        let centers = vote_cloud.select(&centers_idx);
        let groups = ball_query(&centers, &vote_cloud, radius, max_k)?;

        let cc = tape.gather_rows(votes.positions, &centers_idx)?;
        let rep: Vec<usize> = (0..n_proposals).flat_map(|i| std::iter::repeat_n(i, max_k)).collect();
        let cc_rep = tape.gather_rows(cc, &rep)?;
        let members = tape.gather_rows(votes.positions, groups.as_slice())?;
        let rel = tape.sub(members, cc_rep)?;
        let rel = tape.scale(rel, 1.0 / radius);
        let feats = tape.gather_rows(votes.features, groups.as_slice())?;
        let prob = tape.sigmoid(votes.seed_scores);
        let scores = tape.gather_rows(prob, groups.as_slice())?;
        let x = tape.concat_cols(&[rel, feats, scores])?;
        let h = self.prop_mlp.forward(tape, bind, x)?;
        let pooled = tape.group_max_pool(h, max_k)?;
        let out = self.prop_head.forward(tape, bind, pooled)?;

        let delta = tape.slice_cols(out, 0, 3)?;
        let centers = tape.add(cc, delta)?;
        let headings = tape.slice_cols(out, 3, 4)?;
        let scores = tape.slice_cols(out, 4, 5)?;
        Ok(ProposalSet {
            cluster_centers: cc,
            centers,
            headings,
            scores,
        })
    }

    /// Vote regression, seed targetness, proposal targetness and proposal
    /// regression, equally weighted. `gt` is in the same frame as the seeds.
    pub fn loss(&self, tape: &mut Tape, votes: &VoteSet, proposals: &ProposalSet, gt: &Box7) -> Result<RpnLoss> {
        let m2 = votes.seed_positions.len();
        let in_box: Vec<f64> = votes
            .seed_positions
            .iter()
            .map(|p| if gt.contains(*p) { 1.0 } else { 0.0 })
            .collect();

        let target = Tensor::new(vec![m2, 3], gt.center.repeat(m2))?;
        let target = tape.constant(target);
        let vote = tape.smooth_l1(votes.positions, target, &in_box)?;
        let seed = tape.bce_with_logits(votes.seed_scores, &in_box)?;

        // positives are decided by the vote cluster center, not the regressed one
        let cc = tape.value(proposals.cluster_centers);
        let n_prop = cc.rows();
        let positive: Vec<f64> = (0..n_prop)
            .map(|i| {
                let c = [cc.at(i, 0), cc.at(i, 1), cc.at(i, 2)];
                if dist3(c, gt.center) < POSITIVE_RADIUS {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let prop_score = tape.bce_with_logits(proposals.scores, &positive)?;

        let pred = tape.concat_cols(&[proposals.centers, proposals.headings])?;
        let row = [gt.center[0], gt.center[1], gt.center[2], gt.heading];
        let reg_target = tape.constant(Tensor::new(vec![n_prop, 4], row.repeat(n_prop))?);
        let prop_reg = tape.smooth_l1(pred, reg_target, &positive)?;

        let s1 = tape.add(vote, seed)?;
        let s2 = tape.add(prop_score, prop_reg)?;
        let total = tape.add(s1, s2)?;
        Ok(RpnLoss {
            total,
            vote,
            seed,
            prop_score,
            prop_reg,
        })
    }
}

/// Highest score wins; the lowest index wins ties.
pub fn select_best(proposals: &[Proposal]) -> Result<Proposal> {
    let mut best: Option<&Proposal> = None;
    for p in proposals {
        if best.is_none_or(|b| p.score > b.score) {
            best = Some(p);
        }
    }
    best.copied().ok_or(Error::Empty("select_best"))
}
