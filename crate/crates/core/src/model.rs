//! The complete network: shared backbone, fusion, proposal head.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::gradcheck::{self, GradReport};
use crate::autodiff::{ParamSet, Tape, Var};
use crate::backbone::{Backbone, BackboneConfig, SeedSet};
use crate::baff::{boxcloud_loss, Baff, FusedSearch, Fusion};
use crate::boxcloud::compute_boxcloud;
use crate::error::{Error, Result};
use crate::geometry::{Box7, PointCloud};
use crate::nn::{Binding, InitScheme};
use crate::rpn::{ProposalSet, Rpn, RpnLoss, VoteSet};

/// Architecture hyperparameters. Everything here is fixed once weights exist
/// except `k`, which may be changed at inference time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub template_seeds: usize,
    pub search_seeds: usize,
    pub sa_radii: [f64; 2],
    pub sa_max_k: usize,
    pub k: usize,
    pub fusion: Fusion,
    pub use_template_boxcloud: bool,
    pub n_proposals: usize,
    pub proposal_radius: f64,
    pub proposal_max_k: usize,
    pub init: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            template_seeds: 32,
            search_seeds: 64,
            sa_radii: [0.3, 0.5],
            sa_max_k: 16,
            k: 4,
            fusion: Fusion::Baff,
            use_template_boxcloud: true,
            n_proposals: 16,
            proposal_radius: 0.3,
            proposal_max_k: 16,
            init: InitScheme::He,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.template_seeds == 0 || self.search_seeds == 0 {
            return bad("seed counts must be positive");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.k > self.template_seeds && self.fusion != Fusion::Vanilla {
            return bad("k cannot exceed template_seeds");
        }
        if self.n_proposals == 0 || self.n_proposals > self.search_seeds {
            return bad("n_proposals must be in 1..=search_seeds");
        }
        if !(self.proposal_radius > 0.0) || !self.sa_radii.iter().all(|r| *r > 0.0) {
            return bad("radii must be positive");
        }
        if self.sa_max_k == 0 || self.proposal_max_k == 0 {
            return bad("group sizes must be positive");
        }
        Ok(())
    }
}

/// Intermediate results of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub template: SeedSet,
    pub search: SeedSet,
    pub fused: FusedSearch,
    pub votes: VoteSet,
    pub proposals: ProposalSet,
    pub fuse_time: Duration,
}

#[derive(Clone, Copy, Debug)]
pub struct Losses {
    pub total: Var,
    pub boxcloud: Var,
    /// Absent when λ = 0.
    pub rpn: Option<RpnLoss>,
}

#[derive(Clone, Debug)]
pub struct BatModel {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub baff: Baff,
    pub rpn: Rpn,
    pub params: ParamSet,
}

impl BatModel {
    fn modules(config: &ModelConfig) -> (Backbone, Baff, Rpn) {
        let backbone = Backbone::new(&BackboneConfig {
            feature_dim: config.feature_dim,
            radii: config.sa_radii,
            max_k: config.sa_max_k,
        });
        let baff = Baff::new(config.feature_dim, config.fusion, config.use_template_boxcloud);
        let rpn = Rpn::new(config.feature_dim);
        (backbone, baff, rpn)
    }

    /// Fresh weights from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (backbone, baff, rpn) = Self::modules(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        backbone.init(&mut params, &mut rng);
        baff.init(&mut params, &mut rng);
        rpn.init(&mut params, &mut rng);
        config.init.apply(&mut params);
        Ok(Self {
            config,
            backbone,
            baff,
            rpn,
            params,
        })
    }

    /// Adopts existing weights after checking every expected tensor is
    /// present with the right shape.
    pub fn with_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(config, 0)?;
        for (name, t) in reference.params.iter() {
            let got = params.expect(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        let mut own = ParamSet::new();
        for name in reference.params.names() {
            own.insert(name.clone(), params.expect(name)?.clone());
        }
        Ok(Self {
            params: own,
            ..reference
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Binding {
        Binding::new(tape, &self.params, trainable)
    }

    /// Runs template and search through the network.
    ///
    /// `template_points` are in the template box's object frame and
    /// `template_box` is that box at the origin with zero heading; the search
    /// points are in the search-area frame.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        template_points: &PointCloud,
        template_box: &Box7,
        search_points: &PointCloud,
        k: usize,
    ) -> Result<ForwardPass> {
        let cfg = &self.config;
        let template = self.backbone.encode(tape, bind, template_points, cfg.template_seeds)?;
        let search = self.backbone.encode(tape, bind, search_points, cfg.search_seeds)?;
        let template_bc = compute_boxcloud(&template.positions, template_box);
        let t0 = Instant::now();
        let fused = self.baff.fuse(tape, bind, &template, &template_bc, &search, k)?;
        let fuse_time = t0.elapsed();
        let votes = self.rpn.vote(tape, bind, &fused)?;
        let proposals = self.rpn.cluster_and_propose(
            tape,
            bind,
            &votes,
            cfg.n_proposals,
            cfg.proposal_radius,
            cfg.proposal_max_k,
        )?;
        Ok(ForwardPass {
            template,
            search,
            fused,
            votes,
            proposals,
            fuse_time,
        })
    }

    /// `L_bc + λ·L_rpn` for one sample; `gt` is in the search frame. With
    /// λ = 0 the proposal terms are not built at all.
    pub fn losses(&self, tape: &mut Tape, pass: &ForwardPass, gt: &Box7, lambda: f64) -> Result<Losses> {
        let seeds = &pass.fused.positions;
        let mask: Vec<f64> = seeds.iter().map(|p| if gt.contains(*p) { 1.0 } else { 0.0 }).collect();
        let gt_bc = compute_boxcloud(seeds, gt);
        let boxcloud = boxcloud_loss(tape, pass.fused.predicted_boxcloud, &gt_bc, &mask)?;
        if lambda == 0.0 {
            return Ok(Losses {
                total: boxcloud,
                boxcloud,
                rpn: None,
            });
        }
        let rpn = self.rpn.loss(tape, &pass.votes, &pass.proposals, gt)?;
        let weighted = tape.scale(rpn.total, lambda);
        let total = tape.add(boxcloud, weighted)?;
        Ok(Losses {
            total,
            boxcloud,
            rpn: Some(rpn),
        })
    }
}

/// Finite-difference check of `∂L/∂θ` for every parameter tensor, on one
/// sample. Names come back in the order of `report.rel_errors`.
pub fn check_model_gradients(
    model: &BatModel,
    template_points: &PointCloud,
    template_box: &Box7,
    search_points: &PointCloud,
    gt: &Box7,
    lambda: f64,
    step: f64,
) -> Result<(Vec<String>, GradReport)> {
    let names: Vec<String> = model.params.names().cloned().collect();
    let inputs: Vec<_> = names.iter().map(|n| model.params.expect(n).cloned()).collect::<Result<_>>()?;
    let report = gradcheck::check(&inputs, step, |tape, vars| {
        let bind = Binding::from_vars(names.iter().cloned().zip(vars.iter().copied()));
        let pass = model.forward(tape, &bind, template_points, template_box, search_points, model.config.k)?;
        Ok(model.losses(tape, &pass, gt, lambda)?.total)
    })?;
    Ok((names, report))
}
