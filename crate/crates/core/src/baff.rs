//! Box-aware feature fusion.
//!
//! Search seeds predict their own BoxClouds; those predictions are compared
//! with the template's BoxCloud to pick the `k` most similar template seeds
//! per search seed, and a mini-PointNet pools `[p_t; f_t; c_t; f_s]` over
//! that neighborhood into a target-specific search feature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::backbone::SeedSet;
use crate::boxcloud::{pairwise_distance_map, BoxCloud, BOXCLOUD_DIM};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{Binding, Mlp};
use crate::point_ops::{topk_smallest, IndexMatrix};

/// How template information is fused into the search seeds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// BoxCloud comparison, top-k grouping, mini-PointNet.
    #[default]
    Baff,
    /// Cosine-similarity aggregation over all template seeds with the
    /// template BoxCloud concatenated into each row.
    Vanilla,
    /// Same as `Baff` but neighbors are chosen by learned-feature distance.
    FeatureComparison,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baff" => Ok(Fusion::Baff),
            "vanilla" => Ok(Fusion::Vanilla),
            "feature_comparison" | "feature" => Ok(Fusion::FeatureComparison),
            other => Err(Error::Config(format!(
                "unknown fusion `{other}` (expected baff, vanilla or feature_comparison)"
            ))),
        }
    }
}

impl std::fmt::Display for Fusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fusion::Baff => "baff",
            Fusion::Vanilla => "vanilla",
            Fusion::FeatureComparison => "feature_comparison",
        })
    }
}

/// Search seeds after fusion.
#[derive(Clone, Debug)]
pub struct FusedSearch {
    pub positions: PointCloud,
    pub features: Var,
    pub predicted_boxcloud: Var,
    /// `k × M2` template neighbors per search seed; `None` for vanilla fusion.
    pub neighbors: Option<IndexMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Baff {
    pub bcnet: Mlp,
    pub mini: Mlp,
    pub fusion: Fusion,
    pub use_template_boxcloud: bool,
}

impl Baff {
    pub fn new(feature_dim: usize, fusion: Fusion, use_template_boxcloud: bool) -> Self {
        let d = feature_dim;
        let bc = if use_template_boxcloud { BOXCLOUD_DIM } else { 0 };
        let in_dim = match fusion {
            Fusion::Baff | Fusion::FeatureComparison => 3 + d + bc + d,
            Fusion::Vanilla => 1 + 3 + d + bc,
        };
        Self {
            bcnet: Mlp::new("baff.bcnet", &[d, d, BOXCLOUD_DIM], false),
            mini: Mlp::new("baff.mini", &[in_dim, d, d, d], true),
            fusion,
            use_template_boxcloud,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        self.bcnet.init(params, rng);
        self.mini.init(params, rng);
    }

    /// Per-seed 9-D box coordinates from search features.
    pub fn predict_boxcloud(&self, tape: &mut Tape, bind: &Binding, search: &SeedSet) -> Result<Var> {
        self.bcnet.forward(tape, bind, search.features)
    }

    /// Template neighbors of each search seed, `k × M2`.
    pub fn select_neighbors(
        &self,
        tape: &Tape,
        template: &SeedSet,
        template_bc: &BoxCloud,
        search: &SeedSet,
        predicted_bc: Var,
        k: usize,
    ) -> Result<IndexMatrix> {
        // grouping never receives gradient: compare detached values
        let dist = match self.fusion {
            Fusion::FeatureComparison => {
                pairwise_distance_map(tape.value(template.features), tape.value(search.features))?
            }
            _ => pairwise_distance_map(&template_bc.to_tensor(), tape.value(predicted_bc))?,
        };
        topk_smallest(&dist, k)
    }

    fn template_block(&self, tape: &mut Tape, template: &SeedSet, template_bc: &BoxCloud) -> Result<Vec<Var>> {
        let pos = tape.constant(Tensor::new(vec![template.len(), 3], template.positions.flat())?);
        let mut parts = vec![pos, template.features];
        if self.use_template_boxcloud {
            parts.push(tape.constant(template_bc.to_tensor()));
        }
        Ok(parts)
    }

    fn check_inputs(&self, tape: &Tape, template: &SeedSet, template_bc: &BoxCloud, search: &SeedSet) -> Result<()> {
        if template_bc.len() != template.len() {
            return Err(Error::Shape {
                op: "fuse",
                lhs: vec![template.len(), BOXCLOUD_DIM],
                rhs: vec![template_bc.len(), BOXCLOUD_DIM],
            });
        }
        if template.is_empty() || search.is_empty() {
            return Err(Error::Empty("fuse"));
        }
        let (dt, ds) = (tape.value(template.features).cols(), tape.value(search.features).cols());
        if dt != ds {
            return Err(Error::Shape {
                op: "fuse",
                lhs: tape.shape(template.features).to_vec(),
                rhs: tape.shape(search.features).to_vec(),
            });
        }
        Ok(())
    }

    /// Top-k BoxCloud-guided fusion (or feature-guided for the ablation).
    pub fn fuse(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        template: &SeedSet,
        template_bc: &BoxCloud,
        search: &SeedSet,
        k: usize,
    ) -> Result<FusedSearch> {
        if self.fusion == Fusion::Vanilla {
            return self.fuse_vanilla(tape, bind, template, template_bc, search);
        }
        self.check_inputs(tape, template, template_bc, search)?;
        if k == 0 || k > template.len() {
            return Err(Error::arg(format!("k = {k} must be in 1..={}", template.len())));
        }
        let predicted = self.predict_boxcloud(tape, bind, search)?;
        let nbrs = self.select_neighbors(tape, template, template_bc, search, predicted, k)?;

        let m2 = search.len();
        let template_idx = nbrs.columns_flat();
        let search_idx: Vec<usize> = (0..m2).flat_map(|i| std::iter::repeat_n(i, k)).collect();

        let mut parts = Vec::with_capacity(4);
        for t in self.template_block(tape, template, template_bc)? {
            parts.push(tape.gather_rows(t, &template_idx)?);
        }
        parts.push(tape.gather_rows(search.features, &search_idx)?);
        let rows = tape.concat_cols(&parts)?;
        let h = self.mini.forward(tape, bind, rows)?;
        let fused = tape.group_max_pool(h, k)?;
        Ok(FusedSearch {
            positions: search.positions.clone(),
            features: fused,
            predicted_boxcloud: predicted,
            neighbors: Some(nbrs),
        })
    }

    /// Similarity-weighted aggregation over every template seed, with the
    /// template BoxCloud appended as a prior.
    pub fn fuse_vanilla(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        template: &SeedSet,
        template_bc: &BoxCloud,
        search: &SeedSet,
    ) -> Result<FusedSearch> {
        self.check_inputs(tape, template, template_bc, search)?;
        let predicted = self.predict_boxcloud(tape, bind, search)?;
        let (m1, m2) = (template.len(), search.len());
        let d = tape.value(search.features).cols();

        let template_idx: Vec<usize> = (0..m2).flat_map(|_| 0..m1).collect();
        let search_idx: Vec<usize> = (0..m2).flat_map(|i| std::iter::repeat_n(i, m1)).collect();

        let nt = tape.row_normalize(template.features)?;
        let ns = tape.row_normalize(search.features)?;
        let gt = tape.gather_rows(nt, &template_idx)?;
        let gs = tape.gather_rows(ns, &search_idx)?;
        let prod = tape.mul(gt, gs)?;
        let ones = tape.constant(Tensor::filled(&[d, 1], 1.0));
        let sim = tape.matmul(prod, ones)?;

        let mut parts = vec![sim];
        for t in self.template_block(tape, template, template_bc)? {
            parts.push(tape.gather_rows(t, &template_idx)?);
        }
        let rows = tape.concat_cols(&parts)?;
        let h = self.mini.forward(tape, bind, rows)?;
        let fused = tape.group_max_pool(h, m1)?;
        Ok(FusedSearch {
            positions: search.positions.clone(),
            features: fused,
            predicted_boxcloud: predicted,
            neighbors: None,
        })
    }
}

/// Huber loss on the predicted BoxClouds of seeds inside the target box,
/// normalized by the number of such seeds.
pub fn boxcloud_loss(tape: &mut Tape, pred: Var, gt: &BoxCloud, mask: &[f64]) -> Result<Var> {
    let target = tape.constant(gt.to_tensor());
    tape.smooth_l1(pred, target, mask)
}
