//! Shared point encoder: two set-abstraction layers (sample, group, shared
//! MLP, max-pool) turning a raw cloud into seeds with features.

use rand::Rng;

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{Binding, Mlp};
use crate::point_ops::{ball_query, farthest_point_sampling};

/// Sampled positions and their features on a tape.
#[derive(Clone, Debug)]
pub struct SeedSet {
    pub positions: PointCloud,
    pub features: Var,
}

impl SeedSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetAbstraction {
    pub mlp: Mlp,
    pub radius: f64,
    pub max_k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub feature_dim: usize,
    pub radii: [f64; 2],
    pub max_k: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            radii: [0.3, 0.5],
            max_k: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub layers: Vec<SetAbstraction>,
}

impl Backbone {
    pub fn new(cfg: &BackboneConfig) -> Self {
        let d = cfg.feature_dim;
        let layers = cfg
            .radii
            .iter()
            .enumerate()
            .map(|(i, &radius)| {
                let in_dim = if i == 0 { 3 } else { 3 + d };
                SetAbstraction {
                    mlp: Mlp::new(format!("backbone.layer{i}"), &[in_dim, d, d], true),
                    radius,
                    max_k: cfg.max_k,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn feature_dim(&self) -> usize {
        *self.layers.last().unwrap().mlp.widths.last().unwrap()
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        for l in &self.layers {
            l.mlp.init(params, rng);
        }
    }

    /// Raw points as a seed set with zero-width features.
    pub fn input_seeds(tape: &mut Tape, points: &PointCloud) -> SeedSet {
        SeedSet {
            positions: points.clone(),
            features: tape.constant(Tensor::zeros(&[points.len(), 0])),
        }
    }

    /// FPS to `m_out` centers, ball-query neighborhoods, per neighbor
    /// `[(p − center)/radius; feature]`, shared MLP, max-pool per group.
    pub fn set_abstraction(
        layer: &SetAbstraction,
        tape: &mut Tape,
        bind: &Binding,
        input: &SeedSet,
        m_out: usize,
    ) -> Result<SeedSet> {
        let centers_idx = farthest_point_sampling(&input.positions, m_out, 0)?;
        let centers = input.positions.select(centers_idx.row(0));
        let groups = ball_query(&centers, &input.positions, layer.radius, layer.max_k)?;

        let inv_r = 1.0 / layer.radius;
        let mut rel = Vec::with_capacity(groups.as_slice().len() * 3);
        for (g, c) in centers.iter().enumerate() {
            for &i in groups.row(g) {
                let p = input.positions.points[i];
                rel.extend((0..3).map(|k| (p[k] - c[k]) * inv_r));
            }
        }
        let rel = tape.constant(Tensor::new(vec![m_out * layer.max_k, 3], rel)?);
        let feats = tape.gather_rows(input.features, groups.as_slice())?;
        let x = tape.concat_cols(&[rel, feats])?;
        let h = layer.mlp.forward(tape, bind, x)?;
        let pooled = tape.group_max_pool(h, layer.max_k)?;
        Ok(SeedSet {
            positions: centers,
            features: pooled,
        })
    }

    /// Two abstraction layers: `N → 2·n_seeds → n_seeds`.
    pub fn encode(&self, tape: &mut Tape, bind: &Binding, points: &PointCloud, n_seeds: usize) -> Result<SeedSet> {
        if points.is_empty() {
            return Err(Error::Empty("encode"));
        }
        let mut seeds = Self::input_seeds(tape, points);
        let n_layers = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let m = n_seeds << (n_layers - 1 - i);
            seeds = Self::set_abstraction(layer, tape, bind, &seeds, m)?;
        }
        Ok(seeds)
    }
}
