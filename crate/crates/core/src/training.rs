//! Sample generation, Adam, the step schedule and the epoch loop.

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Tape, Tensor};
use crate::dataio::TrackSequence;
use crate::error::{Error, Result};
use crate::geometry::{Box7, PointCloud};
use crate::model::{BatModel, ModelConfig};
use crate::tracker::{make_search_area, make_template, TemplateStrategy};

pub const MODEL_FILE: &str = "model.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const MODEL_CONFIG_FILE: &str = "model.toml";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_step: usize,
    pub lambda: f64,
    /// Uniform horizontal shift of the search anchor, meters.
    pub shift_xy: f64,
    /// Uniform heading shift of the search anchor, degrees.
    pub shift_heading_deg: f64,
    pub search_margin: f64,
    pub n_template_points: usize,
    pub n_search_points: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the last.
    pub checkpoint_every: usize,
    /// Passes over the frame pairs per epoch, each with fresh shifts.
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 8,
            lr: 0.001,
            lr_decay: 5.0,
            lr_step: 12,
            lambda: 1.0,
            shift_xy: 0.3,
            shift_heading_deg: 10.0,
            search_margin: 2.0,
            n_template_points: 128,
            n_search_points: 256,
            seed: 0,
            checkpoint_every: 0,
            repeats: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.batch_size == 0 || self.repeats == 0 {
            return bad("batch_size and repeats must be at least 1");
        }
        if !(self.lr > 0.0) || !(self.lr_decay >= 1.0) || self.lr_step == 0 {
            return bad("lr must be positive, lr_decay ≥ 1 and lr_step ≥ 1");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.shift_xy < 0.0 || self.shift_heading_deg < 0.0 || !(self.search_margin > 0.0) {
            return bad("shifts must be non-negative and search_margin positive");
        }
        if self.n_template_points == 0 || self.n_search_points == 0 {
            return bad("point counts must be positive");
        }
        Ok(())
    }

    /// Step decay: `lr · decay^(−⌊epoch / step⌋)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(-((epoch / self.lr_step) as i32))
    }
}

/// Default schedule: 0.001, divided by 5 every 12 epochs.
pub fn schedule(epoch: usize) -> f64 {
    TrainConfig::default().lr_at(epoch)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn to_params(&self, epoch: usize) -> ParamSet {
        let mut p = ParamSet::new();
        for (n, t) in self.m.iter() {
            p.insert(format!("m.{n}"), t.clone());
        }
        for (n, t) in self.v.iter() {
            p.insert(format!("v.{n}"), t.clone());
        }
        p.insert("state.step", Tensor::scalar(self.step as f64));
        p.insert("state.epoch", Tensor::scalar(epoch as f64));
        p
    }

    /// Inverse of [`AdamState::to_params`]; also returns the stored epoch.
    pub fn from_params(p: &ParamSet) -> Result<(Self, usize)> {
        let mut s = AdamState::default();
        for (n, t) in p.iter() {
            if let Some(rest) = n.strip_prefix("m.") {
                s.m.insert(rest, t.clone());
            } else if let Some(rest) = n.strip_prefix("v.") {
                s.v.insert(rest, t.clone());
            }
        }
        s.step = p.expect("state.step")?.item() as u64;
        let epoch = p.expect("state.epoch")?.item() as usize;
        Ok((s, epoch))
    }
}

/// One bias-corrected Adam update. Every gradient is checked before any
/// parameter moves.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, lr: f64, h: AdamHyper) -> Result<()> {
    for (name, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::NonFinite(name.clone()));
        }
        let p = params.expect(name)?;
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    for (name, g) in grads.iter() {
        let shape = g.shape().to_vec();
        if state.m.get(name).is_none() {
            state.m.insert(name.clone(), Tensor::zeros(&shape));
            state.v.insert(name.clone(), Tensor::zeros(&shape));
        }
        let m = state.m.get_mut(name).unwrap().data_mut();
        for (mi, gi) in m.iter_mut().zip(g.data()) {
            *mi = h.beta1 * *mi + (1.0 - h.beta1) * gi;
        }
        let v = state.v.get_mut(name).unwrap().data_mut();
        for (vi, gi) in v.iter_mut().zip(g.data()) {
            *vi = h.beta2 * *vi + (1.0 - h.beta2) * gi * gi;
        }
        let m = state.m.get(name).unwrap().data();
        let v = state.v.get(name).unwrap().data();
        let p = params.get_mut(name).unwrap().data_mut();
        for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
            *pi -= lr * (mi / c1) / ((vi / c2).sqrt() + h.eps);
        }
    }
    Ok(())
}

/// One (template, search) pair with the target box in the search frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub template: PointCloud,
    pub template_box: Box7,
    pub search: PointCloud,
    pub gt: Box7,
}

/// Builds the sample for frame `t ≥ 1` of `seq`: template from the first
/// and previous true boxes, search around a randomly shifted copy of the
/// current true box. Returns `None` when either crop is empty.
pub fn make_sample<R: Rng + ?Sized>(
    seq: &TrackSequence,
    t: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Option<TrainingSample>> {
    if t == 0 || t >= seq.len() {
        return Err(Error::arg(format!("frame {t} has no predecessor in `{}`", seq.id)));
    }
    let history = [
        (seq.frames[0].points.clone(), seq.frames[0].gt),
        (seq.frames[t - 1].points.clone(), seq.frames[t - 1].gt),
    ];
    let history = if t == 1 { &history[..1] } else { &history[..] };
    let (template, template_box) =
        match make_template(history, TemplateStrategy::FirstAndPrevious, cfg.n_template_points, rng) {
            Ok(x) => x,
            Err(Error::EmptyTemplate) => return Ok(None),
            Err(e) => return Err(e),
        };
    let gt = seq.frames[t].gt;
    let s = cfg.shift_xy;
    let a = cfg.shift_heading_deg.to_radians();
    let mut reference = gt;
    if s > 0.0 {
        reference.center[0] += rng.gen_range(-s..=s);
        reference.center[1] += rng.gen_range(-s..=s);
    }
    if a > 0.0 {
        reference = Box7::new(reference.center, reference.size, reference.heading + rng.gen_range(-a..=a))?;
    }
    let search = match make_search_area(&seq.frames[t].points, &reference, cfg.search_margin, cfg.n_search_points, rng) {
        Ok(x) => x,
        Err(Error::EmptySearch) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(Some(TrainingSample {
        template,
        template_box,
        search: search.points,
        gt: gt.in_frame_of(&reference),
    }))
}

/// Loss values of one step, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub boxcloud: f64,
    /// `None` when λ = 0.
    pub rpn: Option<RpnValues>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RpnValues {
    pub total: f64,
    pub vote: f64,
    pub seed: f64,
    pub prop_score: f64,
    pub prop_reg: f64,
}

/// Batch-mean loss and gradient. One tape per sample.
pub fn batch_gradient(model: &BatModel, batch: &[TrainingSample], lambda: f64) -> Result<(LossValues, ParamSet)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch_gradient"));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut grads: Option<ParamSet> = None;
    let mut vals = LossValues::default();
    let mut rpn = RpnValues::default();
    for s in batch {
        let mut tape = Tape::new();
        let bind = model.bind(&mut tape, true);
        let pass = model.forward(&mut tape, &bind, &s.template, &s.template_box, &s.search, model.config.k)?;
        let l = model.losses(&mut tape, &pass, &s.gt, lambda)?;
        let g = bind.collect_grads(&tape, &tape.backward(l.total)?);
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (name, t) in g.iter() {
                    acc.get_mut(name).unwrap().add_assign(t);
                }
            }
        }
        let v = |x| tape.value(x).item() * inv;
        vals.total += v(l.total);
        vals.boxcloud += v(l.boxcloud);
        if let Some(r) = l.rpn {
            rpn.total += v(r.total);
            rpn.vote += v(r.vote);
            rpn.seed += v(r.seed);
            rpn.prop_score += v(r.prop_score);
            rpn.prop_reg += v(r.prop_reg);
        }
    }
    vals.rpn = (lambda != 0.0).then_some(rpn);
    let mut grads = grads.unwrap();
    let names: Vec<String> = grads.names().cloned().collect();
    for n in names {
        for x in grads.get_mut(&n).unwrap().data_mut() {
            *x *= inv;
        }
    }
    Ok((vals, grads))
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: LossValues,
    pub lr: f64,
    pub wall_secs: f64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} step={} loss={:.6} l_bc={:.6}",
            self.epoch, self.step, self.loss.total, self.loss.boxcloud
        )?;
        if let Some(r) = self.loss.rpn {
            write!(
                f,
                " l_rpn={:.6} vote={:.6} seed={:.6} prop_score={:.6} prop_reg={:.6}",
                r.total, r.vote, r.seed, r.prop_score, r.prop_reg
            )?;
        }
        write!(f, " lr={:e} wall={:.3}", self.lr, self.wall_secs)
    }
}

/// Model, optimizer state and the next epoch to run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: BatModel,
    pub adam: AdamState,
    pub hyper: AdamHyper,
    pub cfg: TrainConfig,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = BatModel::new(model_cfg, cfg.seed)?;
        Ok(Self {
            model,
            adam: AdamState::default(),
            hyper: AdamHyper::default(),
            cfg,
            epoch: 0,
        })
    }

    /// Restores weights, optimizer moments and the epoch counter.
    pub fn resume(dir: &Path, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = load_model(dir)?;
        let (adam, epoch) = AdamState::from_params(&ParamSet::load(&dir.join(OPTIMIZER_FILE))?)?;
        Ok(Self {
            model,
            adam,
            hyper: AdamHyper::default(),
            cfg,
            epoch,
        })
    }

    /// Shuffled training samples for `epoch`; reproducible from the seed
    /// and epoch alone.
    pub fn epoch_samples(&self, seqs: &[TrackSequence], epoch: usize) -> Result<Vec<TrainingSample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut pairs: Vec<(usize, usize)> = seqs
            .iter()
            .enumerate()
            .flat_map(|(i, s)| (1..s.len()).map(move |t| (i, t)))
            .collect();
        pairs = pairs.repeat(self.cfg.repeats);
        pairs.shuffle(&mut rng);
        let mut out = Vec::with_capacity(pairs.len());
        for (i, t) in pairs {
            if let Some(s) = make_sample(&seqs[i], t, &self.cfg, &mut rng)? {
                out.push(s);
            }
        }
        Ok(out)
    }

    /// Runs one epoch, calling `log` after every step.
    pub fn run_epoch(&mut self, seqs: &[TrackSequence], log: &mut dyn FnMut(&LogRecord)) -> Result<()> {
        let start = Instant::now();
        let samples = self.epoch_samples(seqs, self.epoch)?;
        if samples.is_empty() {
            return Err(Error::Empty("training samples"));
        }
        let lr = self.cfg.lr_at(self.epoch);
        for batch in samples.chunks(self.cfg.batch_size) {
            let (loss, grads) = batch_gradient(&self.model, batch, self.cfg.lambda)?;
            adam_step(&mut self.model.params, &grads, &mut self.adam, lr, self.hyper)?;
            log(&LogRecord {
                epoch: self.epoch,
                step: self.adam.step,
                loss,
                lr,
                wall_secs: start.elapsed().as_secs_f64(),
            });
        }
        self.epoch += 1;
        Ok(())
    }

    /// Trains until `cfg.epochs`, checkpointing into `out` when given.
    pub fn run(&mut self, seqs: &[TrackSequence], out: Option<&Path>, log: &mut dyn FnMut(&LogRecord)) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            self.run_epoch(seqs, log)?;
            let every = self.cfg.checkpoint_every;
            let due = self.epoch == self.cfg.epochs || (every > 0 && self.epoch.is_multiple_of(every));
            if let (Some(dir), true) = (out, due) {
                self.save(dir)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_model(&self.model, dir)?;
        self.adam.to_params(self.epoch).save(&dir.join(OPTIMIZER_FILE))
    }
}

/// Writes weights and architecture into `dir`.
pub fn save_model(model: &BatModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let toml = toml::to_string(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    let cfg_path = dir.join(MODEL_CONFIG_FILE);
    fs::write(&cfg_path, toml).map_err(|e| Error::io(&cfg_path, e))?;
    model.params.save(&dir.join(MODEL_FILE))
}

pub fn load_model(dir: &Path) -> Result<BatModel> {
    let cfg_path = dir.join(MODEL_CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg: ModelConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", cfg_path.display())))?;
    BatModel::with_params(cfg, ParamSet::load(&dir.join(MODEL_FILE))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{generate_dataset, ObjectSpec, SceneSpec};

    fn scalar(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![v]));
        p
    }

    #[test]
    fn schedule_values() {
        assert_eq!(schedule(0), 0.001);
        assert_eq!(schedule(11), 0.001);
        assert!((schedule(12) - 0.0002).abs() < 1e-18);
        assert!((schedule(59) - 0.001 / 625.0).abs() < 1e-18);
    }

    #[test]
    fn adam_zero_gradient_and_sign_step() {
        let mut p = scalar(1.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &scalar(0.0), &mut s, 0.1, AdamHyper::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0]);
        let mut p = scalar(1.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &scalar(-3.0), &mut s, 0.1, AdamHyper::default()).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 1.1).abs() < 1e-8);
    }

    #[test]
    fn adam_two_step_hand_trace() {
        // g = 1 then g = 2, lr 0.01
        // m1 = 0.1, v1 = 0.001 → step 0.01 · 1 / (1 + 1e-8)
        // m2 = 0.29, v2 = 0.004999; m̂ = 0.29/0.19, v̂ = 0.004999/0.001999
        let h = AdamHyper::default();
        let mut p = scalar(0.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &scalar(1.0), &mut s, 0.01, h).unwrap();
        adam_step(&mut p, &scalar(2.0), &mut s, 0.01, h).unwrap();
        let step1 = 0.01 / (1.0 + 1e-8);
        let step2 = 0.01 * (0.29 / 0.19) / ((0.004999f64 / 0.001999).sqrt() + 1e-8);
        assert!((p.get("w").unwrap().data()[0] + step1 + step2).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite_by_name() {
        let mut p = scalar(1.0);
        let err = adam_step(&mut p, &scalar(f64::NAN), &mut AdamState::default(), 0.1, AdamHyper::default()).unwrap_err();
        assert_eq!(err.to_string(), "non-finite gradient in parameter `w`");
        assert_eq!(p.get("w").unwrap().data(), &[1.0]);
    }

    fn tiny() -> (ModelConfig, TrainConfig, Vec<TrackSequence>) {
        let model = ModelConfig {
            feature_dim: 8,
            template_seeds: 8,
            search_seeds: 16,
            n_proposals: 4,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            epochs: 2,
            batch_size: 3,
            n_template_points: 32,
            n_search_points: 64,
            ..TrainConfig::default()
        };
        let spec = SceneSpec {
            sequences: 2,
            frames: 4,
            target: ObjectSpec {
                points: 120,
                ..ObjectSpec::default()
            },
            ..SceneSpec::default()
        };
        (model, train, generate_dataset(&spec).unwrap())
    }

    #[test]
    fn samples_put_target_inside_search_region() {
        let (_, cfg, seqs) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in 1..4 {
            let s = make_sample(&seqs[0], t, &cfg, &mut rng).unwrap().unwrap();
            assert_eq!(s.search.len(), 64);
            assert!(s.gt.center[0].abs() <= 0.3 * 2f64.sqrt() + 1e-9);
            assert!(s.gt.heading.abs() <= 10f64.to_radians() + 1e-12);
            assert!(s.search.iter().any(|p| s.gt.contains(*p)));
        }
        assert!(make_sample(&seqs[0], 0, &cfg, &mut rng).is_err());
    }

    #[test]
    fn lambda_zero_leaves_proposal_head_untouched() {
        let (m, cfg, seqs) = tiny();
        let tr = Trainer::new(m, cfg).unwrap();
        let samples = tr.epoch_samples(&seqs, 0).unwrap();
        let (vals, g) = batch_gradient(&tr.model, &samples[..2], 0.0).unwrap();
        assert!(vals.rpn.is_none());
        for (name, t) in g.iter() {
            let touched = t.data().iter().any(|x| *x != 0.0);
            if name.starts_with("rpn.") || name.starts_with("baff.mini") {
                assert!(!touched, "{name}");
            }
        }
        assert!(g.get("baff.bcnet.w0").unwrap().data().iter().any(|x| *x != 0.0));
        assert!(g.get("backbone.layer0.w0").unwrap().data().iter().any(|x| *x != 0.0));
    }

    #[test]
    fn training_is_reproducible_and_resumable() {
        let (m, cfg, seqs) = tiny();
        let run = || {
            let mut tr = Trainer::new(m.clone(), cfg.clone()).unwrap();
            let mut lines = Vec::new();
            tr.run(&seqs, None, &mut |r| lines.push(r.loss)).unwrap();
            (tr.model.params, lines)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);

        let dir = tempfile::tempdir().unwrap();
        let mut tr = Trainer::new(m.clone(), TrainConfig { epochs: 1, ..cfg.clone() }).unwrap();
        tr.run(&seqs, Some(dir.path()), &mut |_| {}).unwrap();
        let mut resumed = Trainer::resume(dir.path(), cfg.clone()).unwrap();
        assert_eq!(resumed.epoch, 1);
        resumed.run(&seqs, None, &mut |_| {}).unwrap();
        assert_eq!(resumed.model.params, a);
    }
}
