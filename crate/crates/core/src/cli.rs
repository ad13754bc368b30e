//! Command-line surface: `synth`, `train`, `track`, `eval`, `ablate`.
//!
//! Every command is also a plain function so it can be driven from tests
//! and examples without spawning a process.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::baff::Fusion;
use crate::dataio::{evaluable, load_dataset, write_dataset, SceneSpec, TrackSequence};
use crate::error::{Error, Result};
use crate::eval::{
    boxcloud_mse_report, format_curve, format_mse_csv, format_scores_csv, format_sparsity_csv, precision_curve,
    score_sequence, sparsity_report, success_curve, summarize, SequenceScore, Summary, DEFAULT_MSE_EDGES,
    DEFAULT_SPARSITY_EDGES,
};
use crate::model::ModelConfig;
use crate::nn::InitScheme;
use crate::tracker::{track_sequence, SearchMode, TemplateStrategy, TrackResult, TrackerConfig};
use crate::training::{load_model, TrainConfig, Trainer};

pub const TRAIN_LOG_FILE: &str = "train.log";
pub const RUN_CONFIG_FILE: &str = "config.toml";
pub const SCORES_FILE: &str = "scores.csv";
pub const SUCCESS_CURVE_FILE: &str = "success_curve.txt";
pub const PRECISION_CURVE_FILE: &str = "precision_curve.txt";
pub const SPARSITY_FILE: &str = "sparsity.csv";
pub const MSE_FILE: &str = "boxcloud_mse.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
/// Thresholds per emitted curve.
pub const CURVE_POINTS: usize = 101;

/// Flat key-value run configuration. Every key is optional in the file and
/// falls back to the default below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    // optimisation
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_step: usize,
    pub lambda: f64,
    pub repeats: usize,
    pub shift_xy: f64,
    pub shift_heading_deg: f64,
    pub checkpoint_every: usize,
    // sampling and tracking
    pub search_margin: f64,
    pub n_template_points: usize,
    pub n_search_points: usize,
    pub k: usize,
    pub template_strategy: TemplateStrategy,
    pub mode: SearchMode,
    // architecture
    pub fusion: Fusion,
    pub use_template_boxcloud: bool,
    pub feature_dim: usize,
    pub template_seeds: usize,
    pub search_seeds: usize,
    pub sa_radii: [f64; 2],
    pub sa_max_k: usize,
    pub n_proposals: usize,
    pub proposal_radius: f64,
    pub proposal_max_k: usize,
    pub init: InitScheme,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let r = TrackerConfig::default();
        Self {
            seed: t.seed,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_decay: t.lr_decay,
            lr_step: t.lr_step,
            lambda: t.lambda,
            repeats: t.repeats,
            shift_xy: t.shift_xy,
            shift_heading_deg: t.shift_heading_deg,
            checkpoint_every: t.checkpoint_every,
            search_margin: t.search_margin,
            n_template_points: t.n_template_points,
            n_search_points: t.n_search_points,
            k: m.k,
            template_strategy: r.template_strategy,
            mode: r.search_mode,
            fusion: m.fusion,
            use_template_boxcloud: m.use_template_boxcloud,
            feature_dim: m.feature_dim,
            template_seeds: m.template_seeds,
            search_seeds: m.search_seeds,
            sa_radii: m.sa_radii,
            sa_max_k: m.sa_max_k,
            n_proposals: m.n_proposals,
            proposal_radius: m.proposal_radius,
            proposal_max_k: m.proposal_max_k,
            init: m.init,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: self.feature_dim,
            template_seeds: self.template_seeds,
            search_seeds: self.search_seeds,
            sa_radii: self.sa_radii,
            sa_max_k: self.sa_max_k,
            k: self.k,
            fusion: self.fusion,
            use_template_boxcloud: self.use_template_boxcloud,
            n_proposals: self.n_proposals,
            proposal_radius: self.proposal_radius,
            proposal_max_k: self.proposal_max_k,
            init: self.init,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_decay: self.lr_decay,
            lr_step: self.lr_step,
            lambda: self.lambda,
            shift_xy: self.shift_xy,
            shift_heading_deg: self.shift_heading_deg,
            search_margin: self.search_margin,
            n_template_points: self.n_template_points,
            n_search_points: self.n_search_points,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            repeats: self.repeats,
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            k: self.k,
            template_strategy: self.template_strategy,
            search_mode: self.mode,
            search_margin: self.search_margin,
            n_template_points: self.n_template_points,
            n_search_points: self.n_search_points,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.tracker_config().validate()
    }
}

#[derive(Debug, Parser)]
#[command(name = "bat", version, about = "Box-aware single-object tracking on point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a scene spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint already in `--out`.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Track every sequence of a dataset with a trained checkpoint.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrackOverrides,
    },
    /// Score tracking results against ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sparsity bin edges (first-frame point counts); bare flag uses the defaults.
        #[arg(long, num_args = 0..=1, value_delimiter = ',', default_missing_value = "10,30,50,100,150")]
        bins: Option<Vec<usize>>,
        /// Also write the BoxCloud error histogram for this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every fusion variant over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub fusion: Option<Fusion>,
}

#[derive(Debug, Default, Args)]
pub struct TrackOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub mode: Option<SearchMode>,
    #[arg(long)]
    pub template_strategy: Option<TemplateStrategy>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.fusion {
            cfg.fusion = v;
        }
    }
}

impl TrackOverrides {
    pub fn apply(&self, cfg: &mut TrackerConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.mode {
            cfg.search_mode = v;
        }
        if let Some(v) = self.template_strategy {
            cfg.template_strategy = v;
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out, seed } => cmd_synth(&spec, &out, seed).map(drop),
        Command::Train {
            config,
            data,
            out,
            resume,
            overrides,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            overrides.apply(&mut cfg);
            cmd_train(&cfg, &data, &out, resume).map(drop)
        }
        Command::Track {
            checkpoint,
            data,
            out,
            config,
            overrides,
        } => {
            let mut tcfg = match &config {
                Some(p) => RunConfig::load(p)?.tracker_config(),
                None => {
                    let model = load_model(&checkpoint)?;
                    TrackerConfig {
                        k: model.config.k,
                        ..TrackerConfig::default()
                    }
                }
            };
            overrides.apply(&mut tcfg);
            cmd_track(&checkpoint, &data, &out, &tcfg).map(drop)
        }
        Command::Eval {
            results,
            data,
            out,
            bins,
            checkpoint,
        } => {
            let summary = cmd_eval(&results, &data, &out, bins.as_deref())?;
            if let Some(ck) = checkpoint {
                cmd_boxcloud_mse(&ck, &data, &out)?;
            }
            println!(
                "frames {} success {:.4} precision {:.4}",
                summary.frames, summary.success, summary.precision
            );
            Ok(())
        }
        Command::Ablate {
            config,
            train,
            test,
            out,
            seeds,
            epochs,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let rows = cmd_ablate(&cfg, &train, &test, &out, &seeds)?;
            print!("{}", format_ablation_csv(&rows));
            Ok(())
        }
    }
}

/// Generates the scene in `spec_path` into `out`. `seed` replaces the
/// spec's own seed when given.
pub fn cmd_synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<TrackSequence>> {
    let mut spec = SceneSpec::load(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let seqs = crate::dataio::generate_dataset(&spec)?;
    write_dataset(out, &seqs)?;
    info!("wrote {} sequences to {}", seqs.len(), out.display());
    Ok(seqs)
}

/// Trains on the dataset in `data`, writing the checkpoint, the resolved
/// configuration and a step log into `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, resume: bool) -> Result<Trainer> {
    cfg.validate()?;
    let seqs = evaluable(load_dataset(data)?);
    if seqs.is_empty() {
        return Err(Error::Empty("training sequences"));
    }
    create_dir(out)?;
    let mut trainer = if resume {
        Trainer::resume(out, cfg.train_config())?
    } else {
        Trainer::new(cfg.model_config(), cfg.train_config())?
    };
    write(&out.join(RUN_CONFIG_FILE), &cfg.to_toml())?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log = if resume {
        fs::read_to_string(&log_path).unwrap_or_default()
    } else {
        String::new()
    };
    let mut last_epoch = None;
    trainer.run(&seqs, Some(out), &mut |r| {
        writeln!(log, "{r}").unwrap();
        if last_epoch != Some(r.epoch) {
            info!("epoch {} lr {:e}", r.epoch, r.lr);
            last_epoch = Some(r.epoch);
        }
    })?;
    trainer.save(out)?;
    write(&log_path, &log)?;
    Ok(trainer)
}

/// Tracks every evaluable sequence in `data` and writes one result file per
/// sequence into `out`.
pub fn cmd_track(checkpoint: &Path, data: &Path, out: &Path, cfg: &TrackerConfig) -> Result<Vec<TrackResult>> {
    cfg.validate()?;
    let model = load_model(checkpoint)?;
    let seqs = load_dataset(data)?;
    create_dir(out)?;
    let mut results = Vec::new();
    for seq in &seqs {
        if seq.first_box_points() == 0 {
            warn!("{}: first box holds no points, skipped", seq.id);
            continue;
        }
        let r = track_sequence(&model, seq, cfg)?;
        write(&out.join(format!("{}.txt", seq.id)), &r.to_text())?;
        results.push(r);
    }
    Ok(results)
}

/// Reads `results/<seq_id>.txt` for every evaluable sequence.
pub fn load_results(results: &Path, seqs: &[TrackSequence]) -> Result<Vec<TrackResult>> {
    seqs.iter()
        .map(|s| {
            let path = results.join(format!("{}.txt", s.id));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            TrackResult::parse(&s.id, &text, &path)
        })
        .collect()
}

/// Writes `scores.csv`, both curves and, with `bins`, `sparsity.csv`.
pub fn cmd_eval(results: &Path, data: &Path, out: &Path, bins: Option<&[usize]>) -> Result<Summary> {
    let seqs = evaluable(load_dataset(data)?);
    let tracked = load_results(results, &seqs)?;
    let scores = seqs
        .iter()
        .zip(&tracked)
        .map(|(s, r)| score_sequence(s, &r.boxes()))
        .collect::<Result<Vec<_>>>()?;
    write_reports(&scores, out, bins)?;
    Ok(summarize(&scores))
}

pub fn write_reports(scores: &[SequenceScore], out: &Path, bins: Option<&[usize]>) -> Result<()> {
    create_dir(out)?;
    write(&out.join(SCORES_FILE), &format_scores_csv(scores))?;
    let ious: Vec<f64> = scores.iter().flat_map(|s| s.overlaps.iter().copied()).collect();
    let dists: Vec<f64> = scores.iter().flat_map(|s| s.distances.iter().copied()).collect();
    write(&out.join(SUCCESS_CURVE_FILE), &format_curve(&success_curve(&ious, CURVE_POINTS)))?;
    write(&out.join(PRECISION_CURVE_FILE), &format_curve(&precision_curve(&dists, CURVE_POINTS)))?;
    if let Some(edges) = bins {
        let edges = if edges.is_empty() { &DEFAULT_SPARSITY_EDGES[..] } else { edges };
        write(&out.join(SPARSITY_FILE), &format_sparsity_csv(&sparsity_report(scores, edges)?))?;
    }
    Ok(())
}

/// BoxCloud error histogram of `checkpoint` on `data`, written as `boxcloud_mse.csv`.
pub fn cmd_boxcloud_mse(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = load_model(checkpoint)?;
    let seqs = evaluable(load_dataset(data)?);
    let cfg = TrackerConfig {
        k: model.config.k,
        ..TrackerConfig::default()
    };
    let h = boxcloud_mse_report(&model, &seqs, &cfg, &DEFAULT_MSE_EDGES)?;
    create_dir(out)?;
    write(&out.join(MSE_FILE), &format_mse_csv(&h))
}

/// One trained-and-evaluated ablation cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub success: f64,
    pub precision: f64,
}

/// The ablation grid: name, fusion, template BoxCloud on/off.
pub const ABLATION_VARIANTS: [(&str, Fusion, bool); 4] = [
    ("bat", Fusion::Baff, true),
    ("bat_vanilla", Fusion::Vanilla, true),
    ("vanilla_no_boxcloud", Fusion::Vanilla, false),
    ("feature_comparison", Fusion::FeatureComparison, true),
];

/// Trains every variant for every seed on `train`, tracks `test`, and
/// writes the merged table into `out/ablation.csv`.
pub fn cmd_ablate(cfg: &RunConfig, train: &Path, test: &Path, out: &Path, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for (name, fusion, use_bc) in ABLATION_VARIANTS {
        for &seed in seeds {
            let run = RunConfig {
                seed,
                fusion,
                use_template_boxcloud: use_bc,
                ..cfg.clone()
            };
            let dir = out.join(format!("{name}_seed{seed}"));
            cmd_train(&run, train, &dir.join("checkpoint"), false)?;
            cmd_track(&dir.join("checkpoint"), test, &dir.join("results"), &run.tracker_config())?;
            let s = cmd_eval(&dir.join("results"), test, &dir.join("report"), None)?;
            info!("{name} seed {seed}: success {:.2} precision {:.2}", s.success, s.precision);
            rows.push(AblationRow {
                variant: name,
                seed,
                success: s.success,
                precision: s.precision,
            });
        }
    }
    create_dir(out)?;
    write(&out.join(ABLATION_FILE), &format_ablation_csv(&rows))?;
    Ok(rows)
}

/// Mean success and precision per variant, in grid order.
pub fn ablation_means(rows: &[AblationRow]) -> Vec<(&'static str, f64, f64)> {
    ABLATION_VARIANTS
        .iter()
        .filter_map(|(name, ..)| {
            let v: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == *name).collect();
            (!v.is_empty()).then(|| {
                let n = v.len() as f64;
                (
                    *name,
                    v.iter().map(|r| r.success).sum::<f64>() / n,
                    v.iter().map(|r| r.precision).sum::<f64>() / n,
                )
            })
        })
        .collect()
}

pub fn format_ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,seed,success,precision\n");
    for r in rows {
        writeln!(out, "{},{},{:.4},{:.4}", r.variant, r.seed, r.success, r.precision).unwrap();
    }
    for (name, s, p) in ablation_means(rows) {
        writeln!(out, "{name},mean,{s:.4},{p:.4}").unwrap();
    }
    out
}
