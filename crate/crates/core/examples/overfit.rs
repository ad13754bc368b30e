//! Trains on a handful of dense synthetic sequences and tracks them again,
//! scoring after every epoch.
//!
//! `cargo run --release --example overfit -- [checkpoint_dir] [run_config]`
//!
//! The scene is `configs/overfit_scene.toml`; hyperparameters default to
//! `configs/overfit_run.toml`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use boxtrack::cli::RunConfig;
use boxtrack::dataio::synth::{generate_dataset, SceneSpec};
use boxtrack::dataio::evaluable;
use boxtrack::eval::{boxcloud_mse_report, score_sequence, summarize, DEFAULT_MSE_EDGES};
use boxtrack::tracker::{track_sequence, SearchMode, TrackerConfig};
use boxtrack::training::{save_model, Trainer};

fn main() -> boxtrack::Result<()> {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/overfit_model".into()));
    let spec = SceneSpec::load(&configs.join("overfit_scene.toml"))?;
    let run_path = std::env::args().nth(2).map(PathBuf::from).unwrap_or_else(|| configs.join("overfit_run.toml"));
    let run = RunConfig::load(&run_path)?;
    let seqs = evaluable(generate_dataset(&spec)?);
    let pts: Vec<usize> = seqs.iter().map(|s| s.first_box_points()).collect();
    println!("first-box points: {pts:?}");

    let track_cfg = run.tracker_config();
    let mut trainer = Trainer::new(run.model_config(), run.train_config())?;
    let start = Instant::now();
    let mut last = None;
    while trainer.epoch < run.epochs {
        trainer.run_epoch(&seqs, &mut |r| last = Some(*r))?;
        let tracked = seqs
            .iter()
            .map(|s| score_sequence(s, &track_sequence(&trainer.model, s, &track_cfg)?.boxes()))
            .collect::<boxtrack::Result<Vec<_>>>()?;
        let total = summarize(&tracked);
        println!(
            "{} | success {:.2} precision {:.2} | {:.1}s",
            last.unwrap(),
            total.success,
            total.precision,
            start.elapsed().as_secs_f64()
        );
    }

    // Mean error of the prediction in the true box's frame.
    for mode in [SearchMode::LongTerm, SearchMode::ShortTerm] {
        let cfg = TrackerConfig {
            search_mode: mode,
            ..track_cfg.clone()
        };
        let mut err = [0.0f64; 4];
        let mut n = 0.0;
        let mut scores = Vec::new();
        for s in &seqs {
            let r = track_sequence(&trainer.model, s, &cfg)?;
            for (p, f) in r.boxes().iter().zip(&s.frames).skip(1) {
                let local = p.in_frame_of(&f.gt);
                for i in 0..3 {
                    err[i] += local.center[i].abs();
                }
                err[3] += local.heading.abs().to_degrees();
                n += 1.0;
            }
            scores.push(score_sequence(s, &r.boxes())?);
        }
        let total = summarize(&scores);
        println!(
            "{mode}: success {:.2} precision {:.2} | mean |dx| {:.3} |dy| {:.3} |dz| {:.3} |dheading| {:.2} deg",
            total.success,
            total.precision,
            err[0] / n,
            err[1] / n,
            err[2] / n,
            err[3] / n
        );
    }
    let h = boxcloud_mse_report(&trainer.model, &seqs, &track_cfg, &DEFAULT_MSE_EDGES)?;
    println!("boxcloud mse median {:?} histogram {:?}", h.median(), h.counts);
    save_model(&trainer.model, &out)?;
    println!("model saved to {}", out.display());
    Ok(())
}
