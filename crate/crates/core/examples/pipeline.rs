//! The command-line workflow as library calls: synth, train, track, eval.
//!
//! `cargo run --release --example pipeline -- [work_dir] [epochs]`

use std::path::PathBuf;

use boxtrack::cli::{cmd_boxcloud_mse, cmd_eval, cmd_synth, cmd_track, cmd_train, RunConfig};
use boxtrack::Error;

fn main() -> boxtrack::Result<()> {
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/pipeline".into()));
    let epochs = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    std::fs::create_dir_all(&work).map_err(|e| Error::io(&work, e))?;
    let spec = work.join("scene.toml");
    std::fs::write(&spec, "sequences = 4\nframes = 8\nground_points = 100\n[trajectory]\nspeed = 0.2\n")
        .map_err(|e| Error::io(&spec, e))?;

    let data = work.join("data");
    cmd_synth(&spec, &data, Some(3))?;
    let cfg = RunConfig {
        epochs,
        feature_dim: 32,
        ..RunConfig::default()
    };
    let ck = work.join("checkpoint");
    let trainer = cmd_train(&cfg, &data, &ck, false)?;
    println!("trained {} epochs, {} optimizer steps", trainer.epoch, trainer.adam.step);

    let results = work.join("results");
    let tracked = cmd_track(&ck, &data, &results, &cfg.tracker_config())?;
    let held: usize = tracked.iter().map(|r| r.frames.iter().filter(|f| f.held).count()).sum();
    println!("tracked {} sequences ({held} held frames)", tracked.len());

    let report = work.join("report");
    let summary = cmd_eval(&results, &data, &report, Some(&[]))?;
    cmd_boxcloud_mse(&ck, &data, &report)?;
    println!(
        "success {:.2} precision {:.2} over {} frames; reports in {}",
        summary.success,
        summary.precision,
        summary.frames,
        report.display()
    );
    Ok(())
}
