//! Fusion-variant ablation on sparse scenes with a look-alike distractor.
//!
//! `cargo run --release --example ablation -- [out_dir] [seeds]`
//!
//! Scenes and hyperparameters come from `configs/ablation_*.toml`.

use std::path::{Path, PathBuf};

use boxtrack::cli::{ablation_means, cmd_ablate, cmd_synth, RunConfig};

fn main() -> boxtrack::Result<()> {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/ablation".into()));
    let seeds: Vec<u64> = std::env::args()
        .nth(2)
        .map(|s| s.split(',').filter_map(|x| x.parse().ok()).collect())
        .unwrap_or_else(|| vec![0, 1, 2]);

    let train = out.join("train");
    let test = out.join("test");
    cmd_synth(&configs.join("ablation_train_scene.toml"), &train, None)?;
    cmd_synth(&configs.join("ablation_test_scene.toml"), &test, None)?;
    let cfg = RunConfig::load(&configs.join("ablation_run.toml"))?;
    let rows = cmd_ablate(&cfg, &train, &test, &out, &seeds)?;
    for r in &rows {
        println!("{:20} seed {} success {:6.2} precision {:6.2}", r.variant, r.seed, r.success, r.precision);
    }
    for (name, s, p) in ablation_means(&rows) {
        println!("{name:20} mean   success {s:6.2} precision {p:6.2}");
    }
    Ok(())
}
