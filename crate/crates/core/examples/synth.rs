//! Generates a synthetic dataset and reports per-sequence point counts.
//!
//! `cargo run --release --example synth -- [spec.toml] [out_dir]`
//!
//! Without arguments a small built-in scene with one distractor is used and
//! nothing is written.

use std::path::Path;

use boxtrack::dataio::synth::{DistractorSpec, SensorSpec, SceneSpec};
use boxtrack::dataio::{generate_dataset, load_dataset, write_dataset};

fn main() -> boxtrack::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let spec = match args.first() {
        Some(path) => SceneSpec::load(Path::new(path))?,
        None => SceneSpec {
            sequences: 3,
            frames: 10,
            ground_points: 200,
            sensor: SensorSpec {
                angular_resolution: 0.2,
                ..SensorSpec::default()
            },
            distractors: vec![DistractorSpec {
                offset: [3.0, 0.0],
                ..DistractorSpec::default()
            }],
            ..SceneSpec::default()
        },
    };
    let seqs = generate_dataset(&spec)?;
    for s in &seqs {
        let counts: Vec<usize> = s.frames.iter().map(|f| f.points.crop(&f.gt).len()).collect();
        let total: usize = s.frames.iter().map(|f| f.points.len()).sum();
        println!("{} ({}): target points per frame {counts:?}, {total} points in all", s.id, s.category);
    }
    if let Some(out) = args.get(1) {
        write_dataset(Path::new(out), &seqs)?;
        let back = load_dataset(Path::new(out))?;
        println!("wrote {} sequences to {out}; reloaded {}", seqs.len(), back.len());
    }
    Ok(())
}
