//! Fusion time and Success as the number of grouped template seeds varies.
//!
//! `cargo run --release --example k_sweep -- <checkpoint_dir> <data_dir>`
//!
//! The largest k is the whole template seed set.

use std::path::Path;

use boxtrack::dataio::{evaluable, load_dataset};
use boxtrack::eval::{score_sequence, summarize};
use boxtrack::tracker::{track_sequence, TrackerConfig};
use boxtrack::training::load_model;

fn main() -> boxtrack::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (Some(ck), Some(data)) = (args.first(), args.get(1)) else {
        eprintln!("usage: k_sweep <checkpoint_dir> <data_dir>");
        std::process::exit(2);
    };
    let model = load_model(Path::new(ck))?;
    let seqs = evaluable(load_dataset(Path::new(data))?);
    let all = model.config.template_seeds;
    let mut ks: Vec<usize> = [1, 2, 4, 8, 16].into_iter().filter(|k| *k < all).collect();
    ks.push(all);
    println!("k,fuse_us_per_frame,success,precision");
    for k in ks {
        let cfg = TrackerConfig { k, ..TrackerConfig::default() };
        let mut scores = Vec::new();
        let (mut fuse, mut frames) = (0.0, 0usize);
        for s in &seqs {
            let r = track_sequence(&model, s, &cfg)?;
            for f in r.frames.iter().skip(1).filter(|f| !f.held) {
                fuse += f.fuse_micros;
                frames += 1;
            }
            scores.push(score_sequence(s, &r.boxes())?);
        }
        let total = summarize(&scores);
        println!("{k},{:.1},{:.2},{:.2}", fuse / frames.max(1) as f64, total.success, total.precision);
    }
    Ok(())
}
