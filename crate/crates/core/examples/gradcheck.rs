//! Finite-difference check of the whole training loss on a tiny instance:
//! 4 template points, 6 search points, D = 8.
//!
//! `cargo run --release --example gradcheck`

use std::time::Instant;

use boxtrack::geometry::{Box7, PointCloud};
use boxtrack::model::{check_model_gradients, BatModel, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> boxtrack::Result<()> {
    let cfg = ModelConfig {
        feature_dim: 8,
        template_seeds: 2,
        search_seeds: 3,
        k: 2,
        n_proposals: 3,
        ..ModelConfig::default()
    };
    let mut model = BatModel::new(cfg, 7)?;
    // The vote head starts at zero; give it weights so every path carries gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let zero: Vec<String> = model
        .params
        .iter()
        .filter(|(_, t)| t.data().iter().all(|x| *x == 0.0))
        .map(|(n, _)| n.clone())
        .collect();
    for name in zero {
        let t = model.params.get_mut(&name).unwrap();
        t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.3..0.3));
    }

    let tbox = Box7::new([0.0; 3], [1.0, 2.0, 1.0], 0.0)?;
    let template = PointCloud::new(vec![[0.3, 0.8, 0.1], [-0.4, -0.6, 0.2], [0.2, -0.1, -0.3], [-0.1, 0.5, 0.4]]);
    let search = PointCloud::new(vec![
        [0.25, 0.1, 0.0],
        [-0.3, 0.6, 0.2],
        [0.1, -0.7, -0.2],
        [1.6, 0.4, 0.1],
        [-1.3, -1.1, 0.0],
        [0.05, 0.05, 0.1],
    ]);
    let gt = Box7::new([0.1, 0.0, 0.0], [1.0, 2.0, 1.0], 0.2)?;

    let start = Instant::now();
    let (names, report) = check_model_gradients(&model, &template, &tbox, &search, &gt, 1.0, 1e-6)?;
    for (name, err) in names.iter().zip(&report.rel_errors) {
        println!("{name:24} rel err {err:.2e}");
    }
    println!(
        "{} parameter tensors, max rel err {:.2e}, {:.2}s",
        names.len(),
        report.max_rel_error(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
