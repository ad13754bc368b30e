//! Rotated 3D IoU against a Monte-Carlo volume estimate.
//!
//! `cargo run --release --example iou -- [pairs] [samples]`

use boxtrack::geometry::{iou_3d, iou_bev, Box7};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut ChaCha8Rng) -> Box7 {
    Box7::new(
        [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)],
        [rng.gen_range(0.5..3.0), rng.gen_range(0.5..5.0), rng.gen_range(0.5..2.0)],
        rng.gen_range(-3.2..3.2),
    )
    .unwrap()
}

/// Hit-or-miss estimate over the bounding cube of both boxes.
fn monte_carlo(a: &Box7, b: &Box7, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let reach = |bx: &Box7| bx.size.iter().map(|s| s * s).sum::<f64>().sqrt() / 2.0;
    let (ra, rb) = (reach(a), reach(b));
    let lo: Vec<f64> = (0..3).map(|i| (a.center[i] - ra).min(b.center[i] - rb)).collect();
    let hi: Vec<f64> = (0..3).map(|i| (a.center[i] + ra).max(b.center[i] + rb)).collect();
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..n {
        let p = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1]), rng.gen_range(lo[2]..hi[2])];
        let (ia, ib) = (a.contains(p), b.contains(p));
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn main() {
    let pairs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let samples: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1_000_000);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let exact = iou_3d(&a, &b);
        let mc = monte_carlo(&a, &b, samples, &mut rng);
        worst = worst.max((exact - mc).abs());
        println!("iou3d {exact:.4}  monte-carlo {mc:.4}  bev {:.4}", iou_bev(&a, &b));
    }
    println!("max |exact - mc| = {worst:.4}");
}
