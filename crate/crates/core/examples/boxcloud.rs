//! BoxCloud of a few points and its invariance to moving the whole scene.
//!
//! `cargo run --example boxcloud`

use boxtrack::boxcloud::{compute_boxcloud, pairwise_distance_map};
use boxtrack::geometry::{Box7, PointCloud};

fn main() -> boxtrack::Result<()> {
    let b = Box7::new([2.0, 1.0, 0.5], [1.8, 4.0, 1.6], 0.4)?;
    // Center, a front corner region, and a side point, all in the box frame.
    let local = [[0.0, 0.0, 0.0], [0.8, 1.9, 0.7], [-0.9, 0.0, 0.0]];
    let points = PointCloud::new(local.iter().map(|p| b.to_world(*p)).collect());
    let bc = compute_boxcloud(&points, &b);
    for (p, row) in local.iter().zip(&bc.coords) {
        let shown: Vec<String> = row.iter().map(|d| format!("{d:.3}")).collect();
        println!("{p:?} -> [{}]", shown.join(", "));
    }

    // Rotate the scene about z and move it; distances do not change.
    let (c, s) = (0.7f64.cos(), 0.7f64.sin());
    let mv = |p: [f64; 3]| [c * p[0] - s * p[1] + 5.0, s * p[0] + c * p[1] - 3.0, p[2] + 1.0];
    let moved_box = Box7::new(mv(b.center), b.size, b.heading + 0.7)?;
    let moved = PointCloud::new(points.iter().map(|p| mv(*p)).collect());
    let bc2 = compute_boxcloud(&moved, &moved_box);
    let drift = bc
        .coords
        .iter()
        .zip(&bc2.coords)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("max change under a rigid motion: {drift:.2e}");

    let d = pairwise_distance_map(&bc.to_tensor(), &bc2.to_tensor())?;
    println!("pairwise BoxCloud distances (template x search):");
    for i in 0..d.rows() {
        let row: Vec<String> = d.row(i).iter().map(|x| format!("{x:7.3}")).collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
