//! Synthetic LiDAR-like sequences: parametric shells moving along a path,
//! seen from a fixed sensor with self-occlusion, beam quantization and
//! dropout.
//!
//! Surface samples are drawn once per object in its own frame, so a
//! stationary object yields the same candidate points every frame.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Frame, TrackSequence};
use crate::error::{Error, Result};
use crate::geometry::{dist3, sub3, Box7, Point3, PointCloud};

/// Surface points are pulled this far inside the box so they stay inside
/// after a world round trip.
const INSET: f64 = 1e-6;
/// Ground sits just below box bottoms so it never falls inside a box.
const GROUND_GAP: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Cuboid,
    LShape,
    Cylinder,
}

impl FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cuboid" => Ok(Shape::Cuboid),
            "l_shape" => Ok(Shape::LShape),
            "cylinder" => Ok(Shape::Cylinder),
            _ => Err(Error::arg(format!("unknown shape `{s}`"))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Cuboid => "cuboid",
            Shape::LShape => "l_shape",
            Shape::Cylinder => "cylinder",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// `(w, l, h)` in meters.
    pub size: [f64; 3],
    /// Surface samples before occlusion and dropout.
    pub points: usize,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        Self {
            shape: Shape::Cuboid,
            size: [1.8, 4.0, 1.6],
            points: 600,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Fixed `(x, y)` path; when empty each sequence draws a random walk.
    pub waypoints: Vec<[f64; 2]>,
    /// Mean meters per frame for random walks (each sequence scales it by
    /// a factor in [0.5, 1.5]).
    pub speed: f64,
    /// Largest heading change per frame, radians.
    pub turn_rate: f64,
    /// Start distance from the sensor for random walks.
    pub range: [f64; 2],
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            waypoints: Vec::new(),
            speed: 0.6,
            turn_rate: 0.05,
            range: [8.0, 16.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub origin: [f64; 3],
    /// Beam spacing in degrees; at most one return per cell. 0 disables.
    pub angular_resolution: f64,
    pub max_range: f64,
    /// Probability of losing each return.
    pub dropout: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            origin: [0.0, 0.0, 1.7],
            angular_resolution: 0.0,
            max_range: 70.0,
            dropout: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistractorSpec {
    pub object: ObjectSpec,
    /// Start position relative to the target's start, world `(x, y)`.
    pub offset: [f64; 2],
    /// Uniform per-sequence perturbation of `offset`, meters.
    pub jitter: f64,
    /// World `(x, y)` meters per frame.
    pub velocity: [f64; 2],
    pub heading: f64,
    /// Keep `offset` (plus jitter) fixed in the target's own frame every
    /// frame, with `heading` relative to the target's; `velocity` is unused.
    pub follow: bool,
}

impl Default for DistractorSpec {
    fn default() -> Self {
        Self {
            object: ObjectSpec::default(),
            offset: [0.0, 6.0],
            jitter: 0.0,
            velocity: [0.0, 0.0],
            heading: 0.0,
            follow: false,
        }
    }
}

/// One scene recipe; `sequences` independent draws share it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub id_prefix: String,
    pub category: String,
    pub sequences: usize,
    pub frames: usize,
    pub seed: u64,
    pub target: ObjectSpec,
    pub trajectory: TrajectorySpec,
    pub sensor: SensorSpec,
    pub distractors: Vec<DistractorSpec>,
    /// Ground returns scattered within 8 m of the target each frame.
    pub ground_points: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            id_prefix: "syn".into(),
            category: "car".into(),
            sequences: 1,
            frames: 20,
            seed: 0,
            target: ObjectSpec::default(),
            trajectory: TrajectorySpec::default(),
            sensor: SensorSpec::default(),
            distractors: Vec::new(),
            ground_points: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames == 0 || self.sequences == 0 {
            return bad("frames and sequences must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.sensor.dropout) {
            return bad(format!("dropout {} not in [0, 1]", self.sensor.dropout));
        }
        if self.id_prefix.is_empty() || self.id_prefix.contains(char::is_whitespace) {
            return bad(format!("id_prefix `{}` must be a non-empty word", self.id_prefix));
        }
        for o in std::iter::once(&self.target).chain(self.distractors.iter().map(|d| &d.object)) {
            if !o.size.iter().all(|s| *s > 0.0) {
                return bad(format!("object size {:?} must be positive", o.size));
            }
        }
        let t = &self.trajectory;
        if t.speed < 0.0 || t.turn_rate < 0.0 || t.range[0] < 0.0 || t.range[1] < t.range[0] {
            return bad("trajectory speed, turn_rate and range must be non-negative and ordered".into());
        }
        if self.sensor.angular_resolution < 0.0 || self.sensor.max_range <= 0.0 {
            return bad("sensor resolution must be non-negative and range positive".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn sequence_id(&self, index: usize) -> String {
        format!("{}_{index:04}", self.id_prefix)
    }
}

/// A surface sample in the object frame with its outward normal.
#[derive(Clone, Copy, Debug)]
struct Sample {
    p: Point3,
    n: Point3,
}

fn clamp_inside(p: Point3, half: Point3) -> Point3 {
    std::array::from_fn(|k| p[k].clamp(-(half[k] - INSET), half[k] - INSET))
}

/// Area-weighted point on the shell of an axis-aligned block `[lo, hi]`.
fn block_sample<R: Rng + ?Sized>(lo: Point3, hi: Point3, rng: &mut R) -> Sample {
    let d = sub3(hi, lo);
    let areas = [d[1] * d[2], d[0] * d[2], d[0] * d[1]];
    let total: f64 = areas.iter().sum::<f64>() * 2.0;
    let mut u = rng.gen::<f64>() * total;
    let mut axis = 2;
    for (k, a) in areas.iter().enumerate() {
        if u < 2.0 * a {
            axis = k;
            break;
        }
        u -= 2.0 * a;
    }
    let positive = rng.gen::<bool>();
    let mut p: Point3 = std::array::from_fn(|k| rng.gen_range(lo[k]..=hi[k]));
    p[axis] = if positive { hi[axis] } else { lo[axis] };
    let mut n = [0.0; 3];
    n[axis] = if positive { 1.0 } else { -1.0 };
    Sample { p, n }
}

fn surface_samples<R: Rng + ?Sized>(obj: &ObjectSpec, rng: &mut R) -> Vec<Sample> {
    let half = [obj.size[0] / 2.0, obj.size[1] / 2.0, obj.size[2] / 2.0];
    let [a, b, c] = half;
    let mut out = Vec::with_capacity(obj.points);
    match obj.shape {
        Shape::Cuboid => {
            while out.len() < obj.points {
                out.push(block_sample([-a, -b, -c], [a, b, c], rng));
            }
        }
        Shape::LShape => {
            // a full-length bar on −x and a half-length foot on +x, −y
            let bar = ([-a, -b, -c], [0.0, b, c]);
            let foot = ([0.0, -b, -c], [a, 0.0, c]);
            let inside = |p: Point3, (lo, hi): (Point3, Point3)| (0..3).all(|k| p[k] > lo[k] && p[k] < hi[k]);
            let area = |(lo, hi): (Point3, Point3)| {
                let d = sub3(hi, lo);
                d[0] * d[1] + d[1] * d[2] + d[0] * d[2]
            };
            let p_bar = area(bar) / (area(bar) + area(foot));
            let mut tries = 0;
            while out.len() < obj.points && tries < obj.points * 50 {
                tries += 1;
                let (own, other) = if rng.gen::<f64>() < p_bar { (bar, foot) } else { (foot, bar) };
                let s = block_sample(own.0, own.1, rng);
                // drop the shared internal wall
                let probe: Point3 = std::array::from_fn(|k| s.p[k] - 1e-9 * s.n[k]);
                let outward: Point3 = std::array::from_fn(|k| s.p[k] + 1e-9 * s.n[k]);
                if inside(outward, other) && !inside(probe, other) {
                    continue;
                }
                out.push(s);
            }
        }
        Shape::Cylinder => {
            let perimeter = PI * (3.0 * (a + b) - ((3.0 * a + b) * (a + 3.0 * b)).sqrt());
            let side = perimeter * 2.0 * c;
            let caps = 2.0 * PI * a * b;
            while out.len() < obj.points {
                if rng.gen::<f64>() * (side + caps) < side {
                    let phi = rng.gen_range(-PI..PI);
                    let (s, co) = phi.sin_cos();
                    let n = [co / a, s / b, 0.0];
                    let len = (n[0] * n[0] + n[1] * n[1]).sqrt();
                    out.push(Sample {
                        p: [a * co, b * s, rng.gen_range(-c..=c)],
                        n: [n[0] / len, n[1] / len, 0.0],
                    });
                } else {
                    let phi = rng.gen_range(-PI..PI);
                    let r = rng.gen::<f64>().sqrt();
                    let top = rng.gen::<bool>();
                    out.push(Sample {
                        p: [a * r * phi.cos(), b * r * phi.sin(), if top { c } else { -c }],
                        n: [0.0, 0.0, if top { 1.0 } else { -1.0 }],
                    });
                }
            }
        }
    }
    for s in &mut out {
        s.p = clamp_inside(s.p, half);
    }
    out
}

/// Sensor-visible samples of an object placed at `pose`.
fn visible<R: Rng + ?Sized>(samples: &[Sample], pose: &Box7, sensor: &SensorSpec, rng: &mut R) -> Vec<Point3> {
    let frame = Box7 {
        center: [0.0; 3],
        ..*pose
    };
    samples
        .iter()
        .filter_map(|s| {
            let p = pose.to_world(s.p);
            let n = frame.to_world(s.n);
            let to_sensor = sub3(sensor.origin, p);
            let facing = n[0] * to_sensor[0] + n[1] * to_sensor[1] + n[2] * to_sensor[2] > 0.0;
            let keep = rng.gen::<f64>() >= sensor.dropout;
            (facing && keep && dist3(p, sensor.origin) <= sensor.max_range).then_some(p)
        })
        .collect()
}

/// Keeps the nearest return per angular cell; output preserves input order.
fn quantize_beams(points: &[Point3], origin: Point3, resolution_deg: f64) -> Vec<usize> {
    if resolution_deg <= 0.0 {
        return (0..points.len()).collect();
    }
    let res = resolution_deg.to_radians();
    let mut best: HashMap<(i64, i64), (f64, usize)> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        let d = sub3(*p, origin);
        let r = dist3(*p, origin);
        let az = d[1].atan2(d[0]);
        let el = (d[2] / r.max(1e-12)).asin();
        let cell = ((az / res).floor() as i64, (el / res).floor() as i64);
        let e = best.entry(cell).or_insert((r, i));
        if r < e.0 {
            *e = (r, i);
        }
    }
    let mut keep: Vec<usize> = best.into_values().map(|(_, i)| i).collect();
    keep.sort_unstable();
    keep
}

/// Target poses for one sequence, one per frame.
fn target_path<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<Vec<Box7>> {
    let t = &spec.trajectory;
    let size = spec.target.size;
    let z = size[2] / 2.0;
    if !t.waypoints.is_empty() {
        return waypoint_path(&t.waypoints, spec.frames, size);
    }
    let r = rng.gen_range(t.range[0]..=t.range[1]);
    let az = rng.gen_range(-PI..PI);
    let mut pos = [r * az.cos(), r * az.sin()];
    let mut heading = rng.gen_range(-PI..PI);
    let speed = t.speed * rng.gen_range(0.5..=1.5);
    let mut rate = 0.0f64;
    let mut out = Vec::with_capacity(spec.frames);
    for _ in 0..spec.frames {
        out.push(Box7::new([pos[0], pos[1], z], size, heading)?);
        if t.turn_rate > 0.0 {
            rate = (rate + rng.gen_range(-0.5..=0.5) * t.turn_rate).clamp(-t.turn_rate, t.turn_rate);
        }
        heading += rate;
        // objects advance along their local +y axis
        pos = [pos[0] - speed * heading.sin(), pos[1] + speed * heading.cos()];
    }
    Ok(out)
}

/// Piecewise-linear path sampled at equal arc length; heading follows the
/// segment direction.
fn waypoint_path(wp: &[[f64; 2]], frames: usize, size: [f64; 3]) -> Result<Vec<Box7>> {
    let z = size[2] / 2.0;
    if wp.len() == 1 {
        return (0..frames).map(|_| Box7::new([wp[0][0], wp[0][1], z], size, 0.0)).collect();
    }
    let seg: Vec<f64> = wp.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).collect();
    let total: f64 = seg.iter().sum();
    (0..frames)
        .map(|f| {
            let s = if frames > 1 { total * f as f64 / (frames - 1) as f64 } else { 0.0 };
            let mut acc = 0.0;
            let mut i = 0;
            while i + 1 < seg.len() && acc + seg[i] < s {
                acc += seg[i];
                i += 1;
            }
            let u = if seg[i] > 0.0 { ((s - acc) / seg[i]).clamp(0.0, 1.0) } else { 0.0 };
            let (a, b) = (wp[i], wp[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let heading = (-dx).atan2(dy);
            Box7::new([a[0] + u * dx, a[1] + u * dy, z], size, heading)
        })
        .collect()
}

/// One simulated frame with the target's returns kept apart.
#[derive(Clone, Debug)]
pub struct SceneFrame {
    pub gt: Box7,
    pub target: PointCloud,
    pub clutter: PointCloud,
}

impl SceneFrame {
    /// All returns in a shuffled order so position in the scan carries no
    /// label information.
    pub fn merged<R: Rng + ?Sized>(&self, rng: &mut R) -> PointCloud {
        let mut pts = self.target.points.clone();
        pts.extend_from_slice(&self.clutter.points);
        pts.shuffle(rng);
        PointCloud::new(pts)
    }
}

fn sequence_rng(spec: &SceneSpec, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    rng
}

/// Simulates sequence `index` of `spec`.
pub fn simulate(spec: &SceneSpec, index: usize) -> Result<Vec<SceneFrame>> {
    spec.validate()?;
    let mut rng = sequence_rng(spec, index);
    let target_samples = surface_samples(&spec.target, &mut rng);
    let poses = target_path(spec, &mut rng)?;
    let start = poses[0].center;

    let distractors: Vec<(Vec<Sample>, [f64; 2], &DistractorSpec)> = spec
        .distractors
        .iter()
        .map(|d| {
            let j = d.jitter;
            let jx = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
            let jy = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
            let s = surface_samples(&d.object, &mut rng);
            (s, [d.offset[0] + jx, d.offset[1] + jy], d)
        })
        .collect();

    let mut frames = Vec::with_capacity(spec.frames);
    for (f, gt) in poses.iter().enumerate() {
        let target = visible(&target_samples, gt, &spec.sensor, &mut rng);
        let mut clutter = Vec::new();
        for (samples, origin, d) in &distractors {
            let z = d.object.size[2] / 2.0;
            let pose = if d.follow {
                let c = gt.to_world([origin[0], origin[1], 0.0]);
                Box7::new([c[0], c[1], z], d.object.size, gt.heading + d.heading)?
            } else {
                let c = [
                    start[0] + origin[0] + d.velocity[0] * f as f64,
                    start[1] + origin[1] + d.velocity[1] * f as f64,
                    z,
                ];
                Box7::new(c, d.object.size, d.heading)?
            };
            clutter.extend(visible(samples, &pose, &spec.sensor, &mut rng));
        }
        for _ in 0..spec.ground_points {
            let r = 8.0 * rng.gen::<f64>().sqrt();
            let phi = rng.gen_range(-PI..PI);
            let p = [gt.center[0] + r * phi.cos(), gt.center[1] + r * phi.sin(), -GROUND_GAP];
            if rng.gen::<f64>() >= spec.sensor.dropout {
                clutter.push(p);
            }
        }
        let n_target = target.len();
        let mut all = target;
        all.extend(clutter);
        let keep = quantize_beams(&all, spec.sensor.origin, spec.sensor.angular_resolution);
        let (t, c): (Vec<usize>, Vec<usize>) = keep.into_iter().partition(|&i| i < n_target);
        frames.push(SceneFrame {
            gt: *gt,
            target: PointCloud::new(t.into_iter().map(|i| all[i]).collect()),
            clutter: PointCloud::new(c.into_iter().map(|i| all[i]).collect()),
        });
    }
    Ok(frames)
}

/// First sequence of `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<TrackSequence> {
    generate_sequence(spec, 0)
}

pub fn generate_sequence(spec: &SceneSpec, index: usize) -> Result<TrackSequence> {
    let frames = simulate(spec, index)?;
    let mut rng = sequence_rng(spec, index);
    // a separate stream for point order
    rng.set_word_pos(1 << 40);
    let frames = frames
        .iter()
        .enumerate()
        .map(|(i, f)| Frame {
            index: i,
            points: f.merged(&mut rng),
            gt: f.gt,
        })
        .collect();
    TrackSequence::new(spec.sequence_id(index), spec.category.clone(), frames)
}

/// All `spec.sequences` sequences.
pub fn generate_dataset(spec: &SceneSpec) -> Result<Vec<TrackSequence>> {
    (0..spec.sequences).map(|i| generate_sequence(spec, i)).collect()
}
