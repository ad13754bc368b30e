//! Upright oriented boxes: canonical corner order, object-frame transforms,
//! containment, enlargement and rotated 3D IoU.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

pub fn sub3(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add3(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn norm3(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn dist3(a: Point3, b: Point3) -> f64 {
    norm3(sub3(a, b))
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Rotation about the up (z) axis.
fn rotate_z(p: Point3, theta: f64) -> Point3 {
    let (s, c) = theta.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

/// An N×3 set of points in meters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point3> {
        self.points.iter()
    }

    pub fn select(&self, index: &[usize]) -> PointCloud {
        PointCloud::new(index.iter().map(|&i| self.points[i]).collect())
    }

    /// Flattened row-major coordinates.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn crop(&self, b: &Box7) -> PointCloud {
        PointCloud::new(self.points.iter().copied().filter(|p| b.contains(*p)).collect())
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }
}

impl From<Vec<Point3>> for PointCloud {
    fn from(points: Vec<Point3>) -> Self {
        Self { points }
    }
}

/// Oriented upright box: center, size `(w, l, h)` along the local x/y/z axes,
/// heading about the up axis normalized to (−π, π].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box7 {
    pub center: Point3,
    pub size: [f64; 3],
    pub heading: f64,
}

/// The nine box points: eight corners in canonical order, then the center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxPoints(pub [Point3; 9]);

/// Local-frame sign triples of the eight corners, in binary order.
pub const CORNER_SIGNS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, -1.0],
    [1.0, 1.0, 1.0],
];

impl Box7 {
    pub fn new(center: Point3, size: [f64; 3], heading: f64) -> Result<Self> {
        if !size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::arg(format!("box size must be positive, got {size:?}")));
        }
        if !center.iter().all(|c| c.is_finite()) || !heading.is_finite() {
            return Err(Error::arg("box center and heading must be finite"));
        }
        Ok(Self {
            center,
            size,
            heading: normalize_angle(heading),
        })
    }

    /// Builds from `[x, y, z, w, l, h, θ]`.
    pub fn from_array(v: [f64; 7]) -> Result<Self> {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        let [x, y, z] = self.center;
        let [w, l, h] = self.size;
        [x, y, z, w, l, h, self.heading]
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    pub fn half_extents(&self) -> Point3 {
        [self.size[0] / 2.0, self.size[1] / 2.0, self.size[2] / 2.0]
    }

    /// Corners in canonical sign order followed by the center.
    pub fn box_points(&self) -> BoxPoints {
        let half = self.half_extents();
        let mut pts = [self.center; 9];
        for (j, s) in CORNER_SIGNS.iter().enumerate() {
            let local = [s[0] * half[0], s[1] * half[1], s[2] * half[2]];
            pts[j] = add3(rotate_z(local, self.heading), self.center);
        }
        BoxPoints(pts)
    }

    /// World → object frame: subtract the center, rotate by −θ.
    pub fn to_local(&self, p: Point3) -> Point3 {
        rotate_z(sub3(p, self.center), -self.heading)
    }

    /// Object frame → world.
    pub fn to_world(&self, p: Point3) -> Point3 {
        add3(rotate_z(p, self.heading), self.center)
    }

    pub fn contains(&self, p: Point3) -> bool {
        let l = self.to_local(p);
        let h = self.half_extents();
        l[0].abs() <= h[0] && l[1].abs() <= h[1] && l[2].abs() <= h[2]
    }

    /// Grows every side by `margin`, so each extent gains `2·margin`.
    pub fn enlarge(&self, margin: f64) -> Result<Self> {
        if !(margin >= 0.0) {
            return Err(Error::arg(format!("enlarge margin must be non-negative, got {margin}")));
        }
        Ok(Self {
            size: self.size.map(|s| s + 2.0 * margin),
            ..*self
        })
    }

    /// This box expressed in `frame`'s object coordinates.
    pub fn in_frame_of(&self, frame: &Box7) -> Box7 {
        Box7 {
            center: frame.to_local(self.center),
            size: self.size,
            heading: normalize_angle(self.heading - frame.heading),
        }
    }

    /// Inverse of [`Box7::in_frame_of`].
    pub fn from_frame_of(&self, frame: &Box7) -> Box7 {
        Box7 {
            center: frame.to_world(self.center),
            size: self.size,
            heading: normalize_angle(self.heading + frame.heading),
        }
    }

    /// Bird's-eye rectangle corners, counter-clockwise.
    fn bev_polygon(&self) -> Vec<[f64; 2]> {
        let [hw, hl, _] = self.half_extents();
        [[-hw, -hl], [hw, -hl], [hw, hl], [-hw, hl]]
            .iter()
            .map(|&[x, y]| {
                let p = rotate_z([x, y, 0.0], self.heading);
                [p[0] + self.center[0], p[1] + self.center[1]]
            })
            .collect()
    }
}

/// Transforms a cloud into `b`'s object frame.
pub fn to_object_frame(points: &PointCloud, b: &Box7) -> PointCloud {
    PointCloud::new(points.points.iter().map(|p| b.to_local(*p)).collect())
}

/// Inverse of [`to_object_frame`].
pub fn from_object_frame(points: &PointCloud, b: &Box7) -> PointCloud {
    PointCloud::new(points.points.iter().map(|p| b.to_world(*p)).collect())
}

pub fn center_distance(a: &Box7, b: &Box7) -> f64 {
    dist3(a.center, b.center)
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Clips `subject` against convex counter-clockwise `clip` (Sutherland–Hodgman).
fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross2(a, b, cur) >= 0.0;
            let prev_in = cross2(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn segment_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = cross2(a, b, p);
    let dq = cross2(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Shoelace area (absolute).
fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s.abs()
}

/// Overlap area of the two bird's-eye rectangles.
fn bev_intersection(a: &Box7, b: &Box7) -> f64 {
    polygon_area(&clip_polygon(&a.bev_polygon(), &b.bev_polygon()))
}

/// Exact 3D IoU of two upright boxes.
pub fn iou_3d(a: &Box7, b: &Box7) -> f64 {
    let za = (a.center[2] - a.size[2] / 2.0, a.center[2] + a.size[2] / 2.0);
    let zb = (b.center[2] - b.size[2] / 2.0, b.center[2] + b.size[2] / 2.0);
    let dz = (za.1.min(zb.1) - za.0.max(zb.0)).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let area = bev_intersection(a, b);
    if !(area > 0.0) {
        return 0.0;
    }
    let inter = area * dz;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Bird's-eye IoU, used when the benchmark is configured for 2D overlap.
pub fn iou_bev(a: &Box7, b: &Box7) -> f64 {
    let area = bev_intersection(a, b);
    if !(area > 0.0) {
        return 0.0;
    }
    let aa = a.size[0] * a.size[1];
    let ab = b.size[0] * b.size[1];
    (area / (aa + ab - area)).clamp(0.0, 1.0)
}
