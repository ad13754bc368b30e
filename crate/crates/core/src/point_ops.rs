//! Sampling and grouping over point sets. Every routine breaks ties toward
//! the lowest index, so results depend only on inputs and seed.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Point3};

/// Row-major matrix of indices into a source point set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<usize>,
}

impl IndexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<usize>) -> Self {
        assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<usize> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.data
    }

    /// Column-major flattening: all of column 0, then column 1, ...
    pub fn columns_flat(&self) -> Vec<usize> {
        (0..self.cols).flat_map(|j| self.column(j)).collect()
    }
}

fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Greedy max-min selection of `m` points starting from `start`.
pub fn farthest_point_sampling(points: &PointCloud, m: usize, start: usize) -> Result<IndexMatrix> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Empty("farthest_point_sampling"));
    }
    if m > n {
        return Err(Error::arg(format!("cannot sample {m} of {n} points")));
    }
    if start >= n {
        return Err(Error::arg(format!("start index {start} out of range for {n} points")));
    }
    let mut chosen = Vec::with_capacity(m);
    if m == 0 {
        return Ok(IndexMatrix::new(1, 0, chosen));
    }
    let pts = &points.points;
    let mut min_d = vec![f64::INFINITY; n];
    let mut cur = start;
    for _ in 0..m {
        chosen.push(cur);
        let c = pts[cur];
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let d = sq_dist(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(IndexMatrix::new(1, m, chosen))
}

/// For each center, up to `max_k` source indices within `radius`, ascending.
///
/// Underfull groups repeat their first member; a center with no point in
/// range gets its nearest point repeated `max_k` times.
pub fn ball_query(centers: &PointCloud, points: &PointCloud, radius: f64, max_k: usize) -> Result<IndexMatrix> {
    if !(radius > 0.0) || max_k == 0 {
        return Err(Error::arg(format!("ball_query needs radius > 0 and max_k ≥ 1 (got {radius}, {max_k})")));
    }
    if points.is_empty() {
        return Err(Error::Empty("ball_query"));
    }
    let r2 = radius * radius;
    let mut data = Vec::with_capacity(centers.len() * max_k);
    for c in centers.iter() {
        let start = data.len();
        let mut nearest = (f64::INFINITY, 0usize);
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(c, p);
            if d < nearest.0 {
                nearest = (d, i);
            }
            if d <= r2 && data.len() - start < max_k {
                data.push(i);
            }
        }
        let fill = if data.len() > start { data[start] } else { nearest.1 };
        data.resize(start + max_k, fill);
    }
    Ok(IndexMatrix::new(centers.len(), max_k, data))
}

/// For every column of an `M1 × M2` matrix, the row indices of its `k`
/// smallest entries, ascending by value. Result is `k × M2`.
pub fn topk_smallest(dist: &Tensor, k: usize) -> Result<IndexMatrix> {
    if dist.rank() != 2 {
        return Err(Error::Shape {
            op: "topk_smallest",
            lhs: dist.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (m1, m2) = (dist.rows(), dist.cols());
    if k > m1 {
        return Err(Error::arg(format!("top-{k} requested from {m1} rows")));
    }
    let mut data = vec![0usize; k * m2];
    let mut order: Vec<usize> = Vec::with_capacity(m1);
    let d = dist.data();
    for j in 0..m2 {
        order.clear();
        order.extend(0..m1);
        let key = |i: &usize| d[i * m2 + j];
        if k < m1 {
            order.select_nth_unstable_by(k, |a, b| key(a).total_cmp(&key(b)).then(a.cmp(b)));
            order.truncate(k);
        }
        order.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.cmp(b)));
        for (r, &i) in order.iter().take(k).enumerate() {
            data[r * m2 + j] = i;
        }
    }
    Ok(IndexMatrix::new(k, m2, data))
}

/// Indices of a random subsample of size `n` from `len` items.
///
/// With `len ≥ n` draws without replacement. Otherwise every item appears
/// once and the remainder is drawn with replacement, in shuffled order.
pub fn subsample_indices<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::Empty("random_subsample"));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    if len >= n {
        let (head, _) = idx.partial_shuffle(rng, n);
        return Ok(head.to_vec());
    }
    idx.extend((len..n).map(|_| rng.gen_range(0..len)));
    idx.shuffle(rng);
    Ok(idx)
}

pub fn random_subsample<R: Rng + ?Sized>(points: &PointCloud, n: usize, rng: &mut R) -> Result<PointCloud> {
    Ok(points.select(&subsample_indices(points.len(), n, rng)?))
}
