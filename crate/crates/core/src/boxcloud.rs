//! Point-to-box representations.
//!
//! A BoxCloud row holds the distances from one point to the eight corners
//! and the center of a box, in canonical corner order. Because it depends
//! only on distances it is unchanged by any rigid motion applied jointly to
//! points and box, and it encodes both the box size and where on the object
//! a point sits.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{dist3, sub3, Box7, PointCloud};

pub const BOXCLOUD_DIM: usize = 9;
pub const OFFSET_BOXCLOUD_DIM: usize = 27;

/// N×9 point-to-box-point distances in meters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoxCloud {
    pub coords: Vec<[f64; 9]>,
}

/// N×27 object-frame offsets `p_i − q_j`, three values per box point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OffsetBoxCloud {
    pub coords: Vec<[f64; 27]>,
}

impl BoxCloud {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.coords, BOXCLOUD_DIM).expect("rows are 9 wide")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 || t.cols() != BOXCLOUD_DIM {
            return Err(Error::Shape {
                op: "boxcloud",
                lhs: t.shape().to_vec(),
                rhs: vec![BOXCLOUD_DIM],
            });
        }
        Ok(Self {
            coords: (0..t.rows()).map(|i| t.row(i).try_into().unwrap()).collect(),
        })
    }

    pub fn select(&self, index: &[usize]) -> BoxCloud {
        BoxCloud {
            coords: index.iter().map(|&i| self.coords[i]).collect(),
        }
    }
}

pub fn compute_boxcloud(points: &PointCloud, b: &Box7) -> BoxCloud {
    let q = b.box_points().0;
    BoxCloud {
        coords: points
            .iter()
            .map(|p| std::array::from_fn(|j| dist3(*p, q[j])))
            .collect(),
    }
}

pub fn compute_offset_boxcloud(points: &PointCloud, b: &Box7) -> OffsetBoxCloud {
    let local_q: Vec<_> = b.box_points().0.iter().map(|q| b.to_local(*q)).collect();
    OffsetBoxCloud {
        coords: points
            .iter()
            .map(|p| {
                let lp = b.to_local(*p);
                let mut row = [0.0; 27];
                for (j, q) in local_q.iter().enumerate() {
                    row[3 * j..3 * j + 3].copy_from_slice(&sub3(lp, *q));
                }
                row
            })
            .collect(),
    }
}

/// `M1 × M2` Euclidean distances between rows of two 9-wide matrices.
///
/// Uses `‖a‖² + ‖b‖² − 2a·b`, clamped at zero before the square root.
pub fn pairwise_distance_map(ct: &Tensor, cs: &Tensor) -> Result<Tensor> {
    if ct.rank() != 2 || cs.rank() != 2 || ct.cols() != cs.cols() {
        return Err(Error::Shape {
            op: "pairwise_distance_map",
            lhs: ct.shape().to_vec(),
            rhs: cs.shape().to_vec(),
        });
    }
    let (m1, m2, d) = (ct.rows(), cs.rows(), ct.cols());
    let sq = |t: &Tensor, i: usize| t.row(i).iter().map(|v| v * v).sum::<f64>();
    let nt: Vec<f64> = (0..m1).map(|i| sq(ct, i)).collect();
    let ns: Vec<f64> = (0..m2).map(|j| sq(cs, j)).collect();
    let mut out = vec![0.0; m1 * m2];
    for i in 0..m1 {
        let a = ct.row(i);
        for j in 0..m2 {
            let b = cs.row(j);
            let dot: f64 = (0..d).map(|k| a[k] * b[k]).sum();
            out[i * m2 + j] = (nt[i] + ns[j] - 2.0 * dot).max(0.0).sqrt();
        }
    }
    Tensor::new(vec![m1, m2], out)
}
