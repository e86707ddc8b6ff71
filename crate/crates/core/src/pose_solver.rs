//! Translation recovery from 2D/3D keypoint correspondences.
//!
//! With the rotation reduced to a single yaw angle, every keypoint pair gives
//! two equations that are linear in the object translation `T`:
//!
//! ```text
//! [-1  0  ũ] T = x·cos(ry) + z·sin(ry) + ũ·(x·sin(ry) − z·cos(ry))
//! [ 0 -1  ṽ] T = y                      + ṽ·(x·sin(ry) − z·cos(ry))
//! ```
//!
//! where `(ũ, ṽ)` is the keypoint in normalized image coordinates and
//! `(x, y, z)` its object-local 3D position. Stacking `n` pairs gives a
//! `2n × 3` system which is solved in the weighted least-squares sense, one
//! confidence per row.

use nalgebra::{Dyn, OMatrix, OVector, U3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Dims, Mat3, Pt2, Pt3, Vec3};

/// Rows whose weight is at or below this value are dropped from the solve.
pub const EPS_WEIGHT: f64 = 1e-6;
/// Singular values below `σ_max · RANK_TOL` count as zero.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointPair {
    pub p2d: Pt2,
    pub p3d: Pt3,
    pub conf_u: f64,
    pub conf_v: f64,
}

impl KeypointPair {
    pub fn new(p2d: Pt2, p3d: Pt3) -> Self {
        KeypointPair {
            p2d,
            p3d,
            conf_u: 1.0,
            conf_v: 1.0,
        }
    }
}

/// Ordered keypoints of one object. The order is part of the data: index `i`
/// always names the same semantic point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub pairs: Vec<KeypointPair>,
}

impl KeypointSet {
    pub fn new(pairs: Vec<KeypointPair>) -> Self {
        KeypointSet { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Zero both constraint weights of the listed keypoints.
    pub fn zero_weights(&mut self, indices: &[usize]) -> Result<()> {
        for &i in indices {
            let len = self.pairs.len();
            let kp = self.pairs.get_mut(i).ok_or(Error::IndexOutOfRange { index: i, len })?;
            kp.conf_u = 0.0;
            kp.conf_v = 0.0;
        }
        Ok(())
    }
}

/// `A·T = B` with one weight per row. Row `2i` is the u-row of keypoint `i`,
/// row `2i + 1` its v-row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    pub a: Vec<[f64; 3]>,
    pub b: Vec<f64>,
    pub w: Vec<f64>,
}

impl ConstraintSystem {
    pub fn rows(&self) -> usize {
        self.b.len()
    }

    /// `A·t − B`, one entry per row.
    pub fn residuals(&self, t: &Vec3) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(r, b)| r[0] * t.x + r[1] * t.y + r[2] * t.z - b)
            .collect()
    }

    fn weighted_rms(&self, t: &Vec3) -> f64 {
        let res = self.residuals(t);
        let wsum: f64 = self.w.iter().sum();
        if wsum <= 0.0 {
            return 0.0;
        }
        let e: f64 = res.iter().zip(&self.w).map(|(r, w)| w * r * r).sum();
        (e / wsum).sqrt()
    }

    fn active_rows(&self) -> Result<Vec<usize>> {
        if self.w.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFiniteInput("weights must be finite and nonnegative"));
        }
        let rows: Vec<usize> = (0..self.rows()).filter(|&i| self.w[i] > EPS_WEIGHT).collect();
        if rows.is_empty() {
            return Err(Error::AllWeightsZero);
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSolution {
    pub t: Vec3,
    pub weighted_rms_residual: f64,
    pub effective_rank: usize,
}

pub fn assemble_system(kps: &KeypointSet, ry: f64, k: &CameraIntrinsics) -> Result<ConstraintSystem> {
    let n = kps.len();
    if n < 2 {
        return Err(Error::TooFewKeypoints(n));
    }
    if !ry.is_finite() {
        return Err(Error::NonFiniteInput("yaw"));
    }
    k.validate()?;
    let (s, c) = ry.sin_cos();
    let mut a = Vec::with_capacity(2 * n);
    let mut b = Vec::with_capacity(2 * n);
    let mut w = Vec::with_capacity(2 * n);
    for kp in &kps.pairs {
        let (un, vn) = k.normalize_pixel(&kp.p2d);
        let (x, y, z) = (kp.p3d.x, kp.p3d.y, kp.p3d.z);
        let vals = [un, vn, x, y, z, kp.conf_u, kp.conf_v];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("keypoint"));
        }
        let depth_term = x * s - z * c;
        a.push([-1.0, 0.0, un]);
        b.push(x * c + z * s + un * depth_term);
        w.push(kp.conf_u);
        a.push([0.0, -1.0, vn]);
        b.push(y + vn * depth_term);
        w.push(kp.conf_v);
    }
    Ok(ConstraintSystem { a, b, w })
}

/// Weighted least-squares translation via SVD of `diag(√w)·A`.
pub fn solve_translation(sys: &ConstraintSystem) -> Result<PoseSolution> {
    let rows = sys.active_rows()?;
    let m = rows.len();
    let mut aw = OMatrix::<f64, Dyn, U3>::zeros(m);
    let mut bw = OVector::<f64, Dyn>::zeros(m);
    // rescale so the largest weight is 1
    let w_max = rows.iter().map(|&i| sys.w[i]).fold(0.0, f64::max);
    for (r, &i) in rows.iter().enumerate() {
        let sw = (sys.w[i] / w_max).sqrt();
        for j in 0..3 {
            aw[(r, j)] = sw * sys.a[i][j];
        }
        bw[r] = sw * sys.b[i];
    }

    // reduce to the 3×3 triangular factor first; SVD of that is far more
    // accurate than a direct SVD of the tall matrix
    let (r_mat, qtb) = if m >= 3 {
        let qr = aw.qr();
        let qtb = qr.q().transpose() * &bw;
        (qr.r(), qtb)
    } else {
        (aw.clone(), bw.clone())
    };
    let svd = r_mat.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = sigma_max * RANK_TOL;

    let mut t = Vec3::zeros();
    let mut rank = 0;
    let mut unobservable = Vec::new();
    for i in 0..sigma.len() {
        let vi = v_t.row(i).transpose();
        if sigma[i] > cutoff && sigma_max > 0.0 {
            rank += 1;
            let coeff = u.column(i).dot(&qtb) / sigma[i];
            t += vi * coeff;
        } else {
            unobservable.push([vi[0], vi[1], vi[2]]);
        }
    }
    // a thin SVD of a matrix with fewer than 3 rows drops directions entirely
    if sigma.len() < 3 {
        let basis: Vec<Vec3> = (0..sigma.len()).map(|i| v_t.row(i).transpose()).collect();
        unobservable.extend(complement_directions(&basis));
    }
    if rank < 3 {
        return Err(Error::RankDeficient { rank, unobservable });
    }
    // the iterative SVD leaves ~1e-10 relative error in its vectors; a couple
    // of refinement passes on the reduced system remove it
    let pinv = |rhs: &OVector<f64, Dyn>| -> Vec3 {
        (0..3)
            .map(|i| v_t.row(i).transpose() * (u.column(i).dot(rhs) / sigma[i]))
            .sum()
    };
    for _ in 0..2 {
        let rhs = &qtb - &r_mat * t;
        t += pinv(&rhs);
    }
    Ok(PoseSolution {
        t,
        weighted_rms_residual: sys.weighted_rms(&t),
        effective_rank: rank,
    })
}

fn complement_directions(basis: &[Vec3]) -> Vec<[f64; 3]> {
    let mut out: Vec<Vec3> = basis.to_vec();
    let mut extra = Vec::new();
    for e in [Vec3::x(), Vec3::y(), Vec3::z()] {
        if out.len() == 3 {
            break;
        }
        let mut v = e;
        for b in &out {
            v -= b * b.dot(&v);
        }
        if v.norm() > 1e-6 {
            let v = v.normalize();
            out.push(v);
            extra.push([v.x, v.y, v.z]);
        }
    }
    extra
}

/// Same problem solved through `(AᵀWA) t = AᵀWB` with a direct 3×3 inverse.
/// Kept as an independent cross-check of [`solve_translation`].
pub fn solve_translation_normal_equations(sys: &ConstraintSystem) -> Result<PoseSolution> {
    let rows = sys.active_rows()?;
    let mut n = Mat3::zeros();
    let mut rhs = Vec3::zeros();
    for &i in &rows {
        let a = Vec3::new(sys.a[i][0], sys.a[i][1], sys.a[i][2]);
        n += sys.w[i] * a * a.transpose();
        rhs += sys.w[i] * sys.b[i] * a;
    }
    let scale = n.abs().max();
    let det = n.determinant();
    if scale == 0.0 || det.abs() <= 1e-12 * scale.powi(3) {
        return Err(Error::SingularNormalMatrix);
    }
    let inv = n.try_inverse().ok_or(Error::SingularNormalMatrix)?;
    let t = inv * rhs;
    Ok(PoseSolution {
        t,
        weighted_rms_residual: sys.weighted_rms(&t),
        effective_rank: 3,
    })
}

/// Scale dimension-normalized 3D keypoints back to meters (x by l, y by h,
/// z by w).
pub fn denormalize_keypoints3d(kps_normalized: &KeypointSet, dims: &Dims) -> Result<KeypointSet> {
    dims.validate()?;
    let axes = dims.as_axes();
    let pairs = kps_normalized
        .pairs
        .iter()
        .map(|kp| KeypointPair {
            p3d: Pt3::from(kp.p3d.coords.component_mul(&axes)),
            ..*kp
        })
        .collect();
    Ok(KeypointSet { pairs })
}

/// Convenience: assemble and solve in one call.
pub fn solve_keypoints(kps: &KeypointSet, ry: f64, k: &CameraIntrinsics) -> Result<PoseSolution> {
    solve_translation(&assemble_system(kps, ry, k)?)
}
