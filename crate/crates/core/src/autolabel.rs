//! Shape and pose fitting of the PCA template to one vehicle's instance mask
//! and LiDAR points, and export of the fitted keypoints as labels.
//!
//! The objective is `α·L2D + β·L3D`: `L2D` is the L1 distance between the
//! soft silhouette of the posed template and the instance mask, `L3D` the sum
//! over LiDAR points of the distance to the nearest posed template vertex.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{iou_3d, Box3D};
use crate::error::{Error, Result};
use crate::geometry::{
    rotation_euler_derivatives, rotation_matrix_pitch, rotation_matrix_roll, rotation_matrix_yaw, CameraIntrinsics,
    Pose, Pt3, Vec3, EPS_DEPTH,
};
use crate::kpfile::KeypointRecord;
use crate::pose_solver::{KeypointPair, KeypointSet};
use crate::raster::{mask_iou, MaskImage, MaskTarget, Rasterizer, DEFAULT_SOFTNESS};
use crate::shape::{
    deform, mesh_dimensions, normalize_keypoints, sample_keypoints, ShapeBasis, ShapeCoeff, TriangleMesh,
};
use crate::spatial::KdTree;

/// Finite-difference steps for the silhouette term.
const FD_ANGLE: f64 = 1e-3;
const FD_TRANSLATION: f64 = 1e-3;
const FD_SHAPE: f64 = 1e-2;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

const CONVERGE_WINDOW: usize = 10;
const CONVERGE_TOL: f64 = 1e-4;

/// Input for one fit. `points` are camera-frame LiDAR returns of this object
/// only, with the ground already removed.
#[derive(Debug, Clone)]
pub struct Observation {
    pub instance_mask: MaskImage,
    pub gt_box: Box3D,
    pub points: Vec<Pt3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundConfig {
    pub iters: usize,
    pub inlier_threshold: f64,
    /// Minimum inlier share for the best plane to be removed.
    pub min_fraction: f64,
    /// Maximum angle between the plane normal and camera −y, degrees.
    pub max_angle_deg: f64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        GroundConfig {
            iters: 200,
            inlier_threshold: 0.1,
            min_fraction: 0.2,
            max_angle_deg: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutolabelConfig {
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub s_clamp: f64,
    pub softness: f64,
    /// Also optimize pitch and roll; otherwise only yaw rotates.
    pub optimize_pitch_roll: bool,
    pub segment_margin: f64,
    pub min_points: usize,
    pub ground: GroundConfig,
}

impl Default for AutolabelConfig {
    fn default() -> Self {
        AutolabelConfig {
            alpha: 1.0,
            beta: 5.0,
            learning_rate: 0.002,
            max_steps: 200,
            s_clamp: 3.0,
            softness: DEFAULT_SOFTNESS,
            optimize_pitch_roll: true,
            segment_margin: 0.1,
            min_points: 10,
            ground: GroundConfig::default(),
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "alpha",
    "beta",
    "learning_rate",
    "max_steps",
    "s_clamp",
    "softness",
    "optimize_pitch_roll",
    "segment_margin",
    "min_points",
    "ground_iters",
    "ground_threshold",
    "ground_min_fraction",
    "ground_max_angle_deg",
];

impl AutolabelConfig {
    pub fn keys() -> &'static [&'static str] {
        CONFIG_KEYS
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.alpha,
            self.beta,
            self.s_clamp,
            self.softness,
            self.segment_margin,
            self.ground.inlier_threshold,
            self.ground.min_fraction,
            self.ground.max_angle_deg,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFiniteInput("config values must be finite and nonnegative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::NonFiniteInput("learning_rate must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::EmptyInput("max_steps must be at least 1"));
        }
        Ok(())
    }

    /// Set one `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value {v:?}"))
        }
        match key {
            "alpha" => self.alpha = num(value)?,
            "beta" => self.beta = num(value)?,
            "learning_rate" => self.learning_rate = num(value)?,
            "max_steps" => self.max_steps = num(value)?,
            "s_clamp" => self.s_clamp = num(value)?,
            "softness" => self.softness = num(value)?,
            "optimize_pitch_roll" => self.optimize_pitch_roll = num(value)?,
            "segment_margin" => self.segment_margin = num(value)?,
            "min_points" => self.min_points = num(value)?,
            "ground_iters" => self.ground.iters = num(value)?,
            "ground_threshold" => self.ground.inlier_threshold = num(value)?,
            "ground_min_fraction" => self.ground.min_fraction = num(value)?,
            "ground_max_angle_deg" => self.ground.max_angle_deg = num(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::malformed(i + 1, "expected key = value"))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::malformed(i + 1, e))?;
        }
        self.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let g = &self.ground;
        format!(
            "alpha = {}\nbeta = {}\nlearning_rate = {}\nmax_steps = {}\ns_clamp = {}\nsoftness = {}\n\
             optimize_pitch_roll = {}\nsegment_margin = {}\nmin_points = {}\nground_iters = {}\n\
             ground_threshold = {}\nground_min_fraction = {}\nground_max_angle_deg = {}\n",
            self.alpha,
            self.beta,
            self.learning_rate,
            self.max_steps,
            self.s_clamp,
            self.softness,
            self.optimize_pitch_roll,
            self.segment_margin,
            self.min_points,
            g.iters,
            g.inlier_threshold,
            g.min_fraction,
            g.max_angle_deg
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub l2d: f64,
    pub l3d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub s: ShapeCoeff,
    pub pose: Pose,
    pub final_l2d: f64,
    pub final_l3d: f64,
    pub final_loss: f64,
    /// Hard silhouette of the fit against the instance mask.
    pub mask_iou: f64,
    /// Fitted box against the observation's box.
    pub box_iou: f64,
    pub converged: bool,
    /// Best-so-far total loss after each evaluation, starting at the
    /// initial parameters.
    pub loss_curve: Vec<f64>,
    pub steps: usize,
    pub fitted_box: Box3D,
}

/// Points whose box-frame coordinates lie within `dims/2 + margin`.
pub fn segment_points_in_box(cloud: &[Pt3], b: &Box3D, margin: f64) -> Vec<Pt3> {
    let half = Vec3::new(b.dims.l, b.dims.h, b.dims.w) * 0.5 + Vec3::repeat(margin);
    cloud
        .iter()
        .filter(|p| {
            let q = b.to_local(p);
            q.x.abs() <= half.x && q.y.abs() <= half.y && q.z.abs() <= half.z
        })
        .copied()
        .collect()
}

/// Plane `normal·p + d = 0` with a unit normal pointing up (toward −y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub d: f64,
}

impl Plane {
    pub fn distance(&self, p: &Pt3) -> f64 {
        (self.normal.dot(&p.coords) + self.d).abs()
    }

    fn through(a: &Pt3, b: &Pt3, c: &Pt3) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len < 1e-12 {
            return None;
        }
        let mut normal = n / len;
        if normal.y > 0.0 {
            normal = -normal;
        }
        Some(Plane {
            normal,
            d: -normal.dot(&a.coords),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundRemoval {
    pub points: Vec<Pt3>,
    /// Best ground-like plane found, whether or not it was removed.
    pub plane: Option<Plane>,
    pub removed: usize,
}

/// RANSAC ground fit. Only roughly horizontal hypotheses (normal within
/// `max_angle_deg` of −y) compete; the winner's inliers are dropped if they
/// make up at least `min_fraction` of the points.
pub fn remove_ground_ransac(points: &[Pt3], cfg: &GroundConfig, seed: u64) -> Result<GroundRemoval> {
    let n = points.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_up_cos = cfg.max_angle_deg.to_radians().cos();
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..cfg.iters {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let Some(plane) = Plane::through(&points[i], &points[j], &points[k]) else {
            continue;
        };
        if -plane.normal.y < min_up_cos {
            continue;
        }
        let count = points
            .iter()
            .filter(|p| plane.distance(p) <= cfg.inlier_threshold)
            .count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, plane));
        }
    }
    let Some((count, plane)) = best else {
        return Ok(GroundRemoval {
            points: points.to_vec(),
            plane: None,
            removed: 0,
        });
    };
    if (count as f64) < cfg.min_fraction * n as f64 {
        return Ok(GroundRemoval {
            points: points.to_vec(),
            plane: Some(plane),
            removed: 0,
        });
    }
    let kept: Vec<Pt3> = points
        .iter()
        .filter(|p| plane.distance(p) > cfg.inlier_threshold)
        .copied()
        .collect();
    Ok(GroundRemoval {
        removed: n - kept.len(),
        points: kept,
        plane: Some(plane),
    })
}

/// Segment a camera-frame cloud by the box and strip the ground.
pub fn prepare_points(cloud: &[Pt3], b: &Box3D, cfg: &AutolabelConfig, seed: u64) -> Result<Vec<Pt3>> {
    let seg = segment_points_in_box(cloud, b, cfg.segment_margin);
    if seg.len() < 3 {
        return Ok(seg);
    }
    Ok(remove_ground_ransac(&seg, &cfg.ground, seed)?.points)
}

fn check_points(points: &[Pt3]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no points"));
    }
    Ok(())
}

/// `Σ_i min_j ‖p_i − (R·v_j + t)‖`.
pub fn chamfer_l3d(points: &[Pt3], mesh: &TriangleMesh, pose: &Pose) -> Result<f64> {
    check_points(points)?;
    if mesh.vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let r = pose.rotation();
    let posed: Vec<Pt3> = mesh.vertices.iter().map(|v| r * v + pose.t).collect();
    let tree = KdTree::build(&posed);
    Ok(points
        .iter()
        .map(|p| tree.nearest(p).expect("nonempty tree").1.sqrt())
        .sum())
}

/// `L3D` and its gradient with respect to shape, rotation angles and
/// translation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChamferGradient {
    pub loss: f64,
    pub d_s: Vec<f64>,
    /// `(yaw, pitch, roll)`.
    pub d_angles: [f64; 3],
    pub d_t: Vec3,
}

/// Exact gradient of [`chamfer_l3d`] for fixed nearest-vertex assignments.
/// A point sitting exactly on its vertex contributes zero.
pub fn chamfer_gradient(points: &[Pt3], basis: &ShapeBasis, s: &ShapeCoeff, pose: &Pose) -> Result<ChamferGradient> {
    check_points(points)?;
    let mesh = deform(basis, s)?;
    chamfer_gradient_mesh(points, basis, &mesh.vertices, pose)
}

fn chamfer_gradient_mesh(points: &[Pt3], basis: &ShapeBasis, vertices: &[Pt3], pose: &Pose) -> Result<ChamferGradient> {
    if vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let r = pose.rotation();
    let dr = rotation_euler_derivatives(pose.yaw, pose.pitch, pose.roll);
    let posed: Vec<Pt3> = vertices.iter().map(|v| r * v + pose.t).collect();
    let tree = KdTree::build(&posed);
    let mut out = ChamferGradient {
        loss: 0.0,
        d_s: vec![0.0; basis.rank()],
        d_angles: [0.0; 3],
        d_t: Vec3::zeros(),
    };
    for p in points {
        let (j, d2) = tree.nearest(p).expect("nonempty tree");
        let dist = d2.sqrt();
        out.loss += dist;
        if dist == 0.0 {
            continue;
        }
        let e = (posed[j] - p) / dist;
        out.d_t += e;
        for (a, m) in dr.iter().enumerate() {
            out.d_angles[a] += e.dot(&(m * vertices[j].coords));
        }
        let re = r.transpose() * e;
        for (k, g) in out.d_s.iter_mut().enumerate() {
            *g += re.dot(&basis.scaled_component(k, j));
        }
    }
    Ok(out)
}

/// `α·mask_l1(render(deform(basis, s), pose), mask) + β·chamfer_l3d`.
pub fn total_loss(
    s: &ShapeCoeff,
    pose: &Pose,
    basis: &ShapeBasis,
    obs: &Observation,
    k: &CameraIntrinsics,
    cfg: &AutolabelConfig,
) -> Result<LossTerms> {
    let mesh = deform(basis, s)?;
    let size = (obs.instance_mask.width(), obs.instance_mask.height());
    let rendered = crate::raster::render_silhouette(&mesh, pose, k, size, cfg.softness)?;
    let l2d = crate::raster::mask_l1(&rendered, &obs.instance_mask)?;
    let l3d = chamfer_l3d(&obs.points, &mesh, pose)?;
    Ok(LossTerms {
        total: cfg.alpha * l2d + cfg.beta * l3d,
        l2d,
        l3d,
    })
}

/// Box around the fitted mesh: its axis-aligned extent, placed by the pose.
/// Pitch and roll move the center but the box itself keeps only yaw.
pub fn fitted_box(mesh: &TriangleMesh, pose: &Pose) -> Result<Box3D> {
    let ext = mesh_dimensions(mesh)?;
    Ok(Box3D {
        center: pose.rotation() * ext.center + pose.t,
        dims: ext.dims,
        yaw: pose.yaw,
    })
}

/// Parameter vector layout: `[s_0 … s_{r−1}, yaw, pitch, roll, tx, ty, tz]`.
struct Problem<'a> {
    basis: &'a ShapeBasis,
    raster: Rasterizer,
    target: MaskTarget,
    points: &'a [Pt3],
    k: &'a CameraIntrinsics,
    cfg: &'a AutolabelConfig,
    vertices: Vec<Pt3>,
}

impl<'a> Problem<'a> {
    fn rank(&self) -> usize {
        self.basis.rank()
    }

    fn pose(&self, theta: &[f64]) -> Pose {
        let r = self.rank();
        Pose {
            yaw: theta[r],
            pitch: theta[r + 1],
            roll: theta[r + 2],
            t: Vec3::new(theta[r + 3], theta[r + 4], theta[r + 5]),
        }
    }

    fn shape_into(&mut self, theta: &[f64]) {
        let b = self.basis;
        self.vertices.clear();
        self.vertices.extend_from_slice(&b.mean.vertices);
        for (k, comp) in b.components.iter().enumerate() {
            let scale = theta[k] * b.sigmas[k];
            if scale == 0.0 {
                continue;
            }
            for (v, d) in self.vertices.iter_mut().zip(comp) {
                *v += d * scale;
            }
        }
    }

    fn l2d(&mut self, theta: &[f64]) -> Result<f64> {
        self.shape_into(theta);
        let pose = self.pose(theta);
        let region = self
            .raster
            .render_region(&self.vertices, &pose, self.k, self.target.size(), self.cfg.softness)?;
        Ok(self.target.l1(&region))
    }

    fn evaluate(&mut self, theta: &[f64]) -> Result<(LossTerms, ChamferGradient)> {
        let l2d = self.l2d(theta)?;
        let pose = self.pose(theta);
        let grad = chamfer_gradient_mesh(self.points, self.basis, &self.vertices, &pose)?;
        let terms = LossTerms {
            total: self.cfg.alpha * l2d + self.cfg.beta * grad.loss,
            l2d,
            l3d: grad.loss,
        };
        Ok((terms, grad))
    }

    fn active(&self, i: usize) -> bool {
        let r = self.rank();
        self.cfg.optimize_pitch_roll || !(i == r + 1 || i == r + 2)
    }

    fn fd_step(&self, i: usize) -> f64 {
        let r = self.rank();
        if i < r {
            FD_SHAPE
        } else if i < r + 3 {
            FD_ANGLE
        } else {
            FD_TRANSLATION
        }
    }

    fn gradient(&mut self, theta: &[f64], l3d: &ChamferGradient) -> Result<Vec<f64>> {
        let r = self.rank();
        let mut g = vec![0.0; theta.len()];
        let (alpha, beta) = (self.cfg.alpha, self.cfg.beta);
        for (k, gk) in l3d.d_s.iter().enumerate() {
            g[k] = beta * gk;
        }
        for a in 0..3 {
            g[r + a] = beta * l3d.d_angles[a];
            g[r + 3 + a] = beta * l3d.d_t[a];
        }
        if alpha > 0.0 {
            let mut probe = theta.to_vec();
            for i in 0..theta.len() {
                if !self.active(i) {
                    continue;
                }
                let h = self.fd_step(i);
                probe[i] = theta[i] + h;
                let up = self.l2d(&probe)?;
                probe[i] = theta[i] - h;
                let down = self.l2d(&probe)?;
                probe[i] = theta[i];
                g[i] += alpha * (up - down) / (2.0 * h);
            }
        }
        for (i, gi) in g.iter_mut().enumerate() {
            if !self.active(i) {
                *gi = 0.0;
            }
        }
        Ok(g)
    }
}

/// Fit shape coefficients and pose to one observation with Adam, starting
/// from the observation box (translation, yaw) and zero shape, pitch and
/// roll. Returns the best iterate.
pub fn fit(obs: &Observation, basis: &ShapeBasis, k: &CameraIntrinsics, cfg: &AutolabelConfig) -> Result<FitResult> {
    cfg.validate()?;
    basis.validate()?;
    k.validate()?;
    if obs.points.len() < cfg.min_points.max(1) {
        return Err(Error::InsufficientPoints {
            needed: cfg.min_points.max(1),
            got: obs.points.len(),
        });
    }
    if obs.instance_mask.count_on() == 0 {
        return Err(Error::EmptyInput("instance mask has no foreground"));
    }
    let r = basis.rank();
    let mean_ext = mesh_dimensions(&basis.mean)?;
    let t0 = obs.gt_box.center.coords - rotation_matrix_yaw(obs.gt_box.yaw) * mean_ext.center.coords;
    let mut theta = vec![0.0; r + 6];
    theta[r] = obs.gt_box.yaw;
    theta[r + 3..].copy_from_slice(t0.as_slice());

    let mut prob = Problem {
        basis,
        raster: Rasterizer::new(&basis.mean),
        target: MaskTarget::new(obs.instance_mask.clone()),
        points: &obs.points,
        k,
        cfg,
        vertices: Vec::with_capacity(basis.mean.vertices.len()),
    };

    let n = theta.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut best_theta = theta.clone();
    let mut best = LossTerms {
        total: f64::INFINITY,
        l2d: 0.0,
        l3d: 0.0,
    };
    let mut curve = Vec::with_capacity(cfg.max_steps + 1);
    let mut steps = 0;
    for step in 0..=cfg.max_steps {
        let (terms, l3d_grad) = prob.evaluate(&theta)?;
        if !terms.total.is_finite() {
            return Err(Error::DivergedLoss(step));
        }
        if terms.total < best.total {
            best = terms;
            best_theta.copy_from_slice(&theta);
        }
        curve.push(best.total);
        if step == cfg.max_steps || terms.total == 0.0 {
            break;
        }
        let g = prob.gradient(&theta, &l3d_grad)?;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::DivergedLoss(step));
        }
        steps = step + 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(steps as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(steps as i32);
        for i in 0..n {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            theta[i] -= cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
        }
        for s in &mut theta[..r] {
            *s = s.clamp(-cfg.s_clamp, cfg.s_clamp);
        }
    }

    let converged = best.total == 0.0
        || (curve.len() > CONVERGE_WINDOW && {
            let then = curve[curve.len() - 1 - CONVERGE_WINDOW];
            let now = best.total;
            (then - now) <= CONVERGE_TOL * then.abs()
        });

    let s = ShapeCoeff(best_theta[..r].to_vec());
    let mut pose = prob.pose(&best_theta);
    pose.yaw = crate::geometry::wrap_angle(pose.yaw);
    let mesh = deform(basis, &s)?;
    let size = (obs.instance_mask.width(), obs.instance_mask.height());
    let hard = crate::raster::render_silhouette(&mesh, &pose, k, size, 0.0)?;
    let fitted_box = fitted_box(&mesh, &pose)?;
    Ok(FitResult {
        mask_iou: mask_iou(&hard, &obs.instance_mask)?,
        box_iou: iou_3d(&fitted_box, &obs.gt_box),
        s,
        pose,
        final_l2d: best.l2d,
        final_l3d: best.l3d,
        final_loss: best.total,
        converged,
        loss_curve: curve,
        steps,
        fitted_box,
    })
}

/// Keypoint labels from a fit: template keypoints of the fitted shape, with
/// pitch and roll folded into the object-local coordinates so that a
/// yaw-only solve reproduces the fitted translation, normalized by the
/// fitted dimensions; 2D points are their projections.
pub fn export_keypoint_labels(
    id: &str,
    result: &FitResult,
    basis: &ShapeBasis,
    k: &CameraIntrinsics,
) -> Result<KeypointRecord> {
    if basis.keypoints.semantic.is_empty() {
        return Err(Error::EmptyInput("keypoint spec has no semantic keypoints"));
    }
    let mesh = deform(basis, &result.s)?;
    let kps = sample_keypoints(&mesh, &basis.keypoints)?;
    let dims = mesh_dimensions(&mesh)?.dims;
    let tilt = rotation_matrix_pitch(result.pose.pitch) * rotation_matrix_roll(result.pose.roll);
    let yaw = rotation_matrix_yaw(result.pose.yaw);
    let local: Vec<Pt3> = kps.iter().map(|p| tilt * p).collect();
    let normalized = normalize_keypoints(&local, &dims)?;
    let mut pairs = Vec::with_capacity(local.len());
    for (i, (p, pn)) in local.iter().zip(&normalized).enumerate() {
        let pc = yaw * p + result.pose.t;
        if pc.z <= EPS_DEPTH {
            return Err(Error::ProjectionFailure(i));
        }
        let (uv, _) = k.project(&pc).map_err(|_| Error::ProjectionFailure(i))?;
        pairs.push(KeypointPair::new(uv, *pn));
    }
    Ok(KeypointRecord {
        id: id.to_string(),
        intrinsics: *k,
        yaw: result.pose.yaw,
        dims: Some(dims),
        keypoints: KeypointSet::new(pairs),
    })
}
