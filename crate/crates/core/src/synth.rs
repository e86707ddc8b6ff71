//! Seeded synthetic scenes: a deformed template placed on a ground plane in
//! front of the camera, its rendered mask, LiDAR-like surface and ground
//! returns, a perturbed annotation box and exact keypoint records.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::autolabel::{prepare_points, AutolabelConfig, Observation};
use crate::boxes::Box3D;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, Pt2, Pt3, Vec3};
use crate::kpfile::KeypointRecord;
use crate::pose_solver::{KeypointPair, KeypointSet};
use crate::raster::{render_silhouette, MaskImage};
use crate::shape::{
    deform, mesh_dimensions, normalize_keypoints, sample_keypoints, ShapeBasis, ShapeCoeff, TriangleMesh,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub depth_range: (f64, f64),
    pub lateral_range: (f64, f64),
    /// Shape coefficients are drawn from `U[−s_range, s_range]`.
    pub s_range: f64,
    /// Height of the camera above the ground, meters.
    pub camera_height: f64,
    pub surface_points: usize,
    /// Isotropic Gaussian LiDAR noise, meters.
    pub point_noise: f64,
    /// Ground returns inside the object's footprint.
    pub ground_points: usize,
    /// Ground returns around, but outside, the footprint.
    pub clutter_points: usize,
    pub box_center_sigma: f64,
    pub box_height_sigma: f64,
    pub box_yaw_sigma_deg: f64,
    /// Ground tilt; the object sits flat on it, so this becomes its
    /// pitch/roll.
    pub tilt_deg: f64,
    pub keypoint_noise_px: f64,
    /// Keypoints displaced by `outlier_px` in every object.
    pub outlier_indices: Vec<usize>,
    pub outlier_px: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 256,
            height: 256,
            intrinsics: CameraIntrinsics {
                fx: 300.0,
                fy: 300.0,
                cx: 128.0,
                cy: 128.0,
            },
            depth_range: (10.0, 18.0),
            lateral_range: (-2.0, 2.0),
            s_range: 0.5,
            camera_height: 1.65,
            surface_points: 300,
            point_noise: 0.01,
            ground_points: 100,
            clutter_points: 200,
            box_center_sigma: 0.1,
            box_height_sigma: 0.03,
            box_yaw_sigma_deg: 1.5,
            tilt_deg: 0.0,
            keypoint_noise_px: 0.0,
            outlier_indices: Vec::new(),
            outlier_px: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthObject {
    pub id: String,
    pub s: ShapeCoeff,
    pub pose: Pose,
    /// Box around the true deformed mesh.
    pub true_box: Box3D,
    /// `true_box` with annotation noise; what a fit starts from.
    pub annotated_box: Box3D,
    pub mask: MaskImage,
    /// Camera-frame returns: surface points first, then ground, then clutter.
    pub cloud: Vec<Pt3>,
    pub keypoints: KeypointRecord,
}

impl SynthObject {
    /// Fit input: the cloud segmented by the annotated box with ground
    /// removed.
    pub fn observation(&self, cfg: &AutolabelConfig, seed: u64) -> Result<Observation> {
        Ok(Observation {
            instance_mask: self.mask.clone(),
            gt_box: self.annotated_box,
            points: prepare_points(&self.cloud, &self.annotated_box, cfg, seed)?,
        })
    }
}

/// Deterministic per-object generator: object `index` of the scene seeded
/// by `seed`, independent of how many objects are generated.
pub fn object_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma.max(0.0)).expect("finite sigma")
}

/// Möller–Trumbore: does the segment from the camera center to `p` hit
/// triangle `(a, b, c)` strictly before `p`?
fn occludes(p: &Pt3, a: &Pt3, b: &Pt3, c: &Pt3) -> bool {
    let dir = p.coords;
    let (e1, e2) = (b - a, c - a);
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-12 {
        return false;
    }
    let inv = 1.0 / det;
    let s = -a.coords;
    let u = inv * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = inv * dir.dot(&q);
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    let t = inv * e2.dot(&q);
    t > 1e-9 && t < 1.0 - 1e-6
}

/// Points on camera-facing, unoccluded parts of the posed mesh, uniform by
/// area among those.
pub fn sample_visible_surface(posed: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Result<Vec<Pt3>> {
    let facing: Vec<usize> = (0..posed.faces.len())
        .filter(|&f| {
            let [a, b, c] = posed.faces[f].map(|i| posed.vertices[i]);
            let centroid = (a.coords + b.coords + c.coords) / 3.0;
            posed.face_normal(f).dot(&centroid) < 0.0 && posed.face_area(f) > 0.0
        })
        .collect();
    if facing.is_empty() || n == 0 {
        return Ok(Vec::new());
    }
    let weights: Vec<f64> = facing.iter().map(|&f| posed.face_area(f)).collect();
    let pick = WeightedIndex::new(&weights).map_err(|_| Error::EmptyMesh)?;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 200 * n {
            break;
        }
        let f = facing[pick.sample(rng)];
        let [a, b, c] = posed.faces[f].map(|i| posed.vertices[i]);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let sq = r1.sqrt();
        let p = Pt3::from(a.coords * (1.0 - sq) + b.coords * (sq * (1.0 - r2)) + c.coords * (sq * r2));
        let hidden = posed.faces.iter().enumerate().any(|(g, face)| {
            g != f
                && occludes(
                    &p,
                    &posed.vertices[face[0]],
                    &posed.vertices[face[1]],
                    &posed.vertices[face[2]],
                )
        });
        if !hidden {
            out.push(p);
        }
    }
    Ok(out)
}

/// Keypoint record for a known shape and pose: template keypoints with the
/// pose's pitch and roll folded into object coordinates, normalized by the
/// mesh dimensions, projected exactly.
pub fn exact_keypoints(
    id: &str,
    basis: &ShapeBasis,
    s: &ShapeCoeff,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<KeypointRecord> {
    let fit = crate::autolabel::FitResult {
        s: s.clone(),
        pose: *pose,
        final_l2d: 0.0,
        final_l3d: 0.0,
        final_loss: 0.0,
        mask_iou: 1.0,
        box_iou: 1.0,
        converged: true,
        loss_curve: Vec::new(),
        steps: 0,
        fitted_box: crate::autolabel::fitted_box(&deform(basis, s)?, pose)?,
    };
    crate::autolabel::export_keypoint_labels(id, &fit, basis, k)
}

pub fn generate_object(basis: &ShapeBasis, cfg: &SynthConfig, seed: u64, index: usize) -> Result<SynthObject> {
    let mut rng = object_rng(seed, index as u64);
    let r = basis.rank();
    let s = ShapeCoeff((0..r).map(|_| rng.random_range(-cfg.s_range..=cfg.s_range)).collect());
    let mesh = deform(basis, &s)?;
    let ext = mesh_dimensions(&mesh)?;

    let yaw = rng.random_range(-PI..PI);
    let tilt = cfg.tilt_deg.to_radians();
    let phi = rng.random_range(0.0..2.0 * PI);
    let (pitch, roll) = (tilt * phi.cos(), tilt * phi.sin());
    let tx = rng.random_range(cfg.lateral_range.0..=cfg.lateral_range.1);
    let tz = rng.random_range(cfg.depth_range.0..=cfg.depth_range.1);
    let mut pose = Pose::new(yaw, pitch, roll, Vec3::new(tx, 0.0, tz));
    let rot = pose.rotation();
    // rest the bottom face on the plane through (tx, H, tz) with the
    // object's up axis as its normal
    let up = -(rot * Vec3::y());
    let bottom = Pt3::new(ext.center.x, ext.center.y + ext.dims.h / 2.0, ext.center.z);
    let rb = rot * bottom.coords;
    pose.t.y = cfg.camera_height - up.dot(&rb) / up.y;

    let posed = TriangleMesh {
        vertices: mesh.vertices.iter().map(|v| pose.transform(v)).collect(),
        faces: mesh.faces.clone(),
    };
    let k = &cfg.intrinsics;
    let mask = render_silhouette(&mesh, &pose, k, (cfg.width, cfg.height), 0.0)?;

    let noise = normal(cfg.point_noise);
    let jitter = |p: Pt3, rng: &mut ChaCha8Rng| p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
    let mut cloud: Vec<Pt3> = sample_visible_surface(&posed, cfg.surface_points, &mut rng)?
        .into_iter()
        .map(|p| jitter(p, &mut rng))
        .collect();
    let (hl, hw) = (ext.dims.l / 2.0, ext.dims.w / 2.0);
    let on_ground = |x: f64, z: f64| pose.transform(&Pt3::new(ext.center.x + x, bottom.y, ext.center.z + z));
    for _ in 0..cfg.ground_points {
        let (x, z) = (rng.random_range(-hl..hl), rng.random_range(-hw..hw));
        let p = on_ground(x, z);
        cloud.push(jitter(p, &mut rng));
    }
    let mut placed = 0;
    while placed < cfg.clutter_points {
        let (x, z) = (
            rng.random_range(-hl - 3.0..hl + 3.0),
            rng.random_range(-hw - 3.0..hw + 3.0),
        );
        if x.abs() < hl + 0.5 && z.abs() < hw + 0.5 {
            continue;
        }
        let p = on_ground(x, z);
        cloud.push(jitter(p, &mut rng));
        placed += 1;
    }

    let true_box = crate::autolabel::fitted_box(&mesh, &pose)?;
    let c = normal(cfg.box_center_sigma);
    let annotated_box = Box3D {
        center: true_box.center
            + Vec3::new(
                c.sample(&mut rng),
                normal(cfg.box_height_sigma).sample(&mut rng),
                c.sample(&mut rng),
            ),
        dims: true_box.dims,
        yaw: crate::geometry::wrap_angle(true_box.yaw + normal(cfg.box_yaw_sigma_deg.to_radians()).sample(&mut rng)),
    };

    let id = format!("{index:06}");
    let mut keypoints = exact_keypoints(&id, basis, &s, &pose, k)?;
    let px = normal(cfg.keypoint_noise_px);
    for kp in &mut keypoints.keypoints.pairs {
        kp.p2d += nalgebra::Vector2::new(px.sample(&mut rng), px.sample(&mut rng));
    }
    for &i in &cfg.outlier_indices {
        let n = keypoints.keypoints.len();
        let kp = keypoints
            .keypoints
            .pairs
            .get_mut(i)
            .ok_or(Error::IndexOutOfRange { index: i, len: n })?;
        let dir = rng.random_range(0.0..2.0 * PI);
        kp.p2d += nalgebra::Vector2::new(dir.cos(), dir.sin()) * cfg.outlier_px;
    }

    Ok(SynthObject {
        id,
        s,
        pose,
        true_box,
        annotated_box,
        mask,
        cloud,
        keypoints,
    })
}

pub fn generate_scene(basis: &ShapeBasis, cfg: &SynthConfig, seed: u64, n: usize) -> Result<Vec<SynthObject>> {
    (0..n).map(|i| generate_object(basis, cfg, seed, i)).collect()
}

/// `n` keypoints at random object-local positions inside a car-sized box,
/// with exact projections under a random pose; for solver tests and
/// benchmarks.
pub fn random_keypoint_scene(
    rng: &mut impl Rng,
    n: usize,
    k: &CameraIntrinsics,
    depth: (f64, f64),
) -> (KeypointSet, Pose) {
    let pose = Pose::from_yaw(
        rng.random_range(-PI..PI),
        Vec3::new(
            rng.random_range(-15.0..15.0),
            rng.random_range(0.5..2.5),
            rng.random_range(depth.0..=depth.1),
        ),
    );
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let p = Pt3::new(
            rng.random_range(-2.2..2.2),
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.95..0.95),
        );
        let pc = pose.transform(&p);
        let Ok((uv, _)) = k.project(&pc) else { continue };
        pairs.push(KeypointPair::new(Pt2::new(uv.x, uv.y), p));
    }
    (KeypointSet::new(pairs), pose)
}

/// Normalized 3D keypoints of `mesh` for `basis`'s spec.
pub fn normalized_template_keypoints(basis: &ShapeBasis, mesh: &TriangleMesh) -> Result<Vec<Pt3>> {
    let kps = sample_keypoints(mesh, &basis.keypoints)?;
    normalize_keypoints(&kps, &mesh_dimensions(mesh)?.dims)
}
