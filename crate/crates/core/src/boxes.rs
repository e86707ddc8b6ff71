//! Yaw-rotated 3D boxes and their overlap metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_matrix_yaw, Dims, Pt3, Vec3};
use crate::raster::{mask_iou, MaskImage};

/// Polygon areas at or below this are treated as empty.
const AREA_EPS: f64 = 1e-12;

/// Box centered on `center`, extents `dims` (l along local x, h along y,
/// w along z) and rotated by `yaw` about the camera y axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Pt3,
    pub dims: Dims,
    pub yaw: f64,
}

impl Box3D {
    pub fn volume(&self) -> f64 {
        self.dims.volume()
    }

    /// Map a camera-frame point into the box frame (origin at the center).
    pub fn to_local(&self, p: &Pt3) -> Vec3 {
        rotation_matrix_yaw(self.yaw).transpose() * (p - self.center)
    }

    /// BEV footprint in `(x, z)`, counter-clockwise in that plane.
    fn footprint(&self) -> Vec<[f64; 2]> {
        let c = box_corners(self);
        ensure_ccw(c[..4].iter().map(|p| [p.x, p.z]).collect())
    }

    fn y_range(&self) -> (f64, f64) {
        (self.center.y - self.dims.h / 2.0, self.center.y + self.dims.h / 2.0)
    }
}

/// Corners in a fixed order: the bottom face (`+y`, since y points down)
/// going `(+x,−z) → (+x,+z) → (−x,+z) → (−x,−z)` in the box frame, which is
/// counter-clockwise seen from above; then the top face in the same order.
pub fn box_corners(b: &Box3D) -> [Pt3; 8] {
    let (hl, hh, hw) = (b.dims.l / 2.0, b.dims.h / 2.0, b.dims.w / 2.0);
    let r = rotation_matrix_yaw(b.yaw);
    let footprint = [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)];
    let mut out = [Pt3::origin(); 8];
    for (face, y) in [hh, -hh].into_iter().enumerate() {
        for (i, (x, z)) in footprint.iter().enumerate() {
            out[face * 4 + i] = b.center + r * Vec3::new(*x, y, *z);
        }
    }
    out
}

fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn ensure_ccw(mut poly: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman: clip `subject` by the convex CCW polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % m]);
        let input = std::mem::take(&mut out);
        let n = input.len();
        for j in 0..n {
            let (p, q) = (input[j], input[(j + 1) % n]);
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let poly = clip_convex(&a.footprint(), &b.footprint());
    if poly.len() < 3 {
        return 0.0;
    }
    let area = signed_area(&poly).abs();
    if area <= AREA_EPS {
        0.0
    } else {
        area
    }
}

pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = bev_intersection(a, b);
    let union = a.dims.l * a.dims.w + b.dims.l * b.dims.w - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Identical boxes score exactly 1.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let (a0, a1) = a.y_range();
    let (b0, b1) = b.y_range();
    let overlap_y = (a1.min(b1) - a0.max(b0)).max(0.0);
    let inter = bev_intersection(a, b) * overlap_y;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Mean mask IoU and mean 3D box IoU over aligned fitted/reference pairs.
pub fn labeling_quality(fits: &[(Box3D, MaskImage)], gts: &[(Box3D, MaskImage)]) -> Result<(f64, f64)> {
    if fits.len() != gts.len() {
        return Err(Error::LengthMismatch(fits.len(), gts.len()));
    }
    if fits.is_empty() {
        return Err(Error::EmptyInput("no objects to evaluate"));
    }
    let mut mask_sum = 0.0;
    let mut box_sum = 0.0;
    for ((fb, fm), (gb, gm)) in fits.iter().zip(gts) {
        mask_sum += mask_iou(fm, gm)?;
        box_sum += iou_3d(fb, gb);
    }
    let n = fits.len() as f64;
    Ok((mask_sum / n, box_sum / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn car(x: f64, z: f64, yaw: f64) -> Box3D {
        Box3D {
            center: Pt3::new(x, 1.0, z),
            dims: Dims::new(4.0, 1.6, 1.5).unwrap(),
            yaw,
        }
    }

    #[test]
    fn unit_box_corners() {
        let b = Box3D {
            center: Pt3::origin(),
            dims: Dims::new(1.0, 1.0, 1.0).unwrap(),
            yaw: 0.0,
        };
        let c = box_corners(&b);
        assert_eq!(c[0], Pt3::new(0.5, 0.5, -0.5));
        assert_eq!(c[1], Pt3::new(0.5, 0.5, 0.5));
        assert_eq!(c[2], Pt3::new(-0.5, 0.5, 0.5));
        assert_eq!(c[7], Pt3::new(-0.5, -0.5, -0.5));
        for p in &c {
            assert!(p.iter().all(|v| v.abs() == 0.5));
        }
    }

    #[test]
    fn quarter_turn_swaps_extents() {
        let b = Box3D {
            center: Pt3::origin(),
            dims: Dims::new(4.0, 2.0, 1.0).unwrap(),
            yaw: PI / 2.0,
        };
        let c = box_corners(&b);
        let xs = c.iter().map(|p| p.x.abs()).fold(0.0, f64::max);
        let zs = c.iter().map(|p| p.z.abs()).fold(0.0, f64::max);
        assert!((xs - 1.0).abs() < 1e-12 && (zs - 2.0).abs() < 1e-12);
    }

    #[test]
    fn corner_edges_have_box_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let b = Box3D {
                center: Pt3::new(rng.random_range(-9.0..9.0), 1.0, rng.random_range(5.0..40.0)),
                dims: Dims::new(
                    rng.random_range(1.0..5.0),
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.5..2.0),
                )
                .unwrap(),
                yaw: rng.random_range(-PI..PI),
            };
            let c = box_corners(&b);
            let d = |i: usize, j: usize| (c[i] - c[j]).norm();
            assert!((d(0, 1) - b.dims.w).abs() < 1e-12);
            assert!((d(1, 2) - b.dims.l).abs() < 1e-12);
            assert!((d(0, 4) - b.dims.h).abs() < 1e-12);
            assert!((d(0, 3) - b.dims.l).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_fixtures() {
        let a = car(0.0, 20.0, 0.0);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        let shifted = car(4.0, 20.0, 0.0);
        assert_eq!(iou_3d(&a, &shifted), 0.0);
        assert_eq!(iou_bev(&a, &shifted), 0.0);
        let half = car(2.0, 20.0, 0.0);
        assert!((iou_3d(&a, &half) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou_bev(&a, &half) - 1.0 / 3.0).abs() < 1e-12);
        let far = car(0.0, 40.0, 1.0);
        assert_eq!(iou_3d(&a, &far), 0.0);
    }

    #[test]
    fn vertical_offset_reduces_3d_but_not_bev() {
        let a = car(0.0, 20.0, 0.3);
        let mut b = a;
        b.center.y += 0.75;
        assert!((iou_bev(&a, &b) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn labeling_quality_cases() {
        let m = MaskImage::from_fn(4, 4, |x, _| if x < 2 { 1.0 } else { 0.0 });
        let b = car(0.0, 20.0, 0.0);
        let pairs = vec![(b, m.clone()), (b, m.clone())];
        assert_eq!(labeling_quality(&pairs, &pairs).unwrap(), (1.0, 1.0));
        assert!(matches!(labeling_quality(&[], &[]), Err(Error::EmptyInput(_))));
        assert!(matches!(
            labeling_quality(&pairs[..1], &pairs),
            Err(Error::LengthMismatch(1, 2))
        ));
        // hand-computed: masks {1, 0.5, 1/3}, boxes {1/3, 1, 0}
        let shifted_mask = MaskImage::from_fn(4, 4, |x, _| if (1..3).contains(&x) { 1.0 } else { 0.0 });
        let quarter = MaskImage::from_fn(4, 4, |x, _| if x < 1 { 1.0 } else { 0.0 });
        let half_mask = MaskImage::from_fn(4, 4, |x, _| if x < 2 { 1.0 } else { 0.0 });
        let fits = vec![
            (car(2.0, 20.0, 0.0), m.clone()),
            (b, quarter),
            (car(0.0, 30.0, 0.0), shifted_mask),
        ];
        let gts = vec![(b, m.clone()), (b, half_mask.clone()), (b, half_mask)];
        let (mi, bi) = labeling_quality(&fits, &gts).unwrap();
        assert!((mi - (1.0 + 0.5 + 1.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((bi - (1.0 / 3.0 + 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn clip_square_by_shifted_square() {
        let sq = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let sh = vec![[0.5, 0.5], [1.5, 0.5], [1.5, 1.5], [0.5, 1.5]];
        let p = clip_convex(&sq, &sh);
        assert!((signed_area(&p) - 0.25).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn symmetric_and_yaw_invariant(
            x in -3.0f64..3.0, z in -3.0f64..3.0, ya in -3.2f64..3.2, yb in -3.2f64..3.2,
            dy in -1.0f64..1.0, spin in -3.2f64..3.2,
        ) {
            let a = car(0.0, 20.0, ya);
            let mut b = car(x, 20.0 + z, yb);
            b.center.y += dy;
            b.dims.l = 3.5;
            let ab = iou_3d(&a, &b);
            prop_assert!((ab - iou_3d(&b, &a)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            // rotate both boxes by the same angle about a's center
            let pivot = a.center;
            let r = rotation_matrix_yaw(spin);
            let rot = |bx: &Box3D| Box3D {
                center: pivot + r * (bx.center - pivot),
                dims: bx.dims,
                yaw: bx.yaw + spin,
            };
            prop_assert!((iou_3d(&rot(&a), &rot(&b)) - ab).abs() < 1e-9);
            prop_assert!((iou_bev(&rot(&a), &rot(&b)) - iou_bev(&a, &b)).abs() < 1e-9);
        }
    }
}
