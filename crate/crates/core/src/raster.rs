//! Silhouette rendering of a posed mesh and mask losses.
//!
//! The hard mask marks every pixel whose center falls inside a projected
//! triangle. The soft mask replaces the step at the silhouette boundary with
//! a smoothstep over `±3·softness` pixels of signed distance, so the mask
//! loss varies continuously with the pose and shape parameters. Pixels
//! farther than `3·softness` from the boundary keep their hard value.
//!
//! The boundary is found on the exposed parts of contour edges: each
//! contour edge is cut into short pieces and a piece counts as boundary when
//! the image just beside it is uncovered on one side.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, Pt2, Pt3, EPS_DEPTH};
use crate::shape::TriangleMesh;

/// Default boundary softness in pixels.
pub const DEFAULT_SOFTNESS: f64 = 1.5;
/// Maximum length of a boundary piece, in pixels.
const PIECE_LEN: f64 = 0.5;
/// Offset used to probe either side of an edge piece, in pixels.
const PROBE: f64 = 1e-3;
const BIN: usize = 8;

/// Row-major occupancy image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::SizeMismatch(width, height, 1, 1));
        }
        Ok(MaskImage {
            width,
            height,
            data: vec![0.0; width * height],
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        MaskImage { width, height, data }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::SizeMismatch(width, height, data.len(), 1));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::NonFiniteInput("mask values must lie in [0, 1]"));
        }
        Ok(MaskImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn count_on(&self) -> usize {
        self.data.iter().filter(|v| **v >= 0.5).count()
    }

    /// Pixel bounding box `(x0, y0, x1, y1)` (inclusive) of the on-pixels.
    pub fn on_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) >= 0.5 {
                    b = Some(match b {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        b
    }

    fn check_same_size(&self, other: &MaskImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::SizeMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }
}

/// Sum of absolute per-pixel differences.
pub fn mask_l1(rendered: &MaskImage, target: &MaskImage) -> Result<f64> {
    rendered.check_same_size(target)?;
    Ok(rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum())
}

/// IoU of the two masks thresholded at 0.5; 1 when both are empty.
pub fn mask_iou(a: &MaskImage, b: &MaskImage) -> Result<f64> {
    a.check_same_size(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.data.iter().zip(&b.data) {
        let (p, q) = (*x >= 0.5, *y >= 0.5);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    a: usize,
    b: usize,
    faces: [Option<usize>; 2],
}

/// Topology cache for repeated renders of meshes sharing one face list.
#[derive(Debug, Clone)]
pub struct Rasterizer {
    faces: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    consistent: bool,
}

/// Rendered occupancy over a sub-rectangle of the image; pixels outside are 0.
#[derive(Debug, Clone)]
pub struct RenderedRegion {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub occupancy: Vec<f32>,
}

impl RenderedRegion {
    pub fn to_mask(&self, width: usize, height: usize) -> MaskImage {
        let mut m = MaskImage {
            width,
            height,
            data: vec![0.0; width * height],
        };
        for y in 0..self.height {
            let row = &self.occupancy[y * self.width..(y + 1) * self.width];
            let start = (self.y0 + y) * width + self.x0;
            m.data[start..start + self.width].copy_from_slice(row);
        }
        m
    }
}

struct ProjTri {
    p: [Pt2; 3],
    lo: [f64; 2],
    hi: [f64; 2],
}

impl ProjTri {
    fn contains(&self, q: [f64; 2]) -> bool {
        let [a, b, c] = self.p;
        let e = |p: Pt2, r: Pt2| (r.x - p.x) * (q[1] - p.y) - (r.y - p.y) * (q[0] - p.x);
        let (e0, e1, e2) = (e(a, b), e(b, c), e(c, a));
        (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
    }
}

fn signed_area2(p: &[Pt2; 3]) -> f64 {
    (p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[1].y - p[0].y) * (p[2].x - p[0].x)
}

fn smoothstep_occupancy(signed: f64, band: f64) -> f32 {
    let t = ((signed / band + 1.0) * 0.5).clamp(0.0, 1.0);
    (t * t * (3.0 - 2.0 * t)) as f32
}

fn point_segment_distance(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (px, py) = (a[0] + t * dx - q[0], a[1] + t * dy - q[1]);
    (px * px + py * py).sqrt()
}

impl Rasterizer {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let mut map: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                match map.get(&key) {
                    Some(&idx) if edges[idx].faces[1].is_none() => edges[idx].faces[1] = Some(fi),
                    Some(_) => {
                        // non-manifold: keep as its own candidate
                        edges.push(Edge {
                            a,
                            b,
                            faces: [Some(fi), None],
                        });
                    }
                    None => {
                        map.insert(key, edges.len());
                        edges.push(Edge {
                            a,
                            b,
                            faces: [Some(fi), None],
                        });
                    }
                }
            }
        }
        Rasterizer {
            faces: mesh.faces.clone(),
            edges,
            consistent: mesh.has_consistent_winding(),
        }
    }

    /// Render the silhouette of `vertices` (object frame, using this
    /// rasterizer's faces) into the smallest image region that can be
    /// nonzero.
    pub fn render_region(
        &self,
        vertices: &[Pt3],
        pose: &Pose,
        k: &CameraIntrinsics,
        size: (usize, usize),
        softness: f64,
    ) -> Result<RenderedRegion> {
        if vertices.is_empty() || self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let (w, h) = size;
        if w == 0 || h == 0 {
            return Err(Error::SizeMismatch(w, h, 1, 1));
        }
        let rot = pose.rotation();
        let mut any_front = false;
        let proj: Vec<Option<Pt2>> = vertices
            .iter()
            .map(|v| {
                let pc = rot * v + pose.t;
                if pc.z > EPS_DEPTH {
                    any_front = true;
                    Some(Pt2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy))
                } else {
                    None
                }
            })
            .collect();
        if !any_front {
            return Err(Error::AllVerticesClipped);
        }

        // per-face projection; None for clipped or degenerate faces
        let mut tris: Vec<Option<ProjTri>> = Vec::with_capacity(self.faces.len());
        let mut orient: Vec<f64> = Vec::with_capacity(self.faces.len());
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for f in &self.faces {
            let (Some(a), Some(b), Some(c)) = (proj[f[0]], proj[f[1]], proj[f[2]]) else {
                tris.push(None);
                orient.push(0.0);
                continue;
            };
            let p = [a, b, c];
            let area = signed_area2(&p);
            orient.push(area);
            if area.abs() < 1e-12 {
                tris.push(None);
                continue;
            }
            let tlo = [a.x.min(b.x).min(c.x), a.y.min(b.y).min(c.y)];
            let thi = [a.x.max(b.x).max(c.x), a.y.max(b.y).max(c.y)];
            for i in 0..2 {
                lo[i] = lo[i].min(tlo[i]);
                hi[i] = hi[i].max(thi[i]);
            }
            tris.push(Some(ProjTri { p, lo: tlo, hi: thi }));
        }

        let band = 3.0 * softness.max(0.0);
        let empty = RenderedRegion {
            x0: 0,
            y0: 0,
            width: 0,
            height: 0,
            occupancy: Vec::new(),
        };
        if !lo[0].is_finite() {
            return Ok(empty);
        }
        let clampi = |v: f64, max: usize| -> usize { v.max(0.0).min(max as f64) as usize };
        let x0 = clampi((lo[0] - band - 1.0).floor(), w);
        let y0 = clampi((lo[1] - band - 1.0).floor(), h);
        let x1 = clampi((hi[0] + band + 1.0).ceil(), w);
        let y1 = clampi((hi[1] + band + 1.0).ceil(), h);
        if x1 <= x0 || y1 <= y0 {
            return Ok(empty);
        }
        let (rw, rh) = (x1 - x0, y1 - y0);

        // hard coverage at pixel centers, plus a bin grid for point queries
        let mut covered = vec![false; rw * rh];
        let (bw, bh) = (rw.div_ceil(BIN), rh.div_ceil(BIN));
        let mut bins: Vec<Vec<u32>> = vec![Vec::new(); bw * bh];
        for (ti, tri) in tris.iter().enumerate() {
            let Some(tri) = tri else { continue };
            // pixel centers sit at integer + 0.5
            let px0 = ((tri.lo[0] - 0.5).ceil().max(x0 as f64)) as i64;
            let px1 = ((tri.hi[0] - 0.5).floor().min(x1 as f64 - 1.0)) as i64;
            let py0 = ((tri.lo[1] - 0.5).ceil().max(y0 as f64)) as i64;
            let py1 = ((tri.hi[1] - 0.5).floor().min(y1 as f64 - 1.0)) as i64;
            for py in py0..=py1 {
                for px in px0..=px1 {
                    let idx = (py as usize - y0) * rw + (px as usize - x0);
                    if !covered[idx] && tri.contains([px as f64 + 0.5, py as f64 + 0.5]) {
                        covered[idx] = true;
                    }
                }
            }
            if softness > 0.0 {
                let bx0 = clampi(((tri.lo[0] - x0 as f64) / BIN as f64).floor(), bw.saturating_sub(1));
                let bx1 = clampi(((tri.hi[0] - x0 as f64) / BIN as f64).floor(), bw.saturating_sub(1));
                let by0 = clampi(((tri.lo[1] - y0 as f64) / BIN as f64).floor(), bh.saturating_sub(1));
                let by1 = clampi(((tri.hi[1] - y0 as f64) / BIN as f64).floor(), bh.saturating_sub(1));
                for by in by0..=by1 {
                    for bx in bx0..=bx1 {
                        bins[by * bw + bx].push(ti as u32);
                    }
                }
            }
        }

        if softness <= 0.0 {
            return Ok(RenderedRegion {
                x0,
                y0,
                width: rw,
                height: rh,
                occupancy: covered.iter().map(|c| if *c { 1.0 } else { 0.0 }).collect(),
            });
        }

        let covered_at = |q: [f64; 2]| -> bool {
            let bx = (q[0] - x0 as f64) / BIN as f64;
            let by = (q[1] - y0 as f64) / BIN as f64;
            if bx < 0.0 || by < 0.0 || bx >= bw as f64 || by >= bh as f64 {
                // outside the region only off-image triangles could cover; the
                // region already spans every projected triangle
                return tris.iter().flatten().any(|t| {
                    q[0] >= t.lo[0] && q[0] <= t.hi[0] && q[1] >= t.lo[1] && q[1] <= t.hi[1] && t.contains(q)
                });
            }
            bins[by as usize * bw + bx as usize].iter().any(|&ti| {
                let t = tris[ti as usize].as_ref().unwrap();
                q[0] >= t.lo[0] && q[0] <= t.hi[0] && q[1] >= t.lo[1] && q[1] <= t.hi[1] && t.contains(q)
            })
        };

        let mut dist = vec![f64::INFINITY; rw * rh];
        for e in &self.edges {
            let live = |f: Option<usize>| f.and_then(|f| tris[f].as_ref().map(|_| f));
            let (f0, f1) = (live(e.faces[0]), live(e.faces[1]));
            let candidate = match (f0, f1) {
                (None, None) => false,
                (Some(_), None) | (None, Some(_)) => true,
                (Some(a), Some(b)) => !self.consistent || (orient[a] > 0.0) != (orient[b] > 0.0),
            };
            if !candidate {
                continue;
            }
            let (Some(pa), Some(pb)) = (proj[e.a], proj[e.b]) else {
                continue;
            };
            let d = pb - pa;
            let len = d.norm();
            if len < 1e-12 {
                continue;
            }
            let n = [-d.y / len, d.x / len];
            let pieces = (len / PIECE_LEN).ceil().max(1.0) as usize;
            for i in 0..pieces {
                let t0 = i as f64 / pieces as f64;
                let t1 = (i + 1) as f64 / pieces as f64;
                let a = [pa.x + d.x * t0, pa.y + d.y * t0];
                let b = [pa.x + d.x * t1, pa.y + d.y * t1];
                if a[0].max(b[0]) + band < x0 as f64
                    || a[0].min(b[0]) - band > x1 as f64
                    || a[1].max(b[1]) + band < y0 as f64
                    || a[1].min(b[1]) - band > y1 as f64
                {
                    continue;
                }
                let m = [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5];
                let left = covered_at([m[0] + PROBE * n[0], m[1] + PROBE * n[1]]);
                let right = covered_at([m[0] - PROBE * n[0], m[1] - PROBE * n[1]]);
                if left && right {
                    continue;
                }
                let sx0 = clampi((a[0].min(b[0]) - band - 0.5).floor(), w).max(x0);
                let sx1 = clampi((a[0].max(b[0]) + band - 0.5).ceil() + 1.0, w).min(x1);
                let sy0 = clampi((a[1].min(b[1]) - band - 0.5).floor(), h).max(y0);
                let sy1 = clampi((a[1].max(b[1]) + band - 0.5).ceil() + 1.0, h).min(y1);
                for py in sy0..sy1 {
                    for px in sx0..sx1 {
                        let q = [px as f64 + 0.5, py as f64 + 0.5];
                        let dd = point_segment_distance(q, a, b);
                        let idx = (py - y0) * rw + (px - x0);
                        if dd < dist[idx] {
                            dist[idx] = dd;
                        }
                    }
                }
            }
        }

        let occupancy = covered
            .iter()
            .zip(&dist)
            .map(|(c, d)| {
                let hard = if *c { 1.0 } else { 0.0 };
                if *d >= band {
                    hard
                } else {
                    smoothstep_occupancy(if *c { *d } else { -*d }, band)
                }
            })
            .collect();
        Ok(RenderedRegion {
            x0,
            y0,
            width: rw,
            height: rh,
            occupancy,
        })
    }
}

/// Render the silhouette of `mesh` posed by `pose` through `k` into a
/// `size = (width, height)` mask. `softness = 0` gives the hard mask.
/// Triangles with any vertex at or behind the camera plane are dropped.
pub fn render_silhouette(
    mesh: &TriangleMesh,
    pose: &Pose,
    k: &CameraIntrinsics,
    size: (usize, usize),
    softness: f64,
) -> Result<MaskImage> {
    mesh.validate()?;
    let region = Rasterizer::new(mesh).render_region(&mesh.vertices, pose, k, size, softness)?;
    Ok(region.to_mask(size.0, size.1))
}

/// Target mask with a summed-area table, so the L1 loss against a rendered
/// region costs only the region's area.
#[derive(Debug, Clone)]
pub struct MaskTarget {
    mask: MaskImage,
    integral: Vec<f64>,
}

impl MaskTarget {
    pub fn new(mask: MaskImage) -> Self {
        let (w, h) = (mask.width, mask.height);
        let mut integral = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += mask.get(x, y) as f64;
                integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
            }
        }
        MaskTarget { mask, integral }
    }

    pub fn mask(&self) -> &MaskImage {
        &self.mask
    }

    pub fn size(&self) -> (usize, usize) {
        (self.mask.width, self.mask.height)
    }

    fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let w1 = self.mask.width + 1;
        self.integral[y1 * w1 + x1] - self.integral[y0 * w1 + x1] - self.integral[y1 * w1 + x0]
            + self.integral[y0 * w1 + x0]
    }

    /// `mask_l1(region.to_mask(..), target)` without materializing the image.
    pub fn l1(&self, region: &RenderedRegion) -> f64 {
        let total = self.rect_sum(0, 0, self.mask.width, self.mask.height);
        if region.width == 0 {
            return total;
        }
        let inside = self.rect_sum(
            region.x0,
            region.y0,
            region.x0 + region.width,
            region.y0 + region.height,
        );
        let mut sum = total - inside;
        for y in 0..region.height {
            let row = &region.occupancy[y * region.width..(y + 1) * region.width];
            let start = (region.y0 + y) * self.mask.width + region.x0;
            let trow = &self.mask.data[start..start + region.width];
            sum += row
                .iter()
                .zip(trow)
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .sum::<f64>();
        }
        sum
    }
}
