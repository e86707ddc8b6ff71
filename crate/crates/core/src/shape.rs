//! PCA-deformable vehicle template.
//!
//! A shape is the mean mesh plus a linear combination of principal
//! displacement fields, `M(s) = M0 + Σ s_k·δ_k·p_k`. Keypoints are a fixed,
//! ordered list of template vertices followed by the 8 corners and the center
//! of the mesh's axis-aligned box.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::boxes::{box_corners, Box3D};
use crate::error::{Error, Result};
use crate::geometry::{Dims, Pt3, Vec3};

pub const SHAPE_HEADER: &str = "PCA-SHAPE v1";
/// Number of box keypoints appended after the semantic ones (8 corners + center).
pub const BOX_KEYPOINTS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Pt3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() || self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let len = self.vertices.len();
        for f in &self.faces {
            for &i in f {
                if i >= len {
                    return Err(Error::IndexOutOfRange { index: i, len });
                }
            }
        }
        Ok(())
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Outward-facing normal by the right-hand rule on the face winding.
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (b - a).cross(&(c - a))
    }

    /// True when every directed edge appears at most once, i.e. adjacent faces
    /// are wound consistently.
    pub fn has_consistent_winding(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        for f in &self.faces {
            for e in 0..3 {
                if !seen.insert((f[e], f[(e + 1) % 3])) {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCoeff(pub Vec<f64>);

impl ShapeCoeff {
    pub fn zeros(r: usize) -> Self {
        ShapeCoeff(vec![0.0; r])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Ordered template vertex indices used as semantic keypoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointSpec {
    pub semantic: Vec<usize>,
}

impl KeypointSpec {
    /// Total keypoints produced by [`sample_keypoints`].
    pub fn total(&self) -> usize {
        self.semantic.len() + BOX_KEYPOINTS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeBasis {
    pub mean: TriangleMesh,
    /// Unit displacement fields, one vector per mean vertex.
    pub components: Vec<Vec<Vec3>>,
    pub sigmas: Vec<f64>,
    pub keypoints: KeypointSpec,
}

impl ShapeBasis {
    pub fn rank(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.mean.validate()?;
        let v = self.mean.vertices.len();
        if self.sigmas.len() != self.components.len() {
            return Err(Error::DimensionMismatch {
                expected: self.components.len(),
                got: self.sigmas.len(),
            });
        }
        for c in &self.components {
            if c.len() != v {
                return Err(Error::DimensionMismatch {
                    expected: v,
                    got: c.len(),
                });
            }
        }
        if let Some(s) = self.sigmas.iter().find(|s| s.is_nan() || **s <= 0.0) {
            return Err(Error::UnsupportedFormat(format!(
                "component deviation must be positive, got {s}"
            )));
        }
        for &i in &self.keypoints.semantic {
            if i >= v {
                return Err(Error::IndexOutOfRange { index: i, len: v });
            }
        }
        Ok(())
    }

    /// `δ_k·p_k` for vertex `j`: the exact derivative of vertex `j` with
    /// respect to `s_k`.
    pub fn scaled_component(&self, k: usize, j: usize) -> Vec3 {
        self.components[k][j] * self.sigmas[k]
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        parse_basis(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, format_basis(self))?;
        Ok(())
    }
}

pub fn deform(basis: &ShapeBasis, s: &ShapeCoeff) -> Result<TriangleMesh> {
    if s.len() != basis.rank() {
        return Err(Error::DimensionMismatch {
            expected: basis.rank(),
            got: s.len(),
        });
    }
    let mut vertices = basis.mean.vertices.clone();
    for ((comp, sigma), sk) in basis.components.iter().zip(&basis.sigmas).zip(&s.0) {
        let scale = sk * sigma;
        if scale == 0.0 {
            continue;
        }
        for (v, d) in vertices.iter_mut().zip(comp) {
            *v += d * scale;
        }
    }
    Ok(TriangleMesh {
        vertices,
        faces: basis.mean.faces.clone(),
    })
}

/// Axis-aligned extent of a mesh in its own frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshExtent {
    pub dims: Dims,
    /// Center of the axis-aligned box, in object coordinates.
    pub center: Pt3,
}

impl MeshExtent {
    pub fn as_box(&self) -> Box3D {
        Box3D {
            center: self.center,
            dims: self.dims,
            yaw: 0.0,
        }
    }
}

pub fn mesh_dimensions(mesh: &TriangleMesh) -> Result<MeshExtent> {
    let first = mesh.vertices.first().ok_or(Error::EmptyMesh)?;
    let (mut lo, mut hi) = (first.coords, first.coords);
    for v in &mesh.vertices[1..] {
        lo = lo.inf(&v.coords);
        hi = hi.sup(&v.coords);
    }
    let ext = hi - lo;
    Ok(MeshExtent {
        dims: Dims {
            l: ext.x,
            w: ext.z,
            h: ext.y,
        },
        center: Pt3::from((lo + hi) * 0.5),
    })
}

/// Semantic vertices in spec order, then the 8 box corners, then the box center.
pub fn sample_keypoints(mesh: &TriangleMesh, spec: &KeypointSpec) -> Result<Vec<Pt3>> {
    let len = mesh.vertices.len();
    let mut out = Vec::with_capacity(spec.total());
    for &i in &spec.semantic {
        out.push(*mesh.vertices.get(i).ok_or(Error::IndexOutOfRange { index: i, len })?);
    }
    let ext = mesh_dimensions(mesh)?;
    out.extend(box_corners(&ext.as_box()));
    out.push(ext.center);
    Ok(out)
}

pub fn normalize_keypoints(kps: &[Pt3], dims: &Dims) -> Result<Vec<Pt3>> {
    dims.validate()?;
    let axes = dims.as_axes();
    Ok(kps.iter().map(|p| Pt3::from(p.coords.component_div(&axes))).collect())
}

pub fn denormalize_points(kps: &[Pt3], dims: &Dims) -> Result<Vec<Pt3>> {
    dims.validate()?;
    let axes = dims.as_axes();
    Ok(kps.iter().map(|p| Pt3::from(p.coords.component_mul(&axes))).collect())
}

/// Move keypoints defined on one object size onto another by normalizing with
/// the source dimensions and re-scaling with the destination ones.
pub fn transfer_keypoints(kps: &[Pt3], src: &Dims, dst: &Dims) -> Result<Vec<Pt3>> {
    denormalize_points(&normalize_keypoints(kps, src)?, dst)
}

/// Multiplicative size residual: `dims = mean ⊙ exp(residual)`, residual
/// ordered `(dl, dw, dh)`.
pub fn decode_dimension_residual(residual: [f64; 3], class_mean: &Dims) -> Result<Dims> {
    class_mean.validate()?;
    Ok(Dims {
        l: class_mean.l * residual[0].exp(),
        w: class_mean.w * residual[1].exp(),
        h: class_mean.h * residual[2].exp(),
    })
}

pub fn encode_dimension_residual(dims: &Dims, class_mean: &Dims) -> Result<[f64; 3]> {
    dims.validate()?;
    class_mean.validate()?;
    Ok([
        (dims.l / class_mean.l).ln(),
        (dims.w / class_mean.w).ln(),
        (dims.h / class_mean.h).ln(),
    ])
}

// ---------------------------------------------------------------------------
// basis file format

pub fn format_basis(basis: &ShapeBasis) -> String {
    let mut out = String::new();
    let v = basis.mean.vertices.len();
    writeln!(out, "{SHAPE_HEADER}").unwrap();
    writeln!(out, "{} {} {}", v, basis.mean.faces.len(), basis.rank()).unwrap();
    for p in &basis.mean.vertices {
        writeln!(out, "{} {} {}", p.x, p.y, p.z).unwrap();
    }
    for f in &basis.mean.faces {
        writeln!(out, "{} {} {}", f[0], f[1], f[2]).unwrap();
    }
    for (comp, sigma) in basis.components.iter().zip(&basis.sigmas) {
        writeln!(out, "{sigma}").unwrap();
        for d in comp {
            writeln!(out, "{} {} {}", d.x, d.y, d.z).unwrap();
        }
    }
    writeln!(out, "{}", basis.keypoints.semantic.len()).unwrap();
    let idx: Vec<String> = basis.keypoints.semantic.iter().map(|i| i.to_string()).collect();
    writeln!(out, "{}", idx.join(" ")).unwrap();
    out
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| {
                let l = l.split('#').next().unwrap_or("");
                l.split_whitespace().map(move |t| (i + 1, t))
            })
            .collect();
        Tokens { items, pos: 0 }
    }

    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (line, tok) = *self
            .items
            .get(self.pos)
            .ok_or_else(|| Error::UnsupportedFormat(format!("unexpected end of file reading {what}")))?;
        self.pos += 1;
        tok.parse()
            .map_err(|_| Error::malformed(line, format!("cannot parse {what} from {tok:?}")))
    }

    fn point(&mut self, what: &str) -> Result<Vec3> {
        Ok(Vec3::new(self.next(what)?, self.next(what)?, self.next(what)?))
    }
}

pub fn parse_basis(text: &str) -> Result<ShapeBasis> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").trim();
    if header != SHAPE_HEADER {
        return Err(Error::UnsupportedFormat(format!(
            "expected {SHAPE_HEADER:?} header, got {header:?}"
        )));
    }
    let body = &text[text.find('\n').map(|i| i + 1).unwrap_or(text.len())..];
    let mut tok = Tokens::new(body);
    // line numbers reported relative to the whole file
    tok.items.iter_mut().for_each(|(l, _)| *l += 1);
    let nv: usize = tok.next("vertex count")?;
    let nf: usize = tok.next("face count")?;
    let r: usize = tok.next("component count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push(Pt3::from(tok.point("vertex")?));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        faces.push([tok.next("face")?, tok.next("face")?, tok.next("face")?]);
    }
    let mut components = Vec::with_capacity(r);
    let mut sigmas = Vec::with_capacity(r);
    for _ in 0..r {
        sigmas.push(tok.next("component deviation")?);
        let mut comp = Vec::with_capacity(nv);
        for _ in 0..nv {
            comp.push(tok.point("displacement")?);
        }
        components.push(comp);
    }
    let nk: usize = tok.next("keypoint count")?;
    let mut semantic = Vec::with_capacity(nk);
    for _ in 0..nk {
        semantic.push(tok.next("keypoint index")?);
    }
    if tok.pos != tok.items.len() {
        return Err(Error::malformed(tok.items[tok.pos].0, "trailing data"));
    }
    let basis = ShapeBasis {
        mean: TriangleMesh { vertices, faces },
        components,
        sigmas,
        keypoints: KeypointSpec { semantic },
    };
    basis.validate()?;
    Ok(basis)
}

// ---------------------------------------------------------------------------
// bundled synthetic basis

struct MeshBuilder {
    vertices: Vec<Pt3>,
    faces: Vec<[usize; 3]>,
}

impl MeshBuilder {
    /// Append a closed box with a regular surface grid. Returns the vertex
    /// index of each lattice point on the surface, keyed by `(i, j, k)`.
    fn add_grid_box(&mut self, lo: Vec3, hi: Vec3, seg: [usize; 3]) -> HashMap<[usize; 3], usize> {
        let mut index = HashMap::new();
        let center = (lo + hi) * 0.5;
        let pos = |ijk: [usize; 3]| {
            Pt3::new(
                lo.x + (hi.x - lo.x) * ijk[0] as f64 / seg[0] as f64,
                lo.y + (hi.y - lo.y) * ijk[1] as f64 / seg[1] as f64,
                lo.z + (hi.z - lo.z) * ijk[2] as f64 / seg[2] as f64,
            )
        };
        // each box side: fixed axis, fixed lattice value, two free axes
        for axis in 0..3 {
            let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
            for side in [0, seg[axis]] {
                for i in 0..seg[a1] {
                    for j in 0..seg[a2] {
                        let mut quad = [[0usize; 3]; 4];
                        for (q, (di, dj)) in [(0, 0), (1, 0), (1, 1), (0, 1)].into_iter().enumerate() {
                            quad[q][axis] = side;
                            quad[q][a1] = i + di;
                            quad[q][a2] = j + dj;
                        }
                        let ids: Vec<usize> = quad
                            .iter()
                            .map(|ijk| {
                                *index.entry(*ijk).or_insert_with(|| {
                                    self.vertices.push(pos(*ijk));
                                    self.vertices.len() - 1
                                })
                            })
                            .collect();
                        for tri in [[ids[0], ids[1], ids[2]], [ids[0], ids[2], ids[3]]] {
                            let (a, b, c) = (self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]);
                            let n = (b - a).cross(&(c - a));
                            let out = Pt3::from((a.coords + b.coords + c.coords) / 3.0) - Pt3::from(center);
                            if n.dot(&out) >= 0.0 {
                                self.faces.push(tri);
                            } else {
                                self.faces.push([tri[0], tri[2], tri[1]]);
                            }
                        }
                    }
                }
            }
        }
        index
    }
}

fn unit_field(field: Vec<Vec3>) -> (Vec<Vec3>, f64) {
    let norm = field.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
    (field.into_iter().map(|d| d / norm).collect(), norm)
}

/// Procedural car-like template: a body box with a cabin box on top, four
/// deformation modes (overall length, overall width, roof height, rear cabin
/// extent) and 16 semantic keypoints at the corners of the two boxes.
///
/// Object frame: x forward along the length, y down, z across the width; the
/// mean mesh's axis-aligned box is centered on the origin with dims
/// `l = 4.0, w = 1.7, h = 1.5`.
pub fn synthetic_car_basis() -> ShapeBasis {
    let mut b = MeshBuilder {
        vertices: Vec::new(),
        faces: Vec::new(),
    };
    let body_lo = Vec3::new(-2.0, -0.15, -0.85);
    let body_hi = Vec3::new(2.0, 0.75, 0.85);
    let body_seg = [16, 5, 8];
    let body = b.add_grid_box(body_lo, body_hi, body_seg);
    let body_count = b.vertices.len();
    let cab_lo = Vec3::new(-1.1, -0.75, -0.75);
    let cab_hi = Vec3::new(0.9, -0.15, 0.75);
    let cab_seg = [8, 3, 5];
    let cabin = b.add_grid_box(cab_lo, cab_hi, cab_seg);

    let corners = |map: &HashMap<[usize; 3], usize>, seg: [usize; 3]| -> Vec<usize> {
        let mut out = Vec::new();
        for j in [seg[1], 0] {
            for (i, k) in [(seg[0], 0), (seg[0], seg[2]), (0, seg[2]), (0, 0)] {
                out.push(map[&[i, j, k]]);
            }
        }
        out
    };
    let mut semantic = corners(&body, body_seg);
    semantic.extend(corners(&cabin, cab_seg));

    let is_cabin = |j: usize| j >= body_count;
    let length: Vec<Vec3> = b.vertices.iter().map(|p| Vec3::new(0.1 * p.x, 0.0, 0.0)).collect();
    let width: Vec<Vec3> = b.vertices.iter().map(|p| Vec3::new(0.0, 0.0, 0.08 * p.z)).collect();
    let roof: Vec<Vec3> = b
        .vertices
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if is_cabin(j) {
                // roof rises (negative y), cabin base fixed
                Vec3::new(0.0, -0.12 * (cab_hi.y - p.y) / (cab_hi.y - cab_lo.y), 0.0)
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    let rear: Vec<Vec3> = b
        .vertices
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if is_cabin(j) {
                Vec3::new(-0.3 * (cab_hi.x - p.x) / (cab_hi.x - cab_lo.x), 0.0, 0.0)
            } else {
                Vec3::zeros()
            }
        })
        .collect();

    let mut components = Vec::new();
    let mut sigmas = Vec::new();
    for field in [length, width, roof, rear] {
        let (unit, norm) = unit_field(field);
        components.push(unit);
        sigmas.push(norm);
    }
    ShapeBasis {
        mean: TriangleMesh {
            vertices: b.vertices,
            faces: b.faces,
        },
        components,
        sigmas,
        keypoints: KeypointSpec { semantic },
    }
}
