//! KITTI object-benchmark files: labels, calibration, velodyne scans, plus
//! binary PGM masks.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxes::Box3D;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Dims, Mat3, Pt3, Vec3};
use crate::raster::MaskImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiLabel {
    pub class: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    /// `left, top, right, bottom` in pixels.
    pub bbox: [f64; 4],
    pub dims: Dims,
    /// Bottom-center of the box in camera coordinates.
    pub location: Pt3,
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiLabel {
    /// The label's 3D box. KITTI locations sit on the bottom face; the box
    /// center is `h/2` above (toward −y).
    pub fn to_box(&self) -> Box3D {
        Box3D {
            center: self.location - Vec3::new(0.0, self.dims.h / 2.0, 0.0),
            dims: self.dims,
            yaw: self.rotation_y,
        }
    }

    pub fn from_box(class: &str, b: &Box3D, alpha: f64, bbox: [f64; 4]) -> Self {
        KittiLabel {
            class: class.to_string(),
            truncation: 0.0,
            occlusion: 0,
            alpha,
            bbox,
            dims: b.dims,
            location: b.center + Vec3::new(0.0, b.dims.h / 2.0, 0.0),
            rotation_y: b.yaw,
            score: None,
        }
    }
}

/// Parse one label line. `line_no` only labels errors.
pub fn parse_label_line_at(line: &str, line_no: usize) -> Result<KittiLabel> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 15 && f.len() != 16 {
        return Err(Error::malformed(
            line_no,
            format!("expected 15 or 16 fields, got {}", f.len()),
        ));
    }
    let num = |i: usize| -> Result<f64> {
        let v: f64 = f[i]
            .parse()
            .map_err(|_| Error::malformed(line_no, format!("field {}: not a number: {:?}", i + 1, f[i])))?;
        if !v.is_finite() {
            return Err(Error::malformed(line_no, format!("field {}: non-finite", i + 1)));
        }
        Ok(v)
    };
    let occlusion: i32 = f[2]
        .parse()
        .map_err(|_| Error::malformed(line_no, format!("field 3: not an integer: {:?}", f[2])))?;
    Ok(KittiLabel {
        class: f[0].to_string(),
        truncation: num(1)?,
        occlusion,
        alpha: num(3)?,
        bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
        dims: Dims {
            h: num(8)?,
            w: num(9)?,
            l: num(10)?,
        },
        location: Pt3::new(num(11)?, num(12)?, num(13)?),
        rotation_y: num(14)?,
        score: if f.len() == 16 { Some(num(15)?) } else { None },
    })
}

pub fn parse_label_line(line: &str) -> Result<KittiLabel> {
    parse_label_line_at(line, 1)
}

/// Whitespace-separated fields in devkit order. Floats use the shortest
/// representation that reads back to the same value.
pub fn format_label_line(l: &KittiLabel) -> String {
    let mut s = format!(
        "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
        l.class,
        l.truncation,
        l.occlusion,
        l.alpha,
        l.bbox[0],
        l.bbox[1],
        l.bbox[2],
        l.bbox[3],
        l.dims.h,
        l.dims.w,
        l.dims.l,
        l.location.x,
        l.location.y,
        l.location.z,
        l.rotation_y
    );
    if let Some(score) = l.score {
        let _ = write!(s, " {score}");
    }
    s
}

/// Label file: one object per line, blank lines skipped.
pub fn parse_labels(text: &str) -> Result<Vec<KittiLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line_at(l, i + 1))
        .collect()
}

pub fn format_labels(labels: &[KittiLabel]) -> String {
    labels.iter().map(|l| format_label_line(l) + "\n").collect()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<KittiLabel>> {
    parse_labels(&std::fs::read_to_string(path)?)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[KittiLabel]) -> Result<()> {
    std::fs::write(path, format_labels(labels))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSet {
    pub p2: [[f64; 4]; 3],
    pub r0_rect: [[f64; 3]; 3],
    pub tr_velo_to_cam: [[f64; 4]; 3],
}

impl CalibSet {
    /// Camera intrinsics `fx, fy, cx, cy` and identity extrinsics.
    pub fn from_intrinsics(k: &CameraIntrinsics) -> Self {
        CalibSet {
            p2: [[k.fx, 0.0, k.cx, 0.0], [0.0, k.fy, k.cy, 0.0], [0.0, 0.0, 1.0, 0.0]],
            r0_rect: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            tr_velo_to_cam: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        }
    }

    pub fn r0(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.r0_rect[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .p2
            .iter()
            .flatten()
            .chain(self.r0_rect.iter().flatten())
            .chain(self.tr_velo_to_cam.iter().flatten());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCalibration("non-finite entry".into()));
        }
        if self.p2[0][0].is_nan() || self.p2[0][0] <= 0.0 {
            return Err(Error::InvalidCalibration(format!(
                "P2[0][0] = {} must be positive",
                self.p2[0][0]
            )));
        }
        let r = self.r0();
        let dev = (r.transpose() * r - Mat3::identity()).abs().max();
        if dev > 1e-3 {
            return Err(Error::InvalidCalibration(format!(
                "R0_rect is not orthonormal (max deviation {dev})"
            )));
        }
        Ok(())
    }
}

fn calib_values<const N: usize>(key: &str, text: &str) -> Result<[f64; N]> {
    for (i, line) in text.lines().enumerate() {
        let Some((k, rest)) = line.split_once(':') else {
            continue;
        };
        if k.trim() != key {
            continue;
        }
        let vals: Vec<&str> = rest.split_whitespace().collect();
        if vals.len() != N {
            return Err(Error::malformed(
                i + 1,
                format!("{key}: expected {N} values, got {}", vals.len()),
            ));
        }
        let mut out = [0.0; N];
        for (o, v) in out.iter_mut().zip(&vals) {
            *o = v
                .parse()
                .map_err(|_| Error::malformed(i + 1, format!("{key}: not a number: {v:?}")))?;
        }
        return Ok(out);
    }
    Err(Error::MissingKey(key.to_string()))
}

fn rows<const C: usize>(flat: &[f64]) -> [[f64; C]; 3] {
    let mut out = [[0.0; C]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        row.copy_from_slice(&flat[i * C..(i + 1) * C]);
    }
    out
}

/// Parse a calibration file with `key: values` lines. Other keys (`P0`,
/// `Tr_imu_to_velo`, ...) are ignored.
pub fn parse_calib(text: &str) -> Result<CalibSet> {
    let p2 = calib_values::<12>("P2", text)?;
    let r0 = calib_values::<9>("R0_rect", text)?;
    let tr = calib_values::<12>("Tr_velo_to_cam", text)?;
    let c = CalibSet {
        p2: rows(&p2),
        r0_rect: rows(&r0),
        tr_velo_to_cam: rows(&tr),
    };
    c.validate()?;
    Ok(c)
}

pub fn format_calib(c: &CalibSet) -> String {
    let mut s = String::new();
    for (key, vals) in [
        ("P2", c.p2.iter().flatten().copied().collect::<Vec<_>>()),
        ("R0_rect", c.r0_rect.iter().flatten().copied().collect()),
        ("Tr_velo_to_cam", c.tr_velo_to_cam.iter().flatten().copied().collect()),
    ] {
        s.push_str(key);
        s.push(':');
        for v in vals {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s
}

pub fn read_calib(path: impl AsRef<Path>) -> Result<CalibSet> {
    parse_calib(&std::fs::read_to_string(path)?)
}

pub fn write_calib(path: impl AsRef<Path>, c: &CalibSet) -> Result<()> {
    std::fs::write(path, format_calib(c))?;
    Ok(())
}

/// Mono intrinsics from P2. Its fourth column (the stereo baseline term) is
/// dropped.
pub fn intrinsics_from_p2(c: &CalibSet) -> Result<CameraIntrinsics> {
    CameraIntrinsics::new(c.p2[0][0], c.p2[1][1], c.p2[0][2], c.p2[1][2])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    /// `x, y, z, reflectance` in the LiDAR frame.
    pub points: Vec<[f32; 4]>,
}

pub fn parse_velodyne(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::TruncatedFile(bytes.len()));
    }
    let points = bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[4 * i], c[4 * i + 1], c[4 * i + 2], c[4 * i + 3]]);
            [f(0), f(1), f(2), f(3)]
        })
        .collect();
    Ok(PointCloud { points })
}

pub fn encode_velodyne(cloud: &PointCloud) -> Vec<u8> {
    cloud
        .points
        .iter()
        .flat_map(|p| p.iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

pub fn read_velodyne(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_velodyne(&std::fs::read(path)?)
}

pub fn write_velodyne(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, encode_velodyne(cloud))?;
    Ok(())
}

/// Rectified camera coordinates: `R0_rect · Tr_velo_to_cam · [x y z 1]ᵀ`.
pub fn velo_to_camera(cloud: &PointCloud, c: &CalibSet) -> Vec<Pt3> {
    let r0 = c.r0();
    let tr = &c.tr_velo_to_cam;
    cloud
        .points
        .iter()
        .map(|p| {
            let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
            let v = Vec3::from_fn(|i, _| tr[i][0] * x + tr[i][1] * y + tr[i][2] * z + tr[i][3]);
            Pt3::from(r0 * v)
        })
        .collect()
}

/// Binary (P5) PGM with maxval ≤ 255. Pixels at or above half intensity
/// (128 of 255) read as 1.
pub fn parse_pgm(bytes: &[u8]) -> Result<MaskImage> {
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::UnsupportedFormat("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(bytes)?;
    if magic != "P5" {
        return Err(Error::UnsupportedFormat(format!(
            "expected binary PGM (P5), found {magic:?}"
        )));
    }
    let mut header = [0usize; 3];
    for h in &mut header {
        let t = token(bytes)?;
        *h = t
            .parse()
            .map_err(|_| Error::UnsupportedFormat(format!("bad PGM header value {t:?}")))?;
    }
    let [w, h, maxval] = header;
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedFormat(format!("PGM maxval {maxval} not supported")));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = bytes.get(pos + 1..).unwrap_or(&[]);
    if data.len() < w * h {
        return Err(Error::UnsupportedFormat(format!(
            "PGM raster has {} bytes, expected {}",
            data.len(),
            w * h
        )));
    }
    let cutoff = 128.0 / 255.0;
    let vals = data[..w * h]
        .iter()
        .map(|&b| if b as f64 / maxval as f64 >= cutoff { 1.0 } else { 0.0 })
        .collect();
    MaskImage::from_data(w, h, vals)
}

/// Pixels with occupancy ≥ 0.5 become 255, the rest 0.
pub fn encode_pgm(mask: &MaskImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&v| if v >= 0.5 { 255u8 } else { 0 }));
    out
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskImage> {
    parse_pgm(&std::fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &MaskImage) -> Result<()> {
    std::fs::write(path, encode_pgm(mask))?;
    Ok(())
}
