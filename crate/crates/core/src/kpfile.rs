//! Plain-text keypoint records: one object per record, read by the
//! translation solver and written by the auto-labeler.
//!
//! ```text
//! # comment
//! object 000012
//! intrinsics 721.5377 721.5377 609.5593 172.854
//! yaw -1.59
//! dims 3.64 1.67 1.65        # optional: 3D points are dimension-normalized
//! keypoints 2
//! 612.4 190.2 0.5 0.5 -0.5 1 1
//! 580.0 180.9 -0.5 -0.5 0.5 0.8 0.9
//! ```
//!
//! Keypoint lines are `u v x y z conf_u conf_v`. Without a `dims` line the 3D
//! points are metric object coordinates.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Dims, Pt2, Pt3};
use crate::pose_solver::{
    assemble_system, denormalize_keypoints3d, solve_translation, KeypointPair, KeypointSet, PoseSolution,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointRecord {
    pub id: String,
    pub intrinsics: CameraIntrinsics,
    pub yaw: f64,
    pub dims: Option<Dims>,
    pub keypoints: KeypointSet,
}

impl KeypointRecord {
    /// Keypoints with metric 3D coordinates.
    pub fn metric_keypoints(&self) -> Result<KeypointSet> {
        match &self.dims {
            Some(d) => denormalize_keypoints3d(&self.keypoints, d),
            None => Ok(self.keypoints.clone()),
        }
    }

    pub fn solve(&self) -> Result<PoseSolution> {
        let set = self.metric_keypoints()?;
        solve_translation(&assemble_system(&set, self.yaw, &self.intrinsics)?)
    }
}

fn fmt_floats(out: &mut String, key: &str, vals: &[f64]) {
    out.push_str(key);
    for v in vals {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

pub fn format_keypoint_records(records: &[KeypointRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "object {}", r.id);
        let k = &r.intrinsics;
        fmt_floats(&mut out, "intrinsics", &[k.fx, k.fy, k.cx, k.cy]);
        fmt_floats(&mut out, "yaw", &[r.yaw]);
        if let Some(d) = &r.dims {
            fmt_floats(&mut out, "dims", &[d.l, d.w, d.h]);
        }
        let _ = writeln!(out, "keypoints {}", r.keypoints.len());
        for kp in &r.keypoints.pairs {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {}",
                kp.p2d.x, kp.p2d.y, kp.p3d.x, kp.p3d.y, kp.p3d.z, kp.conf_u, kp.conf_v
            );
        }
    }
    out
}

type Tokens<'a> = Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a>;

struct Lines<'a> {
    inner: std::iter::Peekable<Tokens<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Tokens<'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| {
                    (
                        i + 1,
                        l.split('#').next().unwrap_or("").split_whitespace().collect::<Vec<_>>(),
                    )
                })
                .filter(|(_, toks)| !toks.is_empty()),
        );
        Lines {
            inner: it.peekable(),
            last: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.inner.next() {
            Some((n, toks)) => {
                self.last = n;
                Ok((n, toks))
            }
            None => Err(Error::malformed(
                self.last + 1,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    }

    fn peek_key(&mut self) -> Option<&'a str> {
        self.inner.peek().map(|(_, t)| t[0])
    }
}

fn floats<const N: usize>(line: usize, toks: &[&str]) -> Result<[f64; N]> {
    if toks.len() != N {
        return Err(Error::malformed(
            line,
            format!("expected {N} values, got {}", toks.len()),
        ));
    }
    let mut out = [0.0f64; N];
    for (o, t) in out.iter_mut().zip(toks) {
        *o = t
            .parse()
            .map_err(|_| Error::malformed(line, format!("not a number: {t:?}")))?;
        if !o.is_finite() {
            return Err(Error::malformed(line, format!("non-finite value {t:?}")));
        }
    }
    Ok(out)
}

fn keyed<'a>(lines: &mut Lines<'a>, key: &str) -> Result<(usize, Vec<&'a str>)> {
    let (n, toks) = lines.next(key)?;
    if toks[0] != key {
        return Err(Error::malformed(n, format!("expected `{key}`, found `{}`", toks[0])));
    }
    Ok((n, toks[1..].to_vec()))
}

pub fn parse_keypoint_records(text: &str) -> Result<Vec<KeypointRecord>> {
    let mut lines = Lines::new(text);
    let mut out = Vec::new();
    while lines.peek_key().is_some() {
        let (n, id) = keyed(&mut lines, "object")?;
        if id.len() != 1 {
            return Err(Error::malformed(n, "object id must be a single token"));
        }
        let (n, toks) = keyed(&mut lines, "intrinsics")?;
        let [fx, fy, cx, cy] = floats::<4>(n, &toks)?;
        let intrinsics = CameraIntrinsics::new(fx, fy, cx, cy).map_err(|e| Error::malformed(n, e.to_string()))?;
        let (n, toks) = keyed(&mut lines, "yaw")?;
        let [yaw] = floats::<1>(n, &toks)?;
        let dims = if lines.peek_key() == Some("dims") {
            let (n, toks) = keyed(&mut lines, "dims")?;
            let [l, w, h] = floats::<3>(n, &toks)?;
            Some(Dims::new(l, w, h).map_err(|e| Error::malformed(n, e.to_string()))?)
        } else {
            None
        };
        let (n, toks) = keyed(&mut lines, "keypoints")?;
        let count: usize = match toks.as_slice() {
            [c] => c
                .parse()
                .map_err(|_| Error::malformed(n, format!("bad keypoint count {c:?}")))?,
            _ => return Err(Error::malformed(n, "expected a keypoint count")),
        };
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, toks) = lines.next("keypoint line")?;
            let [u, v, x, y, z, cu, cv] = floats::<7>(n, &toks)?;
            pairs.push(KeypointPair {
                p2d: Pt2::new(u, v),
                p3d: Pt3::new(x, y, z),
                conf_u: cu,
                conf_v: cv,
            });
        }
        out.push(KeypointRecord {
            id: id[0].to_string(),
            intrinsics,
            yaw,
            dims,
            keypoints: KeypointSet::new(pairs),
        });
    }
    Ok(out)
}

pub fn read_keypoint_records(path: impl AsRef<Path>) -> Result<Vec<KeypointRecord>> {
    parse_keypoint_records(&std::fs::read_to_string(path)?)
}

pub fn write_keypoint_records(path: impl AsRef<Path>, records: &[KeypointRecord]) -> Result<()> {
    std::fs::write(path, format_keypoint_records(records))?;
    Ok(())
}
