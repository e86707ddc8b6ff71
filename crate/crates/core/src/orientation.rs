//! Multi-Bin encoding of the local observation angle and conversion between
//! the local angle and global yaw.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec3};

pub const BIN_COUNT: usize = 8;
pub const BIN_WIDTH: f64 = 2.0 * PI / BIN_COUNT as f64;

/// Bin index plus in-bin residual. Bin `k` is centered on `k·π/4`; the
/// residual lies in `(−π/8, π/8]`, so an angle exactly on a boundary goes to
/// the bin whose center is below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiBinCode {
    pub bin_index: usize,
    pub residual: f64,
}

pub fn bin_center(bin: usize) -> f64 {
    bin as f64 * BIN_WIDTH
}

pub fn encode_alpha(alpha: f64) -> MultiBinCode {
    let a = wrap_angle(alpha);
    let half = BIN_WIDTH / 2.0;
    let x = a / BIN_WIDTH;
    let mut bin = (x - 0.5).ceil().rem_euclid(BIN_COUNT as f64) as usize % BIN_COUNT;
    let mut residual = wrap_angle(a - bin_center(bin));
    // ceil on x − 0.5 and the wrap can each miss the half-open edge by an ulp
    if residual <= -half {
        bin = (bin + BIN_COUNT - 1) % BIN_COUNT;
        residual = wrap_angle(a - bin_center(bin));
    } else if residual > half + 1e-12 {
        bin = (bin + 1) % BIN_COUNT;
        residual = wrap_angle(a - bin_center(bin));
    }
    let residual = residual.min(half);
    MultiBinCode {
        bin_index: bin,
        residual,
    }
}

pub fn decode_alpha(code: &MultiBinCode) -> Result<f64> {
    if code.bin_index >= BIN_COUNT {
        return Err(Error::InvalidBin(code.bin_index));
    }
    Ok(wrap_angle(bin_center(code.bin_index) + code.residual))
}

fn ray_angle(t: &Vec3) -> Result<f64> {
    if t.x == 0.0 && t.z == 0.0 {
        return Err(Error::DegenerateRay);
    }
    Ok(t.x.atan2(t.z))
}

/// Global yaw from the local angle and the object position: `ry = α + atan2(Tx, Tz)`.
pub fn alpha_to_yaw(alpha: f64, t: &Vec3) -> Result<f64> {
    Ok(wrap_angle(alpha + ray_angle(t)?))
}

pub fn yaw_to_alpha(ry: f64, t: &Vec3) -> Result<f64> {
    Ok(wrap_angle(ry - ray_angle(t)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn angle_diff(a: f64, b: f64) -> f64 {
        wrap_angle(a - b).abs()
    }

    #[test]
    fn zero_is_bin_zero() {
        assert_eq!(
            encode_alpha(0.0),
            MultiBinCode {
                bin_index: 0,
                residual: 0.0
            }
        );
        assert_eq!(
            decode_alpha(&MultiBinCode {
                bin_index: 0,
                residual: 0.0
            })
            .unwrap(),
            0.0
        );
    }

    #[test]
    fn minus_pi_is_bin_four() {
        let c = encode_alpha(-PI);
        assert_eq!(c.bin_index, 4);
        assert!(c.residual.abs() < 1e-15);
        let a = decode_alpha(&MultiBinCode {
            bin_index: 4,
            residual: 0.0,
        })
        .unwrap();
        assert_eq!(a, -PI);
    }

    #[test]
    fn just_past_first_boundary() {
        let c = encode_alpha(PI / 8.0 + 1e-3);
        assert_eq!(c.bin_index, 1);
        assert!((c.residual - (-PI / 8.0 + 1e-3)).abs() < 1e-12);
    }

    #[test]
    fn boundary_goes_to_bin_below() {
        let c = encode_alpha(PI / 8.0);
        assert_eq!(c.bin_index, 0);
        assert!((c.residual - PI / 8.0).abs() < 1e-15);
        let c = encode_alpha(3.0 * PI / 8.0);
        assert_eq!(c.bin_index, 1);
    }

    #[test]
    fn invalid_bin() {
        assert!(matches!(
            decode_alpha(&MultiBinCode {
                bin_index: 8,
                residual: 0.0
            }),
            Err(Error::InvalidBin(8))
        ));
    }

    /// Scan [−π, π) and check each code picks the nearest center by brute
    /// force over all eight bins.
    #[test]
    fn exhaustive_nearest_center() {
        let n = 20_000;
        for i in 0..n {
            let a = -PI + 2.0 * PI * (i as f64) / n as f64;
            let c = encode_alpha(a);
            let best = (0..BIN_COUNT)
                .map(|b| angle_diff(a, bin_center(b)))
                .fold(f64::INFINITY, f64::min);
            assert!(angle_diff(a, bin_center(c.bin_index)) <= best + 1e-12);
            assert!(c.residual > -PI / 8.0 && c.residual <= PI / 8.0 + 1e-15, "{a} {c:?}");
        }
    }

    #[test]
    fn yaw_examples() {
        let y = alpha_to_yaw(0.5, &Vec3::new(0.0, 1.7, 10.0)).unwrap();
        assert!((y - 0.5).abs() < 1e-15);
        let y = alpha_to_yaw(0.0, &Vec3::new(10.0, 1.7, 10.0)).unwrap();
        assert!((y - PI / 4.0).abs() < 1e-15);
        assert!(matches!(
            alpha_to_yaw(0.0, &Vec3::new(0.0, 3.0, 0.0)),
            Err(Error::DegenerateRay)
        ));
    }

    proptest! {
        #[test]
        fn round_trip(a in -50.0f64..50.0) {
            let back = decode_alpha(&encode_alpha(a)).unwrap();
            prop_assert!(angle_diff(back, a) < 1e-12);
        }

        #[test]
        fn yaw_alpha_inverse(a in -3.2f64..3.2, x in -50.0f64..50.0, z in -80.0f64..80.0) {
            prop_assume!(x.hypot(z) > 1e-6);
            let t = Vec3::new(x, 1.0, z);
            let back = yaw_to_alpha(alpha_to_yaw(a, &t).unwrap(), &t).unwrap();
            prop_assert!(angle_diff(back, a) < 1e-12);
        }
    }
}
