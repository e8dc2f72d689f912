//! Axial handle force and the handle's bearing relative to the dog's back.
//!
//! Keypoints are lifted to rays through their perspective view, leveled with
//! the camera pitch offset and intersected with the ground plane. Bearings
//! are yaw angles in that ground frame (0 = straight ahead, positive = right).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ForceSample, KeypointFrame, KeypointName};
use crate::projection::{persp_pixel_to_ray, ray_to_ground, wrap_angle, GroundPoint};

pub type Matrix3 = [[f64; 3]; 3];

pub const IDENTITY: Matrix3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Per-handle mounting and camera placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Rotates sensor-frame vectors into the handle frame (handle axis = z).
    pub sensor_to_handle: Matrix3,
    /// +1 when handle-frame +z points toward the dog.
    pub handle_axis_sign: f64,
    pub camera_height_m: f64,
    /// Camera pitch relative to level; positive tilts the camera up.
    pub camera_pitch_offset_rad: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            sensor_to_handle: IDENTITY,
            handle_axis_sign: 1.0,
            camera_height_m: 1.5,
            camera_pitch_offset_rad: 0.0,
        }
    }
}

/// On-disk calibration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub sensor_to_handle: Matrix3,
    pub handle_axis_sign: i8,
    pub camera_height_m: f64,
    pub camera_pitch_offset_deg: f64,
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        let r = &self.sensor_to_handle;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ORTHONORMAL_TOLERANCE {
                    return Err(Error::Validation("sensor_to_handle is not orthonormal".into()));
                }
            }
        }
        if self.handle_axis_sign != 1.0 && self.handle_axis_sign != -1.0 {
            return Err(Error::Validation("handle_axis_sign must be +1 or -1".into()));
        }
        if !(self.camera_height_m.is_finite() && self.camera_height_m > 0.0) {
            return Err(Error::Validation("camera_height_m must be positive".into()));
        }
        if !self.camera_pitch_offset_rad.is_finite() {
            return Err(Error::Validation("camera pitch offset must be finite".into()));
        }
        Ok(())
    }

    pub fn from_file(file: &CalibrationFile) -> Result<Self> {
        let cal = Self {
            sensor_to_handle: file.sensor_to_handle,
            handle_axis_sign: file.handle_axis_sign as f64,
            camera_height_m: file.camera_height_m,
            camera_pitch_offset_rad: file.camera_pitch_offset_deg.to_radians(),
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn to_file(&self) -> CalibrationFile {
        CalibrationFile {
            sensor_to_handle: self.sensor_to_handle,
            handle_axis_sign: self.handle_axis_sign as i8,
            camera_height_m: self.camera_height_m,
            camera_pitch_offset_deg: self.camera_pitch_offset_rad.to_degrees(),
        }
    }

    /// Ground position of a keypoint, if it has one.
    pub fn ground_point(&self, frame: &KeypointFrame, name: KeypointName) -> Option<GroundPoint> {
        let kp = frame.kp.get(name)?;
        let ray = persp_pixel_to_ray(kp.u, kp.v, &frame.view).ok()?;
        let leveled = ray.pitched(self.camera_pitch_offset_rad);
        ray_to_ground(leveled, self.camera_height_m).ok().flatten()
    }
}

/// How much of the keypoint set backed an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Unavailable,
    Degraded,
    Full,
}

impl Quality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quality::Full => "full",
            Quality::Degraded => "degraded",
            Quality::Unavailable => "unavailable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing {
    pub yaw_rad: f64,
    pub quality: Quality,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub dog_yaw_rad: Option<f64>,
    pub handle_yaw_rad: Option<f64>,
    /// `wrap(dog_yaw - handle_yaw)` in `(-pi, pi]`.
    pub rel_angle_rad: Option<f64>,
    pub quality: Quality,
}

impl PoseEstimate {
    pub fn unavailable() -> Self {
        Self {
            dog_yaw_rad: None,
            handle_yaw_rad: None,
            rel_angle_rad: None,
            quality: Quality::Unavailable,
        }
    }
}

fn bearing(from: GroundPoint, to: GroundPoint) -> f64 {
    (to.x_m - from.x_m).atan2(to.z_m - from.z_m)
}

/// Signed push (+) / pull (-) force along the handle axis, in newtons.
pub fn axial_force(sample: &ForceSample, cal: &Calibration) -> f64 {
    let r = &cal.sensor_to_handle[2];
    cal.handle_axis_sign * (r[0] * sample.f[0] + r[1] * sample.f[1] + r[2] * sample.f[2])
}

/// Tail-to-head bearing; the leg midpoint stands in for a missing tail.
pub fn dog_body_yaw(frame: &KeypointFrame, cal: &Calibration) -> Option<Bearing> {
    let head = cal.ground_point(frame, KeypointName::Head)?;
    if let Some(tail) = cal.ground_point(frame, KeypointName::Tail) {
        return Some(Bearing {
            yaw_rad: bearing(tail, head),
            quality: Quality::Full,
        });
    }
    let left = cal.ground_point(frame, KeypointName::LeftLeg)?;
    let right = cal.ground_point(frame, KeypointName::RightLeg)?;
    let rear = GroundPoint {
        x_m: 0.5 * (left.x_m + right.x_m),
        z_m: 0.5 * (left.z_m + right.z_m),
    };
    Some(Bearing {
        yaw_rad: bearing(rear, head),
        quality: Quality::Degraded,
    })
}

/// Grip-to-handle-tip bearing.
pub fn handle_yaw(frame: &KeypointFrame, cal: &Calibration) -> Option<f64> {
    let tip = cal.ground_point(frame, KeypointName::Handle)?;
    let grip = cal.ground_point(frame, KeypointName::Grip)?;
    Some(bearing(grip, tip))
}

pub fn relative_angle(frame: &KeypointFrame, cal: &Calibration) -> PoseEstimate {
    match (dog_body_yaw(frame, cal), handle_yaw(frame, cal)) {
        (Some(dog), Some(handle)) => PoseEstimate {
            dog_yaw_rad: Some(dog.yaw_rad),
            handle_yaw_rad: Some(handle),
            rel_angle_rad: Some(wrap_angle(dog.yaw_rad - handle)),
            quality: dog.quality,
        },
        _ => PoseEstimate::unavailable(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Keypoint, Keypoints, RatedLoad};
    use crate::projection::{ground_to_ray, ray_to_persp_pixel, ViewConfig, ViewProjection};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn sample(f: [f64; 3]) -> ForceSample {
        ForceSample::new(0.0, f, [0.0; 3], &RatedLoad::default())
    }

    fn matmul(a: &Matrix3, b: &Matrix3) -> Matrix3 {
        std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
    }

    fn transpose(a: &Matrix3) -> Matrix3 {
        std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
    }

    fn apply(a: &Matrix3, v: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
    }

    fn random_rotation(rng: &mut impl Rng) -> Matrix3 {
        // unit quaternion
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|c| c / n);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Places ground points in the default view and builds a frame.
    fn frame_from_ground(points: &[(KeypointName, GroundPoint)], cal: &Calibration) -> KeypointFrame {
        let view = ViewConfig::default();
        let mut kp = Keypoints::default();
        for &(name, p) in points {
            let ray = ground_to_ray(p, cal.camera_height_m)
                .unwrap()
                .pitched(-cal.camera_pitch_offset_rad);
            match ray_to_persp_pixel(ray, &view).unwrap() {
                ViewProjection::Pixel { u, v } => {
                    assert!(view.contains(u, v), "{name} at ({u}, {v}) off-image");
                    kp.set(name, Some(Keypoint { u, v, conf: 1.0 }));
                }
                ViewProjection::BehindView => panic!("{name} behind view"),
            }
        }
        KeypointFrame { t: 0.0, view, kp }
    }

    fn gp(x_m: f64, z_m: f64) -> GroundPoint {
        GroundPoint { x_m, z_m }
    }

    #[test]
    fn axial_aligned_and_perpendicular() {
        let cal = Calibration::default();
        assert_eq!(axial_force(&sample([0.0, 0.0, 20.0]), &cal), 20.0);
        assert_eq!(axial_force(&sample([15.0, 0.0, 0.0]), &cal), 0.0);
        let flipped = Calibration {
            handle_axis_sign: -1.0,
            ..cal
        };
        assert_eq!(axial_force(&sample([0.0, 0.0, 20.0]), &flipped), -20.0);
    }

    #[test]
    fn axial_overload_passes_through() {
        let s = sample([0.0, 0.0, 250.0]);
        assert!(s.overload);
        assert_eq!(axial_force(&s, &Calibration::default()), 250.0);
    }

    #[test]
    fn axial_rotation_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            let f: [f64; 3] = std::array::from_fn(|_| rng.random_range(-40.0..40.0));
            let cal = Calibration {
                sensor_to_handle: transpose(&r),
                ..Calibration::default()
            };
            cal.validate().unwrap();
            let rotated = sample(apply(&r, f));
            assert_abs_diff_eq!(axial_force(&rotated, &cal), f[2], epsilon = 1e-9);
        }
    }

    #[test]
    fn axial_calibration_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let s_mount = random_rotation(&mut rng);
            let r = random_rotation(&mut rng);
            let f: [f64; 3] = std::array::from_fn(|_| rng.random_range(-40.0..40.0));
            let base = Calibration {
                sensor_to_handle: s_mount,
                ..Calibration::default()
            };
            let moved = Calibration {
                sensor_to_handle: matmul(&s_mount, &transpose(&r)),
                ..base
            };
            assert_abs_diff_eq!(
                axial_force(&sample(apply(&r, f)), &moved),
                axial_force(&sample(f), &base),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn calibration_validation() {
        let mut cal = Calibration::default();
        cal.sensor_to_handle[0][0] = 1.1;
        assert!(cal.validate().is_err());
        let cal = Calibration {
            camera_height_m: 0.0,
            ..Calibration::default()
        };
        assert!(cal.validate().is_err());
        let cal = Calibration {
            handle_axis_sign: 0.5,
            ..Calibration::default()
        };
        assert!(cal.validate().is_err());
    }

    #[test]
    fn dog_yaw_from_ground_points() {
        let cal = Calibration::default();
        let f = frame_from_ground(&[(KeypointName::Head, gp(0.0, 2.0)), (KeypointName::Tail, gp(0.0, 1.0))], &cal);
        let b = dog_body_yaw(&f, &cal).unwrap();
        assert_abs_diff_eq!(b.yaw_rad, 0.0, epsilon = 1e-9);
        assert_eq!(b.quality, Quality::Full);
        let f = frame_from_ground(&[(KeypointName::Head, gp(1.0, 1.0)), (KeypointName::Tail, gp(0.0, 1.0))], &cal);
        assert_abs_diff_eq!(dog_body_yaw(&f, &cal).unwrap().yaw_rad, FRAC_PI_2, epsilon = 1e-9);
    }

    #[test]
    fn dog_yaw_fallback_and_unavailable() {
        let cal = Calibration::default();
        let f = frame_from_ground(
            &[
                (KeypointName::Head, gp(0.5, 1.8)),
                (KeypointName::LeftLeg, gp(-0.2, 1.0)),
                (KeypointName::RightLeg, gp(0.2, 1.0)),
            ],
            &cal,
        );
        let b = dog_body_yaw(&f, &cal).unwrap();
        assert_eq!(b.quality, Quality::Degraded);
        assert_abs_diff_eq!(b.yaw_rad, 0.5f64.atan2(0.8), epsilon = 1e-9);
        let f = frame_from_ground(&[(KeypointName::Head, gp(0.5, 1.8)), (KeypointName::LeftLeg, gp(-0.2, 1.0))], &cal);
        assert!(dog_body_yaw(&f, &cal).is_none());
    }

    #[test]
    fn handle_yaw_cases() {
        let cal = Calibration::default();
        let f = frame_from_ground(&[(KeypointName::Handle, gp(0.0, 2.0)), (KeypointName::Grip, gp(0.0, 1.0))], &cal);
        assert_abs_diff_eq!(handle_yaw(&f, &cal).unwrap(), 0.0, epsilon = 1e-9);
        let f = frame_from_ground(&[(KeypointName::Handle, gp(-1.0, 1.0)), (KeypointName::Grip, gp(0.0, 1.0))], &cal);
        assert_abs_diff_eq!(handle_yaw(&f, &cal).unwrap(), -FRAC_PI_2, epsilon = 1e-9);
        let f = frame_from_ground(&[(KeypointName::Handle, gp(-1.0, 1.0))], &cal);
        assert!(handle_yaw(&f, &cal).is_none());
    }

    fn scene(dog_yaw: f64, handle_yaw: f64, rot: f64, with_tail: bool) -> Vec<(KeypointName, GroundPoint)> {
        let tail = gp(-0.1, 1.1);
        let head = gp(tail.x_m + 0.9 * dog_yaw.sin(), tail.z_m + 0.9 * dog_yaw.cos());
        let side = gp(0.15 * dog_yaw.cos(), -0.15 * dog_yaw.sin());
        let grip = gp(0.25, 0.5);
        let tip = gp(grip.x_m + 0.45 * handle_yaw.sin(), grip.z_m + 0.45 * handle_yaw.cos());
        let mut pts = vec![
            (KeypointName::Head, head),
            (KeypointName::LeftLeg, gp(tail.x_m - side.x_m, tail.z_m - side.z_m)),
            (KeypointName::RightLeg, gp(tail.x_m + side.x_m, tail.z_m + side.z_m)),
            (KeypointName::Handle, tip),
            (KeypointName::Grip, grip),
        ];
        if with_tail {
            pts.push((KeypointName::Tail, tail));
        }
        // rotate the whole scene about the point under the camera
        let (s, c) = rot.sin_cos();
        pts.into_iter()
            .map(|(k, p)| (k, gp(p.x_m * c + p.z_m * s, -p.x_m * s + p.z_m * c)))
            .collect()
    }

    #[test]
    fn relative_angle_examples() {
        let cal = Calibration::default();
        let est = relative_angle(&frame_from_ground(&scene(0.0, 0.0, 0.0, true), &cal), &cal);
        assert_eq!(est.quality, Quality::Full);
        assert_abs_diff_eq!(est.rel_angle_rad.unwrap(), 0.0, epsilon = 1e-9);
        let est = relative_angle(&frame_from_ground(&scene(30f64.to_radians(), 0.0, 0.0, true), &cal), &cal);
        assert_abs_diff_eq!(est.rel_angle_rad.unwrap(), 30f64.to_radians(), epsilon = 1e-9);
        let est = relative_angle(&frame_from_ground(&scene(0.2, -0.3, 0.0, false), &cal), &cal);
        assert_eq!(est.quality, Quality::Degraded);
        assert_abs_diff_eq!(est.rel_angle_rad.unwrap(), 0.5, epsilon = 1e-9);
        let mut f = frame_from_ground(&scene(0.2, -0.3, 0.0, true), &cal);
        f.kp.set(KeypointName::Grip, None);
        assert_eq!(relative_angle(&f, &cal), PoseEstimate::unavailable());
    }

    #[test]
    fn pitch_offset_is_compensated() {
        let cal = Calibration {
            camera_pitch_offset_rad: -0.1,
            camera_height_m: 1.4,
            ..Calibration::default()
        };
        let est = relative_angle(&frame_from_ground(&scene(-0.4, 0.1, 0.0, true), &cal), &cal);
        assert_abs_diff_eq!(est.rel_angle_rad.unwrap(), -0.5, epsilon = 1e-9);
    }

    #[test]
    fn relative_angle_wraps() {
        let cal = Calibration::default();
        let est = relative_angle(&frame_from_ground(&scene(FRAC_PI_2 + 0.3, -(FRAC_PI_2 - 0.05), 0.0, true), &cal), &cal);
        // raw difference pi + 0.25 lands just above -pi
        assert_abs_diff_eq!(est.rel_angle_rad.unwrap(), -PI + 0.25, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn scene_rotation_invariance(dog in -0.8..0.8f64, handle in -0.5..0.5f64, rot in -0.3..0.3f64) {
            let cal = Calibration::default();
            let a = relative_angle(&frame_from_ground(&scene(dog, handle, 0.0, true), &cal), &cal);
            let b = relative_angle(&frame_from_ground(&scene(dog, handle, rot, true), &cal), &cal);
            prop_assert!((a.rel_angle_rad.unwrap() - b.rel_angle_rad.unwrap()).abs() < 1e-9);
        }

        #[test]
        fn quality_monotone_in_availability(mask in 0u8..64) {
            let cal = Calibration::default();
            let full = frame_from_ground(&scene(0.3, 0.1, 0.0, true), &cal);
            let mut f = full.clone();
            for (i, k) in KeypointName::ALL.into_iter().enumerate() {
                if mask & (1 << i) != 0 {
                    f.kp.set(k, None);
                }
            }
            let est = relative_angle(&f, &cal);
            // dropping more keypoints never improves quality
            let mut g = f.clone();
            g.kp.set(KeypointName::Tail, None);
            prop_assert!(relative_angle(&g, &cal).quality <= est.quality);
            if est.quality == Quality::Unavailable {
                prop_assert!(est.rel_angle_rad.is_none());
            }
            if est.quality == Quality::Full {
                prop_assert!(f.kp.get(KeypointName::Tail).is_some());
            }
            if let Some(r) = est.rel_angle_rad {
                prop_assert!(r > -PI && r <= PI);
            }
        }
    }
}
