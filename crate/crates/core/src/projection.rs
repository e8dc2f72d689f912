//! Geometry between equirectangular panoramas, virtual pinhole views, unit
//! rays and the ground plane.
//!
//! Camera frame: x right, y up, z forward. An equirectangular pixel at
//! `u = W/2, v = H/2` looks straight forward; yaw grows with `u` and pitch
//! shrinks with `v`. Pixel coordinates are continuous with the image center
//! at `(W/2, H/2)` and no half-pixel offset.
//!
//! At the poles the equirectangular `u` is meaningless. `ray_to_equirect_pixel`
//! returns `v = 0` (zenith) or `v = H` (nadir) with `u = W/2`; callers must not
//! rely on the pole `u`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square size of the perspective crops fed to the keypoint detector.
pub const DEFAULT_VIEW_SIZE_PX: u32 = 416;

/// Rays flatter than this (|dy| below it) never reach the ground.
pub const GROUND_GRAZING_EPS: f64 = 1e-6;

const UNIT_TOLERANCE: f64 = 1e-9;

/// Size of a full-sphere equirectangular image (`width = 2 * height`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquirectDims {
    width_px: u32,
    height_px: u32,
}

impl EquirectDims {
    pub fn new(width_px: u32, height_px: u32) -> Result<Self> {
        if height_px == 0 || width_px != 2 * height_px {
            return Err(Error::Config(format!(
                "equirectangular image must be 2:1 and non-empty, got {width_px}x{height_px}"
            )));
        }
        Ok(Self {
            width_px,
            height_px,
        })
    }

    pub fn width(&self) -> f64 {
        self.width_px as f64
    }

    pub fn height(&self) -> f64 {
        self.height_px as f64
    }
}

/// A square virtual pinhole camera carved out of the sphere.
///
/// The view looks along yaw/pitch in the same convention as the
/// equirectangular mapping. Vertical and horizontal fov are equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewConfig {
    pub yaw_rad: f64,
    pub pitch_rad: f64,
    pub hfov_rad: f64,
    pub size_px: u32,
}

impl Default for ViewConfig {
    /// Lower-front crop: straight ahead, 45 degrees down, 90 degree fov.
    fn default() -> Self {
        Self {
            yaw_rad: 0.0,
            pitch_rad: -PI / 4.0,
            hfov_rad: FRAC_PI_2,
            size_px: DEFAULT_VIEW_SIZE_PX,
        }
    }
}

impl ViewConfig {
    pub fn from_degrees(yaw_deg: f64, pitch_deg: f64, hfov_deg: f64, size_px: u32) -> Result<Self> {
        let view = Self {
            yaw_rad: wrap_angle(yaw_deg.to_radians()),
            pitch_rad: pitch_deg.to_radians(),
            hfov_rad: hfov_deg.to_radians(),
            size_px,
        };
        view.validate()?;
        Ok(view)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hfov_rad.is_finite() && self.hfov_rad > 0.0 && self.hfov_rad < PI) {
            return Err(Error::Config(format!(
                "horizontal fov must lie in (0, 180) degrees, got {}",
                self.hfov_rad.to_degrees()
            )));
        }
        // tan(hfov/2) underflowing to zero would turn pixel scaling into NaN.
        if (self.hfov_rad / 2.0).tan() <= f64::EPSILON {
            return Err(Error::Config("horizontal fov too small".into()));
        }
        if !(self.pitch_rad.is_finite() && self.pitch_rad.abs() <= FRAC_PI_2) {
            return Err(Error::Config(format!(
                "view pitch must lie in [-90, 90] degrees, got {}",
                self.pitch_rad.to_degrees()
            )));
        }
        if !self.yaw_rad.is_finite() {
            return Err(Error::Config("view yaw must be finite".into()));
        }
        if self.size_px == 0 {
            return Err(Error::Config("view size must be positive".into()));
        }
        Ok(())
    }

    pub fn size(&self) -> f64 {
        self.size_px as f64
    }

    /// Direction of the optical axis.
    pub fn direction(&self) -> Ray {
        let (sp, cp) = self.pitch_rad.sin_cos();
        let (sy, cy) = self.yaw_rad.sin_cos();
        Ray {
            dx: cp * sy,
            dy: sp,
            dz: cp * cy,
        }
    }

    fn focal_scale(&self) -> f64 {
        (self.hfov_rad / 2.0).tan()
    }

    /// Whether a pixel lies inside the image (`0 <= u, v < size`).
    pub fn contains(&self, u: f64, v: f64) -> bool {
        let s = self.size();
        (0.0..s).contains(&u) && (0.0..s).contains(&v)
    }
}

// Radians internally, degrees on the wire.
impl Serialize for ViewConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ViewConfig", 4)?;
        st.serialize_field("yaw_deg", &self.yaw_rad.to_degrees())?;
        st.serialize_field("pitch_deg", &self.pitch_rad.to_degrees())?;
        st.serialize_field("hfov_deg", &self.hfov_rad.to_degrees())?;
        st.serialize_field("size_px", &self.size_px)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for ViewConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            yaw_deg: f64,
            pitch_deg: f64,
            hfov_deg: f64,
            size_px: u32,
        }
        let w = Wire::deserialize(d)?;
        ViewConfig::from_degrees(w.yaw_deg, w.pitch_deg, w.hfov_deg, w.size_px).map_err(serde::de::Error::custom)
    }
}

/// Unit direction in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Ray {
    /// Normalizes `(dx, dy, dz)`; rejects zero-length or non-finite input.
    pub fn normalized(dx: f64, dy: f64, dz: f64) -> Result<Self> {
        let n = (dx * dx + dy * dy + dz * dz).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Domain(format!(
                "cannot normalize ray ({dx}, {dy}, {dz})"
            )));
        }
        Ok(Self {
            dx: dx / n,
            dy: dy / n,
            dz: dz / n,
        })
    }

    pub fn norm(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy + self.dz * self.dz).sqrt()
    }

    fn require_unit(&self) -> Result<()> {
        let n = self.norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE || !n.is_finite() {
            return Err(Error::Domain(format!("ray is not unit length (|r| = {n})")));
        }
        Ok(())
    }

    /// Rotation about the x axis that lifts forward (+z) toward up (+y) by `pitch`.
    pub fn pitched(&self, pitch: f64) -> Ray {
        let (s, c) = pitch.sin_cos();
        Ray {
            dx: self.dx,
            dy: self.dy * c + self.dz * s,
            dz: -self.dy * s + self.dz * c,
        }
    }

    /// Rotation about the y axis that turns forward (+z) toward right (+x) by `yaw`.
    pub fn yawed(&self, yaw: f64) -> Ray {
        let (s, c) = yaw.sin_cos();
        Ray {
            dx: self.dx * c + self.dz * s,
            dy: self.dy,
            dz: -self.dx * s + self.dz * c,
        }
    }
}

/// Point on the ground plane under a gravity-leveled camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPoint {
    pub x_m: f64,
    pub z_m: f64,
}

/// Outcome of projecting a ray into a perspective view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViewProjection {
    Pixel { u: f64, v: f64 },
    BehindView,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

pub fn equirect_pixel_to_ray(u: f64, v: f64, dims: EquirectDims) -> Result<Ray> {
    let (w, h) = (dims.width(), dims.height());
    if !(0.0..w).contains(&u) || !(0.0..h).contains(&v) {
        return Err(Error::Domain(format!(
            "pixel ({u}, {v}) outside {w}x{h} equirectangular image"
        )));
    }
    let yaw = TAU * (u / w - 0.5);
    let pitch = PI * (0.5 - v / h);
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Ok(Ray {
        dx: cp * sy,
        dy: sp,
        dz: cp * cy,
    })
}

pub fn ray_to_equirect_pixel(ray: Ray, dims: EquirectDims) -> Result<(f64, f64)> {
    let r = Ray::normalized(ray.dx, ray.dy, ray.dz)?;
    let (w, h) = (dims.width(), dims.height());
    let horizontal = r.dx.hypot(r.dz);
    let pitch = r.dy.atan2(horizontal);
    // atan2(0, 0) = 0 puts pole rays at u = W/2.
    let yaw = r.dx.atan2(r.dz);
    let mut u = w * (yaw / TAU + 0.5);
    if u >= w {
        u -= w;
    }
    let v = h * (0.5 - pitch / PI);
    Ok((u, v))
}

pub fn persp_pixel_to_ray(u: f64, v: f64, view: &ViewConfig) -> Result<Ray> {
    view.validate()?;
    if !view.contains(u, v) {
        return Err(Error::Domain(format!(
            "pixel ({u}, {v}) outside {0}x{0} view",
            view.size_px
        )));
    }
    let half = view.size() / 2.0;
    let scale = view.focal_scale();
    let xn = (u - half) / half * scale;
    let yn = -(v - half) / half * scale;
    let local = Ray::normalized(xn, yn, 1.0)?;
    Ok(local.pitched(view.pitch_rad).yawed(view.yaw_rad))
}

pub fn ray_to_persp_pixel(ray: Ray, view: &ViewConfig) -> Result<ViewProjection> {
    view.validate()?;
    let r = Ray::normalized(ray.dx, ray.dy, ray.dz)?;
    let local = r.yawed(-view.yaw_rad).pitched(-view.pitch_rad);
    if local.dz <= 0.0 {
        return Ok(ViewProjection::BehindView);
    }
    let half = view.size() / 2.0;
    let scale = view.focal_scale();
    let u = half + local.dx / local.dz / scale * half;
    let v = half - local.dy / local.dz / scale * half;
    Ok(ViewProjection::Pixel { u, v })
}

/// Intersects a leveled camera ray with the ground `camera_height_m` below.
///
/// Returns `Ok(None)` for rays that do not point down by more than
/// [`GROUND_GRAZING_EPS`].
pub fn ray_to_ground(ray: Ray, camera_height_m: f64) -> Result<Option<GroundPoint>> {
    if !(camera_height_m.is_finite() && camera_height_m > 0.0) {
        return Err(Error::Config(format!(
            "camera height must be positive, got {camera_height_m}"
        )));
    }
    ray.require_unit()?;
    if ray.dy >= -GROUND_GRAZING_EPS {
        return Ok(None);
    }
    let t = camera_height_m / -ray.dy;
    Ok(Some(GroundPoint {
        x_m: t * ray.dx,
        z_m: t * ray.dz,
    }))
}

/// Ray from a leveled camera toward a ground point.
pub fn ground_to_ray(point: GroundPoint, camera_height_m: f64) -> Result<Ray> {
    Ray::normalized(point.x_m, -camera_height_m, point.z_m)
}
