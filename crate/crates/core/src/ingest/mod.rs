//! Force and keypoint streams: record types, JSON Lines wire format, and
//! alignment of keypoint frames onto the force timeline.

mod align;
mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::projection::ViewConfig;

pub use align::{align, interpolate_force, AlignedFrame, OnlineAligner, DEFAULT_REORDER_WINDOW_S, DEFAULT_STALENESS_S};
pub use wire::{
    force_to_line, keypoint_to_line, parse_force_record, parse_keypoint_record, read_force_lines,
    read_keypoint_lines, ParsedStream,
};

/// Sanity bound on the force vector magnitude; anything at or above it is a
/// corrupted record rather than a measurement.
pub const FORCE_SANITY_BOUND_N: f64 = 1000.0;

/// Rated load of the handle sensor. Readings above either bound set the
/// overload flag on the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatedLoad {
    pub force_n: f64,
    pub torque_nm: f64,
}

impl Default for RatedLoad {
    fn default() -> Self {
        Self {
            force_n: 200.0,
            torque_nm: 10.0,
        }
    }
}

impl RatedLoad {
    pub fn exceeded_by(&self, f: &[f64; 3], m: &[f64; 3]) -> bool {
        f.iter().any(|c| c.abs() > self.force_n) || m.iter().any(|c| c.abs() > self.torque_nm)
    }
}

/// One 6-axis reading in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSample {
    /// Seconds on the sensor clock.
    pub t: f64,
    /// Force in newtons.
    pub f: [f64; 3],
    /// Torque in newton-meters.
    pub m: [f64; 3],
    pub overload: bool,
}

impl ForceSample {
    pub fn new(t: f64, f: [f64; 3], m: [f64; 3], rated: &RatedLoad) -> Self {
        Self {
            t,
            f,
            m,
            overload: rated.exceeded_by(&f, &m),
        }
    }

    pub fn force_magnitude(&self) -> f64 {
        norm3(&self.f)
    }
}

pub(crate) fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// The six labelled landmarks: dog legs, head and tail, plus both ends of
/// the harness handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointName {
    LeftLeg,
    RightLeg,
    Head,
    Tail,
    Handle,
    Grip,
}

impl KeypointName {
    pub const ALL: [KeypointName; 6] = [
        KeypointName::LeftLeg,
        KeypointName::RightLeg,
        KeypointName::Head,
        KeypointName::Tail,
        KeypointName::Handle,
        KeypointName::Grip,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            KeypointName::LeftLeg => "left_leg",
            KeypointName::RightLeg => "right_leg",
            KeypointName::Head => "head",
            KeypointName::Tail => "tail",
            KeypointName::Handle => "handle",
            KeypointName::Grip => "grip",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == name)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for KeypointName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Detected (or labelled) landmark position in view pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub conf: f64,
}

/// Per-frame keypoint set; any landmark may be absent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoints([Option<Keypoint>; 6]);

impl Keypoints {
    pub fn get(&self, name: KeypointName) -> Option<Keypoint> {
        self.0[name.index()]
    }

    pub fn set(&mut self, name: KeypointName, kp: Option<Keypoint>) {
        self.0[name.index()] = kp;
    }

    pub fn iter(&self) -> impl Iterator<Item = (KeypointName, Option<Keypoint>)> + '_ {
        KeypointName::ALL.into_iter().map(|k| (k, self.get(k)))
    }
}

/// One video frame worth of keypoints, in the camera clock.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub t: f64,
    pub view: ViewConfig,
    pub kp: Keypoints,
}

/// Running counters for one input stream.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamStats {
    pub samples_seen: u64,
    pub samples_dropped: u64,
    pub rate_hz: f64,
    pub last_t: f64,
    #[serde(skip)]
    first_t: Option<f64>,
}

impl StreamStats {
    /// Counts an accepted record with timestamp `t`.
    pub fn accept(&mut self, t: f64) {
        self.samples_seen += 1;
        let accepted = self.samples_seen - self.samples_dropped;
        let first = *self.first_t.get_or_insert(t);
        if t > self.last_t || accepted == 1 {
            self.last_t = t;
        }
        let span = self.last_t - first;
        self.rate_hz = if accepted > 1 && span > 0.0 {
            (accepted - 1) as f64 / span
        } else {
            0.0
        };
    }

    /// Counts a record that arrived but could not be used.
    pub fn drop_one(&mut self) {
        self.samples_seen += 1;
        self.samples_dropped += 1;
    }
}
