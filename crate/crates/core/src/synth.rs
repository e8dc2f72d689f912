//! Deterministic synthetic sessions with known ground truth.
//!
//! The force trace is a quiet standing period with three handle taps, then a
//! sinusoidal push/pull walking rhythm. Each stop suppresses the rhythm and
//! adds a Gaussian push pulse. Keypoints come from a stick-figure dog and
//! handle laid on the ground plane and projected into the session's
//! perspective view. Dog dimensions are plausibility constants only.

use std::f64::consts::TAU;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Calibration;
use crate::ingest::{force_to_line, keypoint_to_line, ForceSample, Keypoint, KeypointFrame, KeypointName, Keypoints, RatedLoad};
use crate::projection::{ground_to_ray, ray_to_persp_pixel, GroundPoint, ViewConfig, ViewProjection};
use crate::time_sync::TapEvent;

pub const TAP_TIMES_S: [f64; 3] = [1.0, 2.0, 3.0];
pub const TAP_PEAK_N: f64 = 20.0;
const TAP_SIGMA_S: f64 = 0.01;
/// Walking starts ramping up here, after the taps.
pub const GAIT_START_S: f64 = 5.0;
const GAIT_RAMP_S: f64 = 1.0;
/// Full width at half maximum of a stop pulse.
pub const STOP_WIDTH_S: f64 = 0.3;
/// The rhythm fades around a stop with this Gaussian sigma.
const STOP_QUIET_SIGMA_S: f64 = 0.5;

const DOG_LENGTH_M: f64 = 0.9;
const HIP_HALF_WIDTH_M: f64 = 0.15;
const TAIL_POSITION: GroundPoint = GroundPoint { x_m: -0.1, z_m: 1.1 };
const GRIP_POSITION: GroundPoint = GroundPoint { x_m: 0.25, z_m: 0.5 };
const HANDLE_LENGTH_M: f64 = 0.45;

pub const FORCE_FILE: &str = "force.jsonl";
pub const KEYPOINT_FILE: &str = "keypoints.jsonl";
pub const LABEL_FILE: &str = "keypoints_gt.jsonl";
pub const CAMERA_TAP_FILE: &str = "taps_camera.json";
pub const SENSOR_TAP_TRUTH_FILE: &str = "taps_sensor_truth.json";
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub duration_s: f64,
    pub force_rate_hz: f64,
    pub video_rate_hz: f64,
    pub cadence_hz: f64,
    pub gait_amp_n: f64,
    pub stop_times_s: Vec<f64>,
    pub stop_peak_n: f64,
    /// camera clock = sensor clock - offset
    pub clock_offset_s: f64,
    /// Piecewise-linear dog yaw, `(sensor seconds, degrees)`.
    pub dog_yaw_track: Vec<(f64, f64)>,
    pub handle_yaw_deg: f64,
    /// Gaussian sigma added to predicted keypoint pixels.
    pub keypoint_noise_px: f64,
    pub tail_drop_prob: f64,
    /// Uniform +/- jitter on camera-side tap times.
    pub tap_jitter_s: f64,
    /// Gaussian sigma on each force component.
    pub force_noise_n: f64,
    pub view: ViewConfig,
    pub camera_height_m: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            duration_s: 30.0,
            force_rate_hz: 100.0,
            video_rate_hz: 30.0,
            cadence_hz: 1.0,
            gait_amp_n: 20.0,
            stop_times_s: Vec::new(),
            stop_peak_n: 32.0,
            clock_offset_s: 0.5,
            dog_yaw_track: Vec::new(),
            handle_yaw_deg: 0.0,
            keypoint_noise_px: 0.0,
            tail_drop_prob: 0.145,
            tap_jitter_s: 0.0,
            force_noise_n: 0.0,
            view: ViewConfig::default(),
            camera_height_m: 1.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("duration_s", self.duration_s),
            ("force_rate_hz", self.force_rate_hz),
            ("video_rate_hz", self.video_rate_hz),
            ("cadence_hz", self.cadence_hz),
            ("camera_height_m", self.camera_height_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(t) = self.stop_times_s.iter().find(|t| !(0.0..=self.duration_s).contains(*t)) {
            return Err(Error::Validation(format!(
                "stop time {t} s lies outside the {} s session",
                self.duration_s
            )));
        }
        if !(0.0..=1.0).contains(&self.tail_drop_prob) {
            return Err(Error::Validation("tail_drop_prob must lie in [0, 1]".into()));
        }
        for (name, v) in [
            ("keypoint_noise_px", self.keypoint_noise_px),
            ("tap_jitter_s", self.tap_jitter_s),
            ("force_noise_n", self.force_noise_n),
            ("gait_amp_n", self.gait_amp_n),
            ("stop_peak_n", self.stop_peak_n),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.dog_yaw_track.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Validation("dog_yaw_track times must increase".into()));
        }
        self.view.validate()
    }

    /// Dog yaw in degrees at sensor time `t`, held constant past the ends.
    pub fn dog_yaw_deg(&self, t: f64) -> f64 {
        let track = &self.dog_yaw_track;
        match track.len() {
            0 => 0.0,
            _ if t <= track[0].0 => track[0].1,
            _ if t >= track[track.len() - 1].0 => track[track.len() - 1].1,
            _ => {
                let i = track.partition_point(|p| p.0 <= t);
                let (a, b) = (track[i - 1], track[i]);
                a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
            }
        }
    }

    /// Noise-free axial force at sensor time `t`.
    pub fn axial_force(&self, t: f64) -> f64 {
        let ramp = ((t - GAIT_START_S) / GAIT_RAMP_S).clamp(0.0, 1.0);
        let ramp = 0.5 - 0.5 * (std::f64::consts::PI * ramp).cos();
        let quiet: f64 = self
            .stop_times_s
            .iter()
            .map(|s| 1.0 - (-((t - s) / STOP_QUIET_SIGMA_S).powi(2) / 2.0).exp())
            .product();
        let gait = self.gait_amp_n * ramp * quiet * (TAU * self.cadence_hz * (t - GAIT_START_S)).sin();
        let stop_sigma = STOP_WIDTH_S / (8.0 * std::f64::consts::LN_2).sqrt();
        let stops: f64 = self
            .stop_times_s
            .iter()
            .map(|s| self.stop_peak_n * (-((t - s) / stop_sigma).powi(2) / 2.0).exp())
            .sum();
        let taps: f64 = TAP_TIMES_S
            .iter()
            .map(|c| TAP_PEAK_N * (-((t - c) / TAP_SIGMA_S).powi(2) / 2.0).exp())
            .sum();
        gait + stops + taps
    }

    /// Ground-plane scene at sensor time `t`.
    pub fn scene(&self, t: f64) -> [(KeypointName, GroundPoint); 6] {
        let dog = self.dog_yaw_deg(t).to_radians();
        let handle = self.handle_yaw_deg.to_radians();
        let tail = TAIL_POSITION;
        let head = GroundPoint {
            x_m: tail.x_m + DOG_LENGTH_M * dog.sin(),
            z_m: tail.z_m + DOG_LENGTH_M * dog.cos(),
        };
        let (px, pz) = (HIP_HALF_WIDTH_M * dog.cos(), -HIP_HALF_WIDTH_M * dog.sin());
        let grip = GRIP_POSITION;
        let tip = GroundPoint {
            x_m: grip.x_m + HANDLE_LENGTH_M * handle.sin(),
            z_m: grip.z_m + HANDLE_LENGTH_M * handle.cos(),
        };
        [
            (KeypointName::LeftLeg, GroundPoint { x_m: tail.x_m - px, z_m: tail.z_m - pz }),
            (KeypointName::RightLeg, GroundPoint { x_m: tail.x_m + px, z_m: tail.z_m + pz }),
            (KeypointName::Head, head),
            (KeypointName::Tail, tail),
            (KeypointName::Handle, tip),
            (KeypointName::Grip, grip),
        ]
    }

    pub fn calibration(&self) -> Calibration {
        Calibration {
            camera_height_m: self.camera_height_m,
            ..Calibration::default()
        }
    }
}

/// Values an end-to-end run should recover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub clock_offset_s: f64,
    pub cadence_hz: f64,
    pub gait_amp_n: f64,
    pub stop_times_s: Vec<f64>,
    pub stop_peak_n: f64,
    pub tap_times_s: Vec<f64>,
    pub handle_yaw_deg: f64,
    /// `[sensor seconds, dog yaw degrees]`
    pub yaw_track: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub force: Vec<ForceSample>,
    /// Detector-style keypoints (noise, dropped tails).
    pub keypoints: Vec<KeypointFrame>,
    /// Exact projections, every keypoint present.
    pub labels: Vec<KeypointFrame>,
    pub camera_taps: Vec<TapEvent>,
    pub sensor_taps: Vec<TapEvent>,
    pub truth: GroundTruth,
    pub calibration: Calibration,
}

fn project(point: GroundPoint, cal: &Calibration, view: &ViewConfig) -> Option<(f64, f64)> {
    let ray = ground_to_ray(point, cal.camera_height_m).ok()?.pitched(-cal.camera_pitch_offset_rad);
    match ray_to_persp_pixel(ray, view).ok()? {
        ViewProjection::Pixel { u, v } if view.contains(u, v) => Some((u, v)),
        _ => None,
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rated = RatedLoad::default();
    let force_noise = Normal::new(0.0, spec.force_noise_n).expect("non-negative sigma");
    let px_noise = Normal::new(0.0, spec.keypoint_noise_px).expect("non-negative sigma");

    let n_force = (spec.duration_s * spec.force_rate_hz).round() as usize;
    let force = (0..n_force)
        .map(|i| {
            let t = i as f64 / spec.force_rate_hz;
            let mut f = [0.0, 0.0, spec.axial_force(t)];
            for c in &mut f {
                *c += force_noise.sample(&mut rng);
            }
            ForceSample::new(t, f, [0.0; 3], &rated)
        })
        .collect();

    let cal = spec.calibration();
    let view = spec.view;
    let size = view.size();
    let mut keypoints = Vec::new();
    let mut labels = Vec::new();
    let first = (-spec.clock_offset_s * spec.video_rate_hz).ceil().max(0.0) as usize;
    for j in first.. {
        let t_cam = j as f64 / spec.video_rate_hz;
        let t_sensor = t_cam + spec.clock_offset_s;
        if t_sensor >= spec.duration_s {
            break;
        }
        let mut truth_kp = Keypoints::default();
        let mut pred_kp = Keypoints::default();
        for (name, point) in spec.scene(t_sensor) {
            let du = px_noise.sample(&mut rng);
            let dv = px_noise.sample(&mut rng);
            let drop = rng.random::<f64>() < spec.tail_drop_prob;
            let Some((u, v)) = project(point, &cal, &view) else {
                continue;
            };
            truth_kp.set(name, Some(Keypoint { u, v, conf: 1.0 }));
            if name == KeypointName::Tail && drop {
                continue;
            }
            let clamp = |x: f64| x.clamp(0.0, size - 1e-6);
            pred_kp.set(
                name,
                Some(Keypoint {
                    u: clamp(u + du),
                    v: clamp(v + dv),
                    conf: 1.0,
                }),
            );
        }
        keypoints.push(KeypointFrame { t: t_cam, view, kp: pred_kp });
        labels.push(KeypointFrame { t: t_cam, view, kp: truth_kp });
    }

    let sensor_taps: Vec<TapEvent> = TAP_TIMES_S
        .iter()
        .map(|&t| TapEvent { t, magnitude: TAP_PEAK_N })
        .collect();
    let camera_taps = TAP_TIMES_S
        .iter()
        .map(|&t| {
            let jitter = if spec.tap_jitter_s > 0.0 {
                rng.random_range(-spec.tap_jitter_s..=spec.tap_jitter_s)
            } else {
                0.0
            };
            TapEvent {
                t: t - spec.clock_offset_s + jitter,
                magnitude: 1.0,
            }
        })
        .collect();

    let truth = GroundTruth {
        clock_offset_s: spec.clock_offset_s,
        cadence_hz: spec.cadence_hz,
        gait_amp_n: spec.gait_amp_n,
        stop_times_s: spec.stop_times_s.clone(),
        stop_peak_n: spec.stop_peak_n,
        tap_times_s: TAP_TIMES_S.to_vec(),
        handle_yaw_deg: spec.handle_yaw_deg,
        yaw_track: if spec.dog_yaw_track.is_empty() {
            vec![[0.0, 0.0]]
        } else {
            spec.dog_yaw_track.iter().map(|&(t, d)| [t, d]).collect()
        },
    };
    Ok(SynthOutput {
        force,
        keypoints,
        labels,
        camera_taps,
        sensor_taps,
        truth,
        calibration: cal,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_lines<T>(path: &Path, items: &[T], line: impl Fn(&T) -> String) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        writeln!(w, "{}", line(item)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl SynthOutput {
    /// Writes the data files into `dir` (created if needed).
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_lines(&dir.join(FORCE_FILE), &self.force, force_to_line)?;
        write_lines(&dir.join(KEYPOINT_FILE), &self.keypoints, keypoint_to_line)?;
        write_lines(&dir.join(LABEL_FILE), &self.labels, keypoint_to_line)?;
        write_file(&dir.join(CAMERA_TAP_FILE), pretty(&self.camera_taps).as_bytes())?;
        write_file(&dir.join(SENSOR_TAP_TRUTH_FILE), pretty(&self.sensor_taps).as_bytes())?;
        write_file(&dir.join(TRUTH_FILE), pretty(&self.truth).as_bytes())?;
        write_file(
            &dir.join(crate::session::CALIBRATION_FILE),
            pretty(&self.calibration.to_file()).as_bytes(),
        )
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}
