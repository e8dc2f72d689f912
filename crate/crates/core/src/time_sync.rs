//! Clock alignment from handle taps.
//!
//! The trainer raps the handle a few times at the start of a session. Those
//! raps show up as sharp peaks in the force magnitude and as events in the
//! video timeline; matching the two event lists gives the camera-to-sensor
//! clock mapping.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::ingest::ForceSample;

pub const DEFAULT_TAP_THRESHOLD_N: f64 = 5.0;
pub const DEFAULT_REFRACTORY_S: f64 = 0.2;
pub const DEFAULT_MAX_OFFSET_S: f64 = 10.0;

/// Width of the centered rolling-median baseline.
pub const BASELINE_WINDOW_S: f64 = 2.0;

/// A camera tap and a sensor tap pair up only if they agree to within this
/// once the candidate offset is applied.
pub const MATCH_GATE_S: f64 = 0.1;

/// Significance level of the test that decides whether a fitted drift is
/// kept or the clocks are treated as running at the same rate.
pub const DRIFT_SIGNIFICANCE: f64 = 0.01;

pub const DRIFT_BAND: (f64, f64) = (0.99, 1.01);

/// Shortest camera-time span of matched taps over which a drift is fitted.
/// Below it, tap-time errors up to [`MATCH_GATE_S`] could pass for a drift
/// anywhere in [`DRIFT_BAND`].
pub const MIN_DRIFT_SPAN_S: f64 = MATCH_GATE_S / (DRIFT_BAND.1 - 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapEvent {
    pub t: f64,
    #[serde(rename = "mag")]
    pub magnitude: f64,
}

/// `t_sensor = drift * t_camera + offset_s`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMapping {
    pub offset_s: f64,
    pub drift: f64,
    pub residual_rms_s: f64,
}

impl TimeMapping {
    pub fn new(offset_s: f64, drift: f64) -> Self {
        Self {
            offset_s,
            drift,
            residual_rms_s: 0.0,
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 1.0)
    }

    pub fn apply(&self, t_camera: f64) -> f64 {
        self.drift * t_camera + self.offset_s
    }

    pub fn invert(&self, t_sensor: f64) -> f64 {
        (t_sensor - self.offset_s) / self.drift
    }
}

/// Camera-clock to sensor-clock conversion.
pub fn apply_mapping(t_camera: f64, mapping: &TimeMapping) -> f64 {
    mapping.apply(t_camera)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Tap peaks in the force magnitude.
///
/// A tap is a local maximum rising more than `threshold_n` above the rolling
/// median of the surrounding [`BASELINE_WINDOW_S`]. Peaks closer than
/// `refractory_s` to a stronger one are suppressed.
pub fn detect_taps(series: &[ForceSample], threshold_n: f64, refractory_s: f64) -> Result<Vec<TapEvent>> {
    if !(threshold_n > 0.0 && refractory_s > 0.0) {
        return Err(Error::Config("tap threshold and refractory period must be positive".into()));
    }
    if let Some(w) = series.windows(2).find(|w| w[1].t < w[0].t) {
        return Err(Error::Data(format!(
            "force samples out of order: {} after {}",
            w[1].t, w[0].t
        )));
    }
    let mag: Vec<f64> = series.iter().map(ForceSample::force_magnitude).collect();
    let n = mag.len();
    let half = BASELINE_WINDOW_S / 2.0;
    let mut window = Vec::new();
    let mut candidates = Vec::new();
    for i in 0..n {
        let rises = i == 0 || mag[i] > mag[i - 1];
        let holds = i + 1 == n || mag[i] >= mag[i + 1];
        // The baseline is a median of non-negative magnitudes, so a peak
        // must already clear the threshold on its own.
        if !(rises && holds && mag[i] > threshold_n) {
            continue;
        }
        let t = series[i].t;
        let lo = series.partition_point(|s| s.t < t - half);
        let hi = series.partition_point(|s| s.t <= t + half);
        window.clear();
        window.extend_from_slice(&mag[lo..hi]);
        let rise = mag[i] - median(&mut window);
        if rise > threshold_n {
            candidates.push(TapEvent { t, magnitude: rise });
        }
    }
    candidates.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.t.total_cmp(&b.t)));
    let mut taps: Vec<TapEvent> = Vec::new();
    for c in candidates {
        if taps.iter().all(|k| (k.t - c.t).abs() >= refractory_s) {
            taps.push(c);
        }
    }
    taps.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(taps)
}

/// One-to-one pairing at a trial offset: closest pairs first, each within
/// [`MATCH_GATE_S`]. Returns `(camera_idx, sensor_idx)` pairs.
fn match_at(camera: &[f64], sensor: &[f64], offset: f64) -> Vec<(usize, usize)> {
    let mut options: Vec<(f64, usize, usize)> = Vec::new();
    for (i, c) in camera.iter().enumerate() {
        for (j, s) in sensor.iter().enumerate() {
            let r = (s - c - offset).abs();
            if r <= MATCH_GATE_S {
                options.push((r, i, j));
            }
        }
    }
    options.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut cam_used = vec![false; camera.len()];
    let mut sen_used = vec![false; sensor.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in options {
        if !cam_used[i] && !sen_used[j] {
            cam_used[i] = true;
            sen_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Least-squares slope with a t-test against unit slope. Returns the slope
/// when it differs from 1 significantly, otherwise 1.
fn fit_drift(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mc = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let ms = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mc).powi(2)).sum();
    if sxx <= 0.0 {
        return 1.0;
    }
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mc) * (p.1 - ms)).sum();
    let slope = sxy / sxx;
    if (slope - 1.0).abs() < 1e-12 {
        return 1.0;
    }
    let intercept = ms - slope * mc;
    let rss: f64 = pairs.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let dof = n - 2.0;
    let se = (rss / dof / sxx).sqrt();
    // Rounding-level residuals make any slope change significant.
    let scale = pairs.iter().map(|p| p.1.abs()).fold(1.0, f64::max);
    if se <= 1e-12 * scale {
        return slope;
    }
    let critical = StudentsT::new(0.0, 1.0, dof)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - DRIFT_SIGNIFICANCE / 2.0);
    if ((slope - 1.0) / se).abs() > critical {
        slope
    } else {
        1.0
    }
}

/// Camera-to-sensor clock mapping from two tap lists.
///
/// Every camera/sensor pair within `max_offset_s` proposes an offset; the
/// proposal that pairs up the most taps wins (ties: smallest total residual,
/// then smallest offset). With three or more pairs spanning at least
/// [`MIN_DRIFT_SPAN_S`] a drift is fitted and kept only if statistically
/// distinguishable from 1. The offset is the median of
/// `sensor - drift * camera` over the matched pairs.
pub fn estimate_mapping(camera_taps: &[TapEvent], sensor_taps: &[TapEvent], max_offset_s: f64) -> Result<TimeMapping> {
    if camera_taps.len() < 2 || sensor_taps.len() < 2 {
        return Err(Error::InsufficientEvents {
            camera: camera_taps.len(),
            sensor: sensor_taps.len(),
        });
    }
    let mut camera: Vec<f64> = camera_taps.iter().map(|e| e.t).collect();
    let mut sensor: Vec<f64> = sensor_taps.iter().map(|e| e.t).collect();
    camera.sort_by(f64::total_cmp);
    sensor.sort_by(f64::total_cmp);

    // (pair count, cost, offset, pairs)
    type Candidate = (usize, f64, f64, Vec<(usize, usize)>);
    let mut best: Option<Candidate> = None;
    for c in &camera {
        for s in &sensor {
            let offset = s - c;
            if offset.abs() > max_offset_s {
                continue;
            }
            let pairs = match_at(&camera, &sensor, offset);
            let cost: f64 = pairs.iter().map(|&(i, j)| (sensor[j] - camera[i] - offset).abs()).sum();
            let better = match &best {
                None => true,
                Some((n, c0, o0, _)) => {
                    pairs.len() > *n
                        || (pairs.len() == *n && (cost < *c0 || (cost == *c0 && offset.abs() < o0.abs())))
                }
            };
            if better {
                best = Some((pairs.len(), cost, offset, pairs));
            }
        }
    }
    let pairs = match best {
        Some((n, _, _, pairs)) if n >= 2 => pairs,
        _ => {
            return Err(Error::SyncFailed(format!(
                "no offset within {max_offset_s} s pairs at least two taps"
            )))
        }
    };
    let matched: Vec<(f64, f64)> = pairs.iter().map(|&(i, j)| (camera[i], sensor[j])).collect();

    let span = matched.iter().map(|m| m.0).fold(f64::NEG_INFINITY, f64::max)
        - matched.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
    let drift = if matched.len() >= 3 && span >= MIN_DRIFT_SPAN_S - 1e-9 {
        fit_drift(&matched)
    } else {
        1.0
    };
    if !(DRIFT_BAND.0..=DRIFT_BAND.1).contains(&drift) {
        return Err(Error::SyncFailed(format!(
            "fitted clock drift {drift} is outside [{}, {}]",
            DRIFT_BAND.0, DRIFT_BAND.1
        )));
    }
    let mut diffs: Vec<f64> = matched.iter().map(|(c, s)| s - drift * c).collect();
    let offset_s = median(&mut diffs);
    let residual_rms_s =
        (matched.iter().map(|(c, s)| (s - drift * c - offset_s).powi(2)).sum::<f64>() / matched.len() as f64).sqrt();
    Ok(TimeMapping {
        offset_s,
        drift,
        residual_rms_s,
    })
}
