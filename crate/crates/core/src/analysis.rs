//! Session analytics over the axial force: walking rhythm, stop transients,
//! and keypoint-detector accuracy against labelled frames.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ingest::{KeypointFrame, KeypointName};

pub const DETREND_WINDOW_S: f64 = 2.0;
pub const MIN_CADENCE_HZ: f64 = 0.5;
pub const MAX_CADENCE_HZ: f64 = 3.0;
pub const MIN_GAIT_CONFIDENCE: f64 = 0.3;
/// Autocorrelation runs on a grid no finer than this.
const MAX_ANALYSIS_RATE_HZ: f64 = 100.0;
/// Peaks within this fraction of the strongest one count as equally good;
/// the shortest such lag wins so a 1 Hz rhythm is not read as 0.5 Hz.
const PEAK_TIE_FRACTION: f64 = 0.9;

pub const DEFAULT_STOP_THRESHOLD_N: f64 = 30.0;
pub const DEFAULT_STOP_HYSTERESIS_N: f64 = 5.0;

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitReport {
    pub cadence_hz: f64,
    pub amplitude_n: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    pub t_peak: f64,
    pub peak_n: f64,
    pub duration_s: f64,
}

fn uniform_grid(times: &[f64], values: &[f64]) -> (f64, Vec<f64>) {
    let mut diffs: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    diffs.sort_by(f64::total_cmp);
    let median_dt = diffs[diffs.len() / 2];
    let dt = median_dt.max(1.0 / MAX_ANALYSIS_RATE_HZ);
    let uniform = diffs[diffs.len() - 1] - diffs[0] <= 1e-9 * median_dt;
    if uniform && dt == median_dt {
        return (dt, values.to_vec());
    }
    let span = times[times.len() - 1] - times[0];
    let n = (span / dt).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let t = times[0] + i as f64 * dt;
        while j + 2 < times.len() && times[j + 1] <= t {
            j += 1;
        }
        let (t0, t1) = (times[j], times[j + 1]);
        let w = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 0.0 };
        out.push(values[j] + (values[j + 1] - values[j]) * w);
    }
    (dt, out)
}

/// Centered moving average, window shrinking at the edges.
fn rolling_mean(x: &[f64], half: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Walking rhythm from the axial force trace.
///
/// `window_s` is the detrending moving-average width. Returns `Ok(None)` when
/// the trace shows no rhythm in the 0.5-3 Hz band with autocorrelation of at
/// least 0.3.
pub fn analyze_gait(times: &[f64], values: &[f64], window_s: f64) -> Result<Option<GaitReport>> {
    if times.len() != values.len() {
        return Err(Error::Data("time and value series differ in length".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Data("gait series timestamps must be strictly increasing".into()));
    }
    let min_span = 2.0 / MIN_CADENCE_HZ;
    let span = if times.len() >= 2 { times[times.len() - 1] - times[0] } else { 0.0 };
    if times.len() < 16 || span < min_span {
        return Err(Error::InsufficientData(format!(
            "gait analysis needs at least {min_span} s of data, got {span} s"
        )));
    }
    let (dt, x) = uniform_grid(times, values);
    let half = ((window_s / dt).round() as usize) / 2;
    let trend = rolling_mean(&x, half);
    let d: Vec<f64> = x.iter().zip(&trend).map(|(a, b)| a - b).collect();
    let n = d.len();

    let energy = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if energy <= 1e-20 {
        return Ok(None);
    }
    let k_min = ((1.0 / MAX_CADENCE_HZ) / dt).ceil() as usize;
    let k_max = ((1.0 / MIN_CADENCE_HZ) / dt).floor() as usize;
    let acf: Vec<f64> = (0..=k_max + 1)
        .map(|k| {
            let s: f64 = d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum();
            s / (n - k) as f64 / energy
        })
        .collect();
    let peaks: Vec<usize> = (k_min.max(1)..=k_max)
        .filter(|&k| acf[k] > acf[k - 1] && acf[k] >= acf[k + 1])
        .collect();
    let Some(best) = peaks.iter().map(|&k| acf[k]).reduce(f64::max) else {
        return Ok(None);
    };
    let k = peaks
        .into_iter()
        .find(|&k| acf[k] >= PEAK_TIE_FRACTION * best)
        .expect("the best peak qualifies");
    let confidence = acf[k].clamp(0.0, 1.0);
    if confidence < MIN_GAIT_CONFIDENCE {
        return Ok(None);
    }
    let (a, b, c) = (acf[k - 1], acf[k], acf[k + 1]);
    let curvature = a - 2.0 * b + c;
    let shift = if curvature < 0.0 { 0.5 * (a - c) / curvature } else { 0.0 };
    let cadence_hz = 1.0 / ((k as f64 + shift) * dt);

    let mut sorted = d;
    sorted.sort_by(f64::total_cmp);
    let amplitude_n = (percentile(&sorted, 0.95) - percentile(&sorted, 0.05)) / 2.0;
    Ok(Some(GaitReport {
        cadence_hz,
        amplitude_n,
        confidence,
    }))
}

/// Hysteresis detector for push transients, usable sample by sample.
#[derive(Debug, Clone)]
pub struct StopTracker {
    threshold_n: f64,
    hysteresis_n: f64,
    open: Option<OpenStop>,
    last_t: f64,
}

#[derive(Debug, Clone, Copy)]
struct OpenStop {
    t_open: f64,
    t_peak: f64,
    peak_n: f64,
}

impl StopTracker {
    pub fn new(threshold_n: f64, hysteresis_n: f64) -> Result<Self> {
        if !(hysteresis_n > 0.0 && threshold_n > hysteresis_n) {
            return Err(Error::Config(format!(
                "stop detection needs threshold > hysteresis > 0 (got {threshold_n}, {hysteresis_n})"
            )));
        }
        Ok(Self {
            threshold_n,
            hysteresis_n,
            open: None,
            last_t: f64::NEG_INFINITY,
        })
    }

    pub fn in_stop(&self) -> bool {
        self.open.is_some()
    }

    /// Feeds one sample; returns the event it closes, if any.
    pub fn push(&mut self, t: f64, axial_n: f64) -> Option<StopEvent> {
        self.last_t = t;
        match &mut self.open {
            None => {
                if axial_n >= self.threshold_n {
                    self.open = Some(OpenStop {
                        t_open: t,
                        t_peak: t,
                        peak_n: axial_n,
                    });
                }
                None
            }
            Some(open) => {
                if axial_n > open.peak_n {
                    open.peak_n = axial_n;
                    open.t_peak = t;
                }
                if axial_n < self.threshold_n - self.hysteresis_n {
                    let done = *open;
                    self.open = None;
                    Some(StopEvent {
                        t_peak: done.t_peak,
                        peak_n: done.peak_n,
                        duration_s: t - done.t_open,
                    })
                } else {
                    None
                }
            }
        }
    }

    /// Closes an event still open at the end of the data.
    pub fn finish(&mut self) -> Option<StopEvent> {
        let open = self.open.take()?;
        let duration_s = self.last_t - open.t_open;
        (duration_s > 0.0).then_some(StopEvent {
            t_peak: open.t_peak,
            peak_n: open.peak_n,
            duration_s,
        })
    }
}

pub fn detect_stops(times: &[f64], values: &[f64], threshold_n: f64, hysteresis_n: f64) -> Result<Vec<StopEvent>> {
    let mut tracker = StopTracker::new(threshold_n, hysteresis_n)?;
    let mut events: Vec<StopEvent> = times.iter().zip(values).filter_map(|(&t, &v)| tracker.push(t, v)).collect();
    events.extend(tracker.finish());
    Ok(events)
}

fn two_decimals<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 100.0).round() / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeypointAccuracy {
    pub keypoint: KeypointName,
    /// Mean |du| over frames where prediction and label are both present.
    pub mean_abs_dx_px: Option<f64>,
    pub mean_abs_dy_px: Option<f64>,
    /// Frames that contributed to the means.
    pub compared: usize,
    /// Frames where the prediction was missing or below the confidence threshold.
    pub failures: usize,
    #[serde(serialize_with = "two_decimals")]
    pub failure_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_frames: usize,
    pub conf_threshold: f64,
    pub keypoints: Vec<KeypointAccuracy>,
}

impl EvalReport {
    pub fn get(&self, name: KeypointName) -> &KeypointAccuracy {
        self.keypoints.iter().find(|k| k.keypoint == name).expect("all keypoints reported")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.2}"));
        let _ = writeln!(out, "{:<10} {:>10} {:>10} {:>10}", "keypoint", "|dx| px", "|dy| px", "failure %");
        for k in &self.keypoints {
            let _ = writeln!(
                out,
                "{:<10} {:>10} {:>10} {:>10.2}",
                k.keypoint.as_str(),
                cell(k.mean_abs_dx_px),
                cell(k.mean_abs_dy_px),
                k.failure_pct
            );
        }
        let _ = writeln!(out, "frames: {}", self.n_frames);
        out
    }
}

/// Compares predicted keypoints with labels paired by exact timestamp.
pub fn evaluate_keypoints(
    predictions: &[KeypointFrame],
    labels: &[KeypointFrame],
    conf_threshold: f64,
) -> Result<EvalReport> {
    let mut by_time: HashMap<u64, Vec<&KeypointFrame>> = HashMap::new();
    for l in labels {
        by_time.entry(l.t.to_bits()).or_default().push(l);
    }
    for v in by_time.values_mut() {
        v.reverse();
    }
    let mut pairs = Vec::with_capacity(predictions.len());
    let mut unpaired = Vec::new();
    for p in predictions {
        match by_time.get_mut(&p.t.to_bits()).and_then(Vec::pop) {
            Some(l) => pairs.push((p, l)),
            None => unpaired.push(p.t),
        }
    }
    unpaired.extend(by_time.values().flatten().map(|l| l.t));
    if !unpaired.is_empty() {
        unpaired.sort_by(f64::total_cmp);
        return Err(Error::Pairing(unpaired));
    }
    if let Some((p, _)) = pairs.iter().find(|(p, l)| p.view != l.view) {
        return Err(Error::Validation(format!(
            "prediction and label at t={} use different views",
            p.t
        )));
    }

    let n_frames = pairs.len();
    let keypoints = KeypointName::ALL
        .into_iter()
        .map(|name| {
            let (mut sx, mut sy, mut compared, mut failures) = (0.0, 0.0, 0usize, 0usize);
            for (p, l) in &pairs {
                let pred = p.kp.get(name);
                if pred.is_none_or(|k| k.conf < conf_threshold) {
                    failures += 1;
                }
                if let (Some(a), Some(b)) = (pred, l.kp.get(name)) {
                    sx += (a.u - b.u).abs();
                    sy += (a.v - b.v).abs();
                    compared += 1;
                }
            }
            let mean = |s: f64| (compared > 0).then(|| s / compared as f64);
            KeypointAccuracy {
                keypoint: name,
                mean_abs_dx_px: mean(sx),
                mean_abs_dy_px: mean(sy),
                compared,
                failures,
                failure_pct: if n_frames > 0 { 100.0 * failures as f64 / n_frames as f64 } else { 0.0 },
            }
        })
        .collect();
    Ok(EvalReport {
        n_frames,
        conf_threshold,
        keypoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Keypoint, Keypoints};
    use crate::projection::ViewConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::TAU;

    fn sampled(rate: f64, dur: f64, f: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..(rate * dur) as usize).map(|i| i as f64 / rate).collect();
        let v = t.iter().map(|&t| f(t)).collect();
        (t, v)
    }

    #[test]
    fn gait_pure_sine() {
        for rate in [30.0, 100.0, 1000.0] {
            let (t, v) = sampled(rate, 30.0, |t| 20.0 * (TAU * t).sin());
            let r = analyze_gait(&t, &v, 2.0).unwrap().unwrap();
            assert!((r.cadence_hz - 1.0).abs() <= 0.05, "{rate} Hz: cadence {}", r.cadence_hz);
            assert!((r.amplitude_n - 20.0).abs() <= 2.0, "amplitude {}", r.amplitude_n);
            assert!(r.confidence > 0.9);
        }
    }

    #[test]
    fn gait_cadence_band_edges() {
        for f0 in [0.6, 1.7, 2.8] {
            let (t, v) = sampled(100.0, 30.0, |t| 15.0 * (TAU * f0 * t).sin());
            let r = analyze_gait(&t, &v, 2.0).unwrap().unwrap();
            assert!((r.cadence_hz - f0).abs() <= 0.05 * f0, "{f0}: {}", r.cadence_hz);
        }
    }

    #[test]
    fn gait_constant_is_no_gait() {
        let (t, v) = sampled(100.0, 30.0, |_| 10.0);
        assert_eq!(analyze_gait(&t, &v, 2.0).unwrap(), None);
    }

    #[test]
    fn gait_noise_only_is_no_gait() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 3.0).unwrap();
        let (t, _) = sampled(100.0, 30.0, |_| 0.0);
        let v: Vec<f64> = t.iter().map(|_| noise.sample(&mut rng)).collect();
        assert_eq!(analyze_gait(&t, &v, 2.0).unwrap(), None);
    }

    #[test]
    fn gait_sine_with_noise() {
        let noise = Normal::new(0.0, 3.0).unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (t, v) = sampled(100.0, 30.0, |t| 20.0 * (TAU * t).sin());
            let v: Vec<f64> = v.iter().map(|x| x + noise.sample(&mut rng)).collect();
            let r = analyze_gait(&t, &v, 2.0).unwrap().unwrap();
            assert!((r.cadence_hz - 1.0).abs() <= 0.05, "seed {seed}: {}", r.cadence_hz);
        }
    }

    #[test]
    fn gait_irregular_timestamps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = vec![0.0];
        while *t.last().unwrap() < 30.0 {
            let next = t.last().unwrap() + rng.random_range(0.005..0.015);
            t.push(next);
        }
        let v: Vec<f64> = t.iter().map(|t| 20.0 * (TAU * 1.2 * t).sin()).collect();
        let r = analyze_gait(&t, &v, 2.0).unwrap().unwrap();
        assert!((r.cadence_hz - 1.2).abs() <= 0.06);
    }

    #[test]
    fn gait_too_short() {
        let (t, v) = sampled(100.0, 3.0, |t| (TAU * t).sin());
        assert!(matches!(analyze_gait(&t, &v, 2.0), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gait_offset_and_scale(offset in -50.0..50.0f64, scale in 0.2..5.0f64, f0 in 0.7..2.5f64) {
            let (t, v) = sampled(50.0, 20.0, |t| 20.0 * (TAU * f0 * t).sin() + 4.0 * (TAU * 2.0 * f0 * t + 0.3).sin());
            let base = analyze_gait(&t, &v, 2.0).unwrap().unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + offset).collect();
            let s = analyze_gait(&t, &shifted, 2.0).unwrap().unwrap();
            prop_assert!((s.cadence_hz - base.cadence_hz).abs() < 1e-6);
            let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
            let c = analyze_gait(&t, &scaled, 2.0).unwrap().unwrap();
            prop_assert!((c.amplitude_n / base.amplitude_n - scale).abs() <= 0.01 * scale);
        }

        #[test]
        fn stop_count_translation_invariant(shift in -100.0..100.0f64, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (t, v) = sampled(100.0, 20.0, |t| 20.0 * (TAU * t).sin());
            let v: Vec<f64> = v.iter().map(|x| x + rng.random_range(0.0..15.0)).collect();
            let a = detect_stops(&t, &v, 30.0, 5.0).unwrap();
            let moved: Vec<f64> = t.iter().map(|x| x + shift).collect();
            let b = detect_stops(&moved, &v, 30.0, 5.0).unwrap();
            prop_assert_eq!(a.len(), b.len());
        }
    }

    fn pulse(t: f64, at: f64, peak: f64) -> f64 {
        peak * (-((t - at) / 0.127).powi(2) / 2.0).exp()
    }

    #[test]
    fn stop_pulse_on_gait() {
        let (t, v) = sampled(100.0, 20.0, |t| {
            let quiet = 1.0 - (-((t - 10.0) / 0.5).powi(2) / 2.0).exp();
            20.0 * quiet * (TAU * t).sin() + pulse(t, 10.0, 32.0)
        });
        let events = detect_stops(&t, &v, 30.0, 5.0).unwrap();
        assert_eq!(events.len(), 1);
        assert!((events[0].peak_n - 32.0).abs() <= 0.5);
        assert!((events[0].t_peak - 10.0).abs() <= 0.02);
        assert!(events[0].duration_s > 0.0);
    }

    #[test]
    fn below_threshold_is_quiet() {
        let (t, v) = sampled(100.0, 20.0, |t| pulse(t, 10.0, 28.0) + 5.0 * (TAU * t).sin());
        let v: Vec<f64> = v.into_iter().map(|x| x.min(28.0)).collect();
        assert!(detect_stops(&t, &v, 30.0, 5.0).unwrap().is_empty());
    }

    #[test]
    fn hysteresis_reset() {
        // dip to 24 N falls below 30 - 5 and re-arms the detector
        let (t, v) = sampled(100.0, 10.0, |t| 24.0 + pulse(t, 4.0, 10.0) + pulse(t, 5.0, 10.0));
        assert_eq!(detect_stops(&t, &v, 30.0, 5.0).unwrap().len(), 2);
        // dip to 26 N stays above 25 N, so both pulses are one event
        let (t, v) = sampled(100.0, 10.0, |t| 26.0 + pulse(t, 4.0, 8.0) + pulse(t, 5.0, 8.0));
        assert_eq!(detect_stops(&t, &v, 30.0, 5.0).unwrap().len(), 1);
    }

    #[test]
    fn stop_config_errors() {
        assert!(detect_stops(&[], &[], 5.0, 5.0).is_err());
        assert!(detect_stops(&[], &[], 30.0, 0.0).is_err());
    }

    fn frame(t: f64, kp: Keypoints) -> KeypointFrame {
        KeypointFrame {
            t,
            view: ViewConfig::default(),
            kp,
        }
    }

    fn full_kp(rng: &mut ChaCha8Rng) -> Keypoints {
        let mut kp = Keypoints::default();
        for name in KeypointName::ALL {
            kp.set(
                name,
                Some(Keypoint {
                    u: rng.random_range(20.0..390.0),
                    v: rng.random_range(20.0..390.0),
                    conf: rng.random_range(0.5..1.0),
                }),
            );
        }
        kp
    }

    #[test]
    fn identical_sets_are_perfect() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels: Vec<_> = (0..48).map(|i| frame(i as f64, full_kp(&mut rng))).collect();
        let r = evaluate_keypoints(&labels, &labels, DEFAULT_CONF_THRESHOLD).unwrap();
        assert_eq!(r.n_frames, 48);
        for k in &r.keypoints {
            assert_eq!(k.mean_abs_dx_px, Some(0.0));
            assert_eq!(k.mean_abs_dy_px, Some(0.0));
            assert_eq!(k.failure_pct, 0.0);
        }
    }

    #[test]
    fn table_two_fractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<_> = (0..48).map(|i| frame(i as f64 * 0.5, full_kp(&mut rng))).collect();
        let mut preds = labels.clone();
        preds[17].kp.set(KeypointName::RightLeg, None);
        for i in [0, 5, 9, 20, 33, 40, 47] {
            preds[i].kp.set(KeypointName::Tail, None);
        }
        let r = evaluate_keypoints(&preds, &labels, DEFAULT_CONF_THRESHOLD).unwrap();
        let rl = r.get(KeypointName::RightLeg);
        assert_eq!(rl.failures, 1);
        assert!((rl.failure_pct - 2.08).abs() <= 0.005);
        let tail = r.get(KeypointName::Tail);
        assert_eq!(tail.failures, 7);
        assert_eq!(tail.failure_pct, 700.0 / 48.0);
        assert_eq!(format!("{:.2}", tail.failure_pct), "14.58");
        assert_eq!(tail.compared, 41);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["keypoints"][3]["failure_pct"], 14.58);
    }

    #[test]
    fn table_one_displacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels: Vec<_> = (0..48).map(|i| frame(i as f64, full_kp(&mut rng))).collect();
        let preds: Vec<_> = labels
            .iter()
            .map(|l| {
                let mut p = l.clone();
                let k = l.kp.get(KeypointName::Tail).unwrap();
                p.kp.set(KeypointName::Tail, Some(Keypoint { u: k.u + 11.2, v: k.v + 3.4, ..k }));
                p
            })
            .collect();
        let r = evaluate_keypoints(&preds, &labels, DEFAULT_CONF_THRESHOLD).unwrap();
        let tail = r.get(KeypointName::Tail);
        assert_abs_diff_eq!(tail.mean_abs_dx_px.unwrap(), 11.2, epsilon = 1e-9);
        assert_abs_diff_eq!(tail.mean_abs_dy_px.unwrap(), 3.4, epsilon = 1e-9);
        assert!(r.to_table().contains("11.20"));
    }

    #[test]
    fn low_confidence_counts_as_failure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<_> = (0..4).map(|i| frame(i as f64, full_kp(&mut rng))).collect();
        let mut preds = labels.clone();
        let k = preds[2].kp.get(KeypointName::Head).unwrap();
        preds[2].kp.set(KeypointName::Head, Some(Keypoint { conf: 0.1, ..k }));
        let r = evaluate_keypoints(&preds, &labels, 0.25).unwrap();
        assert_eq!(r.get(KeypointName::Head).failures, 1);
        assert_eq!(r.get(KeypointName::Head).failure_pct, 25.0);
    }

    #[test]
    fn pairing_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<_> = (0..3).map(|i| frame(i as f64, full_kp(&mut rng))).collect();
        let mut preds = labels.clone();
        preds[1].t = 1.5;
        match evaluate_keypoints(&preds, &labels, 0.25) {
            Err(Error::Pairing(ts)) => assert_eq!(ts, vec![1.0, 1.5]),
            other => panic!("expected pairing error, got {other:?}"),
        }
        let mut preds = labels.clone();
        preds[0].view.yaw_rad = 0.5;
        assert!(matches!(evaluate_keypoints(&preds, &labels, 0.25), Err(Error::Validation(_))));
    }

    proptest! {
        #[test]
        fn failure_percent_matches_brute_force(mask in prop::collection::vec(0u8..64, 1..80), seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<_> = (0..mask.len()).map(|i| frame(i as f64, full_kp(&mut rng))).collect();
            let mut preds = labels.clone();
            for (p, m) in preds.iter_mut().zip(&mask) {
                for (b, name) in KeypointName::ALL.into_iter().enumerate() {
                    if m & (1 << b) != 0 {
                        p.kp.set(name, None);
                    }
                }
            }
            let r = evaluate_keypoints(&preds, &labels, 0.25).unwrap();
            for (b, name) in KeypointName::ALL.into_iter().enumerate() {
                let count = mask.iter().filter(|m| *m & (1 << b) != 0).count();
                prop_assert_eq!(r.get(name).failures, count);
                prop_assert_eq!(r.get(name).failure_pct, 100.0 * count as f64 / mask.len() as f64);
            }
        }

        #[test]
        fn sign_symmetry(du in -30.0..30.0f64, dv in -30.0..30.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let labels: Vec<_> = (0..10).map(|i| frame(i as f64, full_kp(&mut rng))).collect();
            let shift = |s: f64| -> Vec<KeypointFrame> {
                labels.iter().map(|l| {
                    let mut p = l.clone();
                    for name in KeypointName::ALL {
                        let k = l.kp.get(name).unwrap();
                        p.kp.set(name, Some(Keypoint { u: k.u + s * du, v: k.v + s * dv, ..k }));
                    }
                    p
                }).collect()
            };
            let a = evaluate_keypoints(&shift(1.0), &labels, 0.25).unwrap();
            let b = evaluate_keypoints(&shift(-1.0), &labels, 0.25).unwrap();
            for (x, y) in a.keypoints.iter().zip(&b.keypoints) {
                prop_assert!((x.mean_abs_dx_px.unwrap() - y.mean_abs_dx_px.unwrap()).abs() < 1e-9);
                prop_assert!((x.mean_abs_dy_px.unwrap() - y.mean_abs_dy_px.unwrap()).abs() < 1e-9);
            }
        }
    }
}
