use super::{ForceSample, KeypointFrame, StreamStats};
use crate::time_sync::TimeMapping;

pub const DEFAULT_STALENESS_S: f64 = 0.25;
pub const DEFAULT_REORDER_WINDOW_S: f64 = 1.0;

/// A keypoint frame paired with the force at its mapped sensor time.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFrame {
    pub frame: KeypointFrame,
    /// Frame time mapped onto the sensor clock.
    pub t: f64,
    /// Interpolated force, or the nearest sample held when `stale`.
    /// `None` only when no force has been seen at all.
    pub force: Option<ForceSample>,
    pub stale: bool,
}

/// Force at sensor time `t` from a time-ordered slice.
///
/// Interpolates linearly between the bracketing samples. When the bracket
/// spans more than `staleness_s`, or `t` lies further than `staleness_s`
/// outside the covered range, the nearest sample is held and the result is
/// flagged stale.
pub fn interpolate_force(samples: &[ForceSample], t: f64, staleness_s: f64) -> (Option<ForceSample>, bool) {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return (None, true),
    };
    let held = |s: &ForceSample, stale: bool| (Some(ForceSample { t, ..*s }), stale);
    if t <= first.t {
        return if t == first.t { (Some(*first), false) } else { held(first, first.t - t > staleness_s) };
    }
    if t >= last.t {
        return if t == last.t { (Some(*last), false) } else { held(last, t - last.t > staleness_s) };
    }
    // first index with sample time > t; 1..len because of the checks above
    let hi = samples.partition_point(|s| s.t <= t);
    let (a, b) = (&samples[hi - 1], &samples[hi]);
    if a.t == t {
        return (Some(*a), false);
    }
    if b.t - a.t > staleness_s {
        let nearest = if t - a.t <= b.t - t { a } else { b };
        return held(nearest, true);
    }
    let w = (t - a.t) / (b.t - a.t);
    let lerp = |x: &[f64; 3], y: &[f64; 3]| std::array::from_fn(|i| x[i] + (y[i] - x[i]) * w);
    (
        Some(ForceSample {
            t,
            f: lerp(&a.f, &b.f),
            m: lerp(&a.m, &b.m),
            overload: a.overload || b.overload,
        }),
        false,
    )
}

fn is_sorted_by_time(samples: &[ForceSample]) -> bool {
    samples.windows(2).all(|w| w[0].t <= w[1].t)
}

/// Batch alignment of keypoint frames onto the force timeline.
///
/// Output is ordered by mapped time (stable for equal times) and contains
/// every input frame exactly once.
pub fn align(
    force: &[ForceSample],
    frames: &[KeypointFrame],
    mapping: &TimeMapping,
    staleness_s: f64,
) -> Vec<AlignedFrame> {
    let sorted_force;
    let force = if is_sorted_by_time(force) {
        force
    } else {
        let mut v = force.to_vec();
        v.sort_by(|a, b| a.t.total_cmp(&b.t));
        sorted_force = v;
        &sorted_force
    };
    let mut mapped: Vec<(f64, &KeypointFrame)> = frames.iter().map(|f| (mapping.apply(f.t), f)).collect();
    mapped.sort_by(|a, b| a.0.total_cmp(&b.0));
    mapped
        .into_iter()
        .map(|(t, frame)| {
            let (force, stale) = interpolate_force(force, t, staleness_s);
            AlignedFrame {
                frame: frame.clone(),
                t,
                force,
                stale,
            }
        })
        .collect()
}

/// Incremental alignment for live input.
///
/// Force samples may arrive out of order within the reorder window; older
/// ones are counted as dropped. A keypoint frame is released as soon as
/// force coverage reaches its mapped time, or as stale once newer frames
/// are more than `staleness_s` ahead of it. Released frames are strictly
/// ordered; a frame arriving behind an already released one is dropped.
#[derive(Debug)]
pub struct OnlineAligner {
    mapping: TimeMapping,
    staleness_s: f64,
    reorder_window_s: f64,
    history: Vec<ForceSample>,
    pending: Vec<(f64, KeypointFrame)>,
    newest_frame_t: f64,
    last_released_t: f64,
    pub force_stats: StreamStats,
    pub keypoint_stats: StreamStats,
}

impl OnlineAligner {
    pub fn new(mapping: TimeMapping, staleness_s: f64, reorder_window_s: f64) -> Self {
        Self {
            mapping,
            staleness_s,
            reorder_window_s,
            history: Vec::new(),
            pending: Vec::new(),
            newest_frame_t: f64::NEG_INFINITY,
            last_released_t: f64::NEG_INFINITY,
            force_stats: StreamStats::default(),
            keypoint_stats: StreamStats::default(),
        }
    }

    fn newest_force_t(&self) -> f64 {
        self.history.last().map_or(f64::NEG_INFINITY, |s| s.t)
    }

    pub fn push_force(&mut self, sample: ForceSample) {
        let newest = self.newest_force_t();
        if sample.t < newest - self.reorder_window_s {
            self.force_stats.drop_one();
            return;
        }
        self.force_stats.accept(sample.t);
        let at = self.history.partition_point(|s| s.t <= sample.t);
        self.history.insert(at, sample);

        // Keep enough history to interpolate anything still pending.
        let keep_from = self
            .pending
            .first()
            .map_or(f64::INFINITY, |p| p.0)
            .min(self.newest_force_t() - self.reorder_window_s - self.staleness_s);
        let cut = self.history.partition_point(|s| s.t < keep_from);
        if cut > 1 {
            self.history.drain(..cut - 1);
        }
    }

    pub fn push_keypoints(&mut self, frame: KeypointFrame) {
        let t = self.mapping.apply(frame.t);
        if t < self.last_released_t {
            self.keypoint_stats.drop_one();
            return;
        }
        self.keypoint_stats.accept(frame.t);
        self.newest_frame_t = self.newest_frame_t.max(t);
        let at = self.pending.partition_point(|p| p.0 <= t);
        self.pending.insert(at, (t, frame));
    }

    fn release(&mut self, t: f64, frame: KeypointFrame) -> AlignedFrame {
        let (force, stale) = interpolate_force(&self.history, t, self.staleness_s);
        self.last_released_t = t;
        AlignedFrame { frame, t, force, stale }
    }

    /// Frames that can be resolved with the data seen so far.
    pub fn drain_ready(&mut self) -> Vec<AlignedFrame> {
        let mut out = Vec::new();
        while let Some(&(t, _)) = self.pending.first() {
            let covered = self.newest_force_t() >= t;
            let overdue = self.newest_frame_t - t > self.staleness_s;
            if !(covered || overdue) {
                break;
            }
            let (t, frame) = self.pending.remove(0);
            out.push(self.release(t, frame));
        }
        out
    }

    /// Releases every pending frame regardless of force coverage.
    pub fn flush(&mut self) -> Vec<AlignedFrame> {
        let pending = std::mem::take(&mut self.pending);
        pending.into_iter().map(|(t, f)| self.release(t, f)).collect()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }
}
