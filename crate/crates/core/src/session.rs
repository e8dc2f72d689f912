//! Session directories: recording raw streams, the manifest, clock sync,
//! analysis, fusion into [`FusedSample`]s and paced replay.
//!
//! Layout of a session directory:
//!
//! ```text
//! session.json         manifest (SessionRecord)
//! force.jsonl          raw force records, verbatim
//! keypoints.jsonl      raw keypoint records, verbatim
//! taps_camera.json     camera-side tap events (external)
//! taps_sensor.json     sensor-side taps found by `sync`
//! calibration.json     optional handle/camera calibration
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze_gait, detect_stops, GaitReport, StopEvent, StopTracker, DETREND_WINDOW_S};
use crate::error::{Error, Result};
use crate::geometry::{axial_force, relative_angle, Calibration, CalibrationFile, PoseEstimate, Quality};
use crate::ingest::{align, read_force_lines, read_keypoint_lines, AlignedFrame, ForceSample, KeypointFrame, ParsedStream, RatedLoad, DEFAULT_STALENESS_S};
use crate::synth::{SynthOutput, CAMERA_TAP_FILE, FORCE_FILE, KEYPOINT_FILE};
use crate::time_sync::{detect_taps, estimate_mapping, TapEvent, TimeMapping};

pub const MANIFEST_FILE: &str = "session.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const SENSOR_TAP_FILE: &str = "taps_sensor.json";

/// A fused sample carries the tap flag when a sensor tap lies this close.
pub const TAP_FLAG_WINDOW_S: f64 = 0.05;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TapPaths {
    pub camera: Option<PathBuf>,
    pub sensor: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAnalysis {
    pub gait: Option<GaitReport>,
    pub stops: Vec<StopEvent>,
}

/// The session manifest. Paths are relative to the session directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub created: DateTime<Utc>,
    pub force_path: PathBuf,
    pub keypoint_path: PathBuf,
    pub tap_paths: TapPaths,
    pub calibration_path: Option<PathBuf>,
    #[serde(default)]
    pub rated_load: RatedLoad,
    pub mapping: Option<TimeMapping>,
    pub analysis: Option<SessionAnalysis>,
    /// Set while recording and left set if recording did not finish.
    pub partial: bool,
}

impl SessionRecord {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            created: Utc::now(),
            force_path: FORCE_FILE.into(),
            keypoint_path: KEYPOINT_FILE.into(),
            tap_paths: TapPaths::default(),
            calibration_path: None,
            rated_load: RatedLoad::default(),
            mapping: None,
            analysis: None,
            partial: false,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut text = serde_json::to_vec_pretty(self).expect("manifest serializes");
        text.push(b'\n');
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

fn default_id(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "session".to_owned())
}

/// Appends raw stream lines to a session directory.
///
/// The manifest is written up front with `partial = true` and only cleared by
/// [`Recorder::finish`], so an interrupted recording is recognizable and its
/// prefix stays replayable.
pub struct Recorder {
    dir: PathBuf,
    record: SessionRecord,
    force: BufWriter<File>,
    keypoints: BufWriter<File>,
}

impl Recorder {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut record = match SessionRecord::load(dir) {
            Ok(existing) => existing,
            Err(_) => SessionRecord::new(default_id(dir)),
        };
        record.partial = true;
        record.save(dir)?;
        let open = |name: &Path| -> Result<BufWriter<File>> {
            let path = dir.join(name);
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Ok(BufWriter::new(file))
        };
        Ok(Self {
            force: open(&record.force_path)?,
            keypoints: open(&record.keypoint_path)?,
            dir: dir.to_path_buf(),
            record,
        })
    }

    fn append(out: &mut BufWriter<File>, path: &Path, line: &[u8]) -> Result<()> {
        let line = line.strip_suffix(b"\n").unwrap_or(line);
        out.write_all(line)
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    }

    pub fn force_line(&mut self, line: &[u8]) -> Result<()> {
        let path = self.dir.join(&self.record.force_path);
        Self::append(&mut self.force, &path, line)
    }

    pub fn keypoint_line(&mut self, line: &[u8]) -> Result<()> {
        let path = self.dir.join(&self.record.keypoint_path);
        Self::append(&mut self.keypoints, &path, line)
    }

    pub fn record(&self) -> &SessionRecord {
        &self.record
    }

    pub fn flush(&mut self) -> Result<()> {
        self.force.flush().map_err(|e| Error::io(&self.dir, e))?;
        self.keypoints.flush().map_err(|e| Error::io(&self.dir, e))
    }

    pub fn finish(mut self) -> Result<SessionRecord> {
        self.flush()?;
        self.record.partial = false;
        self.record.save(&self.dir)?;
        Ok(self.record)
    }
}

/// Records two line streams into `dir`.
pub fn record<F, K>(dir: &Path, force_lines: F, keypoint_lines: K) -> Result<SessionRecord>
where
    F: IntoIterator,
    F::Item: AsRef<[u8]>,
    K: IntoIterator,
    K::Item: AsRef<[u8]>,
{
    let mut rec = Recorder::create(dir)?;
    for line in force_lines {
        rec.force_line(line.as_ref())?;
    }
    for line in keypoint_lines {
        rec.keypoint_line(line.as_ref())?;
    }
    rec.finish()
}

/// Writes a generated session (data files plus manifest) into `dir`.
pub fn write_synth_session(dir: &Path, output: &SynthOutput) -> Result<SessionRecord> {
    output.write_files(dir)?;
    let mut record = SessionRecord::new(default_id(dir));
    record.tap_paths.camera = Some(CAMERA_TAP_FILE.into());
    record.calibration_path = Some(CALIBRATION_FILE.into());
    record.save(dir)?;
    Ok(record)
}

pub fn read_taps(path: &Path) -> Result<Vec<TapEvent>> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let taps: Vec<TapEvent> =
        serde_json::from_slice(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    if let Some(bad) = taps.iter().find(|t| !t.t.is_finite() || t.magnitude.is_nan() || t.magnitude <= 0.0) {
        return Err(Error::Validation(format!("{}: invalid tap event {bad:?}", path.display())));
    }
    Ok(taps)
}

pub fn write_taps(path: &Path, taps: &[TapEvent]) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(taps).expect("taps serialize");
    text.push(b'\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: CalibrationFile =
        serde_json::from_slice(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    Calibration::from_file(&file)
}

/// Detected stops and both tap lists, as served to display clients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionEvents {
    pub stops: Vec<StopEvent>,
    pub camera_taps: Vec<TapEvent>,
    pub sensor_taps: Vec<TapEvent>,
}

#[derive(Debug, Clone, Copy)]
pub struct SyncOptions {
    pub threshold_n: f64,
    pub refractory_s: f64,
    pub max_offset_s: f64,
    /// Only the first this-many seconds of force are searched for taps;
    /// zero searches the whole record.
    pub tap_window_s: f64,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            threshold_n: crate::time_sync::DEFAULT_TAP_THRESHOLD_N,
            refractory_s: crate::time_sync::DEFAULT_REFRACTORY_S,
            max_offset_s: crate::time_sync::DEFAULT_MAX_OFFSET_S,
            tap_window_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    pub detrend_window_s: f64,
    pub stop_threshold_n: f64,
    pub stop_hysteresis_n: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            detrend_window_s: DETREND_WINDOW_S,
            stop_threshold_n: crate::analysis::DEFAULT_STOP_THRESHOLD_N,
            stop_hysteresis_n: crate::analysis::DEFAULT_STOP_HYSTERESIS_N,
        }
    }
}

/// A session directory loaded into memory.
#[derive(Debug, Clone)]
pub struct Session {
    pub dir: PathBuf,
    pub record: SessionRecord,
    pub force: ParsedStream<ForceSample>,
    pub keypoints: ParsedStream<KeypointFrame>,
    pub calibration: Calibration,
}

impl Session {
    pub fn open(dir: &Path) -> Result<Self> {
        let record = SessionRecord::load(dir)?;
        let open = |rel: &Path| {
            let path = dir.join(rel);
            File::open(&path).map(BufReader::new).map_err(|e| Error::io(&path, e))
        };
        let force_path = dir.join(&record.force_path);
        let force = read_force_lines(open(&record.force_path)?, &record.rated_load)
            .map_err(|e| Error::io(&force_path, e))?;
        let kp_path = dir.join(&record.keypoint_path);
        let keypoints = read_keypoint_lines(open(&record.keypoint_path)?).map_err(|e| Error::io(&kp_path, e))?;
        let calibration = match &record.calibration_path {
            Some(p) => read_calibration(&dir.join(p))?,
            None => Calibration::default(),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            record,
            force,
            keypoints,
            calibration,
        })
    }

    pub fn save(&self) -> Result<()> {
        self.record.save(&self.dir)
    }

    pub fn sensor_taps(&self) -> Result<Vec<TapEvent>> {
        match &self.record.tap_paths.sensor {
            Some(p) => read_taps(&self.dir.join(p)),
            None => Ok(Vec::new()),
        }
    }

    /// Finds sensor taps, matches them to the camera taps and stores the
    /// resulting mapping in the manifest.
    pub fn sync(&mut self, camera_taps: &[TapEvent], opts: &SyncOptions) -> Result<TimeMapping> {
        let force = &self.force.records;
        let window: &[ForceSample] = if opts.tap_window_s > 0.0 {
            let start = force.first().map_or(0.0, |s| s.t);
            let end = force.partition_point(|s| s.t <= start + opts.tap_window_s);
            &force[..end]
        } else {
            force
        };
        let sensor_taps = detect_taps(window, opts.threshold_n, opts.refractory_s)?;
        let mapping = estimate_mapping(camera_taps, &sensor_taps, opts.max_offset_s)?;
        write_taps(&self.dir.join(SENSOR_TAP_FILE), &sensor_taps)?;
        self.record.tap_paths.sensor = Some(SENSOR_TAP_FILE.into());
        self.record.mapping = Some(mapping);
        self.save()?;
        Ok(mapping)
    }

    pub fn camera_taps(&self) -> Result<Vec<TapEvent>> {
        let rel = self
            .record
            .tap_paths
            .camera
            .clone()
            .unwrap_or_else(|| CAMERA_TAP_FILE.into());
        read_taps(&self.dir.join(rel))
    }

    /// Axial force series on the sensor clock.
    pub fn axial_series(&self) -> (Vec<f64>, Vec<f64>) {
        self.force
            .records
            .iter()
            .map(|s| (s.t, axial_force(s, &self.calibration)))
            .unzip()
    }

    /// Gait and stop analysis over the raw force; stored in the manifest.
    pub fn analyze(&mut self, opts: &AnalysisOptions) -> Result<SessionAnalysis> {
        let (t, v) = self.axial_series();
        let gait = analyze_gait(&t, &v, opts.detrend_window_s)?;
        let stops = detect_stops(&t, &v, opts.stop_threshold_n, opts.stop_hysteresis_n)?;
        let analysis = SessionAnalysis { gait, stops };
        self.record.analysis = Some(analysis.clone());
        self.save()?;
        Ok(analysis)
    }

    /// Stops from the stored analysis, or freshly detected when there is none.
    pub fn events(&self) -> Result<SessionEvents> {
        let stops = match &self.record.analysis {
            Some(a) => a.stops.clone(),
            None => {
                let (t, v) = self.axial_series();
                detect_stops(
                    &t,
                    &v,
                    crate::analysis::DEFAULT_STOP_THRESHOLD_N,
                    crate::analysis::DEFAULT_STOP_HYSTERESIS_N,
                )?
            }
        };
        Ok(SessionEvents {
            stops,
            camera_taps: self.camera_taps().unwrap_or_default(),
            sensor_taps: self.sensor_taps()?,
        })
    }

    pub fn mapping(&self) -> Result<TimeMapping> {
        self.record.mapping.ok_or_else(|| Error::NotSynced(self.dir.clone()))
    }

    /// The full fused sequence, one sample per keypoint frame.
    pub fn fuse(&self) -> Result<Vec<FusedSample>> {
        let mapping = self.mapping()?;
        let taps: Vec<f64> = self.sensor_taps()?.iter().map(|t| t.t).collect();
        let mut fuser = Fuser::new(self.calibration, taps);
        let aligned = align(&self.force.records, &self.keypoints.records, &mapping, DEFAULT_STALENESS_S);
        Ok(aligned.iter().map(|a| fuser.fuse(a)).collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Flags {
    pub stale: bool,
    pub overload: bool,
    pub tap: bool,
    pub stop: bool,
}

impl Flags {
    pub fn names(&self) -> Vec<&'static str> {
        [
            (self.stale, "stale"),
            (self.overload, "overload"),
            (self.tap, "tap"),
            (self.stop, "stop"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect()
    }
}

/// One synchronized record of force, pose and event flags.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSample {
    /// Sensor clock seconds.
    pub t: f64,
    pub force_n: [f64; 3],
    pub torque_nm: [f64; 3],
    pub axial_n: f64,
    pub pose: PoseEstimate,
    pub flags: Flags,
}

#[derive(Serialize)]
struct FusedMessage<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    t: f64,
    axial_n: f64,
    rel_angle_deg: Option<f64>,
    quality: Quality,
    force_n: [f64; 3],
    flags: &'a [&'static str],
}

impl FusedSample {
    /// The JSON text message sent to stream subscribers and written by batch replay.
    pub fn to_message(&self) -> String {
        serde_json::to_string(&FusedMessage {
            kind: "fused",
            t: self.t,
            axial_n: self.axial_n,
            rel_angle_deg: self.pose.rel_angle_rad.map(f64::to_degrees),
            quality: self.pose.quality,
            force_n: self.force_n,
            flags: &self.flags.names(),
        })
        .expect("fused message serializes")
    }
}

/// Turns aligned frames into fused samples; keeps stop state between calls.
#[derive(Debug, Clone)]
pub struct Fuser {
    calibration: Calibration,
    stops: StopTracker,
    events: Vec<StopEvent>,
    taps: Vec<f64>,
}

impl Fuser {
    pub fn new(calibration: Calibration, mut sensor_taps: Vec<f64>) -> Self {
        sensor_taps.sort_by(f64::total_cmp);
        Self {
            calibration,
            stops: StopTracker::new(
                crate::analysis::DEFAULT_STOP_THRESHOLD_N,
                crate::analysis::DEFAULT_STOP_HYSTERESIS_N,
            )
            .expect("default stop thresholds are consistent"),
            events: Vec::new(),
            taps: sensor_taps,
        }
    }

    /// Stops completed so far.
    pub fn stop_events(&self) -> &[StopEvent] {
        &self.events
    }

    fn near_tap(&self, t: f64) -> bool {
        let i = self.taps.partition_point(|&x| x < t - TAP_FLAG_WINDOW_S);
        self.taps.get(i).is_some_and(|&x| x <= t + TAP_FLAG_WINDOW_S)
    }

    pub fn fuse(&mut self, aligned: &AlignedFrame) -> FusedSample {
        let (force_n, torque_nm, axial_n, overload) = match &aligned.force {
            Some(s) => (s.f, s.m, axial_force(s, &self.calibration), s.overload),
            None => ([0.0; 3], [0.0; 3], 0.0, false),
        };
        if let Some(ev) = self.stops.push(aligned.t, axial_n) {
            self.events.push(ev);
        }
        FusedSample {
            t: aligned.t,
            force_n,
            torque_nm,
            axial_n,
            pose: relative_angle(&aligned.frame, &self.calibration),
            flags: Flags {
                stale: aligned.stale,
                overload,
                tap: self.near_tap(aligned.t),
                stop: self.stops.in_stop(),
            },
        }
    }
}

/// Emits samples paced by their sensor timestamps divided by `speed`.
/// `speed == 0` emits as fast as possible. Stops early when `emit` returns
/// `false`.
pub fn replay(samples: &[FusedSample], speed: f64, mut emit: impl FnMut(&FusedSample) -> bool) -> Result<()> {
    if !(speed.is_finite() && speed >= 0.0) {
        return Err(Error::Config(format!("replay speed must be >= 0, got {speed}")));
    }
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let start = Instant::now();
    for s in samples {
        if speed > 0.0 {
            let due = Duration::from_secs_f64(((s.t - first.t) / speed).max(0.0));
            let now = start.elapsed();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        if !emit(s) {
            break;
        }
    }
    Ok(())
}

/// Fused messages for a whole session, one per line.
pub fn replay_to_writer(session: &Session, speed: f64, out: &mut impl Write) -> Result<usize> {
    let fused = session.fuse()?;
    let mut err = None;
    let mut n = 0;
    replay(&fused, speed, |s| match writeln!(out, "{}", s.to_message()) {
        Ok(()) => {
            n += 1;
            true
        }
        Err(e) => {
            err = Some(e);
            false
        }
    })?;
    match err {
        Some(e) => Err(Error::io("<output>", e)),
        None => Ok(n),
    }
}
