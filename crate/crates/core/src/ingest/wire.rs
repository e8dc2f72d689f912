//! JSON Lines codec.
//!
//! Force: `{"t": s, "f": [fx, fy, fz], "m": [mx, my, mz]}`
//! Keypoints: `{"t": s, "view": {"yaw_deg", "pitch_deg", "hfov_deg", "size_px"},
//! "kp": {"left_leg": [u, v, conf] | null, ...}}`

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{norm3, ForceSample, Keypoint, KeypointFrame, KeypointName, Keypoints, RatedLoad, StreamStats, FORCE_SANITY_BOUND_N};
use crate::error::{Error, Result};
use crate::projection::ViewConfig;

#[derive(Serialize, Deserialize)]
struct ForceRecord {
    t: f64,
    f: [f64; 3],
    m: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct ViewRecord {
    yaw_deg: f64,
    pitch_deg: f64,
    hfov_deg: f64,
    size_px: u32,
}

#[derive(Serialize, Deserialize)]
struct KeypointRecord {
    t: f64,
    view: ViewRecord,
    kp: BTreeMap<String, Option<[f64; 3]>>,
}

fn json_error(line: &[u8], err: serde_json::Error) -> Error {
    // serde_json reports 1-based line and byte column.
    let before: usize = line
        .split(|b| *b == b'\n')
        .take(err.line().saturating_sub(1))
        .map(|l| l.len() + 1)
        .sum();
    let offset = (before + err.column().saturating_sub(1)).min(line.len());
    Error::Parse {
        offset,
        message: err.to_string(),
    }
}

fn trim(line: &[u8]) -> &[u8] {
    line.trim_ascii()
}

pub fn parse_force_record(line: &[u8], rated: &RatedLoad) -> Result<ForceSample> {
    let line = trim(line);
    let rec: ForceRecord = serde_json::from_slice(line).map_err(|e| json_error(line, e))?;
    let finite = rec.t.is_finite() && rec.f.iter().chain(&rec.m).all(|c| c.is_finite());
    if !finite {
        return Err(Error::Validation("force record has non-finite values".into()));
    }
    let magnitude = norm3(&rec.f);
    if magnitude >= FORCE_SANITY_BOUND_N {
        return Err(Error::Validation(format!(
            "force magnitude {magnitude} N at t={} exceeds sanity bound",
            rec.t
        )));
    }
    Ok(ForceSample::new(rec.t, rec.f, rec.m, rated))
}

pub fn force_to_line(sample: &ForceSample) -> String {
    serde_json::to_string(&ForceRecord {
        t: sample.t,
        f: sample.f,
        m: sample.m,
    })
    .expect("force record serializes")
}

pub fn parse_keypoint_record(line: &[u8]) -> Result<KeypointFrame> {
    let line = trim(line);
    let rec: KeypointRecord = serde_json::from_slice(line).map_err(|e| json_error(line, e))?;
    if !rec.t.is_finite() {
        return Err(Error::Validation("keypoint frame time is not finite".into()));
    }
    let v = &rec.view;
    let view = ViewConfig::from_degrees(v.yaw_deg, v.pitch_deg, v.hfov_deg, v.size_px)
        .map_err(|e| Error::Validation(format!("invalid view: {e}")))?;
    let mut kp = Keypoints::default();
    for (name, value) in rec.kp {
        let key = KeypointName::parse(&name)
            .ok_or_else(|| Error::Validation(format!("unknown keypoint name {name:?}")))?;
        let Some([u, pv, conf]) = value else {
            continue;
        };
        if !view.contains(u, pv) {
            return Err(Error::Validation(format!(
                "keypoint {key} at ({u}, {pv}) lies outside the {0}x{0} view",
                view.size_px
            )));
        }
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::Validation(format!(
                "keypoint {key} confidence {conf} outside [0, 1]"
            )));
        }
        kp.set(key, Some(Keypoint { u, v: pv, conf }));
    }
    Ok(KeypointFrame { t: rec.t, view, kp })
}

pub fn keypoint_to_line(frame: &KeypointFrame) -> String {
    let kp = frame
        .kp
        .iter()
        .map(|(name, k)| (name.as_str().to_owned(), k.map(|k| [k.u, k.v, k.conf])))
        .collect();
    let view = &frame.view;
    serde_json::to_string(&KeypointRecord {
        t: frame.t,
        view: ViewRecord {
            yaw_deg: view.yaw_rad.to_degrees(),
            pitch_deg: view.pitch_rad.to_degrees(),
            hfov_deg: view.hfov_rad.to_degrees(),
            size_px: view.size_px,
        },
        kp,
    })
    .expect("keypoint record serializes")
}

/// Records parsed from a JSON Lines source plus the per-line failures.
#[derive(Debug, Clone)]
pub struct ParsedStream<T> {
    pub records: Vec<T>,
    pub stats: StreamStats,
    /// `(1-based line number, error)` for every rejected line.
    pub errors: Vec<(usize, String)>,
}

fn read_lines<T>(
    reader: impl BufRead,
    mut parse: impl FnMut(&[u8]) -> Result<T>,
    time_of: impl Fn(&T) -> f64,
) -> std::io::Result<ParsedStream<T>> {
    let mut out = ParsedStream {
        records: Vec::new(),
        stats: StreamStats::default(),
        errors: Vec::new(),
    };
    for (i, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        if trim(&line).is_empty() {
            continue;
        }
        match parse(&line) {
            Ok(rec) => {
                out.stats.accept(time_of(&rec));
                out.records.push(rec);
            }
            Err(e) => {
                out.stats.drop_one();
                out.errors.push((i + 1, e.to_string()));
            }
        }
    }
    Ok(out)
}

/// Parses a force JSON Lines stream; malformed lines are skipped and counted.
pub fn read_force_lines(reader: impl BufRead, rated: &RatedLoad) -> std::io::Result<ParsedStream<ForceSample>> {
    read_lines(reader, |l| parse_force_record(l, rated), |s| s.t)
}

/// Parses a keypoint JSON Lines stream; malformed lines are skipped and counted.
pub fn read_keypoint_lines(reader: impl BufRead) -> std::io::Result<ParsedStream<KeypointFrame>> {
    read_lines(reader, parse_keypoint_record, |f| f.t)
}
