//! Synthetic session through sync, alignment, geometry and analysis.

use harness_core::ingest::{OnlineAligner, DEFAULT_REORDER_WINDOW_S, DEFAULT_STALENESS_S};
use harness_core::session::{write_synth_session, AnalysisOptions, SyncOptions};
use harness_core::{generate, Fuser, Quality, Session, SynthSpec};

fn spec() -> SynthSpec {
    SynthSpec {
        duration_s: 40.0,
        stop_times_s: vec![22.0],
        dog_yaw_track: vec![(0.0, -20.0), (40.0, 20.0)],
        handle_yaw_deg: 5.0,
        keypoint_noise_px: 1.0,
        tap_jitter_s: 0.005,
        seed: 9,
        ..SynthSpec::default()
    }
}

#[test]
fn end_to_end() {
    let spec = spec();
    let dir = tempfile::tempdir().unwrap();
    write_synth_session(dir.path(), &generate(&spec).unwrap()).unwrap();
    let mut s = Session::open(dir.path()).unwrap();

    let cam = s.camera_taps().unwrap();
    let m = s.sync(&cam, &SyncOptions::default()).unwrap();
    assert!((m.offset_s - 0.5).abs() < 0.01);
    assert_eq!(m.drift, 1.0);

    let a = s.analyze(&AnalysisOptions::default()).unwrap();
    let gait = a.gait.unwrap();
    assert!((gait.cadence_hz - 1.0).abs() < 0.05);
    assert_eq!(a.stops.len(), 1);
    assert!((a.stops[0].t_peak - 22.0).abs() < 0.05);

    let fused = s.fuse().unwrap();
    let mut sq = 0.0;
    let mut n = 0;
    for f in &fused {
        if let Some(rel) = f.pose.rel_angle_rad {
            let truth = spec.dog_yaw_deg(f.t) - spec.handle_yaw_deg;
            sq += (rel.to_degrees() - truth).powi(2);
            n += 1;
        }
    }
    assert!(n > fused.len() * 9 / 10);
    let rms = (sq / n as f64).sqrt();
    // 1 px is roughly 1 cm on the ground here, about 2 deg across the 0.45 m handle
    assert!(rms < 3.0, "rms {rms} over {n}");
    let degraded = fused.iter().filter(|f| f.pose.quality == Quality::Degraded).count();
    assert!(degraded > 0 && degraded < fused.len() / 4);
    assert!(fused.iter().filter(|f| f.flags.stop).all(|f| f.axial_n >= 25.0));
    assert!(fused.iter().all(|f| !f.flags.stale));
}

#[test]
fn online_fusion_matches_batch() {
    let spec = spec();
    let dir = tempfile::tempdir().unwrap();
    let out = generate(&spec).unwrap();
    write_synth_session(dir.path(), &out).unwrap();
    let mut s = Session::open(dir.path()).unwrap();
    let cam = s.camera_taps().unwrap();
    let mapping = s.sync(&cam, &SyncOptions::default()).unwrap();
    let taps: Vec<f64> = s.sensor_taps().unwrap().iter().map(|t| t.t).collect();
    let batch: Vec<String> = s.fuse().unwrap().iter().map(|f| f.to_message()).collect();

    // interleave the two streams in arrival order
    let mut online = OnlineAligner::new(mapping, DEFAULT_STALENESS_S, DEFAULT_REORDER_WINDOW_S);
    let mut fuser = Fuser::new(s.calibration, taps);
    let mut live = Vec::new();
    let mut frames = out.keypoints.iter().peekable();
    for f in &out.force {
        while let Some(k) = frames.next_if(|k| mapping.apply(k.t) <= f.t) {
            online.push_keypoints(k.clone());
        }
        online.push_force(*f);
        live.extend(online.drain_ready().iter().map(|a| fuser.fuse(a).to_message()));
    }
    for k in frames {
        online.push_keypoints(k.clone());
    }
    live.extend(online.flush().iter().map(|a| fuser.fuse(a).to_message()));
    assert_eq!(live, batch);
}
