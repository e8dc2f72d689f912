//! Harness-handle telemetry: fuses a 6-axis handle force stream with
//! 360-degree-camera keypoints into the axial push/pull force and the
//! handle's angle relative to the dog's back, with gait and stop analytics,
//! keypoint-accuracy evaluation, session recording and replay.

pub mod analysis;
pub mod broadcast;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod projection;
pub mod session;
pub mod synth;
pub mod time_sync;

pub use analysis::{analyze_gait, detect_stops, evaluate_keypoints, EvalReport, GaitReport, StopEvent};
pub use error::{Error, Result};
pub use geometry::{axial_force, dog_body_yaw, handle_yaw, relative_angle, Calibration, PoseEstimate, Quality};
pub use ingest::{
    align, parse_force_record, parse_keypoint_record, AlignedFrame, ForceSample, Keypoint, KeypointFrame,
    KeypointName, Keypoints, RatedLoad, StreamStats,
};
pub use projection::{
    equirect_pixel_to_ray, persp_pixel_to_ray, ray_to_equirect_pixel, ray_to_ground, ray_to_persp_pixel,
    EquirectDims, GroundPoint, Ray, ViewConfig, ViewProjection,
};
pub use session::{FusedSample, Flags, Fuser, Session, SessionRecord};
pub use synth::{generate, GroundTruth, SynthOutput, SynthSpec};
pub use time_sync::{apply_mapping, detect_taps, estimate_mapping, TapEvent, TimeMapping};
