//! Shared fixtures for the pipeline benchmarks.

use harness_core::{generate, SynthOutput, SynthSpec};

/// A 60 s synthetic session with the default scene.
pub fn fixture() -> SynthOutput {
    generate(&SynthSpec {
        duration_s: 60.0,
        stop_times_s: vec![20.0, 40.0],
        ..SynthSpec::default()
    })
    .expect("default spec is valid")
}
