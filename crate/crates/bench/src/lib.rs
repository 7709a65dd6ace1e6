//! Shared fixtures for the criterion benchmarks in `benches/`.

use ruled_core::config::RunConfig;
use ruled_core::suite::sample_points;
use ruled_core::{HermitianBundleData, TotalPoint};

/// Bundle and sample points of a preset example.
pub fn fixture(example: &str, points: usize) -> (HermitianBundleData, Vec<TotalPoint>) {
    let cfg = RunConfig::from_json(&format!(r#"{{"example": "{example}"}}"#)).expect("preset");
    let bundle = cfg.bundle_data().expect("bundle");
    let pts = sample_points(&bundle, points, 0);
    (bundle, pts)
}
