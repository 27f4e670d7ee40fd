//! Fixtures shared by the benchmarks.

use driftrack::experiments::ExperimentConfig;
use driftrack::{run_tracking, Result, TrackingRun};

/// Parses a config and runs one tracking pass on its last horizon.
pub fn single_run(config: &str, seed: u64) -> Result<TrackingRun> {
    let cfg = ExperimentConfig::parse(config)?;
    let n = *cfg.horizons.last().expect("validated nonempty");
    let model = cfg.model_for(n)?;
    run_tracking(&cfg.tracking_config(n)?, model.as_ref(), &cfg.gain_spec()?, seed)
}
