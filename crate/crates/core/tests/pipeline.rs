use driftrack::experiments::{emit_csv, rate_csv, run_experiment, run_rate_sweep, single_run_csv, Csv, ExperimentConfig};
use driftrack::gains::SignalNoiseGain;
use driftrack::models::{Noise, SignalNoise};
use driftrack::{run_tracking, GainSpec, ParameterPath, ScheduleKind, StepSchedule, TrackingConfig};

#[test]
fn empty_and_single_step_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    emit_csv(&rate_csv(&[]), &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);

    let model = SignalNoise::new(ParameterPath::static_path(vec![0.2], 1.0).unwrap(), Noise::Zero).unwrap();
    let cfg = TrackingConfig::new(vec![0.0], 1, StepSchedule::new(ScheduleKind::Constant { gamma: 0.5 }).unwrap()).unwrap();
    let run = run_tracking(&cfg, &model, &GainSpec::new(SignalNoiseGain { d: 1 }), 0).unwrap();
    let csv = single_run_csv(&run);
    // θ̂_0 plus one step.
    assert_eq!(csv.rows.len(), 2);
    assert_eq!(Csv::parse(&csv.render()).unwrap().column("estimate_1").unwrap()[1], Some(0.1));
}

#[test]
fn rate_rows_round_trip_through_a_file() {
    let cfg = ExperimentConfig::parse("experiment = rate-sweep\nreplications = 12\nhorizons = 100, 300\nseed = 4\nmodel.noise = rademacher\n").unwrap();
    let (report, rows) = run_rate_sweep(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rates.csv");
    emit_csv(&rate_csv(&rows), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(!text.contains('\r'));
    let back = Csv::parse(&text).unwrap();
    let l2 = back.column("final_error_l2").unwrap();
    for (row, v) in rows.iter().zip(&l2) {
        assert_eq!(v.unwrap().to_bits(), row.l2.to_bits());
    }
    // Per-horizon means recomputed from the file agree with the report.
    for (h, m) in report.horizons.iter().zip(&report.mean_l2) {
        let vals: Vec<f64> = rows.iter().zip(&l2).filter(|(r, _)| r.horizon == *h).map(|(_, v)| v.unwrap()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - m.mean).abs() <= 1e-12 * m.mean.abs().max(1.0));
    }
}

#[test]
fn seed_changes_output() {
    let text = |s: u64| format!("experiment = rate-sweep\nreplications = 6\nhorizons = 100\nseed = {s}\n");
    let a = run_experiment(&ExperimentConfig::parse(&text(1)).unwrap()).unwrap().csv.render();
    let b = run_experiment(&ExperimentConfig::parse(&text(2)).unwrap()).unwrap().csv.render();
    assert_ne!(a, b);
}
