use debiaskf::export::write_estimates_csv;
use debiaskf::metrics::{compute_metrics, find_series, write_metrics_csv, MetricKind};
use debiaskf::scenario::{run_monte_carlo, FilterKind, LinearizationMode, MonteCarloOutput, ScenarioConfig};

fn small() -> ScenarioConfig {
    ScenarioConfig {
        n_monte_carlo: 6,
        duration_s: 30.0,
        seed: 11,
        ..ScenarioConfig::default()
    }
}

fn bytes(out: &MonteCarloOutput, cfg: &ScenarioConfig) -> (Vec<u8>, Vec<u8>) {
    let series = compute_metrics(out, cfg.geometry.n_sensors(), cfg.dims()).unwrap();
    let (mut m, mut e) = (Vec::new(), Vec::new());
    write_metrics_csv(&mut m, &series).unwrap();
    let records: Vec<_> = out.runs.iter().flat_map(|r| r.estimates.clone()).collect();
    write_estimates_csv(&mut e, &records).unwrap();
    (m, e)
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let cfg = small();
    let run_with = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_monte_carlo(&cfg, &FilterKind::ALL, LinearizationMode::Independent).unwrap())
    };
    assert_eq!(bytes(&run_with(1), &cfg), bytes(&run_with(3), &cfg));
}

#[test]
fn config_file_roundtrip_runs() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml")).unwrap();
    let cfg = ScenarioConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, ScenarioConfig::default());
}

#[test]
fn decoupled_bias_error_shrinks() {
    let cfg = small();
    let out = run_monte_carlo(&cfg, &[FilterKind::Decoupled], LinearizationMode::Independent).unwrap();
    let series = compute_metrics(&out, cfg.geometry.n_sensors(), cfg.dims()).unwrap();
    let rmse = &find_series(&series, "decoupled", MetricKind::RmseBias, None).unwrap().values;
    assert_eq!(rmse.len(), cfg.n_steps() + 1);
    assert!(rmse[cfg.n_steps()] < 0.5 * rmse[0], "{rmse:?}");
}
