use std::io::Write;

use enclave_core::cloudsim::{SpotPriceTrace, Topology, TraceSet};
use enclave_core::workload::write_trace_csv;
use enclave_core::{SimDuration, SimTime};
use enclave_harness::*;

#[test]
fn loads_toml_and_runs_selected_sections() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    let mut f = std::fs::File::create(&cfg_path).unwrap();
    writeln!(
        f,
        r#"
seed = 4
formats = ["json"]

[throughput]
worker_counts = [1, 8]
task_count = 400
per_worker_rate = 4.9
[throughput.db]
reads_per_second = 100
writes_per_second = 400
"#
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    assert_eq!(cfg.seed, 4);
    assert!(cfg.scaling.is_none() && cfg.cost_aware.is_none());
    let out_dir = dir.path().join("out");
    let out = cfg.run_to(&out_dir).unwrap();
    assert_eq!(out.files, vec![out_dir.join("throughput.json")]);
    assert_eq!(out.throughput.unwrap().points.len(), 2);
}

#[test]
fn empty_config_names_no_experiment() {
    let cfg = ExperimentConfig::from_toml_str("seed = 1").unwrap();
    assert!(matches!(cfg.run(), Err(HarnessError::Config(_))));
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ExperimentConfig::from_toml_str("[throughput]\nworkers = [1]").is_err());
    assert!(ExperimentConfig::from_toml_str("colour = 1").is_err());
}

#[test]
fn relative_trace_path_resolves_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let topo = Topology::ten_zone_default();
    let mut set = TraceSet::new();
    for z in topo.zones() {
        let samples = (0..=48).map(|h| (SimTime::EPOCH + SimDuration::from_hours(h), 0.5)).collect();
        set.insert(SpotPriceTrace::new(z.id.clone(), "c4.8xlarge", samples).unwrap());
    }
    let mut buf = Vec::new();
    write_trace_csv(&set, &mut buf).unwrap();
    std::fs::write(dir.path().join("flat.csv"), buf).unwrap();
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(
        &cfg_path,
        "[cost_aware]\nduration_days = 2\nvolumes_gb = [0, 10]\n[cost_aware.traces]\npath = \"flat.csv\"\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let r = cfg.run().unwrap().cost_aware.unwrap();
    // a flat market gives no placement advantage anywhere
    assert!(r.series.iter().all(|s| s.cross_az_savings_pct == 0.0 && s.region_over_az_pct == 0.0));
    assert_eq!(r.hours, 48);
}

#[test]
fn shipped_example_is_the_default_set() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("experiment.example.toml");
    assert_eq!(ExperimentConfig::load(&path).unwrap(), ExperimentConfig::default());
}
