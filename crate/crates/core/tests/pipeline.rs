use loadsurrogate::dataset::io::read_profile_dir;
use loadsurrogate::pipeline::{self, ModelKind, RunConfig};
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_loadsurrogate"));
    c.env_remove("LOADSURROGATE_SEED");
    c
}

/// Reference data trimmed to two profiles per family, with a tiny model
/// configuration.
fn small_run(root: &Path) -> RunConfig {
    let data = root.join("data");
    pipeline::write_reference_dataset(&data, 5).unwrap();
    for entry in std::fs::read_dir(&data).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.starts_with("ref-") && !(name.contains("-00.") || name.contains("-01.")) {
            std::fs::remove_file(path).unwrap();
        }
    }
    let mut cfg = RunConfig::reference(5, &data, root.join("run"));
    cfg.typing.k = 2;
    cfg.hmm.n_states = 3;
    cfg.hmm.max_iter = 3;
    cfg.mabf.made_hidden = 16;
    cfg.mabf.cond_hidden = 8;
    cfg.mabf.epochs = 1;
    cfg.matching.max_match_n = 200;
    cfg
}

#[test]
fn stages_resume_from_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_run(tmp.path());
    let manifest = pipeline::run(&cfg).unwrap();
    assert_eq!(manifest.status, "ok");
    assert_eq!(manifest.stages.len(), 10);

    let out = &cfg.out_dir;
    let real = read_profile_dir(&out.join("cleaned")).unwrap();
    assert_eq!(real.len(), 8);
    for model in ["hmm", "mabf", "slp"] {
        let synth = read_profile_dir(&out.join("synthetic").join(model)).unwrap();
        assert_eq!(synth.len(), 8, "{model}");
        assert!(synth.iter().all(|p| p.sensor_id.starts_with(&format!("{model}:"))));
        assert!(synth.iter().all(|p| p.len() == 365 * 96));
    }
    let manifest_json = std::fs::read_to_string(out.join("run_manifest.json")).unwrap();
    assert!(manifest_json.contains(&cfg.hash()));

    // evaluating again from the artifacts reproduces the tables
    let before = std::fs::read(out.join("report/metrics_aggregate.csv")).unwrap();
    let mut again = cfg.clone();
    again.stages = Default::default();
    for flag in [
        &mut again.stages.ingest,
        &mut again.stages.clean,
        &mut again.stages.typify,
        &mut again.stages.train_hmm,
        &mut again.stages.train_mabf,
        &mut again.stages.generate,
        &mut again.stages.scale_slp,
    ] {
        *flag = false;
    }
    pipeline::run(&again).unwrap();
    assert_eq!(std::fs::read(out.join("report/metrics_aggregate.csv")).unwrap(), before);

    // a calendar year on request, identical for the same seed
    let mut year = cfg.clone();
    year.generate.year = Some(2024);
    pipeline::generate(&year, &[ModelKind::Hmm]).unwrap();
    let a = std::fs::read(out.join("synthetic/hmm/hmm_ref-night-00.csv")).unwrap();
    pipeline::generate(&year, &[ModelKind::Hmm]).unwrap();
    let b = std::fs::read(out.join("synthetic/hmm/hmm_ref-night-00.csv")).unwrap();
    assert_eq!(a, b);
    let p = read_profile_dir(&out.join("synthetic/hmm")).unwrap();
    assert_eq!(p[0].len(), 366 * 96);

    // the standalone evaluator reads plain directories
    let report_dir = tmp.path().join("standalone");
    let status = bin()
        .args(["evaluate", "--real"])
        .arg(out.join("cleaned"))
        .arg("--synth")
        .arg(format!("mabf={}", out.join("synthetic/mabf").display()))
        .arg("--out")
        .arg(&report_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(report_dir.join("metrics_aggregate.csv").is_file());
}

#[test]
fn missing_data_directory_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\ndata_dir = \"nowhere\"\nout_dir = \"run\"\n").unwrap();
    let out = bin().arg("-c").arg(&cfg).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data_dir"));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn missing_seed_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "data_dir = \".\"\nout_dir = \"run\"\n").unwrap();
    let out = bin().arg("-c").arg(&cfg).arg("clean").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_can_come_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\ndata_dir = \".\"\nout_dir = \"run\"\n").unwrap();
    std::env::set_var(pipeline::SEED_ENV, "77");
    let c = RunConfig::load(&cfg);
    std::env::remove_var(pipeline::SEED_ENV);
    assert_eq!(c.unwrap().seed, 77);
}

#[test]
fn malformed_profile_is_a_data_error_naming_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    std::fs::write(
        data.join("a.json"),
        r#"{"sensor_id":"a","category":"household","region_code":"1"}"#,
    )
    .unwrap();
    std::fs::write(
        data.join("a.csv"),
        "timestamp_utc,power_kw\n2021-01-01T00:00:00Z,1.0\n2021-01-01T00:10:00Z,1.0\n",
    )
    .unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\ndata_dir = \"data\"\nout_dir = \"run\"\n").unwrap();
    let out = bin().arg("-c").arg(&cfg).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage ingest"));
    let manifest = std::fs::read_to_string(tmp.path().join("run/run_manifest.json")).unwrap();
    assert!(manifest.contains("failed"));
}

#[test]
fn unknown_cluster_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::new(1, tmp.path(), tmp.path().join("run"));
    std::fs::create_dir_all(tmp.path().join("run/typing")).unwrap();
    std::fs::write(
        tmp.path().join("run/typing/assignments.csv"),
        "sensor_id,cluster_id\na,0\n",
    )
    .unwrap();
    std::fs::create_dir_all(tmp.path().join("run/cleaned")).unwrap();
    let e = pipeline::train_hmm(&cfg, Some(3)).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}
