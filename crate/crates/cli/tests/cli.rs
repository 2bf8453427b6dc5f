use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SAMURAI: &str = "a techno samurai warrior walking his cyberpunk dog";

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/stylus_docs_50.json")
}

fn manta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_manta"))
        .arg("--data-dir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn ingested() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture();
    for kind in ["checkpoint", "adapter"] {
        manta(dir.path(), &["ingest", "--input", input.to_str().unwrap(), "--kind", kind]);
    }
    dir
}

#[test]
fn ingest_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture();
    let report = json(&manta(
        dir.path(),
        &["ingest", "--input", input.to_str().unwrap(), "--kind", "adapter", "--collection", "loras"],
    ));
    assert_eq!(report["documents"], 38);
    assert_eq!(report["skipped"], 0);
    assert!(dir.path().join("collections/loras.mnta").exists());

    let baseline = json(&manta(
        dir.path(),
        &["ingest", "--input", input.to_str().unwrap(), "--kind", "adapter", "--collection", "meta", "--metadata-baseline"],
    ));
    assert!(baseline["embedding_tokens"].as_u64().unwrap() > 5 * report["embedding_tokens"].as_u64().unwrap());
}

#[test]
fn ingest_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = manta(dir.path(), &["ingest", "--input", "/nonexistent.json", "--kind", "adapter"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));
    let out = manta(dir.path(), &["ingest", "--input", "x.json", "--kind", "vae"]);
    assert!(!out.status.success());
}

#[test]
fn run_dump_workflow_and_overrides() {
    let dir = ingested();
    let w = json(&manta(
        dir.path(),
        &["run", "--prompt", SAMURAI, "--seed", "9", "--cfg", "11", "--dump-workflow"],
    ));
    assert_eq!(w["seed"], 9);
    assert_eq!(w["cfg_scale"], 11.0);
    assert_eq!(w["checkpoint_id"], "cyberrealistic-v4");
    let tags = w["positive_prompt"].as_str().unwrap().matches("<lora:").count();
    assert_eq!(tags, w["adapters"].as_array().unwrap().len());

    let fewer = json(&manta(
        dir.path(),
        &["run", "--prompt", SAMURAI, "--seed", "9", "--details", "2", "--dump-workflow"],
    ));
    assert!(fewer["positive_prompt"].as_str().unwrap().len() < w["positive_prompt"].as_str().unwrap().len());
}

#[test]
fn run_then_refine() {
    let dir = ingested();
    let record = json(&manta(dir.path(), &["run", "--prompt", SAMURAI, "--seed", "5"]));
    let id = record["request_id"].as_str().unwrap();
    assert_eq!(record["images"].as_array().unwrap().len(), 3);
    let child = json(&manta(dir.path(), &["refine", "--run", id, "--image", "1", "--denoise", "0.3"]));
    assert_eq!(child["parent_id"], id);
    assert_eq!(child["refine_source"]["image_index"], 1);
    assert_eq!(child["refine_source"]["denoise"], 0.3);

    let out = manta(dir.path(), &["refine", "--run", id, "--image", "7"]);
    assert!(!out.status.success());
    let out = manta(dir.path(), &["refine", "--run", "run-000099-00000000", "--image", "0"]);
    assert!(!out.status.success());
}

#[test]
fn stage_failures_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = manta(dir.path(), &["run", "--prompt", SAMURAI]);
    assert_eq!(out.status.code(), Some(2));
    let record: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(record["failure"]["stage"], "select_checkpoint");

    let dir = ingested();
    let out = manta(dir.path(), &["run", "--prompt", SAMURAI, "--budget", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn eval_prints_table_and_writes_report() {
    let dir = ingested();
    let prompts = dir.path().join("prompts.txt");
    std::fs::write(&prompts, "# eval set\na red fox in the snow\n\na knight at dawn\n").unwrap();
    let report = dir.path().join("report.json");
    let out = manta(
        dir.path(),
        &[
            "eval",
            "--prompts",
            prompts.to_str().unwrap(),
            "--against",
            "no-enhance",
            "--criteria",
            "diversity,alignment",
            "--out",
            report.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("full vs no-enhance over 2 prompts"), "{table}");
    assert!(table.lines().any(|l| l.starts_with("diversity")));
    assert!(!table.lines().any(|l| l.starts_with("quality")));
    let report: Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    assert_eq!(report["run"]["prompt_set"].as_array().unwrap().len(), 2);
    assert_eq!(report["summary"].as_array().unwrap().len(), 2);

    let bad = manta(dir.path(), &["eval", "--prompts", prompts.to_str().unwrap(), "--against", "base", "--criteria", "speed"]);
    assert!(!bad.status.success());
}

#[test]
fn config_file_is_honoured() {
    let dir = ingested();
    let config = dir.path().join("manta.toml");
    std::fs::write(
        &config,
        format!("data_dir = {:?}\n\n[knobs]\ncfg_scale = 3.5\nbatch_size = 2\nseed = 4\n", dir.path()),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_manta"))
        .arg("--config")
        .arg(&config)
        .args(["run", "--prompt", SAMURAI, "--dump-workflow"])
        .output()
        .unwrap();
    let w = json(&out);
    assert_eq!(w["cfg_scale"], 3.5);
    assert_eq!(w["batch_size"], 2);
    assert_eq!(w["seed"], 4);
}
