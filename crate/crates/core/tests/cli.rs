use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn choreoflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_choreoflow"))
        .args(args)
        .env_remove("CHOREOFLOW_SCHEMA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn qc_eval_verdicts() {
    let pass = choreoflow(&["qc", "eval", &s(&fixtures().join("qc/batch_29_of_30.json"))]);
    assert_eq!(pass.status.code(), Some(0));
    assert_eq!(
        stdout(&pass).trim(),
        "batch 7: pass (29/30 acceptable, rate 0.9667)"
    );
    let fail = choreoflow(&["qc", "eval", &s(&fixtures().join("qc/batch_28_of_30.json"))]);
    assert_eq!(fail.status.code(), Some(0));
    assert!(stdout(&fail).contains("batch 8: fail (28/30"));
}

#[test]
fn qc_eval_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.jsonl");
    std::fs::write(
        &path,
        "{\"batch_id\": 1, \"scores\": [5, 5, 3]}\n{\"batch_id\": 2, \"scores\": [1, 5]}\n",
    )
    .unwrap();
    let out = choreoflow(&["qc", "eval", "--json", &s(&path)]);
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["verdict"], "pass");
    assert_eq!(lines[1]["verdict"], "fail");

    std::fs::write(&path, "[3, 9]").unwrap();
    let bad = choreoflow(&["qc", "eval", &s(&path)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("ChoreoError"));
}

#[test]
fn qc_plan_sizes() {
    let out = choreoflow(&[
        "qc",
        "plan",
        "--total",
        "20000",
        "--batches",
        "100",
        "--n",
        "30",
        "--seed",
        "1",
    ]);
    assert!(out.status.success());
    let plan: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let batches = plan["batches"].as_array().unwrap();
    assert_eq!(batches.len(), 100);
    assert!(batches
        .iter()
        .all(|b| b["members"].as_array().unwrap().len() == 200));
    assert!(batches
        .iter()
        .all(|b| b["sampled"].as_array().unwrap().len() == 30));
}

#[test]
fn usage_errors_exit_two() {
    let out = choreoflow(&["qc", "plan", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
    assert_eq!(choreoflow(&[]).status.code(), Some(2));
    assert_eq!(choreoflow(&["--help"]).status.code(), Some(0));
}

#[test]
fn sample_defaults_in_help() {
    let out = choreoflow(&["sample", "--help"]);
    let help = stdout(&out);
    assert!(help.contains("--steps <STEPS>") && help.contains("[default: 50]"));
    assert!(help.contains("[default: 1]"), "{help}");
}

#[test]
fn learned_encoder_protocol_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = choreoflow(&[
        "eval",
        "--protocol",
        "humanml3d",
        "--real",
        &s(dir.path()),
        "--gen",
        &s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("EvalError"));
}

#[test]
fn choreo_validate_and_tokens() {
    let valid = fixtures().join("choreo/valid/v05_alias_plane.json");
    let invalid = fixtures().join("choreo/invalid/i15_mixed.json");
    let ok = choreoflow(&["choreo", "validate", &s(&valid)]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("warning: phrases[0].space.plane `frontal`"));
    let bad = choreoflow(&["choreo", "validate", "--json", &s(&valid), &s(&invalid)]);
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&stdout(&bad)).unwrap();
    assert_eq!(report[1]["valid"], false);
    assert_eq!(report[1]["diagnostics"].as_array().unwrap().len(), 3);

    let tokens = choreoflow(&[
        "choreo",
        "tokens",
        &s(&fixtures().join("choreo/valid/v01_arm_raise.json")),
    ]);
    assert!(tokens.status.success());
    let ids: Vec<u32> = serde_json::from_str(&stdout(&tokens)).unwrap();
    assert_eq!(ids.len(), 17 + 1 + 5);
    assert_eq!(ids[0], 2);
}

#[test]
fn schema_search_path() {
    let dir = tempfile::tempdir().unwrap();
    let doc = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas/chain3.schema"),
    )
    .unwrap();
    std::fs::write(
        dir.path().join("mychain.schema"),
        doc.replace("name = chain3", "name = mychain"),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_choreoflow"))
        .args(["schema", "check", "mychain"])
        .env("CHOREOFLOW_SCHEMA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["name"], "mychain");
    assert_eq!(summary["native_pose_dim"], 13);

    let missing = choreoflow(&["schema", "check", "mychain"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("SchemaError"));
}

#[test]
fn motion_file_errors_surface() {
    let dir = fixtures().join("formats");
    let tmp = tempfile::tempdir().unwrap();
    let out_path = tmp.path().join("x.dfc");
    for (name, needle) in [
        ("chain3_truncated.dfm", "truncated"),
        ("chain3_bad_magic.dfm", "DFM0"),
        ("chain3_version2.dfm", "version 2"),
    ] {
        let out = choreoflow(&[
            "--schema",
            "chain3",
            "encode",
            &s(&dir.join(name)),
            &s(&out_path),
        ]);
        assert_eq!(out.status.code(), Some(1), "{name}");
        let err = stderr(&out);
        assert!(
            err.contains("IoError") && err.contains(needle),
            "{name}: {err}"
        );
    }
    // a chain3 file read as mhr260: hash mismatch warns, --strict refuses
    let mismatch = choreoflow(&[
        "--strict",
        "encode",
        &s(&dir.join("chain3_valid.dfm")),
        &s(&out_path),
    ]);
    assert_eq!(mismatch.status.code(), Some(1));
}

#[test]
fn encode_decode_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fixtures().join("formats/chain3_valid.dfm");
    let stats = tmp.path().join("stats.json");
    let motions = tmp.path().join("motions");
    std::fs::create_dir(&motions).unwrap();
    std::fs::copy(&src, motions.join("a.dfm")).unwrap();
    let fit = choreoflow(&[
        "--schema",
        "chain3",
        "stats",
        "fit",
        &s(&motions),
        "-o",
        &s(&stats),
    ]);
    assert!(fit.status.success(), "{}", stderr(&fit));
    let dfc = tmp.path().join("a.dfc");
    let back = tmp.path().join("back.dfm");
    assert!(choreoflow(&[
        "--schema",
        "chain3",
        "encode",
        &s(&src),
        &s(&dfc),
        "--stats",
        &s(&stats)
    ])
    .status
    .success());
    let no_stats = choreoflow(&["--schema", "chain3", "decode", &s(&dfc), &s(&back)]);
    assert_eq!(no_stats.status.code(), Some(1));
    let dec = choreoflow(&[
        "--schema",
        "chain3",
        "decode",
        &s(&dfc),
        &s(&back),
        "--stats",
        &s(&stats),
    ]);
    assert!(dec.status.success(), "{}", stderr(&dec));
    let a = std::fs::read(&src).unwrap();
    let b = std::fs::read(&back).unwrap();
    assert_eq!(a.len(), b.len());
    assert_eq!(a[..56], b[..56]);
    // continuous files carry no identity; frames survive to f32 precision
    let frames = 56 + 4 * 68;
    for (x, y) in a[frames..].chunks(4).zip(b[frames..].chunks(4)) {
        let (x, y) = (
            f32::from_le_bytes(x.try_into().unwrap()),
            f32::from_le_bytes(y.try_into().unwrap()),
        );
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
}

#[test]
fn synth_train_sample_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    let run = tmp.path().join("run");
    let gen = tmp.path().join("gen");
    std::fs::create_dir(&gen).unwrap();
    let synth = choreoflow(&[
        "synth-dataset",
        "-o",
        &s(&corpus),
        "--per-class",
        "3",
        "--frames",
        "16",
    ]);
    assert!(synth.status.success(), "{}", stderr(&synth));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(corpus.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 6);

    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "preset = \"desk\"\ncheckpoint_every = 2\n[train]\nsteps = 4\nbatch_size = 2\n",
    )
    .unwrap();
    let train = choreoflow(&[
        "train",
        "--config",
        &s(&config),
        "--corpus",
        &s(&corpus),
        "--out",
        &s(&run),
    ]);
    assert!(train.status.success(), "{}", stderr(&train));
    assert_eq!(
        std::fs::read_to_string(run.join("train_log.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    assert!(run.join("final.dfck").is_file() && run.join("stats.json").is_file());

    std::fs::write(&config, "unknown_key = 1\n").unwrap();
    let bad = choreoflow(&[
        "train",
        "--config",
        &s(&config),
        "--corpus",
        &s(&corpus),
        "--out",
        &s(&run),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("ConfigError"));

    for (i, ann) in ["arm_raise_000", "leg_lift_000"].iter().enumerate() {
        let out = choreoflow(&[
            "sample",
            "--checkpoint",
            &s(&run.join("final.dfck")),
            "--annotation",
            &s(&corpus.join(format!("annotations/{ann}.json"))),
            "--frames",
            "16",
            "--steps",
            "4",
            "--seed",
            &i.to_string(),
            "-o",
            &s(&gen.join(format!("{ann}.dfm"))),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let eval = choreoflow(&[
        "eval",
        "--protocol",
        "aistpp",
        "--real",
        &s(&corpus),
        "--gen",
        &s(&gen),
    ]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    let report: serde_json::Value = serde_json::from_str(&stdout(&eval)).unwrap();
    assert!(report.is_object());
}
