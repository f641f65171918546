//! End-to-end tests of the installed binary: flags, exit codes, file
//! outputs, and config precedence.

mod common;

use std::path::Path;
use std::process::{Command, Output};

fn kg2tool(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kg2tool"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn synth_smoke_on_a_toy_kg() {
    let dir = tempfile::tempdir().unwrap();
    let kg = common::write_small_kg(dir.path());
    let out = kg2tool(
        &[
            "synth",
            "--kg",
            kg.to_str().unwrap(),
            "--patterns",
            "1p",
            "--per-pattern",
            "2",
            "--seed",
            "7",
            "--translator",
            "template",
            "--out",
            "toy.jsonl",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(dir.path().join("toy.jsonl")).unwrap();
    // 2 pairs of 1p: 5 records each plus 0–1 reviews.
    let lines = text.lines().count();
    assert!(
        (10..=12).contains(&lines),
        "unexpected record count {lines}"
    );
    let ids: std::collections::HashSet<String> = text
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["meta"]["sample_id"].as_str().unwrap().to_string()
        })
        .collect();
    assert_eq!(ids.len(), 2, "export should contain exactly 2 pairs");
    assert!(dir.path().join("toy.jsonl.manifest.json").exists());
}

#[test]
fn verify_passes_then_fails_on_tamper_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let kg = common::write_small_kg(dir.path());
    let kg_s = kg.to_str().unwrap().to_string();
    let out = kg2tool(
        &[
            "synth",
            "--kg",
            &kg_s,
            "--patterns",
            "2p,2in",
            "--per-pattern",
            "3",
            "--seed",
            "11",
            "--out",
            "d.jsonl",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);

    let verify = kg2tool(&["verify", "--kg", &kg_s, "--out", "d.jsonl"], dir.path());
    assert_exit(&verify, 0);
    let summary: serde_json::Value =
        serde_json::from_slice(&verify.stdout).expect("verify prints JSON");
    assert_eq!(summary["audit"]["step_mismatches"], 0);

    // One-byte tamper inside a recorded tool response.
    let path = dir.path().join("d.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut target = None;
    for (i, line) in lines.iter_mut().enumerate() {
        let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
        let Some(turns) = v["conversations"].as_array_mut() else {
            continue;
        };
        let Some(obs) = turns.iter_mut().find(|t| t["from"] == "observation") else {
            continue;
        };
        let original = obs["value"].as_str().unwrap().to_string();
        let mut bytes = original.clone().into_bytes();
        let pos = bytes.iter().position(|b| b.is_ascii_digit()).unwrap();
        bytes[pos] = if bytes[pos] == b'9' { b'8' } else { b'9' };
        obs["value"] = serde_json::Value::String(String::from_utf8(bytes).unwrap());
        *line = serde_json::to_string(&v).unwrap();
        target = Some(i);
        break;
    }
    let target = target.expect("some trajectory line with a tool response");
    std::fs::write(&path, format!("{}\n", lines.join("\n"))).unwrap();

    let verify = kg2tool(&["verify", "--kg", &kg_s, "--out", "d.jsonl"], dir.path());
    assert_exit(&verify, 2);
    let stderr = String::from_utf8_lossy(&verify.stderr);
    assert!(
        stderr.contains(&format!("record {target}")),
        "stderr: {stderr}"
    );
}

#[test]
fn missing_seed_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let kg = common::write_small_kg(dir.path());
    let out = kg2tool(
        &[
            "synth",
            "--kg",
            kg.to_str().unwrap(),
            "--per-pattern",
            "1",
            "--out",
            "x.jsonl",
        ],
        dir.path(),
    );
    assert_exit(&out, 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[E_CONFIG]"), "stderr: {stderr}");
    assert!(stderr.contains("seed"), "stderr: {stderr}");
}

#[test]
fn unknown_pattern_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let kg = common::write_small_kg(dir.path());
    let out = kg2tool(
        &[
            "synth",
            "--kg",
            kg.to_str().unwrap(),
            "--patterns",
            "4p",
            "--per-pattern",
            "1",
            "--seed",
            "1",
            "--out",
            "x.jsonl",
        ],
        dir.path(),
    );
    assert_exit(&out, 1);
}

#[test]
fn config_file_supplies_values_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let kg = common::write_small_kg(dir.path());
    std::fs::write(
        dir.path().join("run.toml"),
        format!(
            "kg = {:?}\npatterns = [\"1p\"]\nper_pattern = 1\nseed = 3\nout = \"from_config.jsonl\"\n",
            kg.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = kg2tool(&["synth", "--config", "run.toml"], dir.path());
    assert_exit(&out, 0);
    assert!(dir.path().join("from_config.jsonl").exists());

    // The flag wins over the file.
    let out = kg2tool(
        &["synth", "--config", "run.toml", "--out", "flag_wins.jsonl"],
        dir.path(),
    );
    assert_exit(&out, 0);
    assert!(dir.path().join("flag_wins.jsonl").exists());
}

#[test]
fn sample_and_gen_apis_and_stats_run() {
    let dir = tempfile::tempdir().unwrap();
    let kg = common::write_small_kg(dir.path());
    let kg_s = kg.to_str().unwrap().to_string();

    let out = kg2tool(
        &[
            "sample",
            "--kg",
            &kg_s,
            "--patterns",
            "ip",
            "--per-pattern",
            "4",
            "--seed",
            "2",
            "--out",
            "samples.jsonl",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(dir.path().join("samples.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 4);

    let out = kg2tool(
        &["gen-apis", "--kg", &kg_s, "--out", "apis.jsonl"],
        dir.path(),
    );
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(dir.path().join("apis.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 12 * 2 + 3);

    let out = kg2tool(&["stats", "--kg", &kg_s], dir.path());
    assert_exit(&out, 0);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["kg"]["relations"], 12);
}

#[test]
fn determinism_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let kg = common::write_small_kg(dir.path());
    let kg_s = kg.to_str().unwrap().to_string();
    let digest_of = |name: &str, workers: &str| -> String {
        let out = kg2tool(
            &[
                "synth",
                "--kg",
                &kg_s,
                "--patterns",
                "1p,2i,up,pni",
                "--per-pattern",
                "5",
                "--seed",
                "21",
                "--workers",
                workers,
                "--out",
                name,
            ],
            dir.path(),
        );
        assert_exit(&out, 0);
        let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        summary["dataset_sha256"].as_str().unwrap().to_string()
    };
    let a = digest_of("w1.jsonl", "1");
    let b = digest_of("w4.jsonl", "4");
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(dir.path().join("w1.jsonl")).unwrap(),
        std::fs::read(dir.path().join("w4.jsonl")).unwrap()
    );
}
