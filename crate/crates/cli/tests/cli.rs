//! End-to-end tests of the `idk` binary: the documented manual flow, the
//! config-driven pipeline, and the exit-code contract (0 success, 1
//! validation, 2 stage failure).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn idk() -> Command {
    Command::new(env!("CARGO_BIN_EXE_idk"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    idk()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_code(output: &Output, expected: i32) {
    let code = output.status.code().unwrap_or(-1);
    assert_eq!(
        code,
        expected,
        "expected exit {expected}, got {code}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn write_corpus(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("questions.jsonl");
    let mut lines = String::new();
    for i in 0..n {
        lines.push_str(&format!(
            "{{\"id\":\"q{i:03}\",\"question\":\"Question {i}?\",\"answers\":[\"answer{i}\"],\"source\":\"test\"}}\n"
        ));
    }
    std::fs::write(&path, lines).unwrap();
    path
}

fn count_lines(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .count()
}

#[test]
fn manual_flow_sample_label_sft_hir_bon_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_corpus(dir, 20);

    let sample = run(
        &[
            "sample",
            "--questions", "questions.jsonl",
            "--simulated-grid", "0.0,0.5,1.0",
            "--num-samples", "4",
            "--temperature", "1.0",
            "--top-p", "0.9",
            "--max-new-tokens", "512",
            "--seed", "7",
            "--out", "samples.jsonl",
        ],
        dir,
    );
    assert_code(&sample, 0);
    assert_eq!(count_lines(&dir.join("samples.jsonl")), 80);

    let label = run(
        &[
            "label",
            "--questions", "questions.jsonl",
            "--samples", "samples.jsonl",
            "--threshold", "1.0",
            "--out", "confidence.jsonl",
        ],
        dir,
    );
    assert_code(&label, 0);
    assert_eq!(count_lines(&dir.join("confidence.jsonl")), 20);

    let sft = run(
        &[
            "build-sft",
            "--questions", "questions.jsonl",
            "--confidence", "confidence.jsonl",
            "--threshold", "1.0",
            "--out", "idk_sft.jsonl",
        ],
        dir,
    );
    assert_code(&sft, 0);
    assert_eq!(count_lines(&dir.join("idk_sft.jsonl")), 20);

    let hir = run(
        &[
            "build-hir",
            "--questions", "questions.jsonl",
            "--confidence", "confidence.jsonl",
            "--thresholds", "0.1:1.1:0.1",
            "--out", "hir.jsonl",
        ],
        dir,
    );
    assert_code(&hir, 0);
    assert_eq!(count_lines(&dir.join("hir.jsonl")), 220);

    let bon = run(
        &[
            "bon",
            "--questions", "questions.jsonl",
            "--simulated-grid", "0.0,0.5,1.0",
            "--n", "10",
            "--scorer", "truthfulness",
            "--gold", "idk_sft.jsonl",
            "--seed", "8",
            "--out", "responses.jsonl",
        ],
        dir,
    );
    assert_code(&bon, 0);
    assert_eq!(count_lines(&dir.join("responses.jsonl")), 20);

    let eval = run(
        &[
            "eval",
            "--questions", "questions.jsonl",
            "--gold", "idk_sft.jsonl",
            "--responses", "responses.jsonl",
            "--out-dir", ".",
        ],
        dir,
    );
    assert_code(&eval, 0);
    assert!(dir.join("quadrants.jsonl").exists());
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("label,n,ik_ik_rate"));

    let report = run(
        &[
            "report",
            "--quadrants", "quadrants.jsonl",
            "--confidence", "confidence.jsonl",
            "--chart",
            "--out-dir", ".",
        ],
        dir,
    );
    assert_code(&report, 0);
    assert!(dir.join("report.csv").exists());
    assert!(dir.join("chart.svg").exists());
    assert_eq!(count_lines(&dir.join("label_distribution.csv")), 12); // header + 11 thresholds
}

#[test]
fn sample_resume_completes_partial_file() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_corpus(dir, 5);
    let args = [
        "sample",
        "--questions", "questions.jsonl",
        "--simulated-p", "0.5",
        "--num-samples", "4",
        "--seed", "3",
        "--out", "samples.jsonl",
    ];
    assert_code(&run(&args, dir), 0);
    let full = std::fs::read_to_string(dir.join("samples.jsonl")).unwrap();

    // Truncate to the first 7 lines and resume.
    let partial: String = full.lines().take(7).map(|l| format!("{l}\n")).collect();
    std::fs::write(dir.join("samples.jsonl"), partial).unwrap();
    let mut resume_args = args.to_vec();
    resume_args.push("--resume");
    let resumed = run(&resume_args, dir);
    assert_code(&resumed, 0);
    assert!(String::from_utf8_lossy(&resumed.stderr).contains("13 requested this run"));
    assert_eq!(std::fs::read_to_string(dir.join("samples.jsonl")).unwrap(), full);
}

#[test]
fn build_prefs_two_phase_flow() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_corpus(dir, 16);
    assert_code(
        &run(
            &[
                "sample",
                "--questions", "questions.jsonl",
                "--simulated-grid", "0.0,1.0",
                "--num-samples", "3",
                "--seed", "1",
                "--out", "samples.jsonl",
            ],
            dir,
        ),
        0,
    );
    assert_code(
        &run(
            &[
                "label",
                "--questions", "questions.jsonl",
                "--samples", "samples.jsonl",
                "--out", "confidence.jsonl",
            ],
            dir,
        ),
        0,
    );
    assert_code(
        &run(
            &[
                "build-sft",
                "--questions", "questions.jsonl",
                "--confidence", "confidence.jsonl",
                "--out", "idk_sft.jsonl",
            ],
            dir,
        ),
        0,
    );

    // Phase 1: halves only.
    let phase1 = run(
        &[
            "build-prefs",
            "--questions", "questions.jsonl",
            "--sft", "idk_sft.jsonl",
            "--seed", "5",
            "--out-dir", "prefs_out",
        ],
        dir,
    );
    assert_code(&phase1, 0);
    let out_dir = dir.join("prefs_out");
    assert_eq!(count_lines(&out_dir.join("warmup_half.jsonl")), 8);
    assert_eq!(count_lines(&out_dir.join("pref_half_questions.jsonl")), 8);
    assert!(!out_dir.join("prefs.jsonl").exists());

    // Phase 2: sample the "SFT model" on the pref half, then build pairs.
    assert_code(
        &run(
            &[
                "sample",
                "--questions", "prefs_out/pref_half_questions.jsonl",
                "--simulated-p", "0.5",
                "--num-samples", "6",
                "--seed", "2",
                "--out", "sft_samples.jsonl",
            ],
            dir,
        ),
        0,
    );
    let phase2 = run(
        &[
            "build-prefs",
            "--questions", "questions.jsonl",
            "--sft", "idk_sft.jsonl",
            "--seed", "5",
            "--samples", "sft_samples.jsonl",
            "--out-dir", "prefs_out",
        ],
        dir,
    );
    assert_code(&phase2, 0);
    let pairs = count_lines(&out_dir.join("prefs.jsonl"))
        + count_lines(&out_dir.join("prefs_val.jsonl"));
    let skips = count_lines(&out_dir.join("prefs_skips.jsonl"));
    assert_eq!(pairs + skips, 8);
}

#[test]
fn loss_check_evaluates_requests() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    std::fs::write(
        dir.join("losses.jsonl"),
        concat!(
            "{\"kind\":\"sft\",\"logprobs\":[-0.5,-1.5,-1.0]}\n",
            "{\"kind\":\"dpo\",\"policy_chosen\":-1.0,\"policy_rejected\":-4.0,\"ref_chosen\":-2.0,\"ref_rejected\":-3.0,\"beta\":0.1}\n",
            "{\"kind\":\"rm\",\"reward_chosen\":1.0,\"reward_rejected\":1.0}\n",
            "{\"kind\":\"ppo_critic\",\"value\":0.3,\"old_value\":0.0,\"return_estimate\":0.0,\"epsilon\":0.1}\n",
        ),
    )
    .unwrap();
    let output = run(
        &["loss-check", "--input", "losses.jsonl", "--out", "losses_out.jsonl"],
        dir,
    );
    assert_code(&output, 0);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(dir.join("losses_out.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert!((lines[0]["loss"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((lines[1]["loss"].as_f64().unwrap() - 0.5981388693815918).abs() < 1e-9);
    assert!((lines[2]["loss"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((lines[3]["loss"].as_f64().unwrap() - 0.045).abs() < 1e-12);
}

fn pipeline_config(dir: &Path) -> PathBuf {
    let config = serde_json::json!({
        "corpus": {"path": dir.join("questions.jsonl"), "format": "generic-jsonl"},
        "stages": ["sample", "label", "build-sft", "bon", "eval", "report"],
        "sample": {
            "backend": {"simulated": {"correctness": {"grid": [0.0, 0.5, 1.0]}, "refusal": {"constant": 0.0}}},
            "params": {"num_samples": 4, "seed": 21}
        },
        "label": {"threshold": 1.0},
        "bon": {"n": 4, "seed": 22, "scorer": "truthfulness"}
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn run_pipeline_then_cached_then_forced_identical() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_corpus(dir, 12);
    pipeline_config(dir);

    let first = run(&["run", "--config", "run.json", "--out-dir", "out"], dir);
    assert_code(&first, 0);
    let out = dir.join("out");
    for name in ["samples.jsonl", "confidence.jsonl", "idk_sft.jsonl", "responses.jsonl", "quadrants.jsonl", "metrics.csv", "report.csv", "manifest.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let samples_before = std::fs::read(out.join("samples.jsonl")).unwrap();

    let second = run(&["run", "--config", "run.json", "--out-dir", "out"], dir);
    assert_code(&second, 0);
    assert!(String::from_utf8_lossy(&second.stderr).contains("Cached"));

    let forced = run(
        &["run", "--config", "run.json", "--out-dir", "out", "--force"],
        dir,
    );
    assert_code(&forced, 0);
    assert!(!String::from_utf8_lossy(&forced.stderr).contains("Cached"));
    assert_eq!(
        std::fs::read(out.join("samples.jsonl")).unwrap(),
        samples_before,
        "--force must reproduce identical content under fixed seeds"
    );
}

#[test]
fn run_flags_override_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_corpus(dir, 8);
    let config = serde_json::json!({
        "corpus": {"path": dir.join("questions.jsonl")},
        "stages": ["sample", "label", "build-sft"],
        "sample": {
            "backend": {"simulated": {"correctness": {"constant": 0.5}, "refusal": {"constant": 0.0}}},
            "params": {"num_samples": 4, "seed": 1}
        },
        "label": {"threshold": 1.0}
    });
    std::fs::write(dir.join("run.json"), config.to_string()).unwrap();
    let output = run(
        &[
            "run",
            "--config", "run.json",
            "--out-dir", "out",
            "--threshold", "0.5",
            "--seed", "9",
        ],
        dir,
    );
    assert_code(&output, 0);
    let sft = std::fs::read_to_string(dir.join("out/idk_sft.jsonl")).unwrap();
    for line in sft.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["ik_threshold"], 0.5, "flag must override config threshold");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seeds"]["sample"], 9);
}

#[test]
fn validation_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_corpus(dir, 3);

    // Missing backend selection.
    let no_backend = run(
        &["sample", "--questions", "questions.jsonl"],
        dir,
    );
    assert_code(&no_backend, 1);

    // Bad threshold.
    let bad_threshold = run(
        &[
            "label",
            "--questions", "questions.jsonl",
            "--samples", "missing.jsonl",
            "--threshold", "1.5",
        ],
        dir,
    );
    assert_code(&bad_threshold, 1);

    // Unknown flag (argument error).
    let bad_flag = run(&["sample", "--frobnicate"], dir);
    assert_code(&bad_flag, 1);

    // Pipeline config requesting eval without gold labels.
    let config = serde_json::json!({
        "corpus": {"path": dir.join("questions.jsonl")},
        "stages": ["eval"]
    });
    std::fs::write(dir.join("bad.json"), config.to_string()).unwrap();
    let bad_config = run(
        &["run", "--config", "bad.json", "--out-dir", "out"],
        dir,
    );
    assert_code(&bad_config, 1);
    assert!(String::from_utf8_lossy(&bad_config.stderr).contains("gold"));
}

#[test]
fn stage_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_corpus(dir, 3);

    // Confidence rows referencing unknown questions fail the build stage.
    std::fs::write(
        dir.join("confidence.jsonl"),
        "{\"question_id\":\"ghost\",\"num_samples\":2,\"num_correct\":2,\"confidence\":1.0,\"correct_responses\":[\"a\",\"b\"],\"incorrect_responses\":[],\"refusal_count\":0}\n",
    )
    .unwrap();
    let dangling = run(
        &[
            "build-sft",
            "--questions", "questions.jsonl",
            "--confidence", "confidence.jsonl",
        ],
        dir,
    );
    assert_code(&dangling, 2);

    // A pipeline whose label stage reads a corrupt samples file fails with
    // exit 2 and a failed stage in the manifest.
    std::fs::write(dir.join("samples.jsonl"), "not json\n").unwrap();
    let config = serde_json::json!({
        "corpus": {"path": dir.join("questions.jsonl")},
        "stages": ["label"]
    });
    std::fs::write(dir.join("run.json"), config.to_string()).unwrap();
    let broken = run(
        &["run", "--config", "run.json", "--out-dir", "."],
        dir,
    );
    assert_code(&broken, 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stages"][0]["status"], "failed");
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_code(&run(&["--help"], dir.path()), 0);
    assert_code(&run(&["--version"], dir.path()), 0);
}

#[test]
fn force_idk_builds_all_refusal_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_corpus(dir, 5);
    let output = run(
        &[
            "build-sft",
            "--questions", "questions.jsonl",
            "--force-idk",
            "--out", "alcuna_sft.jsonl",
        ],
        dir,
    );
    assert_code(&output, 0);
    let rows = std::fs::read_to_string(dir.join("alcuna_sft.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 5);
    for line in rows.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["label"], "IDK");
        assert!(row["response"]
            .as_str()
            .unwrap()
            .contains("beyond the scope of my knowledge"));
    }
}
