//! End-to-end tests of the `kgverify` binary: every command runs against the
//! shipped fixture corpus inside a scratch working directory, and assertions
//! cover stdout, exit codes, and the stamped artifacts left behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kgverify::agent::SessionRecord;
use kgverify::Label;
use tempfile::TempDir;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .canonicalize()
        .expect("fixture corpus exists")
}

fn run_in(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgverify"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary launches")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

/// A config file equivalent to the shipped demo, with absolute input paths
/// and every output kept inside the scratch directory.
fn write_config(dir: &Path, name: &str, backend_script: &Path) -> PathBuf {
    let fx = fixtures();
    let text = format!(
        r#"
[dataset]
dir = "{graph}"
typing_relations = ["P31"]

[backend]
kind = "scripted"
script = "{script}"

[wiki]
kind = "fixture"
path = "{wiki}"

[web]
kind = "fixture"
path = "{web}"

[memory]
path = "{memory}"

[sample]
n = 4
seed = 13

[output]
dir = "{out}"
{extra}
"#,
        graph = fx.join("graph").display(),
        script = backend_script.display(),
        wiki = fx.join("wiki.tsv").display(),
        web = fx.join("web.tsv").display(),
        memory = fx.join("memory.jsonl").display(),
        out = dir.join("runs").display(),
    );
    let path = dir.join(name);
    fs::write(&path, text).expect("config written");
    path
}

fn demo_script() -> PathBuf {
    fixtures().join("scripts/demo_replay.jsonl")
}

fn parse_sessions(path: &Path) -> (serde_json::Value, Vec<SessionRecord>) {
    let text = fs::read_to_string(path).expect("sessions file");
    let mut lines = text.lines();
    let header: serde_json::Value =
        serde_json::from_str(lines.next().expect("header line")).expect("header parses");
    let records = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| SessionRecord::from_json_line(l).expect("record parses"))
        .collect();
    (header, records)
}

#[test]
fn ingest_reports_counts_then_hits_the_cache() {
    let tmp = TempDir::new().unwrap();
    let extra = format!("[dataset.cache]"); // placeholder replaced below
    drop(extra);
    // The cache key is a dataset-relative path; point it into the scratch
    // dir via an absolute path instead of polluting the fixture tree.
    let fx = fixtures();
    let config = tmp.path().join("cfg.toml");
    fs::write(
        &config,
        format!(
            r#"
[dataset]
dir = "{graph}"
cache = "{cache}"

[backend]
kind = "scripted"
script = "{script}"

[output]
dir = "{out}"
"#,
            graph = fx.join("graph").display(),
            cache = tmp.path().join("graph.kgvc").display(),
            script = demo_script().display(),
            out = tmp.path().join("runs").display(),
        ),
    )
    .unwrap();

    let first = run_in(tmp.path(), &["--config", config.to_str().unwrap(), "ingest"]);
    assert_eq!(code(&first), 0, "stderr: {}", stderr(&first));
    let text = stdout(&first);
    assert!(text.contains("10 entities / 6 relations / 12 triples"), "{text}");
    assert!(text.contains("cache: written"), "{text}");

    let second = run_in(tmp.path(), &["--config", config.to_str().unwrap(), "ingest"]);
    assert_eq!(code(&second), 0);
    assert!(stdout(&second).contains("cache: hit"), "{}", stdout(&second));

    // The effective config travels next to the artifacts.
    let runs: Vec<_> = fs::read_dir(tmp.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(
        runs.iter().any(|name| name.starts_with("config-") && name.ends_with(".toml")),
        "{runs:?}"
    );
}

#[test]
fn missing_dataset_file_exits_one_and_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("cfg.toml");
    fs::write(
        &config,
        format!(
            r#"
[dataset]
dir = "{dir}"

[backend]
kind = "scripted"
script = "{script}"
"#,
            dir = tmp.path().join("nowhere").display(),
            script = demo_script().display(),
        ),
    )
    .unwrap();
    let output = run_in(tmp.path(), &["--config", config.to_str().unwrap(), "ingest"]);
    assert_eq!(code(&output), 1);
    assert!(stderr(&output).contains("nowhere"), "{}", stderr(&output));
}

#[test]
fn sample_balances_labels_and_repeats_bytewise_under_one_seed() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "cfg.toml", &demo_script(), "");
    let cfg = config.to_str().unwrap();
    let out_a = tmp.path().join("a.jsonl");
    let out_b = tmp.path().join("b.jsonl");

    for out in [&out_a, &out_b] {
        let output = run_in(
            tmp.path(),
            &["--config", cfg, "sample", "--out", out.to_str().unwrap()],
        );
        assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
        assert!(stdout(&output).contains("2 positive / 2 negative"));
    }
    assert_eq!(
        fs::read(&out_a).unwrap(),
        fs::read(&out_b).unwrap(),
        "one seed, one file"
    );

    let text = fs::read_to_string(&out_a).unwrap();
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["format"], "kgverify/testset");
    assert_eq!(header["seed"], 13);
    assert_eq!(header["count"], 4);

    // A different seed is a different effective config, and the stamp shows it.
    let output = run_in(
        tmp.path(),
        &["--config", cfg, "sample", "--seed", "99", "--out", out_b.to_str().unwrap()],
    );
    assert_eq!(code(&output), 0);
    let other = fs::read_to_string(&out_b).unwrap();
    let other_header: serde_json::Value =
        serde_json::from_str(other.lines().next().unwrap()).unwrap();
    assert_ne!(other_header["config_checksum"], header["config_checksum"]);
}

#[test]
fn sample_rejects_odd_or_oversized_counts() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "cfg.toml", &demo_script(), "");
    let cfg = config.to_str().unwrap();

    let odd = run_in(tmp.path(), &["--config", cfg, "sample", "--n", "5"]);
    assert_eq!(code(&odd), 1);
    assert!(stderr(&odd).contains("even"), "{}", stderr(&odd));

    let oversized = run_in(tmp.path(), &["--config", cfg, "sample", "--n", "100"]);
    assert_eq!(code(&oversized), 1);
    assert!(
        stderr(&oversized).contains("only 6 positives are available"),
        "{}",
        stderr(&oversized)
    );
}

#[test]
fn verify_single_claim_resolves_names_and_prints_the_chain() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "cfg.toml", &demo_script(), "");
    let output = run_in(
        tmp.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "verify",
            "--triple",
            "Elon Musk|CEO|Tesla",
        ],
    );
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("(Q317521 Elon Musk, P169 chief executive officer, Q478214 Tesla, Inc.)"), "{text}");
    assert!(text.contains("verdict: Correct"), "{text}");
    assert!(text.contains("evidence:"), "{text}");
    assert!(text.contains("1 sessions (0 failed)"), "{text}");
}

#[test]
fn verify_batch_replays_deterministically() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "cfg.toml", &demo_script(), "");
    let cfg = config.to_str().unwrap();
    let testset = fixtures().join("testset.jsonl");
    let out_a = tmp.path().join("a.jsonl");
    let out_b = tmp.path().join("b.jsonl");

    for out in [&out_a, &out_b] {
        let output = run_in(
            tmp.path(),
            &[
                "--config",
                cfg,
                "verify",
                "--testset",
                testset.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ],
        );
        assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
        assert!(stdout(&output).contains("2 sessions (0 failed)"));
    }

    let (header_a, records_a) = parse_sessions(&out_a);
    let (header_b, records_b) = parse_sessions(&out_b);
    assert_eq!(header_a, header_b);
    assert_eq!(header_a["format"], "kgverify/sessions");
    assert_eq!(records_a.len(), 2);

    let canon = |records: &[SessionRecord]| -> Vec<SessionRecord> {
        records.iter().map(SessionRecord::canonical).collect()
    };
    assert_eq!(canon(&records_a), canon(&records_b), "replays are bitwise-stable");

    assert_eq!(records_a[0].truth, Some(Label::Correct));
    assert_eq!(records_a[0].verdict.label, Some(Label::Correct));
    assert_eq!(records_a[1].truth, Some(Label::Incorrect));
    assert_eq!(records_a[1].verdict.label, Some(Label::Incorrect));
}

#[test]
fn flag_overrides_reach_the_records() {
    let tmp = TempDir::new().unwrap();
    let script = tmp.path().join("zeroshot.jsonl");
    fs::write(
        &script,
        r#"{"match": "SYSTEM ALERT", "reply": "Final Answer: [Incorrect] Because the claim contradicts the catalog."}"#,
    )
    .unwrap();
    let config = write_config(tmp.path(), "cfg.toml", &script, "");
    let out = tmp.path().join("sessions.jsonl");
    let output = run_in(
        tmp.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "verify",
            "--mode",
            "zeroshot",
            "--ablate",
            "memory",
            "--triple",
            "Elon Musk|CEO|Tesla",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    let (_, records) = parse_sessions(&out);
    assert_eq!(records.len(), 1);
    let line = records[0].to_json_line();
    assert!(line.contains("\"zero-shot\""), "{line}");
    assert!(!records[0].ablations.memory);
    assert!(records[0].steps.is_empty());
}

#[test]
fn backend_outage_records_error_verdicts_and_exits_two() {
    let tmp = TempDir::new().unwrap();
    let script = tmp.path().join("dead.jsonl");
    fs::write(&script, "").unwrap();
    let config = write_config(tmp.path(), "cfg.toml", &script, "");
    let out = tmp.path().join("sessions.jsonl");
    let output = run_in(
        tmp.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "verify",
            "--testset",
            fixtures().join("testset.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&output), 2, "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("2 sessions (2 failed)"));
    assert!(stderr(&output).contains("partial failure"));

    // The run still leaves a complete, parseable artifact behind.
    let (_, records) = parse_sessions(&out);
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(SessionRecord::backend_failure));
    assert!(records.iter().all(|r| !r.verdict.valid_format));
}

#[test]
fn report_scores_a_perfect_run_and_checks_alignment() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "cfg.toml", &demo_script(), "");
    let cfg = config.to_str().unwrap();
    let testset = fixtures().join("testset.jsonl");
    let sessions = tmp.path().join("sessions.jsonl");
    let verify = run_in(
        tmp.path(),
        &[
            "--config",
            cfg,
            "verify",
            "--testset",
            testset.to_str().unwrap(),
            "--out",
            sessions.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&verify), 0, "stderr: {}", stderr(&verify));

    let report_out = tmp.path().join("report.txt");
    let report = run_in(
        tmp.path(),
        &[
            "--config",
            cfg,
            "report",
            "--sessions",
            sessions.to_str().unwrap(),
            "--testset",
            testset.to_str().unwrap(),
            "--out",
            report_out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&report), 0, "stderr: {}", stderr(&report));
    let text = stdout(&report);
    assert!(text.contains("Accuracy: 100.0"), "{text}");
    assert!(text.contains("KG_Definition"), "{text}");
    assert!(text.contains("Avg. cost per sample"), "{text}");
    let written = fs::read_to_string(&report_out).unwrap();
    assert!(written.starts_with("# kgverify/report v1 config="), "{written}");

    // Flipping the test-set labels must break alignment loudly.
    let flipped: String = fs::read_to_string(&testset)
        .unwrap()
        .replace("\"Correct\"", "\"__tmp__\"")
        .replace("\"Incorrect\"", "\"Correct\"")
        .replace("\"__tmp__\"", "\"Incorrect\"");
    let flipped_path = tmp.path().join("flipped.jsonl");
    fs::write(&flipped_path, flipped).unwrap();
    let mismatch = run_in(
        tmp.path(),
        &[
            "--config",
            cfg,
            "report",
            "--sessions",
            sessions.to_str().unwrap(),
            "--testset",
            flipped_path.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&mismatch), 1);
    assert!(stderr(&mismatch).contains("labeled"), "{}", stderr(&mismatch));
}

#[test]
fn report_refuses_mixed_checksums_unless_forced() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "cfg.toml", &demo_script(), "");
    let cfg = config.to_str().unwrap();
    let testset = fixtures().join("testset.jsonl");
    let run_a = tmp.path().join("a.jsonl");
    let run_b = tmp.path().join("b.jsonl");

    // Same command, two different seeds: two different effective configs.
    for (out, seed) in [(&run_a, "13"), (&run_b, "99")] {
        let output = run_in(
            tmp.path(),
            &[
                "--config",
                cfg,
                "--seed",
                seed,
                "verify",
                "--testset",
                testset.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ],
        );
        assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    }

    let refused = run_in(
        tmp.path(),
        &[
            "--config",
            cfg,
            "report",
            "--sessions",
            run_a.to_str().unwrap(),
            "--sessions",
            run_b.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&refused), 1);
    assert!(
        stderr(&refused).contains("different config checksums"),
        "{}",
        stderr(&refused)
    );

    let forced = run_in(
        tmp.path(),
        &[
            "--config",
            cfg,
            "report",
            "--sessions",
            run_a.to_str().unwrap(),
            "--sessions",
            run_b.to_str().unwrap(),
            "--force",
            "--testset",
            testset.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&forced), 0, "stderr: {}", stderr(&forced));
    assert!(stdout(&forced).contains("Accuracy: 100.0"), "{}", stdout(&forced));
}

#[test]
fn report_on_an_empty_session_file_notices_and_exits_zero() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "cfg.toml", &demo_script(), "");
    let empty = tmp.path().join("empty.jsonl");
    fs::write(
        &empty,
        "{\"format\":\"kgverify/sessions\",\"version\":1,\"config_checksum\":\"0\",\"count\":0}\n",
    )
    .unwrap();
    let output = run_in(
        tmp.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "report",
            "--sessions",
            empty.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&output), 0, "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("no session records"), "{}", stdout(&output));
}

#[test]
fn shipped_demo_config_runs_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let config = fixtures().join("config/demo.toml");
    let cfg = config.to_str().unwrap();
    let testset = fixtures().join("testset.jsonl");

    let ingest = run_in(tmp.path(), &["--config", cfg, "ingest"]);
    assert_eq!(code(&ingest), 0, "stderr: {}", stderr(&ingest));
    assert!(stdout(&ingest).contains("10 entities / 6 relations / 12 triples"));

    let verify = run_in(
        tmp.path(),
        &["--config", cfg, "verify", "--testset", testset.to_str().unwrap()],
    );
    assert_eq!(code(&verify), 0, "stderr: {}", stderr(&verify));

    let report = run_in(
        tmp.path(),
        &[
            "--config",
            cfg,
            "report",
            "--sessions",
            "runs/sessions.jsonl",
            "--testset",
            testset.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&report), 0, "stderr: {}", stderr(&report));
    assert!(stdout(&report).contains("Accuracy: 100.0"), "{}", stdout(&report));
}

#[test]
fn unknown_flag_values_exit_one() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "cfg.toml", &demo_script(), "");
    let output = run_in(
        tmp.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "--mode",
            "telepathy",
            "ingest",
        ],
    );
    assert_eq!(code(&output), 1, "stderr: {}", stderr(&output));
}
