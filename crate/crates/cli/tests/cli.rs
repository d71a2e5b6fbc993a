use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn icq() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_icq"));
    cmd.env_remove("ICQ_STORE_DIR")
        .env_remove("ICQ_BIND_ADDR")
        .env_remove("ICQ_MAX_UPLOAD")
        .env_remove("ICQ_SEED")
        .env_remove("RUST_LOG");
    cmd
}

fn run(args: &[&str], cwd: &Path) -> Output {
    icq().args(args).current_dir(cwd).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn planted(tmp: &Path) -> PathBuf {
    let out = run(&["fixture", "-o", "planted"], tmp);
    assert!(out.status.success(), "{}", stderr(&out));
    tmp.join("planted")
}

#[test]
fn cues_rank_the_planted_word_first() {
    let tmp = tempfile::tempdir().unwrap();
    planted(tmp.path());
    let out = run(&["cues", "planted", "-o", "out"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let cues = read_json(tmp.path().join("out/cues.json"));
    assert_eq!(cues["cues"][0]["feature"]["value"], "zork");
    assert_eq!(cues["cues"].as_array().unwrap().len(), 5);
    let csv = std::fs::read_to_string(tmp.path().join("out/cues.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("WORD,zork,"));
    assert!(csv.lines().last().unwrap().starts_with("SUM,,"));

    let out = run(&["cues", "planted", "-o", "top1", "--top", "1"], tmp.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("top1/cues.csv")).unwrap();
    // header, one cue, footer
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn cues_with_predictions_add_delta_columns() {
    let tmp = tempfile::tempdir().unwrap();
    planted(tmp.path());
    let out = run(
        &[
            "cues",
            "planted",
            "-o",
            "out",
            "--preds",
            "planted/predictions/gold.jsonl",
            "--preds",
            "A=planted/predictions/always-A.jsonl",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(tmp.path().join("out/cues.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "feature_kind,feature_value,cueness,A,gold"
    );
}

#[test]
fn missing_split_file_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = planted(tmp.path());
    std::fs::remove_file(dir.join("test.jsonl")).unwrap();
    let out = run(&["cues", "planted"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("test.jsonl"), "{}", stderr(&out));
}

#[test]
fn probe_reports_and_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    planted(tmp.path());
    let out = run(
        &[
            "probe",
            "planted",
            "--preds",
            "planted/predictions/always-A.jsonl",
            "--feature",
            "WORD:zork",
            "-o",
            "out",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let doc = read_json(tmp.path().join("out/probe-always-A.json"));
    let delta = doc["report"]["delta"].as_f64().unwrap();
    assert!((delta - 0.57).abs() < 0.03, "{delta}");
    assert_eq!(doc["report"]["verdict"], "exploits");
    assert!(tmp
        .path()
        .join("out/charts/WORD-zork-always-A.json")
        .exists());
    let stress =
        std::fs::read_to_string(tmp.path().join("out/stress-WORD-zork-always-A.jsonl")).unwrap();

    let again = run(
        &[
            "probe",
            "planted",
            "--preds",
            "planted/predictions/always-A.jsonl",
            "--feature",
            "WORD:zork",
            "-o",
            "again",
        ],
        tmp.path(),
    );
    assert!(again.status.success());
    let stress_again =
        std::fs::read_to_string(tmp.path().join("again/stress-WORD-zork-always-A.jsonl")).unwrap();
    assert_eq!(stress, stress_again);

    let out = run(
        &[
            "probe",
            "planted",
            "--preds",
            "planted/predictions/gold.jsonl",
            "--feature",
            "WORD:zork",
            "-o",
            "out",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let doc = read_json(tmp.path().join("out/probe-gold.json"));
    assert_eq!(doc["report"]["delta"], 0.0);
    assert_eq!(doc["report"]["verdict"], "resists");
}

#[test]
fn probing_an_unqualified_feature_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    planted(tmp.path());
    let out = run(
        &[
            "probe",
            "planted",
            "--preds",
            "planted/predictions/gold.jsonl",
            "--feature",
            "WORD:no",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("not qualified (support_mode=both, min_support=5)"),
        "{}",
        stderr(&out)
    );

    let out = run(
        &[
            "probe",
            "planted",
            "--preds",
            "planted/predictions/gold.jsonl",
            "--feature",
            "COLOR:red",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hypothesis_only_export_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = planted(tmp.path());
    let out = run(&["hypo-export", "planted", "-o", "hypo.jsonl"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let export = std::fs::read_to_string(tmp.path().join("hypo.jsonl")).unwrap();
    assert_eq!(export.lines().count(), 200);
    assert!(export
        .lines()
        .all(|l| serde_json::from_str::<Value>(l).unwrap()["premise"] == ""));

    let gold = "planted/predictions/gold.jsonl";
    let out = run(
        &[
            "hypo-report",
            "planted",
            "--full",
            gold,
            "--hypo",
            gold,
            "-o",
            "out",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(tmp.path().join("out/hypo.json"));
    assert_eq!(report["rows"][0]["full_minus_hypo"], 0.0);

    let text = std::fs::read_to_string(dir.join("predictions/gold.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    std::fs::write(
        tmp.path().join("partial.jsonl"),
        lines[2..].join("\n") + "\n",
    )
    .unwrap();
    let out = run(
        &[
            "hypo-report",
            "planted",
            "--full",
            gold,
            "--hypo",
            "partial.jsonl",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(
        err.contains("test-00000") && err.contains("test-00001"),
        "{err}"
    );
}

#[test]
fn hypothesis_only_report_from_published_table() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("table.csv");
    std::fs::write(&table, icq_core::fixtures::PUBLISHED_ACCURACY_CSV).unwrap();
    let out = run(
        &["hypo-report", "--table", "table.csv", "-o", "out"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(tmp.path().join("out/hypo.csv")).unwrap();
    assert!(csv.contains("SNLI,FT,33.30,54.43,59.83,26.53,-5.40"));
    assert!(csv.contains("SNLI,BT,33.30,90.56,45.70,12.40,44.86"));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn wait_for_health(addr: &str) -> bool {
    let deadline = Instant::now() + Duration::from_secs(20);
    let rt = tokio::runtime::Runtime::new().unwrap();
    while Instant::now() < deadline {
        let ok = rt.block_on(async {
            reqwest::get(format!("http://{addr}/api/health"))
                .await
                .map(|r| r.status() == reqwest::StatusCode::OK)
                .unwrap_or(false)
        });
        if ok {
            return true;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    false
}

#[cfg(unix)]
#[test]
fn serve_starts_and_stops_on_sigterm() {
    let tmp = tempfile::tempdir().unwrap();
    let addr = format!("127.0.0.1:{}", free_port());
    let mut child = icq()
        .args(["serve", "--store", "store", "--bind", &addr])
        .current_dir(tmp.path())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    assert!(wait_for_health(&addr));

    let busy = run(&["serve", "--store", "other", "--bind", &addr], tmp.path());
    assert_eq!(busy.status.code(), Some(2), "{}", stderr(&busy));

    let status = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    let deadline = Instant::now() + Duration::from_secs(10);
    let exit = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(Instant::now() < deadline, "server did not stop");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(exit.success());
    let index = read_json(tmp.path().join("store/index.json"));
    assert!(index["datasets"].is_object());
}

#[test]
fn help_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("ICQ_UPDATE_GOLDEN").is_some();
    for sub in [
        "",
        "cues",
        "probe",
        "hypo-export",
        "hypo-report",
        "serve",
        "fixture",
    ] {
        let mut args: Vec<&str> = Vec::new();
        if !sub.is_empty() {
            args.push(sub);
        }
        args.push("--help");
        let out = icq().args(&args).env("COLUMNS", "100").output().unwrap();
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let name = if sub.is_empty() { "icq" } else { sub };
        let path = golden.join(format!("{name}.txt"));
        if update {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(&path, &text).unwrap();
        }
        let expected = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text, expected,
            "help for {name:?} changed; rerun with ICQ_UPDATE_GOLDEN=1"
        );
    }
}

#[test]
fn every_flag_shows_its_default() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let cues = std::fs::read_to_string(golden.join("cues.txt")).unwrap();
    for flag in [
        "--min-support <MIN_SUPPORT>",
        "--top <TOP>",
        "--vocab-min-freq <VOCAB_MIN_FREQ>",
    ] {
        let line = cues.lines().find(|l| l.contains(flag)).unwrap();
        let next = cues
            .lines()
            .skip_while(|l| !l.contains(flag))
            .nth(1)
            .unwrap_or("");
        assert!(
            line.contains("[default:") || next.contains("[default:"),
            "{flag}"
        );
    }
    let probe = std::fs::read_to_string(golden.join("probe.txt")).unwrap();
    assert!(probe.contains("[default: 42]"));
    assert!(probe.contains("[default: 0.02]"));
    let serve = std::fs::read_to_string(golden.join("serve.txt")).unwrap();
    assert!(serve.contains("[env: ICQ_STORE_DIR=]"));
    assert!(serve.contains("[default: 67108864]"));
}
