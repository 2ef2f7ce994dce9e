use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use darja_core::config::EngineConfig;

fn templates() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/templates.tsv")
}

fn offers() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/offers.md")
}

fn darja(dir: &Path, args: &[&str], stdin: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_darja"));
    cmd.current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(["--set", &format!("paths.templates={}", templates().display())])
        .args(["--set", "router.knowledge_intents=offer_info"])
        .args(["--set", "ingest.offers=PixX,Win,Sama"])
        .args(args);
    match stdin {
        None => cmd.stdin(std::process::Stdio::null()).output().unwrap(),
        Some(text) => {
            use std::io::Write;
            let mut child = cmd
                .stdin(std::process::Stdio::piped())
                .stdout(std::process::Stdio::piped())
                .stderr(std::process::Stdio::piped())
                .spawn()
                .unwrap();
            child.stdin.take().unwrap().write_all(text.as_bytes()).unwrap();
            child.wait_with_output().unwrap()
        }
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_eval_ingest_chat_bench() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let a = darja(d, &["train", "--synthetic"], None);
    assert!(a.status.success(), "{}", stderr(&a));
    let report = std::fs::read_to_string(d.join("artifacts/models/metrics.txt")).unwrap();
    for metric in ["accuracy", "weighted", "macro"] {
        assert!(report.to_lowercase().contains(metric), "{report}");
    }
    let b = darja(d, &["train", "--synthetic", "--out", "again"], None);
    assert!(b.status.success());
    assert_eq!(std::fs::read_to_string(d.join("again/metrics.txt")).unwrap(), report);

    let e = darja(d, &["eval", "--synthetic", "--seed", "7"], None);
    assert!(e.status.success(), "{}", stderr(&e));
    assert!(stdout(&e).contains("accuracy"));

    let i = darja(d, &["ingest", offers().to_str().unwrap()], None);
    assert!(i.status.success(), "{}", stderr(&i));
    assert!(stdout(&i).contains("offers\t7 chunks"), "{}", stdout(&i));

    let c = darja(d, &["chat"], Some("ch7al rasidi khoya\nch7al soumha l'offre PixX 2000\n/quit\nnever read\n"));
    assert!(c.status.success(), "{}", stderr(&c));
    let lines: Vec<String> = stdout(&c).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2, "{lines:?}");
    assert!(lines[0].starts_with("[nlu "), "{}", lines[0]);
    assert!(lines[1].starts_with("[rag ") && lines[1].contains("offers#2"), "{}", lines[1]);

    let empty = darja(d, &["bench", "--n", "0"], None);
    assert!(empty.status.success());
    assert_eq!(stdout(&empty).lines().count(), 1, "{}", stdout(&empty));

    let out = d.join("bench.txt");
    let bench = darja(d, &["bench", "--n", "200", "--rag-n", "3", "--delay-ms", "50", "--out", out.to_str().unwrap()], None);
    assert!(bench.status.success(), "{}", stderr(&bench));
    let table = std::fs::read_to_string(out).unwrap();
    assert!(table.lines().any(|l| l.starts_with("nlu    total")), "{table}");
    assert!(table.lines().any(|l| l.starts_with("rag    generate")), "{table}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let missing = darja(d, &["train", "--data", "nope.tsv"], None);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("nope.tsv"), "{}", stderr(&missing));

    assert_eq!(darja(d, &["train"], None).status.code(), Some(1));
    assert_eq!(darja(d, &["frobnicate"], None).status.code(), Some(1));
    assert_eq!(darja(d, &["--set", "router.tau=2", "config"], None).status.code(), Some(1));
    assert_eq!(darja(d, &["--set", "no.such.key=1", "config"], None).status.code(), Some(1));
    assert_eq!(darja(d, &["--help"], None).status.code(), Some(0));

    let serve = darja(d, &["serve", "--port", "0"], None);
    assert_eq!(serve.status.code(), Some(2));
    assert!(stderr(&serve).contains("artifacts/models"), "{}", stderr(&serve));
}

#[test]
fn port_in_use_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(darja(d, &["train", "--synthetic"], None).status.success());
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let serve = darja(d, &["serve", "--port", &port], None);
    assert_eq!(serve.status.code(), Some(3));
    assert!(stderr(&serve).contains("cannot bind"), "{}", stderr(&serve));
}

#[test]
fn normalize_stats_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let n = darja(d, &["normalize", "Saaaa7a 0551234567"], None);
    assert_eq!(stdout(&n), "latin\tsaha [PHONE]\n");
    let n = darja(d, &["normalize"], Some("baaaaazef\n\u{0645}\u{062F}\u{0631}\u{0633}\u{0629}\n"));
    assert_eq!(stdout(&n), "latin\tbazef\narabic\t\u{0645}\u{062F}\u{0631}\u{0633}\u{0647}\n");

    std::fs::write(d.join("tiny.tsv"), "a\tsalam\na\twesh\nb\tch7al\n").unwrap();
    let s = darja(d, &["stats", "--data", "tiny.tsv"], None);
    assert!(s.status.success());
    assert!(stdout(&s).contains("examples\t3\nintents\t2\n"), "{}", stdout(&s));

    let c = darja(d, &["--set", "rag.alpha=0.5", "config"], None);
    assert!(c.status.success());
    let text = stdout(&c);
    std::fs::write(d.join("engine.conf"), &text).unwrap();
    let parsed = EngineConfig::load(d.join("engine.conf")).unwrap();
    assert_eq!(parsed.rag.alpha, 0.5);
    let again = darja(d, &["--config", "engine.conf", "config"], None);
    assert_eq!(stdout(&again), text);
}
