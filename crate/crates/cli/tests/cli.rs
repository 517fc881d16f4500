use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use thn::datagen::{self, SynthData};
use thn::training::initial_towers;
use thn::{Tower64, TrainConfig};

fn thn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thn")).args(args).output().expect("spawn thn")
}

fn ok(args: &[&str]) -> Output {
    let out = thn(args);
    assert!(
        out.status.success(),
        "thn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 8] = ["--n-aux-x", "150", "--n-aux-y", "150", "--n-query", "40", "--n-database", "40"];
const FAST: [&str; 6] = ["--hidden-x", "24", "--hidden-y", "24", "--epochs", "2"];

fn small_dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["datagen", "--out", p(&data)];
    args.extend(SMALL);
    ok(&args);
    data
}

fn manifest_value(path: &Path, key: &str) -> Option<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
}

#[test]
fn datagen_defaults_write_loadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["datagen", "--out", p(&out)]);
    let data: SynthData<f64> = datagen::load_dataset(&out).unwrap();
    assert_eq!((data.aux_x.len(), data.aux_y.len()), (2000, 2000));
    assert_eq!((data.query.len(), data.database.len()), (500, 500));
    assert_eq!(manifest_value(&out.join("manifest.txt"), "categories").as_deref(), Some("8"));
    assert!(manifest_value(&out.join("manifest.txt"), "timestamp").is_some());
}

#[test]
fn datagen_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let mut args = vec!["datagen", "--out", p(d), "--seed", "11"];
        args.extend(SMALL);
        ok(&args);
    }
    for f in ["aux_x.feat", "aux_x.labels", "aux_y.feat", "query.feat", "database.labels", "relations.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let strip = |d: &Path| -> String {
        std::fs::read_to_string(d.join("manifest.txt"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("timestamp=") && !l.starts_with("output."))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn invalid_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = thn(&["datagen", "--out", p(&dir.path().join("x")), "--categories", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("categories") && err.contains("Usage"), "{err}");
    assert_eq!(thn(&["train", "--bogus"]).status.code(), Some(2));

    let data = small_dataset(dir.path());
    let out = thn(&["train", "--data", p(&data), "--out", p(&dir.path().join("r")), "--ablation", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let out = thn(&["train", "--data", p(&data), "--out", p(&dir.path().join("r")), "--momentum", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = thn(&["train", "--data", p(&dir.path().join("none")), "--out", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3));
    let out = thn(&[
        "encode",
        "--checkpoint",
        p(&dir.path().join("none.ckpt")),
        "--features",
        "x",
        "--out",
        "y",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn divergence_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let mut args = vec!["train", "--data", p(&data), "--out", "unused"];
    args.extend(FAST);
    args.extend(["--learning-rate", "1e300", "--hash-lr-multiplier", "1e300", "--momentum", "0"]);
    let out = thn(&args);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration"));
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    ok(&[
        "train", "--data", p(&data), "--out", p(&run), "--epochs", "0", "--hidden-x", "12,6", "--hidden-y", "5",
        "--seed", "3",
    ]);
    let loaded: SynthData<f64> = datagen::load_dataset(&data).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        hidden_x: vec![12, 6],
        hidden_y: vec![5],
        seed: 3,
        ..TrainConfig::default()
    };
    let sets = thn::experiment::training_sets(&loaded, thn::experiment::PoolSizes::all(&loaded), 3).unwrap();
    let (tx, ty) = initial_towers(&sets, &cfg).unwrap();
    assert_eq!(Tower64::load(&run.join("tower_x.ckpt")).unwrap(), tx);
    assert_eq!(Tower64::load(&run.join("tower_y.ckpt")).unwrap(), ty);
    assert_eq!(std::fs::read_to_string(run.join("train.log")).unwrap().lines().count(), 1);
}

#[test]
fn manifest_records_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let conf = dir.path().join("train.conf");
    std::fs::write(&conf, "# shared settings\nbits=8\nmu=3\nlambda=0.5\nepochs=1\n").unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&run), "--config", p(&conf), "--ablation", "no-mmd"];
    args.extend(FAST);
    ok(&args);
    let m = run.join("manifest.txt");
    // flags beat the config file, the config file beats defaults
    assert_eq!(manifest_value(&m, "mu").as_deref(), Some("0"));
    assert_eq!(manifest_value(&m, "lambda").as_deref(), Some("0.5"));
    assert_eq!(manifest_value(&m, "bits").as_deref(), Some("8"));
    assert_eq!(manifest_value(&m, "epochs").as_deref(), Some("2"));
    assert_eq!(manifest_value(&m, "momentum").as_deref(), Some("0.9"));
    assert_eq!(manifest_value(&m, "ablation").as_deref(), Some("no-mmd"));
    let last = std::fs::read_to_string(&m).unwrap();
    assert!(last.lines().last().unwrap().starts_with("timestamp="));

    std::fs::write(&conf, "bits=8\nwidth=3\n").unwrap();
    let out = thn(&["train", "--data", p(&data), "--out", p(&run), "--config", p(&conf)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.conf:2"));
}

#[test]
fn encode_is_deterministic_and_checks_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&run)];
    args.extend(FAST);
    ok(&args);
    let ckx = run.join("tower_x.ckpt");
    let (a, b) = (dir.path().join("a.codes"), dir.path().join("b.codes"));
    for out in [&a, &b] {
        ok(&["encode", "--checkpoint", p(&ckx), "--features", p(&data.join("aux_x.feat")), "--out", p(out)]);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(String::from_utf8_lossy(&bytes).lines().next(), Some("150 16"));
    assert!(dir.path().join("a.codes.manifest").exists());

    let out = thn(&[
        "encode",
        "--checkpoint",
        p(&ckx),
        "--features",
        p(&data.join("database.feat")),
        "--out",
        p(&dir.path().join("bad.codes")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("64") && err.contains("32"), "{err}");
}

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    p(path).to_string()
}

#[test]
fn evaluate_hand_cases() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let qc = write(&d.join("q.codes"), "1 2\n00\n");
    let ql = write(&d.join("q.labels"), "1\n");
    let dc = write(&d.join("d.codes"), "3 2\n00\n01\n11\n");
    let dl = write(&d.join("d.labels"), "1\n2\n1 5\n");
    let rep = d.join("r.txt");
    let out = ok(&["evaluate", "--query-codes", &qc, "--query-labels", &ql, "--db-codes", &dc, "--db-labels", &dl, "--out", p(&rep)]);
    let map: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((map - 5.0 / 6.0).abs() < 1e-12);
    let first = std::fs::read(&rep).unwrap();
    let text = String::from_utf8_lossy(&first).to_string();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().next().unwrap().ends_with(" 1 3 2"));
    ok(&["evaluate", "--query-codes", &qc, "--query-labels", &ql, "--db-codes", &dc, "--db-labels", &dl, "--out", p(&rep)]);
    assert_eq!(std::fs::read(&rep).unwrap(), first);

    // self retrieval with all labels shared
    let sl = write(&d.join("s.labels"), "4\n4 1\n4\n");
    let out = ok(&["evaluate", "--query-codes", &dc, "--query-labels", &sl, "--db-codes", &dc, "--db-labels", &sl, "--out", p(&rep)]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1");

    let short = write(&d.join("short.labels"), "1\n");
    let out = thn(&["evaluate", "--query-codes", &qc, "--query-labels", &ql, "--db-codes", &dc, "--db-labels", &short, "--out", p(&rep)]);
    assert!(!out.status.success());
    let wide = write(&d.join("w.codes"), "1 3\n000\n");
    let out = thn(&["evaluate", "--query-codes", &wide, "--query-labels", &ql, "--db-codes", &dc, "--db-labels", &dl, "--out", p(&rep)]);
    assert!(!out.status.success());
    let bad = write(&d.join("bad.codes"), "2 2\n00\n0\n");
    let out = thn(&["evaluate", "--query-codes", &bad, "--query-labels", &ql, "--db-codes", &dc, "--db-labels", &dl, "--out", p(&rep)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.codes:3"));
}

#[test]
fn ablate_emits_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let table = dir.path().join("out").join("table.txt");
    let mut args = vec!["ablate", "--data", p(&data), "--out", p(&table), "--bit-widths", "8,16"];
    args.extend(FAST);
    let out = ok(&args);
    let text = std::fs::read_to_string(&table).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), text);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "variant x2y@8 y2x@8 x2y@16 y2x@16");
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(names, ["full", "ip", "no-mmd", "no-quant"]);
    assert!(lines[1..].iter().all(|l| l.split(' ').count() == 5));

    let m = std::fs::read_to_string(dir.path().join("out").join("table.txt.manifest")).unwrap();
    let splits: Vec<&str> = m.lines().filter(|l| l.starts_with("split.")).map(|l| l.split('=').nth(1).unwrap()).collect();
    assert_eq!(splits.len(), 8);
    assert!(splits.iter().all(|s| *s == splits[0]));
}
