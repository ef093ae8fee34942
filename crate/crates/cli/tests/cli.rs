use std::path::Path;
use std::process::{Command, Output};

use bandmf::io::load_bmf;
use bandmf::noise::replay_raw;

fn bandmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bandmf"))
        .args(args)
        .env_remove("BANDMF_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn optimize_dpsgd_loss() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "w.json", r#"{"kind":"prefix"}"#);
    let (out, rep) = (path(d.path(), "c.bmf"), path(d.path(), "r.json"));
    let o = bandmf(&["optimize", "--workload", &cfg, "--n", "8", "--bands", "1", "--out", &out, "--report", &rep]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&std::fs::read(&rep).unwrap());
    assert_eq!(r["loss"].as_f64().unwrap(), 36.0);
    assert_eq!(r["converged"], true);
    assert_eq!(load_bmf(&out).unwrap().n(), 8);
}

#[test]
fn more_bands_lower_loss() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "w.json", r#"{"workload":{"kind":"prefix"},"n":64}"#);
    let loss = |bands: &str| {
        let o = bandmf(&["optimize", "--workload", &cfg, "--bands", bands]);
        assert_eq!(o.status.code(), Some(0));
        json(&o.stdout)["loss"].as_f64().unwrap()
    };
    let (l1, l8) = (loss("1"), loss("8"));
    assert_eq!(l1, 2080.0);
    assert!(l8 < l1, "{l8} vs {l1}");
}

#[test]
fn malformed_config_writes_nothing() {
    let d = tempfile::tempdir().unwrap();
    let (out, rep) = (path(d.path(), "c.bmf"), path(d.path(), "r.json"));
    for (name, text) in [
        ("broken.json", r#"{"workload":"#),
        ("unknown.json", r#"{"workload":{"kind":"prefix"},"n":8,"bandz":2}"#),
        ("badkind.json", r#"{"kind":"tree"}"#),
    ] {
        let cfg = write(d.path(), name, text);
        let o = bandmf(&["optimize", "--workload", &cfg, "--n", "8", "--bands", "2", "--out", &out, "--report", &rep]);
        assert_eq!(o.status.code(), Some(1), "{name}");
        assert!(!Path::new(&out).exists() && !Path::new(&rep).exists(), "{name}");
    }
    let cfg = write(d.path(), "ok.json", r#"{"kind":"prefix"}"#);
    let o = bandmf(&["optimize", "--workload", &cfg, "--n", "8", "--bands", "9", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    let o = bandmf(&["optimize", "--workload", &cfg, "--n", "8", "--bands", "2", "--mode", "kb", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!Path::new(&out).exists());
}

#[test]
fn max_iters_is_exit_two_with_outputs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "w.json", r#"{"workload":{"kind":"prefix"},"n":32,"optimizer":{"max_iters":1}}"#);
    let (out, rep) = (path(d.path(), "c.bmf"), path(d.path(), "r.json"));
    let o = bandmf(&["optimize", "--workload", &cfg, "--bands", "4", "--out", &out, "--report", &rep]);
    assert_eq!(o.status.code(), Some(2));
    assert!(Path::new(&out).exists());
    assert_eq!(json(&std::fs::read(&rep).unwrap())["termination"], "max_iterations");
}

#[test]
fn reports_are_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "w.json", r#"{"kind":"sgdm","beta":0.9,"cooldown":{"tail":0.25,"floor":0.05}}"#);
    let run = |tag: &str| {
        let (out, rep) = (path(d.path(), &format!("{tag}.bmf")), path(d.path(), &format!("{tag}.json")));
        let o = bandmf(&["optimize", "--workload", &cfg, "--n", "24", "--bands", "4", "--out", &out, "--report", &rep]);
        assert_eq!(o.status.code(), Some(0));
        let mut r = json(&std::fs::read(&rep).unwrap());
        r["wall_ms"] = 0.into();
        (std::fs::read(&out).unwrap(), r)
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn equal_norm_sensitivity_via_cli() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "w.json", r#"{"kind":"prefix"}"#);
    let out = path(d.path(), "c.bmf");
    let o = bandmf(&["optimize", "--workload", &cfg, "--n", "32", "--bands", "4", "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    let o = bandmf(&["sensitivity", "--matrix", &out, "--schema", "minsep", "--b", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o.stdout);
    assert!((r["value"].as_f64().unwrap() - 8f64.sqrt()).abs() < 1e-12);
    assert_eq!(r["exact"], true);
    let o = bandmf(&["sensitivity", "--matrix", &out, "--schema", "single"]);
    assert!((json(&o.stdout)["value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let o = bandmf(&["sensitivity", "--matrix", &out, "--schema", "kb", "--k", "3"]);
    assert_eq!(o.status.code(), Some(1));

    let o = bandmf(&["rmse", "--matrix", &out, "--workload", &cfg, "--sigma", "2", "--schema", "minsep", "--b", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o.stdout);
    let expect = 2.0 * 8f64.sqrt() * (r["loss"].as_f64().unwrap() / 32.0).sqrt();
    assert!((r["rmse"].as_f64().unwrap() - expect).abs() < 1e-12 * expect);
}

#[test]
fn calibrate_prints_sigma() {
    let o = bandmf(&["calibrate", "--eps", "1", "--delta", "1e-6", "--n", "100", "--m", "1000", "--batch", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!(s > 0.1 && s < 10.0, "{s}");
    let o = bandmf(&["calibrate", "--eps", "1", "--delta", "1e-6", "--unamplified"]);
    let u: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!(u > s);
    let o = bandmf(&["calibrate", "--eps", "1", "--n", "100", "--m", "1000", "--batch", "10"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_csv_marks_one_band() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "w.json", r#"{"kind":"prefix"}"#);
    let o = bandmf(&["sweep", "--workload", &cfg, "--n", "32", "--m", "320", "--batch", "10", "--eps", "2", "--delta", "1e-6"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    for col in ["band", "sigma", "total_error", "rmse", "chosen"] {
        assert!(header.iter().any(|h| h == col), "{col} missing from {header:?}");
    }
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    let chosen = header.iter().position(|h| h == "chosen").unwrap();
    assert_eq!(rows.iter().filter(|r| &r[chosen] == "true").count(), 1);
}

#[test]
fn noise_identity_matches_raw_draws() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "w.json", r#"{"kind":"prefix"}"#);
    let c = path(d.path(), "c.bmf");
    assert_eq!(bandmf(&["optimize", "--workload", &cfg, "--n", "10", "--bands", "1", "--out", &c]).status.code(), Some(0));
    let out = path(d.path(), "z.f64");
    let o = bandmf(&["noise", "--matrix", &c, "--sigma", "1.5", "--dim", "3", "--steps", "7", "--seed", "11", "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(bytes.len(), 7 * 3 * 8);
    let got: Vec<f64> = bytes.chunks(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    assert_eq!(got, replay_raw(11, 1.5, 3, 7));
    let o = bandmf(&["noise", "--matrix", &c, "--sigma", "1", "--dim", "3", "--steps", "11", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn workload_export() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "w.json", r#"{"kind":"prefix"}"#);
    let out = path(d.path(), "a.csv");
    let o = bandmf(&["workload", "--workload", &cfg, "--n", "4", "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o.stdout)["frobenius_sq"].as_f64().unwrap(), 10.0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().last().unwrap(), "1.0,1.0,1.0,1.0");
    let o = bandmf(&["workload", "--workload", &cfg, "--n", "4", "--out", &path(d.path(), "a.txt")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn small_tables() {
    let o = bandmf(&["table3", "--n", "24", "--b", "4", "--k", "6", "--bands", "2,4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 5 + 1);
    assert!(lines[1].starts_with("dp_sgd,1,true,0.4082,1.0000,1.0000"), "{}", lines[1]);
    assert!(lines[6].starts_with("tree_aggregation,n/a"));

    let o = bandmf(&["table5", "--n", "64", "--eps", "16,0.03125", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epsilon,epochs,best,published,steps_from_published");
    assert!(lines[1].starts_with("16.0,1,64,,"), "{}", lines[1]);
}
