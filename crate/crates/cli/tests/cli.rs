use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsescene"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["inspect"]).status.code(), Some(1));
    assert_eq!(bin(&["eval", "--perturb", "kind=blur,n=4", "--features", "x", "--artifacts", "y"]).status.code(), Some(1));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_data_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["train", "--manifest", p(&tmp.path().join("none.tsv")), "--artifacts", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("none.tsv"));
}

#[test]
fn bad_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[coding]\nsparsity_fraction = 2.0\n").unwrap();
    fs::write(tmp.path().join("manifest.tsv"), "a\tx.png\n").unwrap();
    let o = bin(&[
        "train",
        "--config",
        p(&cfg),
        "--manifest",
        p(&tmp.path().join("manifest.tsv")),
        "--artifacts",
        p(&tmp.path().join("art")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn defaults_are_loadable_config() {
    let o = bin(&["inspect", "--defaults"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("lambda_dl = 0.1"));
    assert!(text.contains("# preset mit67 = 3886"));
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("d.toml"), &text).unwrap();
    assert_eq!(
        sparsescene::PipelineConfig::load(&tmp.path().join("d.toml")).unwrap(),
        sparsescene::PipelineConfig::default()
    );
}

#[test]
fn csv_import_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("f.csv");
    fs::write(&csv, "dim0,dim1,dim2\n1,2,3\n0.5,-1,4.25\n").unwrap();
    let out = tmp.path().join("f.ssrf");
    assert!(bin(&["import", "csv", p(&csv), p(&out)]).status.success());
    let text = stdout(&bin(&["inspect", "--artifact", p(&out)]));
    assert!(text.contains("rows = 2") && text.contains("cols = 3"), "{text}");
    assert_eq!(bin(&["inspect", "--artifact", p(&csv)]).status.code(), Some(2));
}

#[test]
fn synth_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = bin(&["synth", "--out", p(&data), "--train-per-class", "6", "--test-per-class", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg_path = data.join("config.toml");
    let cfg = fs::read_to_string(&cfg_path)
        .unwrap()
        .replace("words = 256", "words = 48")
        .replace("seeds = [0, 1, 2, 3, 4]", "seeds = [0]");
    fs::write(&cfg_path, cfg).unwrap();

    let art = tmp.path().join("art");
    let cache = tmp.path().join("cache");
    let manifest = data.join("manifest.tsv");
    let o = bin(&[
        "train",
        "--config",
        p(&cfg_path),
        "--manifest",
        p(&manifest),
        "--artifacts",
        p(&art),
        "--cache",
        p(&cache),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(art.join("svm_combined.ssrm").exists());

    // The configuration stored with the artifacts is used when none is given.
    let report = tmp.path().join("report");
    let o = bin(&[
        "eval",
        "--manifest",
        p(&manifest),
        "--artifacts",
        p(&art),
        "--cache",
        p(&cache),
        "--perturb",
        "kind=noise,n=4,count=1,seed=1",
        "--report",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.contains("combined") && table.contains("noise"), "{table}");
    let jsonl = fs::read_to_string(report.join("report.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 1 + 4 + 1);

    let o = bin(&["perturb-eval", "--manifest", p(&manifest), "--artifacts", p(&art), "--cache", p(&cache)]);
    assert!(o.status.success());
    let rows = stdout(&o)
        .lines()
        .filter(|l| l.starts_with("occlusion") || l.starts_with("noise"))
        .count();
    assert_eq!(rows, 8);

    let text = stdout(&bin(&["inspect", "--artifact", p(&art.join("dict_structure.ssrd"))]));
    assert!(text.contains("source = structure"), "{text}");
    assert!(stdout(&bin(&["inspect", "--artifact", p(&art)])).contains("fingerprint"));

    // A different configuration is refused.
    let o = bin(&["eval", "--manifest", p(&manifest), "--artifacts", p(&art), "--config", p(&tmp.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(2));
    let other = tmp.path().join("other.toml");
    fs::write(&other, fs::read_to_string(&cfg_path).unwrap().replace("c = 1000.0", "c = 10.0")).unwrap();
    let o = bin(&["eval", "--manifest", p(&manifest), "--artifacts", p(&art), "--config", p(&other)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fingerprint"));
}
