use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
threads = 1

[world]
n_accounts = 200
n_merchants = 120
months = 8
shocks = [{ month = 5, categories = [2], multiplier = 3.0, targets = [6] }]

[train]
dim = 8
epochs = 1

[analysis]
ks = [5, 10]
deltas = [1, 2]

[forecast]
epochs = 3
hidden_units = 4

[grid]
sequence_lengths = [1, 3]
training_lengths = [1, 2]
"#;

fn txdrift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_txdrift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

/// Relative path → file bytes for every file under `root`.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = txdrift(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("frobnicate"));
}

#[test]
fn help_exits_zero() {
    assert_eq!(txdrift(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_upstream_names_the_stage_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = txdrift(&["train", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run stage `project` first"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "seed = \"seven\"\n").unwrap();
    let o = txdrift(&["config", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = txdrift(&["config", "--set", "train.dim=1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unusable_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tx.csv");
    std::fs::write(&input, "a1,m1,not-a-date,food\n").unwrap();
    let out = dir.path().join("out");
    let o = txdrift(&["ingest", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn flags_override_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let show = |extra: &[&str]| {
        let mut args = vec!["config", "--config", cfg.as_str()];
        args.extend_from_slice(extra);
        let o = txdrift(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        toml::from_str::<toml::Table>(&String::from_utf8(o.stdout).unwrap()).unwrap()
    };
    let file_only = show(&[]);
    assert_eq!(file_only["seed"].as_integer(), Some(3));
    assert_eq!(file_only["train"]["dim"].as_integer(), Some(8));
    // Untouched sections keep their defaults.
    assert_eq!(file_only["train"]["negatives"].as_integer(), Some(5));

    let set = show(&["--set", "train.dim=12", "--set", "seed=4"]);
    assert_eq!(set["train"]["dim"].as_integer(), Some(12));
    assert_eq!(set["seed"].as_integer(), Some(4));

    let flags = show(&["--set", "train.dim=12", "--dim", "16", "--seed", "5"]);
    assert_eq!(flags["train"]["dim"].as_integer(), Some(16));
    assert_eq!(flags["seed"].as_integer(), Some(5));
    // The global seed reaches every component.
    assert_eq!(flags["train"]["rng_seed"].as_integer(), Some(5));
    assert_eq!(flags["world"]["rng_seed"].as_integer(), Some(5));
}

#[test]
fn all_is_deterministic_and_stages_rerun_in_isolation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = txdrift(&["all", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a");
    let b = run("b");
    let ta = tree(&a);
    assert_eq!(ta, tree(&b));
    for f in [
        "data/transactions.csv",
        "embeddings/snapshot_007.txt",
        "shift/cosine.csv",
        "smoothed/noise.csv",
        "forecast/grid.csv",
        "report/report.md",
        "manifests/report.json",
    ] {
        assert!(ta.contains_key(f), "missing {f}");
    }

    // Every output is listed in its manifest with the right hash.
    let manifest: serde_json::Value =
        serde_json::from_slice(&ta["manifests/train.json"]).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 8);
    for o in outputs {
        let path = a.join(o["path"].as_str().unwrap());
        assert_eq!(o["sha256"], txdrift::pipeline::sha256_file(&path).unwrap());
    }

    std::fs::remove_dir_all(a.join("shift")).unwrap();
    let o = txdrift(&["shift", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(tree(&a), ta);
}
