//! End-to-end behaviour of the `nnsp` command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nnsp_harness::cli::{run, EXIT_OK, EXIT_USAGE};

const TINY: &str = "\
# small enough for every single-shot command to take well under a second
data.d = 4
data.n_train = 8
data.n_test = 5
train.epochs = 400
train.burn_in = 100
train.thin = 10
train.seeds = 2
predict.width = 16
";

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nnsp-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn nnsp(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("nnsp").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn missing_config_is_a_usage_error() {
    let (code, _, err) = nnsp(&["kernel", "--config", "/nonexistent/nnsp.cfg"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("Usage:"), "{err}");
}

#[test]
fn unknown_key_names_the_nearest_one() {
    let dir = scratch("typo");
    let cfg = dir.join("typo.cfg");
    fs::write(&cfg, "data.n_trian = 8\n").unwrap();
    let (code, _, err) = nnsp(&["kernel", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("data.n_train"), "{err}");
}

#[test]
fn conflicting_presets_are_rejected() {
    let (code, _, err) = nnsp(&["kernel", "--quick", "--full"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(!err.is_empty());
}

#[test]
fn identical_invocations_give_identical_bytes() {
    let dir = scratch("repeat");
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    for cmd in ["kernel", "cumulant", "fwc-predict", "train"] {
        let out = dir.join(cmd);
        let args = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "11", cmd];
        let (code, first_stdout, err) = nnsp(&args);
        assert_eq!(code, EXIT_OK, "{cmd}: {err}");
        let first = snapshot(&out);
        assert!(first.contains_key("manifest.txt"), "{cmd}: {:?}", first.keys());
        let (code, second_stdout, _) = nnsp(&args);
        assert_eq!(code, EXIT_OK);
        assert_eq!(first, snapshot(&out), "{cmd}: outputs differ between runs");
        assert_eq!(first_stdout, second_stdout);
    }
}

#[test]
fn seed_changes_training_output() {
    let dir = scratch("seeds");
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let train = |seed: &str| {
        let out = dir.join(seed);
        let (code, _, err) = nnsp(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert_eq!(code, EXIT_OK, "{err}");
        fs::read(out.join("train.csv")).unwrap()
    };
    assert_ne!(train("1"), train("2"));
}
