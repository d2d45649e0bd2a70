use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{ "train_samples": 512, "test_samples": 256, "epochs": 4, "stop_prune_epoch": 3 }"#;

fn pfb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfb")).args(args).output().expect("binary runs")
}

fn config(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    std::fs::write(&path, SMALL).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("m.csv");
    let o = pfb(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.contains("test_accuracy="));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("iter,epoch,retained,mean_importance,threshold,mean_loss"));
    assert_eq!(lines.count(), 32);
}

#[test]
fn missing_config_exits_2() {
    let o = pfb(&["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(String::from_utf8(o.stderr).unwrap().lines().count(), 1);
}

#[test]
fn unknown_flag_exits_5() {
    let o = pfb(&["run", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn invalid_value_exits_6() {
    assert_eq!(pfb(&["run", "--prune-ratio", "1.5"]).status.code(), Some(6));
    assert_eq!(pfb(&["run", "--batch-size", "0"]).status.code(), Some(6));
    assert_eq!(pfb(&["run", "--bandwidth-rule", "magic"]).status.code(), Some(6));
}

#[test]
fn bad_config_contents_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{ "prune_ratio": 0.3, "typo_field": 1 }"#).unwrap();
    assert_eq!(pfb(&["run", "--config", s(&path)]).status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    std::fs::write(&path, "{ \"schema\": ").unwrap();
    let o = pfb(&["inspect-checkpoint", s(&path)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn halted_run_resumes_to_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let full = dir.path().join("full.csv");
    let part = dir.path().join("part.csv");
    let ck = dir.path().join("ck.json");
    assert_eq!(pfb(&["run", "--config", s(&cfg), "--out", s(&full)]).status.code(), Some(0));

    let o = pfb(&["run", "--config", s(&cfg), "--out", s(&part), "--checkpoint", s(&ck), "--halt-after-epoch", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("halted_at_iteration=16"));

    let o = pfb(&["inspect-checkpoint", s(&ck)]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("schema=pfb-checkpoint/v1 iteration=16 centroids=64 initialized=true"), "{text}");

    let o = pfb(&["resume", "--checkpoint", s(&ck), "--out", s(&part)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&part).unwrap());
}

#[test]
fn pruning_leaves_warmup_rows_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    pfb(&["run", "--config", s(&cfg), "--out", s(&a), "--prune-ratio", "0"]);
    pfb(&["run", "--config", s(&cfg), "--out", s(&b), "--prune-ratio", "0.3"]);
    let a = std::fs::read_to_string(a).unwrap();
    let b = std::fs::read_to_string(b).unwrap();
    // Header plus the first epoch (8 iterations) precede the pruning window.
    let head = |t: &str| t.lines().take(9).map(str::to_owned).collect::<Vec<_>>();
    assert_eq!(head(&a), head(&b));
    assert_ne!(a, b);
}

#[test]
fn ablate_writes_six_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let base = dir.path().join("grid.csv");
    let o = pfb(&["ablate", "--config", s(&cfg), "--out", s(&base), "--epochs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 6);
    for rule in ["silverman", "scott", "identity"] {
        for w in ["weight", "noweight"] {
            assert!(dir.path().join(format!("grid_{rule}_{w}.csv")).exists(), "{rule}_{w}");
        }
    }
}
