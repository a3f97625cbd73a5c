use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_retail-flow"))
}

fn run(args: &[&str], cwd: &Path, workers: Option<&str>) -> Output {
    let mut c = bin();
    c.args(args).current_dir(cwd).env_remove("RETAIL_FLOW_WORKERS");
    if let Some(w) = workers {
        c.env("RETAIL_FLOW_WORKERS", w);
    }
    c.output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path, workers: Option<&str>) -> String {
    let out = run(args, cwd, workers);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) {
    ok(&["synth", "--out", "data", "--stocks", "10", "--days", "245", "--seed", "11"], dir, None);
}

/// Ingest through regress and behaviors on the full sample; returns the run directory.
fn chain(dir: &Path, runs: &str, workers: Option<&str>) -> PathBuf {
    let out = ok(&["ingest", "--input-dir", "data", "--runs-dir", runs], dir, workers);
    let run = out.lines().last().unwrap().trim().to_string();
    for stage in [vec!["panel"], vec!["vol"], vec!["regress"], vec!["behaviors"]] {
        let mut args = stage.clone();
        args.extend(["--run", &run]);
        ok(&args, dir, workers);
    }
    dir.join(run)
}

#[test]
fn full_chain_reruns_and_staleness() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let run_dir = chain(dir, "runs", None);
    let rel = run_dir.strip_prefix(dir).unwrap().to_str().unwrap().to_string();
    for f in ["regress/hf-dn-none/coefficients.csv", "behaviors/hf-dn-none/proxies.csv", "manifests/ingest.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }

    let table = std::fs::read(run_dir.join("regress/hf-dn-none/coefficients.csv")).unwrap();
    let again = ok(&["regress", "--run", &rel], dir, None);
    assert!(again.contains("up to date"), "{again}");
    let rerun = ok(&["ingest", "--input-dir", "data", "--runs-dir", "runs"], dir, None);
    assert_eq!(rerun.lines().last().unwrap().trim(), rel);
    assert_eq!(std::fs::read(run_dir.join("regress/hf-dn-none/coefficients.csv")).unwrap(), table);

    let out = ok(&["report", "--run", &rel, "--figure", "main", "--truth", "data/truth.json"], dir, None);
    let files: Vec<&str> = out.lines().collect();
    assert_eq!(files.len(), 3);
    let by_group = std::fs::read_to_string(dir.join(files[0])).unwrap();
    assert!(by_group.starts_with("level,x,series,y_bps,se_bps"));
    assert_eq!(by_group.lines().count(), 1 + 36);

    // tampering with an upstream output makes downstream stages refuse
    let panel = run_dir.join("panel_raw.rfc");
    let mut bytes = std::fs::read(&panel).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&panel, bytes).unwrap();
    let out = run(&["vol", "--run", &rel], dir, None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("refusing"));
}

#[test]
fn tables_do_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let a = chain(dir, "runs_one", Some("1"));
    let b = chain(dir, "runs_three", Some("3"));
    for f in ["regress/hf-dn-none/coefficients.csv", "regress/hf-dn-none/summary.csv", "behaviors/hf-dn-none/proxies.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn usage_and_ordering_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(run(&["regress", "--bogus"], dir, None).status.code(), Some(2));
    assert_eq!(run(&["ingest", "--delay", "40"], dir, None).status.code(), Some(2));
    assert_eq!(run(&["regress", "--run", "x", "--subgroup", "weekday"], dir, None).status.code(), Some(2));
    let out = run(&["panel", "--run", "nowhere"], dir, None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ingest"));
}
