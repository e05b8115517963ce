use std::path::Path;
use std::process::{Command, Output};

use vocmap_core::io::load_map;

fn vocmap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vocmap")).args(args).current_dir(cwd).env("OVO_THREADS", "2").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path, frames: &str) {
    ok(&vocmap(&["synth", "--out", "seq", "--frames", frames, "--corpus-samples", "64"], dir));
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_run_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "40");
    let before = listing(&d.join("seq"));
    let run = ok(&vocmap(&["--deterministic", "run", "--sequence", "seq", "--out", "map"], d));
    assert!(run.starts_with("keyframes 40"), "{run}");
    assert_eq!(listing(&d.join("seq")), before);
    let eval = ok(&vocmap(&["eval", "--map", "map", "--gt", "seq/gt.ply", "--classes", "seq/classes.ovoc", "--out", "r.json"], d));
    assert!(eval.starts_with("mIoU "), "{eval}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert!(report["miou"].as_f64().unwrap() > 0.5, "{report}");
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "24");
    ok(&vocmap(&["--deterministic", "run", "--sequence", "seq/manifest.json", "--out", "a"], d));
    ok(&vocmap(&["--deterministic", "--sequential", "run", "--sequence", "seq", "--out", "b"], d));
    for f in ["points.ply", "segments.ovos", "poses.txt"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn query_ranks_matching_segment_first() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "16");
    ok(&vocmap(&["--deterministic", "run", "--sequence", "seq", "--out", "map"], d));
    let map = load_map(&d.join("map")).unwrap();
    let seg = map.segments().iter().find(|s| s.descriptor().is_some()).unwrap();
    let text: Vec<String> = seg.descriptor().unwrap().iter().map(|x| format!("{x:?}")).collect();
    std::fs::write(d.join("q.txt"), text.join(" ")).unwrap();
    let out = ok(&vocmap(&["query", "--map", "map", "--vector", "q.txt", "--k", "3"], d));
    let first: Vec<&str> = out.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(first[..2], ["1", &seg.label.to_string()]);
    let by_class = ok(&vocmap(&["query", "--map", "map", "--class", "floor", "--classes", "seq/classes.ovoc"], d));
    assert!(!by_class.is_empty());
}

#[test]
fn bench_prints_timing_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "12");
    let out = ok(&vocmap(&["bench", "--sequence", "seq", "--stride", "2"], d));
    let head: Vec<&str> = out.lines().next().unwrap().split_whitespace().filter(|t| *t != "[s]").collect();
    assert_eq!(head, ["Seg", "M&T", "PP", "CLIP", "s/KF"]);
}

#[test]
fn train_merger_writes_checkpoint_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "2");
    let out = ok(&vocmap(&["train-merger", "--corpus", "seq/corpus.ovot", "--out", "m.ovom", "--epochs", "3", "--loss-curve", "l.json"], d));
    assert_eq!(out.lines().count(), 3);
    let curve: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(d.join("l.json")).unwrap()).unwrap();
    assert_eq!(curve.len(), 3);
    std::fs::write(d.join("c.toml"), "deterministic = true\n[fusion]\nmode = \"merger\"\ncheckpoint = \"m.ovom\"\n").unwrap();
    ok(&vocmap(&["run", "--sequence", "seq", "--config", "c.toml", "--out", "map"], d));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = vocmap(&["run", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(vocmap(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn runtime_errors_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = vocmap(&["run", "--sequence", "nowhere/manifest.json", "--out", "map"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/manifest.json"));

    synth(d, "2");
    let before = listing(&d.join("seq"));
    for target in ["seq", "seq/inner"] {
        let out = vocmap(&["run", "--sequence", "seq", "--out", target], d);
        assert_eq!(out.status.code(), Some(1), "{target}");
    }
    assert_eq!(listing(&d.join("seq")), before);
}
