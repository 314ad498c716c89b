use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn codecwatt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codecwatt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn simulate(out: &Path) -> Output {
    let out = out.to_str().unwrap();
    codecwatt(&["simulate", "--seed", "3", "--out", out, "--sequences", "2"])
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, rb) = (simulate(a.path()), simulate(b.path()));
    assert!(ra.status.success(), "{}", String::from_utf8_lossy(&ra.stderr));
    assert!(rb.status.success());
    let (fa, fb) = (read_dir_sorted(a.path()), read_dir_sorted(b.path()));
    assert!(fa.iter().any(|(n, _)| n == "table2.csv"));
    assert!(fa.iter().any(|(n, _)| n == "summary.txt"));
    assert_eq!(fa, fb);
    let stdout = String::from_utf8(ra.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.ends_with("fits.csv")));
}

#[test]
fn analyze_writes_one_row_per_group() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simulate(dir.path()).status.success());
    let out = dir.path().join("analysis");
    let r = codecwatt(&[
        "analyze",
        "--in",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let table = fs::read_to_string(out.join("table2.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "codec,process,pcc,scc,kcc,r2,epsilon");
    let groups: Vec<String> = lines[1..]
        .iter()
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(" "))
        .collect();
    assert_eq!(groups, ["x264 encode", "x264 decode", "x265 encode", "x265 decode"]);

    let report = codecwatt(&["report", "--in", dir.path().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(report.status.success());
    for f in ["scatter_encode.csv", "scatter_decode.csv", "decomposition.csv", "summary.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let r = codecwatt(&["measure"]);
    assert_eq!(r.status.code(), Some(2));
    let r = codecwatt(&["frobnicate"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    fs::write(
        &path,
        r#"{"sequences": [], "codecs": ["x264"], "crf_set": [30], "resolutions": ["1920x1080"],
            "meters": [], "output_dir": "out"}"#,
    )
    .unwrap();
    let r = codecwatt(&["measure", "--config", path.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("sequences"));

    fs::write(&path, "{ not json").unwrap();
    let r = codecwatt(&["measure", "--config", path.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn missing_inputs_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let r = codecwatt(&["measure", "--config", missing.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4));
    let r = codecwatt(&["analyze", "--in", dir.path().join("empty").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4));
}

#[test]
fn idle_from_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("idle_trace.csv");
    fs::write(&trace, "timestamp,power_w\n0,10\n1,12\n2,14\n").unwrap();
    let out = dir.path().join("idle.csv");
    let r = codecwatt(&[
        "idle",
        "--trace",
        trace.to_str().unwrap(),
        "--meter-id",
        "wall",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(fs::read_to_string(out).unwrap(), "meter_id,idle_w,n_samples\nwall,12.0,3\n");
}
