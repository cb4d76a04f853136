use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const GRID: &str = "1:0.0078125,8:0.0078125,8:0.125,64:0.001953125";

fn histotile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histotile")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = histotile(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    histotile(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let bytes = if rel == "manifest.json" { Vec::new() } else { fs::read(&path).unwrap() };
                out.push((rel, bytes));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_reproducible_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |out: &Path| {
        ["synth", "--out", p(out), "--seed", "5", "--patients-per-class", "2", "--images-per-patient", "2", "--width", "300", "--height", "150", "--mags", "40,200"]
            .map(String::from)
    };
    let summary = ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    assert!(summary.contains("images: 16"), "{summary}");
    assert!(summary.contains("patients: 4"));
    assert!(summary.contains("40X") && summary.contains("200X"));
}

#[test]
fn scan_reports_and_fails_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let crc = dir.path().join("crc");
    ok(&["synth", "--crc", "--out", p(&crc), "--per-class", "3", "--tile-side", "32"]);
    let table = ok(&["scan", p(&crc), "--kind", "crc"]);
    for code in ["T", "ST", "C", "L", "D", "M", "A", "E"] {
        assert!(table.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == [code, "3"]), "{table}");
    }
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["scan", p(&empty)]), 2);
    assert_eq!(code(&["scan", p(&dir.path().join("missing"))]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
}

#[test]
fn train_filter_writes_identical_models() {
    let dir = tempfile::tempdir().unwrap();
    let crc = dir.path().join("crc");
    ok(&["synth", "--crc", "--out", p(&crc), "--per-class", "26", "--tile-side", "64", "--seed", "2"]);
    let (m1, m2) = (dir.path().join("m1.json"), dir.path().join("m2.json"));
    let base = ["train-filter", "--crc", p(&crc), "--filter", "7", "--features", "pftas", "--seed", "1", "--scale", "0.04", "--grid", GRID];
    let line = ok(&[&base[..], &["--out", p(&m1)]].concat());
    ok(&[&base[..], &["--out", p(&m2)]].concat());
    assert!(line.contains("validation accuracy"), "{line}");
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    assert_eq!(code(&["train-filter", "--crc", p(&crc), "--filter", "9", "--out", p(&m1)]), 2);
}

#[test]
fn run_matrix_writes_one_report_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, crc, out) = (dir.path().join("corpus"), dir.path().join("crc"), dir.path().join("out"));
    ok(&["synth", "--out", p(&corpus), "--seed", "1", "--patients-per-class", "5", "--images-per-patient", "1", "--width", "300", "--height", "300", "--mags", "40,100"]);
    ok(&["synth", "--crc", "--out", p(&crc), "--per-class", "26", "--tile-side", "64", "--seed", "2"]);
    let config = dir.path().join("run.toml");
    fs::write(&config, format!("corpus = {:?}\ncorpus_kind = \"synthetic\"\nseed = 3\nfilters = [0]\nmags = [40]\n", p(&corpus))).unwrap();
    let stdout = ok(&[
        "run", "--config", p(&config), "--crc", p(&crc), "--crc-scale", "0.04", "--filters", "0,7", "--mags", "40,100",
        "--grid", GRID, "--out", p(&out), "--jobs", "2",
    ]);
    assert!(stdout.contains("4 runs, 20 fold executions"), "{stdout}");
    for f in [0, 7] {
        for m in [40, 100] {
            assert!(out.join(format!("report-f{f}-m{m}.json")).exists());
            let csv = fs::read_to_string(out.join(format!("report-f{f}-m{m}.csv"))).unwrap();
            assert!(csv.starts_with("magnification,level,rule,mean,std"));
        }
    }
    assert!(out.join("filter-7.json").exists());
    let retention = fs::read_to_string(out.join("retention.csv")).unwrap();
    assert!(retention.starts_with("magnification,filter,pct_patches,pct_images,pct_patients,flagged"));
    assert_eq!(retention.lines().count(), 3);

    let table = ok(&["report", p(&out)]);
    assert!(table.starts_with("filter,magnification,features,level,rule,mean,std,flagged"));
    assert!(table.lines().count() > 4);
}

#[test]
fn run_rejects_inconsistent_settings() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["synth", "--out", p(&corpus), "--patients-per-class", "5", "--images-per-patient", "1", "--width", "150", "--height", "150"]);
    let out = dir.path().join("out");
    let base = ["run", "--corpus", p(&corpus), "--kind", "synthetic", "--out", p(&out), "--seed", "1"];
    assert_eq!(code(&[&base[..], &["--features", "deep", "--pca", "100"]].concat()), 2);
    assert_eq!(code(&[&base[..], &["--filters", "9"]].concat()), 2);
    assert_eq!(code(&[&base[..], &["--filters", "7"]].concat()), 2);
    assert_eq!(code(&["run", "--corpus", p(&corpus), "--kind", "synthetic", "--out", p(&out)]), 2);
}

#[test]
fn import_deep_names_the_bad_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("deep.csv");
    let header: Vec<String> = (0..2048).map(|i| format!("f{i}")).collect();
    let row = vec!["0.5"; 2048].join(",");
    let short = vec!["0.5"; 2047].join(",");
    fs::write(&csv, format!("patient_id,image_id,col,row,{}\nP,a,0,0,{row}\nP,b,0,0,{short}\n", header.join(","))).unwrap();
    let out = histotile(&["import-deep", p(&csv)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"), "{}", String::from_utf8_lossy(&out.stderr));
}
