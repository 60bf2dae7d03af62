use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowknn::{synth_generate, Dataset, SynthConfig};

fn flowknn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowknn"))
        .args(args)
        .env("FLOWKNN_LOG", "error")
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn small_corpus(dir: &Path) -> PathBuf {
    let path = dir.join("train.csv");
    let o = flowknn(&[
        "synth",
        "--out",
        path.to_str().unwrap(),
        "--classes",
        "3",
        "--per-class",
        "30",
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

// Golden rows, by hand from the fixture (window 20, malformed line 7 skipped):
//   cam1 [0,20):  UDP 100 + UDP 300 with 8.8.8.8, TCP 60 to 1.1.1.1
//                 -> 0, 1/3, 2/3, diversity 2/3, 3 packets, mean 460/3
//   cam1 [20,40): ICMP 84, TCP 1500 from 5.5.5.5, OTHER 40 to 1.1.1.1
//                 -> 1/3, 1/3, 0, diversity 2/3, 3 packets, mean 1624/3
//   plug7 [60,80): TCP 200 and 600 with 9.9.9.9 -> 0, 1, 0, 1/2, 2, 400
#[test]
fn extract_matches_golden_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("features.csv");
    let o = flowknn(&[
        "extract",
        "--in",
        fixture("packets.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let golden = fs::read(fixture("features.golden.csv")).unwrap();
    assert_eq!(fs::read(&out).unwrap(), golden);
    // only the output file remains: the temp file was renamed into place
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);

    let o = flowknn(&["extract", "--in", fixture("packets.csv").to_str().unwrap()]);
    assert_eq!(o.stdout, golden);
}

#[test]
fn extract_strict_rejects_bad_rows() {
    let o = flowknn(&[
        "extract",
        "--in",
        fixture("packets.csv").to_str().unwrap(),
        "--strict",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn extract_with_label_and_window_length() {
    let o = flowknn(&[
        "extract",
        "--in",
        fixture("packets.csv").to_str().unwrap(),
        "--window-length",
        "100",
        "--label",
        "camera",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].ends_with(",label"));
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("cam1,0,0.166666667,0.333333333,0.333333333,"));
    assert!(lines.iter().skip(1).all(|l| l.ends_with(",camera")));
}

#[test]
fn help_lists_defaults() {
    let cases: [(&str, &[&str]); 6] = [
        (
            "extract",
            &[
                "--in",
                "--out",
                "[default: -]",
                "--window-length",
                "[default: 20]",
                "--strict",
            ],
        ),
        (
            "synth",
            &[
                "--seed",
                "[default: 0]",
                "--classes",
                "[default: 6]",
                "[default: 2000]",
                "[default: 0.3]",
            ],
        ),
        (
            "tune-k",
            &[
                "--in",
                "--folds",
                "[default: 10]",
                "[default: 1,3,5,7,9,11]",
                "--seed",
            ],
        ),
        (
            "eval",
            &[
                "--split",
                "[default: 0.5]",
                "--k",
                "[default: 5]",
                "--selector",
                "[default: kmin]",
                "--seed",
            ],
        ),
        (
            "bench",
            &[
                "--sizes",
                "--ks",
                "--strategies",
                "[default: kmin,bubble,merge,oddeven,enumeration]",
                "--reps",
                "[default: 5]",
                "--seed",
            ],
        ),
        (
            "classify",
            &[
                "--train",
                "--in",
                "--out",
                "--k",
                "[default: 5]",
                "--selector",
                "[default: kmin]",
            ],
        ),
    ];
    for (cmd, needles) in cases {
        let o = flowknn(&[cmd, "--help"]);
        assert!(o.status.success());
        let help = stdout(&o);
        for n in needles {
            assert!(help.contains(n), "{cmd} --help lacks {n}:\n{help}");
        }
    }
}

#[test]
fn usage_errors_exit_2_and_name_the_flag() {
    let cases: [(&[&str], &str); 6] = [
        (&["classify", "--train", "x", "--k", "0"], "--k"),
        (&["bench", "--strategies", "kmin,heap"], "--strategies"),
        (&["eval", "--in", "x", "--split", "1.5"], "--split"),
        (&["tune-k", "--in", "x", "--folds", "1"], "--folds"),
        (
            &["extract", "--in", "x", "--window-length", "0"],
            "--window-length",
        ),
        (&["bench", "--reps", "many"], "--reps"),
    ];
    for (args, flag) in cases {
        let o = flowknn(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).contains(flag), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(flowknn(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let o = flowknn(&["tune-k", "--in", "/definitely/not/here.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/definitely/not/here.csv"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "device_id,window_start,icmp_pct,tcp_pct,udp_pct,ip_diversity,packet_count,mean_packet_size,label\na,0,0,1,0,0.5,2\n").unwrap();
    let o = flowknn(&["tune-k", "--in", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn bench_enumeration_counts() {
    let o = flowknn(&[
        "bench",
        "--sizes",
        "100",
        "--ks",
        "5",
        "--strategies",
        "enumeration",
        "--reps",
        "3",
        "--seed",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["meta"]["seed"], 1);
    assert_eq!(v["meta"]["reps"], 3);
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 1);
    for stat in ["min", "median", "max"] {
        assert_eq!(cells[0]["comparisons"][stat], 9900);
    }
}

#[test]
fn tune_k_defaults_to_ten_folds_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let train = small_corpus(dir.path());
    let a = flowknn(&["tune-k", "--in", train.to_str().unwrap()]);
    assert!(a.status.success(), "{}", stderr(&a));
    let text = stdout(&a);
    assert!(text.contains("\"folds\":10"), "{text}");
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["scores"].as_object().unwrap().len(), 6);
    let b = flowknn(&["tune-k", "--in", train.to_str().unwrap()]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn synth_defaults_are_the_calibrated_corpus() {
    let o = flowknn(&["synth"]);
    assert!(o.status.success());
    let mut want = Vec::new();
    synth_generate(&SynthConfig::calibrated())
        .unwrap()
        .write_csv(&mut want)
        .unwrap();
    assert_eq!(o.stdout, want);
}

#[test]
fn synth_writes_label_table() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.json");
    let o = flowknn(&[
        "synth",
        "--classes",
        "3",
        "--per-class",
        "2",
        "--labels",
        labels.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&labels).unwrap()).unwrap();
    assert_eq!(v["labels"][2]["name"], "ddos-udp");
    assert_eq!(v["labels"][2]["ordinal"], 2);
}

#[test]
fn eval_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let train = small_corpus(dir.path());
    let o = flowknn(&[
        "eval",
        "--in",
        train.to_str().unwrap(),
        "--tune",
        "--folds",
        "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["train_size"], 45);
    assert_eq!(v["test_size"], 45);
    assert_eq!(v["tuning"]["folds"], 5);
    assert_eq!(v["evaluation"]["k"], v["tuning"]["best_k"]);
    assert!(v["evaluation"]["accuracy"].as_f64().unwrap() > 0.9);

    let o = flowknn(&[
        "eval",
        "--in",
        train.to_str().unwrap(),
        "--k",
        "3",
        "--selector",
        "merge",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["tuning"], serde_json::Value::Null);
    assert_eq!(v["evaluation"]["selector"], "merge");
}

#[test]
fn classify_self_match() {
    let dir = tempfile::tempdir().unwrap();
    let train = small_corpus(dir.path());
    let data = Dataset::read_csv(fs::File::open(&train).unwrap()).unwrap();
    let text = fs::read_to_string(&train).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let row = lines.nth(40).unwrap();
    let queries = dir.path().join("q.csv");
    fs::write(&queries, format!("{header}\n{row}\n")).unwrap();

    let o = flowknn(&[
        "classify",
        "--train",
        train.to_str().unwrap(),
        "--in",
        queries.to_str().unwrap(),
        "--k",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let fields: Vec<&str> = out.trim_end().split(',').collect();
    let s = &data.samples()[40];
    assert_eq!(fields.len(), 4);
    assert_eq!(fields[0], s.device_id);
    assert_eq!(fields[1].parse::<f64>().unwrap(), s.window_start);
    assert_eq!(fields[2], data.labels().name(s.label).unwrap());
    fields[3].parse::<u64>().unwrap();
}

#[test]
fn classify_empty_queries() {
    let dir = tempfile::tempdir().unwrap();
    let train = small_corpus(dir.path());
    let header_only = dir.path().join("h.csv");
    fs::write(&header_only, "device_id,window_start,icmp_pct,tcp_pct,udp_pct,ip_diversity,packet_count,mean_packet_size\n").unwrap();
    let empty = dir.path().join("e.csv");
    fs::write(&empty, "").unwrap();
    for q in [&header_only, &empty] {
        let o = flowknn(&[
            "classify",
            "--train",
            train.to_str().unwrap(),
            "--in",
            q.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        assert!(o.stdout.is_empty());
    }
}

#[test]
fn classify_rejects_malformed_queries_with_row_number() {
    let dir = tempfile::tempdir().unwrap();
    let train = small_corpus(dir.path());
    let q = dir.path().join("q.csv");
    fs::write(&q, "device_id,window_start,icmp_pct,tcp_pct,udp_pct,ip_diversity,packet_count,mean_packet_size\nd,0,0,1,0,0.5,2,70\nd,20,0,1,0.5,2,70\n").unwrap();
    let o = flowknn(&[
        "classify",
        "--train",
        train.to_str().unwrap(),
        "--in",
        q.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}
