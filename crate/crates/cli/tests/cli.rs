use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowdistill"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small dataset shared by most tests.
fn dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let o = run(&[
        "generate",
        "--synth-n",
        "4",
        "--synth-t",
        "300",
        "--seed",
        "1",
        "--out",
        p(&data),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

const SMALL: &[&str] = &[
    "--d",
    "4",
    "--k",
    "4",
    "--layers",
    "2",
    "--h-in",
    "4",
    "--h-out",
    "4",
    "--temporal-window",
    "4",
    "--max-epochs",
    "2",
    "--train-ratio",
    "0.4",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn generate_writes_flows_meta_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "generate",
        "--synth-n",
        "16",
        "--synth-t",
        "2000",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let flows = fs::read_to_string(out.join("flows.csv")).unwrap();
    assert!(flows.starts_with("region_id,timestamp,inflow,outflow\n"));
    assert_eq!(flows.lines().count(), 1 + 16 * 2000);
    let meta = fs::read_to_string(out.join("meta.txt")).unwrap();
    assert!(meta.contains("regions = 16"));
    assert!(fs::read_to_string(out.join("effective_config.txt"))
        .unwrap()
        .contains("synth_t = 2000"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 1\nsynth_t = 50\nsynth_n = 4\n").unwrap();
    let out = dir.path().join("o");
    let o = run(&[
        "generate",
        "--config",
        p(&cfg),
        "--seed",
        "7",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eff = fs::read_to_string(out.join("effective_config.txt")).unwrap();
    assert!(eff.contains("seed = 7\n"));
    assert!(eff.contains("synth_t = 50\n"));
}

#[test]
fn usage_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train", "--foo", "1"]).status.code(), Some(2));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "colour = red\n").unwrap();
    let o = run(&[
        "generate",
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));

    let o = run(&[
        "generate",
        "--synth-t",
        "lots",
        "--out",
        p(&dir.path().join("y")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("synth_t"));

    let o = run(&["train", "--out", p(&dir.path().join("z"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--data"));
}

#[test]
fn training_without_teacher_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let o = run(&with_small(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&dir.path().join("t")),
    ]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("teacher required"));

    let o = run(&with_small(&[
        "train",
        "--data",
        p(&data),
        "--lambda-tbl",
        "0",
        "--out",
        p(&dir.path().join("t")),
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn runtime_failures_exit_1_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "train",
        "--data",
        p(&dir.path().join("nope")),
        "--teacher",
        "oracle",
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("load data"), "{}", stderr(&o));

    let data = dataset(dir.path());
    let o = run(&with_small(&[
        "train",
        "--data",
        p(&data),
        "--teacher",
        p(&dir.path().join("missing.fdtp")),
        "--out",
        p(&dir.path().join("o")),
    ]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("teacher"), "{}", stderr(&o));
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let a = dir.path().join("a");
    let o = run(&with_small(&[
        "train",
        "--data",
        p(&data),
        "--teacher",
        "oracle",
        "--seed",
        "3",
        "--out",
        p(&a),
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    let b = dir.path().join("b");
    let o = run(&[
        "train",
        "--config",
        p(&a.join("effective_config.txt")),
        "--out",
        p(&b),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(a.join("train_log.csv")).unwrap(),
        fs::read_to_string(b.join("train_log.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("last.fdck")).unwrap(),
        fs::read(b.join("last.fdck")).unwrap()
    );
}

#[test]
fn evaluate_predict_and_reuse_predictions_as_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let t = dir.path().join("t");
    let o = run(&with_small(&[
        "train",
        "--data",
        p(&data),
        "--teacher",
        "oracle",
        "--out",
        p(&t),
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = t.join("best.fdck");

    let e = dir.path().join("e");
    let o = run(&with_small(&[
        "evaluate",
        "--data",
        p(&data),
        "--ckpt",
        p(&ck),
        "--out",
        p(&e),
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(e.join("horizon.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 4
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(e.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"][0]["scope"], "overall");

    let o = run(&with_small(&[
        "evaluate",
        "--data",
        p(&data),
        "--out",
        p(&e),
    ]));
    assert_eq!(o.status.code(), Some(2));

    let pr = dir.path().join("p");
    let o = run(&with_small(&[
        "predict",
        "--data",
        p(&data),
        "--ckpt",
        p(&ck),
        "--out",
        p(&pr),
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&with_small(&[
        "train",
        "--data",
        p(&data),
        "--teacher",
        p(&pr.join("predictions.fdtp")),
        "--out",
        p(&dir.path().join("t2")),
    ]));
    assert!(o.status.success(), "{}", stderr(&o));

    // a different split layout must not accept the file
    let o = run(&with_small(&[
        "train",
        "--data",
        p(&data),
        "--teacher",
        p(&pr.join("predictions.fdtp")),
        "--val-ratio",
        "0.2",
        "--out",
        p(&dir.path().join("t3")),
    ]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fingerprint"), "{}", stderr(&o));
}

#[test]
fn sweep_reports_one_row_per_ratio_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("s");
    let o = run(&with_small(&[
        "sweep",
        "--data",
        p(&data),
        "--teacher",
        "oracle",
        "--ratios",
        "0.1,0.3,0.5",
        "--seeds",
        "3",
        "--out",
        p(&out),
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 9);
    assert!(report["environment"]["timer"].is_string());
    let table = fs::read_to_string(out.join("sweep_table.csv")).unwrap();
    assert!(table.starts_with("Method,10% MAE,10% RMSE,30% MAE,30% RMSE,50% MAE,50% RMSE\n"));
}

#[test]
fn ablate_emits_five_variants() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("a");
    let o = run(&with_small(&[
        "ablate",
        "--data",
        p(&data),
        "--teacher",
        "oracle",
        "--seeds",
        "1",
        "--out",
        p(&out),
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let models: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        models,
        ["FlowDistill", "w/o-TB", "w/o-IB", "w/o-SC", "w/o-TC"]
    );
}

#[test]
fn export_prompts_writes_instruction_text() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let poi = dir.path().join("poi.csv");
    fs::write(&poi, "region_id,poi_categories\n0,Food;Nightlife Spot\n").unwrap();
    let out = dir.path().join("pr");
    let o = run(&[
        "export-prompts",
        "--data",
        p(&data),
        "--poi",
        p(&poi),
        "--prompt-limit",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files: Vec<_> = fs::read_dir(out.join("prompts")).unwrap().collect();
    assert_eq!(files.len(), 2);
    let text = fs::read_to_string(files[0].as_ref().unwrap().path()).unwrap();
    assert!(
        text.contains("within a four-kilometer radius, covering Food, Nightlife Spot categories.")
    );
    assert!(text.contains(
        "This region is located within the city of New York City; no POI information available."
    ));
    assert!(text.contains("<ST_PRE>"));
}

#[test]
fn bench_with_one_rep_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = run(&[
        "bench",
        "--bench-regions",
        "2",
        "--bench-windows",
        "4",
        "--bench-multiples",
        "1,2",
        "--bench-reps",
        "1",
        "--d",
        "2",
        "--k",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 3);
}
