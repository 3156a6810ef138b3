use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn lcdl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcdl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}, stderr: {}", o.status.code(), stderr(o));
}

fn assert_fails(o: &Output, code: i32, tag: &str) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(lines[0].starts_with(&format!("{tag}: ")), "stderr: {err}");
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Benchmark split plus a trained model.
    fn trained() -> Self {
        let ws = Self::synthesized();
        let o = lcdl(
            &[
                "train",
                "--input",
                "train.csv",
                "--atoms-per-class",
                "10",
                "--lambda1",
                "1e-3",
                "--lambda2",
                "1e-6",
                "--theta",
                "0.2",
                "--eta1",
                "1e-2",
                "--eta2",
                "5",
                "--seed",
                "7",
                "--out",
                "model.lcd",
                "--trace",
                "trace.csv",
            ],
            ws.path(),
        );
        assert_ok(&o);
        ws
    }

    fn synthesized() -> Self {
        let dir = TempDir::new().unwrap();
        let o = lcdl(
            &[
                "synth",
                "--classes",
                "3",
                "--dim",
                "20",
                "--per-class",
                "60",
                "--separation",
                "5",
                "--seed",
                "1",
                "--out-train",
                "train.csv",
                "--out-test",
                "test.csv",
            ],
            dir.path(),
        );
        assert_ok(&o);
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, contents: &str) {
        fs::write(self.file(name), contents).unwrap();
    }

    fn run(&self, args: &[&str]) -> Output {
        lcdl(args, self.path())
    }
}

#[test]
fn synth_writes_labeled_split() {
    let ws = Workspace::synthesized();
    let train = fs::read_to_string(ws.file("train.csv")).unwrap();
    let test = fs::read_to_string(ws.file("test.csv")).unwrap();
    assert!(train.starts_with("label,f1,"));
    // header plus 90 samples in each half
    assert_eq!(train.lines().count(), 91);
    assert_eq!(test.lines().count(), 91);
    assert_eq!(train.lines().nth(1).unwrap().split(',').count(), 21);
}

#[test]
fn synth_is_byte_deterministic() {
    let a = Workspace::synthesized();
    let b = Workspace::synthesized();
    for name in ["train.csv", "test.csv"] {
        assert_eq!(fs::read(a.file(name)).unwrap(), fs::read(b.file(name)).unwrap());
    }
}

#[test]
fn synth_zero_separation_runs() {
    let ws = Workspace::synthesized();
    let o = ws.run(&[
        "synth",
        "--separation",
        "0",
        "--out-train",
        "a.csv",
        "--out-test",
        "b.csv",
    ]);
    assert_ok(&o);
}

#[test]
fn synth_rejects_impossible_split() {
    let ws = Workspace::synthesized();
    let o = ws.run(&[
        "synth",
        "--per-class",
        "4",
        "--train-per-class",
        "4",
        "--out-train",
        "a.csv",
        "--out-test",
        "b.csv",
    ]);
    assert_fails(&o, 2, "E_CONFIG");
}

#[test]
fn train_eval_predict_round() {
    let ws = Workspace::trained();
    assert!(ws.file("model.lcd").exists());

    let o = ws.run(&[
        "eval",
        "--model",
        "model.lcd",
        "--input",
        "test.csv",
        "--confusion",
        "conf.csv",
    ]);
    assert_ok(&o);
    let line = stdout(&o);
    let acc: f64 = line.trim().strip_prefix("accuracy=").unwrap().parse().unwrap();
    assert!(acc >= 0.95, "{line}");

    let conf = fs::read_to_string(ws.file("conf.csv")).unwrap();
    let mut rows = conf.lines();
    assert_eq!(rows.next().unwrap(), "true\\pred,1,2,3");
    let total: usize = rows
        .map(|r| r.split(',').skip(1).map(|v| v.parse::<usize>().unwrap()).sum::<usize>())
        .sum();
    assert_eq!(total, 90);

    let o = ws.run(&["predict", "--model", "model.lcd", "--input", "test.csv"]);
    assert_ok(&o);
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 90);
    let truth: Vec<String> = fs::read_to_string(ws.file("test.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    let mut correct = 0;
    for (i, l) in lines.iter().enumerate() {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f.len(), 3);
        assert_eq!(f[0], i.to_string());
        f[2].parse::<f64>().unwrap();
        correct += usize::from(f[1] == truth[i]);
    }
    // predict and eval share one decision path
    assert_eq!(correct as f64 / 90.0, acc);
}

#[test]
fn perfect_on_training_subset() {
    let ws = Workspace::trained();
    let o = ws.run(&["eval", "--model", "model.lcd", "--input", "train.csv"]);
    assert_ok(&o);
    assert_eq!(stdout(&o).trim(), "accuracy=1.0");
}

#[test]
fn predict_single_sample_and_order() {
    let ws = Workspace::trained();
    let test = fs::read_to_string(ws.file("test.csv")).unwrap();
    let rows: Vec<&str> = test.lines().collect();
    let feature_row = |r: &str| r.split_once(',').unwrap().1.to_string();

    ws.write("one.csv", &format!("{}\n", feature_row(rows[5])));
    let o = ws.run(&["predict", "--model", "model.lcd", "--input", "one.csv"]);
    assert_ok(&o);
    let single = stdout(&o);
    assert_eq!(single.lines().count(), 1);

    // Reversed input yields reversed predictions.
    let fwd: String = rows[1..].iter().map(|r| feature_row(r) + "\n").collect();
    let rev: String = rows[1..].iter().rev().map(|r| feature_row(r) + "\n").collect();
    ws.write("fwd.csv", &fwd);
    ws.write("rev.csv", &rev);
    let a = stdout(&ws.run(&["predict", "--model", "model.lcd", "--input", "fwd.csv"]));
    let b = stdout(&ws.run(&["predict", "--model", "model.lcd", "--input", "rev.csv"]));
    let strip = |s: &str| -> Vec<String> { s.lines().map(|l| l.split_once(',').unwrap().1.to_string()).collect() };
    let mut b = strip(&b);
    b.reverse();
    assert_eq!(strip(&a), b);
    assert_eq!(strip(&single)[0], strip(&a)[4]);
}

#[test]
fn eta2_zero_matches_residual_only_rule() {
    let ws = Workspace::trained();
    let o = ws.run(&["predict", "--model", "model.lcd", "--input", "test.csv", "--eta2", "0"]);
    assert_ok(&o);
    let out = stdout(&o);

    let model = lcdl::persist::load_model(ws.file("model.lcd")).unwrap();
    let table = lcdl::ingest::load_matrix(ws.file("test.csv"), None).unwrap();
    let x = model.prepare(&table.features).unwrap();
    for (i, line) in out.lines().enumerate() {
        let z = model.projector.code(&x.column(i).into_owned()).unwrap();
        let r = lcdl::classifier::regularized_residuals(&x.column(i).into_owned(), &z, &model.dictionary).unwrap();
        let best = lcdl::classifier::argmin(r.as_slice()) + 1;
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], model.label_map.decode(best));
        assert_eq!(fields[2].parse::<f64>().unwrap(), r[best - 1]);
    }
}

#[test]
fn trace_header_echoes_config_and_report_summarizes() {
    let ws = Workspace::trained();
    let trace = fs::read_to_string(ws.file("trace.csv")).unwrap();
    assert!(trace.contains("# seed = 7\n"));
    assert!(trace.contains("# theta = 0.2\n"));
    assert!(trace.contains("\niteration,objective,mean_active_set_size\n"));

    let o = ws.run(&["report", "--trace", "trace.csv"]);
    assert_ok(&o);
    let out = stdout(&o);
    assert!(out.contains("iterations = "));
    assert!(out.contains("objective_last = "));
}

#[test]
fn config_file_and_flag_precedence() {
    let ws = Workspace::synthesized();
    ws.write(
        "run.conf",
        "# benchmark\ninput = train.csv\nout = from_config.lcd\ntrace = t.csv\nseed = 3\nmax-iters = 4\nknn_k = 4\n",
    );
    let o = ws.run(&["train", "--config", "run.conf", "--seed", "11"]);
    assert_ok(&o);
    assert!(ws.file("from_config.lcd").exists());
    let trace = fs::read_to_string(ws.file("t.csv")).unwrap();
    assert!(trace.contains("# seed = 11\n"));
    assert!(trace.contains("# max_iters = 4\n"));
    assert!(trace.contains("# knn_k = 4\n"));

    ws.write("bad.conf", "input = train.csv\nout = x.lcd\nnot_a_key = 1\n");
    assert_fails(&ws.run(&["train", "--config", "bad.conf"]), 2, "E_CONFIG");
    ws.write("broken.conf", "just words\n");
    assert_fails(&ws.run(&["train", "--config", "broken.conf"]), 2, "E_CONFIG");
}

#[test]
fn pca_model_accepts_raw_features() {
    let ws = Workspace::synthesized();
    let o = ws.run(&["train", "--input", "train.csv", "--pca-dim", "8", "--out", "pca.lcd"]);
    assert_ok(&o);
    let o = ws.run(&["eval", "--model", "pca.lcd", "--input", "test.csv"]);
    assert_ok(&o);
    let acc: f64 = stdout(&o).trim().strip_prefix("accuracy=").unwrap().parse().unwrap();
    assert!(acc > 0.9);
}

#[test]
fn missing_input_is_io_error() {
    let ws = Workspace::synthesized();
    assert_fails(
        &ws.run(&["train", "--input", "absent.csv", "--out", "m.lcd"]),
        2,
        "E_IO",
    );
}

#[test]
fn knn_k_at_least_atom_count_is_config_error() {
    let ws = Workspace::synthesized();
    let o = ws.run(&["train", "--input", "train.csv", "--out", "m.lcd", "--knn-k", "30"]);
    assert_fails(&o, 2, "E_CONFIG");
    assert!(!ws.file("m.lcd").exists());
}

#[test]
fn dimension_mismatch_is_dim_error() {
    let ws = Workspace::trained();
    ws.write("short.csv", "label,f1,f2\n1,0.5,0.25\n");
    assert_fails(
        &ws.run(&["eval", "--model", "model.lcd", "--input", "short.csv"]),
        2,
        "E_DIM",
    );
    assert_fails(
        &ws.run(&["predict", "--model", "model.lcd", "--input", "short.csv"]),
        2,
        "E_DIM",
    );
}

#[test]
fn unknown_model_version_is_reported() {
    let ws = Workspace::trained();
    let mut bytes = fs::read(ws.file("model.lcd")).unwrap();
    bytes[4] = 9;
    fs::write(ws.file("future.lcd"), bytes).unwrap();
    let o = ws.run(&["eval", "--model", "future.lcd", "--input", "test.csv"]);
    assert_fails(&o, 2, "E_MODEL_VERSION");
}

#[test]
fn malformed_data_exits_with_data_code() {
    let ws = Workspace::synthesized();
    ws.write("ragged.csv", "label,f1,f2\n1,0.5,0.25\n2,0.1\n");
    assert_fails(
        &ws.run(&["train", "--input", "ragged.csv", "--out", "m.lcd"]),
        3,
        "E_DATA",
    );
    ws.write("nolabels.csv", "0.5,0.25\n0.1,0.2\n");
    assert_fails(
        &ws.run(&["train", "--input", "nolabels.csv", "--out", "m.lcd"]),
        3,
        "E_DATA",
    );
}

#[test]
fn unknown_flag_is_usage_error() {
    let ws = Workspace::synthesized();
    let o = ws.run(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).lines().count(), 1);
}
