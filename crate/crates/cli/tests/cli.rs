use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pel_core::metrics::{self, EvalReport};

fn pel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pel")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const TINY: &str = "widths = 4, 4, 8, 8\ninput_size = 16\nbatch_size = 4\nepochs = 2\ntrain_size = 8\nval_size = 4\ntest_size = 4\n";

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn no_arguments_is_usage_error() {
    let o = pel(&[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    assert_eq!(code(&pel(&["fly"])), 1);
    assert_eq!(code(&pel(&["train", "--bogus"])), 1);
    assert_eq!(code(&pel(&["--help"])), 0);
}

#[test]
fn missing_config_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = pel(&["train", "--config", "missing.cfg", "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.cfg"));
}

#[test]
fn bad_stream_name_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&pel(&["cam", "--stream", "depth", "--out", out])), 1);
}

#[test]
fn train_eval_and_visualize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let o = pel(&["train", "--config", &cfg, "--seed", "3", "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,loss,train_acc,val_acc,val_auc");
    assert_eq!(lines.len(), 3);

    let o = pel(&["eval", "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = EvalReport::read_csv(out.join("report.csv")).unwrap();
    assert_eq!(report.samples.len(), 4);
    let auc = metrics::compute_auc(&report.scores(), &report.labels()).unwrap();
    assert!((auc - report.auc).abs() <= 1e-12);
    let acc = metrics::compute_acc(&report.scores(), &report.labels()).unwrap();
    assert!((acc - report.acc).abs() <= 1e-12);

    let o = pel(&["perturb-eval", "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("perturb.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "kind,strength,acc,auc,delta_acc,delta_auc");
    assert_eq!(rows.len(), 4);
    assert!(rows[2].starts_with("salt_pepper,0.02,"));

    let o = pel(&["cam", "--out", out_s, "--count", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(out.join("cam")).unwrap().count(), 3);
    let o = pel(&["residuals", "--out", out_s, "--count", "1", "--module", "mutual"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&pel(&["cam", "--out", out_s, "--block", "9"])), 1);

    // Resuming a finished run appends nothing.
    let o = pel(&["train", "--resume", out.join("model.ckpt").to_str().unwrap(), "--out", out_s]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(out.join("train_log.csv")).unwrap(), log);
}

#[test]
fn corrupt_checkpoint_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("model.ckpt"), b"NOTACKPT").unwrap();
    let o = pel(&["eval", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}

#[test]
fn gen_data_and_decompose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let o = pel(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(data.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 17);
    let first = manifest.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    let bands = dir.path().join("bands");
    let o = pel(&[
        "decompose",
        "--input",
        data.join(first).to_str().unwrap(),
        "--out",
        bands.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(&bands).unwrap().count(), 192);
    assert!(bands.join("band_y_00.pgm").exists());
    let o = pel(&["decompose", "--input", "nope.ppm", "--out", bands.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn ablate_emits_eight_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("a.cfg");
    fs::write(&cfg, TINY.replace("epochs = 2", "epochs = 1")).unwrap();
    let out = dir.path().join("abl");
    let o = pel(&["ablate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,rgb,freq,self,mutual,acc,auc");
    assert_eq!(lines.len(), 9);
    assert!(lines[8].starts_with("pel,1,1,1,1,"));
}
