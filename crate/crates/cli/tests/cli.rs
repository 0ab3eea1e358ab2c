use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "name = tiny\ndataset = synthetic\nsynthetic_size = 8\nsynthetic_train = 20\n\
synthetic_test = 10\nhidden = 24,24\nsel = 10\nspec = 4\nepsilon = 0.1\ntasks = 3\nepochs = 2\n\
lr = 0.05\nbatch_size = 16\nseeds = 1,2\n";

fn spacenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spacenet")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = spacenet(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_eval_export_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.conf");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("runs");
    let (cfg_s, out_s) = (cfg.to_str().unwrap(), out.to_str().unwrap());

    let stdout = ok(&["run", "--config", cfg_s, "--out", out_s, "--checkpoint-after", "2"]);
    assert!(stdout.contains("spacenet seed 1: ACC"));
    assert!(stdout.contains("spacenet seed 2: ACC"));
    let seed1 = out.join("spacenet/seed-1");
    for f in ["report.json", "accuracy_matrix.csv", "config.txt", "timing.json", "checkpoint.json", "checkpoint-task2.json"] {
        assert!(seed1.join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(seed1.join("accuracy_matrix.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("after_task,task,accuracy"));
    assert_eq!(csv.lines().count(), 1 + 6);
    let r = report(&seed1.join("report.json"));
    assert_eq!(r["specific_neurons"], serde_json::json!([12, 12]));

    ok(&["run", "--config", cfg_s, "--out", out_s, "--method", "static", "--seed", "1"]);
    ok(&["run", "--config", cfg_s, "--out", out_s, "--method", "naive", "--seed", "1"]);

    // Resuming the task-2 checkpoint reproduces the uninterrupted report.
    let resumed = dir.path().join("resumed");
    let ck = seed1.join("checkpoint-task2.json");
    ok(&["run", "--config", cfg_s, "--out", resumed.to_str().unwrap(), "--seed", "1", "--resume", ck.to_str().unwrap()]);
    assert_eq!(report(&resumed.join("spacenet/seed-1/report.json")), r);

    let eval = ok(&["eval", "--checkpoint", seed1.join("checkpoint.json").to_str().unwrap(), "--config", cfg_s]);
    assert!(eval.contains("ACC"));
    assert!(eval.contains("task 3:"));

    let exp = dir.path().join("export");
    let exp_s = exp.to_str().unwrap();
    let ck_s = seed1.join("checkpoint.json");
    let grid = ok(&["export", "--what", "conn-grid", "--checkpoint", ck_s.to_str().unwrap(), "--config", cfg_s, "--task", "0", "--out", exp_s]);
    assert!(grid.contains("total connections"));
    let pgm = fs::read_to_string(exp.join("conn-grid-task1.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n8 8\n255\n"));
    let act = ok(&["export", "--what", "activations", "--checkpoint", ck_s.to_str().unwrap(), "--config", cfg_s, "--samples", "5", "--out", exp_s]);
    assert!(act.contains("layer 2: 5x24"));
    assert!(exp.join("activations-layer1.csv").exists());

    let summary = ok(&["metrics", "--runs", out_s]);
    assert!(summary.starts_with("name,method,runs,acc_mean,acc_std,bwt_mean,bwt_std"));
    assert!(summary.contains("tiny,spacenet,2,"));
    assert!(summary.contains("tiny,naive,1,"));
    assert!(out.join("summary.csv").exists());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "hidden = 10\nunknown_key = 3\n").unwrap();
    let out = spacenet(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    let out = spacenet(&["eval", "--checkpoint", dir.path().join("missing.json").to_str().unwrap()]);
    assert!(!out.status.success());

    let out = spacenet(&["metrics", "--runs", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}
