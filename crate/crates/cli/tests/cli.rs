use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn puda(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_puda"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn toy(dir: &Path) {
    let out = puda(dir, &["synth", "--out", "toy", "--entities", "40", "--degree", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

const QUICK: &[&str] = &["--dim", "8", "--epochs", "2", "--batch-size", "64"];

fn with_quick<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(QUICK).copied().collect()
}

#[test]
fn train_writes_checkpoint_metrics_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let out = puda(
        tmp.path(),
        &with_quick(&[
            "train", "--mode", "puda", "--data", "toy", "--out", "run1", "--seed", "7",
        ]),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run = tmp.path().join("run1");
    for f in ["checkpoint.pukg", "metrics.jsonl", "manifest.json", "eval.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    assert_eq!(&fs::read(run.join("checkpoint.pukg")).unwrap()[..6], b"PUKGC1");

    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for key in [
        "epoch",
        "mode",
        "objective",
        "r_p_plus",
        "r_p_minus",
        "r_u_minus",
        "r_star_minus",
        "clamp_frequency",
    ] {
        assert!(lines[0].get(key).is_some(), "metrics lack {key}");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["dim"], "8");
    assert_eq!(manifest["config"]["lr-d"], "0.001");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn completed_run_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let args = with_quick(&["train", "--data", "toy", "--out", "run", "--mode", "pn"]);
    assert_eq!(code(&puda(tmp.path(), &args)), 0);
    let again = puda(tmp.path(), &args);
    assert_eq!(code(&again), 1);
    assert!(stderr(&again).contains("--force"));
    let mut forced = args.clone();
    forced.push("--force");
    assert_eq!(code(&puda(tmp.path(), &forced)), 0);
}

#[test]
fn config_errors_exit_1_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let cases: &[(&[&str], &str)] = &[
        (&["train", "--out", "x"], "`data`"),
        (
            &["train", "--data", "toy", "--out", "x", "--mode", "pu-c", "--pi-p", "0"],
            "`pi-p`",
        ),
        (
            &["train", "--data", "toy", "--out", "x", "--scoring", "rescal"],
            "`scoring`",
        ),
        (
            &["train", "--data", "toy", "--out", "x", "--mode", "puda+"],
            "`negatives`",
        ),
        (
            &["train", "--data", "toy", "--out", "x", "--bogus-flag", "1"],
            "bogus-flag",
        ),
    ];
    for (args, key) in cases {
        let out = puda(tmp.path(), args);
        assert_eq!(code(&out), 1, "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).contains(key), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn missing_dataset_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = puda(tmp.path(), &["train", "--data", "absent", "--out", "x"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    fs::write(
        tmp.path().join("run.conf"),
        "data = toy\nout = fromfile\nmode = pu-r\npi-p = 0.05\ndim = 8\nepochs = 1\nbatch-size = 64\n",
    )
    .unwrap();
    let out = puda(tmp.path(), &["train", "--config", "run.conf", "--epochs", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("fromfile/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["epochs"], "2");
    assert_eq!(manifest["config"]["pi-p"], "0.05");
    assert_eq!(manifest["config"]["mode"], "pu-r");
    let metrics = fs::read_to_string(tmp.path().join("fromfile/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn annotated_negatives_mode_runs() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    // Head 0 against every relation and tail, minus known triples.
    let known = ["train.txt", "valid.txt", "test.txt"]
        .iter()
        .flat_map(|f| {
            fs::read_to_string(tmp.path().join("toy").join(f))
                .unwrap()
                .lines()
                .map(String::from)
                .collect::<Vec<_>>()
        })
        .collect::<std::collections::HashSet<_>>();
    let negatives: String = (0..3)
        .flat_map(|r| (0..40).map(move |t| format!("0\t{r}\t{t}")))
        .filter(|l| !known.contains(l))
        .map(|l| l + "\n")
        .collect();
    fs::write(tmp.path().join("neg.txt"), negatives).unwrap();
    let out = puda(
        tmp.path(),
        &with_quick(&[
            "train",
            "--data",
            "toy",
            "--out",
            "plus",
            "--mode",
            "pn+",
            "--negatives",
            "neg.txt",
        ]),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest = fs::read_to_string(tmp.path().join("plus/manifest.json")).unwrap();
    assert!(manifest.contains("neg.txt"));
}

#[test]
fn evaluate_reproduces_training_report() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let out = puda(
        tmp.path(),
        &with_quick(&["train", "--data", "toy", "--out", "run", "--mode", "pu-r"]),
    );
    assert_eq!(code(&out), 0);
    let trained = String::from_utf8(out.stdout).unwrap();
    let out = puda(
        tmp.path(),
        &[
            "evaluate",
            "--checkpoint",
            "run/checkpoint.pukg",
            "--data",
            "toy",
            "--out",
            "ev",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), trained);
    assert!(tmp.path().join("ev/manifest.json").exists());
}

#[test]
fn evaluate_rejects_foreign_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    assert_eq!(
        code(&puda(
            tmp.path(),
            &with_quick(&["train", "--data", "toy", "--out", "run", "--mode", "pn"])
        )),
        0
    );
    let out = puda(
        tmp.path(),
        &["synth", "--out", "other", "--entities", "50", "--degree", "2"],
    );
    assert_eq!(code(&out), 0);
    let out = puda(
        tmp.path(),
        &["evaluate", "--checkpoint", "run/checkpoint.pukg", "--data", "other"],
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn ablate_writes_all_modes() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let out = puda(
        tmp.path(),
        &with_quick(&[
            "ablate",
            "--data",
            "toy",
            "--out",
            "abl",
            "--seeds",
            "2",
            "--workers",
            "2",
            "--hide-test",
        ]),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let abl = tmp.path().join("abl");
    for mode in ["pn", "pu-c", "pu-r", "da", "puda"] {
        for seed in 0..2 {
            assert!(abl.join(mode).join(format!("seed-{seed}/checkpoint.pukg")).exists());
        }
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(abl.join("ablation.json")).unwrap()).unwrap();
    let rows = summary["rows"].as_array().unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r["mode"].as_str().unwrap()).collect();
    assert_eq!(labels, ["PN", "PU-C", "PU-R", "DA", "PUDA"]);
    assert_eq!(rows[0]["runs"].as_array().unwrap().len(), 2);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().next().unwrap().contains("H@10"));
    assert_eq!(table.lines().count(), 6);
}

#[test]
fn sweep_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let args = |out: &'static str| with_quick(&["sweep-prior", "--data", "toy", "--out", out, "--mode", "pu-r"]);
    assert_eq!(code(&puda(tmp.path(), &args("a"))), 0);
    assert_eq!(code(&puda(tmp.path(), &args("b"))), 0);
    let a = fs::read(tmp.path().join("a/sweep.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/sweep.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 8);

    let out = puda(
        tmp.path(),
        &with_quick(&["sweep-prior", "--data", "toy", "--out", "c", "--mode", "pn"]),
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn gradcheck_passes_and_detects_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let out = puda(tmp.path(), &["gradcheck", "--trials", "10"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3);

    let out = puda(
        tmp.path(),
        &["gradcheck", "--trials", "10", "--inject-fault", "distmult-sign-flip"],
    );
    assert_eq!(code(&out), 4);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text
        .lines()
        .any(|l| l.starts_with("FAIL scoring") && l.contains("analytic=")));
}
