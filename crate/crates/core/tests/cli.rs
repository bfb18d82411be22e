//! End-to-end tests of the `cmpa` binary: exit codes, file outputs, and
//! byte-level reproducibility of every command.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cmpa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmpa"))
}

fn run(args: &[&str]) -> Output {
    cmpa().args(args).output().expect("spawn cmpa")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

fn synth(dir: &Path, n: usize) {
    let out = run(&[
        "synth",
        "--n",
        &n.to_string(),
        "--seed",
        "7",
        "--min-len",
        "150",
        "--max-len",
        "300",
        "--noise-std",
        "0.02",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_success(&out);
}

/// Small but fully wired training config against a synthetic manifest.
fn tiny_config(manifest: &Path) -> String {
    format!(
        "regime = joint\ncriterion = note_accuracy\nseed = 0\nbatch_size = 4\n\
         chunk_len = 150\npatience = 0\ndata.manifest = {}\n\
         encoder.channels = 2,4\nencoder.kernel_size = 5\nencoder.stride = 3\n\
         optimizer.phase1.epochs = 3\noptimizer.phase2.epochs = 3\n",
        manifest.display()
    )
}

#[test]
fn synth_is_deterministic_and_validates_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 12);
    synth(&b, 12);
    assert_eq!(tree_bytes(&a), tree_bytes(&b), "synth outputs differ");

    let manifest = std::fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 13, "header plus 12 rows");

    // --n 0 is a usage error: exit code 1.
    let out = run(&["synth", "--n", "0", "--out", tmp.path().join("c").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_writes_artifacts_and_reflects_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 40);
    let manifest = data.join("manifest.csv");
    let cfg_path = tmp.path().join("run.cfg");
    std::fs::write(&cfg_path, tiny_config(&manifest)).unwrap();

    let run_dir = tmp.path().join("run");
    let out = run(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--set",
        "loss.C=3",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    for file in ["checkpoint.bin", "report.json", "config.txt", "embeddings.tsv", "metrics.json"] {
        assert!(run_dir.join(file).is_file(), "missing {file}");
    }
    // The override lands in the embedded config snapshot.
    let report = std::fs::read_to_string(run_dir.join("report.json")).unwrap();
    assert!(report.contains("loss.C = 3"), "{report}");

    // The snapshot replays to a byte-identical report.
    let replay_dir = tmp.path().join("replay");
    let out = run(&[
        "train",
        "--config",
        run_dir.join("config.txt").to_str().unwrap(),
        "--out",
        replay_dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    assert_eq!(
        std::fs::read(run_dir.join("report.json")).unwrap(),
        std::fs::read(replay_dir.join("report.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(run_dir.join("checkpoint.bin")).unwrap(),
        std::fs::read(replay_dir.join("checkpoint.bin")).unwrap()
    );

    // Unknown regime value fails before training.
    let out = run(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--regime",
        "nonsense",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    // Unknown override key is a usage error.
    let out = run(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--set",
        "loss.nope=1",
        "--out",
        tmp.path().join("y").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    // Training without any regime source is a usage error.
    let out = run(&["train", "--out", tmp.path().join("z").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_and_embed_read_back_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 40);
    let cfg_path = tmp.path().join("run.cfg");
    std::fs::write(&cfg_path, tiny_config(&data.join("manifest.csv"))).unwrap();
    let run_dir = tmp.path().join("run");
    assert_success(&run(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]));

    let eval_dir = tmp.path().join("eval");
    let out = run(&[
        "evaluate",
        "--checkpoint",
        run_dir.join("checkpoint.bin").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("r_squared = "), "{stdout}");
    assert!(stdout.contains("davies_bouldin = "), "{stdout}");
    assert!(eval_dir.join("metrics.json").is_file());
    assert!(eval_dir.join("embeddings.tsv").is_file());

    // evaluate matches the metrics recorded at training time.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("report.json")).unwrap())
            .unwrap();
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(report["test"]["r_squared"], metrics["r_squared"]);

    let embed_dir = tmp.path().join("emb");
    assert_success(&run(&[
        "embed",
        "--checkpoint",
        run_dir.join("checkpoint.bin").to_str().unwrap(),
        "--out",
        embed_dir.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read(eval_dir.join("embeddings.tsv")).unwrap(),
        std::fs::read(embed_dir.join("embeddings.tsv")).unwrap()
    );

    // Missing checkpoint: data error (exit 2).
    let out = run(&[
        "evaluate",
        "--checkpoint",
        tmp.path().join("none.ckpt").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_matrix_resume_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 60);
    let cfg_path = tmp.path().join("matrix.cfg");
    std::fs::write(
        &cfg_path,
        format!(
            "matrix.regimes = baseline,joint\nmatrix.criteria = note_accuracy\n\
             matrix.seeds = 0,1\ndata.manifest = {}\nbatch_size = 4\nchunk_len = 150\n\
             patience = 0\nencoder.channels = 2,4\nencoder.kernel_size = 5\n\
             encoder.stride = 3\noptimizer.phase1.epochs = 2\noptimizer.phase2.epochs = 2\n",
            data.join("manifest.csv").display()
        ),
    )
    .unwrap();

    let m1 = tmp.path().join("m1");
    let out = run(&[
        "run-matrix",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        m1.to_str().unwrap(),
    ]);
    assert_success(&out);
    let mut reports = 0;
    for regime in ["baseline", "joint"] {
        for seed in ["seed0", "seed1"] {
            let cell = m1.join(regime).join("note_accuracy").join(seed);
            assert!(cell.join("report.json").is_file());
            reports += 1;
        }
    }
    assert_eq!(reports, 4);

    // Rerun into a second directory: byte-identical artifacts.
    let m2 = tmp.path().join("m2");
    assert_success(&run(&[
        "run-matrix",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        m2.to_str().unwrap(),
    ]));
    assert_eq!(tree_bytes(&m1), tree_bytes(&m2));

    // Resume skips every completed cell.
    let out = run(&[
        "run-matrix",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        m1.to_str().unwrap(),
        "--resume",
    ]);
    assert_success(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("4 resumed"));

    // Report over the complete matrix.
    let reports_dir = tmp.path().join("reports");
    let out = run(&[
        "report",
        "--matrix",
        m1.to_str().unwrap(),
        "--out",
        reports_dir.to_str().unwrap(),
        "--perplexity",
        "30",
    ]);
    assert_success(&out);
    let crit = reports_dir.join("note_accuracy");
    for file in [
        "r2_box.svg",
        "r2_box.tsv",
        "db_bar.svg",
        "db_bar.tsv",
        "baseline_scatter.svg",
        "baseline_scatter.tsv",
        "baseline_centroid.svg",
        "baseline_centroid.tsv",
        "joint_scatter.svg",
        "joint_centroid.tsv",
        "joint_centroid.svg",
    ] {
        assert!(crit.join(file).is_file(), "missing report file {file}");
    }

    // Rendering twice is deterministic.
    let reports2 = tmp.path().join("reports2");
    assert_success(&run(&[
        "report",
        "--matrix",
        m1.to_str().unwrap(),
        "--out",
        reports2.to_str().unwrap(),
        "--perplexity",
        "30",
    ]));
    assert_eq!(tree_bytes(&reports_dir), tree_bytes(&reports2));

    // An incomplete matrix is refused, naming the missing cell.
    std::fs::remove_file(
        m1.join("joint").join("note_accuracy").join("seed1").join("report.json"),
    )
    .unwrap();
    let out = run(&[
        "report",
        "--matrix",
        m1.to_str().unwrap(),
        "--out",
        tmp.path().join("r3").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("(joint, note_accuracy, 1)"), "{stderr}");
}
