use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dgbench");

const TINY: [&str; 6] = [
    "--set",
    "model.stem_channels=4",
    "--set",
    "model.widths=[4,4,4,4]",
    "--set",
    "trainer.epochs=2",
];

fn dgbench(args: &[&str], workers: usize) -> Output {
    Command::new(BIN)
        .args(args)
        .env("DGBENCH_WORKERS", workers.to_string())
        .output()
        .expect("spawn dgbench")
}

fn ok(args: &[&str]) -> String {
    let out = dgbench(args, 2);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--out",
        s(&data),
        "--set",
        "synth.per_domain=24",
        "--set",
        "synth.length=128",
    ]);
    data
}

/// Relative path to contents of every file below `root`, except run metadata.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else if p.file_name().unwrap() != "run_meta.json" {
                acc.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

#[test]
fn synth_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    for f in ["dataset.json", "index.csv", "config.resolved.toml", "run_meta.json"] {
        assert!(data.join(f).is_file(), "{f}");
    }

    let run = dir.path().join("run");
    let mut args = vec![
        "train",
        "--dataset",
        s(&data),
        "--out",
        s(&run),
        "--set",
        "split.targets=[\"d2\"]",
    ];
    args.extend(TINY);
    let line = ok(&args);
    assert!(line.starts_with("train:"), "{line}");
    for f in [
        "split.json",
        "metrics.json",
        "report.txt",
        "runlog.csv",
        "train_summary.json",
        "config.resolved.toml",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert!(run.join("checkpoint").is_dir());
    let runlog = std::fs::read_to_string(run.join("runlog.csv")).unwrap();
    assert_eq!(runlog.lines().count(), 1 + 2);

    let ev = dir.path().join("eval");
    let mut args = vec![
        "evaluate",
        "--checkpoint",
        s(&run),
        "--dataset",
        s(&data),
        "--out",
        s(&ev),
    ];
    args.extend(["--set", "eval.embeddings=true"]);
    args.extend(TINY);
    ok(&args);
    assert!(ev.join("embeddings.csv").is_file());
    let sections = |dir: &Path| {
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("metrics.json")).unwrap()).unwrap();
        v["sections"].clone()
    };
    assert_eq!(sections(&ev), sections(&run));

    let ood = dir.path().join("ood");
    let args = [
        "evaluate",
        "--checkpoint",
        s(&run),
        "--dataset",
        s(&data),
        "--out",
        s(&ood),
        "--split",
        "ood",
    ];
    ok(&args);
    let table = std::fs::read_to_string(ood.join("report.txt")).unwrap();
    assert!(table.contains("ood") && !table.contains("intra"), "{table}");
}

#[test]
fn same_seed_reruns_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let mut outs = Vec::new();
    for (i, workers) in [1, 3].into_iter().enumerate() {
        let out = dir.path().join(format!("bench{i}"));
        let mut args = vec!["benchmark", "--dataset", s(&data), "--out", s(&out), "--seed", "7"];
        args.extend(["--set", "benchmark.repeats=2"]);
        args.extend(TINY);
        let o = dgbench(&args, workers);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(snapshot(&out));
    }
    assert!(!outs[0].is_empty());
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn lodo_benchmark_layout() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("bench");
    let mut args = vec!["benchmark", "--dataset", s(&data), "--out", s(&out)];
    args.extend([
        "--set",
        "benchmark.repeats=3",
        "--set",
        "benchmark.save_checkpoints=true",
    ]);
    args.extend(TINY);
    ok(&args);

    let mut iters: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    iters.sort();
    assert_eq!(iters, ["iter_d0", "iter_d1", "iter_d2"]);
    for it in &iters {
        let d = out.join(it);
        assert!(d.join("split.json").is_file());
        let mut repeats: Vec<String> = std::fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().into_string().unwrap())
            .collect();
        repeats.sort();
        assert_eq!(repeats, ["repeat_00", "repeat_01", "repeat_02"]);
        for r in &repeats {
            for f in ["metrics.json", "report.txt", "runlog.csv", "train_summary.json"] {
                assert!(d.join(r).join(f).is_file(), "{it}/{r}/{f}");
            }
            assert!(d.join(r).join("checkpoint").is_dir());
        }
    }
    let table = std::fs::read_to_string(out.join("report.txt")).unwrap();
    for d in ["d0", "d1", "d2"] {
        assert!(table.lines().any(|l| l.starts_with(d)), "{table}");
    }
}

#[test]
fn complexity_reports_the_reference_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cx");
    let line = ok(&["complexity", "--out", s(&out)]);
    assert!(line.contains("1772568 parameters"), "{line}");
    let line = ok(&[
        "complexity",
        "--out",
        s(&out),
        "--input-shape",
        "4x128",
        "--set",
        "model.stem_channels=4",
        "--set",
        "model.widths=[4,4,4,4]",
        "--set",
        "complexity.classes=4",
        "--set",
        "complexity.task=\"multiclass\"",
    ]);
    assert!(line.contains("684 parameters"), "{line}");
    assert!(out.join("report.txt").is_file());
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let code = |args: &[&str], workers: &str| {
        Command::new(BIN)
            .args(args)
            .env("DGBENCH_WORKERS", workers)
            .output()
            .unwrap()
            .status
            .code()
    };
    let missing = dir.path().join("missing");
    assert_eq!(
        code(&["train", "--dataset", s(&missing), "--out", s(&out)], "1"),
        Some(3)
    );
    assert_eq!(
        code(&["synth", "--out", s(&out), "--set", "trainer.epoch=3"], "1"),
        Some(2)
    );
    assert_eq!(
        code(&["synth", "--out", s(&out), "--set", "synth.seed=3"], "1"),
        Some(2)
    );
    assert_eq!(code(&["synth", "--out", s(&out)], "zero"), Some(2));
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "seed = [").unwrap();
    assert_eq!(
        code(&["synth", "--out", s(&out), "--config", s(&bad_cfg)], "1"),
        Some(2)
    );
}

#[test]
fn preprocess_manifest_with_class_map() {
    use dgbench_core::autodiff::Tensor;
    use dgbench_core::datasets::write_bit_tensor;

    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for (i, domain) in ["cpsc", "ptb", "cpsc", "ptb"].iter().enumerate() {
        let len = 6000;
        let data: Vec<f64> = (0..12 * len).map(|k| ((k * 5 + i) % 17) as f64).collect();
        write_bit_tensor(
            &dir.path().join(format!("r{i}.bit")),
            &Tensor::new(vec![12, len], data).unwrap(),
        )
        .unwrap();
        lines.push_str(&format!(
            r#"{{"id":"r{i}","path":"r{i}.bit","modality":"ecg","fs_hz":500,"n_channels":12,"domain":"{domain}","labels":["X{i}","777"]}}"#
        ));
        lines.push('\n');
    }
    let manifest = dir.path().join("manifest.jsonl");
    std::fs::write(&manifest, lines).unwrap();
    let map = dir.path().join("classes.tsv");
    std::fs::write(&map, "code\tname\nX0\tAtrial fibrillation\nX1\tAtrial fibrillation\nX2\tBradycardia\nX3\tBradycardia\n").unwrap();

    let out = dir.path().join("data");
    ok(&[
        "preprocess",
        "--manifest",
        s(&manifest),
        "--class-map",
        s(&map),
        "--out",
        s(&out),
    ]);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("ingest_report.json")).unwrap()).unwrap();
    assert_eq!(report["recordings"], 4);
    assert_eq!(report["windows"], 4);
    assert_eq!(report["unknown_codes"]["777"], 4);
    assert_eq!(std::fs::read_dir(out.join("windows")).unwrap().count(), 4);

    let bad_map = dir.path().join("bad.tsv");
    std::fs::write(&bad_map, "X0\tNotAClass\n").unwrap();
    let o = dgbench(
        &[
            "preprocess",
            "--manifest",
            s(&manifest),
            "--class-map",
            s(&bad_map),
            "--out",
            s(&out),
        ],
        1,
    );
    assert_eq!(o.status.code(), Some(3));
}
