use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "model": { "enc_channels": [2, 4, 4, 8, 8], "dec_channels": [8, 8, 8, 4, 2] },
  "train": { "iterations": 9, "val_interval": 2, "val_pairs": 2, "checkpoint_interval": 2 },
  "data": { "count": 7, "shape": [32, 32, 32], "n_blobs": 40 },
  "split": { "train": 3, "val": 2 },
  "eval": { "pairs": 2 },
  "ablation": { "levels": [1, 2], "lambdas": [0.0] }
}"#;

fn nicenet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nicenet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = nicenet(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("cfg.json"), CONFIG).unwrap();
    let c = ["--config", "cfg.json"];
    let with = |rest: &[&'static str]| -> Vec<&str> { c.iter().chain(rest).copied().collect() };

    ok(d, &with(&["synth", "--out", "data"]));
    assert!(d.join("data/dataset.json").exists());
    assert!(d.join("data/field_006.nii").exists());

    ok(d, &with(&["train", "--data", "data", "--out", "run", "--set", "train.iterations=4"]));
    for f in ["metrics.csv", "validation.csv", "best.bin", "ckpt_4.bin", "latest", "config.json"] {
        assert!(d.join("run").join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);

    let text = ok(
        d,
        &with(&[
            "register",
            "--model",
            "run/ckpt_4.bin",
            "--fixed",
            "data/image_000.nii",
            "--moving",
            "data/image_001.nii",
            "--out",
            "phi.nii",
            "--warped",
            "warped.nii",
            "--labels",
            "data/labels_001.nii",
            "--warped-labels",
            "warped_labels.nii",
            "--metrics",
            "metrics.json",
            "--emit-intermediate",
            "steps",
        ]),
    );
    assert!(text.contains("step 3"));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["step_ncc"].as_array().unwrap().len(), 3);
    assert!(m["njd_percent"].as_f64().unwrap() >= 0.0);
    for f in [
        "phi.nii",
        "warped.nii",
        "warped_labels.nii",
        "steps/phi_1.nii",
        "steps/warped_3.png",
        "steps/fixed.png",
    ] {
        assert!(d.join(f).exists(), "missing {f}");
    }

    ok(d, &with(&["evaluate", "--model", "run/ckpt_4.bin", "--data", "data", "--out", "eval.csv"]));
    let eval = std::fs::read_to_string(d.join("eval.csv")).unwrap();
    assert!(eval.lines().nth(1).unwrap().starts_with("fixed,moving,dsc"));
    assert_eq!(eval.lines().count(), 4);

    ok(d, &with(&["ablate", "--data", "data", "--out", "ablation.csv"]));
    let abl = std::fs::read_to_string(d.join("ablation.csv")).unwrap();
    assert_eq!(abl.lines().count(), 3);

    ok(
        d,
        &with(&[
            "report",
            "--run",
            "run",
            "--eval",
            "eval.json",
            "--ablation",
            "ablation.csv",
            "--out",
            "plots",
        ]),
    );
    for f in ["loss.svg", "validation.svg", "step_ncc.svg", "ablation.svg"] {
        let svg = std::fs::read_to_string(d.join("plots").join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<text"), "{f}");
    }
}

#[test]
fn register_pads_odd_shapes() {
    use nicenet::model::ModelConfig;
    use nicenet::training::{save_checkpoint, TrainConfig, TrainState};
    use nicenet::volumes::{crop, load_field, make_phantom, save_volume, FileFormat};

    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = ModelConfig {
        enc_channels: [2, 4, 4, 8, 8],
        dec_channels: [8, 8, 8, 4, 2],
        ..Default::default()
    };
    let state = TrainState::new(TrainConfig::default(), &cfg).unwrap();
    save_checkpoint(&state, &d.join("m.bin")).unwrap();
    let (a, _) = make_phantom(1, [32, 32, 32], 5).unwrap();
    let (b, _) = make_phantom(2, [32, 32, 32], 5).unwrap();
    let (a, b) = (crop(&a, [20, 18, 30]).unwrap(), crop(&b, [20, 18, 30]).unwrap());
    save_volume(&a, d.join("a.nii"), FileFormat::Nifti1).unwrap();
    save_volume(&b, d.join("b.nii"), FileFormat::Nifti1).unwrap();
    ok(d, &["register", "--model", "m.bin", "--fixed", "a.nii", "--moving", "b.nii", "--out", "phi.raw"]);
    let phi = load_field(d.join("phi.raw"), FileFormat::Raw).unwrap();
    assert_eq!(phi.shape(), [20, 18, 30]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.json"), r#"{"train": {"lr": 0.001, "epochs": 3}}"#).unwrap();
    let out = nicenet(d, &["--config", "bad.json", "synth", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(d.join("neg.json"), r#"{"train": {"lr": -1}}"#).unwrap();
    let out = nicenet(d, &["--config", "neg.json", "synth", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = nicenet(d, &["--set", "train.nope=1", "synth", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = nicenet(d, &["evaluate", "--model", "none.bin", "--data", "none", "--out", "e.csv"]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(d.join("junk.nii"), b"junk").unwrap();
    let out = nicenet(d, &["register", "--model", "junk.nii", "--fixed", "junk.nii", "--moving", "junk.nii", "--out", "o.nii"]);
    assert_eq!(out.status.code(), Some(3));
}
