#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fpgm_core::flops::pruned_count;
use fpgm_core::load_bundle;
use serde_json::Value;

fn fpgm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpgm")).args(args).output().unwrap()
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn fixtures() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fx");
    ok_json(&fpgm(&["gen-fixture", "--out-dir", path.to_str().unwrap()]));
    (dir, path)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_fixtures_match_the_generator() {
    let (_dir, fx) = fixtures();
    let shipped = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    for name in [
        "random.gmpk",
        "toy.gmpk",
        "collinear.gmpk",
        "resnet_norms.gmpk",
        "resnet20_cifar.json",
        "toy_chain.json",
    ] {
        assert_eq!(
            std::fs::read(fx.join(name)).unwrap(),
            std::fs::read(shipped.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn analyze_reports_every_layer_and_flags_uniform_norms() {
    let (dir, fx) = fixtures();
    let csv = dir.path().join("kde.csv");
    let v = ok_json(&fpgm(&[
        "analyze",
        "--in",
        s(&fx.join("collinear.gmpk")),
        "--kde-csv",
        s(&csv),
    ]));
    assert_eq!(v["layers"].as_array().unwrap().len(), 2);
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 256);

    let v = ok_json(&fpgm(&["analyze", "--in", s(&fx.join("resnet_norms.gmpk"))]));
    for layer in v["layers"].as_array().unwrap() {
        let name = layer["stats"]["layer"].as_str().unwrap();
        let flagged = layer["requirements"]["small_deviation"].as_bool().unwrap();
        assert_eq!(flagged, name == "layer1.0.conv_a", "{name}");
    }
}

#[test]
fn missing_input_is_a_domain_error() {
    let out = fpgm(&["analyze", "--in", "/nonexistent/model.gmpk"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("IoFailure"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.gmpk");
    std::fs::write(&junk, b"not a bundle").unwrap();
    let out = fpgm(&["analyze", "--in", s(&junk)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MagicMismatch"));
}

#[test]
fn usage_errors_exit_two_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("out.gmpk");
    let out = fpgm(&["prune", "--in", "x.gmpk", "--out", s(&out_path), "--criterion", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_path.exists());
    assert_eq!(fpgm(&["select", "--in", "x.gmpk"]).status.code(), Some(2));
    assert_eq!(fpgm(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn select_matches_examples_and_oracle() {
    let (_dir, fx) = fixtures();
    let collinear = fx.join("collinear.gmpk");
    for layer in ["line", "square"] {
        let v = ok_json(&fpgm(&[
            "select",
            "--in",
            s(&collinear),
            "--layer",
            layer,
            "--count",
            "1",
        ]));
        assert_eq!(v["indices"], serde_json::json!([1]), "{layer}");
    }
    let v = ok_json(&fpgm(&[
        "select",
        "--in",
        s(&collinear),
        "--layer",
        "line",
        "--count",
        "0",
    ]));
    assert_eq!(v["indices"], serde_json::json!([]));

    let random = fx.join("random.gmpk");
    let bundle = load_bundle(&random).unwrap();
    for layer in ["conv_a", "conv_b"] {
        let rows = common::rows_of(bundle.tensor(layer).unwrap());
        for (distance, metric) in [
            ("l1", common::Metric::L1),
            ("l2", common::Metric::L2),
            ("cosine", common::Metric::Cosine),
        ] {
            let v = ok_json(&fpgm(&[
                "select",
                "--in",
                s(&random),
                "--layer",
                layer,
                "--count",
                "5",
                "--distance",
                distance,
            ]));
            let got: Vec<usize> = serde_json::from_value(v["indices"].clone()).unwrap();
            assert_eq!(got, common::oracle_select_gm(&rows, 5, metric));
        }
    }

    let out = fpgm(&["select", "--in", s(&collinear), "--layer", "missing", "--count", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("UnknownLayer"));
    let out = fpgm(&["select", "--in", s(&collinear), "--layer", "line", "--count", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CountOutOfRange"));
}

#[test]
fn flops_on_resnet20() {
    let (_dir, fx) = fixtures();
    let v = ok_json(&fpgm(&[
        "flops",
        "--graph",
        s(&fx.join("resnet20_cifar.json")),
        "--rate",
        "0.4",
    ]));
    let reduction = v["reduction_percent"].as_f64().unwrap();
    assert!((reduction - 54.0).abs() <= 5.0, "{reduction}");
    let v = ok_json(&fpgm(&["flops", "--graph", s(&fx.join("resnet20_cifar.json"))]));
    assert_eq!(v["reduction_percent"].as_f64().unwrap(), 0.0);
    let out = fpgm(&["flops", "--graph", s(&fx.join("resnet20_cifar.json")), "--rate", "1.0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zero_rate_prune_is_byte_identical() {
    let (dir, fx) = fixtures();
    for name in ["random.gmpk", "toy.gmpk"] {
        let out_path = dir.path().join(format!("pruned_{name}"));
        ok_json(&fpgm(&[
            "prune",
            "--in",
            s(&fx.join(name)),
            "--out",
            s(&out_path),
            "--rate",
            "0",
            "--epochs",
            "3",
        ]));
        assert_eq!(std::fs::read(fx.join(name)).unwrap(), std::fs::read(out_path).unwrap());
    }
}

#[test]
fn prune_then_compact_the_toy_net() {
    let (dir, fx) = fixtures();
    let pruned = dir.path().join("pruned.gmpk");
    let masks = dir.path().join("masks.json");
    let out = fpgm(&[
        "prune",
        "--in",
        s(&fx.join("toy.gmpk")),
        "--out",
        s(&pruned),
        "--rate",
        "0.25",
        "--epochs",
        "4",
        "--interval",
        "2",
        "--trainer",
        "toy",
        "--graph",
        s(&fx.join("toy_chain.json")),
    ]);
    let v = ok_json(&out);
    assert_eq!(v["history"].as_array().unwrap().len(), 4);
    assert!(v["flops"]["reduction_percent"].as_f64().unwrap() > 0.0);
    std::fs::write(&masks, &out.stdout).unwrap();

    let compact = dir.path().join("compact.gmpk");
    let v = ok_json(&fpgm(&[
        "compact",
        "--in",
        s(&pruned),
        "--masks",
        s(&masks),
        "--graph",
        s(&fx.join("toy_chain.json")),
        "--out",
        s(&compact),
    ]));
    let widths: Vec<u64> = v["layers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["out_channels"].as_u64().unwrap())
        .collect();
    assert_eq!(widths, vec![6, 6, 2]);
    let small = load_bundle(&compact).unwrap();
    assert_eq!(small.tensor("conv2").unwrap().cols(), 6 * 9);

    let out = fpgm(&[
        "compact",
        "--in",
        s(&pruned),
        "--masks",
        s(&masks),
        "--graph",
        s(&fx.join("resnet20_cifar.json")),
        "--out",
        s(&compact),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NonSequentialGraph"));
}

#[test]
fn train_toy_report_structure() {
    let v = ok_json(&fpgm(&[
        "train-toy",
        "--seed",
        "7",
        "--epochs",
        "30",
        "--rate",
        "0.25",
        "--criterion",
        "gm",
    ]));
    assert_eq!(v["epochs"].as_array().unwrap().len(), 30);
    let want = [pruned_count(8, 0.25), pruned_count(8, 0.25)];
    for record in v["history"].as_array().unwrap() {
        let sizes: Vec<usize> = serde_json::from_value(record["mask_sizes"].clone()).unwrap();
        assert_eq!(sizes, want);
    }
    assert!(v["epochs"][29]["train_accuracy"].as_f64().unwrap() >= 0.95);
}
