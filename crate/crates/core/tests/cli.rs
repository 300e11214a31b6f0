mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::Mlp;
use crownprop::onnx::proto::*;
use crownprop::onnx::{encode_model, write_onnx};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crownprop"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("run cli")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn tiny_model(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.onnx");
    let mlp = Mlp {
        layers: vec![(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0]), (vec![vec![1.0, 1.0]], vec![0.0])],
        relu: true,
    };
    write_onnx(&mlp.to_graph(), &path).unwrap();
    path
}

fn vi(name: &str, shape: &[i64]) -> ValueInfoProto {
    ValueInfoProto {
        name: name.into(),
        r#type: Some(TypeProto {
            tensor_type: Some(TensorTypeProto {
                elem_type: data_type::FLOAT,
                shape: Some(TensorShapeProto { dim: shape.iter().map(|&d| Dimension { dim_value: Some(d), dim_param: None }).collect() }),
            }),
        }),
    }
}

fn conv_model(dir: &Path) -> PathBuf {
    let model = ModelProto {
        ir_version: 8,
        graph: Some(GraphProto {
            node: vec![NodeProto {
                input: vec!["x".into(), "W".into()],
                output: vec!["y".into()],
                name: "conv".into(),
                op_type: "Conv".into(),
                ..Default::default()
            }],
            initializer: vec![TensorProto {
                dims: vec![1, 1, 1, 1],
                data_type: data_type::FLOAT,
                float_data: vec![1.0],
                name: "W".into(),
                ..Default::default()
            }],
            input: vec![vi("x", &[1, 1, 2, 2])],
            output: vec![vi("y", &[1, 1, 2, 2])],
            ..Default::default()
        }),
        ..Default::default()
    };
    let path = dir.join("conv.onnx");
    std::fs::write(&path, encode_model(&model)).unwrap();
    path
}

fn spec_file(dir: &Path, bound: f64) -> PathBuf {
    let path = dir.join("prop.vnnlib");
    let text = format!(
        "(declare-const X_0 Real)\n(declare-const X_1 Real)\n(declare-const Y_0 Real)\n\
         (assert (<= X_0 1))\n(assert (>= X_0 -1))\n(assert (<= X_1 1))\n(assert (>= X_1 -1))\n\
         (assert (<= Y_0 {bound}))\n"
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn text_report_on_tiny_net() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(dir.path());
    let o = run(&["--input", model.to_str().unwrap(), "--method", "ibp", "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("row 0: [0.0000000000000000e0, 4.0000000000000000e0]"), "{text}");
    assert!(text.contains("verdict: unknown"));
}

#[test]
fn json_matches_text() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(dir.path());
    let m = model.to_str().unwrap();
    let text = stdout(&run(&["--input", m, "--quiet"]));
    let json = stdout(&run(&["--input", m, "--quiet", "--json"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["method"], "crown");
    let row = &v["rows"][0];
    let (lo, hi) = (row["lower"].as_f64().unwrap(), row["upper"].as_f64().unwrap());
    let line = text.lines().next().unwrap();
    let inner = line.trim_start_matches("row 0: [").trim_end_matches(']');
    let (a, b) = inner.split_once(", ").unwrap();
    assert_eq!(a.parse::<f64>().unwrap(), lo);
    assert_eq!(b.parse::<f64>().unwrap(), hi);
    assert!((hi - 3.0).abs() < 1e-12);
}

#[test]
fn vnnlib_verdicts() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(dir.path());
    let spec = spec_file(dir.path(), 3.5);
    let args = |method: &'static str| {
        let o = run(&["--input", model.to_str().unwrap(), "--vnnlib", spec.to_str().unwrap(), "--method", method, "--json", "-q"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        v["verdict"].as_str().unwrap().to_string()
    };
    assert_eq!(args("crown"), "verified");
    assert_eq!(args("alpha-crown"), "verified");
    assert_eq!(args("ibp"), "unknown");
}

#[test]
fn method_names_are_case_insensitive() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(dir.path());
    for name in ["alphaCROWN", "Alpha_Crown", "IBP"] {
        let o = run(&["--input", model.to_str().unwrap(), "--method", name, "-q"]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}

#[test]
fn unsupported_operator_exit_code() {
    let dir = TempDir::new().unwrap();
    let model = conv_model(dir.path());
    let o = run(&["--input", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("Conv"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn timeout_exit_code() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(dir.path());
    let o = run(&["--input", model.to_str().unwrap(), "--method", "alpha-crown", "--timeout", "0", "--json", "-q"]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["verdict"], "timeout");
}

#[test]
fn usage_errors() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(dir.path());
    let m = model.to_str().unwrap();
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--input", m, "--method", "newton"]).status.code(), Some(1));
    assert_eq!(run(&["--input", m, "--standard-crown", "--crown-ibp"]).status.code(), Some(1));
    assert_eq!(run(&["--input", m, "--timeout", "-1"]).status.code(), Some(1));
    assert_eq!(run(&["--input", m, "--lower", "0,0,0"]).status.code(), Some(1));
    assert_eq!(run(&["--input", dir.path().join("missing.onnx").to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn cuda_falls_back_with_warning() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(dir.path());
    let o = run(&["--input", model.to_str().unwrap(), "--cuda"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).to_lowercase().contains("cuda"), "{}", stderr(&o));
}

#[test]
fn explicit_input_box() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(dir.path());
    let o = run(&["--input", model.to_str().unwrap(), "--method", "ibp", "--lower", "0", "--upper", "0.5,1", "--json", "-q"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rows"][0]["lower"].as_f64().unwrap(), 0.0);
    assert_eq!(v["rows"][0]["upper"].as_f64().unwrap(), 2.0);
}
