use std::path::{Path, PathBuf};

use crownprop::vnnlib::{read_vnnlib, ConstraintRow, LinearTerm};
use serde_json::Value;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/vnnlib")
}

fn number(v: &Value) -> f64 {
    match v {
        Value::String(s) if s == "inf" => f64::INFINITY,
        Value::String(s) if s == "-inf" => f64::NEG_INFINITY,
        other => other.as_f64().unwrap_or_else(|| panic!("not a number: {other}")),
    }
}

fn numbers(v: &Value) -> Vec<f64> {
    v.as_array().expect("array").iter().map(number).collect()
}

fn expected_row(v: &Value) -> ConstraintRow {
    let terms = v["terms"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| LinearTerm { index: t[0].as_u64().unwrap() as usize, coeff: number(&t[1]) })
        .collect();
    ConstraintRow { terms, rhs: number(&v["rhs"]) }
}

/// Check one `.vnnlib` file against the `.json` next to it.
pub fn check_case(vnnlib: &Path) -> Result<(), String> {
    let name = vnnlib.file_name().unwrap().to_string_lossy().into_owned();
    let exp: Value = serde_json::from_str(&std::fs::read_to_string(vnnlib.with_extension("json")).map_err(|e| format!("{name}: {e}"))?)
        .map_err(|e| format!("{name}: {e}"))?;
    let n = exp["inputs"].as_u64().unwrap() as usize;
    let m = exp["outputs"].as_u64().unwrap() as usize;
    let parsed = read_vnnlib(vnnlib, n, m);
    if let Some(msg) = exp.get("error").and_then(Value::as_str) {
        return match parsed {
            Err(e) if e.to_string().contains(msg) => Ok(()),
            Err(e) => Err(format!("{name}: expected error containing '{msg}', got '{e}'")),
            Ok(_) => Err(format!("{name}: expected error containing '{msg}', parsed successfully")),
        };
    }
    let spec = parsed.map_err(|e| format!("{name}: {e}"))?;
    if spec.input.lower().data() != numbers(&exp["lower"]).as_slice() || spec.input.upper().data() != numbers(&exp["upper"]).as_slice() {
        return Err(format!("{name}: input box {:?} / {:?}", spec.input.lower().data(), spec.input.upper().data()));
    }
    let expected: Option<Vec<Vec<ConstraintRow>>> = match &exp["branches"] {
        Value::Null => None,
        b => Some(b.as_array().unwrap().iter().map(|br| br.as_array().unwrap().iter().map(expected_row).collect()).collect()),
    };
    let got = spec.output.as_ref().map(|o| o.branches().to_vec());
    if got != expected {
        return Err(format!("{name}: branches {got:?}, expected {expected:?}"));
    }
    Ok(())
}

/// All golden cases, sorted by file name.
pub fn cases() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(data_dir())
        .expect("golden data directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "vnnlib"))
        .collect();
    v.sort();
    v
}
