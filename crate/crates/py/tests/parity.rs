use std::path::PathBuf;

use crownprop::cli::run_analysis;
use crownprop::{Configuration, Method};
use crownprop_py::{BoundOptions, Session};

#[test]
fn binding_matches_cli_analysis() {
    let model = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../python/tiny.onnx");
    let boxes = [(vec![-1.0, -1.0], vec![1.0, 1.0]), (vec![0.0, -0.5], vec![0.25, 1.0]), (vec![0.5, 0.5], vec![0.5, 0.5])];
    for (lo, hi) in boxes {
        for (name, method) in [("IBP", Method::Ibp), ("CROWN", Method::Crown), ("alphaCROWN", Method::AlphaCrown)] {
            let mut s = Session::load(&model).unwrap();
            s.set_input_bounds(lo.clone(), hi.clone()).unwrap();
            let got = s.compute_bounds(name, &BoundOptions::default()).unwrap();

            let mut config = Configuration::new(&model);
            config.method = method;
            config.lower = lo.clone();
            config.upper = hi.clone();
            let report = run_analysis(&config).unwrap();
            let b = &report.branches[0];
            assert_eq!(got.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.lower.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), "{name}");
            assert_eq!(got.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.upper.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), "{name}");
        }
    }
}
