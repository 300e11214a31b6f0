mod common;

use common::*;
use crownprop::alpha::{project_alphas, run_alpha_crown, AlphaProblem, AlphaStore, OptimizerConfig};
use crownprop::analysis::format_bound;
use crownprop::engine::{relu_relaxation, run_crown, run_ibp, BoundContext, CrownVariant, Side};
use crownprop::interval::{interval_affine, interval_elementwise, interval_monotone_unary, ElementwiseKind, Operand, UnaryKind};
use crownprop::onnx::{decode_model, encode_model, export_model, import_model};
use crownprop::tape::Tape;
use crownprop::vnnlib::parse_str;
use crownprop::{analyze, AnalysisOptions, BoundedTensor, Method, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_box_is_exact_and_sound(seed: u64, out in 1usize..5, inp in 1usize..=8) {
        let mut r = rng(seed);
        let w = matrix(&mut r, out, inp);
        let b = Tensor::from_vec((0..out).map(|_| r.gen_range(-1.0..1.0)).collect());
        let (lo, hi) = random_box(&mut r, inp);
        let y = interval_affine(&w, Some(&b), &bounded(&lo, &hi)).unwrap();
        let (mut el, mut eu) = (vec![f64::INFINITY; out], vec![f64::NEG_INFINITY; out]);
        for c in corners(&lo, &hi) {
            let v = w.matmul(&Tensor::from_vec(c)).unwrap().add(&b).unwrap();
            for (i, x) in v.data().iter().enumerate() {
                el[i] = el[i].min(*x);
                eu[i] = eu[i].max(*x);
            }
        }
        for i in 0..out {
            prop_assert!((y.lower().data()[i] - el[i]).abs() <= TOL * el[i].abs().max(1.0));
            prop_assert!((y.upper().data()[i] - eu[i]).abs() <= TOL * eu[i].abs().max(1.0));
        }
        for _ in 0..50 {
            let x = sample(&mut r, &lo, &hi);
            let v = w.matmul(&Tensor::from_vec(x)).unwrap().add(&b).unwrap();
            for (i, x) in v.data().iter().enumerate() {
                prop_assert!(within(*x, y.lower().data()[i], y.upper().data()[i], TOL));
            }
        }
    }

    #[test]
    fn pos_neg_split_reconstructs(data in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
        let m = Tensor::from_vec(data);
        let (p, n) = m.pos_neg_split();
        prop_assert_eq!(p.add(&n).unwrap(), m.clone());
        prop_assert!(p.data().iter().all(|v| *v >= 0.0) && n.data().iter().all(|v| *v <= 0.0));
    }

    #[test]
    fn unary_and_elementwise_keep_boxes_valid(seed: u64, n in 1usize..10) {
        let mut r = rng(seed);
        let (lo, hi) = random_box(&mut r, n);
        let x = bounded(&lo, &hi);
        let c = Tensor::from_vec((0..n).map(|_| r.gen_range(-1.0..1.0)).collect());
        let outs = [
            interval_monotone_unary(UnaryKind::Relu, &x).unwrap(),
            interval_monotone_unary(UnaryKind::Reshape(&[1, n]), &x).unwrap(),
            interval_monotone_unary(UnaryKind::Flatten { axis: 0 }, &x).unwrap(),
            interval_elementwise(ElementwiseKind::Sub, &x, Operand::Box(&x)).unwrap(),
            interval_elementwise(ElementwiseKind::Add, &x, Operand::Constant(&c)).unwrap(),
        ];
        for o in &outs {
            prop_assert!(o.lower().data().iter().zip(o.upper().data()).all(|(l, u)| l <= u));
        }
    }

    #[test]
    fn relaxation_is_valid(l in -10.0f64..10.0, w in 0.0f64..10.0, t in 0.0f64..=1.0, a in 0.0f64..=1.0) {
        let u = l + w;
        let z = l + t * (u - l);
        for slope in [None, Some(a)] {
            let n = relu_relaxation(l, u, slope).unwrap();
            let relu = z.max(0.0);
            prop_assert!(n.lower_slope * z <= relu + 1e-12);
            prop_assert!(relu <= n.upper_slope * z + n.upper_intercept + 1e-9 * (1.0 + z.abs()));
        }
    }

    #[test]
    fn bounded_tensor_rejects_crossing(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let r = BoundedTensor::new(Tensor::from_vec(vec![a]), Tensor::from_vec(vec![b]));
        prop_assert_eq!(r.is_ok(), a <= b);
    }

    #[test]
    fn decimal_form_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        prop_assert_eq!(format_bound(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn all_methods_sound_and_ordered(seed: u64) {
        let mut r = rng(seed);
        let mlp = random_fuzz_mlp(&mut r);
        let (lo, hi) = random_box(&mut r, mlp.inputs());
        let specs = random_specs(&mut r, mlp.outputs());
        let g = mlp.to_graph();
        let x = bounded(&lo, &hi);
        let ibp = run_ibp(&g, &x, &specs).unwrap();
        let std = run_crown(&g, &x, &specs, CrownVariant::Standard, None, None).unwrap();
        let cibp = run_crown(&g, &x, &specs, CrownVariant::CrownIbp, None, None).unwrap();
        let alpha = run_alpha_crown(&g, &x, &specs, CrownVariant::Standard, &OptimizerConfig::default(), None).unwrap();
        for b in 0..specs.len() {
            let w = [&ibp[b], &cibp.branches[b], &std.branches[b], &alpha.branches[b]].map(|m| widths(&m.bounds));
            for row in 0..w[0].len() {
                prop_assert!(w[3][row] <= w[2][row] + TOL && w[2][row] <= w[1][row] + TOL && w[1][row] <= w[0][row] + TOL);
                // never worse than CROWN
                prop_assert!(alpha.branches[b].bounds.lower().data()[row] >= std.branches[b].bounds.lower().data()[row] - TOL);
                prop_assert!(alpha.branches[b].bounds.upper().data()[row] <= std.branches[b].bounds.upper().data()[row] + TOL);
            }
        }
        for _ in 0..500 {
            let y = mlp.forward(&sample(&mut r, &lo, &hi));
            for (b, spec) in specs.iter().enumerate() {
                for (row, v) in spec_values(spec, &y).into_iter().enumerate() {
                    for m in [&ibp[b], &cibp.branches[b], &std.branches[b], &alpha.branches[b]] {
                        prop_assert!(within(v, m.linear.lower().data()[row].max(m.bounds.lower().data()[row]), m.bounds.upper().data()[row], TOL));
                    }
                }
            }
        }
        for v in alpha.store.iter().flat_map(|(_, v)| v.iter()) {
            prop_assert!((0.0..=1.0).contains(v));
        }
        for h in alpha.history.values() {
            let mut best = f64::INFINITY;
            let mut seq = Vec::new();
            for v in h {
                best = best.min(*v);
                seq.push(best);
            }
            prop_assert!(seq.windows(2).all(|p| p[1] <= p[0]));
        }
    }

    #[test]
    fn sound_under_arbitrary_slopes(seed: u64) {
        let mut r = rng(seed);
        let mlp = random_fuzz_mlp(&mut r);
        let (lo, hi) = random_box(&mut r, mlp.inputs());
        let specs = random_specs(&mut r, mlp.outputs());
        let g = mlp.to_graph();
        let x = bounded(&lo, &hi);
        let cfg = OptimizerConfig { iterations: 1, ..Default::default() };
        let mut store: AlphaStore = run_alpha_crown(&g, &x, &specs, CrownVariant::Standard, &cfg, None).unwrap().store;
        for (_, v) in store.iter_mut() {
            for a in v.iter_mut() {
                *a = r.gen_range(-0.5..1.5);
            }
        }
        project_alphas(&mut store);
        prop_assert!(store.iter().all(|(_, v)| v.iter().all(|a| (0.0..=1.0).contains(a))));
        let run = run_crown(&g, &x, &specs, CrownVariant::Standard, Some(&store), None).unwrap();
        for _ in 0..500 {
            let y = mlp.forward(&sample(&mut r, &lo, &hi));
            for (b, spec) in specs.iter().enumerate() {
                for (row, v) in spec_values(spec, &y).into_iter().enumerate() {
                    let t = &run.branches[b].linear;
                    prop_assert!(within(v, t.lower().data()[row], t.upper().data()[row], TOL));
                }
            }
        }
    }

    #[test]
    fn taped_bounds_match_plain(seed: u64) {
        let mut r = rng(seed);
        let mlp = random_fuzz_mlp(&mut r);
        let (lo, hi) = random_box(&mut r, mlp.inputs());
        let specs = random_specs(&mut r, mlp.outputs());
        let g = mlp.to_graph();
        let x = bounded(&lo, &hi);
        let plain = run_crown(&g, &x, &specs, CrownVariant::Standard, None, None).unwrap();
        let mut ctx = BoundContext::new(&g, &x, CrownVariant::Standard, None).unwrap();
        ctx.prepare(g.output_id()).unwrap();
        for (b, spec) in specs.iter().enumerate() {
            for side in Side::BOTH {
                let problem = AlphaProblem::new(&ctx, spec, side);
                if problem.num_params() == 0 {
                    continue;
                }
                let mut store = AlphaStore::new();
                let init = problem.initial(&mut store);
                let tape = Tape::new();
                let v = problem.evaluate(&tape, tape.constant(init.clone())).unwrap();
                let expected = match side {
                    Side::Lower => plain.branches[b].linear.lower(),
                    Side::Upper => plain.branches[b].linear.upper(),
                };
                let got = v.value().clone();
                prop_assert_eq!(got.data(), expected.data());

                // repeated passes on fresh tapes give identical gradients
                let grad = || {
                    let t = Tape::new();
                    let p = t.param(init.clone());
                    let o = problem.objective(&t, p).unwrap();
                    t.backward(o).unwrap().get(p).cloned()
                };
                prop_assert_eq!(grad(), grad());
            }
        }
    }

    #[test]
    fn analysis_is_deterministic(seed: u64) {
        let mut r = rng(seed);
        let mlp = random_fuzz_mlp(&mut r);
        let (lo, hi) = random_box(&mut r, mlp.inputs());
        let specs = random_specs(&mut r, mlp.outputs());
        let g = mlp.to_graph();
        let x = bounded(&lo, &hi);
        for method in [Method::Ibp, Method::Crown, Method::AlphaCrown] {
            let opts = AnalysisOptions { method, ..Default::default() };
            let a = analyze(&g, &x, &specs, &opts).unwrap();
            let b = analyze(&g, &x, &specs, &opts).unwrap();
            prop_assert_eq!(&a.branches, &b.branches);
        }
    }

    #[test]
    fn onnx_round_trip_preserves_function(seed: u64) {
        let mut r = rng(seed);
        let mlp = random_fuzz_mlp(&mut r);
        let g = mlp.to_graph();
        let back = import_model(&decode_model(&encode_model(&export_model(&g).unwrap())).unwrap()).unwrap();
        let shape = |n: &crownprop::GraphNode| (n.kind.clone(), n.inputs.clone(), n.output_shape.clone());
        prop_assert_eq!(g.nodes().iter().map(shape).collect::<Vec<_>>(), back.nodes().iter().map(shape).collect::<Vec<_>>());
        for _ in 0..20 {
            let x: Vec<f64> = (0..mlp.inputs()).map(|_| r.gen_range(-2.0..2.0)).collect();
            let y = back.evaluate(&Tensor::from_vec(x.clone())).unwrap();
            for (a, b) in y.data().iter().zip(mlp.forward(&x)) {
                prop_assert!((a - b).abs() <= TOL * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn parsed_rows_match_direct_evaluation(seed: u64) {
        let mut r = rng(seed);
        let m = r.gen_range(1..5);
        let coeffs: Vec<(f64, f64)> = (0..m).map(|_| (r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0))).collect();
        let (c_l, c_r) = (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
        let ge = r.gen_bool(0.5);
        let side = |k: usize, c: f64| {
            let terms: Vec<String> = (0..m).map(|j| format!("(* {:?} Y_{j})", if k == 0 { coeffs[j].0 } else { coeffs[j].1 })).collect();
            format!("(+ {} {c:?})", terms.join(" "))
        };
        let mut text: String = (0..m).map(|j| format!("(declare-const Y_{j} Real)\n")).collect();
        text = format!("(declare-const X_0 Real)\n{text}(assert (<= X_0 1))\n(assert (>= X_0 0))\n");
        text.push_str(&format!("(assert ({} {} {}))\n", if ge { ">=" } else { "<=" }, side(0, c_l), side(1, c_r)));
        let spec = parse_str(&text, 1, m).unwrap();
        let out = spec.output.unwrap();
        let rows = &out.branches()[0];
        prop_assert_eq!(rows.len(), 1);
        for _ in 0..50 {
            let y: Vec<f64> = (0..m).map(|_| r.gen_range(-5.0..5.0)).collect();
            let lhs: f64 = coeffs.iter().zip(&y).map(|(c, v)| c.0 * v).sum::<f64>() + c_l;
            let rhs: f64 = coeffs.iter().zip(&y).map(|(c, v)| c.1 * v).sum::<f64>() + c_r;
            let direct = if ge { lhs - rhs } else { rhs - lhs };
            // skip points too close to the boundary to judge
            if direct.abs() < 1e-9 {
                continue;
            }
            prop_assert_eq!(rows[0].is_satisfied(&y), if ge { lhs >= rhs } else { lhs <= rhs });
        }
    }
}
