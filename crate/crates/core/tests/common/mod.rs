#![allow(dead_code)]

pub mod golden;

use crownprop::engine::SpecMatrix;
use crownprop::graph::{GraphNode, NodeInput, NodeKind};
use crownprop::{BoundedTensor, NetworkGraph, Tensor};
use rand::Rng;

/// Dense ReLU network kept as plain arrays; `forward` is the reference
/// evaluation used against the library.
#[derive(Clone, Debug)]
pub struct Mlp {
    /// (weight rows `[out][in]`, bias) per layer; ReLU between layers.
    pub layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
    /// Without ReLU the network is a chain of affine maps.
    pub relu: bool,
}

impl Mlp {
    pub fn inputs(&self) -> usize {
        self.layers[0].0[0].len()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().unwrap().1.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (k, (w, b)) in self.layers.iter().enumerate() {
            let mut next: Vec<f64> = w.iter().zip(b).map(|(row, bi)| row.iter().zip(&h).map(|(a, v)| a * v).sum::<f64>() + bi).collect();
            if self.relu && k + 1 < self.layers.len() {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            h = next;
        }
        h
    }

    /// Pre-activation values of every hidden layer at `x`.
    pub fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut h = x.to_vec();
        let mut out = Vec::new();
        for (w, b) in &self.layers[..self.layers.len() - 1] {
            let z: Vec<f64> = w.iter().zip(b).map(|(row, bi)| row.iter().zip(&h).map(|(a, v)| a * v).sum::<f64>() + bi).collect();
            h = z.iter().map(|v| v.max(0.0)).collect();
            out.push(z);
        }
        out
    }

    /// Gemm and Relu nodes in sequence; the last layer has no ReLU.
    pub fn to_graph(&self) -> NetworkGraph {
        let mut nodes = vec![GraphNode { id: 0, name: "x".into(), kind: NodeKind::Input, inputs: vec![], output_shape: vec![self.inputs()] }];
        for (k, (w, b)) in self.layers.iter().enumerate() {
            let id = nodes.len();
            nodes.push(GraphNode {
                id,
                name: format!("fc{k}"),
                kind: NodeKind::Gemm { weight: Tensor::from_rows(w), bias: Some(Tensor::from_vec(b.clone())) },
                inputs: vec![NodeInput::activation(id - 1)],
                output_shape: vec![b.len()],
            });
            if self.relu && k + 1 < self.layers.len() {
                nodes.push(GraphNode {
                    id: id + 1,
                    name: format!("relu{k}"),
                    kind: NodeKind::Relu,
                    inputs: vec![NodeInput::activation(id)],
                    output_shape: vec![b.len()],
                });
            }
        }
        let out = nodes.len() - 1;
        NetworkGraph::new(nodes, out).unwrap()
    }
}

fn gaussianish(rng: &mut impl Rng) -> f64 {
    // sum of uniforms, variance 1
    (0..3).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>()
}

/// Random network with the given layer widths (`widths[0]` inputs).
pub fn random_mlp(rng: &mut impl Rng, widths: &[usize]) -> Mlp {
    let layers = widths
        .windows(2)
        .map(|w| {
            let scale = 1.0 / (w[0] as f64).sqrt();
            let weight = (0..w[1]).map(|_| (0..w[0]).map(|_| gaussianish(rng) * scale).collect()).collect();
            let bias = (0..w[1]).map(|_| 0.3 * gaussianish(rng)).collect();
            (weight, bias)
        })
        .collect();
    Mlp { layers, relu: true }
}

/// 2 to 4 affine layers, widths up to 16.
pub fn random_fuzz_mlp(rng: &mut impl Rng) -> Mlp {
    let layers = rng.gen_range(2..=4);
    let mut widths = vec![rng.gen_range(1..=6)];
    for _ in 1..layers {
        widths.push(rng.gen_range(1..=16));
    }
    widths.push(rng.gen_range(1..=4));
    random_mlp(rng, &widths)
}

pub fn random_box(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.gen_range(-1.0..1.0);
        let r = rng.gen_range(0.01..1.0);
        lo.push(c - r);
        hi.push(c + r);
    }
    (lo, hi)
}

pub fn bounded(lo: &[f64], hi: &[f64]) -> BoundedTensor {
    BoundedTensor::new(Tensor::from_vec(lo.to_vec()), Tensor::from_vec(hi.to_vec())).unwrap()
}

pub fn sample(rng: &mut impl Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(&l, &h)| if l == h { l } else { rng.gen_range(l..=h) }).collect()
}

/// Every corner of the box, in binary order.
pub fn corners(lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let n = lo.len();
    (0..1usize << n).map(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).collect()).collect()
}

/// Identity rows plus two random rows.
pub fn random_specs(rng: &mut impl Rng, m: usize) -> Vec<SpecMatrix> {
    let rows: Vec<Vec<f64>> = (0..2).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    vec![SpecMatrix::identity(m), SpecMatrix { rows: Tensor::from_rows(&rows), rhs: vec![0.0; 2], branch: 1 }]
}

pub fn spec_values(spec: &SpecMatrix, y: &[f64]) -> Vec<f64> {
    let m = y.len();
    spec.rows.data().chunks(m).map(|row| row.iter().zip(y).map(|(c, v)| c * v).sum()).collect()
}

/// `lo - tol ≤ v ≤ hi + tol` with `tol` relative to the magnitudes involved.
pub fn within(v: f64, lo: f64, hi: f64, rel: f64) -> bool {
    let tol = |a: f64| rel * a.abs().max(v.abs()).max(1.0);
    v >= lo - tol(lo) && v <= hi + tol(hi)
}

pub fn widths(b: &BoundedTensor) -> Vec<f64> {
    b.upper().data().iter().zip(b.lower().data()).map(|(u, l)| u - l).collect()
}
