//! Backward propagation of affine bounds through the graph.
//!
//! The walk is written once over an [`Algebra`]: [`Plain`] works on tensors
//! directly and [`Taped`] records every step on a [`Tape`] so the bounds can
//! be differentiated with respect to ReLU lower slopes.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::engine::relu::ReluRelaxation;
use crate::error::{Error, Result};
use crate::graph::{InputRole, NetworkGraph, NodeId, NodeKind};
use crate::tape::{Tape, Var};
use crate::tensor::{BoundedTensor, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Lower, Side::Upper];
}

pub trait Algebra {
    type V: Clone;

    fn lift(&self, t: Tensor) -> Self::V;
    fn value(&self, v: &Self::V) -> Tensor;
    /// `a · w` for a constant `w` (matrix or vector).
    fn matmul(&self, a: &Self::V, w: &Tensor) -> Result<Self::V>;
    fn add(&self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn neg(&self, a: &Self::V) -> Self::V;
    fn pos_neg_split(&self, a: &Self::V) -> (Self::V, Self::V);
    fn scale_columns(&self, a: &Self::V, s: &Self::V) -> Result<Self::V>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Plain;

impl Algebra for Plain {
    type V = Tensor;

    fn lift(&self, t: Tensor) -> Tensor {
        t
    }
    fn value(&self, v: &Tensor) -> Tensor {
        v.clone()
    }
    fn matmul(&self, a: &Tensor, w: &Tensor) -> Result<Tensor> {
        a.matmul(w)
    }
    fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }
    fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }
    fn neg(&self, a: &Tensor) -> Tensor {
        a.neg()
    }
    fn pos_neg_split(&self, a: &Tensor) -> (Tensor, Tensor) {
        a.pos_neg_split()
    }
    fn scale_columns(&self, a: &Tensor, s: &Tensor) -> Result<Tensor> {
        a.scale_columns(s)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Taped<'t> {
    pub tape: &'t Tape,
}

impl<'t> Algebra for Taped<'t> {
    type V = Var<'t>;

    fn lift(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }
    fn value(&self, v: &Var<'t>) -> Tensor {
        v.value().clone()
    }
    fn matmul(&self, a: &Var<'t>, w: &Tensor) -> Result<Var<'t>> {
        a.matmul(self.tape.constant(w.clone()))
    }
    fn add(&self, a: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        a.add(*b)
    }
    fn sub(&self, a: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        a.sub(*b)
    }
    fn neg(&self, a: &Var<'t>) -> Var<'t> {
        a.scale(-1.0)
    }
    fn pos_neg_split(&self, a: &Var<'t>) -> (Var<'t>, Var<'t>) {
        a.pos_neg_split()
    }
    fn scale_columns(&self, a: &Var<'t>, s: &Var<'t>) -> Result<Var<'t>> {
        a.scale_columns(*s)
    }
}

/// Supplies the lower relaxation slope of every neuron of a ReLU node.
pub trait SlopeSource<A: Algebra> {
    fn lower_slopes(&self, alg: &A, relu: NodeId, relax: &ReluRelaxation) -> Result<A::V>;
}

/// The slopes stored in the relaxation itself.
#[derive(Clone, Copy, Debug, Default)]
pub struct DefaultSlopes;

impl<A: Algebra> SlopeSource<A> for DefaultSlopes {
    fn lower_slopes(&self, alg: &A, _relu: NodeId, relax: &ReluRelaxation) -> Result<A::V> {
        Ok(alg.lift(relax.lower_slopes()))
    }
}

/// `a · z + b` bounding the spec rows for `z` in the target node's box.
#[derive(Clone, Debug)]
pub struct SideBounds<V> {
    pub a: V,
    pub b: V,
}

#[derive(Clone, Debug)]
pub struct LinearBounds<V> {
    pub target: NodeId,
    pub lower: Option<SideBounds<V>>,
    pub upper: Option<SideBounds<V>>,
}

impl<V> LinearBounds<V> {
    pub fn side(&self, side: Side) -> Option<&SideBounds<V>> {
        match side {
            Side::Lower => self.lower.as_ref(),
            Side::Upper => self.upper.as_ref(),
        }
    }
}

/// Result of pushing coefficients back through one node.
pub struct NodeStep<V> {
    /// Coefficients on each activation input (an input may appear twice).
    pub inputs: Vec<(NodeId, V)>,
    /// Contribution to the bias.
    pub bias: Option<V>,
}

fn flat_constant(c: &Tensor, n: usize) -> Result<Tensor> {
    if c.numel() == 1 {
        Ok(Tensor::full(&[n], c.data()[0]))
    } else {
        c.reshape(&[n])
    }
}

/// Push `a` (coefficients on the output of `id`) back to the node's inputs.
pub fn node_backward<A: Algebra>(
    alg: &A,
    graph: &NetworkGraph,
    id: NodeId,
    a: &A::V,
    side: Side,
    relax: Option<&ReluRelaxation>,
    slopes: &dyn SlopeSource<A>,
) -> Result<NodeStep<A::V>> {
    let node = graph.node(id);
    let one = |v: A::V| vec![(node.inputs[0].id, v)];
    Ok(match &node.kind {
        NodeKind::Input | NodeKind::Constant(_) => {
            return Err(Error::Graph(format!("no backward step through {} node {id}", node.kind.name())))
        }
        NodeKind::Gemm { weight, bias } => NodeStep {
            inputs: one(alg.matmul(a, weight)?),
            bias: match bias {
                Some(b) => Some(alg.matmul(a, &b.reshape(&[b.numel()])?)?),
                None => None,
            },
        },
        NodeKind::MatMul { weight } => NodeStep { inputs: one(alg.matmul(a, weight)?), bias: None },
        NodeKind::Flatten { .. } | NodeKind::Reshape { .. } => NodeStep { inputs: one(a.clone()), bias: None },
        NodeKind::Add | NodeKind::Sub => {
            let n = node.numel();
            let mut inputs = Vec::new();
            let mut bias: Option<A::V> = None;
            for (k, inp) in node.inputs.iter().enumerate() {
                let negate = k == 1 && matches!(node.kind, NodeKind::Sub);
                match inp.role {
                    InputRole::Activation => inputs.push((inp.id, if negate { alg.neg(a) } else { a.clone() })),
                    InputRole::Constant => {
                        let c = flat_constant(graph.constant_value(inp.id)?, n)?;
                        let mut contrib = alg.matmul(a, &c)?;
                        if negate {
                            contrib = alg.neg(&contrib);
                        }
                        bias = Some(match bias {
                            Some(b) => alg.add(&b, &contrib)?,
                            None => contrib,
                        });
                    }
                }
            }
            NodeStep { inputs, bias }
        }
        NodeKind::Relu => {
            let relax = relax.ok_or_else(|| Error::Graph(format!("missing relaxation for ReLU node {id}")))?;
            let lower = slopes.lower_slopes(alg, id, relax)?;
            let upper = alg.lift(relax.upper_slopes());
            let intercept = relax.upper_intercepts();
            let (pos, neg) = alg.pos_neg_split(a);
            // positive coefficients take the same-side relaxation
            let (same, opposite, toward) = match side {
                Side::Lower => (&lower, &upper, &neg),
                Side::Upper => (&upper, &lower, &pos),
            };
            let coeffs = alg.add(&alg.scale_columns(&pos, same)?, &alg.scale_columns(&neg, opposite)?)?;
            NodeStep { inputs: one(coeffs), bias: Some(alg.matmul(toward, &intercept)?) }
        }
    })
}

pub(crate) fn check_deadline(deadline: Option<Instant>) -> Result<()> {
    match deadline {
        Some(d) if Instant::now() >= d => Err(Error::Timeout { partial: Vec::new() }),
        _ => Ok(()),
    }
}

/// Walk from `start` back to the Input for one side. `init` holds the
/// coefficients on the output of `start`, shaped `[s, numel(start)]`.
#[allow(clippy::too_many_arguments)]
pub fn backward_side<A: Algebra>(
    alg: &A,
    graph: &NetworkGraph,
    relaxations: &BTreeMap<NodeId, ReluRelaxation>,
    start: NodeId,
    init: A::V,
    side: Side,
    slopes: &dyn SlopeSource<A>,
    deadline: Option<Instant>,
) -> Result<SideBounds<A::V>> {
    let rows = alg.value(&init).dims2()?.0;
    let mut pending: Vec<Option<A::V>> = vec![None; start + 1];
    pending[start] = Some(init);
    let mut bias = alg.lift(Tensor::zeros(&[rows]));
    let input = graph.input_id();
    let mut at_input = None;
    for id in (0..=start).rev() {
        let Some(a) = pending[id].take() else { continue };
        if id == input {
            at_input = Some(a);
            continue;
        }
        check_deadline(deadline)?;
        let step = node_backward(alg, graph, id, &a, side, relaxations.get(&id), slopes)?;
        if let Some(b) = step.bias {
            bias = alg.add(&bias, &b)?;
        }
        for (to, v) in step.inputs {
            pending[to] = Some(match pending[to].take() {
                Some(prev) => alg.add(&prev, &v)?,
                None => v,
            });
        }
    }
    let a = at_input.ok_or_else(|| Error::Graph(format!("node {start} does not depend on the input")))?;
    Ok(SideBounds { a, b: bias })
}

/// `a⁺ℓ + a⁻u + b` for the lower side, `a⁺u + a⁻ℓ + b` for the upper side.
pub fn concretize_side<A: Algebra>(alg: &A, bounds: &SideBounds<A::V>, x: &BoundedTensor, side: Side) -> Result<A::V> {
    let n = x.numel();
    let lo = x.lower().reshape(&[n])?;
    let hi = x.upper().reshape(&[n])?;
    let (pos, neg) = alg.pos_neg_split(&bounds.a);
    let (p, q) = match side {
        Side::Lower => (&lo, &hi),
        Side::Upper => (&hi, &lo),
    };
    let v = alg.add(&alg.matmul(&pos, p)?, &alg.matmul(&neg, q)?)?;
    alg.add(&v, &bounds.b)
}

/// Concrete bounds of both sides over the box of the target node.
///
/// Rounding may leave `lower` a few ulps above `upper` on rows of zero width;
/// callers intersect with a validated box before reporting.
pub fn concretize(state: &LinearBounds<Tensor>, x: &BoundedTensor) -> Result<BoundedTensor> {
    let (Some(l), Some(u)) = (&state.lower, &state.upper) else {
        return Err(Error::Graph("concretize needs both sides".into()));
    };
    let cols = l.a.dims2()?.1;
    if cols != x.numel() {
        return Err(Error::shape(format!("{cols} coefficients per row for a box of {} values", x.numel())));
    }
    Ok(BoundedTensor::new_unchecked(concretize_side(&Plain, l, x, Side::Lower)?, concretize_side(&Plain, u, x, Side::Upper)?))
}
