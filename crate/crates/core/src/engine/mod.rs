//! IBP, CROWN and CROWN-IBP over a [`NetworkGraph`].
//!
//! A [`BoundContext`] holds the per-run bound slots of every node: the IBP box
//! and, once known, the concrete box used to relax ReLUs. In standard CROWN
//! only the input starts out concrete and ReLU pre-activations get their own
//! backward pass on demand; in CROWN-IBP every node is concrete from IBP.

pub mod backward;
pub mod relu;
pub mod spec;

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

pub use backward::{
    backward_side, concretize, concretize_side, node_backward, Algebra, DefaultSlopes, LinearBounds, NodeStep, Plain,
    Side, SideBounds, SlopeSource, Taped,
};
pub use relu::{count_unstable, default_lower_slope, relu_relaxation, ReluNeuron, ReluRelaxation, Stability};
pub use spec::{preprocess_c, SpecMatrix};

use crate::alpha::{AlphaStore, StoredSlopes};
use crate::error::{Error, Result};
use crate::graph::{InputRole, NetworkGraph, NodeId, NodeKind};
use crate::interval::{interval_affine, interval_elementwise, interval_monotone_unary, ElementwiseKind, Operand, UnaryKind};
use crate::tensor::{BoundedTensor, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AnalysisMode {
    Ibp,
    #[default]
    CrownStandard,
    CrownIbp,
    AlphaCrown,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CrownVariant {
    #[default]
    Standard,
    CrownIbp,
}

/// Bounds on the rows of one spec branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchBounds {
    /// Reported bounds: the relaxation bounds intersected with the IBP box of
    /// the rows.
    pub bounds: BoundedTensor,
    /// Bounds from the linear relaxation alone.
    pub linear: BoundedTensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassStats {
    /// All backward passes, intermediate ones included.
    pub backward_passes: usize,
    /// Passes launched to bound ReLU pre-activations.
    pub intermediate_passes: usize,
    /// Passes with IBP intermediates run alongside the standard variant.
    pub reference_passes: usize,
}

fn flat(b: &BoundedTensor) -> Result<BoundedTensor> {
    b.reshape(&[b.numel()])
}

fn operand_box(graph: &NetworkGraph, boxes: &[BoundedTensor], inp: crate::graph::NodeInput) -> Result<BoundedTensor> {
    Ok(match inp.role {
        InputRole::Activation => boxes[inp.id].clone(),
        InputRole::Constant => BoundedTensor::point(graph.constant_value(inp.id)?.clone()),
    })
}

/// Interval bounds of every node, in node order.
pub fn compute_ibp_bounds(graph: &NetworkGraph, input: &BoundedTensor) -> Result<Vec<BoundedTensor>> {
    if input.numel() != graph.input_size() {
        return Err(Error::shape(format!(
            "input box of {} values for a network with {} inputs",
            input.numel(),
            graph.input_size()
        )));
    }
    let mut boxes: Vec<BoundedTensor> = Vec::with_capacity(graph.len());
    for node in graph.nodes() {
        let shape = &node.output_shape;
        let arg = |k: usize| &boxes[node.inputs[k].id];
        let b = match &node.kind {
            NodeKind::Input => input.reshape(shape)?,
            NodeKind::Constant(t) => BoundedTensor::point(t.clone()),
            NodeKind::Gemm { weight, bias } => interval_affine(weight, bias.as_ref(), &flat(arg(0))?)?.reshape(shape)?,
            NodeKind::MatMul { weight } => interval_affine(weight, None, &flat(arg(0))?)?.reshape(shape)?,
            NodeKind::Add | NodeKind::Sub => {
                let kind = if node.kind == NodeKind::Add { ElementwiseKind::Add } else { ElementwiseKind::Sub };
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let out = match (a.role, b.role) {
                    (InputRole::Activation, InputRole::Constant) => {
                        interval_elementwise(kind, &boxes[a.id], Operand::Constant(graph.constant_value(b.id)?))?
                    }
                    _ => {
                        let left = operand_box(graph, &boxes, a)?;
                        let right = operand_box(graph, &boxes, b)?;
                        interval_elementwise(kind, &left, Operand::Box(&right))?
                    }
                };
                out.reshape(shape)?
            }
            NodeKind::Relu => interval_monotone_unary(UnaryKind::Relu, arg(0))?,
            NodeKind::Flatten { .. } | NodeKind::Reshape { .. } => {
                interval_monotone_unary(UnaryKind::Reshape(shape), arg(0))?
            }
        };
        boxes.push(b);
    }
    Ok(boxes)
}

/// Box of `C y` given the IBP box of the output.
pub fn ibp_spec_bounds(output: &BoundedTensor, spec: &SpecMatrix) -> Result<BoundedTensor> {
    interval_affine(&spec.rows, None, &flat(output)?)
}

/// Per-run bound slots and relaxations for one model and input box.
pub struct BoundContext<'g> {
    graph: &'g NetworkGraph,
    input: BoundedTensor,
    variant: CrownVariant,
    deadline: Option<Instant>,
    ibp: Vec<BoundedTensor>,
    concrete: Vec<Option<BoundedTensor>>,
    relaxations: BTreeMap<NodeId, ReluRelaxation>,
    backward_passes: Cell<usize>,
    intermediate_passes: usize,
    /// CROWN-IBP context whose bounds cap the standard variant's rows.
    reference: Option<Box<BoundContext<'g>>>,
}

impl<'g> BoundContext<'g> {
    /// Runs IBP and marks the nodes whose bounds count as concrete.
    pub fn new(
        graph: &'g NetworkGraph,
        input: &BoundedTensor,
        variant: CrownVariant,
        deadline: Option<Instant>,
    ) -> Result<Self> {
        let ibp = compute_ibp_bounds(graph, input)?;
        let input = flat(input)?;
        let concrete = match variant {
            CrownVariant::CrownIbp => ibp.iter().cloned().map(Some).collect(),
            CrownVariant::Standard => {
                let mut c = vec![None; graph.len()];
                c[graph.input_id()] = Some(ibp[graph.input_id()].clone());
                c
            }
        };
        Ok(BoundContext {
            graph,
            input,
            variant,
            deadline,
            ibp,
            concrete,
            relaxations: BTreeMap::new(),
            backward_passes: Cell::new(0),
            intermediate_passes: 0,
            reference: None,
        })
    }

    pub fn graph(&self) -> &'g NetworkGraph {
        self.graph
    }

    /// The input box, flattened.
    pub fn input(&self) -> &BoundedTensor {
        &self.input
    }

    pub fn variant(&self) -> CrownVariant {
        self.variant
    }

    pub fn deadline(&self) -> Option<Instant> {
        self.deadline
    }

    pub fn ibp(&self, id: NodeId) -> &BoundedTensor {
        &self.ibp[id]
    }

    pub fn ibp_bounds(&self) -> &[BoundedTensor] {
        &self.ibp
    }

    pub fn concrete(&self, id: NodeId) -> Option<&BoundedTensor> {
        self.concrete[id].as_ref()
    }

    pub fn has_concrete(&self, id: NodeId) -> bool {
        self.concrete[id].is_some()
    }

    pub fn relaxation(&self, relu: NodeId) -> Option<&ReluRelaxation> {
        self.relaxations.get(&relu)
    }

    pub fn relaxations(&self) -> &BTreeMap<NodeId, ReluRelaxation> {
        &self.relaxations
    }

    pub fn stats(&self) -> PassStats {
        PassStats {
            backward_passes: self.backward_passes.get(),
            intermediate_passes: self.intermediate_passes,
            reference_passes: self.reference.as_ref().map_or(0, |r| r.backward_passes.get()),
        }
    }

    fn ancestors(&self, start: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(id) = stack.pop() {
            for &d in self.graph.forward_deps(id) {
                if seen.insert(d) {
                    stack.push(d);
                }
            }
        }
        seen
    }

    /// Relax every ReLU that `start` depends on, bounding pre-activations
    /// first where needed.
    pub fn prepare(&mut self, start: NodeId) -> Result<()> {
        for id in self.ancestors(start) {
            if self.graph.node(id).kind != NodeKind::Relu || self.relaxations.contains_key(&id) {
                continue;
            }
            let pre = self.graph.node(id).inputs[0].id;
            let bounds = self.compute_intermediate_bounds_lazy(pre)?;
            self.relaxations.insert(id, ReluRelaxation::from_bounds(&bounds)?);
        }
        Ok(())
    }

    /// Concrete bounds of `id`, launching a backward pass only when IBP
    /// leaves an unstable neuron and a linear layer lies between the node and
    /// the input.
    pub fn compute_intermediate_bounds_lazy(&mut self, id: NodeId) -> Result<BoundedTensor> {
        if let Some(b) = &self.concrete[id] {
            return Ok(b.clone());
        }
        let ibp = self.ibp[id].clone();
        let bounds = if count_unstable(&ibp) == 0 || self.graph.bound_requirements(id).ibp_sufficient {
            ibp
        } else {
            self.prepare(id)?;
            let n = self.graph.node(id).numel();
            let state = self.backward_from(&Plain, id, Tensor::identity(n), Some(&DefaultSlopes), Some(&DefaultSlopes))?;
            self.intermediate_passes += 1;
            let crown = concretize(&state, &self.input)?.reshape(ibp.shape())?;
            crown.intersect(&ibp)?
        };
        self.concrete[id] = Some(bounds.clone());
        Ok(bounds)
    }

    /// Backward pass from `start` to the input for the requested sides.
    /// Every ReLU on the way must have been relaxed by [`Self::prepare`].
    pub fn backward_from<A: Algebra>(
        &self,
        alg: &A,
        start: NodeId,
        init: A::V,
        lower: Option<&dyn SlopeSource<A>>,
        upper: Option<&dyn SlopeSource<A>>,
    ) -> Result<LinearBounds<A::V>> {
        backward::check_deadline(self.deadline)?;
        self.backward_passes.set(self.backward_passes.get() + 1);
        let run = |src: Option<&dyn SlopeSource<A>>, side| {
            src.map(|s| backward_side(alg, self.graph, &self.relaxations, start, init.clone(), side, s, self.deadline))
                .transpose()
        };
        Ok(LinearBounds { target: self.graph.input_id(), lower: run(lower, Side::Lower)?, upper: run(upper, Side::Upper)? })
    }

    pub fn ibp_spec_bounds(&self, spec: &SpecMatrix) -> Result<BoundedTensor> {
        ibp_spec_bounds(&self.ibp[self.graph.output_id()], spec)
    }

    /// CROWN bounds on the rows of `spec`, with lower slopes from `alphas`
    /// where present.
    pub fn spec_bounds(&mut self, spec: &SpecMatrix, alphas: Option<&AlphaStore>) -> Result<BranchBounds> {
        let out = self.graph.output_id();
        self.prepare(out)?;
        let init = spec.rows.clone();
        let state = match alphas {
            None => self.backward_from(&Plain, out, init, Some(&DefaultSlopes), Some(&DefaultSlopes))?,
            Some(store) => {
                let lo = StoredSlopes { store, branch: spec.branch, side: Side::Lower };
                let up = StoredSlopes { store, branch: spec.branch, side: Side::Upper };
                self.backward_from(&Plain, out, init, Some(&lo), Some(&up))?
            }
        };
        let linear = concretize(&state, &self.input)?;
        let mut bounds = linear.intersect(&self.ibp_spec_bounds(spec)?)?;
        // tighter intermediate bounds can flip adaptive slopes and loosen a
        // row, so the standard variant is capped by a CROWN-IBP pass; without
        // intermediate passes both variants relax identically
        if self.variant == CrownVariant::Standard && self.intermediate_passes > 0 {
            if self.reference.is_none() {
                let ctx = BoundContext::new(self.graph, &self.input, CrownVariant::CrownIbp, self.deadline)?;
                self.reference = Some(Box::new(ctx));
            }
            let reference = self.reference.as_mut().expect("created above").spec_bounds(spec, None)?;
            bounds = bounds.intersect(&reference.bounds)?;
        }
        Ok(BranchBounds { bounds, linear })
    }
}

pub(crate) fn fill_partial(err: Error, partial: impl FnOnce() -> Result<Vec<BoundedTensor>>) -> Error {
    match err {
        Error::Timeout { partial: p } if p.is_empty() => match partial() {
            Ok(partial) => Error::Timeout { partial },
            Err(e) => e,
        },
        other => other,
    }
}

pub fn run_ibp(graph: &NetworkGraph, input: &BoundedTensor, specs: &[SpecMatrix]) -> Result<Vec<BranchBounds>> {
    let ibp = compute_ibp_bounds(graph, input)?;
    specs
        .iter()
        .map(|s| {
            let b = ibp_spec_bounds(&ibp[graph.output_id()], s)?;
            Ok(BranchBounds { bounds: b.clone(), linear: b })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CrownRun {
    pub branches: Vec<BranchBounds>,
    pub stats: PassStats,
}

/// CROWN on every branch. On timeout the error carries the IBP bounds of
/// the rows.
pub fn run_crown(
    graph: &NetworkGraph,
    input: &BoundedTensor,
    specs: &[SpecMatrix],
    variant: CrownVariant,
    alphas: Option<&AlphaStore>,
    deadline: Option<Instant>,
) -> Result<CrownRun> {
    let mut ctx = BoundContext::new(graph, input, variant, deadline)?;
    let partial = |ctx: &BoundContext| specs.iter().map(|s| ctx.ibp_spec_bounds(s)).collect::<Result<Vec<_>>>();
    let mut branches = Vec::with_capacity(specs.len());
    for spec in specs {
        match ctx.spec_bounds(spec, alphas) {
            Ok(b) => branches.push(b),
            Err(e) => return Err(fill_partial(e, || partial(&ctx))),
        }
    }
    Ok(CrownRun { branches, stats: ctx.stats() })
}
