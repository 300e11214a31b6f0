//! The bounded model: a topologically ordered operator DAG.
//!
//! The graph itself is immutable once built. Per-analysis bound slots live in
//! the engine, indexed by [`NodeId`].

use std::collections::BinaryHeap;
use std::cmp::Reverse;

use crate::error::{Error, Result};
use crate::interval::flatten_shape;
use crate::tensor::{elementwise_shape, Tensor};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputRole {
    Activation,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeInput {
    pub id: NodeId,
    pub role: InputRole,
}

impl NodeInput {
    pub fn activation(id: NodeId) -> Self {
        NodeInput { id, role: InputRole::Activation }
    }

    pub fn constant(id: NodeId) -> Self {
        NodeInput { id, role: InputRole::Constant }
    }
}

/// Operator of a node. Linear layers carry their weights normalized to
/// `y = weight · x (+ bias)` with `weight` shaped `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Input,
    Constant(Tensor),
    Gemm { weight: Tensor, bias: Option<Tensor> },
    MatMul { weight: Tensor },
    Add,
    Sub,
    Relu,
    Flatten { axis: usize },
    Reshape { shape: Vec<usize> },
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Input => "Input",
            NodeKind::Constant(_) => "Constant",
            NodeKind::Gemm { .. } => "Gemm",
            NodeKind::MatMul { .. } => "MatMul",
            NodeKind::Add => "Add",
            NodeKind::Sub => "Sub",
            NodeKind::Relu => "Relu",
            NodeKind::Flatten { .. } => "Flatten",
            NodeKind::Reshape { .. } => "Reshape",
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, NodeKind::Gemm { .. } | NodeKind::MatMul { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub inputs: Vec<NodeInput>,
    pub output_shape: Vec<usize>,
}

impl GraphNode {
    pub fn numel(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn activation_inputs(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.inputs.iter().filter(|i| i.role == InputRole::Activation).map(|i| i.id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundRequirements {
    /// Per input: whether concrete bounds on that input are needed.
    pub needs_input_bounds: Vec<bool>,
    /// Whether this node's own bounds follow from interval arithmetic over
    /// the nearest bounded ancestors (no linear layer on the way).
    pub ibp_sufficient: bool,
}

#[derive(Clone, Debug)]
pub struct NetworkGraph {
    nodes: Vec<GraphNode>,
    input_id: NodeId,
    output_id: NodeId,
    forward_deps: Vec<Vec<NodeId>>,
    reverse_deps: Vec<Vec<NodeId>>,
    requirements: Vec<BoundRequirements>,
}

/// Forward (node → bound-dependency inputs) and reverse (node → successors)
/// maps. Constant-role inputs are not bound dependencies and are left out.
pub fn build_dependency_graph(nodes: &[GraphNode]) -> Result<(Vec<Vec<NodeId>>, Vec<Vec<NodeId>>)> {
    let mut forward = vec![Vec::new(); nodes.len()];
    let mut reverse = vec![Vec::new(); nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        for input in &node.inputs {
            if input.id >= i {
                return Err(Error::Graph(format!(
                    "node {i} ({}) references node {} which does not precede it",
                    node.name, input.id
                )));
            }
            if input.role == InputRole::Activation && !forward[i].contains(&input.id) {
                forward[i].push(input.id);
                reverse[input.id].push(i);
            }
        }
    }
    Ok((forward, reverse))
}

/// Kahn's algorithm over `deps[i]` = predecessors of `i`, breaking ties by
/// smallest original index.
pub fn topological_order(deps: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = deps.len();
    let mut indegree = vec![0usize; n];
    let mut successors = vec![Vec::new(); n];
    for (i, ds) in deps.iter().enumerate() {
        for &d in ds {
            if d >= n {
                return Err(Error::Graph(format!("node {i} depends on missing node {d}")));
            }
            indegree[i] += 1;
            successors[d].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &s in &successors[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(Reverse(s));
            }
        }
    }
    if order.len() != n {
        return Err(Error::Cycle);
    }
    Ok(order)
}

fn infer_output_shape(nodes: &[GraphNode], node: &GraphNode) -> Result<Vec<usize>> {
    let shape_of = |i: usize| nodes[node.inputs[i].id].output_shape.clone();
    let arity = |n: usize| -> Result<()> {
        if node.inputs.len() != n {
            return Err(Error::Graph(format!(
                "{} node '{}' expects {n} inputs, has {}",
                node.kind.name(),
                node.name,
                node.inputs.len()
            )));
        }
        Ok(())
    };
    let mismatch = |msg: String| Error::Graph(format!("{} node '{}': {msg}", node.kind.name(), node.name));
    let linear_out = |out: usize| -> Result<Vec<usize>> {
        if node.numel() != out {
            return Err(mismatch(format!("declared shape {:?} but layer has {out} outputs", node.output_shape)));
        }
        Ok(node.output_shape.clone())
    };
    match &node.kind {
        NodeKind::Input => {
            arity(0)?;
            Ok(node.output_shape.clone())
        }
        NodeKind::Constant(t) => {
            arity(0)?;
            Ok(t.shape().to_vec())
        }
        NodeKind::Gemm { weight, bias } => {
            arity(1)?;
            let (out, inp) = weight.dims2()?;
            let x: usize = shape_of(0).iter().product();
            if weight.rank() != 2 || x != inp {
                return Err(mismatch(format!("weight {:?} for input of {x} values", weight.shape())));
            }
            if let Some(b) = bias {
                if b.numel() != out {
                    return Err(mismatch(format!("bias of {} values for {out} outputs", b.numel())));
                }
            }
            linear_out(out)
        }
        NodeKind::MatMul { weight } => {
            arity(1)?;
            let (out, inp) = weight.dims2()?;
            let x: usize = shape_of(0).iter().product();
            if weight.rank() != 2 || x != inp {
                return Err(mismatch(format!("weight {:?} for input of {x} values", weight.shape())));
            }
            linear_out(out)
        }
        NodeKind::Add | NodeKind::Sub => {
            arity(2)?;
            let s = elementwise_shape(&shape_of(0), &shape_of(1)).map_err(|e| mismatch(e.to_string()))?;
            if node.inputs.iter().all(|i| i.role == InputRole::Constant) {
                return Err(mismatch("both operands are constants".into()));
            }
            // the activation operand must already have the full shape
            for (k, input) in node.inputs.iter().enumerate() {
                if input.role == InputRole::Activation && shape_of(k).iter().product::<usize>() != s.iter().product::<usize>() {
                    return Err(mismatch("activation operand would be broadcast".into()));
                }
            }
            Ok(s)
        }
        NodeKind::Relu => {
            arity(1)?;
            Ok(shape_of(0))
        }
        NodeKind::Flatten { axis } => {
            arity(1)?;
            flatten_shape(&shape_of(0), *axis)
        }
        NodeKind::Reshape { shape } => {
            arity(1)?;
            let n: usize = shape_of(0).iter().product();
            if shape.iter().product::<usize>() != n {
                return Err(mismatch(format!("cannot reshape {n} values to {shape:?}")));
            }
            Ok(shape.clone())
        }
    }
}

impl NetworkGraph {
    /// Validate and assemble a graph. Nodes must be topologically ordered
    /// with `nodes[i].id == i`; exactly one `Input` node is allowed.
    pub fn new(nodes: Vec<GraphNode>, output_id: NodeId) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::Graph(format!("node at position {i} has id {}", n.id)));
            }
        }
        let inputs: Vec<NodeId> =
            nodes.iter().filter(|n| matches!(n.kind, NodeKind::Input)).map(|n| n.id).collect();
        let input_id = match inputs.as_slice() {
            [id] => *id,
            [] => return Err(Error::Graph("graph has no input node".into())),
            _ => return Err(Error::Graph(format!("graph has {} input nodes, expected one", inputs.len()))),
        };
        if output_id >= nodes.len() {
            return Err(Error::Graph(format!("output node {output_id} does not exist")));
        }
        let (forward_deps, reverse_deps) = build_dependency_graph(&nodes)?;
        for (i, node) in nodes.iter().enumerate() {
            for input in &node.inputs {
                let producer = &nodes[input.id];
                let is_const = matches!(producer.kind, NodeKind::Constant(_));
                if is_const != (input.role == InputRole::Constant) {
                    return Err(Error::Graph(format!(
                        "node '{}' input {} has role {:?} but producer is {}",
                        node.name,
                        input.id,
                        input.role,
                        producer.kind.name()
                    )));
                }
            }
            let inferred = infer_output_shape(&nodes, node)?;
            if inferred != node.output_shape {
                return Err(Error::Graph(format!(
                    "node {i} ('{}'): declared shape {:?} conflicts with inferred {:?}",
                    node.name, node.output_shape, inferred
                )));
            }
        }
        if matches!(nodes[output_id].kind, NodeKind::Constant(_)) {
            return Err(Error::Graph("output node is a constant".into()));
        }

        let mut requirements: Vec<BoundRequirements> = Vec::with_capacity(nodes.len());
        for node in &nodes {
            let activation_ok =
                |id: NodeId, reqs: &[BoundRequirements]| reqs[id].ibp_sufficient;
            let ibp_sufficient = match node.kind {
                NodeKind::Input | NodeKind::Constant(_) => true,
                NodeKind::Gemm { .. } | NodeKind::MatMul { .. } => false,
                _ => node.activation_inputs().all(|id| activation_ok(id, &requirements)),
            };
            let needs_input_bounds = node
                .inputs
                .iter()
                .map(|i| i.role == InputRole::Activation && !node.kind.is_linear())
                .collect();
            requirements.push(BoundRequirements { needs_input_bounds, ibp_sufficient });
        }

        Ok(NetworkGraph { nodes, input_id, output_id, forward_deps, reverse_deps, requirements })
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &GraphNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input_id(&self) -> NodeId {
        self.input_id
    }

    pub fn output_id(&self) -> NodeId {
        self.output_id
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.nodes[self.input_id].output_shape
    }

    pub fn input_size(&self) -> usize {
        self.nodes[self.input_id].numel()
    }

    pub fn output_size(&self) -> usize {
        self.nodes[self.output_id].numel()
    }

    pub fn forward_deps(&self, id: NodeId) -> &[NodeId] {
        &self.forward_deps[id]
    }

    pub fn reverse_deps(&self, id: NodeId) -> &[NodeId] {
        &self.reverse_deps[id]
    }

    pub fn bound_requirements(&self, id: NodeId) -> &BoundRequirements {
        &self.requirements[id]
    }

    pub fn constant_value(&self, id: NodeId) -> Result<&Tensor> {
        match &self.nodes[id].kind {
            NodeKind::Constant(t) => Ok(t),
            other => Err(Error::Graph(format!("node {id} is {} not a constant", other.name()))),
        }
    }

    /// Concrete forward evaluation at one input point.
    pub fn evaluate(&self, x: &Tensor) -> Result<Tensor> {
        if x.numel() != self.input_size() {
            return Err(Error::shape(format!(
                "input of {} values for a network with {} inputs",
                x.numel(),
                self.input_size()
            )));
        }
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for node in &self.nodes {
            let arg = |k: usize| values[node.inputs[k].id].as_ref().expect("topological order");
            let v = match &node.kind {
                NodeKind::Input => x.reshape(&node.output_shape)?,
                NodeKind::Constant(t) => t.clone(),
                NodeKind::Gemm { weight, bias } => {
                    let flat = arg(0).reshape(&[weight.dims2()?.1])?;
                    let mut y = weight.matmul(&flat)?;
                    if let Some(b) = bias {
                        y = y.add(&b.reshape(&[b.numel()])?)?;
                    }
                    y.reshape(&node.output_shape)?
                }
                NodeKind::MatMul { weight } => {
                    let flat = arg(0).reshape(&[weight.dims2()?.1])?;
                    weight.matmul(&flat)?.reshape(&node.output_shape)?
                }
                NodeKind::Add => arg(0).add(arg(1))?.reshape(&node.output_shape)?,
                NodeKind::Sub => arg(0).sub(arg(1))?.reshape(&node.output_shape)?,
                NodeKind::Relu => arg(0).map(|v| v.max(0.0)),
                NodeKind::Flatten { .. } | NodeKind::Reshape { .. } => arg(0).reshape(&node.output_shape)?,
            };
            values[node.id] = Some(v);
        }
        Ok(values[self.output_id].take().expect("output evaluated"))
    }
}
