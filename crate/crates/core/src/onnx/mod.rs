//! ONNX import into a [`NetworkGraph`] and export back out.
//!
//! Supported operators: Gemm, MatMul (one constant operand), Add, Sub, Relu,
//! Flatten, Reshape and Constant. Weight initializers of linear layers are
//! folded into the layer; other initializers become Constant nodes, and
//! operators whose inputs are all constant are evaluated at import.

mod export;
pub mod proto;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use prost::Message;

pub use export::{encode_model, export_model, write_onnx};
use proto::{attribute_type, data_type, ModelProto, NodeProto, TensorProto, ValueInfoProto};

use crate::error::{Error, Result};
use crate::graph::{topological_order, GraphNode, InputRole, NetworkGraph, NodeId, NodeInput, NodeKind};
use crate::interval::flatten_shape;
use crate::tensor::{elementwise_shape, Tensor};

const SUPPORTED: &[&str] = &["Gemm", "MatMul", "Add", "Sub", "Relu", "Flatten", "Reshape", "Constant"];

fn onnx_err(msg: impl Into<String>) -> Error {
    Error::Onnx(msg.into())
}

#[derive(Clone, Debug, PartialEq)]
pub enum AttrValue {
    Float(f64),
    Int(i64),
    String(String),
    Tensor(TensorProto),
    Floats(Vec<f64>),
    Ints(Vec<i64>),
}

/// An ONNX node before graph construction.
#[derive(Clone, Debug, PartialEq)]
pub struct RawOperator {
    pub name: String,
    pub op_type: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub attributes: BTreeMap<String, AttrValue>,
}

impl RawOperator {
    pub fn from_proto(node: &NodeProto) -> Result<Self> {
        let mut attributes = BTreeMap::new();
        for a in &node.attribute {
            let v = match a.r#type {
                attribute_type::FLOAT => AttrValue::Float(a.f as f64),
                attribute_type::INT => AttrValue::Int(a.i),
                attribute_type::STRING => AttrValue::String(String::from_utf8_lossy(&a.s).into_owned()),
                attribute_type::TENSOR => {
                    AttrValue::Tensor(a.t.clone().ok_or_else(|| onnx_err(format!("attribute '{}' has no tensor", a.name)))?)
                }
                attribute_type::FLOATS => AttrValue::Floats(a.floats.iter().map(|&f| f as f64).collect()),
                attribute_type::INTS => AttrValue::Ints(a.ints.clone()),
                // untyped attributes from old exporters
                0 if !a.ints.is_empty() => AttrValue::Ints(a.ints.clone()),
                0 if a.t.is_some() => AttrValue::Tensor(a.t.clone().unwrap()),
                0 if a.f != 0.0 => AttrValue::Float(a.f as f64),
                0 => AttrValue::Int(a.i),
                other => return Err(onnx_err(format!("attribute '{}' has unsupported type {other}", a.name))),
            };
            attributes.insert(a.name.clone(), v);
        }
        let name = if node.name.is_empty() { node.output.first().cloned().unwrap_or_default() } else { node.name.clone() };
        Ok(RawOperator {
            name,
            op_type: node.op_type.clone(),
            inputs: node.input.clone(),
            outputs: node.output.clone(),
            attributes,
        })
    }

    fn int_attr(&self, key: &str, default: i64) -> Result<i64> {
        match self.attributes.get(key) {
            None => Ok(default),
            Some(AttrValue::Int(i)) => Ok(*i),
            Some(other) => Err(onnx_err(format!("{} '{}': attribute {key} is not an int: {other:?}", self.op_type, self.name))),
        }
    }

    fn float_attr(&self, key: &str, default: f64) -> Result<f64> {
        match self.attributes.get(key) {
            None => Ok(default),
            Some(AttrValue::Float(f)) => Ok(*f),
            Some(AttrValue::Int(i)) => Ok(*i as f64),
            Some(other) => Err(onnx_err(format!("{} '{}': attribute {key} is not a float: {other:?}", self.op_type, self.name))),
        }
    }

    fn present_inputs(&self) -> impl Iterator<Item = &String> {
        self.inputs.iter().filter(|s| !s.is_empty())
    }

    fn arity(&self, min: usize, max: usize) -> Result<()> {
        let n = self.present_inputs().count();
        if n < min || n > max || self.outputs.len() != 1 {
            return Err(onnx_err(format!(
                "{} '{}' has {n} inputs and {} outputs",
                self.op_type,
                self.name,
                self.outputs.len()
            )));
        }
        Ok(())
    }
}

/// Label each (non-empty) input of `op` as constant or activation.
pub fn classify_operator_inputs(op: &RawOperator, known_constants: &HashSet<String>) -> Vec<InputRole> {
    op.present_inputs()
        .map(|name| if known_constants.contains(name) { InputRole::Constant } else { InputRole::Activation })
        .collect()
}

/// Inferred shape of every tensor name in a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShapeTable {
    shapes: BTreeMap<String, Vec<usize>>,
}

impl ShapeTable {
    pub fn get(&self, name: &str) -> Option<&[usize]> {
        self.shapes.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<usize>)> {
        self.shapes.iter()
    }
}

#[derive(Clone, Debug)]
enum ConstValue {
    Float(Tensor),
    Int { dims: Vec<usize>, values: Vec<i64> },
}

impl ConstValue {
    fn shape(&self) -> Vec<usize> {
        match self {
            ConstValue::Float(t) => t.shape().to_vec(),
            ConstValue::Int { dims, .. } => dims.clone(),
        }
    }
}

fn tensor_dims(t: &TensorProto) -> Result<Vec<usize>> {
    t.dims
        .iter()
        .map(|&d| {
            if d <= 0 {
                Err(onnx_err(format!("tensor '{}' has dimension {d}", t.name)))
            } else {
                Ok(d as usize)
            }
        })
        .collect()
}

fn decode_tensor(t: &TensorProto) -> Result<ConstValue> {
    if t.data_location == 1 || !t.external_data.is_empty() {
        return Err(onnx_err(format!("tensor '{}' uses external data", t.name)));
    }
    let dims = tensor_dims(t)?;
    let n: usize = dims.iter().product();
    let raw = &t.raw_data;
    let count_err = |got: usize| onnx_err(format!("tensor '{}' has {got} values for dims {dims:?}", t.name));
    match t.data_type {
        data_type::FLOAT | data_type::DOUBLE => {
            let data: Vec<f64> = if raw.is_empty() {
                if t.data_type == data_type::FLOAT {
                    t.float_data.iter().map(|&v| v as f64).collect()
                } else {
                    t.double_data.clone()
                }
            } else if t.data_type == data_type::FLOAT {
                if raw.len() % 4 != 0 {
                    return Err(count_err(raw.len() / 4));
                }
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
            } else {
                if raw.len() % 8 != 0 {
                    return Err(count_err(raw.len() / 8));
                }
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
            };
            if data.len() != n {
                return Err(count_err(data.len()));
            }
            Ok(ConstValue::Float(Tensor::new(dims, data)?))
        }
        data_type::INT64 => {
            let values: Vec<i64> = if raw.is_empty() {
                t.int64_data.clone()
            } else {
                raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()
            };
            if values.len() != n {
                return Err(count_err(values.len()));
            }
            Ok(ConstValue::Int { dims, values })
        }
        other => Err(Error::UnsupportedDataType { tensor: t.name.clone(), data_type: other }),
    }
}

fn value_info_shape(v: &ValueInfoProto) -> Result<Vec<usize>> {
    let shape = v
        .r#type
        .as_ref()
        .and_then(|t| t.tensor_type.as_ref())
        .and_then(|t| t.shape.as_ref())
        .ok_or_else(|| onnx_err(format!("graph input '{}' has no shape", v.name)))?;
    if let Some(elem) = v.r#type.as_ref().and_then(|t| t.tensor_type.as_ref()).map(|t| t.elem_type) {
        if elem != 0 && elem != data_type::FLOAT && elem != data_type::DOUBLE {
            return Err(Error::UnsupportedDataType { tensor: v.name.clone(), data_type: elem });
        }
    }
    shape
        .dim
        .iter()
        .map(|d| match (d.dim_value, &d.dim_param) {
            (Some(x), _) if x > 0 => Ok(x as usize),
            // symbolic (batch) dimensions are taken as 1
            (None, Some(_)) | (Some(0), Some(_)) | (None, None) => Ok(1),
            (Some(x), _) => Err(onnx_err(format!("graph input '{}' has dimension {x}", v.name))),
        })
        .collect()
}

/// A model reduced to the pieces graph construction needs.
struct Loaded {
    ops: Vec<RawOperator>,
    consts: HashMap<String, ConstValue>,
    input: String,
    input_shape: Vec<usize>,
    output: String,
}

fn constant_op_value(op: &RawOperator) -> Result<ConstValue> {
    op.arity(0, 0)?;
    let [(key, v)] = op.attributes.iter().collect::<Vec<_>>()[..] else {
        return Err(onnx_err(format!("Constant '{}' needs exactly one value attribute", op.name)));
    };
    match (key.as_str(), v) {
        ("value", AttrValue::Tensor(t)) => decode_tensor(t),
        ("value_float", AttrValue::Float(f)) => Ok(ConstValue::Float(Tensor::scalar(*f))),
        ("value_floats", AttrValue::Floats(f)) if !f.is_empty() => Ok(ConstValue::Float(Tensor::from_vec(f.clone()))),
        ("value_int", AttrValue::Int(i)) => Ok(ConstValue::Int { dims: vec![], values: vec![*i] }),
        ("value_ints", AttrValue::Ints(v)) => Ok(ConstValue::Int { dims: vec![v.len()], values: v.clone() }),
        _ => Err(onnx_err(format!("Constant '{}': unsupported attribute '{key}'", op.name))),
    }
}

fn load(model: &ModelProto) -> Result<Loaded> {
    let graph = model.graph.as_ref().ok_or_else(|| onnx_err("model has no graph"))?;
    let mut consts = HashMap::new();
    for init in &graph.initializer {
        consts.insert(init.name.clone(), decode_tensor(init)?);
    }
    let mut ops = Vec::new();
    for node in &graph.node {
        if !(node.domain.is_empty() || node.domain == "ai.onnx") || !SUPPORTED.contains(&node.op_type.as_str()) {
            return Err(Error::UnsupportedOperator(node.op_type.clone()));
        }
        let op = RawOperator::from_proto(node)?;
        if op.op_type == "Constant" {
            consts.insert(op.outputs[0].clone(), constant_op_value(&op)?);
        } else {
            ops.push(op);
        }
    }
    let inputs: Vec<&ValueInfoProto> = graph.input.iter().filter(|v| !consts.contains_key(&v.name)).collect();
    let input = match inputs.as_slice() {
        [v] => *v,
        [] => return Err(onnx_err("graph has no non-initializer input")),
        vs => return Err(onnx_err(format!("graph has {} inputs, expected one", vs.len()))),
    };
    let output = match graph.output.as_slice() {
        [v] => v.name.clone(),
        vs => return Err(onnx_err(format!("graph has {} outputs, expected one", vs.len()))),
    };

    let mut producer = HashMap::new();
    for (i, op) in ops.iter().enumerate() {
        for out in &op.outputs {
            if producer.insert(out.clone(), i).is_some() || consts.contains_key(out) || *out == input.name {
                return Err(onnx_err(format!("tensor '{out}' is produced more than once")));
            }
        }
    }
    let mut deps = Vec::with_capacity(ops.len());
    for op in &ops {
        let mut d = Vec::new();
        for name in op.present_inputs() {
            if let Some(&p) = producer.get(name) {
                d.push(p);
            } else if !consts.contains_key(name) && *name != input.name {
                return Err(onnx_err(format!("{} '{}' reads unresolved tensor '{name}'", op.op_type, op.name)));
            }
        }
        deps.push(d);
    }
    if !producer.contains_key(&output) && output != input.name {
        return Err(onnx_err(format!("graph output '{output}' is not produced by any operator")));
    }
    let order = topological_order(&deps)?;
    let mut slots: Vec<Option<RawOperator>> = ops.into_iter().map(Some).collect();
    let ops = order.into_iter().map(|i| slots[i].take().expect("permutation")).collect();
    Ok(Loaded { ops, consts, input_shape: value_info_shape(input)?, input: input.name.clone(), output })
}

fn reshape_target(op: &RawOperator, input: &[usize], spec: &[i64]) -> Result<Vec<usize>> {
    let n: usize = input.iter().product();
    let mut out = Vec::with_capacity(spec.len());
    let mut infer = None;
    for (i, &d) in spec.iter().enumerate() {
        match d {
            0 => out.push(*input.get(i).ok_or_else(|| onnx_err(format!("Reshape '{}': no dimension {i} to copy", op.name)))?),
            -1 if infer.is_none() => {
                infer = Some(i);
                out.push(1);
            }
            d if d > 0 => out.push(d as usize),
            d => return Err(onnx_err(format!("Reshape '{}': invalid target dimension {d}", op.name))),
        }
    }
    let known: usize = out.iter().product();
    if let Some(i) = infer {
        if known == 0 || n % known != 0 {
            return Err(onnx_err(format!("Reshape '{}': cannot reshape {n} values to {spec:?}", op.name)));
        }
        out[i] = n / known;
    }
    if out.iter().product::<usize>() != n {
        return Err(onnx_err(format!("Reshape '{}': cannot reshape {input:?} to {spec:?}", op.name)));
    }
    Ok(out)
}

fn normalized_axis(op: &RawOperator, rank: usize) -> Result<usize> {
    let axis = op.int_attr("axis", 1)?;
    let a = if axis < 0 { axis + rank as i64 } else { axis };
    if a < 0 || a as usize > rank {
        return Err(onnx_err(format!("Flatten '{}': axis {axis} out of range for rank {rank}", op.name)));
    }
    Ok(a as usize)
}

fn int_const<'a>(consts: &'a HashMap<String, ConstValue>, name: &str, op: &RawOperator) -> Result<&'a [i64]> {
    match consts.get(name) {
        Some(ConstValue::Int { values, .. }) => Ok(values),
        Some(ConstValue::Float(_)) => Err(onnx_err(format!("{} '{}': shape input '{name}' must be int64", op.op_type, op.name))),
        None => Err(onnx_err(format!("{} '{}': shape input '{name}' must be constant", op.op_type, op.name))),
    }
}

/// Output shape of `op`, or `None` while an input shape is unknown.
fn op_shape(op: &RawOperator, table: &ShapeTable, consts: &HashMap<String, ConstValue>) -> Result<Option<Vec<usize>>> {
    let ins: Vec<&String> = op.present_inputs().collect();
    let mut shapes = Vec::with_capacity(ins.len());
    for name in &ins {
        match table.get(name) {
            Some(s) => shapes.push(s.to_vec()),
            None => return Ok(None),
        }
    }
    let bad = |msg: String| onnx_err(format!("{} '{}': {msg}", op.op_type, op.name));
    let out = match op.op_type.as_str() {
        "Gemm" => {
            op.arity(2, 3)?;
            if op.int_attr("transA", 0)? != 0 {
                return Err(bad("transA is not supported".into()));
            }
            let (a, b) = (&shapes[0], &shapes[1]);
            let (m, k) = match a.as_slice() {
                [k] => (None, *k),
                [m, k] => (Some(*m), *k),
                s => return Err(bad(format!("input A must have rank 1 or 2, got {s:?}"))),
            };
            let (kb, n) = match (b.as_slice(), op.int_attr("transB", 0)? != 0) {
                ([n, k], true) => (*k, *n),
                ([k, n], false) => (*k, *n),
                (s, _) => return Err(bad(format!("input B must be a matrix, got {s:?}"))),
            };
            if k != kb {
                return Err(bad(format!("inner dimensions {a:?} and {b:?} differ")));
            }
            if let Some(c) = shapes.get(2) {
                let cn: usize = c.iter().product();
                if cn != 1 && cn != n {
                    return Err(bad(format!("bias {c:?} does not broadcast to {n} outputs")));
                }
            }
            match m {
                None => vec![n],
                Some(m) => vec![m, n],
            }
        }
        "MatMul" => {
            op.arity(2, 2)?;
            let (a, b) = (&shapes[0], &shapes[1]);
            match (a.as_slice(), b.as_slice()) {
                ([k], [kb]) if k == kb => vec![1],
                ([k], [kb, n]) if k == kb => vec![*n],
                ([.., k], [kb, n]) if k == kb => {
                    let mut s = a[..a.len() - 1].to_vec();
                    s.push(*n);
                    s
                }
                ([m, k], [kb]) if k == kb => vec![*m],
                _ => return Err(bad(format!("incompatible operands {a:?} and {b:?}"))),
            }
        }
        "Add" | "Sub" => {
            op.arity(2, 2)?;
            elementwise_shape(&shapes[0], &shapes[1]).map_err(|e| bad(e.to_string()))?
        }
        "Relu" => {
            op.arity(1, 1)?;
            shapes[0].clone()
        }
        "Flatten" => {
            op.arity(1, 1)?;
            flatten_shape(&shapes[0], normalized_axis(op, shapes[0].len())?)?
        }
        "Reshape" => {
            op.arity(2, 2)?;
            reshape_target(op, &shapes[0], int_const(consts, ins[1], op)?)?
        }
        other => return Err(Error::UnsupportedOperator(other.to_string())),
    };
    Ok(Some(out))
}

fn infer_loaded(l: &Loaded) -> Result<ShapeTable> {
    let mut table = ShapeTable::default();
    table.shapes.insert(l.input.clone(), l.input_shape.clone());
    for (name, c) in &l.consts {
        table.shapes.insert(name.clone(), c.shape());
    }
    loop {
        let mut changed = false;
        for op in &l.ops {
            if table.shapes.contains_key(&op.outputs[0]) {
                continue;
            }
            if let Some(s) = op_shape(op, &table, &l.consts)? {
                table.shapes.insert(op.outputs[0].clone(), s);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(op) = l.ops.iter().find(|op| !table.shapes.contains_key(&op.outputs[0])) {
        return Err(onnx_err(format!("could not infer the shape of '{}'", op.outputs[0])));
    }
    Ok(table)
}

/// Shapes of every tensor, propagated over repeated passes until nothing
/// changes.
pub fn infer_shapes(model: &ModelProto) -> Result<ShapeTable> {
    infer_loaded(&load(model)?)
}

fn float_const<'a>(consts: &'a HashMap<String, ConstValue>, name: &str) -> Result<&'a Tensor> {
    match consts.get(name) {
        Some(ConstValue::Float(t)) => Ok(t),
        Some(ConstValue::Int { .. }) => Err(Error::UnsupportedDataType { tensor: name.to_string(), data_type: data_type::INT64 }),
        None => Err(onnx_err(format!("'{name}' is not a constant"))),
    }
}

/// `[out, in]` weight and bias of a Gemm over its constant operands.
fn gemm_params(op: &RawOperator, consts: &HashMap<String, ConstValue>) -> Result<(Tensor, Option<Tensor>)> {
    let b = float_const(consts, &op.inputs[1])?;
    let w = if op.int_attr("transB", 0)? != 0 { b.clone() } else { b.transpose()? };
    let alpha = op.float_attr("alpha", 1.0)?;
    let beta = op.float_attr("beta", 1.0)?;
    let w = if alpha == 1.0 { w } else { w.scale(alpha) };
    let out = w.dims2()?.0;
    let bias = match op.inputs.get(2).filter(|s| !s.is_empty()) {
        None => None,
        Some(name) => {
            let c = float_const(consts, name)?;
            let c = if c.numel() == 1 { Tensor::full(&[out], c.data()[0]) } else { c.reshape(&[out])? };
            Some(if beta == 1.0 { c } else { c.scale(beta) })
        }
    };
    Ok((w, bias))
}

fn fold(op: &RawOperator, consts: &HashMap<String, ConstValue>, shape: &[usize]) -> Result<Tensor> {
    let arg = |k: usize| float_const(consts, &op.inputs[k]);
    let v = match op.op_type.as_str() {
        "Add" => arg(0)?.add(arg(1)?)?,
        "Sub" => arg(0)?.sub(arg(1)?)?,
        "Relu" => arg(0)?.map(|v| v.max(0.0)),
        "Flatten" | "Reshape" => arg(0)?.clone(),
        "Gemm" => {
            let (w, bias) = gemm_params(op, consts)?;
            let a = arg(0)?;
            let k = w.dims2()?.1;
            let rows = a.numel() / k;
            // (W · Aᵀ)ᵀ
            let mut y = w.matmul(&a.reshape(&[rows, k])?.transpose()?)?.transpose()?;
            if let Some(b) = bias {
                let tiled: Vec<f64> = (0..rows).flat_map(|_| b.data().iter().copied()).collect();
                y = y.add(&Tensor::new(y.shape().to_vec(), tiled)?)?;
            }
            y
        }
        "MatMul" => {
            let (a, b) = (arg(0)?, arg(1)?);
            let k = b.shape()[0];
            let a2 = a.reshape(&[a.numel() / k, k])?;
            a2.matmul(b)?
        }
        other => return Err(Error::UnsupportedOperator(other.to_string())),
    };
    v.reshape(shape)
}

struct Builder {
    nodes: Vec<GraphNode>,
    act: HashMap<String, NodeId>,
    const_nodes: HashMap<String, NodeId>,
}

impl Builder {
    fn push(&mut self, name: &str, kind: NodeKind, inputs: Vec<NodeInput>, shape: Vec<usize>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(GraphNode { id, name: name.to_string(), kind, inputs, output_shape: shape });
        id
    }

    fn operand(&mut self, name: &str, consts: &HashMap<String, ConstValue>) -> Result<NodeInput> {
        if let Some(&id) = self.act.get(name) {
            return Ok(NodeInput::activation(id));
        }
        if let Some(&id) = self.const_nodes.get(name) {
            return Ok(NodeInput::constant(id));
        }
        let t = float_const(consts, name)?.clone();
        let shape = t.shape().to_vec();
        let id = self.push(name, NodeKind::Constant(t), vec![], shape);
        self.const_nodes.insert(name.to_string(), id);
        Ok(NodeInput::constant(id))
    }

    fn activation(&self, op: &RawOperator, name: &str) -> Result<NodeId> {
        self.act
            .get(name)
            .copied()
            .ok_or_else(|| onnx_err(format!("{} '{}': input '{name}' must be an activation", op.op_type, op.name)))
    }
}

fn build(l: &Loaded, table: &ShapeTable) -> Result<NetworkGraph> {
    let mut consts = l.consts.clone();
    let mut b = Builder { nodes: Vec::new(), act: HashMap::new(), const_nodes: HashMap::new() };
    let input_id = b.push(&l.input, NodeKind::Input, vec![], l.input_shape.clone());
    b.act.insert(l.input.clone(), input_id);

    for op in &l.ops {
        let shape = table.get(&op.outputs[0]).expect("shapes inferred").to_vec();
        let known: HashSet<String> = consts.keys().cloned().collect();
        let roles = classify_operator_inputs(op, &known);
        // the shape operand of Reshape is an attribute, not a data input
        let data_roles = if op.op_type == "Reshape" { &roles[..1] } else { &roles[..] };
        if data_roles.iter().all(|r| *r == InputRole::Constant) {
            let v = fold(op, &consts, &shape)?;
            consts.insert(op.outputs[0].clone(), ConstValue::Float(v));
            continue;
        }
        let bilinear = || Error::UnsupportedOperator(format!("{}: bilinear activation product unsupported", op.op_type));
        let (kind, inputs) = match op.op_type.as_str() {
            "Gemm" => {
                if roles[0] == InputRole::Constant {
                    return Err(onnx_err(format!("Gemm '{}': input A must be an activation", op.name)));
                }
                if roles[1] == InputRole::Activation {
                    return Err(bilinear());
                }
                if roles.get(2) == Some(&InputRole::Activation) {
                    return Err(onnx_err(format!("Gemm '{}': bias must be constant", op.name)));
                }
                let a_shape = table.get(&op.inputs[0]).expect("shapes inferred");
                if a_shape.len() == 2 && a_shape[0] != 1 {
                    return Err(onnx_err(format!("Gemm '{}': batch size {} is not supported", op.name, a_shape[0])));
                }
                let (weight, bias) = gemm_params(op, &consts)?;
                (NodeKind::Gemm { weight, bias }, vec![NodeInput::activation(b.activation(op, &op.inputs[0])?)])
            }
            "MatMul" => match (roles[0], roles[1]) {
                (InputRole::Activation, InputRole::Activation) => return Err(bilinear()),
                (InputRole::Activation, InputRole::Constant) => {
                    let a_shape = table.get(&op.inputs[0]).expect("shapes inferred");
                    let lead: usize = a_shape[..a_shape.len() - 1].iter().product();
                    if lead != 1 {
                        return Err(onnx_err(format!("MatMul '{}': batched activation {a_shape:?} is not supported", op.name)));
                    }
                    let w = float_const(&consts, &op.inputs[1])?;
                    let weight = if w.rank() == 1 { w.reshape(&[1, w.numel()])? } else { w.transpose()? };
                    (NodeKind::MatMul { weight }, vec![NodeInput::activation(b.activation(op, &op.inputs[0])?)])
                }
                _ => {
                    let x_shape = table.get(&op.inputs[1]).expect("shapes inferred");
                    if !(x_shape.len() == 1 || (x_shape.len() == 2 && x_shape[1] == 1)) {
                        return Err(onnx_err(format!("MatMul '{}': constant-first product over {x_shape:?}", op.name)));
                    }
                    let weight = float_const(&consts, &op.inputs[0])?.clone();
                    if weight.rank() != 2 {
                        return Err(onnx_err(format!("MatMul '{}': constant operand must be a matrix", op.name)));
                    }
                    (NodeKind::MatMul { weight }, vec![NodeInput::activation(b.activation(op, &op.inputs[1])?)])
                }
            },
            "Add" | "Sub" => {
                let kind = if op.op_type == "Add" { NodeKind::Add } else { NodeKind::Sub };
                let ins = vec![b.operand(&op.inputs[0], &consts)?, b.operand(&op.inputs[1], &consts)?];
                (kind, ins)
            }
            "Relu" => (NodeKind::Relu, vec![NodeInput::activation(b.activation(op, &op.inputs[0])?)]),
            "Flatten" => {
                let rank = table.get(&op.inputs[0]).expect("shapes inferred").len();
                let axis = normalized_axis(op, rank)?;
                (NodeKind::Flatten { axis }, vec![NodeInput::activation(b.activation(op, &op.inputs[0])?)])
            }
            "Reshape" => (
                NodeKind::Reshape { shape: shape.clone() },
                vec![NodeInput::activation(b.activation(op, &op.inputs[0])?)],
            ),
            other => return Err(Error::UnsupportedOperator(other.to_string())),
        };
        let id = b.push(&op.name, kind, inputs, shape);
        b.act.insert(op.outputs[0].clone(), id);
    }
    let output = match b.act.get(&l.output) {
        Some(&id) => id,
        None => return Err(onnx_err(format!("graph output '{}' is constant", l.output))),
    };
    let nodes = std::mem::take(&mut b.nodes);
    NetworkGraph::new(nodes, output)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelProto> {
    ModelProto::decode(bytes).map_err(|e| onnx_err(format!("cannot decode model: {e}")))
}

pub fn import_model(model: &ModelProto) -> Result<NetworkGraph> {
    let loaded = load(model)?;
    let table = infer_loaded(&loaded)?;
    build(&loaded, &table)
}

pub fn parse_onnx(path: impl AsRef<Path>) -> Result<NetworkGraph> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    import_model(&decode_model(&bytes)?)
}
