use std::path::Path;

use prost::Message;

use super::proto::{
    attribute_type, data_type, AttributeProto, Dimension, GraphProto, ModelProto, NodeProto, OperatorSetIdProto,
    TensorProto, TensorShapeProto, TensorTypeProto, TypeProto, ValueInfoProto,
};
use crate::error::{Error, Result};
use crate::graph::{GraphNode, NetworkGraph, NodeKind};
use crate::tensor::Tensor;

const OPSET: i64 = 13;

fn double_tensor(name: String, t: &Tensor) -> TensorProto {
    TensorProto {
        dims: t.shape().iter().map(|&d| d as i64).collect(),
        data_type: data_type::DOUBLE,
        double_data: t.data().to_vec(),
        name,
        ..Default::default()
    }
}

fn value_info(name: String, shape: &[usize]) -> ValueInfoProto {
    let dim = shape.iter().map(|&d| Dimension { dim_value: Some(d as i64), dim_param: None }).collect();
    ValueInfoProto {
        name,
        r#type: Some(TypeProto {
            tensor_type: Some(TensorTypeProto { elem_type: data_type::DOUBLE, shape: Some(TensorShapeProto { dim }) }),
        }),
    }
}

fn int_attr(name: &str, i: i64) -> AttributeProto {
    AttributeProto { name: name.into(), i, r#type: attribute_type::INT, ..Default::default() }
}

fn linear_input_ok(graph: &NetworkGraph, node: &GraphNode, k: usize) -> Result<()> {
    let x = &graph.node(node.inputs[0].id).output_shape;
    let ok = match (x.as_slice(), node.output_shape.as_slice()) {
        ([n], [_]) => *n == k,
        ([1, n], [1, _]) => *n == k,
        _ => false,
    };
    if !ok {
        return Err(Error::Onnx(format!(
            "{} node '{}' maps {x:?} to {:?}; only [K] -> [N] and [1, K] -> [1, N] can be exported",
            node.kind.name(),
            node.name,
            node.output_shape
        )));
    }
    Ok(())
}

/// Build an ONNX model computing the same function as `graph`. Weights are
/// stored as doubles, so importing the result reproduces the graph exactly.
pub fn export_model(graph: &NetworkGraph) -> Result<ModelProto> {
    let tname = |id: usize| format!("t{id}");
    let mut g = GraphProto { name: "crownprop".into(), ..Default::default() };
    for node in graph.nodes() {
        let i = node.id;
        let ins: Vec<String> = node.inputs.iter().map(|x| tname(x.id)).collect();
        let mut n = NodeProto { name: node.name.clone(), output: vec![tname(i)], ..Default::default() };
        match &node.kind {
            NodeKind::Input => {
                g.input.push(value_info(tname(i), &node.output_shape));
                continue;
            }
            NodeKind::Constant(t) => {
                g.initializer.push(double_tensor(tname(i), t));
                continue;
            }
            NodeKind::Gemm { weight, bias } => {
                linear_input_ok(graph, node, weight.dims2()?.1)?;
                n.op_type = "Gemm".into();
                g.initializer.push(double_tensor(format!("w{i}"), weight));
                n.input = vec![ins[0].clone(), format!("w{i}")];
                if let Some(b) = bias {
                    g.initializer.push(double_tensor(format!("b{i}"), &b.reshape(&[b.numel()])?));
                    n.input.push(format!("b{i}"));
                }
                n.attribute.push(int_attr("transB", 1));
            }
            NodeKind::MatMul { weight } => {
                linear_input_ok(graph, node, weight.dims2()?.1)?;
                n.op_type = "MatMul".into();
                g.initializer.push(double_tensor(format!("w{i}"), &weight.transpose()?));
                n.input = vec![ins[0].clone(), format!("w{i}")];
            }
            NodeKind::Add | NodeKind::Sub | NodeKind::Relu => {
                n.op_type = node.kind.name().into();
                n.input = ins;
            }
            NodeKind::Flatten { axis } => {
                n.op_type = "Flatten".into();
                n.input = ins;
                n.attribute.push(int_attr("axis", *axis as i64));
            }
            NodeKind::Reshape { shape } => {
                n.op_type = "Reshape".into();
                g.initializer.push(TensorProto {
                    dims: vec![shape.len() as i64],
                    data_type: data_type::INT64,
                    int64_data: shape.iter().map(|&d| d as i64).collect(),
                    name: format!("s{i}"),
                    ..Default::default()
                });
                n.input = vec![ins[0].clone(), format!("s{i}")];
            }
        }
        g.node.push(n);
    }
    let out = graph.node(graph.output_id());
    g.output.push(value_info(tname(out.id), &out.output_shape));
    Ok(ModelProto {
        ir_version: 8,
        producer_name: "crownprop".into(),
        producer_version: env!("CARGO_PKG_VERSION").into(),
        graph: Some(g),
        opset_import: vec![OperatorSetIdProto { domain: String::new(), version: OPSET }],
    })
}

pub fn encode_model(model: &ModelProto) -> Vec<u8> {
    model.encode_to_vec()
}

pub fn write_onnx(graph: &NetworkGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(&export_model(graph)?);
    std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
