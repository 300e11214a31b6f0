//! Interval (box) arithmetic used by IBP.

use crate::error::{Error, Result};
use crate::tensor::{BoundedTensor, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
}

/// Second operand of an elementwise interval op.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Box(&'a BoundedTensor),
    Constant(&'a Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub enum UnaryKind<'a> {
    Relu,
    Reshape(&'a [usize]),
    /// ONNX flatten: dims before `axis` collapse into the first output dim.
    Flatten { axis: usize },
}

pub fn pos_neg_split(m: &Tensor) -> (Tensor, Tensor) {
    m.pos_neg_split()
}

/// Exact image box of `x -> W x + bias` over `x`; `weight` is `[out, in]`.
pub fn interval_affine(weight: &Tensor, bias: Option<&Tensor>, x: &BoundedTensor) -> Result<BoundedTensor> {
    let (out, inp) = weight.dims2()?;
    if weight.rank() != 2 || inp != x.numel() {
        return Err(Error::shape(format!(
            "affine weight {:?} applied to box of {} values",
            weight.shape(),
            x.numel()
        )));
    }
    let lo = x.lower().reshape(&[inp])?;
    let hi = x.upper().reshape(&[inp])?;
    let (wp, wn) = weight.pos_neg_split();
    let mut lower = wp.matmul(&lo)?.add(&wn.matmul(&hi)?)?;
    let mut upper = wp.matmul(&hi)?.add(&wn.matmul(&lo)?)?;
    if let Some(b) = bias {
        if b.numel() != out {
            return Err(Error::shape(format!("bias of {} values for {out} outputs", b.numel())));
        }
        let b = b.reshape(&[out])?;
        lower = lower.add(&b)?;
        upper = upper.add(&b)?;
    }
    Ok(BoundedTensor::new_unchecked(lower, upper))
}

pub fn interval_elementwise(kind: ElementwiseKind, a: &BoundedTensor, b: Operand<'_>) -> Result<BoundedTensor> {
    let (bl, bu) = match b {
        Operand::Box(b) => (b.lower(), b.upper()),
        Operand::Constant(c) => (c, c),
    };
    let (lower, upper) = match kind {
        ElementwiseKind::Add => (a.lower().add(bl)?, a.upper().add(bu)?),
        ElementwiseKind::Sub => (a.lower().sub(bu)?, a.upper().sub(bl)?),
    };
    Ok(BoundedTensor::new_unchecked(lower, upper))
}

pub fn flatten_shape(shape: &[usize], axis: usize) -> Result<Vec<usize>> {
    if axis > shape.len() {
        return Err(Error::shape(format!("flatten axis {axis} out of range for {shape:?}")));
    }
    let head: usize = shape[..axis].iter().product();
    let tail: usize = shape[axis..].iter().product();
    Ok(vec![head, tail])
}

pub fn interval_monotone_unary(kind: UnaryKind<'_>, x: &BoundedTensor) -> Result<BoundedTensor> {
    match kind {
        UnaryKind::Relu => {
            let relu = |v: f64| v.max(0.0);
            Ok(BoundedTensor::new_unchecked(x.lower().map(relu), x.upper().map(relu)))
        }
        UnaryKind::Reshape(shape) => x.reshape(shape),
        UnaryKind::Flatten { axis } => x.reshape(&flatten_shape(x.shape(), axis)?),
    }
}
