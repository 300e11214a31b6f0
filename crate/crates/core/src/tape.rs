//! A small reverse-mode differentiation tape over [`Tensor`] values.
//!
//! Only the operations needed to differentiate a CROWN backward pass with
//! respect to ReLU lower slopes are supported. A tape is built fresh for each
//! optimization iteration and discarded afterwards.
//!
//! Kinks follow a fixed convention: at exactly zero (or at the clamp value for
//! `min_with_const`/`max_with_const`) the derivative of the lower branch
//! (`x < c`) is used.

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug)]
enum Op {
    Leaf { requires_grad: bool },
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    Mul(usize, usize),
    ScaleColumns(usize, usize),
    PosPart(usize),
    NegPart(usize),
    Sum(usize),
    MinConst(usize, f64),
    MaxConst(usize, f64),
    Select { mask: Vec<bool>, on_true: usize, on_false: usize },
    Scatter { src: usize, indices: Vec<usize> },
    Gather { src: usize, indices: Vec<usize> },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ScaleColumns(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::PosPart(a) | Op::NegPart(a) | Op::Sum(a) | Op::MinConst(a, _) | Op::MaxConst(a, _) => {
                vec![*a]
            }
            Op::Select { on_true, on_false, .. } => vec![*on_true, *on_false],
            Op::Scatter { src, .. } | Op::Gather { src, .. } => vec![*src],
        }
    }
}

#[derive(Debug)]
struct Entry {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    entries: RefCell<Vec<Entry>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
}

impl PartialEq for Var<'_> {
    fn eq(&self, other: &Self) -> bool {
        std::ptr::eq(self.tape, other.tape) && self.index == other.index
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop every recorded value. Handles from before the clear are invalid.
    pub fn clear(&mut self) {
        self.entries.get_mut().clear();
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut entries = self.entries.borrow_mut();
        entries.push(Entry { value, op });
        Var { tape: self, index: entries.len() - 1 }
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf { requires_grad })
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    fn check(&self, v: Var<'_>) {
        assert!(std::ptr::eq(self, v.tape), "variable recorded on a different tape");
    }

    /// Reverse sweep from a scalar objective.
    pub fn backward(&self, objective: Var<'_>) -> Result<Gradients> {
        self.check(objective);
        let entries = self.entries.borrow();
        if entries[objective.index].value.numel() != 1 {
            return Err(Error::Tape(format!(
                "objective must be a scalar, got shape {:?}",
                entries[objective.index].value.shape()
            )));
        }
        // whether a gradient-enabled leaf is reachable through each entry
        let mut needs = vec![false; entries.len()];
        for (i, e) in entries.iter().enumerate() {
            needs[i] = match e.op {
                Op::Leaf { requires_grad } => requires_grad,
                ref op => op.parents().iter().any(|&p| needs[p]),
            };
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; entries.len()];
        grads[objective.index] = Some(Tensor::full(entries[objective.index].value.shape(), 1.0));

        let accumulate = |slot: &mut Option<Tensor>, g: Tensor| -> Result<()> {
            *slot = Some(match slot.take() {
                Some(prev) => prev.add(&g)?,
                None => g,
            });
            Ok(())
        };

        for i in (0..=objective.index).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let e = &entries[i];
            match &e.op {
                Op::Leaf { .. } => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = &entries[*a].value;
                    let bv = &entries[*b].value;
                    let (m, _) = av.dims2()?;
                    let (k, n) = bv.dims2()?;
                    let g2 = g.reshape(&[m, n])?;
                    if needs[*a] {
                        let b2 = bv.reshape(&[k, n])?;
                        accumulate(&mut grads[*a], g2.matmul(&b2.transpose()?)?)?;
                    }
                    if needs[*b] {
                        accumulate(&mut grads[*b], av.transpose()?.matmul(&g2)?.reshape(bv.shape())?)?;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], g.clone())?;
                    accumulate(&mut grads[*b], g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*a], g.clone())?;
                    accumulate(&mut grads[*b], g.neg())?;
                }
                Op::Scale(a, c) => accumulate(&mut grads[*a], g.scale(*c))?,
                Op::Mul(a, b) => {
                    let ga = g.mul(&entries[*b].value)?;
                    let gb = g.mul(&entries[*a].value)?;
                    accumulate(&mut grads[*a], ga)?;
                    accumulate(&mut grads[*b], gb)?;
                }
                Op::ScaleColumns(m, v) => {
                    let mv = &entries[*m].value;
                    let vv = &entries[*v].value;
                    let gm = g.scale_columns(vv)?;
                    let (r, c) = mv.dims2()?;
                    let mut gv = vec![0.0; c];
                    for row in 0..r {
                        for (col, acc) in gv.iter_mut().enumerate() {
                            *acc += g.data()[row * c + col] * mv.data()[row * c + col];
                        }
                    }
                    accumulate(&mut grads[*m], gm)?;
                    accumulate(&mut grads[*v], Tensor::new(vv.shape().to_vec(), gv)?)?;
                }
                Op::PosPart(a) => {
                    let mask = entries[*a].value.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads[*a], g.mul(&mask)?)?;
                }
                Op::NegPart(a) => {
                    let mask = entries[*a].value.map(|x| if x > 0.0 { 0.0 } else { 1.0 });
                    accumulate(&mut grads[*a], g.mul(&mask)?)?;
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    accumulate(&mut grads[*a], Tensor::full(entries[*a].value.shape(), s))?;
                }
                Op::MinConst(a, c) => {
                    let c = *c;
                    let mask = entries[*a].value.map(|x| if x <= c { 1.0 } else { 0.0 });
                    accumulate(&mut grads[*a], g.mul(&mask)?)?;
                }
                Op::MaxConst(a, c) => {
                    let c = *c;
                    let mask = entries[*a].value.map(|x| if x > c { 1.0 } else { 0.0 });
                    accumulate(&mut grads[*a], g.mul(&mask)?)?;
                }
                Op::Select { mask, on_true, on_false } => {
                    let m = Tensor::new(g.shape().to_vec(), mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
                    let inv = m.map(|x| 1.0 - x);
                    accumulate(&mut grads[*on_true], g.mul(&m)?)?;
                    accumulate(&mut grads[*on_false], g.mul(&inv)?)?;
                }
                Op::Scatter { src, indices } => {
                    let data = indices.iter().map(|&j| g.data()[j]).collect();
                    let gs = Tensor::new(entries[*src].value.shape().to_vec(), data)?;
                    accumulate(&mut grads[*src], gs)?;
                }
                Op::Gather { src, indices } => {
                    let mut data = vec![0.0; entries[*src].value.numel()];
                    for (&j, &v) in indices.iter().zip(g.data()) {
                        data[j] += v;
                    }
                    accumulate(&mut grads[*src], Tensor::new(entries[*src].value.shape().to_vec(), data)?)?;
                }
            }
        }

        let requires: Vec<bool> =
            entries.iter().map(|e| matches!(e.op, Op::Leaf { requires_grad: true })).collect();
        let shapes: Vec<Vec<usize>> = entries.iter().map(|e| e.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                if !requires[i] {
                    None
                } else {
                    Some(g.unwrap_or_else(|| Tensor::zeros(&shapes[i])))
                }
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of gradient-enabled leaves. Leaves the objective does not depend
/// on hold zeros.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, leaf: Var<'_>) -> Option<&Tensor> {
        self.grads.get(leaf.index).and_then(Option::as_ref)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.entries.borrow(), |e| &e[self.index].value)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn binary(self, other: Var<'t>, f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>, op: Op) -> Result<Var<'t>> {
        self.tape.check(other);
        let value = {
            let entries = self.tape.entries.borrow();
            f(&entries[self.index].value, &entries[other.index].value)?
        };
        Ok(self.tape.push(value, op))
    }

    fn unary(self, f: impl FnOnce(&Tensor) -> Tensor, op: Op) -> Var<'t> {
        let value = f(&self.tape.entries.borrow()[self.index].value);
        self.tape.push(value, op)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, |a, b| a.matmul(b), Op::MatMul(self.index, rhs.index))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            rhs,
            |a, b| {
                same_shape(a, b, "add")?;
                a.add(b)
            },
            Op::Add(self.index, rhs.index),
        )
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            rhs,
            |a, b| {
                same_shape(a, b, "sub")?;
                a.sub(b)
            },
            Op::Sub(self.index, rhs.index),
        )
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            rhs,
            |a, b| {
                same_shape(a, b, "elementwise_mul")?;
                a.mul(b)
            },
            Op::Mul(self.index, rhs.index),
        )
    }

    pub fn scale_columns(self, scales: Var<'t>) -> Result<Var<'t>> {
        self.binary(scales, |m, v| m.scale_columns(v), Op::ScaleColumns(self.index, scales.index))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(|a| a.scale(c), Op::Scale(self.index, c))
    }

    pub fn pos_neg_split(self) -> (Var<'t>, Var<'t>) {
        let pos = self.unary(|a| a.pos_neg_split().0, Op::PosPart(self.index));
        let neg = self.unary(|a| a.pos_neg_split().1, Op::NegPart(self.index));
        (pos, neg)
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(|a| Tensor::scalar(a.sum()), Op::Sum(self.index))
    }

    pub fn min_with_const(self, c: f64) -> Var<'t> {
        self.unary(|a| a.map(|x| x.min(c)), Op::MinConst(self.index, c))
    }

    pub fn max_with_const(self, c: f64) -> Var<'t> {
        self.unary(|a| a.map(|x| x.max(c)), Op::MaxConst(self.index, c))
    }

    /// `mask[i] ? on_true[i] : on_false[i]`, with `self` as `on_true`.
    pub fn select_by_mask(self, mask: &[bool], on_false: Var<'t>) -> Result<Var<'t>> {
        let owned = mask.to_vec();
        self.binary(
            on_false,
            |a, b| {
                same_shape(a, b, "select_by_mask")?;
                if mask.len() != a.numel() {
                    return Err(Error::shape(format!("mask of {} for {} values", mask.len(), a.numel())));
                }
                let data = mask
                    .iter()
                    .zip(a.data().iter().zip(b.data()))
                    .map(|(&m, (&x, &y))| if m { x } else { y })
                    .collect();
                Tensor::new(a.shape().to_vec(), data)
            },
            Op::Select { mask: owned, on_true: self.index, on_false: on_false.index },
        )
    }

    /// Copy of `base` with `base[indices[k]] = self[k]`. Only `self` is
    /// differentiated; `base` is a constant.
    pub fn scatter_into(self, indices: &[usize], base: &Tensor) -> Result<Var<'t>> {
        let value = {
            let entries = self.tape.entries.borrow();
            let src = &entries[self.index].value;
            if src.numel() != indices.len() {
                return Err(Error::shape(format!("{} values for {} indices", src.numel(), indices.len())));
            }
            let mut data = base.data().to_vec();
            for (&j, &v) in indices.iter().zip(src.data()) {
                *data.get_mut(j).ok_or_else(|| Error::shape(format!("scatter index {j} out of range")))? = v;
            }
            Tensor::new(base.shape().to_vec(), data)?
        };
        Ok(self.tape.push(value, Op::Scatter { src: self.index, indices: indices.to_vec() }))
    }

    /// `[self[indices[0]], self[indices[1]], ...]` as a vector.
    pub fn gather(self, indices: &[usize]) -> Result<Var<'t>> {
        let value = {
            let entries = self.tape.entries.borrow();
            let src = &entries[self.index].value;
            let data = indices
                .iter()
                .map(|&j| src.data().get(j).copied().ok_or_else(|| Error::shape(format!("gather index {j} out of range"))))
                .collect::<Result<Vec<_>>>()?;
            Tensor::new(vec![indices.len()], data)?
        };
        Ok(self.tape.push(value, Op::Gather { src: self.index, indices: indices.to_vec() }))
    }
}

/// Compare tape gradients of a scalar function against central finite
/// differences. Returns the largest `|fd - tape| / (|tape| + 1e-12)`.
pub fn finite_difference_check<F>(f: F, params: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if eps <= 0.0 {
        return Err(Error::Tape(format!("finite-difference step must be positive, got {eps}")));
    }
    let tape = Tape::new();
    let p = tape.param(params.clone());
    let out = f(&tape, p)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get(p).cloned().unwrap_or_else(|| Tensor::zeros(params.shape()));

    let eval = |x: Tensor| -> Result<f64> {
        let t = Tape::new();
        let v = t.constant(x);
        let o = f(&t, v)?;
        let value = o.value();
        if value.numel() != 1 {
            return Err(Error::Tape("objective must be a scalar".into()));
        }
        Ok(value.data()[0])
    };

    let mut worst: f64 = 0.0;
    for i in 0..params.numel() {
        let mut plus = params.data().to_vec();
        let mut minus = params.data().to_vec();
        plus[i] += eps;
        minus[i] -= eps;
        let fd = (eval(Tensor::new(params.shape().to_vec(), plus)?)?
            - eval(Tensor::new(params.shape().to_vec(), minus)?)?)
            / (2.0 * eps);
        let g = analytic.data()[i];
        worst = worst.max((fd - g).abs() / (g.abs() + 1e-12));
    }
    Ok(worst)
}
