//! Dense row-major `f64` tensors and interval boxes.
//!
//! Reductions always run in ascending index order so that results are
//! bit-reproducible across runs.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        if numel_of(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel_of(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// 1-D tensor. Panics on an empty vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty tensor");
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Build a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flatten().copied().collect();
        Tensor { shape: vec![rows.len(), cols], data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; numel_of(shape)] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor; rank-1 tensors are column vectors.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Ok((*n, 1)),
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(format!("expected a matrix or vector, got shape {s:?}"))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} values) to {shape:?}",
                self.shape,
                self.numel()
            )));
        }
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Elementwise combination with exact-match or scalar broadcasting.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let shape = elementwise_shape(&self.shape, &other.shape)?;
        let n = numel_of(&shape);
        let pick = |t: &Tensor, i: usize| if t.numel() == 1 { t.data[0] } else { t.data[i] };
        let data = (0..n).map(|i| f(pick(self, i), pick(other, i))).collect();
        Ok(Tensor { shape, data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| x * c)
    }

    pub fn neg(&self) -> Self {
        self.map(|x| -x)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &x| acc + x)
    }

    /// Matrix product. Rank-1 operands are treated as column vectors on the
    /// right; a rank-1 right operand yields a rank-1 result.
    ///
    /// Zero entries of `self` contribute nothing, so `0 * inf` is taken as 0.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Self> {
        let (m, k) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            s => return Err(Error::shape(format!("matmul lhs must be a matrix, got {s:?}"))),
        };
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, rhs.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            let acc = &mut out[i * n..(i + 1) * n];
            for (p, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let rrow = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in acc.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        let shape = if rhs.rank() == 1 { vec![m] } else { vec![m, n] };
        Ok(Tensor { shape, data: out })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            s => return Err(Error::shape(format!("transpose needs a matrix, got {s:?}"))),
        };
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor { shape: vec![c, r], data })
    }

    /// Multiply column `j` of a matrix by `v[j]`.
    pub fn scale_columns(&self, v: &Tensor) -> Result<Self> {
        let (r, c) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            s => return Err(Error::shape(format!("scale_columns needs a matrix, got {s:?}"))),
        };
        if v.numel() != c {
            return Err(Error::shape(format!("{} column scales for {c} columns", v.numel())));
        }
        let mut data = self.data.clone();
        for i in 0..r {
            for (x, &s) in data[i * c..(i + 1) * c].iter_mut().zip(&v.data) {
                *x *= s;
            }
        }
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// `(max(M, 0), min(M, 0))`; the two parts sum back to `M` exactly.
    pub fn pos_neg_split(&self) -> (Tensor, Tensor) {
        (self.map(|x| if x > 0.0 { x } else { 0.0 }), self.map(|x| if x < 0.0 { x } else { 0.0 }))
    }
}

/// Result shape of an elementwise op. Only identical element counts (with
/// numpy-compatible shapes) and scalar operands are supported.
pub fn elementwise_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let (na, nb) = (numel_of(a), numel_of(b));
    if nb == 1 && b.len() <= a.len() {
        return Ok(a.to_vec());
    }
    if na == 1 && a.len() <= b.len() {
        return Ok(b.to_vec());
    }
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(format!("shapes {a:?} and {b:?} do not broadcast"))),
        };
    }
    if numel_of(&out) != na || na != nb {
        return Err(Error::shape(format!(
            "broadcast of {a:?} and {b:?} is not an exact match or scalar"
        )));
    }
    Ok(out)
}

/// An elementwise box `lower <= x <= upper`; either side may be infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundedTensor {
    lower: Tensor,
    upper: Tensor,
}

impl BoundedTensor {
    pub fn new(lower: Tensor, upper: Tensor) -> Result<Self> {
        if lower.shape != upper.shape {
            return Err(Error::shape(format!(
                "lower {:?} vs upper {:?}",
                lower.shape, upper.shape
            )));
        }
        for (index, (&l, &u)) in lower.data.iter().zip(&upper.data).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::InvalidBounds { index, lower: l, upper: u });
            }
        }
        Ok(BoundedTensor { lower, upper })
    }

    /// Degenerate box holding a single point.
    pub fn point(x: Tensor) -> Self {
        BoundedTensor { lower: x.clone(), upper: x }
    }

    pub(crate) fn new_unchecked(lower: Tensor, upper: Tensor) -> Self {
        debug_assert_eq!(lower.shape, upper.shape);
        BoundedTensor { lower, upper }
    }

    pub fn lower(&self) -> &Tensor {
        &self.lower
    }

    pub fn upper(&self) -> &Tensor {
        &self.upper
    }

    pub fn shape(&self) -> &[usize] {
        &self.lower.shape
    }

    pub fn numel(&self) -> usize {
        self.lower.numel()
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        (self.lower, self.upper)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.data.iter().zip(&self.upper.data).map(|(l, u)| u - l).collect()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Ok(BoundedTensor { lower: self.lower.reshape(shape)?, upper: self.upper.reshape(shape)? })
    }

    /// Elementwise intersection. Both boxes must be sound for the same
    /// quantity, which keeps the result non-empty up to rounding; if rounding
    /// ever crosses the bounds the looser side wins.
    pub fn intersect(&self, other: &BoundedTensor) -> Result<Self> {
        let lower = self.lower.zip_map(&other.lower, f64::max)?;
        let upper = self.upper.zip_map(&other.upper, f64::min)?;
        let (mut lower, mut upper) = (lower, upper);
        for i in 0..lower.data.len() {
            if lower.data[i] > upper.data[i] {
                lower.data[i] = self.lower.data[i].min(other.lower.data[i]);
                upper.data[i] = self.upper.data[i].max(other.upper.data[i]);
            }
        }
        Ok(BoundedTensor { lower, upper })
    }

    pub fn contains(&self, x: &Tensor, rel_tol: f64) -> bool {
        x.numel() == self.numel()
            && x.data.iter().zip(&self.lower.data).zip(&self.upper.data).all(|((&v, &l), &u)| {
                let tol = rel_tol * v.abs().max(1.0);
                v >= l - tol && v <= u + tol
            })
    }
}
