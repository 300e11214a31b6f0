use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vnnlib::OutputConstraintSet;

/// Dense rows `C` (`s × m`) and right-hand sides `t` of one branch.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecMatrix {
    pub rows: Tensor,
    pub rhs: Vec<f64>,
    pub branch: usize,
}

impl SpecMatrix {
    pub fn identity(m: usize) -> Self {
        SpecMatrix { rows: Tensor::identity(m), rhs: vec![0.0; m], branch: 0 }
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }
}

/// One spec matrix per branch; without constraints every output is bounded
/// on its own.
pub fn preprocess_c(spec: Option<&OutputConstraintSet>, m: usize) -> Result<Vec<SpecMatrix>> {
    let Some(spec) = spec else { return Ok(vec![SpecMatrix::identity(m)]) };
    spec.branches()
        .iter()
        .enumerate()
        .map(|(branch, rows)| {
            if rows.is_empty() {
                return Err(Error::Config(format!("branch {branch} has no constraint rows")));
            }
            let mut data = vec![0.0; rows.len() * m];
            for (r, row) in rows.iter().enumerate() {
                for t in &row.terms {
                    if t.index >= m {
                        return Err(Error::shape(format!("Y_{} out of range for {m} outputs", t.index)));
                    }
                    data[r * m + t.index] += t.coeff;
                }
            }
            Ok(SpecMatrix {
                rows: Tensor::matrix(rows.len(), m, data)?,
                rhs: rows.iter().map(|r| r.rhs).collect(),
                branch,
            })
        })
        .collect()
}
