//! Linear relaxation of ReLU over a pre-activation interval.

use crate::error::{Error, Result};
use crate::tensor::{BoundedTensor, Tensor};

/// Guard on the chord denominator `u - l`.
const CHORD_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Active,
    Inactive,
    Unstable,
}

/// Relaxation of one neuron: `lower_slope·z <= relu(z) <= upper_slope·z + upper_intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReluNeuron {
    pub stability: Stability,
    pub lower_slope: f64,
    pub upper_slope: f64,
    pub upper_intercept: f64,
}

/// Default lower slope for an unstable neuron: 1 when the positive side of
/// the interval is at least as wide as the negative side, else 0.
pub fn default_lower_slope(l: f64, u: f64) -> f64 {
    if u >= -l {
        1.0
    } else {
        0.0
    }
}

pub fn relu_relaxation(l: f64, u: f64, lower_slope_override: Option<f64>) -> Result<ReluNeuron> {
    if l.is_nan() || u.is_nan() || l > u {
        return Err(Error::InvalidBounds { index: 0, lower: l, upper: u });
    }
    if u <= 0.0 {
        return Ok(ReluNeuron {
            stability: Stability::Inactive,
            lower_slope: 0.0,
            upper_slope: 0.0,
            upper_intercept: 0.0,
        });
    }
    if l >= 0.0 {
        return Ok(ReluNeuron { stability: Stability::Active, lower_slope: 1.0, upper_slope: 1.0, upper_intercept: 0.0 });
    }
    let (upper_slope, upper_intercept) = match (l.is_finite(), u.is_finite()) {
        (true, true) => {
            let d = (u - l).max(CHORD_EPS);
            (u / d, -u * l / d)
        }
        // z <= u bounds relu by the constant u
        (false, true) => (0.0, u),
        // relu(z) <= z - l for z >= l
        (true, false) => (1.0, -l),
        (false, false) => (1.0, f64::INFINITY),
    };
    let lower_slope = lower_slope_override.unwrap_or_else(|| default_lower_slope(l, u));
    Ok(ReluNeuron { stability: Stability::Unstable, lower_slope, upper_slope, upper_intercept })
}

/// Per-neuron relaxation of a ReLU layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluRelaxation {
    pub neurons: Vec<ReluNeuron>,
}

impl ReluRelaxation {
    pub fn from_bounds(pre: &BoundedTensor) -> Result<Self> {
        let neurons = pre
            .lower()
            .data()
            .iter()
            .zip(pre.upper().data())
            .enumerate()
            .map(|(i, (&l, &u))| {
                relu_relaxation(l, u, None).map_err(|_| Error::InvalidBounds { index: i, lower: l, upper: u })
            })
            .collect::<Result<_>>()?;
        Ok(ReluRelaxation { neurons })
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn unstable_indices(&self) -> Vec<usize> {
        self.neurons.iter().enumerate().filter(|(_, n)| n.stability == Stability::Unstable).map(|(i, _)| i).collect()
    }

    pub fn lower_slopes(&self) -> Tensor {
        Tensor::from_vec(self.neurons.iter().map(|n| n.lower_slope).collect())
    }

    pub fn upper_slopes(&self) -> Tensor {
        Tensor::from_vec(self.neurons.iter().map(|n| n.upper_slope).collect())
    }

    pub fn upper_intercepts(&self) -> Tensor {
        Tensor::from_vec(self.neurons.iter().map(|n| n.upper_intercept).collect())
    }
}

pub fn count_unstable(pre: &BoundedTensor) -> usize {
    pre.lower().data().iter().zip(pre.upper().data()).filter(|(&l, &u)| l < 0.0 && u > 0.0).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn unstable_chord() {
        let n = relu_relaxation(-1.0, 1.0, None).unwrap();
        assert_eq!(n.stability, Stability::Unstable);
        assert_eq!((n.upper_slope, n.upper_intercept), (0.5, 0.5));
        assert_eq!(n.lower_slope, 1.0);
        let n = relu_relaxation(-3.0, 1.0, None).unwrap();
        assert_eq!(n.lower_slope, 0.0);
        let n = relu_relaxation(-1.0, 1.0, Some(0.25)).unwrap();
        assert_eq!(n.lower_slope, 0.25);
    }

    #[test]
    fn stable_cases() {
        let n = relu_relaxation(0.5, 2.0, None).unwrap();
        assert_eq!(n, ReluNeuron { stability: Stability::Active, lower_slope: 1.0, upper_slope: 1.0, upper_intercept: 0.0 });
        let n = relu_relaxation(-2.0, -0.1, None).unwrap();
        assert_eq!(
            n,
            ReluNeuron { stability: Stability::Inactive, lower_slope: 0.0, upper_slope: 0.0, upper_intercept: 0.0 }
        );
        assert_eq!(relu_relaxation(0.0, 0.0, None).unwrap().stability, Stability::Inactive);
        assert_eq!(relu_relaxation(0.0, 1.0, None).unwrap().stability, Stability::Active);
        assert_eq!(relu_relaxation(-1.0, 0.0, None).unwrap().stability, Stability::Inactive);
    }

    #[test]
    fn invalid_interval() {
        assert!(relu_relaxation(1.0, 0.0, None).is_err());
    }

    #[test]
    fn infinite_ends_stay_sound() {
        let n = relu_relaxation(f64::NEG_INFINITY, 2.0, None).unwrap();
        for z in [-1e9_f64, -1.0, 0.0, 1.0, 2.0] {
            assert!(z.max(0.0) <= n.upper_slope * z + n.upper_intercept);
        }
        let n = relu_relaxation(-2.0, f64::INFINITY, None).unwrap();
        for z in [-2.0_f64, 0.0, 1.0, 1e9] {
            assert!(z.max(0.0) <= n.upper_slope * z + n.upper_intercept);
        }
    }

    #[test]
    fn relaxation_validity_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let a: f64 = rng.gen_range(-10.0..10.0);
            let b: f64 = rng.gen_range(-10.0..10.0);
            let (l, u) = if a <= b { (a, b) } else { (b, a) };
            let alpha: f64 = rng.gen_range(0.0..=1.0);
            let z = l + rng.gen::<f64>() * (u - l);
            let n = relu_relaxation(l, u, Some(alpha)).unwrap();
            let r = z.max(0.0);
            let tol = 1e-12 * (1.0 + z.abs() + u.abs() + l.abs());
            assert!(n.lower_slope * z <= r + tol, "lower l={l} u={u} z={z}");
            assert!(r <= n.upper_slope * z + n.upper_intercept + tol, "upper l={l} u={u} z={z}");
        }
    }
}
