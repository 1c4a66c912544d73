use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::lattice::{CubeId, DyadicLattice};

/// A leaf-constant function, stored as one value per leaf in lattice order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepFunction {
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn constant(lattice: &DyadicLattice, c: f64) -> Self {
        Self::new(vec![c; lattice.num_leaves()])
    }

    /// `1_Q`.
    pub fn indicator(lattice: &DyadicLattice, cube: CubeId) -> Self {
        let mut f = Self::zeros(lattice.num_leaves());
        for &pos in lattice.leaves(cube) {
            f.values[pos] = 1.0;
        }
        f
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self::new((0..len).map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, pos: usize) -> f64 {
        self.values[pos]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// Pointwise product.
    pub fn product(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a * b)
    }

    /// `self += c·other`.
    pub fn add_scaled(&mut self, c: f64, other: &Self) {
        assert_eq!(self.len(), other.len(), "step functions on different lattices");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// Restriction `1_Q · f`.
    pub fn restrict(&self, lattice: &DyadicLattice, cube: CubeId) -> Self {
        let mut out = Self::zeros(self.len());
        for &pos in lattice.leaves(cube) {
            out.values[pos] = self.values[pos];
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.len(), other.len(), "step functions on different lattices");
        Self::new(self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }
}

impl Add for &StepFunction {
    type Output = StepFunction;
    fn add(self, rhs: &StepFunction) -> StepFunction {
        self.zip(rhs, |a, b| a + b)
    }
}

impl Sub for &StepFunction {
    type Output = StepFunction;
    fn sub(self, rhs: &StepFunction) -> StepFunction {
        self.zip(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &StepFunction {
    type Output = StepFunction;
    fn mul(self, rhs: f64) -> StepFunction {
        self.scale(rhs)
    }
}

impl Neg for &StepFunction {
    type Output = StepFunction;
    fn neg(self) -> StepFunction {
        self.scale(-1.0)
    }
}
