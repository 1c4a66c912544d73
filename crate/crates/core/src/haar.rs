//! Weighted Haar systems: orthonormal bases of the mean-zero functions that
//! are constant on the children of a cube.

use crate::function::StepFunction;
use crate::lattice::CubeId;
use crate::martingale::inner;
use crate::measure::Measure;

/// The Haar functions `h_{Q,1}, …, h_{Q,m(Q)}` of one cube.
#[derive(Clone, Debug)]
pub struct HaarSystem {
    pub cube: CubeId,
    pub functions: Vec<StepFunction>,
}

impl HaarSystem {
    /// `m(Q)`.
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// `⟨f, h_{Q,k}⟩_m` for every `k`.
    pub fn coefficients(&self, f: &StepFunction, m: &Measure) -> Vec<f64> {
        self.functions.iter().map(|h| inner(f, h, m)).collect()
    }

    /// `Σ_k ⟨f, h_{Q,k}⟩_m h_{Q,k}`, which equals `Δ_Q f` on positive-mass leaves.
    pub fn project(&self, f: &StepFunction, m: &Measure) -> StepFunction {
        let mut out = StepFunction::zeros(f.len());
        for h in &self.functions {
            out.add_scaled(inner(f, h, m), h);
        }
        out
    }
}

/// Gram–Schmidt over the child indicators of `Q` in lexicographic order,
/// after the constant function, skipping zero-mass children.
///
/// Leaves, cubes of zero mass and cubes with at most one child of positive
/// mass get the empty system.
pub fn haar_system(cube: CubeId, m: &Measure) -> HaarSystem {
    let lat = m.lattice();
    let massive: Vec<(CubeId, f64)> = lat
        .children(cube)
        .iter()
        .map(|&c| (c, m.mass(c)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    if massive.len() <= 1 {
        return HaarSystem {
            cube,
            functions: Vec::new(),
        };
    }

    let k = massive.len();
    let weights: Vec<f64> = massive.iter().map(|&(_, w)| w).collect();
    let dot = |a: &[f64], b: &[f64]| -> f64 { (0..k).map(|i| a[i] * b[i] * weights[i]).sum() };

    let total: f64 = weights.iter().sum();
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / total.sqrt(); k]];
    for j in 0..k - 1 {
        let mut v = vec![0.0; k];
        v[j] = 1.0;
        // two passes of modified Gram–Schmidt keep orthogonality at round-off level
        for _ in 0..2 {
            for u in &basis {
                let c = dot(&v, u);
                for i in 0..k {
                    v[i] -= c * u[i];
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        for x in &mut v {
            *x /= norm;
        }
        basis.push(v);
    }

    let functions = basis[1..]
        .iter()
        .map(|coef| {
            let mut h = StepFunction::zeros(lat.num_leaves());
            for (i, &(child, _)) in massive.iter().enumerate() {
                for &pos in lat.leaves(child) {
                    h.values_mut()[pos] = coef[i];
                }
            }
            h
        })
        .collect();
    HaarSystem { cube, functions }
}

/// Haar systems of every cube of the lattice for one measure.
#[derive(Clone, Debug)]
pub struct HaarBasis {
    systems: Vec<HaarSystem>,
}

impl HaarBasis {
    pub fn new(m: &Measure) -> Self {
        Self {
            systems: m.lattice().ids().map(|id| haar_system(id, m)).collect(),
        }
    }

    pub fn system(&self, cube: CubeId) -> &HaarSystem {
        &self.systems[cube.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &HaarSystem> {
        self.systems.iter()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::lattice::DyadicLattice;
    use crate::martingale::{integral, martingale_difference};

    #[test]
    fn lebesgue_unit_interval() {
        let lat = Arc::new(DyadicLattice::new(1, 1).unwrap());
        let m = Measure::lebesgue(lat.clone());
        let sys = haar_system(lat.root(), &m);
        assert_eq!(sys.len(), 1);
        let h = &sys.functions[0];
        assert!((h.value(0) - 1.0).abs() < 1e-15);
        assert!((h.value(1) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_massive_child_gives_empty_system() {
        let lat = Arc::new(DyadicLattice::new(1, 1).unwrap());
        let m = Measure::new(lat.clone(), vec![0.0, 2.0]).unwrap();
        assert!(haar_system(lat.root(), &m).is_empty());
        assert!(haar_system(lat.leaf_cube(1), &m).is_empty());
    }

    #[test]
    fn unequal_masses() {
        // a + 3b = 0 and a² + 3b² = 1 with a > 0: a = √3/2, b = −1/(2√3)
        let lat = Arc::new(DyadicLattice::new(1, 1).unwrap());
        let m = Measure::new(lat.clone(), vec![1.0, 3.0]).unwrap();
        let h = &haar_system(lat.root(), &m).functions[0];
        assert!((h.value(0) - 3f64.sqrt() / 2.0).abs() < 1e-14);
        assert!((h.value(1) + 1.0 / (2.0 * 3f64.sqrt())).abs() < 1e-14);
        assert!(integral(h, lat.root(), &m).abs() < 1e-14);
        assert!((inner(h, h, &m) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn orthonormal_in_two_dimensions_with_a_dead_child() {
        let lat = Arc::new(DyadicLattice::new(2, 2).unwrap());
        let mut masses: Vec<f64> = (0..16).map(|i| 0.05 + (i as f64 * 0.37).sin().abs()).collect();
        // kill the child [1,0] of the root: leaves (2,0),(2,1),(3,0),(3,1)
        for pos in [8, 9, 12, 13] {
            masses[pos] = 0.0;
        }
        let m = Measure::new(lat.clone(), masses).unwrap();
        let sys = haar_system(lat.root(), &m);
        assert_eq!(sys.len(), 2);
        for (i, a) in sys.functions.iter().enumerate() {
            assert!(integral(a, lat.root(), &m).abs() < 1e-12);
            for (j, b) in sys.functions.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((inner(a, b, &m) - expect).abs() < 1e-12);
            }
        }
        let f = StepFunction::from_fn(16, |i| (i as f64).sqrt() - 1.7);
        let d = martingale_difference(&f, lat.root(), &m).unwrap();
        let p = sys.project(&f, &m);
        for pos in m.support() {
            assert!((d.value(pos) - p.value(pos)).abs() < 1e-12);
        }
    }
}
