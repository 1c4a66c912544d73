use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{CubeId, DyadicLattice};

/// A measure on the model: nonnegative masses on the leaf cells.
///
/// Cube masses are accumulated bottom-up from the children, so
/// `m(Q) = Σ_{Q' ∈ ch(Q)} m(Q')` holds exactly in floating point.
#[derive(Clone, Debug)]
pub struct Measure {
    lattice: Arc<DyadicLattice>,
    leaf_mass: Vec<f64>,
    cube_mass: Vec<f64>,
}

impl PartialEq for Measure {
    fn eq(&self, other: &Self) -> bool {
        self.lattice == other.lattice && self.leaf_mass == other.leaf_mass
    }
}

impl Measure {
    pub fn new(lattice: Arc<DyadicLattice>, leaf_mass: Vec<f64>) -> Result<Self> {
        let expected = lattice.num_leaves();
        if leaf_mass.len() != expected {
            return Err(Error::Length {
                expected,
                got: leaf_mass.len(),
            });
        }
        for (index, &m) in leaf_mass.iter().enumerate() {
            if !m.is_finite() {
                return Err(Error::InvalidLeaf {
                    index,
                    reason: format!("mass {m} is not finite"),
                });
            }
            if m < 0.0 {
                return Err(Error::InvalidLeaf {
                    index,
                    reason: format!("negative mass {m}"),
                });
            }
        }
        let mut cube_mass = vec![0.0; lattice.num_cubes()];
        for pos in 0..expected {
            cube_mass[lattice.leaf_cube(pos).0] = leaf_mass[pos];
        }
        for level in (0..lattice.depth()).rev() {
            for id in lattice.level_ids(level) {
                cube_mass[id.0] = lattice.children(id).iter().map(|c| cube_mass[c.0]).sum();
            }
        }
        Ok(Self {
            lattice,
            leaf_mass,
            cube_mass,
        })
    }

    /// Lebesgue measure restricted to `[0,1)^n`: every leaf has mass `2^{-n·depth}`.
    pub fn lebesgue(lattice: Arc<DyadicLattice>) -> Self {
        let l = lattice.num_leaves();
        let w = 1.0 / l as f64;
        Self::new(lattice, vec![w; l]).expect("lebesgue masses are valid")
    }

    pub fn lattice(&self) -> &Arc<DyadicLattice> {
        &self.lattice
    }

    pub fn leaf_masses(&self) -> &[f64] {
        &self.leaf_mass
    }

    pub fn leaf(&self, pos: usize) -> f64 {
        self.leaf_mass[pos]
    }

    pub fn mass(&self, id: CubeId) -> f64 {
        self.cube_mass[id.0]
    }

    pub fn total(&self) -> f64 {
        self.cube_mass[0]
    }

    /// Leaf positions with strictly positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.leaf_mass.len()).filter(|&i| self.leaf_mass[i] > 0.0).collect()
    }

    pub(crate) fn same_lattice(&self, other: &Measure) -> Result<()> {
        if self.lattice == other.lattice {
            Ok(())
        } else {
            Err(Error::LatticeMismatch)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additivity_is_exact() {
        let lat = Arc::new(DyadicLattice::new(2, 3).unwrap());
        let masses: Vec<f64> = (0..lat.num_leaves())
            .map(|i| 0.1 * (i as f64 + 0.3).sin().abs())
            .collect();
        let m = Measure::new(lat.clone(), masses).unwrap();
        for id in lat.ids() {
            if lat.is_leaf(id) {
                continue;
            }
            let s: f64 = lat.children(id).iter().map(|&c| m.mass(c)).sum();
            assert_eq!(s, m.mass(id));
        }
    }

    #[test]
    fn rejects_negative_mass_with_leaf_index() {
        let lat = Arc::new(DyadicLattice::new(1, 2).unwrap());
        let err = Measure::new(lat, vec![1.0, 0.5, -0.1, 0.0]).unwrap_err();
        match err {
            Error::InvalidLeaf { index, .. } => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lebesgue_is_probability() {
        let lat = Arc::new(DyadicLattice::new(2, 2).unwrap());
        let m = Measure::lebesgue(lat.clone());
        assert!((m.total() - 1.0).abs() < 1e-15);
        let child = lat.children(lat.root())[0];
        assert!((m.mass(child) - 0.25).abs() < 1e-15);
    }
}
