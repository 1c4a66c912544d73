//! Cube families, principal cubes and Carleson-type constants.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::{Exponent, ExponentPair};
use crate::function::StepFunction;
use crate::lattice::{Cube, CubeId, DyadicLattice};
use crate::martingale::cube_averages;
use crate::measure::Measure;
use crate::norms::{norm_lplq_ascent, Budget, NormEstimate};
use crate::operators::GeneralOperatorSpec;

/// A finite, deduplicated set of cubes of one lattice.
#[derive(Clone, Debug)]
pub struct CubeFamily {
    lattice: Arc<DyadicLattice>,
    cubes: BTreeSet<CubeId>,
}

impl CubeFamily {
    pub fn new(lattice: Arc<DyadicLattice>, cubes: impl IntoIterator<Item = CubeId>) -> Self {
        Self {
            lattice,
            cubes: cubes.into_iter().collect(),
        }
    }

    /// Every cube of the lattice.
    pub fn full(lattice: Arc<DyadicLattice>) -> Self {
        let ids: Vec<_> = lattice.ids().collect();
        Self::new(lattice, ids)
    }

    pub fn from_cubes(lattice: Arc<DyadicLattice>, cubes: &[Cube]) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for (i, c) in cubes.iter().enumerate() {
            let id = lattice
                .id_of(c)
                .ok_or_else(|| Error::schema(format!("cubes[{i}]"), format!("{c} is not in the lattice")))?;
            ids.insert(id);
        }
        Ok(Self { lattice, cubes: ids })
    }

    /// `[{level, index}]` records in cube order.
    pub fn to_cubes(&self) -> Vec<Cube> {
        self.cubes.iter().map(|&c| self.lattice.cube(c).clone()).collect()
    }

    pub fn lattice(&self) -> &Arc<DyadicLattice> {
        &self.lattice
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn contains(&self, id: CubeId) -> bool {
        self.cubes.contains(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = CubeId> + '_ {
        self.cubes.iter().copied()
    }

    /// Cubes not strictly contained in another member.
    pub fn maximal(&self) -> Vec<CubeId> {
        self.iter()
            .filter(|&q| {
                let mut cur = self.lattice.parent(q);
                while let Some(a) = cur {
                    if self.cubes.contains(&a) {
                        return false;
                    }
                    cur = self.lattice.parent(a);
                }
                true
            })
            .collect()
    }

    /// Smallest member containing `q` (possibly `q` itself).
    fn smallest_containing(&self, q: CubeId) -> Option<CubeId> {
        let mut cur = Some(q);
        while let Some(c) = cur {
            if self.cubes.contains(&c) {
                return Some(c);
            }
            cur = self.lattice.parent(c);
        }
        None
    }
}

/// The stopping family `ℱ` with its tree structure.
#[derive(Clone, Debug)]
pub struct StoppingTree {
    lattice: Arc<DyadicLattice>,
    family: CubeFamily,
    generations: Vec<Vec<CubeId>>,
    children: BTreeMap<CubeId, Vec<CubeId>>,
    parent: BTreeMap<CubeId, CubeId>,
    projection: BTreeMap<CubeId, CubeId>,
    exceptional: BTreeMap<CubeId, Vec<usize>>,
}

#[derive(Serialize)]
struct TreeNodeRecord {
    cube: Cube,
    generation: usize,
    parent: Option<Cube>,
    children: Vec<Cube>,
    exceptional_leaves: Vec<usize>,
}

impl StoppingTree {
    /// Builds the tree structure of an arbitrary family: the children of `F`
    /// are the maximal members strictly inside `F`. The projection map covers
    /// the members of `scope`.
    fn assemble(family: CubeFamily, scope: &CubeFamily) -> Self {
        let lattice = family.lattice.clone();
        let mut parent = BTreeMap::new();
        let mut children: BTreeMap<CubeId, Vec<CubeId>> = family.iter().map(|f| (f, Vec::new())).collect();
        for f in family.iter() {
            if let Some(p) = lattice.parent(f).and_then(|up| family.smallest_containing(up)) {
                parent.insert(f, p);
                children.entry(p).or_default().push(f);
            }
        }
        let mut generations: Vec<Vec<CubeId>> = Vec::new();
        let mut layer = family.maximal();
        while !layer.is_empty() {
            let next: Vec<CubeId> = layer.iter().flat_map(|f| children[f].iter().copied()).collect();
            generations.push(layer);
            layer = next;
        }
        let exceptional = family
            .iter()
            .map(|f| {
                let covered: BTreeSet<usize> = children[&f]
                    .iter()
                    .flat_map(|c| lattice.leaves(*c).iter().copied())
                    .collect();
                let own = lattice
                    .leaves(f)
                    .iter()
                    .copied()
                    .filter(|p| !covered.contains(p))
                    .collect();
                (f, own)
            })
            .collect();
        let projection = scope
            .iter()
            .filter_map(|q| family.smallest_containing(q).map(|f| (q, f)))
            .collect();
        Self {
            lattice,
            family,
            generations,
            children,
            parent,
            projection,
            exceptional,
        }
    }

    /// A tree from a hand-picked family, used to inspect families that did
    /// not come out of the stopping construction.
    pub fn from_family(family: CubeFamily) -> Self {
        let scope = family.clone();
        Self::assemble(family, &scope)
    }

    pub fn family(&self) -> &CubeFamily {
        &self.family
    }

    pub fn members(&self) -> impl Iterator<Item = CubeId> + '_ {
        self.family.iter()
    }

    /// `ℱ_0, ℱ_1, …`.
    pub fn generations(&self) -> &[Vec<CubeId>] {
        &self.generations
    }

    /// `ch_ℱ(F)`.
    pub fn children(&self, f: CubeId) -> &[CubeId] {
        self.children.get(&f).map_or(&[], Vec::as_slice)
    }

    /// `π_ℱ Q` for a cube of the underlying collection.
    pub fn projection(&self, q: CubeId) -> Option<CubeId> {
        self.projection.get(&q).copied()
    }

    /// `π¹_ℱ Q`: the smallest member strictly containing `Q`.
    pub fn strict_projection(&self, q: CubeId) -> Option<CubeId> {
        self.lattice
            .parent(q)
            .and_then(|up| self.family.smallest_containing(up))
    }

    /// Parent of a member in the stopping tree.
    pub fn parent(&self, f: CubeId) -> Option<CubeId> {
        self.parent.get(&f).copied()
    }

    /// `E(F) = F ∖ ∪ ch_ℱ(F)` as leaf positions.
    pub fn exceptional_set(&self, f: CubeId) -> &[usize] {
        self.exceptional.get(&f).map_or(&[], Vec::as_slice)
    }

    /// Parent/child adjacency in JSON form.
    pub fn to_json(&self) -> serde_json::Value {
        let gen_of: BTreeMap<CubeId, usize> = self
            .generations
            .iter()
            .enumerate()
            .flat_map(|(g, layer)| layer.iter().map(move |&f| (f, g)))
            .collect();
        let nodes: Vec<TreeNodeRecord> = self
            .members()
            .map(|f| TreeNodeRecord {
                cube: self.lattice.cube(f).clone(),
                generation: gen_of[&f],
                parent: self.parent(f).map(|p| self.lattice.cube(p).clone()),
                children: self.children(f).iter().map(|&c| self.lattice.cube(c).clone()).collect(),
                exceptional_leaves: self.exceptional_set(f).to_vec(),
            })
            .collect();
        serde_json::json!({ "v": 1, "nodes": nodes })
    }
}

/// Principal cubes of `f` inside `D0`: start from the maximal cubes and stop
/// at the maximal `Q' ⊂ F` of `D0` with `⟨|f|⟩_{Q'} > 2⟨|f|⟩_F`.
pub fn principal_cubes(f: &StepFunction, d0: &CubeFamily, m: &Measure) -> StoppingTree {
    let lat = d0.lattice.clone();
    let avg = cube_averages(&f.abs(), m);
    let mut members: BTreeSet<CubeId> = BTreeSet::new();
    let mut layer = d0.maximal();
    while !layer.is_empty() {
        let mut next = Vec::new();
        for &top in &layer {
            members.insert(top);
            let threshold = 2.0 * avg[top.0];
            let candidates: BTreeSet<CubeId> = d0
                .iter()
                .filter(|&q| q != top && lat.contains(top, q) && avg[q.0] > threshold)
                .collect();
            for &q in &candidates {
                // maximal among candidates: no candidate strictly between q and top
                let mut cur = lat.parent(q);
                let mut covered = false;
                while let Some(a) = cur {
                    if a == top {
                        break;
                    }
                    if candidates.contains(&a) {
                        covered = true;
                        break;
                    }
                    cur = lat.parent(a);
                }
                if !covered {
                    next.push(q);
                }
            }
        }
        layer = next;
    }
    StoppingTree::assemble(CubeFamily::new(lat, members), d0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparseCarlesonReport {
    /// `min_F μ(E(F))/μ(F)` over members of positive mass.
    pub sparse_ratio: f64,
    pub worst_sparse: Option<CubeId>,
    /// `max_F Σ_{F' ⊆ F} μ(F')/μ(F)`.
    pub carleson_ratio: f64,
    pub worst_carleson: Option<CubeId>,
    pub sparse_ok: bool,
    pub carleson_ok: bool,
}

/// Checks ½-sparseness and the 2-Carleson packing of a stopping family.
/// Violations are reported, not raised.
pub fn verify_sparse_carleson(tree: &StoppingTree, m: &Measure, tol: f64) -> SparseCarlesonReport {
    let lat = &tree.lattice;
    let mut sparse_ratio = 1.0;
    let mut worst_sparse = None;
    let mut carleson_ratio: f64 = 0.0;
    let mut worst_carleson = None;
    for f in tree.members() {
        let mass = m.mass(f);
        if mass <= 0.0 {
            continue;
        }
        let own: f64 = tree.exceptional_set(f).iter().map(|&p| m.leaf(p)).sum();
        let s = own / mass;
        if s < sparse_ratio {
            sparse_ratio = s;
            worst_sparse = Some(f);
        }
        let packed: f64 = tree.members().filter(|&g| lat.contains(f, g)).map(|g| m.mass(g)).sum();
        let c = packed / mass;
        if c > carleson_ratio {
            carleson_ratio = c;
            worst_carleson = Some(f);
        }
    }
    SparseCarlesonReport {
        sparse_ratio,
        worst_sparse,
        carleson_ratio,
        worst_carleson,
        sparse_ok: sparse_ratio >= 0.5 - tol,
        carleson_ok: carleson_ratio <= 2.0 + tol,
    }
}

/// General Carleson sequence constant `sup_Q Σ_{Q' ⊆ Q} a_{Q'} / m(Q)` over
/// the given outer cubes. Outer cubes of zero mass with a zero sum are
/// skipped; with a positive sum they make the constant infinite.
pub fn carleson_sequence_constant(
    weights: &BTreeMap<CubeId, f64>,
    outer: impl IntoIterator<Item = CubeId>,
    m: &Measure,
) -> f64 {
    let lat = m.lattice();
    let mut best: f64 = 0.0;
    for q in outer {
        let sum: f64 = weights
            .iter()
            .filter(|(&c, _)| lat.contains(q, c))
            .map(|(_, &a)| a)
            .sum();
        let mass = m.mass(q);
        if mass > 0.0 {
            best = best.max(sum / mass);
        } else if sum > 0.0 {
            return f64::INFINITY;
        }
    }
    best
}

/// Smallest `C'` with `Σ_{Q' ∈ D0, Q' ⊆ Q} m(Q') ≤ C' m(Q)` for all `Q ∈ D0`.
pub fn carleson_constant(d0: &CubeFamily, m: &Measure) -> f64 {
    let weights: BTreeMap<CubeId, f64> = d0.iter().map(|q| (q, m.mass(q))).collect();
    carleson_sequence_constant(&weights, d0.iter(), m)
}

/// The averaging operator `f ↦ Σ_{Q ∈ D0} ⟨f⟩_Q 1_Q` in matrix form.
pub fn embedding_operator(d0: &CubeFamily, m: &Measure) -> GeneralOperatorSpec {
    let lat = d0.lattice.clone();
    let l = lat.num_leaves();
    let mut rows = vec![vec![0.0; l]; l];
    for q in d0.iter() {
        let mass = m.mass(q);
        if mass <= 0.0 {
            continue;
        }
        for &j in lat.leaves(q) {
            for &i in lat.leaves(q) {
                rows[j][i] += 1.0 / mass;
            }
        }
    }
    GeneralOperatorSpec::new(lat.clone(), rows, lat.depth()).expect("square kernel")
}

/// Best constant `C` in `‖Σ_{Q ∈ D0} ⟨|f|⟩_Q 1_Q‖_p ≤ C ‖f‖_p`, found by
/// ascent over `f ≥ 0` (the kernel is nonnegative, so nothing is lost).
/// The cube indicators of `D0` are among the starting points.
pub fn carleson_embedding_constant(d0: &CubeFamily, m: &Measure, p: f64, budget: &Budget) -> Result<NormEstimate> {
    let p = Exponent::new(p)?;
    let op = embedding_operator(d0, m);
    let mut budget = budget.clone();
    budget.nonnegative = true;
    budget
        .extra_starts
        .extend(d0.iter().map(|q| StepFunction::indicator(&d0.lattice, q)));
    norm_lplq_ascent(&op, m, m, ExponentPair { p, q: p }, &budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(depth: usize) -> (Arc<DyadicLattice>, Measure) {
        let lat = Arc::new(DyadicLattice::new(1, depth).unwrap());
        let m = Measure::lebesgue(lat.clone());
        (lat, m)
    }

    #[test]
    fn principal_cubes_of_a_quarter_indicator() {
        let (lat, m) = unit(2);
        let f = StepFunction::new(vec![1.0, 0.0, 0.0, 0.0]);
        let tree = principal_cubes(&f, &CubeFamily::full(lat.clone()), &m);
        let quarter = lat.leaf_cube(0);
        let members: Vec<_> = tree.members().collect();
        assert_eq!(members, vec![lat.root(), quarter]);
        assert_eq!(tree.children(lat.root()), &[quarter]);
        assert_eq!(tree.generations().len(), 2);
        assert_eq!(tree.exceptional_set(lat.root()), &[1, 2, 3]);
        let half = lat.children(lat.root())[0];
        assert_eq!(tree.projection(half), Some(lat.root()));
        assert_eq!(tree.projection(quarter), Some(quarter));
        assert_eq!(tree.strict_projection(quarter), Some(lat.root()));
        assert_eq!(tree.strict_projection(lat.root()), None);
    }

    #[test]
    fn constant_and_zero_functions_stop_at_maximal_cubes() {
        let lat = Arc::new(DyadicLattice::new(2, 2).unwrap());
        let m = Measure::new(lat.clone(), (0..16).map(|i| 1.0 + i as f64).collect()).unwrap();
        // family without the root: four maximal cubes
        let d0 = CubeFamily::new(lat.clone(), lat.ids().filter(|&q| lat.level(q) >= 1));
        for c in [0.0, 2.5] {
            let tree = principal_cubes(&StepFunction::constant(&lat, c), &d0, &m);
            let members: Vec<_> = tree.members().collect();
            assert_eq!(members, d0.maximal());
            for q in d0.iter() {
                let f = tree.projection(q).unwrap();
                assert_eq!(lat.level(f), 1);
                assert!(lat.contains(f, q));
            }
        }
    }

    #[test]
    fn empty_family_gives_empty_tree() {
        let (lat, m) = unit(2);
        let tree = principal_cubes(
            &StepFunction::constant(&lat, 1.0),
            &CubeFamily::new(lat.clone(), []),
            &m,
        );
        assert_eq!(tree.members().count(), 0);
    }

    #[test]
    fn singleton_report() {
        let (lat, m) = unit(2);
        let tree = StoppingTree::from_family(CubeFamily::new(lat.clone(), [lat.root()]));
        let rep = verify_sparse_carleson(&tree, &m, 1e-12);
        assert_eq!(rep.sparse_ratio, 1.0);
        assert_eq!(rep.carleson_ratio, 1.0);
    }

    #[test]
    fn nested_chain_packs_linearly() {
        // all mass on leaf 0: root ⊃ [0,1/2) ⊃ [0,1/4) ⊃ [0,1/8) have equal mass
        let lat = Arc::new(DyadicLattice::new(1, 3).unwrap());
        let mut masses = vec![0.0; 8];
        masses[0] = 2.0;
        let m = Measure::new(lat.clone(), masses).unwrap();
        let chain: Vec<_> = (0..=3).map(|k| lat.cube_of_leaf_at_level(0, k)).collect();
        let tree = StoppingTree::from_family(CubeFamily::new(lat.clone(), chain));
        let rep = verify_sparse_carleson(&tree, &m, 1e-12);
        assert_eq!(rep.carleson_ratio, 4.0);
        assert_eq!(rep.worst_carleson, Some(lat.root()));
        assert!(!rep.carleson_ok);
        assert_eq!(rep.sparse_ratio, 0.0);
        assert!(!rep.sparse_ok);
    }

    #[test]
    fn carleson_constants_by_hand() {
        let (lat, m) = unit(1);
        let fam = CubeFamily::full(lat.clone());
        assert!((carleson_constant(&fam, &m) - 2.0).abs() < 1e-15);
        let single = CubeFamily::new(lat.clone(), [lat.leaf_cube(1)]);
        assert_eq!(carleson_constant(&single, &m), 1.0);
        for d in 0..5 {
            let (lat, m) = unit(d);
            let c = carleson_constant(&CubeFamily::full(lat), &m);
            assert!((c - (d as f64 + 1.0)).abs() < 1e-12);
        }
        assert_eq!(carleson_constant(&CubeFamily::new(lat.clone(), []), &m), 0.0);
    }

    #[test]
    fn zero_mass_outer_cubes() {
        let lat = Arc::new(DyadicLattice::new(1, 1).unwrap());
        let m = Measure::new(lat.clone(), vec![0.0, 1.0]).unwrap();
        let dead = lat.leaf_cube(0);
        let fam = CubeFamily::new(lat.clone(), [lat.root(), dead]);
        assert_eq!(carleson_constant(&fam, &m), 1.0);
        let weights = BTreeMap::from([(dead, 0.5)]);
        assert_eq!(carleson_sequence_constant(&weights, [dead], &m), f64::INFINITY);
    }

    #[test]
    fn family_records_round_trip() {
        let lat = Arc::new(DyadicLattice::new(2, 2).unwrap());
        let fam = CubeFamily::new(lat.clone(), [CubeId(0), CubeId(3), CubeId(11)]);
        let json = serde_json::to_string(&fam.to_cubes()).unwrap();
        let back: Vec<Cube> = serde_json::from_str(&json).unwrap();
        let again = CubeFamily::from_cubes(lat.clone(), &back).unwrap();
        assert_eq!(again.iter().collect::<Vec<_>>(), fam.iter().collect::<Vec<_>>());
        assert!(CubeFamily::from_cubes(lat, &[Cube::new(5, vec![0, 0])]).is_err());
    }
}
