//! Finite truncated dyadic lattice on `[0,1)^n`.
//!
//! Level 0 is the root cube, level `depth` holds the `2^{n·depth}` leaf cells.
//! Cubes are numbered level by level; inside a level they are ordered
//! lexicographically by index vector, first coordinate most significant.
//! Leaves carry a second numbering (their position inside the last level)
//! which is the order used by measures and step functions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on the number of leaf cells.
pub const DEFAULT_MAX_LEAVES: usize = 1 << 16;

/// A dyadic cube `2^{-level}(index + [0,1)^n)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cube {
    pub level: usize,
    pub index: Vec<u64>,
}

impl Cube {
    pub fn new(level: usize, index: Vec<u64>) -> Self {
        Self { level, index }
    }

    /// Side length `2^{-level}`.
    pub fn side_length(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    /// `true` when `self ⊇ other`.
    pub fn contains(&self, other: &Cube) -> bool {
        if other.level < self.level || other.index.len() != self.index.len() {
            return false;
        }
        let shift = other.level - self.level;
        self.index.iter().zip(&other.index).all(|(&a, &b)| b >> shift == a)
    }

    pub fn is_disjoint(&self, other: &Cube) -> bool {
        !self.contains(other) && !other.contains(self)
    }
}

impl fmt::Display for Cube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.level)?;
        for (d, i) in self.index.iter().enumerate() {
            write!(f, "{}{}", if d == 0 { "[" } else { "," }, i)?;
        }
        write!(f, "]")
    }
}

/// Handle of a cube inside one [`DyadicLattice`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CubeId(pub usize);

/// The finite lattice with its parent/child links.
#[derive(Clone, Debug)]
pub struct DyadicLattice {
    dim: usize,
    depth: usize,
    cubes: Vec<Cube>,
    level_offset: Vec<usize>,
    parent: Vec<Option<CubeId>>,
    children: Vec<Vec<CubeId>>,
    leaves: Vec<Vec<usize>>,
}

impl PartialEq for DyadicLattice {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.depth == other.depth
    }
}

impl DyadicLattice {
    pub fn new(dim: usize, depth: usize) -> Result<Self> {
        Self::with_capacity(dim, depth, DEFAULT_MAX_LEAVES)
    }

    pub fn with_capacity(dim: usize, depth: usize, max_leaves: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        let exponent = (dim as u128) * (depth as u128);
        let leaves = if exponent >= 100 { u128::MAX } else { 1u128 << exponent };
        if leaves > max_leaves as u128 {
            return Err(Error::Capacity {
                dim,
                depth,
                leaves,
                capacity: max_leaves,
            });
        }

        let mut cubes = Vec::new();
        let mut level_offset = Vec::with_capacity(depth + 2);
        for level in 0..=depth {
            level_offset.push(cubes.len());
            let side = 1u64 << level;
            let count = 1usize << (dim * level);
            for rank in 0..count {
                cubes.push(Cube::new(level, unrank(rank as u64, side, dim)));
            }
        }
        level_offset.push(cubes.len());

        let mut lattice = Self {
            dim,
            depth,
            cubes,
            level_offset,
            parent: Vec::new(),
            children: Vec::new(),
            leaves: Vec::new(),
        };

        let total = lattice.cubes.len();
        let mut parent = vec![None; total];
        let mut children = vec![Vec::new(); total];
        for id in 0..total {
            let cube = &lattice.cubes[id];
            if cube.level == 0 {
                continue;
            }
            let up = Cube::new(cube.level - 1, cube.index.iter().map(|i| i >> 1).collect());
            let pid = lattice.lookup(&up);
            parent[id] = Some(pid);
            children[pid.0].push(CubeId(id));
        }
        let leaf_start = lattice.level_offset[depth];
        let mut leaves = vec![Vec::new(); total];
        for pos in 0..lattice.num_leaves() {
            let mut cur = Some(CubeId(leaf_start + pos));
            while let Some(c) = cur {
                leaves[c.0].push(pos);
                cur = parent[c.0];
            }
        }
        lattice.parent = parent;
        lattice.children = children;
        lattice.leaves = leaves;
        Ok(lattice)
    }

    fn lookup(&self, cube: &Cube) -> CubeId {
        let side = 1u64 << cube.level;
        CubeId(self.level_offset[cube.level] + rank(&cube.index, side) as usize)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_cubes(&self) -> usize {
        self.cubes.len()
    }

    pub fn num_leaves(&self) -> usize {
        1usize << (self.dim * self.depth)
    }

    pub fn root(&self) -> CubeId {
        CubeId(0)
    }

    pub fn cube(&self, id: CubeId) -> &Cube {
        &self.cubes[id.0]
    }

    /// Looks a cube up; `None` when it is not part of this lattice.
    pub fn id_of(&self, cube: &Cube) -> Option<CubeId> {
        if cube.level > self.depth || cube.index.len() != self.dim {
            return None;
        }
        let side = 1u64 << cube.level;
        if cube.index.iter().any(|&i| i >= side) {
            return None;
        }
        Some(self.lookup(cube))
    }

    pub fn ids(&self) -> impl Iterator<Item = CubeId> + '_ {
        (0..self.cubes.len()).map(CubeId)
    }

    /// Cubes of one level in lexicographic order.
    pub fn level_ids(&self, level: usize) -> impl Iterator<Item = CubeId> {
        (self.level_offset[level]..self.level_offset[level + 1]).map(CubeId)
    }

    pub fn level(&self, id: CubeId) -> usize {
        self.cubes[id.0].level
    }

    pub fn side_length(&self, id: CubeId) -> f64 {
        self.cubes[id.0].side_length()
    }

    pub fn is_leaf(&self, id: CubeId) -> bool {
        self.level(id) == self.depth
    }

    pub fn parent(&self, id: CubeId) -> Option<CubeId> {
        self.parent[id.0]
    }

    /// Children in lexicographic order; empty for leaves.
    pub fn children(&self, id: CubeId) -> &[CubeId] {
        &self.children[id.0]
    }

    /// `Q^{(r)}`, defined iff `level(Q) >= r`.
    pub fn ancestor(&self, id: CubeId, r: usize) -> Option<CubeId> {
        let mut cur = id;
        for _ in 0..r {
            cur = self.parent[cur.0]?;
        }
        Some(cur)
    }

    /// `Q^{(r)}` with ancestors beyond the root clamped to the root.
    pub fn ancestor_clamped(&self, id: CubeId, r: usize) -> CubeId {
        let up = r.min(self.level(id));
        self.ancestor(id, up).expect("clamped ancestor exists")
    }

    /// `ch^{(r)}(Q)`: cubes `Q'` with `Q'^{(r)} = Q`.
    pub fn descendants_at(&self, id: CubeId, r: usize) -> Vec<CubeId> {
        let mut layer = vec![id];
        for _ in 0..r {
            layer = layer.iter().flat_map(|&c| self.children(c).iter().copied()).collect();
        }
        layer
    }

    /// `true` when `outer ⊇ inner`.
    pub fn contains(&self, outer: CubeId, inner: CubeId) -> bool {
        let lo = self.level(outer);
        let li = self.level(inner);
        li >= lo && self.ancestor(inner, li - lo) == Some(outer)
    }

    /// Leaf positions (0..num_leaves) covered by the cube, ascending.
    pub fn leaves(&self, id: CubeId) -> &[usize] {
        &self.leaves[id.0]
    }

    /// The leaf cube at a leaf position.
    pub fn leaf_cube(&self, pos: usize) -> CubeId {
        CubeId(self.level_offset[self.depth] + pos)
    }

    /// The cube of the given level containing a leaf position.
    pub fn cube_of_leaf_at_level(&self, pos: usize, level: usize) -> CubeId {
        self.ancestor(self.leaf_cube(pos), self.depth - level)
            .expect("level within depth")
    }
}

fn unrank(mut rank: u64, side: u64, dim: usize) -> Vec<u64> {
    let mut index = vec![0; dim];
    for slot in index.iter_mut().rev() {
        *slot = rank % side;
        rank /= side;
    }
    index
}

fn rank(index: &[u64], side: u64) -> u64 {
    index.iter().fold(0, |acc, &i| acc * side + i)
}
