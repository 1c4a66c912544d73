//! Positive dyadic operators, Haar multipliers and general leaf-matrix
//! operators, together with the locality check and the paraproduct.
//!
//! Every operator is lowered to a kernel matrix `K` on leaves; with a measure
//! `m` on the input side the action is `(T f)(j) = Σ_i K[j,i] f(i) m(i)`.
//! The formal adjoint is the transposed kernel integrated against the other
//! measure, so `⟨T^μ 1_Q, 1_R⟩_ν = ⟨1_Q, T^ν 1_R⟩_μ` holds by construction.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::StepFunction;
use crate::haar::HaarBasis;
use crate::lattice::{CubeId, DyadicLattice};
use crate::martingale::{average, inner, integral};
use crate::measure::Measure;
use crate::stopping::CubeFamily;

/// `T^μ f = Σ_Q λ_Q (∫_Q f dμ) 1_Q` with `λ_Q ≥ 0`.
#[derive(Clone, Debug)]
pub struct PositiveDyadicSpec {
    lattice: Arc<DyadicLattice>,
    lambda: BTreeMap<CubeId, f64>,
}

impl PositiveDyadicSpec {
    pub fn new(lattice: Arc<DyadicLattice>, lambda: BTreeMap<CubeId, f64>) -> Result<Self> {
        for (&q, &l) in &lambda {
            if q.0 >= lattice.num_cubes() {
                return Err(Error::domain(format!("cube id {} is not in the lattice", q.0)));
            }
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::domain(format!(
                    "coefficient {l} at {} must be finite and nonnegative",
                    lattice.cube(q)
                )));
            }
        }
        let lambda = lambda.into_iter().filter(|&(_, l)| l != 0.0).collect();
        Ok(Self { lattice, lambda })
    }

    pub fn lattice(&self) -> &Arc<DyadicLattice> {
        &self.lattice
    }

    pub fn lambda(&self) -> &BTreeMap<CubeId, f64> {
        &self.lambda
    }

    /// The dense kernel `Σ_Q λ_Q 1_Q(x) 1_Q(y)`.
    pub fn to_general(&self) -> GeneralOperatorSpec {
        let lat = &self.lattice;
        let l = lat.num_leaves();
        let mut kernel = vec![0.0; l * l];
        for (&q, &lam) in &self.lambda {
            let leaves = lat.leaves(q);
            for &j in leaves {
                for &i in leaves {
                    kernel[j * l + i] += lam;
                }
            }
        }
        // no locality is claimed: every same-size cube is an admissible R(Q)
        GeneralOperatorSpec::from_parts(lat.clone(), kernel, lat.depth())
    }
}

/// `Σ_Q λ_Q (∫_Q f dm) 1_Q`.
pub fn apply_positive(spec: &PositiveDyadicSpec, f: &StepFunction, m: &Measure) -> StepFunction {
    apply_positive_filtered(spec, f, m, |_| true)
}

/// The localized operator `T_Q f = Σ_{Q' ⊆ Q} λ_{Q'} (∫_{Q'} f dm) 1_{Q'}`.
pub fn apply_localized(spec: &PositiveDyadicSpec, cube: CubeId, f: &StepFunction, m: &Measure) -> StepFunction {
    let lat = spec.lattice.clone();
    apply_positive_filtered(spec, f, m, |q| lat.contains(cube, q))
}

fn apply_positive_filtered(
    spec: &PositiveDyadicSpec,
    f: &StepFunction,
    m: &Measure,
    keep: impl Fn(CubeId) -> bool,
) -> StepFunction {
    let lat = &spec.lattice;
    let mut out = StepFunction::zeros(lat.num_leaves());
    for (&q, &lam) in &spec.lambda {
        if !keep(q) {
            continue;
        }
        let c = lam * integral(f, q, m);
        for &pos in lat.leaves(q) {
            out.values_mut()[pos] += c;
        }
    }
    out
}

/// Two-weight Haar multiplier `T_λ f = Σ_I λ_I ⟨f, h_I⟩_μ h_I` on `[0,1)`,
/// where `h_I = |I|^{-1/2}(1_{I_1} − 1_{I_2})` is the Lebesgue-normalized
/// Haar function regardless of the weights.
#[derive(Clone, Debug)]
pub struct HaarMultiplierSpec {
    lattice: Arc<DyadicLattice>,
    lambda: BTreeMap<CubeId, f64>,
}

impl HaarMultiplierSpec {
    pub fn new(lattice: Arc<DyadicLattice>, lambda: BTreeMap<CubeId, f64>) -> Result<Self> {
        if lattice.dim() != 1 {
            return Err(Error::domain(format!(
                "Haar multipliers are one-dimensional, lattice has dimension {}",
                lattice.dim()
            )));
        }
        for (&q, &l) in &lambda {
            if q.0 >= lattice.num_cubes() {
                return Err(Error::domain(format!("cube id {} is not in the lattice", q.0)));
            }
            if lattice.is_leaf(q) {
                return Err(Error::domain(format!(
                    "leaf {} carries no Haar function",
                    lattice.cube(q)
                )));
            }
            if !l.is_finite() {
                return Err(Error::domain(format!(
                    "coefficient at {} is not finite",
                    lattice.cube(q)
                )));
            }
        }
        let lambda = lambda.into_iter().filter(|&(_, l)| l != 0.0).collect();
        Ok(Self { lattice, lambda })
    }

    pub fn lattice(&self) -> &Arc<DyadicLattice> {
        &self.lattice
    }

    pub fn lambda(&self) -> &BTreeMap<CubeId, f64> {
        &self.lambda
    }

    /// Kernel `Σ_I λ_I h_I(x) h_I(y)`, declared radius 0.
    pub fn to_general(&self) -> GeneralOperatorSpec {
        let lat = &self.lattice;
        let l = lat.num_leaves();
        let mut kernel = vec![0.0; l * l];
        for (&q, &lam) in &self.lambda {
            let h = unweighted_haar(lat, q);
            let leaves = lat.leaves(q);
            for &j in leaves {
                for &i in leaves {
                    kernel[j * l + i] += lam * h.value(j) * h.value(i);
                }
            }
        }
        GeneralOperatorSpec::from_parts(lat.clone(), kernel, 0)
    }
}

/// `h_I = |I|^{-1/2}(1_{I_1} − 1_{I_2})` for a non-leaf interval.
pub fn unweighted_haar(lattice: &DyadicLattice, cube: CubeId) -> StepFunction {
    let mut h = StepFunction::zeros(lattice.num_leaves());
    let amp = lattice.side_length(cube).powf(-0.5);
    let children = lattice.children(cube);
    for (k, &c) in children.iter().enumerate() {
        let sign = if k == 0 { amp } else { -amp };
        for &pos in lattice.leaves(c) {
            h.values_mut()[pos] = sign;
        }
    }
    h
}

pub fn haar_multiplier_apply(spec: &HaarMultiplierSpec, f: &StepFunction, m: &Measure) -> StepFunction {
    let lat = &spec.lattice;
    let mut out = StepFunction::zeros(lat.num_leaves());
    for (&q, &lam) in &spec.lambda {
        let h = unweighted_haar(lat, q);
        out.add_scaled(lam * inner(f, &h, m), &h);
    }
    out
}

/// An operator in matrix normal form with a declared locality radius.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralOperatorSpec {
    lattice: Arc<DyadicLattice>,
    /// Row-major `L × L`: row = output leaf, column = input leaf.
    kernel: Vec<f64>,
    radius: usize,
}

impl GeneralOperatorSpec {
    pub fn new(lattice: Arc<DyadicLattice>, rows: Vec<Vec<f64>>, radius: usize) -> Result<Self> {
        let l = lattice.num_leaves();
        if rows.len() != l {
            return Err(Error::Length {
                expected: l,
                got: rows.len(),
            });
        }
        let mut kernel = Vec::with_capacity(l * l);
        for row in rows {
            if row.len() != l {
                return Err(Error::Length {
                    expected: l,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain("kernel entries must be finite"));
            }
            kernel.extend(row);
        }
        Ok(Self::from_parts(lattice, kernel, radius))
    }

    pub(crate) fn from_parts(lattice: Arc<DyadicLattice>, kernel: Vec<f64>, radius: usize) -> Self {
        Self {
            lattice,
            kernel,
            radius,
        }
    }

    pub fn zero(lattice: Arc<DyadicLattice>, radius: usize) -> Self {
        let l = lattice.num_leaves();
        Self::from_parts(lattice, vec![0.0; l * l], radius)
    }

    /// Identity on leaf values: `K = diag(1/m_i)` for the given measure, so that
    /// `T f = f` on positive-mass leaves.
    pub fn identity(m: &Measure) -> Self {
        let lat = m.lattice().clone();
        let l = lat.num_leaves();
        let mut kernel = vec![0.0; l * l];
        for i in 0..l {
            if m.leaf(i) > 0.0 {
                kernel[i * l + i] = 1.0 / m.leaf(i);
            }
        }
        Self::from_parts(lat, kernel, 0)
    }

    pub fn lattice(&self) -> &Arc<DyadicLattice> {
        &self.lattice
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn with_radius(mut self, radius: usize) -> Self {
        self.radius = radius;
        self
    }

    pub fn size(&self) -> usize {
        self.lattice.num_leaves()
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.kernel[row * self.size() + col]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.kernel.chunks(self.size().max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.kernel.iter().all(|&v| v == 0.0)
    }

    /// `(T f)(j) = Σ_i K[j,i] f(i) m(i)`.
    pub fn apply(&self, f: &StepFunction, m: &Measure) -> StepFunction {
        let l = self.size();
        let weighted: Vec<f64> = f.values().iter().zip(m.leaf_masses()).map(|(a, w)| a * w).collect();
        StepFunction::new(
            self.kernel
                .chunks(l)
                .map(|row| row.iter().zip(&weighted).map(|(k, x)| k * x).sum())
                .collect(),
        )
    }

    /// The formal adjoint, i.e. the transposed kernel.
    pub fn adjoint(&self) -> Self {
        let l = self.size();
        let mut kernel = vec![0.0; l * l];
        for j in 0..l {
            for i in 0..l {
                kernel[i * l + j] = self.kernel[j * l + i];
            }
        }
        Self::from_parts(self.lattice.clone(), kernel, self.radius)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_parts(
            self.lattice.clone(),
            self.kernel.iter().map(|v| c * v).collect(),
            self.radius,
        )
    }
}

/// Which side of a Definition-style locality condition failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// `⟨T^μ 1_Q, h^ν_R⟩_ν`.
    Direct,
    /// `⟨T^ν 1_Q, h^μ_R⟩_μ`.
    Adjoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalityViolation {
    pub side: Side,
    pub q: CubeId,
    pub r: CubeId,
    pub haar_index: usize,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalityStatus {
    Pass,
    /// Every pair that had to vanish met an empty Haar system.
    VacuouslyLocalized,
    Fail,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalityReport {
    pub status: LocalityStatus,
    pub radius: usize,
    pub max_violation: f64,
    pub worst: Option<LocalityViolation>,
    /// Number of `(Q, R, k)` coefficients that were required to vanish.
    pub checked: usize,
    /// Pairs `(Q, R)` skipped because `R` has no Haar functions.
    pub vacuous_pairs: usize,
}

/// `true` when `⟨T 1_Q, h_R⟩` must vanish for a lower triangularly localized
/// operator of radius `r`. Ancestors beyond the root clamp to the root.
pub fn must_vanish(lattice: &DyadicLattice, q: CubeId, r_cube: CubeId, r: usize) -> bool {
    let lq = lattice.level(q) as i64;
    let lr = lattice.level(r_cube) as i64;
    let big = lattice.ancestor_clamped(q, r + 1);
    // l(R) ≤ 2 l(Q)  ⇔  level(R) ≥ level(Q) − 1
    let first = lr >= lq - 1 && !lattice.contains(big, r_cube);
    // l(R) ≤ 2^{-r} l(Q)  ⇔  level(R) ≥ level(Q) + r
    let second = lr >= lq + r as i64 && !lattice.contains(q, r_cube);
    first || second
}

/// Checks that both `T^μ` and `T^ν` are lower triangularly localized with
/// radius `r`, by enumerating every pair of cubes.
pub fn well_localized_check(
    spec: &GeneralOperatorSpec,
    mu: &Measure,
    nu: &Measure,
    r: usize,
    tol: f64,
) -> Result<LocalityReport> {
    mu.same_lattice(nu)?;
    let adjoint = spec.adjoint();
    let haar_nu = HaarBasis::new(nu);
    let haar_mu = HaarBasis::new(mu);
    let direct = side_check(Side::Direct, spec, mu, nu, &haar_nu, r);
    let dual = side_check(Side::Adjoint, &adjoint, nu, mu, &haar_mu, r);

    let checked = direct.checked + dual.checked;
    let vacuous_pairs = direct.vacuous + dual.vacuous;
    let worst = match (direct.worst, dual.worst) {
        (Some(a), Some(b)) => Some(if b.value.abs() > a.value.abs() { b } else { a }),
        (a, b) => a.or(b),
    };
    let max_violation = worst.as_ref().map_or(0.0, |w| w.value.abs());
    let status = if max_violation > tol {
        LocalityStatus::Fail
    } else if checked == 0 && vacuous_pairs > 0 {
        LocalityStatus::VacuouslyLocalized
    } else {
        LocalityStatus::Pass
    };
    Ok(LocalityReport {
        status,
        radius: r,
        max_violation,
        worst: if status == LocalityStatus::Fail { worst } else { None },
        checked,
        vacuous_pairs,
    })
}

struct SideOutcome {
    worst: Option<LocalityViolation>,
    checked: usize,
    vacuous: usize,
}

fn side_check(
    side: Side,
    op: &GeneralOperatorSpec,
    source: &Measure,
    target: &Measure,
    haar: &HaarBasis,
    r: usize,
) -> SideOutcome {
    let lat = op.lattice().clone();
    let ids: Vec<CubeId> = lat.ids().collect();
    let partial: Vec<SideOutcome> = ids
        .par_iter()
        .map(|&q| {
            let image = op.apply(&StepFunction::indicator(&lat, q), source);
            let mut out = SideOutcome {
                worst: None,
                checked: 0,
                vacuous: 0,
            };
            for rc in lat.ids() {
                if lat.is_leaf(rc) || !must_vanish(&lat, q, rc, r) {
                    continue;
                }
                let sys = haar.system(rc);
                if sys.is_empty() {
                    out.vacuous += 1;
                    continue;
                }
                for (k, c) in sys.coefficients(&image, target).into_iter().enumerate() {
                    out.checked += 1;
                    if out.worst.as_ref().map_or(true, |w| c.abs() > w.value.abs()) {
                        out.worst = Some(LocalityViolation {
                            side,
                            q,
                            r: rc,
                            haar_index: k,
                            value: c,
                        });
                    }
                }
            }
            out
        })
        .collect();
    // merge in cube order so the reported pair is deterministic
    partial.into_iter().fold(
        SideOutcome {
            worst: None,
            checked: 0,
            vacuous: 0,
        },
        |mut acc, o| {
            acc.checked += o.checked;
            acc.vacuous += o.vacuous;
            if let Some(w) = o.worst {
                if acc.worst.as_ref().map_or(true, |a| w.value.abs() > a.value.abs()) {
                    acc.worst = Some(w);
                }
            }
            acc
        },
    )
}

/// `Π f = Σ_{Q ∈ 𝒟₀} ⟨f⟩^μ_Q Σ_{R ∈ ch^{(r)}(Q)} Δ^ν_R T^μ 1_Q`, with the
/// differences taken through the `ν`-Haar projections.
pub fn paraproduct_apply(
    spec: &GeneralOperatorSpec,
    family: &CubeFamily,
    f: &StepFunction,
    mu: &Measure,
    nu: &Measure,
    r: usize,
) -> Result<StepFunction> {
    mu.same_lattice(nu)?;
    let lat = mu.lattice();
    let haar = HaarBasis::new(nu);
    let mut out = StepFunction::zeros(lat.num_leaves());
    for q in family.iter() {
        if lat.level(q) + r > lat.depth() {
            return Err(Error::domain(format!(
                "cube {} has no descendants {r} levels down",
                lat.cube(q)
            )));
        }
        let avg = average(f, q, mu);
        if avg == 0.0 {
            continue;
        }
        let image = spec.apply(&StepFunction::indicator(lat, q), mu);
        for rc in lat.descendants_at(q, r) {
            out.add_scaled(avg, &haar.system(rc).project(&image, nu));
        }
    }
    Ok(out)
}
