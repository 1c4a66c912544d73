//! Sawyer and square-function testing constants, their randomized-sign
//! variants, and the equivalence / gap experiments built on them.
//!
//! All suprema range over the finite lattice only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::ExponentPair;
use crate::function::StepFunction;
use crate::instance::{gen, GenConfig, InstanceBundle, OperatorKind, WeightLaw};
use crate::lattice::{Cube, CubeId};
use crate::martingale::lp_norm_unchecked;
use crate::measure::Measure;
use crate::norms::{multistart, operator_norm, smooth_pow, Budget, NormEstimate, RatioProblem};
use crate::operators::{apply_localized, GeneralOperatorSpec, PositiveDyadicSpec};
use crate::signs::{for_each_pattern, MAX_SIGNS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `T^μ` from `L^p(μ)` to `L^q(ν)`.
    Direct,
    /// `T^ν` from `L^{q'}(ν)` to `L^{p'}(μ)`.
    Adjoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyPolicy {
    /// Every finite subfamily, realized by `a_Q ≥ 0` over all cubes.
    AllSubfamilies,
    /// Only 2-Carleson families of the source measure.
    CarlesonOnly,
}

/// The operator under test together with the images its testing
/// conditions use.
#[derive(Clone, Debug)]
pub enum TestedOperator {
    /// Tested on the localized images `T_Q 1_Q`.
    Positive(PositiveDyadicSpec),
    /// Tested on `1_R T 1_Q` for every same-size `R ⊆ Q^{(r+1)}`, with `r`
    /// the declared radius.
    WellLocalized(GeneralOperatorSpec),
}

impl TestedOperator {
    pub fn general(&self) -> GeneralOperatorSpec {
        match self {
            Self::Positive(s) => s.to_general(),
            Self::WellLocalized(g) => g.clone(),
        }
    }
}

/// One cube of a testing family with its candidate images.
struct CubeImages {
    cube: CubeId,
    /// `(R, image)`; `R` is `None` for localized images.
    candidates: Vec<(Option<CubeId>, Vec<f64>)>,
}

struct Setup<'a> {
    src: &'a Measure,
    tgt: &'a Measure,
    /// Source and target exponents.
    s: f64,
    t: f64,
    cubes: Vec<CubeImages>,
}

impl<'a> Setup<'a> {
    fn new(op: &TestedOperator, mu: &'a Measure, nu: &'a Measure, e: ExponentPair, dir: Direction) -> Result<Self> {
        mu.same_lattice(nu)?;
        let (src, tgt, s, t) = match dir {
            Direction::Direct => (mu, nu, e.p.get(), e.q.get()),
            Direction::Adjoint => (nu, mu, e.q.conjugate().get(), e.p.conjugate().get()),
        };
        let lat = mu.lattice().clone();
        let general = match (op, dir) {
            (TestedOperator::WellLocalized(g), Direction::Direct) => Some(g.clone()),
            (TestedOperator::WellLocalized(g), Direction::Adjoint) => Some(g.adjoint()),
            _ => None,
        };
        let mut cubes = Vec::new();
        for q in lat.ids() {
            if src.mass(q) <= 0.0 {
                continue;
            }
            let ind = StepFunction::indicator(&lat, q);
            let candidates = match (op, &general) {
                (TestedOperator::Positive(spec), _) => {
                    vec![(None, apply_localized(spec, q, &ind, src).into_values())]
                }
                (_, Some(g)) => {
                    let image = g.apply(&ind, src);
                    let top = lat.ancestor_clamped(q, g.radius() + 1);
                    lat.descendants_at(top, lat.level(q) - lat.level(top))
                        .into_iter()
                        .map(|r| (Some(r), image.restrict(&lat, r).into_values()))
                        .collect()
                }
                _ => unreachable!(),
            };
            cubes.push(CubeImages { cube: q, candidates });
        }
        Ok(Self { src, tgt, s, t, cubes })
    }

    fn image_norm(&self, v: &[f64]) -> f64 {
        lp_norm_unchecked(v, self.t, self.tgt)
    }

    /// Index of the candidate with the largest image norm.
    fn best_candidate(&self, c: usize) -> (usize, f64) {
        self.cubes[c]
            .candidates
            .iter()
            .enumerate()
            .map(|(k, (_, v))| (k, self.image_norm(v)))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
    }

    fn singleton_ratio(&self, c: usize) -> (usize, f64) {
        let (k, n) = self.best_candidate(c);
        (k, n / self.src.mass(self.cubes[c].cube).powf(1.0 / self.s))
    }
}

/// A testing witness: the family, its coefficients and the `R(Q)` used.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TestingAssignment {
    pub cubes: Vec<Cube>,
    pub coefficients: Vec<f64>,
    /// `R(Q)` per cube; absent for localized images.
    pub companions: Vec<Option<Cube>>,
}

/// A testing constant with its witness.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestingConstant {
    pub value: f64,
    pub witness: TestingAssignment,
    /// Number of families examined.
    pub families: usize,
    /// `false` when the family budget ran out and `value` is a best-so-far.
    pub complete: bool,
}

impl TestingConstant {
    fn zero() -> Self {
        Self {
            value: 0.0,
            witness: TestingAssignment::default(),
            families: 0,
            complete: true,
        }
    }
}

fn assignment(setup: &Setup, members: &[usize], a: &[f64], choice: &[usize]) -> TestingAssignment {
    let lat = setup.src.lattice();
    let mut w = TestingAssignment::default();
    for (slot, &c) in members.iter().enumerate() {
        if a[slot] == 0.0 {
            continue;
        }
        let img = &setup.cubes[c];
        w.cubes.push(lat.cube(img.cube).clone());
        w.coefficients.push(a[slot]);
        w.companions
            .push(img.candidates[choice[c]].0.map(|r| lat.cube(r).clone()));
    }
    w
}

/// `max_Q ‖1_{R(Q)} T 1_Q‖_{L^t} / m(Q)^{1/s}` over cubes of positive
/// source mass and their admissible companions.
pub fn sawyer_constant(
    op: &TestedOperator,
    mu: &Measure,
    nu: &Measure,
    e: ExponentPair,
    dir: Direction,
) -> Result<TestingConstant> {
    let setup = Setup::new(op, mu, nu, e, dir)?;
    let mut best = TestingConstant::zero();
    best.families = setup.cubes.len();
    let mut choice = vec![0; setup.cubes.len()];
    for c in 0..setup.cubes.len() {
        let (k, v) = setup.singleton_ratio(c);
        if v > best.value {
            choice[c] = k;
            best.value = v;
            best.witness = assignment(&setup, &[c], &[1.0], &choice);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Aggregate {
    /// `‖(Σ a² v²)^{1/2}‖_t / ‖(Σ a² 1_Q)^{1/2}‖_s`.
    Square,
    /// `(E‖Σ ε a v‖_t^t)^{1/t} / (E‖Σ ε a 1_Q‖_s^s)^{1/s}`.
    Rademacher,
}

/// The family ratio as a function of the coefficients of `members`.
struct FamilyProblem<'s, 'a> {
    setup: &'s Setup<'a>,
    kind: Aggregate,
    /// Images on the target support, one per member.
    images: Vec<Vec<f64>>,
    tgt_w: Vec<f64>,
    /// Member indicators on the source support.
    masks: Vec<Vec<bool>>,
    src_w: Vec<f64>,
}

impl<'s, 'a> FamilyProblem<'s, 'a> {
    fn new(setup: &'s Setup<'a>, kind: Aggregate, members: &[usize], choice: &[usize]) -> Self {
        let lat = setup.src.lattice();
        let tgt_support = setup.tgt.support();
        let src_support = setup.src.support();
        let images = members
            .iter()
            .map(|&c| {
                let v = &setup.cubes[c].candidates[choice[c]].1;
                tgt_support.iter().map(|&j| v[j]).collect()
            })
            .collect();
        let masks = members
            .iter()
            .map(|&c| {
                let q = setup.cubes[c].cube;
                src_support.iter().map(|&i| lat.contains(q, lat.leaf_cube(i))).collect()
            })
            .collect();
        Self {
            setup,
            kind,
            images,
            tgt_w: tgt_support.iter().map(|&j| setup.tgt.leaf(j)).collect(),
            masks,
            src_w: src_support.iter().map(|&i| setup.src.leaf(i)).collect(),
        }
    }

    /// Numerator and denominator raised to their exponents, with gradients.
    fn square_parts(&self, a: &[f64], grad: Option<(&mut [f64], &mut [f64])>) -> (f64, f64) {
        let (s, t) = (self.setup.s, self.setup.t);
        let sq: Vec<f64> = (0..self.tgt_w.len())
            .map(|j| self.images.iter().zip(a).map(|(v, x)| x * x * v[j] * v[j]).sum())
            .collect();
        let den_sq: Vec<f64> = (0..self.src_w.len())
            .map(|i| self.masks.iter().zip(a).filter(|(m, _)| m[i]).map(|(_, x)| x * x).sum())
            .collect();
        let n: f64 = sq.iter().zip(&self.tgt_w).map(|(v, w)| w * v.powf(t / 2.0)).sum();
        let d: f64 = den_sq.iter().zip(&self.src_w).map(|(v, w)| w * v.powf(s / 2.0)).sum();
        if let Some((gn, gd)) = grad {
            for (k, x) in a.iter().enumerate() {
                gn[k] = t
                    * x
                    * (0..self.tgt_w.len())
                        .map(|j| self.tgt_w[j] * smooth_pow(sq[j], t) * self.images[k][j].powi(2))
                        .sum::<f64>();
                gd[k] = s
                    * x
                    * (0..self.src_w.len())
                        .filter(|&i| self.masks[k][i])
                        .map(|i| self.src_w[i] * smooth_pow(den_sq[i], s))
                        .sum::<f64>();
            }
        }
        (n, d)
    }

    fn rademacher_parts(&self, a: &[f64], grad: Option<(&mut [f64], &mut [f64])>) -> (f64, f64) {
        let (s, t) = (self.setup.s, self.setup.t);
        let m = a.len();
        let (mut n, mut d) = (0.0, 0.0);
        let mut gn = vec![0.0; m];
        let mut gd = vec![0.0; m];
        let want = grad.is_some();
        let mut count = 0.0;
        for_each_pattern(m, |eps| {
            count += 1.0;
            for j in 0..self.tgt_w.len() {
                let x: f64 = (0..m).map(|k| eps[k] * a[k] * self.images[k][j]).sum();
                n += self.tgt_w[j] * x.abs().powf(t);
                if want {
                    let g = self.tgt_w[j] * t * smooth_pow(x * x, t) * x;
                    for k in 0..m {
                        gn[k] += g * eps[k] * self.images[k][j];
                    }
                }
            }
            for i in 0..self.src_w.len() {
                let x: f64 = (0..m).filter(|&k| self.masks[k][i]).map(|k| eps[k] * a[k]).sum();
                d += self.src_w[i] * x.abs().powf(s);
                if want {
                    let g = self.src_w[i] * s * smooth_pow(x * x, s) * x;
                    for k in 0..m {
                        if self.masks[k][i] {
                            gd[k] += g * eps[k];
                        }
                    }
                }
            }
        })
        .expect("family size checked by the caller");
        if let Some((out_n, out_d)) = grad {
            for k in 0..m {
                out_n[k] = gn[k] / count;
                out_d[k] = gd[k] / count;
            }
        }
        (n / count, d / count)
    }

    fn parts(&self, a: &[f64], grad: Option<(&mut [f64], &mut [f64])>) -> (f64, f64) {
        match self.kind {
            Aggregate::Square => self.square_parts(a, grad),
            Aggregate::Rademacher => self.rademacher_parts(a, grad),
        }
    }

    fn ratio_of(&self, n: f64, d: f64) -> f64 {
        if d <= 0.0 {
            return 0.0;
        }
        n.powf(1.0 / self.setup.t) / d.powf(1.0 / self.setup.s)
    }
}

impl RatioProblem for FamilyProblem<'_, '_> {
    fn value(&self, x: &[f64]) -> f64 {
        let (n, d) = self.parts(x, None);
        self.ratio_of(n, d)
    }

    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let m = x.len();
        let mut gn = vec![0.0; m];
        let mut gd = vec![0.0; m];
        let (n, d) = self.parts(x, Some((&mut gn, &mut gd)));
        if d <= 0.0 {
            grad.fill(0.0);
            return 0.0;
        }
        let (s, t) = (self.setup.s, self.setup.t);
        let num = n.powf(1.0 / t);
        let den = d.powf(1.0 / s);
        // d(n^{1/t}) = n^{1/t - 1} dn / t
        for k in 0..m {
            let dnum = if n > 0.0 { num / (t * n) * gn[k] } else { 0.0 };
            let dden = den / (s * d) * gd[k];
            grad[k] = dnum / den - num * dden / (den * den);
        }
        num / den
    }

    fn normalize(&self, x: &mut [f64]) -> bool {
        let (_, d) = self.parts(x, None);
        let scale = d.powf(1.0 / self.setup.s);
        if !(scale.is_finite() && scale > 0.0) {
            return false;
        }
        x.iter_mut().for_each(|v| *v /= scale);
        true
    }

    fn nonnegative(&self) -> bool {
        true
    }
}

fn coefficient_starts(m: usize, budget: &Budget, salt: u64, lead: Option<usize>) -> Vec<Vec<f64>> {
    let mut starts = vec![vec![1.0; m]];
    if let Some(c) = lead {
        let mut v = vec![0.05; m];
        v[c] = 1.0;
        starts.push(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    for _ in 0..budget.restarts {
        starts.push((0..m).map(|_| rng.gen_range(0.0..1.0)).collect());
    }
    starts
}

/// Best ratio over coefficients on `members`, alternating with the choice of
/// companions. Singletons are evaluated exactly and never lose to the search.
fn optimize_family(
    setup: &Setup,
    kind: Aggregate,
    members: &[usize],
    budget: &Budget,
    salt: u64,
) -> (f64, TestingAssignment) {
    let mut choice: Vec<usize> = (0..setup.cubes.len()).map(|c| setup.best_candidate(c).0).collect();
    // singletons: the one-term family has the same value in every aggregate
    let mut best_value = 0.0;
    let mut best_slot = None;
    for (slot, &c) in members.iter().enumerate() {
        let v = setup.singleton_ratio(c).1;
        if v > best_value {
            best_value = v;
            best_slot = Some(slot);
        }
    }
    let mut best = match best_slot {
        Some(slot) => {
            let mut a = vec![0.0; members.len()];
            a[slot] = 1.0;
            assignment(setup, members, &a, &choice)
        }
        None => TestingAssignment::default(),
    };
    if members.len() <= 1 {
        return (best_value, best);
    }

    let starts = coefficient_starts(members.len(), budget, salt, best_slot);
    let mut current: Option<Vec<f64>> = None;
    for round in 0..6 {
        let problem = FamilyProblem::new(setup, kind, members, &choice);
        let run_starts = match &current {
            Some(a) if round > 0 => vec![a.clone()],
            _ => starts.clone(),
        };
        let (outcome, _, _) = multistart(&problem, run_starts, budget.iterations, budget.tolerance);
        let Some((_, o)) = outcome else { break };
        if o.value > best_value {
            best_value = o.value;
            best = assignment(setup, members, &o.x, &choice);
        }
        // re-pick companions one cube at a time for the current coefficients
        let mut changed = false;
        let mut value = o.value;
        for (slot, &c) in members.iter().enumerate() {
            if o.x[slot] == 0.0 || setup.cubes[c].candidates.len() < 2 {
                continue;
            }
            let keep = choice[c];
            for k in 0..setup.cubes[c].candidates.len() {
                if k == keep {
                    continue;
                }
                choice[c] = k;
                let v = FamilyProblem::new(setup, kind, members, &choice).value(&o.x);
                if v > value * (1.0 + 1e-12) {
                    value = v;
                    changed = true;
                } else {
                    choice[c] = keep;
                }
                if choice[c] == k {
                    break;
                }
            }
        }
        if value > best_value {
            best_value = value;
            best = assignment(setup, members, &o.x, &choice);
        }
        if !changed {
            break;
        }
        current = Some(o.x);
    }
    (best_value, best)
}

/// Maximal 2-Carleson subfamilies of the given cubes, by depth-first search.
/// Returns the families found and whether the enumeration was exhaustive.
fn carleson_families(setup: &Setup, limit: usize) -> (Vec<Vec<usize>>, bool) {
    let lat = setup.src.lattice();
    let n = setup.cubes.len();
    let ids: Vec<CubeId> = setup.cubes.iter().map(|c| c.cube).collect();
    let mass: Vec<f64> = ids.iter().map(|&q| setup.src.mass(q)).collect();
    let fits = |family: &[usize], c: usize| -> bool {
        let mut with: Vec<usize> = family.to_vec();
        with.push(c);
        with.iter().all(|&outer| {
            let sum: f64 = with
                .iter()
                .filter(|&&inner| lat.contains(ids[outer], ids[inner]))
                .map(|&inner| mass[inner])
                .sum();
            sum <= 2.0 * mass[outer] * (1.0 + 1e-12)
        })
    };
    let mut found = Vec::new();
    let mut complete = true;
    let mut family = Vec::new();
    fn dfs(
        at: usize,
        n: usize,
        family: &mut Vec<usize>,
        fits: &dyn Fn(&[usize], usize) -> bool,
        found: &mut Vec<Vec<usize>>,
        limit: usize,
        complete: &mut bool,
    ) {
        if found.len() >= limit {
            *complete = false;
            return;
        }
        if at == n {
            if (0..n).all(|c| family.contains(&c) || !fits(family, c)) {
                found.push(family.clone());
            }
            return;
        }
        if fits(family, at) {
            family.push(at);
            dfs(at + 1, n, family, fits, found, limit, complete);
            family.pop();
        }
        dfs(at + 1, n, family, fits, found, limit, complete);
    }
    dfs(0, n, &mut family, &fits, &mut found, limit.max(1), &mut complete);
    (found, complete)
}

/// Square-function testing constant
/// `sup ‖(Σ (1_{R(Q)} T a_Q 1_Q)²)^{1/2}‖_{L^t} / ‖(Σ (a_Q 1_Q)²)^{1/2}‖_{L^s}`.
pub fn square_testing_constant(
    op: &TestedOperator,
    mu: &Measure,
    nu: &Measure,
    e: ExponentPair,
    dir: Direction,
    policy: FamilyPolicy,
    budget: &Budget,
) -> Result<TestingConstant> {
    let setup = Setup::new(op, mu, nu, e, dir)?;
    family_constant(&setup, Aggregate::Square, policy, budget)
}

fn family_constant(setup: &Setup, kind: Aggregate, policy: FamilyPolicy, budget: &Budget) -> Result<TestingConstant> {
    let n = setup.cubes.len();
    if n == 0 {
        return Ok(TestingConstant::zero());
    }
    let (families, complete) = match policy {
        FamilyPolicy::AllSubfamilies => (vec![(0..n).collect::<Vec<_>>()], true),
        FamilyPolicy::CarlesonOnly => carleson_families(setup, budget.families),
    };
    let mut best = TestingConstant::zero();
    best.families = families.len();
    best.complete = complete;
    // every singleton is an admissible family under both policies
    for c in 0..n {
        let (v, w) = optimize_family(setup, kind, &[c], budget, c as u64);
        if v > best.value {
            best.value = v;
            best.witness = w;
        }
    }
    for (idx, members) in families.iter().enumerate() {
        if kind == Aggregate::Rademacher && members.len() > RANDOMIZED_MAX_CUBES {
            return Err(Error::TooLarge(format!(
                "{} cubes exceed the sign enumeration bound {RANDOMIZED_MAX_CUBES}",
                members.len()
            )));
        }
        let (v, w) = optimize_family(setup, kind, members, budget, 1000 + idx as u64);
        if v > best.value {
            best.value = v;
            best.witness = w;
        }
    }
    Ok(best)
}

/// Largest family for exhaustive sign enumeration.
pub const RANDOMIZED_MAX_CUBES: usize = 12;

/// Randomized-sign testing constant in moment form,
/// `(E‖Σ ε_Q a_Q 1_{R(Q)} T 1_Q‖_t^t)^{1/t} / (E‖Σ ε_Q a_Q 1_Q‖_s^s)^{1/s}`,
/// with all signs enumerated.
pub fn randomized_testing_constant(
    op: &TestedOperator,
    mu: &Measure,
    nu: &Measure,
    e: ExponentPair,
    dir: Direction,
    policy: FamilyPolicy,
    budget: &Budget,
) -> Result<TestingConstant> {
    debug_assert!(RANDOMIZED_MAX_CUBES <= MAX_SIGNS);
    let setup = Setup::new(op, mu, nu, e, dir)?;
    family_constant(&setup, Aggregate::Rademacher, policy, budget)
}

/// One instance of an equivalence campaign.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestingReport {
    pub seed: u64,
    pub n: usize,
    pub depth: usize,
    pub p: f64,
    pub q: f64,
    pub sawyer_direct: f64,
    pub sawyer_adjoint: f64,
    pub square_direct: f64,
    pub square_adjoint: f64,
    pub norm: f64,
    /// Whether `norm` is exact (singular values) rather than a lower bound.
    pub norm_exact: bool,
    /// `‖T‖/(𝒯 + 𝒯*)`, zero when both constants vanish.
    pub sufficiency_ratio: f64,
    /// `𝒯/‖T‖`, zero when `‖T‖ = 0`.
    pub necessity_ratio: f64,
    /// `𝒯_S ≤ ‖T‖(1 + 1e-6)` in both directions (checked when `norm_exact`).
    pub sawyer_below_norm: bool,
    /// `𝒯_S ≤ 𝒯` in both directions.
    pub order_ok: bool,
    /// At `p = q = 2`: `|𝒯 − 𝒯_S| ≤ 1e-6 max(1, 𝒯_S)` in both directions.
    pub collapse_ok: Option<bool>,
    pub complete: bool,
    pub alarm: bool,
}

impl TestingReport {
    /// Hard invariant failures (alarms are not failures).
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.order_ok {
            out.push("order");
        }
        if self.collapse_ok == Some(false) {
            out.push("l2-collapse");
        }
        if self.norm_exact && !self.sawyer_below_norm {
            out.push("single-cube-necessity");
        }
        out
    }
}

/// All constants of one instance.
pub fn testing_report(
    op: &TestedOperator,
    mu: &Measure,
    nu: &Measure,
    e: ExponentPair,
    policy: FamilyPolicy,
    budget: &Budget,
    alarm: f64,
) -> Result<(TestingReport, NormEstimate)> {
    let general = op.general();
    let norm = operator_norm(&general, mu, nu, e, budget)?;
    let sd = sawyer_constant(op, mu, nu, e, Direction::Direct)?;
    let sa = sawyer_constant(op, mu, nu, e, Direction::Adjoint)?;
    let td = square_testing_constant(op, mu, nu, e, Direction::Direct, policy, budget)?;
    let ta = square_testing_constant(op, mu, nu, e, Direction::Adjoint, policy, budget)?;
    let total = td.value + ta.value;
    let sufficiency_ratio = if total > 0.0 { norm.value / total } else { 0.0 };
    let necessity_ratio = if norm.value > 0.0 { td.value / norm.value } else { 0.0 };
    let order_ok = sd.value <= td.value + 1e-9 && sa.value <= ta.value + 1e-9;
    let collapse_ok = e.is_hilbert().then(|| {
        (td.value - sd.value).abs() <= 1e-6 * sd.value.max(1.0)
            && (ta.value - sa.value).abs() <= 1e-6 * sa.value.max(1.0)
    });
    let bound = norm.value * (1.0 + 1e-6) + 1e-12;
    let lat = mu.lattice();
    let report = TestingReport {
        seed: budget.seed,
        n: lat.dim(),
        depth: lat.depth(),
        p: e.p.get(),
        q: e.q.get(),
        sawyer_direct: sd.value,
        sawyer_adjoint: sa.value,
        square_direct: td.value,
        square_adjoint: ta.value,
        norm: norm.value,
        norm_exact: norm.upper_bound,
        sufficiency_ratio,
        necessity_ratio,
        sawyer_below_norm: sd.value <= bound && sa.value <= bound,
        order_ok,
        collapse_ok,
        complete: td.complete && ta.complete,
        alarm: sufficiency_ratio > alarm,
    };
    Ok((report, norm))
}

/// Summary of a campaign.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquivalenceSummary {
    pub trials: usize,
    pub min_ratio: f64,
    pub median_ratio: f64,
    pub max_ratio: f64,
    pub alarm_threshold: f64,
    pub alarms: Vec<u64>,
    pub failures: Vec<(u64, String)>,
    pub incomplete: Vec<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub header: String,
    pub rows: Vec<TestingReport>,
    pub summary: EquivalenceSummary,
}

pub const DEFAULT_ALARM: f64 = 10.0;

pub const MODEL_HEADER: &str = "all suprema are taken over the cubes of the finite truncated lattice";

/// Summarizes per-instance reports.
pub fn summarize(rows: &[TestingReport], alarm: f64) -> EquivalenceSummary {
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.sufficiency_ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let median = if ratios.is_empty() {
        0.0
    } else if ratios.len() % 2 == 1 {
        ratios[ratios.len() / 2]
    } else {
        0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2])
    };
    EquivalenceSummary {
        trials: rows.len(),
        min_ratio: ratios.first().copied().unwrap_or(0.0),
        median_ratio: median,
        max_ratio: ratios.last().copied().unwrap_or(0.0),
        alarm_threshold: alarm,
        alarms: rows.iter().filter(|r| r.alarm).map(|r| r.seed).collect(),
        failures: rows
            .iter()
            .flat_map(|r| r.failures().into_iter().map(move |f| (r.seed, f.to_string())))
            .collect(),
        incomplete: rows.iter().filter(|r| !r.complete).map(|r| r.seed).collect(),
    }
}

/// One depth of a gap search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapRow {
    pub depth: usize,
    pub candidates: usize,
    /// Best `‖T‖/(𝒯_S + 𝒯*_S)` found at this depth.
    pub best_ratio: f64,
    /// Best over all depths so far.
    pub running_best: f64,
    pub best_seed: u64,
    pub best_lambda: Vec<(Cube, f64)>,
}

/// `‖T‖/(𝒯_S + 𝒯*_S)` of one instance, zero when both Sawyer constants vanish.
pub fn sawyer_gap(op: &TestedOperator, mu: &Measure, nu: &Measure, e: ExponentPair, budget: &Budget) -> Result<f64> {
    let norm = operator_norm(&op.general(), mu, nu, e, budget)?.value;
    let s = sawyer_constant(op, mu, nu, e, Direction::Direct)?.value
        + sawyer_constant(op, mu, nu, e, Direction::Adjoint)?.value;
    Ok(if s > 0.0 { norm / s } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Positive dyadic operators tested on 2-Carleson families.
    PositiveThm31,
    /// Haar multipliers tested on all subfamilies with companions `R(Q)`.
    WellLocalizedThm43,
}

/// Runs `trials` seeded instances from `base` (seeds `base.seed + i`) and
/// records every constant.
pub fn equivalence_experiment(
    kind: ExperimentKind,
    base: &GenConfig,
    e: ExponentPair,
    trials: usize,
    budget: &Budget,
    alarm: f64,
) -> Result<EquivalenceReport> {
    let (operator_kind, policy) = match kind {
        ExperimentKind::PositiveThm31 => (OperatorKind::Positive, FamilyPolicy::CarlesonOnly),
        ExperimentKind::WellLocalizedThm43 => (OperatorKind::Haar, FamilyPolicy::AllSubfamilies),
    };
    if base.depth > 4 || !(1..=2).contains(&base.n) {
        return Err(Error::domain("experiments run on n = 1 or 2 and depth at most 4"));
    }
    let mut rows = Vec::with_capacity(trials);
    for i in 0..trials {
        let cfg = GenConfig {
            operator_kind,
            p: e.p.get(),
            q: e.q.get(),
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        };
        let inst = gen(&cfg)?.validate()?;
        let b = Budget {
            seed: cfg.seed,
            ..budget.clone()
        };
        let (row, _) = testing_report(&inst.operator, &inst.mu, &inst.nu, e, policy, &b, alarm)?;
        rows.push(row);
    }
    let summary = summarize(&rows, alarm);
    Ok(EquivalenceReport {
        header: MODEL_HEADER.to_string(),
        rows,
        summary,
    })
}

/// Configuration of a gap search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapConfig {
    pub max_depth: usize,
    pub weight_law: WeightLaw,
    /// Random instances drawn per depth.
    pub candidates: usize,
    /// Mutation rounds applied to the best instance of each depth.
    pub mutations: usize,
    pub seed: u64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            max_depth: 4,
            weight_law: WeightLaw::LogUniform,
            candidates: 8,
            mutations: 8,
            seed: 0,
        }
    }
}

fn gap_of(bundle: &InstanceBundle, budget: &Budget) -> Result<f64> {
    let inst = bundle.validate()?;
    sawyer_gap(&inst.operator, &inst.mu, &inst.nu, inst.exponents, budget)
}

fn mutate(bundle: &InstanceBundle, rng: &mut ChaCha8Rng) -> InstanceBundle {
    let mut out = bundle.clone();
    for l in &mut out.operator.lambda {
        l.value *= rng.gen_range(0.5..2.0);
        if rng.gen_bool(0.1) {
            l.value = -l.value;
        }
    }
    for m in out.mu.iter_mut().chain(out.nu.iter_mut()) {
        if *m > 0.0 {
            *m = (*m * rng.gen_range(0.25f64..4.0)).clamp(1e-6, 1e6);
        }
    }
    out
}

/// Random and mutation search over Haar multipliers for large
/// `‖T‖/(𝒯_S + 𝒯*_S)`, depth by depth. Exploratory only.
pub fn gap_search(e: ExponentPair, config: &GapConfig, budget: &Budget) -> Result<Vec<GapRow>> {
    if config.max_depth == 0 || config.max_depth > 4 || config.candidates == 0 {
        return Err(Error::domain(
            "gap search needs 1 ≤ max_depth ≤ 4 and at least one candidate",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::new();
    let mut running: f64 = 0.0;
    for depth in 1..=config.max_depth {
        let mut best: Option<(f64, InstanceBundle)> = None;
        let mut evaluated = 0;
        for _ in 0..config.candidates {
            let seed = rng.gen::<u64>();
            let bundle = gen(&GenConfig {
                n: 1,
                depth,
                weight_law: config.weight_law,
                operator_kind: OperatorKind::Haar,
                sparsity: 0.5,
                p: e.p.get(),
                q: e.q.get(),
                seed,
            })?;
            let v = gap_of(&bundle, budget)?;
            evaluated += 1;
            if best.as_ref().map_or(true, |(b, _)| v > *b) {
                best = Some((v, bundle));
            }
        }
        let (mut best_value, mut best_bundle) = best.expect("at least one candidate");
        for _ in 0..config.mutations {
            let cand = mutate(&best_bundle, &mut rng);
            let v = gap_of(&cand, budget)?;
            evaluated += 1;
            if v > best_value {
                best_value = v;
                best_bundle = cand;
            }
        }
        running = running.max(best_value);
        rows.push(GapRow {
            depth,
            candidates: evaluated,
            best_ratio: best_value,
            running_best: running,
            best_seed: best_bundle.seed,
            best_lambda: best_bundle
                .operator
                .lambda
                .iter()
                .map(|l| (l.cube.clone(), l.value))
                .collect(),
        });
    }
    Ok(rows)
}
