//! Operator norms `L^p(μ) → L^q(ν)`.
//!
//! Every estimate is reduced to an unweighted problem on the positive-mass
//! leaves: with `u_i = μ_i^{1/p} f_i` and `B_ji = ν_j^{1/q} K_ji μ_i^{1/p'}`
//! the ratio `‖Tf‖_q/‖f‖_p` becomes `‖Bu‖_q/‖u‖_p`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::ExponentPair;
use crate::function::StepFunction;
use crate::martingale::lp_norm_unchecked;
use crate::measure::Measure;
use crate::operators::GeneralOperatorSpec;

/// Smoothing of `|x|^{s-2} x` inside gradients.
pub(crate) const SMOOTHING: f64 = 1e-12;

/// Search effort for the optimization-based estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Budget {
    /// Seeded random starts, in addition to the structured ones.
    pub restarts: usize,
    /// Iteration cap per start.
    pub iterations: usize,
    pub seed: u64,
    /// Restrict the search to `f ≥ 0`.
    pub nonnegative: bool,
    /// Relative improvement below which a start counts as converged.
    pub tolerance: f64,
    /// Cap on enumerated cube families in the testing constants.
    pub families: usize,
    /// Additional starting functions (on the source side).
    #[serde(skip)]
    pub extra_starts: Vec<StepFunction>,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            restarts: 16,
            iterations: 3000,
            seed: 0,
            nonnegative: false,
            tolerance: 1e-14,
            families: 256,
            extra_starts: Vec::new(),
        }
    }
}

impl Budget {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Svd,
    Ascent,
    Bruteforce,
}

/// A norm value together with a function attaining it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub method: Method,
    pub witness: StepFunction,
    pub restarts: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Only the singular value computation is an upper bound as well.
    pub upper_bound: bool,
    /// Value of the dual problem when it was run.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dual_value: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub diagnostics: Vec<String>,
}

/// `‖T f‖_{L^q(ν)} / ‖f‖_{L^p(μ)}`, zero when `‖f‖_p = 0`.
pub fn ratio(spec: &GeneralOperatorSpec, f: &StepFunction, mu: &Measure, nu: &Measure, e: ExponentPair) -> f64 {
    let den = lp_norm_unchecked(f.values(), e.p.get(), mu);
    if den == 0.0 {
        return 0.0;
    }
    lp_norm_unchecked(spec.apply(f, mu).values(), e.q.get(), nu) / den
}

/// The ratio of the estimate's witness, recomputed from scratch.
pub fn certify(est: &NormEstimate, spec: &GeneralOperatorSpec, mu: &Measure, nu: &Measure, e: ExponentPair) -> f64 {
    ratio(spec, &est.witness, mu, nu, e)
}

/// Reduced matrix on the positive-mass leaves.
struct Reduced {
    b: Vec<f64>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl Reduced {
    fn new(spec: &GeneralOperatorSpec, mu: &Measure, nu: &Measure, e: ExponentPair) -> Self {
        let rows: Vec<usize> = nu.support();
        let cols: Vec<usize> = mu.support();
        let p_conj = e.p.conjugate().get();
        let q = e.q.get();
        let mut b = Vec::with_capacity(rows.len() * cols.len());
        for &j in &rows {
            let s = nu.leaf(j).powf(1.0 / q);
            for &i in &cols {
                b.push(s * spec.entry(j, i) * mu.leaf(i).powf(1.0 / p_conj));
            }
        }
        Self { b, rows, cols }
    }

    /// `f_i = u_i / μ_i^{1/p}` on the support, zero elsewhere.
    fn lift(&self, u: &[f64], mu: &Measure, p: f64, k: usize, comp: usize) -> StepFunction {
        let mut f = StepFunction::zeros(mu.lattice().num_leaves());
        for (c, &i) in self.cols.iter().enumerate() {
            f.values_mut()[i] = u[c * k + comp] / mu.leaf(i).powf(1.0 / p);
        }
        f
    }

    fn descend(&self, f: &StepFunction, mu: &Measure, p: f64) -> Vec<f64> {
        self.cols
            .iter()
            .map(|&i| f.value(i) * mu.leaf(i).powf(1.0 / p))
            .collect()
    }
}

/// A scale-invariant ratio to be maximized.
pub(crate) trait RatioProblem: Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
    /// Rescales `x` onto the constraint surface; `false` if `x` is degenerate.
    fn normalize(&self, x: &mut [f64]) -> bool;
    fn nonnegative(&self) -> bool;
    fn power_step(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

pub(crate) struct AscentOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub nonfinite: bool,
}

fn project(problem: &dyn RatioProblem, x: &mut [f64]) -> bool {
    if problem.nonnegative() {
        for v in x.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    problem.normalize(x)
}

/// Projected gradient ascent with backtracking, interleaved with power
/// steps when the problem offers them. Only improving moves are taken.
pub(crate) fn ascend(problem: &dyn RatioProblem, mut x: Vec<f64>, max_iter: usize, tol: f64) -> Option<AscentOutcome> {
    if !project(problem, &mut x) {
        return None;
    }
    let mut value = problem.value(&x);
    if !value.is_finite() {
        return None;
    }
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut step = 0.1;
    let mut nonfinite = false;
    let mut stalls = 0;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let before = value;
        let mut moved = false;
        if let Some(mut y) = problem.power_step(&x) {
            if project(problem, &mut y) {
                let v = problem.value(&y);
                if v.is_finite() && v > value {
                    x = y;
                    value = v;
                    moved = true;
                } else if !v.is_finite() {
                    nonfinite = true;
                }
            }
        }
        if !moved {
            problem.value_and_grad(&x, &mut grad);
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm.is_finite() && gnorm > 0.0 {
                let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let mut t = step;
                while t > 1e-16 {
                    let scale = t * xnorm / gnorm;
                    let mut y: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a + scale * g).collect();
                    if project(problem, &mut y) {
                        let v = problem.value(&y);
                        if v.is_finite() && v > value {
                            x = y;
                            value = v;
                            moved = true;
                            step = (t * 2.0).min(1.0);
                            break;
                        }
                        if !v.is_finite() {
                            nonfinite = true;
                        }
                    }
                    t *= 0.5;
                }
                if !moved {
                    step = 1e-3;
                }
            } else if !gnorm.is_finite() {
                nonfinite = true;
            }
        }
        if !moved || value - before <= tol * value.abs() {
            stalls += 1;
            if stalls >= 4 || !moved {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Some(AscentOutcome {
        x,
        value,
        iterations,
        nonfinite,
    })
}

/// Runs every start to convergence and keeps the best; ties go to the
/// earliest start. Each start is handled independently, so adding starts
/// never lowers the result.
pub(crate) fn multistart(
    problem: &dyn RatioProblem,
    starts: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> (Option<(usize, AscentOutcome)>, usize, usize) {
    let outcomes: Vec<Option<AscentOutcome>> = starts
        .into_par_iter()
        .map(|s| ascend(problem, s, max_iter, tol))
        .collect();
    let iterations = outcomes.iter().flatten().map(|o| o.iterations).sum();
    let nonfinite = outcomes.iter().flatten().filter(|o| o.nonfinite).count();
    let mut best: Option<(usize, AscentOutcome)> = None;
    for (i, o) in outcomes.into_iter().enumerate() {
        if let Some(o) = o {
            if best.as_ref().map_or(true, |(_, b)| o.value > b.value) {
                best = Some((i, o));
            }
        }
    }
    (best, iterations, nonfinite)
}

#[inline]
pub(crate) fn smooth_pow(x2: f64, s: f64) -> f64 {
    // (x² + ε²)^{(s-2)/2}
    (x2 + SMOOTHING * SMOOTHING).powf((s - 2.0) / 2.0)
}

/// `‖(Σ_c (B u_c)²)^{1/2}‖_{ℓ^q} / ‖(Σ_c u_c²)^{1/2}‖_{ℓ^p}` over `k`
/// components; `k = 1` is the scalar norm problem.
pub(crate) struct MixedNormProblem<'a> {
    b: &'a [f64],
    rows: usize,
    cols: usize,
    k: usize,
    p: f64,
    q: f64,
    nonneg: bool,
}

impl MixedNormProblem<'_> {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut w = vec![0.0; self.rows * k];
        for j in 0..self.rows {
            let row = &self.b[j * self.cols..(j + 1) * self.cols];
            for (i, &bji) in row.iter().enumerate() {
                if bji != 0.0 {
                    for c in 0..k {
                        w[j * k + c] += bji * x[i * k + c];
                    }
                }
            }
        }
        w
    }

    fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut h = vec![0.0; self.cols * k];
        for j in 0..self.rows {
            let row = &self.b[j * self.cols..(j + 1) * self.cols];
            for (i, &bji) in row.iter().enumerate() {
                if bji != 0.0 {
                    for c in 0..k {
                        h[i * k + c] += bji * g[j * k + c];
                    }
                }
            }
        }
        h
    }

    fn point_sq(&self, v: &[f64], n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| v[j * self.k..(j + 1) * self.k].iter().map(|a| a * a).sum())
            .collect()
    }

    fn mixed_norm(&self, v: &[f64], n: usize, s: f64) -> f64 {
        self.point_sq(v, n)
            .iter()
            .map(|t| t.powf(s / 2.0))
            .sum::<f64>()
            .powf(1.0 / s)
    }
}

impl RatioProblem for MixedNormProblem<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let den = self.mixed_norm(x, self.cols, self.p);
        if den == 0.0 {
            return 0.0;
        }
        self.mixed_norm(&self.apply(x), self.rows, self.q) / den
    }

    fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.k;
        let w = self.apply(x);
        let s = self.point_sq(&w, self.rows);
        let t = self.point_sq(x, self.cols);
        let num = s.iter().map(|v| v.powf(self.q / 2.0)).sum::<f64>().powf(1.0 / self.q);
        let den = t.iter().map(|v| v.powf(self.p / 2.0)).sum::<f64>().powf(1.0 / self.p);
        if den == 0.0 {
            grad.fill(0.0);
            return 0.0;
        }
        let phi = num / den;
        let mut g = vec![0.0; w.len()];
        if num > 0.0 {
            let scale = num.powf(1.0 - self.q);
            for j in 0..self.rows {
                let f = smooth_pow(s[j], self.q) * scale;
                for c in 0..k {
                    g[j * k + c] = f * w[j * k + c];
                }
            }
        }
        let dn = self.apply_transpose(&g);
        let dscale = den.powf(1.0 - self.p);
        for i in 0..self.cols {
            let f = smooth_pow(t[i], self.p) * dscale;
            for c in 0..k {
                let dd = f * x[i * k + c];
                grad[i * k + c] = dn[i * k + c] / den - num * dd / (den * den);
            }
        }
        phi
    }

    fn normalize(&self, x: &mut [f64]) -> bool {
        let d = self.mixed_norm(x, self.cols, self.p);
        if !(d.is_finite() && d > 0.0) {
            return false;
        }
        x.iter_mut().for_each(|v| *v /= d);
        true
    }

    fn nonnegative(&self) -> bool {
        self.nonneg
    }

    fn power_step(&self, x: &[f64]) -> Option<Vec<f64>> {
        let k = self.k;
        let mut w = self.apply(x);
        let s = self.point_sq(&w, self.rows);
        for j in 0..self.rows {
            let f = smooth_pow(s[j], self.q);
            w[j * k..(j + 1) * k].iter_mut().for_each(|v| *v *= f);
        }
        let mut h = self.apply_transpose(&w);
        let t = self.point_sq(&h, self.cols);
        let pc = self.p / (self.p - 1.0);
        for i in 0..self.cols {
            let f = smooth_pow(t[i], pc);
            h[i * k..(i + 1) * k].iter_mut().for_each(|v| *v *= f);
        }
        Some(h)
    }
}

/// `‖T‖_{L²(μ) → L²(ν)}` as the largest singular value of the reduced matrix.
pub fn norm_l2_exact(spec: &GeneralOperatorSpec, mu: &Measure, nu: &Measure) -> Result<NormEstimate> {
    mu.same_lattice(nu)?;
    let e = ExponentPair::new(2.0, 2.0)?;
    let red = Reduced::new(spec, mu, nu, e);
    let (r, c) = (red.rows.len(), red.cols.len());
    let mut witness = fallback_witness(mu, 2.0);
    let mut value = 0.0;
    if r > 0 && c > 0 {
        let m = DMatrix::from_row_slice(r, c, &red.b);
        let svd = m.svd(false, true);
        let (idx, &sigma) = svd
            .singular_values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        let v_t = svd.v_t.as_ref().expect("requested");
        if sigma > 0.0 {
            let u: Vec<f64> = (0..c).map(|i| v_t[(idx, i)]).collect();
            witness = red.lift(&u, mu, 2.0, 1, 0);
            value = sigma;
        }
    }
    Ok(NormEstimate {
        value,
        method: Method::Svd,
        witness,
        restarts: 0,
        iterations: 0,
        seed: 0,
        upper_bound: true,
        dual_value: None,
        diagnostics: Vec::new(),
    })
}

/// Unit vector on the first positive-mass leaf, or zero for a null measure.
fn fallback_witness(mu: &Measure, p: f64) -> StepFunction {
    let mut f = StepFunction::zeros(mu.lattice().num_leaves());
    if let Some(&i) = mu.support().first() {
        f.values_mut()[i] = mu.leaf(i).powf(-1.0 / p);
    }
    f
}

fn random_starts(n: usize, count: usize, seed: u64, nonneg: bool) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..n)
                .map(|_| {
                    if nonneg {
                        rng.gen_range(0.0..1.0)
                    } else {
                        rng.gen_range(-1.0..1.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Multi-start ascent for `‖T‖_{L^p(μ) → L^q(ν)}`. The result is a certified
/// lower bound; its optimality is heuristic.
pub fn norm_lplq_ascent(
    spec: &GeneralOperatorSpec,
    mu: &Measure,
    nu: &Measure,
    e: ExponentPair,
    budget: &Budget,
) -> Result<NormEstimate> {
    vector_ascent(spec, mu, nu, e, 1, budget).map(|(est, _)| est)
}

/// Norm of `(f_c) ↦ (T f_c)` from `L^p(μ; ℓ²_k)` to `L^q(ν; ℓ²_k)`.
pub fn vector_extension_norm(
    spec: &GeneralOperatorSpec,
    mu: &Measure,
    nu: &Measure,
    e: ExponentPair,
    k: usize,
    budget: &Budget,
) -> Result<(NormEstimate, Vec<StepFunction>)> {
    if k == 0 {
        return Err(Error::domain("vector width must be at least 1"));
    }
    vector_ascent(spec, mu, nu, e, k, budget)
}

fn vector_ascent(
    spec: &GeneralOperatorSpec,
    mu: &Measure,
    nu: &Measure,
    e: ExponentPair,
    k: usize,
    budget: &Budget,
) -> Result<(NormEstimate, Vec<StepFunction>)> {
    mu.same_lattice(nu)?;
    if budget.restarts < 16 {
        return Err(Error::domain(format!(
            "at least 16 random restarts are required, got {}",
            budget.restarts
        )));
    }
    let (p, q) = (e.p.get(), e.q.get());
    let red = Reduced::new(spec, mu, nu, e);
    let (rows, cols) = (red.rows.len(), red.cols.len());
    let problem = MixedNormProblem {
        b: &red.b,
        rows,
        cols,
        k,
        p,
        q,
        nonneg: budget.nonnegative,
    };
    let lat = mu.lattice();

    let mut starts: Vec<Vec<f64>> = Vec::new();
    // structured starts live in component 0; random starts fill every component
    let embed = |u: Vec<f64>| -> Vec<f64> {
        let mut x = vec![0.0; cols * k];
        for (i, v) in u.into_iter().enumerate() {
            x[i * k] = v;
        }
        x
    };
    if cols > 0 && rows > 0 {
        if let Ok(svd) = norm_l2_exact(spec, mu, nu) {
            let u = red.descend(&svd.witness, mu, p);
            starts.push(embed(if budget.nonnegative {
                u.iter().map(|v| v.abs()).collect()
            } else {
                u
            }));
        }
        for c in 0..cols {
            let mut u = vec![0.0; cols];
            u[c] = 1.0;
            starts.push(embed(u));
        }
        for q_id in lat.ids() {
            let ind = StepFunction::indicator(lat, q_id);
            let u = red.descend(&ind, mu, p);
            if u.iter().any(|&v| v != 0.0) {
                starts.push(embed(u));
            }
        }
        for f in &budget.extra_starts {
            starts.push(embed(red.descend(f, mu, p)));
        }
        starts.extend(random_starts(
            cols * k,
            budget.restarts,
            budget.seed,
            budget.nonnegative,
        ));
    }
    let restarts = starts.len();
    let (best, iterations, nonfinite) = multistart(&problem, starts, budget.iterations, budget.tolerance);
    let mut diagnostics = Vec::new();
    if nonfinite > 0 {
        diagnostics.push(format!(
            "{nonfinite} starts met non-finite trial values and were damped"
        ));
    }
    let (value, witness_comps) = match best {
        Some((_, o)) if o.value > 0.0 => {
            let comps: Vec<StepFunction> = (0..k).map(|c| red.lift(&o.x, mu, p, k, c)).collect();
            (o.value, comps)
        }
        _ => {
            let mut comps = vec![StepFunction::zeros(lat.num_leaves()); k];
            comps[0] = fallback_witness(mu, p);
            (0.0, comps)
        }
    };
    let witness = witness_comps[0].clone();
    let est = NormEstimate {
        value,
        method: Method::Ascent,
        witness,
        restarts,
        iterations,
        seed: budget.seed,
        upper_bound: false,
        dual_value: None,
        diagnostics,
    };
    Ok((est, witness_comps))
}

/// The working norm of the experiments: exact at `p = q = 2`, otherwise the
/// primal ascent seeded with the image of the dual optimum, with the dual
/// value recorded alongside.
pub fn operator_norm(
    spec: &GeneralOperatorSpec,
    mu: &Measure,
    nu: &Measure,
    e: ExponentPair,
    budget: &Budget,
) -> Result<NormEstimate> {
    if e.is_hilbert() {
        return norm_l2_exact(spec, mu, nu);
    }
    let adjoint = spec.adjoint();
    let dual = norm_lplq_ascent(&adjoint, nu, mu, e.dual(), budget)?;
    // J_{p'}(T^ν g) is the primal point matched to the dual witness
    let pc = e.p.conjugate().get();
    let image = adjoint.apply(&dual.witness, nu);
    let start = image.map(|v| v.signum() * v.abs().powf(pc - 1.0));
    let mut b = budget.clone();
    b.extra_starts.push(start);
    let mut primal = norm_lplq_ascent(spec, mu, nu, e, &b)?;
    primal.dual_value = Some(dual.value);
    Ok(primal)
}

/// Analytic value and gradient of `f ↦ ‖Tf‖_q/‖f‖_p` in leaf coordinates.
/// Zero-mass leaves get a zero gradient.
pub fn ratio_gradient(
    spec: &GeneralOperatorSpec,
    mu: &Measure,
    nu: &Measure,
    e: ExponentPair,
    f: &StepFunction,
) -> Result<(f64, StepFunction)> {
    mu.same_lattice(nu)?;
    let p = e.p.get();
    let red = Reduced::new(spec, mu, nu, e);
    let problem = MixedNormProblem {
        b: &red.b,
        rows: red.rows.len(),
        cols: red.cols.len(),
        k: 1,
        p,
        q: e.q.get(),
        nonneg: false,
    };
    let u = red.descend(f, mu, p);
    let mut g = vec![0.0; u.len()];
    let value = problem.value_and_grad(&u, &mut g);
    let mut grad = StepFunction::zeros(mu.lattice().num_leaves());
    for (c, &i) in red.cols.iter().enumerate() {
        grad.values_mut()[i] = g[c] * mu.leaf(i).powf(1.0 / p);
    }
    Ok((value, grad))
}

/// Largest leaf count accepted by [`norm_bruteforce`].
pub const BRUTEFORCE_MAX_LEAVES: usize = 6;

/// Outcome of the grid oracle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BruteforceOutcome {
    /// Best value over the grid; a lower bound.
    pub grid: NormEstimate,
    /// `δ = (L/N)^{1/p}`: the true norm is at most `grid/(1 − δ)`.
    pub delta: f64,
    /// Derivative-free refinement of the best grid points; a lower bound.
    pub refined: NormEstimate,
}

impl BruteforceOutcome {
    pub fn upper(&self) -> f64 {
        if self.delta < 1.0 {
            self.grid.value / (1.0 - self.delta)
        } else {
            f64::INFINITY
        }
    }
}

/// Enumerates every sign pattern and every magnitude profile
/// `|u_i|^p = k_i/N` with `Σ k_i = N` on the positive-mass leaves. Grids
/// whose resolution divides `N` are contained in this one.
pub fn norm_bruteforce(
    spec: &GeneralOperatorSpec,
    mu: &Measure,
    nu: &Measure,
    e: ExponentPair,
    grid: usize,
) -> Result<BruteforceOutcome> {
    mu.same_lattice(nu)?;
    let leaves = mu.lattice().num_leaves();
    if leaves > BRUTEFORCE_MAX_LEAVES {
        return Err(Error::TooLarge(format!(
            "{leaves} leaves exceed the brute-force bound {BRUTEFORCE_MAX_LEAVES}"
        )));
    }
    if grid == 0 {
        return Err(Error::domain("grid resolution must be positive"));
    }
    let p = e.p.get();
    let support = mu.support();
    let l = support.len();
    let eval = |t: &[f64], signs: &[f64]| -> f64 {
        let mut f = StepFunction::zeros(leaves);
        for (c, &i) in support.iter().enumerate() {
            f.values_mut()[i] = signs[c] * (t[c] / mu.leaf(i)).powf(1.0 / p);
        }
        ratio(spec, &f, mu, nu, e)
    };
    let to_function = |t: &[f64], signs: &[f64]| -> StepFunction {
        let mut f = StepFunction::zeros(leaves);
        for (c, &i) in support.iter().enumerate() {
            f.values_mut()[i] = signs[c] * (t[c] / mu.leaf(i)).powf(1.0 / p);
        }
        f
    };
    let estimate = |value: f64, witness: StepFunction, iterations: usize| NormEstimate {
        value,
        method: Method::Bruteforce,
        witness,
        restarts: 0,
        iterations,
        seed: 0,
        upper_bound: false,
        dual_value: None,
        diagnostics: Vec::new(),
    };
    if l == 0 {
        let w = StepFunction::zeros(leaves);
        return Ok(BruteforceOutcome {
            grid: estimate(0.0, w.clone(), 0),
            delta: 0.0,
            refined: estimate(0.0, w, 0),
        });
    }

    // keep the few best grid points as refinement seeds
    const SEEDS: usize = 4;
    let mut top: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut counts = vec![0usize; l];
    let mut visited = 0usize;
    let mut signs = vec![1.0; l];
    let mut visit = |counts: &[usize]| {
        let t: Vec<f64> = counts.iter().map(|&k| k as f64 / grid as f64).collect();
        // the overall sign is irrelevant, so the first sign stays +1
        for mask in 0u32..(1u32 << (l - 1)) {
            for c in 1..l {
                signs[c] = if mask >> (c - 1) & 1 == 1 { -1.0 } else { 1.0 };
            }
            let v = eval(&t, &signs);
            visited += 1;
            if top.len() < SEEDS || v > top[top.len() - 1].0 {
                top.push((v, t.clone(), signs.clone()));
                top.sort_by(|a, b| b.0.total_cmp(&a.0));
                top.truncate(SEEDS);
            }
        }
    };
    compositions(grid, 0, &mut counts, &mut visit);

    let (best_value, best_t, best_s) = top[0].clone();
    let grid_est = estimate(best_value, to_function(&best_t, &best_s), visited);
    let delta = (l as f64 / grid as f64).powf(1.0 / p);

    let mut refined_best = (best_value, best_t.clone(), best_s.clone());
    let mut evals = 0usize;
    for (v0, t0, s0) in top {
        let (v, t, s, n) = pattern_search(&eval, v0, t0, s0, 1.0 / grid as f64);
        evals += n;
        if v > refined_best.0 {
            refined_best = (v, t, s);
        }
    }
    let refined = estimate(refined_best.0, to_function(&refined_best.1, &refined_best.2), evals);
    Ok(BruteforceOutcome {
        grid: grid_est,
        delta,
        refined,
    })
}

fn compositions(remaining: usize, at: usize, counts: &mut [usize], visit: &mut impl FnMut(&[usize])) {
    if at + 1 == counts.len() {
        counts[at] = remaining;
        visit(counts);
        return;
    }
    for k in 0..=remaining {
        counts[at] = k;
        compositions(remaining - k, at + 1, counts, visit);
    }
}

/// Compass search over mass transfers `t_i → t_j` and sign flips.
fn pattern_search(
    eval: &impl Fn(&[f64], &[f64]) -> f64,
    mut value: f64,
    mut t: Vec<f64>,
    mut s: Vec<f64>,
    mut h: f64,
) -> (f64, Vec<f64>, Vec<f64>, usize) {
    let l = t.len();
    let mut evals = 0;
    while h > 1e-13 {
        let mut improved = false;
        for c in 0..l {
            s[c] = -s[c];
            let v = eval(&t, &s);
            evals += 1;
            if v > value {
                value = v;
                improved = true;
            } else {
                s[c] = -s[c];
            }
        }
        for i in 0..l {
            for j in 0..l {
                if i == j || t[i] <= 0.0 {
                    continue;
                }
                let d = h.min(t[i]);
                t[i] -= d;
                t[j] += d;
                let v = eval(&t, &s);
                evals += 1;
                if v > value {
                    value = v;
                    improved = true;
                } else {
                    t[i] += d;
                    t[j] -= d;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    (value, t, s, evals)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::lattice::DyadicLattice;

    fn lat(n: usize, d: usize) -> Arc<DyadicLattice> {
        Arc::new(DyadicLattice::new(n, d).unwrap())
    }

    fn pair(p: f64, q: f64) -> ExponentPair {
        ExponentPair::new(p, q).unwrap()
    }

    #[test]
    fn identity_is_an_isometry() {
        let l = lat(1, 2);
        let m = Measure::new(l.clone(), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let id = GeneralOperatorSpec::identity(&m);
        let est = norm_l2_exact(&id, &m, &m).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
        assert!((certify(&est, &id, &m, &m, pair(2.0, 2.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_averaging() {
        // T f = (∫ f dμ) 1 for a probability μ; equality at f = 1
        let l = lat(1, 2);
        let m = Measure::new(l.clone(), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let op = GeneralOperatorSpec::new(l.clone(), vec![vec![1.0; 4]; 4], 2).unwrap();
        assert!((norm_l2_exact(&op, &m, &m).unwrap().value - 1.0).abs() < 1e-12);
        for (p, q) in [(1.5, 1.5), (3.0, 3.0), (2.0, 4.0)] {
            let est = norm_lplq_ascent(&op, &m, &m, pair(p, q), &Budget::default()).unwrap();
            assert!((est.value - 1.0).abs() < 1e-9, "{p} {q} {}", est.value);
        }
    }

    #[test]
    fn zero_operator() {
        let l = lat(1, 2);
        let m = Measure::lebesgue(l.clone());
        let z = GeneralOperatorSpec::zero(l.clone(), 0);
        assert_eq!(norm_l2_exact(&z, &m, &m).unwrap().value, 0.0);
        let est = norm_lplq_ascent(&z, &m, &m, pair(3.0, 1.5), &Budget::default()).unwrap();
        assert_eq!(est.value, 0.0);
        assert!((lp_norm_unchecked(est.witness.values(), 3.0, &m) - 1.0).abs() < 1e-12);
        let bf = norm_bruteforce(&z, &m, &m, pair(3.0, 1.5), 8).unwrap();
        assert_eq!(bf.grid.value, 0.0);
    }

    #[test]
    fn diagonal_bruteforce() {
        let l = lat(1, 1);
        let m = Measure::new(l.clone(), vec![0.5, 0.5]).unwrap();
        // K = diag(a, b)/m_i gives T f = (a f_0, b f_1)
        let op = GeneralOperatorSpec::new(l.clone(), vec![vec![2.0 * 0.7, 0.0], vec![0.0, 2.0 * -1.3]], 0).unwrap();
        let e = pair(4.0, 4.0);
        let mut last = 0.0;
        for n in [4, 8, 16, 32] {
            let bf = norm_bruteforce(&op, &m, &m, e, n).unwrap();
            assert!(bf.grid.value >= last);
            last = bf.grid.value;
            assert!(bf.grid.value <= 1.3 + 1e-12);
            assert!((bf.refined.value - 1.3).abs() < 1e-9);
        }
        assert!((last - 1.3).abs() < 1e-12);
    }

    #[test]
    fn bruteforce_capacity() {
        let l = lat(1, 3);
        let m = Measure::lebesgue(l.clone());
        let z = GeneralOperatorSpec::zero(l, 0);
        assert!(matches!(
            norm_bruteforce(&z, &m, &m, pair(2.0, 2.0), 4),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn restarts_below_sixteen_rejected() {
        let l = lat(1, 1);
        let m = Measure::lebesgue(l.clone());
        let z = GeneralOperatorSpec::zero(l, 0);
        let b = Budget {
            restarts: 3,
            ..Budget::default()
        };
        assert!(norm_lplq_ascent(&z, &m, &m, pair(2.0, 2.0), &b).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let l = lat(1, 2);
        let mu = Measure::new(l.clone(), vec![0.3, 1.1, 0.6, 2.0]).unwrap();
        let nu = Measure::new(l.clone(), vec![1.0, 0.2, 0.5, 0.9]).unwrap();
        let op = GeneralOperatorSpec::new(
            l.clone(),
            (0..4)
                .map(|j| (0..4).map(|i| ((3 * j + i) as f64).sin()).collect())
                .collect(),
            2,
        )
        .unwrap();
        let e = pair(1.7, 3.2);
        let f = StepFunction::new(vec![0.8, -0.4, 1.3, 0.25]);
        let (v, g) = ratio_gradient(&op, &mu, &nu, e, &f).unwrap();
        assert!((v - ratio(&op, &f, &mu, &nu, e)).abs() < 1e-12);
        for i in 0..4 {
            let h = 1e-6;
            let mut a = f.clone();
            a.values_mut()[i] += h;
            let mut b = f.clone();
            b.values_mut()[i] -= h;
            let fd = (ratio(&op, &a, &mu, &nu, e) - ratio(&op, &b, &mu, &nu, e)) / (2.0 * h);
            assert!(
                (fd - g.value(i)).abs() <= 1e-6 * fd.abs().max(1e-3),
                "{i}: {fd} vs {}",
                g.value(i)
            );
        }
    }

    #[test]
    fn vector_extension_width_one_and_hilbert() {
        let l = lat(1, 2);
        let mu = Measure::new(l.clone(), vec![0.3, 1.1, 0.6, 2.0]).unwrap();
        let nu = Measure::new(l.clone(), vec![1.0, 0.2, 0.5, 0.9]).unwrap();
        let op = GeneralOperatorSpec::new(
            l.clone(),
            (0..4)
                .map(|j| (0..4).map(|i| ((j + 2 * i) as f64).cos()).collect())
                .collect(),
            2,
        )
        .unwrap();
        let svd = norm_l2_exact(&op, &mu, &nu).unwrap().value;
        for k in [1, 2, 4] {
            let (est, comps) = vector_extension_norm(&op, &mu, &nu, pair(2.0, 2.0), k, &Budget::default()).unwrap();
            assert!((est.value - svd).abs() <= 1e-6 * svd, "{k}");
            assert_eq!(comps.len(), k);
        }
    }
}
