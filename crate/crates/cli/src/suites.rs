use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twoweight::haar::HaarBasis;
use twoweight::instance::Instance;
use twoweight::martingale::{average, inner, lp_norm, martingale_difference, reconstruct};
use twoweight::norms::{norm_l2_exact, Budget};
use twoweight::operators::{apply_localized, apply_positive, well_localized_check, LocalityStatus};
use twoweight::stopping::{
    carleson_constant, carleson_embedding_constant, principal_cubes, verify_sparse_carleson, CubeFamily,
};
use twoweight::testing::{testing_report, FamilyPolicy, TestedOperator, TestingReport};
use twoweight::{Measure, StepFunction};

use crate::report::{CheckRow, Status};

const TOL: f64 = 1e-9;

fn random_function(len: usize, rng: &mut ChaCha8Rng) -> StepFunction {
    StepFunction::from_fn(len, |_| rng.gen_range(-1.0..1.0))
}

fn reconstruction_error(f: &StepFunction, m: &Measure) -> Result<f64> {
    let back = reconstruct(f, 0, m)?;
    Ok(m.support()
        .into_iter()
        .map(|i| (back.value(i) - f.value(i)).abs())
        .fold(0.0, f64::max))
}

fn haar_error(m: &Measure) -> f64 {
    let one = StepFunction::constant(m.lattice(), 1.0);
    let mut worst: f64 = 0.0;
    for sys in HaarBasis::new(m).iter() {
        for (a, h) in sys.functions.iter().enumerate() {
            worst = worst.max(inner(h, &one, m).abs());
            for (b, g) in sys.functions.iter().enumerate() {
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((inner(h, g, m) - want).abs());
            }
        }
    }
    worst
}

/// `‖f‖_2^2` against `m(root)|⟨f⟩_root|^2 + Σ_Q ‖Δ_Q f‖_2^2`, relative.
fn pythagoras_error(f: &StepFunction, m: &Measure) -> Result<f64> {
    let lat = m.lattice();
    let root = lat.root();
    let mut sum = m.mass(root) * average(f, root, m).powi(2);
    for q in lat.ids().filter(|&q| !lat.is_leaf(q)) {
        let d = martingale_difference(f, q, m)?;
        sum += inner(&d, &d, m);
    }
    let total = lp_norm(f, 2.0, m)?.powi(2);
    Ok((sum - total).abs() / total.max(f64::MIN_POSITIVE))
}

/// Martingale identities, adjoint pairing, linearity, positivity and
/// locality of one bundle.
pub fn core(inst: &Instance, source: &str) -> Result<Vec<CheckRow>> {
    let seed = inst.seed;
    let lat = &inst.lattice;
    let (mu, nu) = (&inst.mu, &inst.nu);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let row = |check: &str, value: f64| CheckRow::new(source, seed, check, value);

    let f = random_function(lat.num_leaves(), &mut rng);
    let recon = reconstruction_error(&f, mu)?.max(reconstruction_error(&f, nu)?);
    rows.push(row("martingale-reconstruction", recon).at_most(TOL, Status::Fail));
    rows.push(row("haar-orthonormality", haar_error(mu).max(haar_error(nu))).at_most(TOL, Status::Fail));
    let pyth = pythagoras_error(&f, mu)?.max(pythagoras_error(&f, nu)?);
    rows.push(row("pythagoras-l2", pyth).at_most(1e-8, Status::Fail));

    let spec = inst.operator.general();
    let adjoint = spec.adjoint();
    let mut pairing: f64 = 0.0;
    for q in lat.ids() {
        let tq = spec.apply(&StepFunction::indicator(lat, q), mu);
        for r in lat.ids() {
            let a = inner(&tq, &StepFunction::indicator(lat, r), nu);
            let b = inner(
                &StepFunction::indicator(lat, q),
                &adjoint.apply(&StepFunction::indicator(lat, r), nu),
                mu,
            );
            pairing = pairing.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    rows.push(row("adjoint-pairing", pairing).at_most(1e-10, Status::Fail));

    let g = random_function(lat.num_leaves(), &mut rng);
    let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let mut comb = f.scale(a);
    comb.add_scaled(b, &g);
    let lhs = spec.apply(&comb, mu);
    let mut rhs = spec.apply(&f, mu).scale(a);
    rhs.add_scaled(b, &spec.apply(&g, mu));
    let scale = rhs.max_abs().max(1.0);
    let lin = lhs
        .values()
        .iter()
        .zip(rhs.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale;
    rows.push(row("linearity", lin).at_most(1e-10, Status::Fail));

    if let TestedOperator::Positive(pos) = &inst.operator {
        let mut worst: f64 = 0.0;
        for q in lat.ids() {
            let ind = StepFunction::indicator(lat, q);
            let full = apply_positive(pos, &ind, mu);
            let local = apply_localized(pos, q, &ind, mu);
            for (x, y) in full.values().iter().zip(local.values()) {
                worst = worst.max(-x).max(y - x);
            }
        }
        rows.push(
            row("positive-localized-domination", worst.max(0.0))
                .at_most(1e-12, Status::Fail)
                .detail("0 <= T_Q 1_Q <= T 1_Q"),
        );
    }

    // Haar multipliers and explicit kernels are expected to be localized at
    // their declared radius; positive operators are recorded only
    let radius = match &inst.operator {
        TestedOperator::Positive(_) => 0,
        TestedOperator::WellLocalized(g) => g.radius(),
    };
    let loc = well_localized_check(&spec, mu, nu, radius, TOL)?;
    let mut loc_row = row("well-localized", loc.max_violation).detail(format!(
        "radius {radius}, {:?}, {} coefficients, {} vacuous pairs{}",
        loc.status,
        loc.checked,
        loc.vacuous_pairs,
        loc.worst
            .as_ref()
            .map(|w| format!(", worst Q={} R={}", lat.cube(w.q), lat.cube(w.r)))
            .unwrap_or_default()
    ));
    loc_row.limit = Some(TOL);
    loc_row.status = match (&inst.operator, loc.status) {
        (TestedOperator::Positive(_), _) => Status::Info,
        (_, LocalityStatus::Fail) => Status::Fail,
        _ => Status::Pass,
    };
    rows.push(loc_row);

    if inst.exponents.is_hilbert() {
        let a = norm_l2_exact(&spec, mu, nu)?.value;
        let b = norm_l2_exact(&adjoint, nu, mu)?.value;
        rows.push(row("l2-norm-duality", (a - b).abs() / a.max(1.0)).at_most(TOL, Status::Fail));
    }
    Ok(rows)
}

/// Principal cubes of a seeded function, their sparse and Carleson
/// properties, and both embedding constants of the resulting family.
pub fn stopping(inst: &Instance, source: &str, budget: &Budget) -> Result<Vec<CheckRow>> {
    let seed = inst.seed;
    let lat = &inst.lattice;
    let mu = &inst.mu;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5707);
    let mut rows = Vec::new();
    let row = |check: &str, value: f64| CheckRow::new(source, seed, check, value);

    let f = StepFunction::from_fn(lat.num_leaves(), |_| rng.gen_range(-6.0f64..2.0).exp());
    let tree = principal_cubes(&f, &CubeFamily::full(lat.clone()), mu);
    let rep = verify_sparse_carleson(&tree, mu, TOL);
    rows.push(
        row("sparse-ratio", rep.sparse_ratio)
            .status(if rep.sparse_ok { Status::Pass } else { Status::Fail })
            .detail(format!("{} principal cubes, need >= 1/2", tree.family().len())),
    );
    rows.push(
        row("carleson-ratio", rep.carleson_ratio)
            .at_most(2.0 + TOL, Status::Fail)
            .status(if rep.carleson_ok { Status::Pass } else { Status::Fail }),
    );

    let p = inst.exponents.p.get();
    let fam = tree.family();
    let c_prime = carleson_constant(fam, mu);
    let c = carleson_embedding_constant(fam, mu, p, budget)?.value;
    let cp = c.powf(p);
    rows.push(
        row("carleson-packing", c_prime)
            .at_most(cp * (1.0 + 1e-6) + 1e-9, Status::Fail)
            .detail(format!("C' against C^p = {cp}")),
    );
    let conv = if c_prime > 0.0 { c / c_prime.powf(1.0 / p) } else { 0.0 };
    let pp = p * p / (p - 1.0);
    let mut converse = row("carleson-converse", if c_prime > 0.0 { c / c_prime } else { 0.0 })
        .detail(format!("C = {c}, C/C'^(1/p) = {conv}, limit p p'"));
    converse.limit = Some(pp);
    converse.status = if c <= pp * c_prime + 1e-9 {
        Status::Pass
    } else {
        Status::Fail
    };
    rows.push(converse);
    Ok(rows)
}

/// All testing constants of one bundle, plus (for explicit kernels and Haar
/// multipliers) the locality check.
pub fn testing(
    inst: &Instance,
    source: &str,
    policy: FamilyPolicy,
    budget: &Budget,
    alarm: f64,
) -> Result<(Vec<CheckRow>, TestingReport)> {
    let seed = inst.seed;
    let b = Budget { seed, ..budget.clone() };
    let (rep, norm) = testing_report(&inst.operator, &inst.mu, &inst.nu, inst.exponents, policy, &b, alarm)?;
    let row = |check: &str, value: f64| CheckRow::new(source, seed, check, value);
    let mut rows = Vec::new();
    let sawyer = rep.sawyer_direct.max(rep.sawyer_adjoint);
    rows.push(
        row(
            "testing-order",
            (rep.sawyer_direct - rep.square_direct).max(rep.sawyer_adjoint - rep.square_adjoint),
        )
        .at_most(1e-9, Status::Fail)
        .detail("max(T_S - T) over both directions"),
    );
    if let Some(ok) = rep.collapse_ok {
        let gap = (rep.square_direct - rep.sawyer_direct)
            .abs()
            .max((rep.square_adjoint - rep.sawyer_adjoint).abs());
        rows.push(
            row("l2-collapse", gap)
                .status(if ok { Status::Pass } else { Status::Fail })
                .detail(format!("limit 1e-6 max(1, T_S), T_S = {sawyer}")),
        );
    }
    let necessity = row("single-cube-necessity", sawyer).detail(format!("norm {} ({:?})", rep.norm, norm.method));
    rows.push(if rep.norm_exact {
        necessity.at_most(rep.norm * (1.0 + 1e-6) + 1e-12, Status::Fail)
    } else {
        necessity.detail(format!(
            "norm {} is a lower bound ({:?}); not checked",
            rep.norm, norm.method
        ))
    });
    rows.push(
        row("sufficiency-ratio", rep.sufficiency_ratio)
            .at_most(alarm, Status::Warn)
            .detail(format!(
                "norm {} / (T {} + T* {})",
                rep.norm, rep.square_direct, rep.square_adjoint
            )),
    );
    if !rep.complete {
        rows.push(
            row("family-enumeration", 0.0)
                .status(Status::Warn)
                .detail("family budget exhausted; constants are best-so-far"),
        );
    }
    if let TestedOperator::WellLocalized(g) = &inst.operator {
        let loc = well_localized_check(g, &inst.mu, &inst.nu, g.radius(), TOL)?;
        let mut r = row("well-localized", loc.max_violation).detail(format!("radius {}, {:?}", g.radius(), loc.status));
        r.limit = Some(TOL);
        r.status = if loc.status == LocalityStatus::Fail {
            Status::Fail
        } else {
            Status::Pass
        };
        rows.push(r);
    }
    Ok((rows, rep))
}
