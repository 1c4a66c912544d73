use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twoweight::instance::{gen as gen_bundle, Instance, InstanceBundle, WeightLaw};
use twoweight::norms::{norm_bruteforce, norm_l2_exact, norm_lplq_ascent, operator_norm, Budget};
use twoweight::testing::{
    gap_search, summarize, testing_report, FamilyPolicy, GapConfig, TestedOperator, TestingReport, MODEL_HEADER,
};
use twoweight::ExponentPair;

use crate::report::{checks_csv, emit, versioned_json, write_atomic, CheckRow, Status};
use crate::{budget_from, suites, Common, Failure, GenArgs, NormMethod, PolicyArg, Suite};

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

pub fn gen(common: &Common, args: &GenArgs, count: usize) -> Result<(), Failure> {
    budget_from(common)?;
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let bundles = (0..count as u64)
        .map(|i| gen_bundle(&args.config(common.seed.wrapping_add(i))).map_err(usage))
        .collect::<Result<Vec<_>, _>>()?;
    if count == 1 {
        let text = bundles[0].to_json().map_err(anyhow::Error::from)? + "\n";
        emit(common.out.as_deref(), &text)?;
        return Ok(());
    }
    let dir = common
        .out
        .as_deref()
        .ok_or_else(|| usage("--out DIR is required with --count > 1"))?;
    for b in &bundles {
        let text = b.to_json().map_err(anyhow::Error::from)? + "\n";
        write_atomic(&dir.join(format!("instance-{}.json", b.seed)), text.as_bytes())?;
    }
    Ok(())
}

/// A validated bundle and where it came from.
struct Loaded {
    source: String,
    instance: Instance,
}

fn bundle_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn load(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let instance = InstanceBundle::from_json(&text)
        .and_then(|b| b.validate())
        .with_context(|| format!("{}", path.display()))?;
    Ok(Loaded {
        source: path.display().to_string(),
        instance,
    })
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    suite: &'a str,
    header: &'a str,
    budget: &'a Budget,
    checks: usize,
    failures: usize,
    warnings: Vec<String>,
    rows: &'a [CheckRow],
    #[serde(skip_serializing_if = "Option::is_none")]
    instances: Option<&'a [TestingReport]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<twoweight::testing::EquivalenceSummary>,
}

pub fn verify(
    common: &Common,
    suite: Suite,
    inputs: &[PathBuf],
    trials: usize,
    args: &GenArgs,
    alarm: f64,
) -> Result<(), Failure> {
    let budget = budget_from(common)?;
    let loaded: Vec<Loaded> = if inputs.is_empty() {
        if trials == 0 {
            return Err(usage("no inputs and --trials 0"));
        }
        let mut args = args.clone();
        match suite {
            Suite::Thm31 => args.operator_kind = crate::KindArg::Positive,
            Suite::Thm43 => args.operator_kind = crate::KindArg::Haar,
            _ => {}
        }
        (0..trials as u64)
            .map(|i| {
                let seed = common.seed.wrapping_add(i);
                let instance = gen_bundle(&args.config(seed))
                    .and_then(|b| b.validate())
                    .map_err(usage)?;
                Ok(Loaded {
                    source: format!("gen:{seed}"),
                    instance,
                })
            })
            .collect::<Result<_, Failure>>()?
    } else {
        // every bundle is validated before anything is computed
        bundle_files(inputs)?.iter().map(|p| load(p)).collect::<Result<_>>()?
    };

    let policy = match suite {
        Suite::Thm31 => FamilyPolicy::CarlesonOnly,
        _ => FamilyPolicy::AllSubfamilies,
    };
    let results: Vec<(Vec<CheckRow>, Option<TestingReport>)> = loaded
        .par_iter()
        .map(|l| -> Result<_> {
            let out = match suite {
                Suite::Core => (suites::core(&l.instance, &l.source)?, None),
                Suite::Stopping => (suites::stopping(&l.instance, &l.source, &budget)?, None),
                Suite::Thm31 | Suite::Thm43 => {
                    let (rows, rep) = suites::testing(&l.instance, &l.source, policy, &budget, alarm)?;
                    (rows, Some(rep))
                }
            };
            Ok(out)
        })
        .collect::<Result<_>>()
        .with_context(|| "running suite")?;

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (r, rep) in results {
        rows.extend(r);
        reports.extend(rep);
    }
    let failures = rows.iter().filter(|r| r.status == Status::Fail).count();
    let warnings: Vec<String> = rows
        .iter()
        .filter(|r| r.status == Status::Warn)
        .map(|r| format!("{} {}: {} ({})", r.source, r.check, r.value, r.detail))
        .collect();
    let name = match suite {
        Suite::Core => "core",
        Suite::Stopping => "stopping",
        Suite::Thm31 => "thm31",
        Suite::Thm43 => "thm43",
    };
    let thm = matches!(suite, Suite::Thm31 | Suite::Thm43);
    let report = VerifyReport {
        suite: name,
        header: MODEL_HEADER,
        budget: &budget,
        checks: rows.len(),
        failures,
        warnings: warnings.clone(),
        rows: &rows,
        instances: thm.then_some(reports.as_slice()),
        summary: thm.then(|| summarize(&reports, alarm)),
    };
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    write_atomic(&dir.join(format!("verify-{name}.csv")), &checks_csv(&rows)?)?;
    write_atomic(
        &dir.join(format!("verify-{name}.json")),
        versioned_json(&report)?.as_bytes(),
    )?;

    for w in &warnings {
        eprintln!("warning: {w}");
    }
    for r in rows.iter().filter(|r| r.status == Status::Fail) {
        eprintln!(
            "FAIL {} {}: {} (limit {:?}) {}",
            r.source, r.check, r.value, r.limit, r.detail
        );
    }
    eprintln!(
        "{name}: {} bundles, {} checks, {failures} failures, {} warnings",
        loaded.len(),
        rows.len(),
        warnings.len()
    );
    if failures > 0 {
        Err(Failure::Invariants(failures))
    } else {
        Ok(())
    }
}

pub fn norm(common: &Common, input: &Path, method: NormMethod, grid: usize) -> Result<(), Failure> {
    let budget = budget_from(common)?;
    let l = load(input)?;
    let inst = &l.instance;
    let spec = inst.operator.general();
    let e = inst.exponents;
    let text = match method {
        NormMethod::Bruteforce => {
            let out = norm_bruteforce(&spec, &inst.mu, &inst.nu, e, grid).map_err(usage)?;
            let upper = out.upper();
            versioned_json(serde_json::json!({
                "source": l.source,
                "p": e.p.get(),
                "q": e.q.get(),
                "method": "bruteforce",
                "value": out.refined.value.max(out.grid.value),
                "grid_value": out.grid.value,
                "refined_value": out.refined.value,
                "upper": if upper.is_finite() { Some(upper) } else { None },
                "delta": out.delta,
                "resolution": grid,
                "witness": out.refined.witness,
            }))?
        }
        _ => {
            let est = match method {
                NormMethod::Auto => operator_norm(&spec, &inst.mu, &inst.nu, e, &budget),
                NormMethod::Svd if !e.is_hilbert() => return Err(usage("svd needs p = q = 2")),
                NormMethod::Svd => norm_l2_exact(&spec, &inst.mu, &inst.nu),
                _ => norm_lplq_ascent(&spec, &inst.mu, &inst.nu, e, &budget),
            }
            .map_err(anyhow::Error::from)?;
            #[derive(Serialize)]
            struct Out<'a> {
                source: &'a str,
                p: f64,
                q: f64,
                #[serde(flatten)]
                estimate: &'a twoweight::norms::NormEstimate,
            }
            versioned_json(Out {
                source: &l.source,
                p: e.p.get(),
                q: e.q.get(),
                estimate: &est,
            })?
        }
    };
    emit(common.out.as_deref(), &text)?;
    Ok(())
}

pub fn constants(common: &Common, input: &Path, policy: PolicyArg, alarm: f64) -> Result<(), Failure> {
    let budget = budget_from(common)?;
    let l = load(input)?;
    let inst = &l.instance;
    let policy = match (policy, &inst.operator) {
        (PolicyArg::AllSubfamilies, _) => FamilyPolicy::AllSubfamilies,
        (PolicyArg::CarlesonOnly, _) => FamilyPolicy::CarlesonOnly,
        (PolicyArg::Auto, TestedOperator::Positive(_)) => FamilyPolicy::CarlesonOnly,
        (PolicyArg::Auto, _) => FamilyPolicy::AllSubfamilies,
    };
    let (report, norm) = testing_report(
        &inst.operator,
        &inst.mu,
        &inst.nu,
        inst.exponents,
        policy,
        &budget,
        alarm,
    )
    .map_err(anyhow::Error::from)?;
    let text = versioned_json(serde_json::json!({
        "source": l.source,
        "header": MODEL_HEADER,
        "policy": policy,
        "norm_method": norm.method,
        "report": report,
        "norm_witness": norm.witness,
    }))?;
    emit(common.out.as_deref(), &text)?;
    if report.alarm {
        eprintln!(
            "warning: sufficiency ratio {} exceeds alarm {alarm}",
            report.sufficiency_ratio
        );
    }
    Ok(())
}

/// Optional fields of a search configuration file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchFile {
    #[serde(default)]
    v: Option<u32>,
    p: Option<f64>,
    q: Option<f64>,
    max_depth: Option<usize>,
    weight_law: Option<WeightLaw>,
    candidates: Option<usize>,
    mutations: Option<usize>,
}

pub struct SearchOverrides {
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub max_depth: Option<usize>,
    pub candidates: Option<usize>,
    pub mutations: Option<usize>,
    pub weight_law: Option<WeightLaw>,
}

pub fn search(common: &Common, config: Option<&Path>, o: SearchOverrides) -> Result<(), Failure> {
    let budget = budget_from(common)?;
    let file = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            if text.trim().is_empty() {
                return Err(usage(format!("{}: empty search config", path.display())));
            }
            let f: SearchFile = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            if f.v.is_some_and(|v| v != 1) {
                return Err(usage(format!("{}: unsupported schema version", path.display())));
            }
            f
        }
        None => SearchFile::default(),
    };
    let p =
        o.p.or(file.p)
            .ok_or_else(|| usage("empty search config: give p (and optionally q) with --config or --p"))?;
    let q = o.q.or(file.q).unwrap_or(p);
    let e = ExponentPair::new(p, q).map_err(usage)?;
    let defaults = GapConfig::default();
    let cfg = GapConfig {
        max_depth: o.max_depth.or(file.max_depth).unwrap_or(defaults.max_depth),
        weight_law: o.weight_law.or(file.weight_law).unwrap_or(defaults.weight_law),
        candidates: o.candidates.or(file.candidates).unwrap_or(defaults.candidates),
        mutations: o.mutations.or(file.mutations).unwrap_or(defaults.mutations),
        seed: common.seed,
    };
    if cfg.max_depth == 0 || cfg.max_depth > 4 || cfg.candidates == 0 {
        return Err(usage("search needs 1 <= max_depth <= 4 and at least one candidate"));
    }
    let rows = gap_search(e, &cfg, &budget).map_err(anyhow::Error::from)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "depth",
        "candidates",
        "best_ratio",
        "running_best",
        "best_seed",
        "p",
        "q",
        "best_lambda",
    ])
    .map_err(anyhow::Error::from)?;
    for r in &rows {
        let lambda: Vec<String> = r.best_lambda.iter().map(|(c, v)| format!("{c}={v}")).collect();
        w.write_record([
            r.depth.to_string(),
            r.candidates.to_string(),
            format!("{:?}", r.best_ratio),
            format!("{:?}", r.running_best),
            r.best_seed.to_string(),
            p.to_string(),
            q.to_string(),
            lambda.join(";"),
        ])
        .map_err(anyhow::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    emit(common.out.as_deref(), &String::from_utf8_lossy(&bytes))?;
    Ok(())
}
