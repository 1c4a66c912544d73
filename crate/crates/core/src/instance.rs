//! Instance bundles: JSON records of a lattice, two measures, an operator and
//! exponents, plus the seeded generator.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::ExponentPair;
use crate::lattice::{Cube, CubeId, DyadicLattice};
use crate::measure::Measure;
use crate::operators::{GeneralOperatorSpec, HaarMultiplierSpec, PositiveDyadicSpec};
use crate::testing::TestedOperator;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Positive,
    Haar,
    /// Explicit leaf kernel with a declared radius.
    #[serde(rename = "general", alias = "matrix")]
    Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaEntry {
    pub cube: Cube,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorRecord {
    pub kind: OperatorKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<LambdaEntry>,
    /// Row-major kernel, only for `matrix`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Declared locality radius.
    #[serde(default)]
    pub r: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceBundle {
    pub v: u32,
    pub n: usize,
    pub depth: usize,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub operator: OperatorRecord,
    pub p: f64,
    pub q: f64,
    pub seed: u64,
}

/// A validated bundle, ready for computation.
#[derive(Clone, Debug)]
pub struct Instance {
    pub lattice: Arc<DyadicLattice>,
    pub mu: Measure,
    pub nu: Measure,
    pub operator: TestedOperator,
    pub exponents: ExponentPair,
    pub seed: u64,
}

fn measure_field(lat: &Arc<DyadicLattice>, field: &str, masses: &[f64]) -> Result<Measure> {
    Measure::new(lat.clone(), masses.to_vec()).map_err(|e| match e {
        Error::InvalidLeaf { index, reason } => Error::schema(format!("{field}[{index}]"), reason),
        Error::Length { expected, got } => Error::schema(field, format!("expected {expected} leaf masses, got {got}")),
        other => other,
    })
}

fn lambda_map(lat: &DyadicLattice, entries: &[LambdaEntry]) -> Result<BTreeMap<CubeId, f64>> {
    let mut map = BTreeMap::new();
    for (i, entry) in entries.iter().enumerate() {
        let field = format!("operator.lambda[{i}]");
        let id = lat
            .id_of(&entry.cube)
            .ok_or_else(|| Error::schema(&field, format!("cube {} is not in the lattice", entry.cube)))?;
        if !entry.value.is_finite() {
            return Err(Error::schema(field, "coefficient must be finite"));
        }
        if map.insert(id, entry.value).is_some() {
            return Err(Error::schema(field, format!("cube {} listed twice", entry.cube)));
        }
    }
    Ok(map)
}

impl InstanceBundle {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks every field and builds the instance.
    pub fn validate(&self) -> Result<Instance> {
        if self.v != SCHEMA_VERSION {
            return Err(Error::schema("v", format!("unsupported schema version {}", self.v)));
        }
        let lattice =
            Arc::new(DyadicLattice::new(self.n, self.depth).map_err(|e| Error::schema("depth", e.to_string()))?);
        let mu = measure_field(&lattice, "mu", &self.mu)?;
        let nu = measure_field(&lattice, "nu", &self.nu)?;
        let exponents = ExponentPair::new(self.p, self.q).map_err(|_| {
            Error::schema(
                if ExponentPair::new(self.p, 2.0).is_err() {
                    "p"
                } else {
                    "q"
                },
                "exponent must lie in (1, inf)",
            )
        })?;
        let rec = &self.operator;
        let operator = match rec.kind {
            OperatorKind::Positive => {
                let lambda = lambda_map(&lattice, &rec.lambda)?;
                let spec = PositiveDyadicSpec::new(lattice.clone(), lambda)
                    .map_err(|e| Error::schema("operator.lambda", e.to_string()))?;
                TestedOperator::Positive(spec)
            }
            OperatorKind::Haar => {
                let lambda = lambda_map(&lattice, &rec.lambda)?;
                let spec = HaarMultiplierSpec::new(lattice.clone(), lambda)
                    .map_err(|e| Error::schema("operator.lambda", e.to_string()))?;
                TestedOperator::WellLocalized(spec.to_general())
            }
            OperatorKind::Matrix => {
                let rows = rec
                    .matrix
                    .clone()
                    .ok_or_else(|| Error::schema("operator.matrix", "required for kind matrix"))?;
                let spec = GeneralOperatorSpec::new(lattice.clone(), rows, rec.r)
                    .map_err(|e| Error::schema("operator.matrix", e.to_string()))?;
                TestedOperator::WellLocalized(spec)
            }
        };
        Ok(Instance {
            lattice,
            mu,
            nu,
            operator,
            exponents,
            seed: self.seed,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightLaw {
    /// Masses uniform in `(0, 1]`.
    Uniform,
    /// `log m` uniform over `[log 1e-3, log 1e3]`.
    LogUniform,
    /// Each leaf is empty with probability one half, otherwise uniform.
    AtomicWithZeros,
    /// `m_i = 2^{-nD}` for both measures.
    Lebesgue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub depth: usize,
    pub weight_law: WeightLaw,
    pub operator_kind: OperatorKind,
    /// Probability that a given cube carries a nonzero coefficient.
    pub sparsity: f64,
    pub p: f64,
    pub q: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n: 1,
            depth: 2,
            weight_law: WeightLaw::Uniform,
            operator_kind: OperatorKind::Positive,
            sparsity: 0.5,
            p: 2.0,
            q: 2.0,
            seed: 0,
        }
    }
}

fn sample_masses(rng: &mut ChaCha8Rng, law: WeightLaw, count: usize) -> Vec<f64> {
    let mut m: Vec<f64> = (0..count)
        .map(|_| match law {
            WeightLaw::Uniform => 1.0 - rng.gen::<f64>(),
            WeightLaw::LogUniform => rng.gen_range(1e-3f64.ln()..=1e3f64.ln()).exp(),
            WeightLaw::AtomicWithZeros => {
                if rng.gen_bool(0.5) {
                    0.0
                } else {
                    1.0 - rng.gen::<f64>()
                }
            }
            WeightLaw::Lebesgue => 1.0 / count as f64,
        })
        .collect();
    if m.iter().all(|&v| v == 0.0) {
        let i = rng.gen_range(0..count);
        m[i] = 1.0 - rng.gen::<f64>();
    }
    m
}

/// A deterministic instance for the given configuration.
pub fn gen(config: &GenConfig) -> Result<InstanceBundle> {
    if config.operator_kind == OperatorKind::Haar && config.n != 1 {
        return Err(Error::domain("Haar multipliers are defined on the line only (n = 1)"));
    }
    if config.operator_kind == OperatorKind::Matrix {
        return Err(Error::domain("the generator produces positive or haar operators"));
    }
    if config.operator_kind == OperatorKind::Haar && config.depth == 0 {
        return Err(Error::domain("a Haar multiplier needs depth at least 1"));
    }
    if !(config.sparsity > 0.0 && config.sparsity <= 1.0) {
        return Err(Error::domain(format!(
            "sparsity {} must lie in (0, 1]",
            config.sparsity
        )));
    }
    ExponentPair::new(config.p, config.q)?;
    let lat = DyadicLattice::new(config.n, config.depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let leaves = lat.num_leaves();
    let mu = sample_masses(&mut rng, config.weight_law, leaves);
    let nu = sample_masses(&mut rng, config.weight_law, leaves);

    let eligible: Vec<CubeId> = match config.operator_kind {
        OperatorKind::Haar => lat.ids().filter(|&q| !lat.is_leaf(q)).collect(),
        _ => lat.ids().collect(),
    };
    let mut lambda = Vec::new();
    for &q in &eligible {
        if rng.gen_bool(config.sparsity) {
            lambda.push((q, draw_coefficient(&mut rng, config.operator_kind)));
        }
    }
    if lambda.is_empty() {
        let q = eligible[rng.gen_range(0..eligible.len())];
        lambda.push((q, draw_coefficient(&mut rng, config.operator_kind)));
    }
    Ok(InstanceBundle {
        v: SCHEMA_VERSION,
        n: config.n,
        depth: config.depth,
        mu,
        nu,
        operator: OperatorRecord {
            kind: config.operator_kind,
            lambda: lambda
                .into_iter()
                .map(|(q, value)| LambdaEntry {
                    cube: lat.cube(q).clone(),
                    value,
                })
                .collect(),
            matrix: None,
            r: match config.operator_kind {
                OperatorKind::Positive => config.depth,
                _ => 0,
            },
        },
        p: config.p,
        q: config.q,
        seed: config.seed,
    })
}

fn draw_coefficient(rng: &mut ChaCha8Rng, kind: OperatorKind) -> f64 {
    match kind {
        OperatorKind::Positive => 1.0 - rng.gen::<f64>(),
        _ => {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v == 0.0 {
                1.0
            } else {
                v
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig {
            seed: 42,
            weight_law: WeightLaw::LogUniform,
            ..GenConfig::default()
        };
        let a = gen(&cfg).unwrap().to_json().unwrap();
        let b = gen(&cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let other = gen(&GenConfig { seed: 43, ..cfg }).unwrap().to_json().unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn weight_law_supports() {
        for seed in 0..20 {
            let b = gen(&GenConfig {
                seed,
                depth: 3,
                ..GenConfig::default()
            })
            .unwrap();
            assert!(b.mu.iter().chain(&b.nu).all(|&m| m > 0.0 && m <= 1.0));
            let b = gen(&GenConfig {
                seed,
                depth: 3,
                weight_law: WeightLaw::LogUniform,
                ..GenConfig::default()
            })
            .unwrap();
            assert!(b.mu.iter().all(|&m| (1e-3..=1e3).contains(&m)));
            let b = gen(&GenConfig {
                seed,
                depth: 3,
                weight_law: WeightLaw::AtomicWithZeros,
                ..GenConfig::default()
            })
            .unwrap();
            assert!(b.mu.iter().any(|&m| m > 0.0));
        }
    }

    #[test]
    fn haar_in_two_dimensions_rejected() {
        let cfg = GenConfig {
            n: 2,
            operator_kind: OperatorKind::Haar,
            ..GenConfig::default()
        };
        assert!(gen(&cfg).is_err());
    }

    #[test]
    fn round_trip_and_validation() {
        for kind in [OperatorKind::Positive, OperatorKind::Haar] {
            let b = gen(&GenConfig {
                operator_kind: kind,
                seed: 7,
                ..GenConfig::default()
            })
            .unwrap();
            let back = InstanceBundle::from_json(&b.to_json().unwrap()).unwrap();
            assert_eq!(back, b);
            back.validate().unwrap();
        }
    }

    #[test]
    fn negative_mass_names_the_leaf() {
        let mut b = gen(&GenConfig::default()).unwrap();
        b.mu[2] = -0.5;
        match b.validate() {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "mu[2]"),
            other => panic!("unexpected {other:?}"),
        }
        let mut b = gen(&GenConfig::default()).unwrap();
        b.nu.pop();
        assert!(matches!(b.validate(), Err(Error::Schema { ref field, .. }) if field == "nu"));
        let mut b = gen(&GenConfig::default()).unwrap();
        b.v = 2;
        assert!(matches!(b.validate(), Err(Error::Schema { ref field, .. }) if field == "v"));
    }
}
