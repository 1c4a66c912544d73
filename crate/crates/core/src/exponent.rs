use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An integrability exponent in the open interval `(1, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Exponent(f64);

impl Exponent {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_finite() && p > 1.0 {
            Ok(Self(p))
        } else {
            Err(Error::Exponent(p))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `p' = p/(p-1)`.
    pub fn conjugate(self) -> Self {
        Self(self.0 / (self.0 - 1.0))
    }

    pub fn is_two(self) -> bool {
        self.0 == 2.0
    }
}

impl TryFrom<f64> for Exponent {
    type Error = Error;
    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<Exponent> for f64 {
    fn from(e: Exponent) -> f64 {
        e.0
    }
}

/// Source and target exponents of an `L^p(μ) → L^q(ν)` estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentPair {
    pub p: Exponent,
    pub q: Exponent,
}

impl ExponentPair {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        Ok(Self {
            p: Exponent::new(p)?,
            q: Exponent::new(q)?,
        })
    }

    /// The pair `(q', p')` governing the formal adjoint.
    pub fn dual(self) -> Self {
        Self {
            p: self.q.conjugate(),
            q: self.p.conjugate(),
        }
    }

    pub fn is_hilbert(self) -> bool {
        self.p.is_two() && self.q.is_two()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_rejected() {
        for p in [1.0, 0.5, f64::INFINITY, f64::NAN, -3.0] {
            assert!(Exponent::new(p).is_err());
        }
        assert!(Exponent::new(1.0 + 1e-12).is_ok());
    }

    #[test]
    fn conjugates() {
        let p = Exponent::new(3.0).unwrap();
        assert_eq!(p.conjugate().get(), 1.5);
        let sum = 1.0 / p.get() + 1.0 / p.conjugate().get();
        assert!((sum - 1.0).abs() < 1e-15);
        let e = ExponentPair::new(1.5, 4.0).unwrap();
        let d = e.dual();
        assert!((d.p.get() - 4.0 / 3.0).abs() < 1e-15);
        assert!((d.q.get() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn serde_validates() {
        assert!(serde_json::from_str::<Exponent>("0.5").is_err());
        let e: Exponent = serde_json::from_str("2.5").unwrap();
        assert_eq!(e.get(), 2.5);
    }
}
