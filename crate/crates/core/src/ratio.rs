use std::fmt;

use serde::{Deserialize, Serialize};

/// An exact count ratio. Percentages are derived from the integers, never
/// from a float, so printed values are reproducible bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fraction {
    pub numerator: u64,
    pub denominator: u64,
}

impl Fraction {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        Fraction { numerator, denominator }
    }

    /// True when both fractions denote the same rational number.
    /// Zero denominators are only equal to each other.
    pub fn same_value(&self, other: &Fraction) -> bool {
        if self.denominator == 0 || other.denominator == 0 {
            return self.denominator == other.denominator;
        }
        u128::from(self.numerator) * u128::from(other.denominator)
            == u128::from(other.numerator) * u128::from(self.denominator)
    }

    pub fn as_f64(&self) -> Option<f64> {
        (self.denominator != 0).then(|| self.numerator as f64 / self.denominator as f64)
    }

    /// Percentage in tenths of a percent, rounded half up.
    pub fn per_mille_tenths(&self) -> Option<u64> {
        if self.denominator == 0 {
            return None;
        }
        let n = u128::from(self.numerator) * 1000;
        let d = u128::from(self.denominator);
        Some(((2 * n + d) / (2 * d)) as u64)
    }

    /// `"9.9%"`-style rendering with one decimal; `None` for a zero
    /// denominator.
    pub fn percent(&self) -> Option<String> {
        self.per_mille_tenths().map(|t| format!("{}.{}%", t / 10, t % 10))
    }

    /// Like [`Fraction::percent`] but renders `n/a` instead of `None`.
    pub fn percent_or_na(&self) -> String {
        self.percent().unwrap_or_else(|| "n/a".to_owned())
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}
