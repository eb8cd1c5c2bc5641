//! McNemar's test on paired per-document correctness of two methods.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

/// Below this many discordant pairs the exact binomial test is used.
pub const EXACT_THRESHOLD: u64 = 25;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("compared runs do not cover the same documents; unmatched ids: {}", .0.join(", "))]
    Misaligned(Vec<String>),
}

/// Counts of (A correct?, B correct?) pairs, indexed `n<a><b>`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutcomes {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl PairedOutcomes {
    /// A wrong, B right.
    pub fn b(&self) -> u64 {
        self.n01
    }

    /// A right, B wrong.
    pub fn c(&self) -> u64 {
        self.n10
    }

    pub fn total(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    pub fn swapped(&self) -> Self {
        Self {
            n00: self.n00,
            n01: self.n10,
            n10: self.n01,
            n11: self.n11,
        }
    }

    pub fn from_discordant(b: u64, c: u64) -> Self {
        Self {
            n01: b,
            n10: c,
            ..Self::default()
        }
    }
}

/// Tallies correctness of `a` and `b` against `gold`, all keyed by document.
pub fn pair<L: PartialEq>(
    a: &BTreeMap<String, L>,
    b: &BTreeMap<String, L>,
    gold: &BTreeMap<String, L>,
) -> Result<PairedOutcomes, StatsError> {
    let unmatched: Vec<String> = a
        .keys()
        .chain(b.keys())
        .chain(gold.keys())
        .filter(|id| !(a.contains_key(*id) && b.contains_key(*id) && gold.contains_key(*id)))
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unmatched.is_empty() {
        return Err(StatsError::Misaligned(unmatched));
    }
    let mut out = PairedOutcomes::default();
    for (id, truth) in gold {
        match (a[id] == *truth, b[id] == *truth) {
            (false, false) => out.n00 += 1,
            (false, true) => out.n01 += 1,
            (true, false) => out.n10 += 1,
            (true, true) => out.n11 += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarVariant {
    ExactBinomial,
    ChiSquaredCc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Significance {
    #[serde(rename = "p<0.01")]
    P01,
    #[serde(rename = "p<0.05")]
    P05,
    #[serde(rename = "NS")]
    NotSignificant,
}

impl Significance {
    pub fn from_p(p: f64) -> Self {
        if p < 0.01 {
            Significance::P01
        } else if p < 0.05 {
            Significance::P05
        } else {
            Significance::NotSignificant
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Significance::P01 => "p<0.01",
            Significance::P05 => "p<0.05",
            Significance::NotSignificant => "NS",
        }
    }
}

impl fmt::Display for Significance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub b: u64,
    pub c: u64,
    pub variant: McNemarVariant,
    pub statistic: Option<f64>,
    pub p_value: f64,
    pub significance: Significance,
}

/// `P(X <= k)` for `X ~ Binomial(n, 1/2)`.
fn binomial_half_cdf(k: u64, n: u64) -> f64 {
    // Terms C(n, i) / 2^n built incrementally in log space to stay finite.
    let ln_half_n = n as f64 * std::f64::consts::LN_2;
    let mut ln_coef = 0.0f64;
    let mut sum = 0.0;
    for i in 0..=k.min(n) {
        if i > 0 {
            ln_coef += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        sum += (ln_coef - ln_half_n).exp();
    }
    sum.min(1.0)
}

pub fn mcnemar(outcomes: &PairedOutcomes) -> McNemarResult {
    let (b, c) = (outcomes.b(), outcomes.c());
    let n = b + c;
    let (variant, statistic, p_value) = if n < EXACT_THRESHOLD {
        let p = if n == 0 {
            1.0
        } else {
            (2.0 * binomial_half_cdf(b.min(c), n)).min(1.0)
        };
        (McNemarVariant::ExactBinomial, None, p)
    } else {
        // |b - c| - 1 is clamped at 0 so that b = c gives a zero statistic.
        let diff = (b.abs_diff(c) as f64 - 1.0).max(0.0);
        let stat = diff * diff / n as f64;
        let chi2 = ChiSquared::new(1.0).expect("1 degree of freedom");
        (McNemarVariant::ChiSquaredCc, Some(stat), chi2.sf(stat).clamp(0.0, 1.0))
    };
    McNemarResult {
        b,
        c,
        variant,
        statistic,
        p_value,
        significance: Significance::from_p(p_value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_examples() {
        let r = mcnemar(&PairedOutcomes::from_discordant(10, 2));
        assert_eq!(r.variant, McNemarVariant::ExactBinomial);
        assert!((r.p_value - 2.0 * 79.0 / 4096.0).abs() < 1e-12);
        assert_eq!(r.significance, Significance::P05);

        let r = mcnemar(&PairedOutcomes::from_discordant(5, 5));
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.significance, Significance::NotSignificant);

        let r = mcnemar(&PairedOutcomes::default());
        assert_eq!((r.p_value, r.significance), (1.0, Significance::NotSignificant));
    }

    #[test]
    fn chi_squared_example() {
        let r = mcnemar(&PairedOutcomes::from_discordant(25, 10));
        assert_eq!(r.variant, McNemarVariant::ChiSquaredCc);
        assert!((r.statistic.unwrap() - 5.6).abs() < 1e-12);
        assert!((r.p_value - 0.0180).abs() < 1e-3);
        assert_eq!(r.significance, Significance::P05);
    }

    #[test]
    fn symmetric_and_monotone() {
        for n in 0..60u64 {
            let mut last = f64::INFINITY;
            // Walk from balanced to lopsided.
            for b in (0..=n / 2).rev() {
                let c = n - b;
                let p = mcnemar(&PairedOutcomes::from_discordant(b, c)).p_value;
                let q = mcnemar(&PairedOutcomes::from_discordant(c, b)).p_value;
                assert_eq!(p, q);
                assert!(p <= last + 1e-15, "n={n} b={b}");
                last = p;
            }
        }
    }

    #[test]
    fn pairing_by_hand() {
        let m = |v: &[(&str, bool)]| -> BTreeMap<String, bool> { v.iter().map(|(k, x)| (k.to_string(), *x)).collect() };
        let gold = m(&[("1", true), ("2", true), ("3", false), ("4", false), ("5", true), ("6", false), ("7", true), ("8", false)]);
        let a = m(&[("1", true), ("2", false), ("3", false), ("4", true), ("5", false), ("6", false), ("7", true), ("8", true)]);
        let b = m(&[("1", true), ("2", true), ("3", true), ("4", false), ("5", false), ("6", false), ("7", false), ("8", false)]);
        // Per doc (A ok, B ok): 1 TT, 2 FT, 3 TF, 4 FT, 5 FF, 6 TT, 7 TF, 8 FT.
        let p = pair(&a, &b, &gold).unwrap();
        assert_eq!(p, PairedOutcomes { n00: 1, n01: 3, n10: 2, n11: 2 });
        assert_eq!(pair(&b, &a, &gold).unwrap(), p.swapped());
        assert_eq!(pair(&a, &a, &gold).unwrap().b(), 0);

        let mut short = b.clone();
        short.remove("8");
        assert_eq!(pair(&a, &short, &gold), Err(StatsError::Misaligned(vec!["8".into()])));
    }
}
