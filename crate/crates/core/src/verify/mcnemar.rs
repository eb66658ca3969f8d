//! McNemar's test on paired classifier correctness.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.05;

/// Below this many discordant pairs the exact variant uses the binomial test.
pub const EXACT_BELOW: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McNemarVariant {
    /// `(|b - c| - 1)² / (b + c)` against chi-square with one degree of freedom.
    #[default]
    ContinuityCorrected,
    /// Two-sided binomial test when `b + c` is small, otherwise as above.
    ExactSmallSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub class_id: usize,
    /// Correct before removal, wrong after.
    pub b: usize,
    /// Wrong before removal, correct after.
    pub c: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    /// The statistic when significant, otherwise 0.
    pub reported_statistic: f64,
}

/// Builds the result from discordant-pair counts.
pub fn mcnemar_from_counts(class_id: usize, b: usize, c: usize, variant: McNemarVariant) -> McNemarResult {
    let n = b + c;
    let (statistic, p_value) = if n == 0 {
        (0.0, 1.0)
    } else {
        let diff = (b as f64 - c as f64).abs();
        let statistic = (diff - 1.0).max(0.0).powi(2) / n as f64;
        let p = match variant {
            McNemarVariant::ExactSmallSample if n < EXACT_BELOW => {
                let tail = Binomial::new(0.5, n as u64).expect("valid binomial").cdf(b.min(c) as u64);
                (2.0 * tail).min(1.0)
            }
            _ => ChiSquared::new(1.0).expect("one degree of freedom").sf(statistic),
        };
        (statistic, p)
    };
    let significant = p_value < ALPHA;
    McNemarResult {
        class_id,
        b,
        c,
        statistic,
        p_value,
        significant,
        reported_statistic: if significant { statistic } else { 0.0 },
    }
}

/// Compares classifier `a` (before) and `b` (after) on `nodes`.
pub fn mcnemar_test(
    pred_a: &[usize],
    pred_b: &[usize],
    truth: &[usize],
    nodes: &[usize],
    class_id: usize,
    variant: McNemarVariant,
) -> Result<McNemarResult> {
    if pred_a.len() != truth.len() || pred_b.len() != truth.len() {
        return Err(Error::dimension(
            "prediction vectors",
            truth.len(),
            format!("{} and {}", pred_a.len(), pred_b.len()),
        ));
    }
    if nodes.is_empty() {
        return Err(Error::Validation("McNemar test needs at least one node".into()));
    }
    let mut b = 0;
    let mut c = 0;
    for &i in nodes {
        if i >= truth.len() {
            return Err(Error::Validation(format!("node {i} outside 0..{}", truth.len())));
        }
        match (pred_a[i] == truth[i], pred_b[i] == truth[i]) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_from_counts(class_id, b, c, variant))
}
