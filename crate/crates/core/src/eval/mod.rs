//! Balanced accuracy, McNemar's paired test and Holm's step-down correction.

mod compare;

pub use compare::{compare_frontends, ComparisonReport, PairRow, PAIRS};

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use thiserror::Error;

use crate::datasets::Label;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("balanced accuracy is undefined: no {0} cases")]
    EmptyClass(Label),
    #[error("prediction vectors have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
}

/// Confusion counts with abnormal as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(pred: &[Label], truth: &[Label]) -> Result<Self, EvalError> {
        if pred.len() != truth.len() {
            return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
        }
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (t, p) {
                (Label::Abnormal, Label::Abnormal) => c.tp += 1,
                (Label::Abnormal, Label::Normal) => c.fn_ += 1,
                (Label::Normal, Label::Normal) => c.tn += 1,
                (Label::Normal, Label::Abnormal) => c.fp += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }
}

/// Rates as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub balanced_accuracy: f64,
    pub tpr: f64,
    pub tnr: f64,
}

pub fn metrics(c: ConfusionCounts) -> Result<Metrics, EvalError> {
    if c.tp + c.fn_ == 0 {
        return Err(EvalError::EmptyClass(Label::Abnormal));
    }
    if c.tn + c.fp == 0 {
        return Err(EvalError::EmptyClass(Label::Normal));
    }
    let tpr = c.tp as f64 / (c.tp + c.fn_) as f64;
    let tnr = c.tn as f64 / (c.tn + c.fp) as f64;
    Ok(Metrics {
        balanced_accuracy: (tpr + tnr) / 2.0,
        tpr,
        tnr,
    })
}

/// A rate as a percentage with two decimals, e.g. `80.21`.
pub fn format_percent(rate: f64) -> String {
    format!("{:.2}", rate * 100.0)
}

/// Four decimals at or above 0.01, four significant digits in scientific
/// notation below (`1.1219e-03`).
pub fn format_p(p: f64) -> String {
    if p >= 0.01 || p == 0.0 {
        return format!("{p:.4}");
    }
    let s = format!("{p:.4e}");
    match s.split_once('e') {
        Some((mantissa, exp)) => {
            let (sign, digits) = exp.strip_prefix('-').map_or(("+", exp), |d| ("-", d));
            format!("{mantissa}e{sign}{digits:0>2}")
        }
        None => s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McNemarMethod {
    /// Two-sided binomial test on the discordant pairs.
    Exact,
    /// Chi-squared with continuity correction.
    Chi2Cc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McNemarResult {
    /// Cases A got right and B got wrong.
    pub b: usize,
    /// Cases A got wrong and B got right.
    pub c: usize,
    /// `min(b, c)` for the exact test, the corrected chi-squared value otherwise.
    pub statistic: f64,
    pub p_value: f64,
    pub method: McNemarMethod,
}

/// Exact test below 25 discordant pairs, chi-squared with continuity correction otherwise.
pub fn mcnemar_from_counts(b: usize, c: usize) -> McNemarResult {
    let n = b + c;
    if n < 25 {
        let k = b.min(c);
        let p = if n == 0 {
            1.0
        } else {
            let dist = Binomial::new(0.5, n as u64).expect("valid binomial");
            (2.0 * dist.cdf(k as u64)).min(1.0)
        };
        McNemarResult {
            b,
            c,
            statistic: k as f64,
            p_value: p,
            method: McNemarMethod::Exact,
        }
    } else {
        let diff = (b as f64 - c as f64).abs() - 1.0;
        let stat = diff.max(0.0).powi(2) / n as f64;
        let p = ChiSquared::new(1.0).expect("valid chi-squared").sf(stat);
        McNemarResult {
            b,
            c,
            statistic: stat,
            p_value: p.clamp(0.0, 1.0),
            method: McNemarMethod::Chi2Cc,
        }
    }
}

pub fn mcnemar(a: &[Label], b: &[Label], truth: &[Label]) -> Result<McNemarResult, EvalError> {
    if a.len() != truth.len() {
        return Err(EvalError::LengthMismatch(a.len(), truth.len()));
    }
    if b.len() != truth.len() {
        return Err(EvalError::LengthMismatch(b.len(), truth.len()));
    }
    let (mut nb, mut nc) = (0, 0);
    for ((&pa, &pb), &t) in a.iter().zip(b).zip(truth) {
        match (pa == t, pb == t) {
            (true, false) => nb += 1,
            (false, true) => nc += 1,
            _ => {}
        }
    }
    Ok(mcnemar_from_counts(nb, nc))
}

/// Holm's step-down adjustment, returned in input order.
pub fn holm_correct(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[i]).min(1.0));
        out[i] = running;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-sided exact p from an explicit binomial sum.
    fn binomial_oracle(b: u64, c: u64) -> f64 {
        let n = b + c;
        let choose = |n: u64, k: u64| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
        let tail: f64 = (0..=b.min(c)).map(|k| choose(n, k)).sum();
        (2.0 * tail / 2f64.powi(n as i32)).min(1.0)
    }

    #[test]
    fn table_three_row_rounds_to_reported_balanced_accuracy() {
        // 113 abnormal and 81 normal cases realize the reported rates; the
        // reported balanced accuracy follows from the unrounded rates
        let c = ConfusionCounts {
            tp: 92,
            fn_: 21,
            tn: 64,
            fp: 17,
        };
        let m = metrics(c).unwrap();
        assert_eq!(format_percent(m.tpr), "81.42");
        assert_eq!(format_percent(m.tnr), "79.01");
        assert_eq!(format_percent(m.balanced_accuracy), "80.21");
    }

    #[test]
    fn hand_computed_rates() {
        let m = metrics(ConfusionCounts {
            tp: 9,
            fn_: 1,
            tn: 4,
            fp: 6,
        })
        .unwrap();
        assert!((m.tpr - 0.9).abs() < 1e-12 && (m.tnr - 0.4).abs() < 1e-12);
        assert!((m.balanced_accuracy - 0.65).abs() < 1e-12);
        let perfect = metrics(ConfusionCounts {
            tp: 3,
            fn_: 0,
            tn: 2,
            fp: 0,
        })
        .unwrap();
        assert_eq!((perfect.balanced_accuracy, perfect.tpr, perfect.tnr), (1.0, 1.0, 1.0));
        assert_eq!(
            metrics(ConfusionCounts { tp: 0, fn_: 0, tn: 1, fp: 0 }),
            Err(EvalError::EmptyClass(Label::Abnormal))
        );
    }

    #[test]
    fn exact_mcnemar_matches_binomial_sum() {
        let r = mcnemar_from_counts(5, 15);
        assert_eq!(r.method, McNemarMethod::Exact);
        assert!((r.p_value - binomial_oracle(5, 15)).abs() < 1e-9);
        assert!((r.p_value - 0.0414).abs() < 5e-5);
        assert_eq!(mcnemar_from_counts(0, 0).p_value, 1.0);
    }

    #[test]
    fn chi2_mcnemar_statistic() {
        let r = mcnemar_from_counts(40, 60);
        assert_eq!(r.method, McNemarMethod::Chi2Cc);
        assert!((r.statistic - 3.61).abs() < 1e-12);
        // chi2(1) tail equals erfc(sqrt(x / 2))
        let oracle = statrs::function::erf::erfc((3.61f64 / 2.0).sqrt());
        assert!((r.p_value - oracle).abs() < 1e-9, "{} vs {oracle}", r.p_value);
    }

    #[test]
    fn holm_examples() {
        let adj = holm_correct(&[0.01, 0.04, 0.03]);
        for (a, e) in adj.iter().zip([0.03, 0.06, 0.06]) {
            assert!((a - e).abs() < 1e-12, "{adj:?}");
        }
        assert_eq!(holm_correct(&[0.2]), vec![0.2]);
        assert_eq!(holm_correct(&[1.0, 1.0, 1.0]), vec![1.0; 3]);
    }

    #[test]
    fn p_value_formatting() {
        assert_eq!(format_p(0.20104), "0.2010");
        assert_eq!(format_p(0.05), "0.0500");
        assert_eq!(format_p(0.0011219), "1.1219e-03");
        assert_eq!(format_p(9.1734e-9), "9.1734e-09");
        assert_eq!(format_p(1.0), "1.0000");
    }
}
