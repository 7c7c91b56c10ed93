use std::fmt;

use super::{holm_correct, mcnemar, EvalError, McNemarResult};
use crate::datasets::Label;

/// Pair names in report order; indices refer to the (mel, leaf, nnaudio) runs.
pub const PAIRS: [(&str, usize, usize); 3] = [
    ("Mel-LEAF", 0, 1),
    ("Mel-nnAudio", 0, 2),
    ("LEAF-nnAudio", 1, 2),
];

const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub pair: &'static str,
    pub test: McNemarResult,
    pub p_holm: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<PairRow>,
}

/// Pairwise McNemar tests over the three runs, Holm-corrected as one family.
pub fn compare_frontends(
    mel: &[Label],
    leaf: &[Label],
    nnaudio: &[Label],
    truth: &[Label],
) -> Result<ComparisonReport, EvalError> {
    let runs = [mel, leaf, nnaudio];
    let tests = PAIRS
        .iter()
        .map(|&(_, a, b)| mcnemar(runs[a], runs[b], truth))
        .collect::<Result<Vec<_>, _>>()?;
    let raw: Vec<f64> = tests.iter().map(|t| t.p_value).collect();
    let adjusted = holm_correct(&raw);
    let rows = PAIRS
        .iter()
        .zip(tests)
        .zip(adjusted)
        .map(|((&(pair, _, _), test), p_holm)| PairRow {
            pair,
            test,
            p_holm,
            significant: p_holm < ALPHA,
        })
        .collect();
    Ok(ComparisonReport { rows })
}

impl ComparisonReport {
    pub fn significant_pairs(&self) -> Vec<&'static str> {
        self.rows.iter().filter(|r| r.significant).map(|r| r.pair).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,b,c,statistic,p_raw,p_holm,significant\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.pair, r.test.b, r.test.c, r.test.statistic, r.test.p_value, r.p_holm, r.significant
            ));
        }
        out
    }
}

/// Holm-adjusted p-values laid out as one row with a column per pair.
impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header: Vec<String> = self.rows.iter().map(|r| format!("{:>14}", r.pair)).collect();
        writeln!(f, "{:<10}{}", "", header.join(""))?;
        let p: Vec<String> = self
            .rows
            .iter()
            .map(|r| {
                let mark = if r.significant { "*" } else { " " };
                format!("{:>13}{mark}", super::format_p(r.p_holm))
            })
            .collect();
        writeln!(f, "{}", format!("{:<10}{}", "p (Holm)", p.join("")).trim_end())?;
        let bc: Vec<String> = self
            .rows
            .iter()
            .map(|r| format!("{:>14}", format!("{}/{}", r.test.b, r.test.c)))
            .collect();
        write!(f, "{:<10}{}", "b/c", bc.join(""))
    }
}
