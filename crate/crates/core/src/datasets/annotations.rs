use super::{DatasetError, Label};

/// One expert-marked respiratory cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleAnnotation {
    pub start_s: f64,
    pub end_s: f64,
    pub crackles: bool,
    pub wheezes: bool,
}

impl CycleAnnotation {
    /// Normal only when neither crackles nor wheezes were marked.
    pub fn label(&self) -> Label {
        if self.crackles || self.wheezes {
            Label::Abnormal
        } else {
            Label::Normal
        }
    }
}

/// Parses whitespace-separated `start end crackles wheezes` lines; blank
/// lines are skipped.
pub fn parse_cycle_annotations(text: &str) -> Result<Vec<CycleAnnotation>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |msg: String| DatasetError::Annotation { line: i + 1, msg };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let time = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("`{s}` is not a number")))
        };
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(format!("flag `{s}` must be 0 or 1"))),
        };
        let (start_s, end_s) = (time(fields[0])?, time(fields[1])?);
        if start_s < 0.0 || end_s <= start_s {
            return Err(bad(format!("cycle [{start_s}, {end_s}] does not run forward from t >= 0")));
        }
        out.push(CycleAnnotation {
            start_s,
            end_s,
            crackles: flag(fields[2])?,
            wheezes: flag(fields[3])?,
        });
    }
    Ok(out)
}
