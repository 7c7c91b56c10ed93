use std::collections::BTreeSet;

use super::{DatasetError, Label};

/// Parses a recording-level `file,label` CSV. A first line of `file,label`
/// is treated as a header; blank lines and `#` comments are skipped.
pub fn parse_label_csv(text: &str) -> Result<Vec<(String, Label)>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.eq_ignore_ascii_case("file,label")) {
            continue;
        }
        let bad = |msg: String| DatasetError::Annotation { line: i + 1, msg };
        let (file, label) = line
            .split_once(',')
            .ok_or_else(|| bad(format!("expected `file,label`, found `{line}`")))?;
        let label: Label = label.trim().parse().map_err(bad)?;
        out.push((file.trim().to_string(), label));
    }
    Ok(out)
}

/// One file name per line; blank lines and `#` comments are ignored.
pub fn parse_exclusions(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// The patient number leading an ICBHI file name (`101_1b1_Al_sc_Meditron.wav` → `101`).
pub fn icbhi_patient_id(file_name: &str) -> Option<String> {
    let head = file_name.split('_').next()?;
    (!head.is_empty() && head.bytes().all(|b| b.is_ascii_digit()) && file_name.contains('_')).then(|| head.to_string())
}
