use std::fmt::Write as _;

use super::split::{assign_partitions, Fractions, SplitMode};
use super::{DatasetError, Label, Partition};

pub const MANIFEST_HEADER: &str = "medfront-manifest v1";
const COLUMNS: &str = "segment_path,label,partition,origin_file,start_s,end_s,patient_id";

/// A stored segment and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRef {
    pub segment_path: String,
    pub label: Label,
    pub origin_file: String,
    pub start_s: f64,
    pub end_s: f64,
    pub patient_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub segment: SegmentRef,
    pub partition: Partition,
}

/// Deterministic assignment of segments to train/validation/test.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub seed: u64,
    pub fractions: Fractions,
    pub entries: Vec<ManifestEntry>,
}

/// Splits `segments` with a seeded, label-stratified shuffle (or by patient
/// group in [`SplitMode::PatientGrouped`]). Entries keep the input order.
pub fn make_split(
    segments: Vec<SegmentRef>,
    seed: u64,
    fractions: Fractions,
    mode: SplitMode,
) -> Result<SplitManifest, DatasetError> {
    let labels: Vec<Label> = segments.iter().map(|s| s.label).collect();
    let groups: Vec<String> = segments
        .iter()
        .map(|s| s.patient_id.clone().unwrap_or_else(|| s.origin_file.clone()))
        .collect();
    let parts = assign_partitions(&labels, &groups, seed, fractions, mode)?;
    Ok(SplitManifest {
        seed,
        fractions,
        entries: segments
            .into_iter()
            .zip(parts)
            .map(|(segment, partition)| ManifestEntry { segment, partition })
            .collect(),
    })
}

fn check_field(field: &str) -> Result<&str, DatasetError> {
    if field.contains([',', '\n', '\r']) {
        return Err(DatasetError::Manifest {
            line: 0,
            msg: format!("field `{field}` contains a comma or line break"),
        });
    }
    Ok(field)
}

impl SplitManifest {
    pub fn partition(&self, p: Partition) -> impl Iterator<Item = &SegmentRef> {
        self.entries.iter().filter(move |e| e.partition == p).map(|e| &e.segment)
    }

    /// `(normal, abnormal)` counts in one partition.
    pub fn class_counts(&self, p: Partition) -> (usize, usize) {
        self.partition(p).fold((0, 0), |(n, a), s| match s.label {
            Label::Normal => (n + 1, a),
            Label::Abnormal => (n, a + 1),
        })
    }

    /// Serializes to the versioned CSV layout. Text fields may not contain
    /// commas or line breaks.
    pub fn to_csv(&self) -> Result<String, DatasetError> {
        let f = self.fractions.0;
        let mut out = format!("{MANIFEST_HEADER}\n# seed={} fractions={},{},{}\n{COLUMNS}\n", self.seed, f[0], f[1], f[2]);
        for e in &self.entries {
            let s = &e.segment;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                check_field(&s.segment_path)?,
                s.label,
                e.partition,
                check_field(&s.origin_file)?,
                s.start_s,
                s.end_s,
                check_field(s.patient_id.as_deref().unwrap_or(""))?
            )
            .expect("writing to a String");
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self, DatasetError> {
        let bad = |line: usize, msg: String| DatasetError::Manifest { line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, MANIFEST_HEADER)) => {}
            other => return Err(bad(1, format!("expected `{MANIFEST_HEADER}`, found {:?}", other.map(|o| o.1)))),
        }
        let (mut seed, mut fractions) = (0, Fractions::default());
        let (n, meta) = lines.next().ok_or_else(|| bad(2, "missing seed line".into()))?;
        for kv in meta.trim_start_matches('#').split_whitespace() {
            match kv.split_once('=') {
                Some(("seed", v)) => seed = v.parse().map_err(|_| bad(n, format!("bad seed `{v}`")))?,
                Some(("fractions", v)) => {
                    let parts: Vec<f64> = v
                        .split(',')
                        .map(|x| x.parse().map_err(|_| bad(n, format!("bad fraction `{x}`"))))
                        .collect::<Result<_, _>>()?;
                    let arr: [f64; 3] = parts.try_into().map_err(|_| bad(n, "need three fractions".into()))?;
                    fractions = Fractions(arr);
                }
                _ => return Err(bad(n, format!("unexpected `{kv}`"))),
            }
        }
        match lines.next() {
            Some((_, COLUMNS)) => {}
            other => return Err(bad(3, format!("expected column header, found {:?}", other.map(|o| o.1)))),
        }
        let mut entries = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(n, format!("expected 7 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, format!("`{s}` is not a number")));
            entries.push(ManifestEntry {
                segment: SegmentRef {
                    segment_path: f[0].to_string(),
                    label: f[1].parse().map_err(|e| bad(n, e))?,
                    origin_file: f[3].to_string(),
                    start_s: num(f[4])?,
                    end_s: num(f[5])?,
                    patient_id: (!f[6].is_empty()).then(|| f[6].to_string()),
                },
                partition: f[2].parse().map_err(|e| bad(n, e))?,
            });
        }
        Ok(Self {
            seed,
            fractions,
            entries,
        })
    }
}
