use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::autodiff::stream_rng;

use super::{DatasetError, Label, Partition};

/// Train/validation/test shares, summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fractions(pub [f64; 3]);

impl Default for Fractions {
    fn default() -> Self {
        Self([0.75, 0.15, 0.10])
    }
}

impl Fractions {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Split(format!("fractions {:?} must be in [0, 1] and sum to 1", self.0)));
        }
        Ok(())
    }
}

/// How segments are grouped before assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Each segment is assigned independently, stratified by label.
    #[default]
    PerSegment,
    /// Whole patients (or recordings when no patient id is known) go to one
    /// partition, so no patient appears in two partitions.
    PatientGrouped,
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerSegment => "per_segment",
            Self::PatientGrouped => "patient_grouped",
        })
    }
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per_segment" => Ok(Self::PerSegment),
            "patient_grouped" => Ok(Self::PatientGrouped),
            other => Err(format!("unknown split mode `{other}` (expected per_segment or patient_grouped)")),
        }
    }
}

/// Per-class partition sizes. Each class gets `floor(n * f)` per partition,
/// and the leftover segments go to the partitions with the largest
/// fractional parts; ties go to the partition that is furthest below its
/// share of all classes seen so far, then to the earlier partition.
pub fn class_counts(class_sizes: &[usize], fractions: Fractions) -> Vec<[usize; 3]> {
    let f = fractions.0;
    let mut assigned = [0usize; 3];
    let mut seen = 0usize;
    class_sizes
        .iter()
        .map(|&n| {
            seen += n;
            let exact = f.map(|f| n as f64 * f);
            let mut counts = exact.map(|e| (e + 1e-9).floor() as usize);
            let mut left = n - counts.iter().sum::<usize>();
            let mut order = [0usize, 1, 2];
            let deficit = |p: usize, counts: &[usize; 3]| seen as f64 * f[p] - (assigned[p] + counts[p]) as f64;
            let base = counts;
            order.sort_by(|&a, &b| {
                let (ra, rb) = (exact[a] - base[a] as f64, exact[b] - base[b] as f64);
                rb.partial_cmp(&ra)
                    .unwrap()
                    .then(deficit(b, &base).partial_cmp(&deficit(a, &base)).unwrap())
                    .then(a.cmp(&b))
            });
            for &p in order.iter().cycle() {
                if left == 0 {
                    break;
                }
                counts[p] += 1;
                left -= 1;
            }
            for p in 0..3 {
                assigned[p] += counts[p];
            }
            counts
        })
        .collect()
}

/// Assigns each of `labels` to a partition. Within each class the members
/// are shuffled with a seeded stream and then dealt out train, validation,
/// test according to [`class_counts`].
pub fn assign_partitions(
    labels: &[Label],
    groups: &[String],
    seed: u64,
    fractions: Fractions,
    mode: SplitMode,
) -> Result<Vec<Partition>, DatasetError> {
    fractions.validate()?;
    if labels.len() < 10 {
        return Err(DatasetError::Split(format!("need at least 10 segments, got {}", labels.len())));
    }
    for class in Label::ALL {
        if !labels.contains(&class) {
            return Err(DatasetError::Split(format!("class {class} has no segments")));
        }
    }
    let mut out = vec![Partition::Train; labels.len()];
    match mode {
        SplitMode::PerSegment => {
            let members: Vec<Vec<usize>> = Label::ALL
                .iter()
                .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
                .collect();
            let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
            for (ci, (mut idx, counts)) in members.into_iter().zip(class_counts(&sizes, fractions)).enumerate() {
                idx.shuffle(&mut stream_rng(seed, ci as u64));
                let mut it = idx.into_iter();
                for (p, &k) in Partition::ALL.iter().zip(&counts) {
                    for i in it.by_ref().take(k) {
                        out[i] = *p;
                    }
                }
            }
        }
        SplitMode::PatientGrouped => {
            let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, g) in groups.iter().enumerate() {
                by_group.entry(g.as_str()).or_default().push(i);
            }
            let mut groups: Vec<Vec<usize>> = by_group.into_values().collect();
            groups.shuffle(&mut stream_rng(seed, 0));
            let total = labels.len() as f64;
            let mut filled = [0usize; 3];
            for g in groups {
                // the partition furthest below its target share takes the group
                let p = (0..3)
                    .max_by(|&a, &b| {
                        let da = fractions.0[a] * total - filled[a] as f64;
                        let db = fractions.0[b] * total - filled[b] as f64;
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .expect("three partitions");
                filled[p] += g.len();
                for i in g {
                    out[i] = Partition::ALL[p];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn respiratory_corpus_counts_are_reproduced() {
        let resp = class_counts(&[3642, 3256], Fractions::default());
        assert_eq!(resp, vec![[2732, 546, 364], [2442, 488, 326]]);
        let heart = class_counts(&[27281, 7045], Fractions::default());
        assert_eq!(heart, vec![[20461, 4092, 2728], [5284, 1057, 704]]);
    }

    #[test]
    fn ten_segments_split_eight_one_one() {
        let counts = class_counts(&[5, 5], Fractions([0.8, 0.1, 0.1]));
        assert_eq!(counts, vec![[4, 1, 0], [4, 0, 1]]);
    }

    #[test]
    fn counts_stay_within_one_of_targets() {
        let f = Fractions::default();
        for n in 1..300 {
            for m in [1usize, 7, 50] {
                for (size, counts) in [n, m].iter().zip(class_counts(&[n, m], f)) {
                    assert_eq!(counts.iter().sum::<usize>(), *size);
                    for (c, frac) in counts.iter().zip(f.0) {
                        assert!((*c as f64 - *size as f64 * frac).abs() < 1.0 + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn missing_class_and_tiny_corpus_are_errors() {
        let groups = vec![String::new(); 12];
        assert!(assign_partitions(&[Label::Normal; 12], &groups, 1, Fractions::default(), SplitMode::PerSegment).is_err());
        let labels = [Label::Normal, Label::Abnormal].repeat(4);
        assert!(assign_partitions(&labels, &groups[..8], 1, Fractions::default(), SplitMode::PerSegment).is_err());
    }

    #[test]
    fn grouped_split_never_shares_a_patient() {
        let labels: Vec<Label> = (0..60).map(|i| if i % 3 == 0 { Label::Abnormal } else { Label::Normal }).collect();
        let groups: Vec<String> = (0..60).map(|i| format!("p{}", i / 4)).collect();
        let parts = assign_partitions(&labels, &groups, 3, Fractions::default(), SplitMode::PatientGrouped).unwrap();
        for g in 0..15 {
            let p: Vec<Partition> = (g * 4..g * 4 + 4).map(|i| parts[i]).collect();
            assert!(p.iter().all(|&x| x == p[0]));
        }
    }
}
