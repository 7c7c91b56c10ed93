use std::collections::HashMap;

use crate::signal::{apply_filter, design_butterworth_bandpass, fit_duration, resample, BiquadCascade, Waveform};

use super::{CycleAnnotation, DatasetError, Label};

/// A labeled excerpt of a recording with enough provenance to find it again.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub waveform: Waveform,
    pub label: Label,
    pub origin_file: String,
    pub start_s: f64,
    pub end_s: f64,
    pub patient_id: Option<String>,
}

fn slice(w: &Waveform, start_s: f64, end_s: f64) -> Waveform {
    let fs = w.sample_rate as f64;
    let a = ((start_s * fs).round() as usize).min(w.len());
    let b = ((end_s * fs).round() as usize).clamp(a, w.len());
    Waveform::new(w.samples[a..b].to_vec(), w.sample_rate, w.source_id.clone())
}

/// One segment per annotated cycle. Cycles running past the end of the
/// recording are clipped, and cycles starting after it are dropped, both with
/// a warning.
pub fn segment_by_cycles(w: &Waveform, anns: &[CycleAnnotation], origin_file: &str) -> Vec<Segment> {
    let duration = w.duration_s();
    let mut out = Vec::with_capacity(anns.len());
    for a in anns {
        if a.start_s >= duration {
            log::warn!(
                "{origin_file}: cycle [{}, {}] starts after the {duration:.3} s recording ends; skipped",
                a.start_s,
                a.end_s
            );
            continue;
        }
        let end_s = if a.end_s > duration {
            log::warn!(
                "{origin_file}: cycle [{}, {}] clipped to the {duration:.3} s recording",
                a.start_s,
                a.end_s
            );
            duration
        } else {
            a.end_s
        };
        out.push(Segment {
            waveform: slice(w, a.start_s, end_s),
            label: a.label(),
            origin_file: origin_file.to_string(),
            start_s: a.start_s,
            end_s,
            patient_id: None,
        });
    }
    out
}

/// Consecutive non-overlapping chunks of `chunk_s` seconds; a shorter final
/// remainder is kept (it is zero-padded later by [`fit_duration`]).
pub fn segment_fixed(w: &Waveform, chunk_s: f64, label: Label, origin_file: &str) -> Vec<Segment> {
    assert!(chunk_s > 0.0, "chunk length must be positive");
    let chunk = ((chunk_s * w.sample_rate as f64).round() as usize).max(1);
    let fs = w.sample_rate as f64;
    (0..w.len())
        .step_by(chunk)
        .map(|start| {
            let end = (start + chunk).min(w.len());
            Segment {
                waveform: Waveform::new(w.samples[start..end].to_vec(), w.sample_rate, w.source_id.clone()),
                label,
                origin_file: origin_file.to_string(),
                start_s: start as f64 / fs,
                end_s: end as f64 / fs,
                patient_id: None,
            }
        })
        .collect()
}

/// Bandpass filtering, resampling and duration fitting, in that order.
/// Filter designs are cached per input sample rate.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub order: usize,
    pub band_hz: (f64, f64),
    pub target_rate: u32,
    pub duration_s: f64,
    filters: HashMap<u32, BiquadCascade>,
}

impl Preprocessor {
    pub fn new(order: usize, band_hz: (f64, f64), target_rate: u32, duration_s: f64) -> Self {
        Self {
            order,
            band_hz,
            target_rate,
            duration_s,
            filters: HashMap::new(),
        }
    }

    pub fn process(&mut self, w: &Waveform) -> Result<Waveform, DatasetError> {
        let filter = match self.filters.get(&w.sample_rate) {
            Some(f) => f,
            None => {
                let f = design_butterworth_bandpass(self.order, self.band_hz.0, self.band_hz.1, w.sample_rate)?;
                self.filters.entry(w.sample_rate).or_insert(f)
            }
        };
        let filtered = apply_filter(filter, w)?;
        Ok(fit_duration(&resample(&filtered, self.target_rate), self.duration_s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(seconds: f64, fs: u32) -> Waveform {
        let n = (seconds * fs as f64).round() as usize;
        Waveform::new((0..n).map(|i| i as f64).collect(), fs, "r")
    }

    fn cycle(start_s: f64, end_s: f64, crackles: bool, wheezes: bool) -> CycleAnnotation {
        CycleAnnotation {
            start_s,
            end_s,
            crackles,
            wheezes,
        }
    }

    #[test]
    fn four_marked_cycles_give_four_clips() {
        let w = ramp(8.97, 4000);
        let anns = [
            cycle(0.077, 1.411, false, false),
            cycle(1.411, 3.863, true, false),
            cycle(3.863, 6.601, false, true),
            cycle(6.601, 8.97, true, true),
        ];
        let segs = segment_by_cycles(&w, &anns, "107_2b5_Pr_mc_AKGC417L.wav");
        assert_eq!(segs.len(), 4);
        assert_eq!(segs[0].waveform.samples[0], 308.0);
        assert_eq!(segs[0].waveform.len(), 5644 - 308);
        assert_eq!(segs[3].waveform.len(), 35880 - 26404);
        let labels: Vec<Label> = segs.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![Label::Normal, Label::Abnormal, Label::Abnormal, Label::Abnormal]);
        assert_eq!((segs[1].start_s, segs[1].end_s), (1.411, 3.863));
    }

    #[test]
    fn overhang_is_clipped() {
        let w = ramp(2.0, 1000);
        let segs = segment_by_cycles(&w, &[cycle(1.5, 3.0, false, false), cycle(2.5, 3.0, false, false)], "f");
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].end_s, 2.0);
        assert_eq!(segs[0].waveform.len(), 500);
    }

    #[test]
    fn fixed_chunks_keep_remainder() {
        let count = |s: f64| segment_fixed(&ramp(s, 4000), 2.0, Label::Normal, "f").len();
        assert_eq!(count(10.0), 5);
        assert_eq!(count(2.0), 1);
        assert_eq!(count(5.0), 3);
        let segs = segment_fixed(&ramp(5.0, 4000), 2.0, Label::Abnormal, "f");
        assert_eq!(segs[2].waveform.len(), 4000);
        assert_eq!((segs[2].start_s, segs[2].end_s), (4.0, 5.0));
        assert!(segs.iter().all(|s| s.label == Label::Abnormal));
    }

    #[test]
    fn preprocessing_yields_exact_duration_at_target_rate() {
        let mut p = Preprocessor::new(12, (120.0, 1800.0), 4000, 2.0);
        for (secs, fs) in [(1.3, 44100), (3.7, 10000), (2.0, 4000)] {
            let out = p.process(&ramp(secs, fs)).unwrap();
            assert_eq!((out.len(), out.sample_rate), (8000, 4000));
            assert!(out.samples.iter().all(|v| v.is_finite()));
        }
    }
}
