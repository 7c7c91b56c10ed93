use rustfft::num_complex::Complex64;

use super::{fft_in_place, ms_to_samples, window, SignalError, Waveform, WindowKind};

/// One-sided short-time spectrum, `frames[t][k]` for bin `k` in `0..=n_fft/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub frames: Vec<Vec<Complex64>>,
    pub n_fft: usize,
    pub hop_samples: usize,
    pub window_samples: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrum {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Squared modulus, frame-major.
    pub fn power(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|v| v.norm_sqr()).collect())
            .collect()
    }
}

/// Frames that fit entirely inside `len` samples, or `None` when not even one does.
pub fn frame_count(len: usize, window: usize, hop: usize) -> Option<usize> {
    (len >= window).then(|| 1 + (len - window) / hop)
}

pub fn stft(
    w: &Waveform,
    window_ms: f64,
    hop_ms: f64,
    window_kind: WindowKind,
    n_fft: usize,
) -> Result<ComplexSpectrum, SignalError> {
    let win_len = ms_to_samples(window_ms, w.sample_rate);
    let hop = ms_to_samples(hop_ms, w.sample_rate);
    if win_len == 0 || hop == 0 {
        return Err(SignalError::Geometry(format!(
            "window {window_ms} ms / hop {hop_ms} ms is below one sample at {} Hz",
            w.sample_rate
        )));
    }
    if !n_fft.is_power_of_two() {
        return Err(SignalError::NotPowerOfTwo(n_fft));
    }
    if n_fft < win_len {
        return Err(SignalError::Geometry(format!(
            "n_fft {n_fft} is shorter than the {win_len}-sample window"
        )));
    }
    let n_frames = frame_count(w.len(), win_len, hop).ok_or(SignalError::TooShort {
        len: w.len(),
        window: win_len,
    })?;
    let win = window(window_kind, win_len);
    let n_bins = n_fft / 2 + 1;
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let frames = (0..n_frames)
        .map(|t| {
            let start = t * hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < win_len {
                    Complex64::new(w.samples[start + i] * win[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            fft_in_place(&mut buf);
            buf[..n_bins].to_vec()
        })
        .collect();
    Ok(ComplexSpectrum {
        frames,
        n_fft,
        hop_samples: hop,
        window_samples: win_len,
        sample_rate: w.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn silence_gives_zero_frames() {
        let w = Waveform::new(vec![0.0; 8000], 4000, "silence");
        let s = stft(&w, 30.0, 10.0, WindowKind::Hann, 128).unwrap();
        assert_eq!(s.frames.len(), 198);
        assert_eq!(s.n_bins(), 65);
        assert!(s.frames.iter().flatten().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let samples = (0..8000)
            .map(|i| (2.0 * PI * 500.0 * i as f64 / 4000.0).sin())
            .collect();
        let w = Waveform::new(samples, 4000, "sine");
        let s = stft(&w, 30.0, 10.0, WindowKind::Hann, 128).unwrap();
        for frame in s.power() {
            let peak = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(peak, 16);
        }
    }

    #[test]
    fn too_short_input_is_rejected() {
        let w = Waveform::new(vec![0.0; 100], 4000, "short");
        let err = stft(&w, 30.0, 10.0, WindowKind::Hann, 128).unwrap_err();
        assert!(err.to_string().contains("fit_duration"));
    }

    #[test]
    fn n_fft_must_cover_window() {
        let w = Waveform::new(vec![0.0; 1000], 4000, "x");
        assert!(matches!(
            stft(&w, 30.0, 10.0, WindowKind::Hann, 64),
            Err(SignalError::Geometry(_))
        ));
    }
}
