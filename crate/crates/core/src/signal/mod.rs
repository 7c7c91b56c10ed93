//! Deterministic DSP primitives used by every frontend and by preprocessing.
//!
//! Everything here is a pure function of its inputs. Samples are `f64`
//! throughout; the nominal amplitude range is `[-1, 1]`.

mod butterworth;
mod fft;
mod resample;
mod stft;
mod window;

pub use butterworth::{design_butterworth_bandpass, apply_filter, Biquad, BiquadCascade, DesignMeta};
pub use fft::{fft, ifft, fft_in_place, ifft_in_place, next_fast_len};
pub use resample::{resample, Resampler};
pub use stft::{frame_count, stft, ComplexSpectrum};
pub use window::{window, WindowKind};

pub use rustfft::num_complex::Complex64;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("fft length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("input of length {len} does not fit in an fft of length {n}")]
    InputTooLong { len: usize, n: usize },
    #[error("waveform has {len} samples but one analysis window needs {window}; normalize the duration with fit_duration first")]
    TooShort { len: usize, window: usize },
    #[error("invalid analysis geometry: {0}")]
    Geometry(String),
    #[error("filter design: {0}")]
    Design(String),
    #[error("filter designed for {designed} Hz applied to a {actual} Hz waveform")]
    RateMismatch { designed: u32, actual: u32 },
    #[error("non-finite sample produced by {0}")]
    NonFinite(&'static str),
}

/// Mono audio with its sample rate and an opaque identifier of where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
            source_id: self.source_id.clone(),
        }
    }
}

/// Number of samples spanned by `ms` milliseconds at `sample_rate`, rounded.
pub fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

/// Truncates or zero-pads at the end so the result lasts exactly `target_s`.
pub fn fit_duration(w: &Waveform, target_s: f64) -> Waveform {
    assert!(target_s > 0.0, "target duration must be positive");
    let target = (target_s * w.sample_rate as f64).round() as usize;
    let mut samples = w.samples.clone();
    samples.resize(target, 0.0);
    w.with_samples(samples)
}
