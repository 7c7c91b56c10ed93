//! Fixed and learnable audio frontends for medical-sound classification.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`signal`]: FFT, STFT, Butterworth bandpass, resampling, duration fitting.
//! * [`autodiff`]: reverse-mode tape, operators, Adam, parameter checkpoints.
//! * [`frontends`]: log-mel filterbank, Gabor/PCEN learnable frontend, and a
//!   learnable STFT + mel projection frontend.
//! * [`datasets`]: WAV and annotation parsing, segmentation, stratified splits.
//! * [`model`]: CNN classifier, training loop, prediction.
//! * [`eval`]: balanced accuracy, McNemar tests, Holm correction.

pub mod autodiff;
pub mod datasets;
pub mod eval;
pub mod frontends;
pub mod gradcheck;
pub mod model;
pub mod signal;
