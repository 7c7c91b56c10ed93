use std::f64::consts::PI;

use super::Waveform;

const KAISER_BETA: f64 = 8.6;
const TAPS_PER_PHASE: usize = 64;
const PASSBAND_FRACTION: f64 = 0.9;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Rational polyphase resampler with a Kaiser-windowed sinc prototype.
///
/// The prototype spans 64 taps at the lower of the two rates. Its passband
/// edge sits at 0.9 of the lower Nyquist frequency; the −6 dB point is half a
/// Kaiser transition width above that.
#[derive(Debug, Clone)]
pub struct Resampler {
    from_hz: u32,
    to_hz: u32,
    up: u64,
    down: u64,
    half_span: f64,
    reach: i64,
    cutoff: f64,
    phases: Vec<Option<Vec<f64>>>,
}

impl Resampler {
    pub fn new(from_hz: u32, to_hz: u32) -> Self {
        assert!(from_hz > 0 && to_hz > 0, "sample rates must be positive");
        let g = gcd(from_hz as u64, to_hz as u64);
        let up = to_hz as u64 / g;
        let down = from_hz as u64 / g;
        let slow = from_hz.min(to_hz) as f64;
        let fin = from_hz as f64;

        let atten_db = KAISER_BETA / 0.1102 + 8.7;
        let transition_rad = (atten_db - 7.95) / (2.285 * (TAPS_PER_PHASE - 1) as f64);
        let transition_hz = transition_rad * slow / (2.0 * PI);
        let cutoff_hz = (PASSBAND_FRACTION * slow / 2.0 + transition_hz / 2.0).min(slow / 2.0);

        let half_span = TAPS_PER_PHASE as f64 / 2.0 * fin / slow;
        Self {
            from_hz,
            to_hz,
            up,
            down,
            half_span,
            reach: half_span.ceil() as i64,
            cutoff: cutoff_hz / fin,
            phases: vec![None; up as usize],
        }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len as f64 * self.to_hz as f64 / self.from_hz as f64).round() as usize
    }

    fn phase_weights(&mut self, phase: usize) -> &[f64] {
        if self.phases[phase].is_none() {
            let frac = phase as f64 / self.up as f64;
            let mut w: Vec<f64> = (-self.reach..=self.reach)
                .map(|j| {
                    let tau = frac - j as f64;
                    let x = tau / self.half_span;
                    if x.abs() >= 1.0 {
                        return 0.0;
                    }
                    let kaiser = bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt()) / bessel_i0(KAISER_BETA);
                    2.0 * self.cutoff * sinc(2.0 * self.cutoff * tau) * kaiser
                })
                .collect();
            let sum: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= sum);
            self.phases[phase] = Some(w);
        }
        self.phases[phase].as_deref().unwrap()
    }

    pub fn process(&mut self, input: &[f64]) -> Vec<f64> {
        let out_len = self.output_len(input.len());
        let n = input.len() as i64;
        let reach = self.reach;
        let (up, down) = (self.up, self.down);
        (0..out_len as u64)
            .map(|m| {
                let pos = m * down;
                let base = (pos / up) as i64;
                let phase = (pos % up) as usize;
                let weights = self.phase_weights(phase);
                let mut acc = 0.0;
                for (i, &wt) in weights.iter().enumerate() {
                    let k = base + i as i64 - reach;
                    if k >= 0 && k < n {
                        acc += wt * input[k as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Band-limited resampling to `to_hz`; output length is `round(len * to / from)`.
pub fn resample(w: &Waveform, to_hz: u32) -> Waveform {
    assert!(to_hz > 0, "target rate must be positive");
    if to_hz == w.sample_rate {
        return w.clone();
    }
    let samples = Resampler::new(w.sample_rate, to_hz).process(&w.samples);
    Waveform {
        samples,
        sample_rate: to_hz,
        source_id: w.source_id.clone(),
    }
}
