use crate::autodiff::{Tape, Tensor, Var};

use super::{FrontendError, Result};

/// Per-channel PCEN parameters with the fixed smoother and floor.
#[derive(Debug, Clone, PartialEq)]
pub struct PcenParams {
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub root: Vec<f64>,
    pub smooth: f64,
    pub eps: f64,
}

impl PcenParams {
    pub fn uniform(channels: usize, alpha: f64, delta: f64, root: f64, smooth: f64, eps: f64) -> Self {
        Self {
            alpha: vec![alpha; channels],
            delta: vec![delta; channels],
            root: vec![root; channels],
            smooth,
            eps,
        }
    }
}

/// Smoothed energy `M` of a `[frames, channels]` block, `M_0 = E_0`.
fn smoother(e: &[f64], frames: usize, channels: usize, s: f64) -> Vec<f64> {
    let mut m = e[..channels].to_vec();
    m.reserve(frames * channels);
    for t in 1..frames {
        for c in 0..channels {
            let prev = m[(t - 1) * channels + c];
            m.push((1.0 - s) * prev + s * e[t * channels + c]);
        }
    }
    m
}

fn check_nonnegative(e: &[f64]) -> Result<()> {
    match e.iter().position(|&v| v < 0.0 || v.is_nan()) {
        Some(i) => Err(FrontendError::Config(format!(
            "PCEN input must be nonnegative, element {i} is {}",
            e[i]
        ))),
        None => Ok(()),
    }
}

/// PCEN of one `[frames, channels]` energy block, row-major by frame:
/// `(E / (eps + M)^alpha + delta)^(1/r) - delta^(1/r)`.
pub fn pcen_values(e: &[f64], frames: usize, p: &PcenParams) -> Result<Vec<f64>> {
    let channels = p.alpha.len();
    if frames == 0 || e.len() != frames * channels {
        return Err(FrontendError::Config(format!(
            "PCEN block of {} values is not {frames} x {channels}",
            e.len()
        )));
    }
    check_nonnegative(e)?;
    let m = smoother(e, frames, channels, p.smooth);
    Ok(e.iter()
        .zip(&m)
        .enumerate()
        .map(|(i, (&e, &m))| {
            let c = i % channels;
            let inv_r = 1.0 / p.root[c];
            (e / (p.eps + m).powf(p.alpha[c]) + p.delta[c]).powf(inv_r) - p.delta[c].powf(inv_r)
        })
        .collect())
}

/// Differentiable PCEN over `[n, frames, channels]` energies with `[channels]`
/// vars `alpha`, `delta`, `root`. Gradients flow through the smoother
/// recurrence into the energies as well as into the three parameter vectors.
pub fn pcen(tape: &mut Tape, energy: Var, alpha: Var, delta: Var, root: Var, smooth: f64, eps: f64) -> Result<Var> {
    let shape = tape.shape(energy).to_vec();
    if shape.len() != 3 {
        return Err(FrontendError::Config(format!("PCEN expects [n, frames, channels], got {shape:?}")));
    }
    let (n, frames, channels) = (shape[0], shape[1], shape[2]);
    let params = PcenParams {
        alpha: tape.value(alpha).data().to_vec(),
        delta: tape.value(delta).data().to_vec(),
        root: tape.value(root).data().to_vec(),
        smooth,
        eps,
    };
    if params.delta.len() != channels || params.root.len() != channels || params.alpha.len() != channels {
        return Err(FrontendError::Config(format!("PCEN parameters do not have {channels} channels")));
    }
    let e = tape.value(energy).data().to_vec();
    let block = frames * channels;
    let mut out = Vec::with_capacity(e.len());
    for chunk in e.chunks(block) {
        out.extend(pcen_values(chunk, frames, &params)?);
    }
    let value = Tensor::new(shape, out)?;

    let backward = Box::new(move |g: &[f64], needs: &[bool]| {
        let p = &params;
        let s = p.smooth;
        let mut ge = vec![0.0; e.len()];
        let mut ga = vec![0.0; channels];
        let mut gd = vec![0.0; channels];
        let mut gr = vec![0.0; channels];
        for b in 0..n {
            let eb = &e[b * block..(b + 1) * block];
            let gb = &g[b * block..(b + 1) * block];
            let m = smoother(eb, frames, channels, s);
            // gradient reaching M_t from later frames through the recurrence
            let mut carry = vec![0.0; channels];
            for t in (0..frames).rev() {
                for c in 0..channels {
                    let i = t * channels + c;
                    let (alpha, delta, r) = (p.alpha[c], p.delta[c], p.root[c]);
                    let inv_r = 1.0 / r;
                    let z = p.eps + m[i];
                    let zpow = z.powf(-alpha);
                    let q = eb[i] * zpow;
                    let base = q + delta;
                    let outer = inv_r * base.powf(inv_r - 1.0);
                    let go = gb[i];
                    ga[c] -= go * outer * q * z.ln();
                    gd[c] += go * inv_r * (base.powf(inv_r - 1.0) - delta.powf(inv_r - 1.0));
                    let dpow = |x: f64| if x > 0.0 { x.powf(inv_r) * x.ln() } else { 0.0 };
                    gr[c] -= go * inv_r * inv_r * (dpow(base) - dpow(delta));
                    ge[b * block + i] += go * outer * zpow;
                    let g_m = go * outer * eb[i] * (-alpha) * zpow / z + carry[c];
                    if t > 0 {
                        ge[b * block + i] += s * g_m;
                        carry[c] = (1.0 - s) * g_m;
                    } else {
                        ge[b * block + i] += g_m;
                    }
                }
            }
        }
        vec![
            needs[0].then_some(ge),
            needs[1].then_some(ga),
            needs[2].then_some(gd),
            needs[3].then_some(gr),
        ]
    });
    Ok(tape.custom("pcen", value, &[energy, alpha, delta, root], backward)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_normalizes_to_one() {
        let p = PcenParams::uniform(3, 1.0, 0.0, 1.0, 0.04, 1e-12);
        let e = vec![0.37; 50 * 3];
        let out = pcen_values(&e, 50, &p).unwrap();
        assert!(out.iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn silence_is_zero_at_default_values() {
        let p = PcenParams::uniform(4, 2.0, 2.0, 4.0, 0.04, 1e-6);
        let out = pcen_values(&vec![0.0; 40], 10, &p).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_energy_is_rejected() {
        let p = PcenParams::uniform(1, 2.0, 2.0, 4.0, 0.04, 1e-6);
        assert!(pcen_values(&[1.0, -0.5, 1.0], 3, &p).is_err());
    }

    #[test]
    fn smoother_follows_recurrence() {
        let m = smoother(&[1.0, 3.0, 0.0, 2.0], 2, 2, 0.5);
        assert_eq!(m, vec![1.0, 3.0, 0.5, 2.5]);
    }
}
