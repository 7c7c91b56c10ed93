//! Randomized finite-difference checks of every differentiable operator and
//! of both learnable frontends end to end.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{check, GradCheck};
use crate::autodiff::{stream_rng, AutodiffError, Result, Tape, Tensor, Var};
use crate::frontends::{
    gabor_pool, leaf_forward_vars, nnaudio_project, pcen, Compression, FrontendConfig, FrontendError, PcenConfig,
};

/// Outcome of one operator over all of its random configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub configs: usize,
    pub failures: usize,
    pub worst: f64,
}

type CaseFn = fn(&mut ChaCha8Rng) -> Result<GradCheck>;

const H: f64 = 1e-5;

/// Every checked case, by name.
pub const CASES: &[(&str, CaseFn)] = &[
    ("add", add),
    ("sub", sub),
    ("mul", mul),
    ("scale", scale),
    ("sum", sum),
    ("mean", mean),
    ("matmul", matmul),
    ("transpose", transpose),
    ("reshape", reshape),
    ("stack", stack),
    ("relu", relu),
    ("sigmoid", sigmoid),
    ("swish", swish),
    ("log_eps", log_eps),
    ("power", power),
    ("dropout", dropout),
    ("dense", dense),
    ("softmax_cross_entropy", softmax_cross_entropy),
    ("conv1d", conv1d),
    ("conv2d", conv2d),
    ("max_pool2d", max_pool2d),
    ("mean_pool1d", mean_pool1d),
    ("gabor_pool", gabor),
    ("pcen", pcen_case),
    ("leaf_frontend", leaf_frontend),
    ("nnaudio_frontend", nnaudio_frontend),
];

/// Runs `configs` random configurations of every case; a configuration
/// fails when its worst relative error exceeds `tol`.
pub fn run_suite(configs: usize, seed: u64, tol: f64) -> Result<Vec<CaseReport>> {
    CASES
        .iter()
        .enumerate()
        .map(|(i, &(name, case))| {
            let mut rng = stream_rng(seed, i as u64);
            let mut report = CaseReport {
                name,
                configs,
                failures: 0,
                worst: 0.0,
            };
            for _ in 0..configs {
                let r = case(&mut rng)?;
                report.worst = report.worst.max(r.max_rel_error);
                if !r.passes(tol) {
                    report.failures += 1;
                }
            }
            Ok(report)
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("nonzero dims")
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape, 0.1, 1.0);
    t.data_mut().iter_mut().for_each(|v| {
        if rng.random_bool(0.5) {
            *v = -*v
        }
    });
    t
}

fn dims(rng: &mut ChaCha8Rng, rank: usize, max: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=max)).collect()
}

/// Reduces `out` to a scalar with fixed, non-uniform weights so every output
/// element contributes a distinct amount.
fn weighted(tape: &mut Tape, out: Var, phase: f64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let n = tape.value(out).len();
    let w: Vec<f64> = (0..n).map(|i| (0.7 * i as f64 + phase).sin() + 0.3).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn frontend_err(e: FrontendError) -> AutodiffError {
    match e {
        FrontendError::Autodiff(e) => e,
        other => AutodiffError::InvalidArgument {
            op: "frontend",
            msg: other.to_string(),
        },
    }
}

fn unary(rng: &mut ChaCha8Rng, x: Tensor, f: fn(&mut Tape, Var) -> Result<Var>) -> Result<GradCheck> {
    let phase = rng.random_range(0.0..6.0);
    check(&[x], H, move |t, v| {
        let y = f(t, v[0])?;
        weighted(t, y, phase)
    })
}

fn broadcast_pair(rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let rank = rng.random_range(1..=3);
    let a = dims(rng, rank, 4);
    let b = match rng.random_range(0..3) {
        0 => vec![1],
        1 => a.clone(),
        _ => a[rng.random_range(0..rank)..].to_vec(),
    };
    (uniform(rng, &a, -1.0, 1.0), uniform(rng, &b, -1.0, 1.0))
}

fn binary(rng: &mut ChaCha8Rng, f: fn(&mut Tape, Var, Var) -> Result<Var>) -> Result<GradCheck> {
    let (a, b) = broadcast_pair(rng);
    let phase = rng.random_range(0.0..6.0);
    check(&[a, b], H, move |t, v| {
        let y = f(t, v[0], v[1])?;
        weighted(t, y, phase)
    })
}

fn add(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    binary(rng, |t, a, b| t.add(a, b))
}

fn sub(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    binary(rng, |t, a, b| t.sub(a, b))
}

fn mul(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    binary(rng, |t, a, b| t.mul(a, b))
}

fn scale(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let x = { let d = dims(rng, 2, 4); uniform(rng, &d, -1.0, 1.0) };
    let c = rng.random_range(-3.0..3.0);
    let phase = rng.random_range(0.0..6.0);
    check(&[x], H, move |t, v| {
        let y = t.scale(v[0], c)?;
        weighted(t, y, phase)
    })
}

fn sum(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let x = { let d = dims(rng, 3, 3); uniform(rng, &d, -1.0, 1.0) };
    check(&[x], H, |t, v| {
        let s = t.sum(v[0]);
        t.mul(s, s)
    })
}

fn mean(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let x = { let d = dims(rng, 3, 3); uniform(rng, &d, -1.0, 1.0) };
    check(&[x], H, |t, v| {
        let s = t.mean(v[0]);
        t.mul(s, s)
    })
}

fn matmul(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let [m, k, n] = [0; 3].map(|_| rng.random_range(1..=4));
    let a = uniform(rng, &[m, k], -1.0, 1.0);
    let b = uniform(rng, &[k, n], -1.0, 1.0);
    let phase = rng.random_range(0.0..6.0);
    check(&[a, b], H, move |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted(t, y, phase)
    })
}

fn transpose(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let rank = rng.random_range(2..=3);
    let x = { let d = dims(rng, rank, 4); uniform(rng, &d, -1.0, 1.0) };
    unary(rng, x, |t, v| t.transpose(v))
}

fn reshape(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let d = dims(rng, 3, 4);
    let x = uniform(rng, &d, -1.0, 1.0);
    let phase = rng.random_range(0.0..6.0);
    check(&[x], H, move |t, v| {
        let y = t.reshape(v[0], &[d[0] * d[1], d[2]])?;
        weighted(t, y, phase)
    })
}

fn stack(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let d = dims(rng, 2, 3);
    let k = rng.random_range(1..=3);
    let xs: Vec<Tensor> = (0..k).map(|_| uniform(rng, &d, -1.0, 1.0)).collect();
    let phase = rng.random_range(0.0..6.0);
    check(&xs, H, move |t, v| {
        let y = t.stack(v)?;
        weighted(t, y, phase)
    })
}

fn relu(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let x = { let d = dims(rng, 2, 5); away_from_zero(rng, &d) };
    unary(rng, x, |t, v| t.relu(v))
}

fn sigmoid(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let x = { let d = dims(rng, 2, 5); uniform(rng, &d, -4.0, 4.0) };
    unary(rng, x, |t, v| t.sigmoid(v))
}

fn swish(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let x = { let d = dims(rng, 2, 5); uniform(rng, &d, -4.0, 4.0) };
    unary(rng, x, |t, v| t.swish(v))
}

fn log_eps(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let x = { let d = dims(rng, 2, 5); uniform(rng, &d, 0.05, 2.0) };
    let eps = rng.random_range(1e-3..0.5);
    let phase = rng.random_range(0.0..6.0);
    check(&[x], H, move |t, v| {
        let y = t.log_eps(v[0], eps)?;
        weighted(t, y, phase)
    })
}

fn power(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let d = dims(rng, 2, 4);
    let x = uniform(rng, &d, 0.2, 2.0);
    let r = uniform(rng, &d[1..], 0.5, 3.0);
    let phase = rng.random_range(0.0..6.0);
    check(&[x, r], H, move |t, v| {
        let y = t.power(v[0], v[1])?;
        weighted(t, y, phase)
    })
}

fn dropout(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let x = { let d = dims(rng, 2, 6); uniform(rng, &d, -1.0, 1.0) };
    let p = rng.random_range(0.1..0.7);
    let seed = rng.random::<u64>();
    let phase = rng.random_range(0.0..6.0);
    check(&[x], H, move |t, v| {
        let mut mask_rng = stream_rng(seed, 0);
        let y = t.dropout(v[0], p, true, &mut mask_rng)?;
        weighted(t, y, phase)
    })
}

fn dense(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let [n, i, o] = [0; 3].map(|_| rng.random_range(1..=4));
    let x = uniform(rng, &[n, i], -1.0, 1.0);
    let w = uniform(rng, &[i, o], -1.0, 1.0);
    let b = uniform(rng, &[o], -1.0, 1.0);
    let phase = rng.random_range(0.0..6.0);
    check(&[x, w, b], H, move |t, v| {
        let y = t.dense(v[0], v[1], v[2])?;
        weighted(t, y, phase)
    })
}

fn softmax_cross_entropy(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (n, k) = (rng.random_range(1..=5), rng.random_range(2..=4));
    let logits = uniform(rng, &[n, k], -3.0, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    check(&[logits], H, move |t, v| t.softmax_cross_entropy(v[0], &labels))
}

fn conv1d(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (n, cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
    let k = rng.random_range(1..=4);
    let len = rng.random_range(k..=k + 6);
    let (stride, padding) = (rng.random_range(1..=2), rng.random_range(0..=2));
    let with_bias = rng.random_bool(0.5);
    let mut inputs = vec![
        uniform(rng, &[n, cin, len], -1.0, 1.0),
        uniform(rng, &[cout, cin, k], -1.0, 1.0),
    ];
    if with_bias {
        inputs.push(uniform(rng, &[cout], -1.0, 1.0));
    }
    let phase = rng.random_range(0.0..6.0);
    check(&inputs, H, move |t, v| {
        let y = t.conv1d(v[0], v[1], v.get(2).copied(), stride, padding)?;
        weighted(t, y, phase)
    })
}

fn conv2d(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (n, cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=3));
    let k = rng.random_range(1..=3);
    let (h, w) = (rng.random_range(k..=k + 4), rng.random_range(k..=k + 4));
    let (stride, padding) = (rng.random_range(1..=2), rng.random_range(0..=1));
    let with_bias = rng.random_bool(0.5);
    let mut inputs = vec![
        uniform(rng, &[n, cin, h, w], -1.0, 1.0),
        uniform(rng, &[cout, cin, k, k], -1.0, 1.0),
    ];
    if with_bias {
        inputs.push(uniform(rng, &[cout], -1.0, 1.0));
    }
    let phase = rng.random_range(0.0..6.0);
    check(&inputs, H, move |t, v| {
        let y = t.conv2d(v[0], v[1], v.get(2).copied(), stride, padding)?;
        weighted(t, y, phase)
    })
}

fn max_pool2d(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let kernel = rng.random_range(1..=3);
    let stride = rng.random_range(1..=kernel);
    let shape = [
        rng.random_range(1..=2),
        rng.random_range(1..=2),
        rng.random_range(kernel..=kernel + 3),
        rng.random_range(kernel..=kernel + 3),
    ];
    // distinct values well apart so no finite-difference step flips an argmax
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    values.shuffle(rng);
    let x = Tensor::new(shape.to_vec(), values)?;
    let phase = rng.random_range(0.0..6.0);
    check(&[x], H, move |t, v| {
        let y = t.max_pool2d(v[0], kernel, stride)?;
        weighted(t, y, phase)
    })
}

fn mean_pool1d(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let kernel = rng.random_range(1..=4);
    let stride = rng.random_range(1..=3);
    let len = rng.random_range(kernel..=kernel + 8);
    let rows = rng.random_range(1..=3);
    let x = uniform(rng, &[rows, len], -1.0, 1.0);
    let phase = rng.random_range(0.0..6.0);
    check(&[x], H, move |t, v| {
        let y = t.mean_pool1d(v[0], kernel, stride)?;
        weighted(t, y, phase)
    })
}

/// Small Gabor geometry: 2 s would make each finite difference a full
/// forward pass over 128 channels, so the checks use short signals.
fn small_leaf_config(rng: &mut ChaCha8Rng, channels: usize) -> FrontendConfig {
    FrontendConfig {
        window_ms: 6.0,
        hop_ms: 2.0,
        n_filters: channels,
        fmin_hz: 100.0,
        fmax_hz: 1800.0,
        sample_rate: 4000,
        compression: Compression::Pcen,
        gabor_len: 2 * rng.random_range(5..=15) + 1,
        pcen: PcenConfig {
            smooth: rng.random_range(0.02..0.5),
            ..PcenConfig::default()
        },
        ..FrontendConfig::default()
    }
}

fn signals(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn gabor_params(rng: &mut ChaCha8Rng, c: usize) -> Vec<Tensor> {
    vec![
        uniform(rng, &[c], 150.0, 1800.0),
        uniform(rng, &[c], 60.0, 600.0),
        uniform(rng, &[c], 0.2, 1.0),
    ]
}

fn pcen_params(rng: &mut ChaCha8Rng, c: usize) -> Vec<Tensor> {
    vec![
        uniform(rng, &[c], 0.5, 2.5),
        uniform(rng, &[c], 0.5, 3.0),
        uniform(rng, &[c], 1.5, 5.0),
    ]
}

fn gabor(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let c = rng.random_range(1..=3);
    let cfg = small_leaf_config(rng, c);
    let len = rng.random_range(60..=120);
    let n = rng.random_range(1..=2);
    let xs = signals(rng, n, len);
    let phase = rng.random_range(0.0..6.0);
    check(&gabor_params(rng, c), H, move |t, v| {
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let y = gabor_pool(
            t,
            &refs,
            v[0],
            v[1],
            v[2],
            cfg.gabor_len,
            cfg.window_samples(),
            cfg.hop_samples(),
            4000.0,
        )
        .map_err(frontend_err)?;
        weighted(t, y, phase)
    })
}

fn pcen_case(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let c = rng.random_range(1..=3);
    let (n, frames) = (rng.random_range(1..=2), rng.random_range(2..=12));
    let smooth = rng.random_range(0.02..0.5);
    let mut inputs = vec![uniform(rng, &[n, frames, c], 0.1, 2.0)];
    inputs.extend(pcen_params(rng, c));
    let phase = rng.random_range(0.0..6.0);
    check(&inputs, H, move |t, v| {
        let y = pcen(t, v[0], v[1], v[2], v[3], smooth, 1e-6).map_err(frontend_err)?;
        weighted(t, y, phase)
    })
}

fn leaf_frontend(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let c = rng.random_range(1..=3);
    let cfg = small_leaf_config(rng, c);
    let len = rng.random_range(60..=120);
    let xs = signals(rng, 1, len);
    let mut inputs = gabor_params(rng, c);
    inputs.extend(pcen_params(rng, c));
    let phase = rng.random_range(0.0..6.0);
    check(&inputs, H, move |t, v| {
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let vars = [v[0], v[1], v[2], v[3], v[4], v[5]];
        let y = leaf_forward_vars(t, &refs, vars, &cfg).map_err(frontend_err)?;
        weighted(t, y, phase)
    })
}

fn nnaudio_frontend(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let window = rng.random_range(4..=10);
    let hop = rng.random_range(2..=window);
    let bins = rng.random_range(2..=6);
    let channels = rng.random_range(1..=3);
    let len = rng.random_range(window..=window + 20);
    let n = rng.random_range(1..=2);
    let x = uniform(rng, &[n, 1, len], -1.0, 1.0);
    let inputs = vec![
        uniform(rng, &[bins, window], -1.0, 1.0),
        uniform(rng, &[bins, window], -1.0, 1.0),
        uniform(rng, &[channels, bins], 0.1, 1.0),
    ];
    let phase = rng.random_range(0.0..6.0);
    check(&inputs, H, move |t, v| {
        let xv = t.constant(x.clone());
        let y = nnaudio_project(t, xv, v[0], v[1], v[2], hop, 1e-6).map_err(frontend_err)?;
        weighted(t, y, phase)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes_a_few_configurations() {
        for report in run_suite(3, 11, 1e-3).unwrap() {
            assert_eq!(report.failures, 0, "{report:?}");
        }
    }
}
