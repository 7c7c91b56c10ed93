use medfront::autodiff::{stream_rng, ParamStore, Tape, Tensor};
use medfront::gradcheck::{check, run_suite};

fn grad_of(x: Tensor, f: impl Fn(&mut Tape, medfront::autodiff::Var) -> medfront::autodiff::Var) -> Vec<f64> {
    let mut tape = Tape::new();
    let v = tape.leaf(x);
    let loss = f(&mut tape, v);
    let grads = tape.backward(loss, &mut ParamStore::new()).unwrap();
    grads.get(v).unwrap().data().to_vec()
}

#[test]
fn every_op_matches_finite_differences() {
    for report in run_suite(50, 2024, 1e-3).unwrap() {
        println!("{:<24} worst relative error {:.2e}", report.name, report.worst);
        assert_eq!(report.failures, 0, "{report:?}");
    }
}

#[test]
fn relu_and_swish_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![-2.0, 0.0, 3.0]));
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 3.0]);
    let s = tape.swish(x).unwrap();
    let expect = [-2.0 / (1.0 + 2f64.exp()), 0.0, 3.0 / (1.0 + (-3f64).exp())];
    for (a, b) in tape.value(s).data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn sum_of_squares_gradient_is_twice_input() {
    let g = grad_of(Tensor::from_vec(vec![1.0, -2.0, 0.5]), |t, v| {
        let sq = t.mul(v, v).unwrap();
        t.sum(sq)
    });
    assert_eq!(g, vec![2.0, -4.0, 1.0]);
}

#[test]
fn log_gradient_at_zero_is_inverse_eps() {
    let g = grad_of(Tensor::from_vec(vec![0.0]), |t, v| {
        let y = t.log_eps(v, 1e-6).unwrap();
        t.sum(y)
    });
    assert!((g[0] - 1e6).abs() < 1e-6);
}

#[test]
fn conv2d_with_ones_kernel_sums_windows() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap());
    let w = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let y = tape.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
    // window sums computed by hand: 1+2+4+5, 2+3+5+6, 4+5+7+8, 5+6+8+9
    assert_eq!(tape.value(y).data(), &[12.0, 16.0, 24.0, 28.0]);
}

#[test]
fn dropout_preserves_expectation() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[100_000], 1.0));
    let mut rng = stream_rng(5, 0);
    let y = tape.dropout(x, 0.3, true, &mut rng).unwrap();
    let mean = tape.value(y).data().iter().sum::<f64>() / 100_000.0;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
    let z = tape.dropout(x, 0.3, false, &mut rng).unwrap();
    assert_eq!(z, x);
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        grad_of(Tensor::from_vec((0..12).map(|i| i as f64 / 7.0 - 0.5).collect()), |t, v| {
            let r = t.reshape(v, &[3, 4]).unwrap();
            let m = t.transpose(r).unwrap();
            let p = t.matmul(r, m).unwrap();
            let s = t.swish(p).unwrap();
            t.sum(s)
        })
    };
    assert_eq!(run(), run());
}

#[test]
fn checker_flags_a_wrong_gradient() {
    // relu's true derivative at 0.5 is 1; a deliberately doubled input
    // gradient through a custom op must be caught
    let r = check(&[Tensor::from_vec(vec![0.5, 1.5])], 1e-5, |t, v| {
        let value = t.value(v[0]).clone();
        let y = t.custom("bad", value, &[v[0]], Box::new(|g, _| vec![Some(g.iter().map(|g| 2.0 * g).collect())]))?;
        Ok(t.sum(y))
    })
    .unwrap();
    assert!(!r.passes(1e-3));
}
