use medfront::datasets::Label;
use medfront::eval::{
    compare_frontends, holm_correct, mcnemar, mcnemar_from_counts, metrics, ConfusionCounts, EvalError,
    McNemarMethod,
};
use proptest::prelude::*;

fn labels(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|&b| if b { Label::Abnormal } else { Label::Normal }).collect()
}

/// Predictions where `a` differs from truth on the first `wrong_a` cases and `b` on the next `wrong_b`.
fn discordant(n: usize, wrong_a: usize, wrong_b: usize) -> (Vec<Label>, Vec<Label>, Vec<Label>) {
    let truth: Vec<Label> = (0..n).map(|i| Label::from_index(i % 2).unwrap()).collect();
    let flip = |l: Label| Label::from_index(1 - l.index()).unwrap();
    let mut a = truth.clone();
    let mut b = truth.clone();
    for l in &mut a[..wrong_a] {
        *l = flip(*l);
    }
    for l in &mut b[wrong_a..wrong_a + wrong_b] {
        *l = flip(*l);
    }
    (a, b, truth)
}

#[test]
fn identical_predictions_give_unit_p_for_every_pair() {
    let truth = labels(&[true, false, true, true, false, false]);
    let pred = labels(&[true, true, false, true, false, false]);
    let report = compare_frontends(&pred, &pred, &pred, &truth).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.pair).collect();
    assert_eq!(names, ["Mel-LEAF", "Mel-nnAudio", "LEAF-nnAudio"]);
    for r in &report.rows {
        assert_eq!((r.test.b, r.test.c), (0, 0));
        assert_eq!(r.test.p_value, 1.0);
        assert_eq!(r.p_holm, 1.0);
        assert!(!r.significant);
    }
}

#[test]
fn one_discordant_pair_in_the_family_is_the_only_flag() {
    // b = 0, c = 30 for one pair and no discordance for the other two
    let raw = [mcnemar_from_counts(0, 30).p_value, 1.0, 1.0];
    let adj = holm_correct(&raw);
    assert!(adj[0] < 0.05);
    assert!(adj[1] >= 0.05 && adj[2] >= 0.05);
}

#[test]
fn a_run_that_fixes_thirty_errors_is_flagged_against_both_others() {
    // with binary labels every disagreement is discordant, so a run that differs from
    // mel on 30 cases also differs from a leaf run identical to mel
    let (mel, _, truth) = discordant(200, 30, 0);
    let nnaudio = truth.clone();
    let report = compare_frontends(&mel, &mel, &nnaudio, &truth).unwrap();
    assert_eq!((report.rows[1].test.b, report.rows[1].test.c), (0, 30));
    assert_eq!(report.significant_pairs(), vec!["Mel-nnAudio", "LEAF-nnAudio"]);
    assert_eq!(report.rows[0].p_holm, 1.0);
}

#[test]
fn csv_layout() {
    let (a, b, truth) = discordant(50, 5, 15);
    let report = compare_frontends(&a, &b, &a, &truth).unwrap();
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "pair,b,c,statistic,p_raw,p_holm,significant");
    assert!(lines[1].starts_with("Mel-LEAF,15,5,5,"));
    assert!(lines[2].starts_with("Mel-nnAudio,0,0,0,1,1,false"));
    assert_eq!(lines.len(), 4);
    let table = report.to_string();
    assert!(table.contains("Mel-LEAF") && table.contains("p (Holm)"));
}

#[test]
fn length_mismatch_is_an_error() {
    let t = labels(&[true, false]);
    assert_eq!(
        mcnemar(&labels(&[true]), &t, &t),
        Err(EvalError::LengthMismatch(1, 2))
    );
    assert!(ConfusionCounts::from_predictions(&labels(&[true]), &t).is_err());
}

proptest! {
    #[test]
    fn metrics_are_permutation_invariant(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 2..80), seed in any::<u64>()) {
        let truth: Vec<bool> = bits.iter().map(|b| b.0).collect();
        prop_assume!(truth.iter().any(|&t| t) && truth.iter().any(|&t| !t));
        let pred: Vec<bool> = bits.iter().map(|b| b.1).collect();
        let mut idx: Vec<usize> = (0..bits.len()).collect();
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let perm = |v: &[bool]| labels(&idx.iter().map(|&i| v[i]).collect::<Vec<_>>());
        let m1 = metrics(ConfusionCounts::from_predictions(&labels(&pred), &labels(&truth)).unwrap()).unwrap();
        let m2 = metrics(ConfusionCounts::from_predictions(&perm(&pred), &perm(&truth)).unwrap()).unwrap();
        prop_assert_eq!(m1, m2);
    }

    #[test]
    fn mcnemar_is_symmetric(b in 0usize..80, c in 0usize..80) {
        let r1 = mcnemar_from_counts(b, c);
        let r2 = mcnemar_from_counts(c, b);
        prop_assert_eq!((r1.b, r1.c), (r2.c, r2.b));
        prop_assert_eq!(r1.p_value, r2.p_value);
        prop_assert!((0.0..=1.0).contains(&r1.p_value));
    }

    #[test]
    fn mcnemar_from_predictions_swaps(n in 4usize..60, wa in 0usize..20, wb in 0usize..20) {
        prop_assume!(wa + wb <= n);
        let (a, b, truth) = discordant(n, wa, wb);
        let r1 = mcnemar(&a, &b, &truth).unwrap();
        let r2 = mcnemar(&b, &a, &truth).unwrap();
        prop_assert_eq!((r1.b, r1.c), (wb, wa));
        prop_assert_eq!((r2.b, r2.c), (wa, wb));
        prop_assert_eq!(r1.p_value, r2.p_value);
    }

    #[test]
    fn holm_is_monotone_and_never_below_raw(p in prop::collection::vec(0.0f64..=1.0, 1..12)) {
        let adj = holm_correct(&p);
        for (a, r) in adj.iter().zip(&p) {
            prop_assert!(*a >= *r && *a <= 1.0);
        }
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
        for w in order.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
    }

    #[test]
    fn exact_and_asymptotic_agree_near_the_boundary(b in 0usize..=60, c in 0usize..=60) {
        let n = b + c;
        prop_assume!((25..=60).contains(&n));
        let asym = mcnemar_from_counts(b, c);
        prop_assert_eq!(asym.method, McNemarMethod::Chi2Cc);
        let dist = statrs::distribution::Binomial::new(0.5, n as u64).unwrap();
        let exact = (2.0 * statrs::distribution::DiscreteCDF::cdf(&dist, b.min(c) as u64)).min(1.0);
        prop_assert!((asym.p_value - exact).abs() < 0.02, "b={b} c={c} {} vs {exact}", asym.p_value);
    }
}
