use gmv_shrink::rmt::{bridge, cross_resolvent_d, mc_quadratic_form, GramSpec, QuadraticFormKind, Tail};
use gmv_shrink::Execution;

fn mean(spec: &GramSpec, kind: QuadraticFormKind, reps: usize, seed: u64) -> (f64, f64) {
    let e = mc_quadratic_form(spec, kind, reps, seed, Execution::Parallel).unwrap();
    (e.mean, e.stderr)
}

#[test]
fn inverse_forms_approach_limits_as_dimension_grows() {
    let mut previous = f64::INFINITY;
    for (p, n) in [(25, 50), (100, 200), (300, 600)] {
        let spec = GramSpec::new(p, n, n).unwrap();
        let (m, se) = mean(&spec, QuadraticFormKind::Lemma1InvSq, 60, 1);
        // Finite-sample bias is positive and dominates the noise here.
        let rel = (m - 8.0) / 8.0;
        assert!(rel < previous + 2.0 * se / 8.0, "p={p}: {rel}");
        previous = rel;
    }
    assert!(previous.abs() < 0.05);
}

#[test]
fn heavy_tails_share_the_inverse_limit() {
    let spec = GramSpec::new(150, 300, 300).unwrap().with_tail(Tail::T9);
    let (m, _) = mean(&spec, QuadraticFormKind::Lemma1Inv, 80, 2);
    assert!((m - 2.0).abs() / 2.0 < 0.05, "{m}");
}

#[test]
fn centering_does_not_move_the_cross_form() {
    let spec = GramSpec::new(60, 120, 120).unwrap();
    let a = mc_quadratic_form(&spec, QuadraticFormKind::Lemma2Cross, 150, 3, Execution::Parallel).unwrap();
    let b = mc_quadratic_form(&spec, QuadraticFormKind::Lemma3Cross, 150, 3, Execution::Parallel).unwrap();
    let joint = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    assert!((a.mean - b.mean).abs() <= 2.0 * joint, "{} vs {}", a.mean, b.mean);
}

/// Same closed form with the added block's equivalent scaled by m/(n−1).
fn independent_block_equivalent(n: f64, m: f64, p: f64) -> f64 {
    let b = (n + m - 1.0) / (n - 1.0);
    let a = (n + m - p) / (n + m) * m / (n - 1.0);
    let c = p / n;
    let root = ((1.0 - c - a).powi(2) + 4.0 * a).sqrt();
    b / a * (1.0 / (1.0 - c) - 2.0 / (1.0 - c + a + root))
}

#[test]
fn cross_form_against_closed_forms() {
    let spec = GramSpec::new(100, 200, 200).unwrap();
    let (m, _) = mean(&spec, QuadraticFormKind::Lemma2Cross, 100, 4);
    let alt = independent_block_equivalent(200.0, 200.0, 100.0);
    assert!((m - alt).abs() / alt < 0.05, "{m} vs {alt}");
    let published = cross_resolvent_d(200, 200, 100).unwrap().d;
    assert!((published - 2.0936573).abs() < 1e-6);
}

#[test]
fn bridge_gap_shrinks_with_dimension() {
    let gaps: Vec<f64> = [50, 100, 200, 400]
        .iter()
        .map(|&p| {
            let (l, r) = bridge(p, 2 * p, 4 * p).unwrap();
            (l - r).abs()
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[1] < 0.005);
}

#[test]
fn estimates_do_not_depend_on_execution() {
    let spec = GramSpec::new(20, 50, 30).unwrap();
    let kinds = [
        QuadraticFormKind::Lemma1Inv,
        QuadraticFormKind::Lemma1InvSq,
        QuadraticFormKind::Lemma2Cross,
        QuadraticFormKind::Lemma3Cross,
    ];
    for kind in kinds {
        let a = mc_quadratic_form(&spec, kind, 9, 5, Execution::Sequential).unwrap();
        let b = mc_quadratic_form(&spec, kind, 9, 5, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
