use proptest::prelude::*;
use shapegd::shape::wasserstein_1d;

const BINS: usize = 50;

fn normalized(weights: Vec<u32>) -> Vec<f64> {
    let total: u32 = weights.iter().sum();
    weights.iter().map(|&w| w as f64 / total as f64).collect()
}

fn histogram() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u32..100, BINS)
        .prop_filter("needs mass", |w| w.iter().any(|&x| x > 0))
        .prop_map(normalized)
}

/// Optimal transport on a line by matching mass in order, unit bin spacing.
fn greedy_transport(p: &[f64], q: &[f64]) -> f64 {
    let (mut p, mut q) = (p.to_vec(), q.to_vec());
    let (mut i, mut j, mut cost) = (0, 0, 0.0);
    while i < p.len() && j < q.len() {
        if p[i] <= 1e-15 {
            i += 1;
            continue;
        }
        if q[j] <= 1e-15 {
            j += 1;
            continue;
        }
        let m = p[i].min(q[j]);
        cost += m * (i as f64 - j as f64).abs();
        p[i] -= m;
        q[j] -= m;
    }
    cost
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metric_axioms(a in histogram(), b in histogram(), c in histogram()) {
        let ab = wasserstein_1d(&a, &b).unwrap();
        let ba = wasserstein_1d(&b, &a).unwrap();
        let bc = wasserstein_1d(&b, &c).unwrap();
        let ac = wasserstein_1d(&a, &c).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert_eq!(wasserstein_1d(&a, &a).unwrap(), 0.0);
        if a != b {
            prop_assert!(ab > 0.0);
        }
        prop_assert!(ab + bc - ac >= -1e-9);
    }

    #[test]
    fn agrees_with_greedy_transport(a in histogram(), b in histogram()) {
        let w = wasserstein_1d(&a, &b).unwrap();
        prop_assert!((w - greedy_transport(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn hand_derived_values() {
    assert_eq!(wasserstein_1d(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    let mut p = vec![0.0; 5];
    let mut q = vec![0.0; 5];
    p[1] = 1.0;
    q[4] = 1.0;
    assert_eq!(wasserstein_1d(&p, &q).unwrap(), 3.0);
    assert_eq!(wasserstein_1d(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.5);
}

#[test]
fn rejects_mismatched_lengths() {
    assert!(wasserstein_1d(&[1.0], &[0.5, 0.5]).is_err());
}
