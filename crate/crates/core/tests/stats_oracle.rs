use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairprobe::metrics::{mann_whitney_u, vargha_delaney_a12};

/// U of `a` by direct pair counting, ties worth one half.
fn pair_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            u += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
        }
    }
    u
}

/// Two-sided permutation p-value: the share of all relabelings of the
/// pooled sample whose U is at least as far from `n1 n2 / 2` as observed.
fn permutation_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n, k) = (pooled.len(), a.len());
    let mean = (a.len() * b.len()) as f64 / 2.0;
    let dev = (pair_u(a, b) - mean).abs();
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let (x, y): (Vec<f64>, Vec<f64>) = {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (i, &v) in pooled.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    x.push(v)
                } else {
                    y.push(v)
                }
            }
            (x, y)
        };
        total += 1;
        if (pair_u(&x, &y) - mean).abs() >= dev - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

fn suite(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<f64> {
    (0..n)
        .map(|_| if ties { rng.gen_range(0..4) as f64 } else { rng.gen_range(0.0..1.0) })
        .collect()
}

#[test]
fn exact_mode_matches_permutation_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = 0;
    for n1 in 1..=9 {
        for n2 in 1..=(10 - n1) {
            for round in 0..40 {
                let ties = round % 2 == 0;
                let a = suite(&mut rng, n1, ties);
                let b = suite(&mut rng, n2, ties);
                let mw = mann_whitney_u(&a, &b).unwrap();
                assert!(mw.exact);
                assert!((mw.u - pair_u(&a, &b)).abs() < 1e-9, "{a:?} {b:?}");
                let p = permutation_p(&a, &b);
                assert!((mw.p - p).abs() < 1e-12, "{a:?} {b:?}: {} vs {p}", mw.p);
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 45 * 40);
}

#[test]
fn a12_matches_pair_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n1 in 1..=9 {
        for n2 in 1..=(10 - n1) {
            for round in 0..40 {
                let a = suite(&mut rng, n1, round % 2 == 0);
                let b = suite(&mut rng, n2, round % 2 == 0);
                let expected = pair_u(&a, &b) / (n1 * n2) as f64;
                assert!((vargha_delaney_a12(&a, &b).unwrap() - expected).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn reference_values() {
    // scipy.stats.mannwhitneyu, method="exact"
    let mw = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    assert_eq!(mw.u, 0.0);
    assert!((mw.p - 0.1).abs() < 1e-12);
    let mw = mann_whitney_u(&[1.0, 4.0, 2.0, 8.0, 5.0], &[3.0, 6.0, 7.0, 9.0, 10.0, 11.0]).unwrap();
    assert_eq!(mw.u, 5.0);
    assert!((mw.p - 0.08225108225108226).abs() < 1e-12);

    // scipy.stats.mannwhitneyu, method="asymptotic", use_continuity=True
    let a: Vec<f64> = (1..=12).map(f64::from).collect();
    let b: Vec<f64> = (5..=16).map(|x| f64::from(x) + 0.5).collect();
    let mw = mann_whitney_u(&a, &b).unwrap();
    assert!(!mw.exact);
    assert_eq!(mw.u, 28.0);
    assert!((mw.p - 0.012022825407617439).abs() < 1e-9);
    let a = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0, 5.0, 6.0];
    let b = [3.0, 3.0, 4.0, 4.0, 5.0, 5.0, 6.0, 6.0, 7.0, 7.0, 8.0, 8.0];
    let mw = mann_whitney_u(&a, &b).unwrap();
    assert_eq!(mw.u, 25.0);
    assert!((mw.p - 0.011858195484088476).abs() < 1e-9);
}

#[test]
fn a12_reference_points() {
    assert_eq!(vargha_delaney_a12(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 0.0);
    assert_eq!(vargha_delaney_a12(&[5.0], &[5.0]).unwrap(), 0.5);
    assert_eq!(vargha_delaney_a12(&[1.0, 3.0], &[2.0]).unwrap(), 0.5);
    assert!(vargha_delaney_a12(&[], &[1.0]).is_err());
}
