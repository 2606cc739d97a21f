mod common;

use common::*;
use nalgebra::DMatrix;
use repalign::metrics::MetricKind;
use repalign::synthbench::{gen_rank_pair, gen_subset_pair};
use repalign::{asymmetry, information_imbalance, jackknife, linear_cka, neighborhood_overlap};

/// Standard deviation of the mean overlap for independent clouds: each
/// sample's shared count is hypergeometric (population `N-1`, `k`
/// marked, `k` drawn).
fn overlap_sigma(n: usize, k: usize) -> f64 {
    let m = (n - 1) as f64;
    let k = k as f64;
    let var = k * (k / m) * (1.0 - k / m) * (m - k) / (m - 1.0);
    var.sqrt() / k / (n as f64).sqrt()
}

#[test]
fn independent_clouds_are_uninformative() {
    let mut r = rng(5);
    let x = gaussian(&mut r, 1000, 10);
    let y = gaussian(&mut r, 1000, 10);
    for v in [
        information_imbalance(&x, &y).unwrap().value,
        information_imbalance(&y, &x).unwrap().value,
    ] {
        assert!((v - 1.0).abs() <= 0.05, "{v}");
    }
    let no = neighborhood_overlap(&x, &y, 10).unwrap().value;
    let expect = 10.0 / 999.0;
    assert!(
        (no - expect).abs() <= 3.0 * overlap_sigma(1000, 10),
        "{no} vs {expect}"
    );
    let band = jackknife(MetricKind::II_XY, &x, &y, 5, 3).unwrap();
    assert!(band.jackknife_std < 0.05);
}

#[test]
fn independent_cka_follows_dimension_ratio() {
    // Feature-centered linear CKA of independent clouds is not near zero
    // once p is comparable to n: E|Y^T X|^2 = n p^2 against
    // |X^T X| |Y^T Y| = p n^2 + p^2 n.
    let mut r = rng(6);
    for (n, p) in [(1000, 10), (250, 1000), (300, 300)] {
        let x = gaussian(&mut r, n, p);
        let y = gaussian(&mut r, n, p);
        let got = linear_cka(&x, &y).unwrap().value;
        let (nf, pf) = (n as f64, p as f64);
        let expect = nf * pf * pf / (pf * nf * nf + pf * pf * nf);
        assert!((got - expect).abs() < 0.02, "n {n} p {p}: {got} vs {expect}");
    }
    let x = gaussian(&mut r, 2500, 10);
    let y = gaussian(&mut r, 2500, 10);
    assert!(linear_cka(&x, &y).unwrap().value < 0.05);
}

#[test]
fn identical_clouds_have_flat_band() {
    let x = gaussian(&mut rng(7), 101, 4);
    let r = jackknife(MetricKind::II_XY, &x, &x, 6, 1).unwrap();
    assert_eq!(r.value, 2.0 / 100.0);
    assert_eq!(r.jackknife_mean, 2.0 / 49.0);
    assert_eq!(r.jackknife_std, 0.0);
    assert_eq!(linear_cka(&x, &x).unwrap().value, 1.0);
}

fn singular_values(map: &[f64], p: usize) -> Vec<f64> {
    let mut s: Vec<f64> = DMatrix::from_row_slice(p, p, map)
        .singular_values()
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[test]
fn rank_pair_map_has_requested_rank() {
    for r in 1..=10 {
        let pair = gen_rank_pair(10, 20, r, 0.1, 3).unwrap();
        let s = singular_values(&pair.map, 10);
        assert!(s[r - 1] > 1e-8 * s[0], "rank {r}");
        if r < 10 {
            assert!(s[r] < 1e-8 * s[0], "rank {r}: {s:?}");
        }
    }
}

#[test]
fn full_rank_noiseless_map_predicts_well_but_not_perfectly() {
    let pair = gen_rank_pair(10, 1000, 10, 0.0, 4).unwrap();
    let floor = 2.0 / 999.0;
    let xy = information_imbalance(&pair.x, &pair.y).unwrap().value;
    let yx = information_imbalance(&pair.y, &pair.x).unwrap().value;
    for v in [xy, yx] {
        assert!(v > floor && v < 0.3, "{v}");
    }
}

#[test]
fn full_vector_predicts_its_subset() {
    for (i, f) in [0.01, 0.1, 0.25, 0.5].into_iter().enumerate() {
        let (full, sub) = gen_subset_pair(100, 600, f, 10 + i as u64).unwrap();
        let fwd = jackknife(MetricKind::II_XY, &full, &sub, 5, 1).unwrap();
        let back = jackknife(MetricKind::II_XY, &sub, &full, 5, 1).unwrap();
        assert!(
            fwd.value <= back.value + 3.0 * fwd.jackknife_std.max(back.jackknife_std),
            "fraction {f}"
        );
    }
    let (full, one) = gen_subset_pair(100, 1000, 0.01, 20).unwrap();
    assert_eq!(one.dim(), 1);
    assert!(asymmetry(&full, &one).unwrap().a_value < 0.0);
    let (full, same) = gen_subset_pair(30, 200, 1.0, 21).unwrap();
    assert_eq!(information_imbalance(&full, &same).unwrap().value, 2.0 / 199.0);
    assert_eq!(information_imbalance(&same, &full).unwrap().value, 2.0 / 199.0);
}
