//! Brute-force reference implementations and random instance builders.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use repalign::PointCloud;

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    s
}

/// `order[i]` lists every `j != i` by (distance, index).
pub fn neighbor_order(c: &PointCloud) -> Vec<Vec<usize>> {
    let n = c.n_samples();
    (0..n)
        .map(|i| {
            let mut js: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(c.row(i), c.row(j)), j))
                .collect();
            js.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            js.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// `ranks[i][j]`: 1-based rank of `j` among the neighbors of `i` (0 on the
/// diagonal).
pub fn naive_ranks(c: &PointCloud) -> Vec<Vec<u32>> {
    let n = c.n_samples();
    neighbor_order(c)
        .into_iter()
        .map(|order| {
            let mut row = vec![0u32; n];
            for (r, j) in order.into_iter().enumerate() {
                row[j] = r as u32 + 1;
            }
            row
        })
        .collect()
}

pub fn naive_rank_sum(x: &PointCloud, y: &PointCloud) -> u64 {
    let ox = neighbor_order(x);
    let ry = naive_ranks(y);
    (0..x.n_samples()).map(|i| u64::from(ry[i][ox[i][0]])).sum()
}

pub fn naive_ii(x: &PointCloud, y: &PointCloud) -> f64 {
    let n = x.n_samples();
    2.0 * naive_rank_sum(x, y) as f64 / ((n - 1) * n) as f64
}

pub fn naive_overlap_count(x: &PointCloud, y: &PointCloud, k: usize) -> usize {
    let ox = neighbor_order(x);
    let oy = neighbor_order(y);
    ox.iter()
        .zip(&oy)
        .map(|(a, b)| a[..k].iter().filter(|j| b[..k].contains(j)).count())
        .sum()
}

pub fn naive_no(x: &PointCloud, y: &PointCloud, k: usize) -> f64 {
    naive_overlap_count(x, y, k) as f64 / (k * x.n_samples()) as f64
}

pub fn matrix(c: &PointCloud) -> DMatrix<f64> {
    DMatrix::from_row_slice(c.n_samples(), c.dim(), c.data())
}

fn centered(c: &PointCloud) -> DMatrix<f64> {
    let mut m = matrix(c);
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    m
}

/// Feature-space formula with explicit column centering.
pub fn direct_cka(x: &PointCloud, y: &PointCloud) -> f64 {
    let xc = centered(x);
    let yc = centered(y);
    let cross = yc.transpose() * &xc;
    let xx = xc.transpose() * &xc;
    let yy = yc.transpose() * &yc;
    cross.norm_squared() / (xx.norm() * yy.norm())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
    let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    PointCloud::from_data(data, d).unwrap()
}

/// Small integer coordinates: plenty of exact distance ties.
pub fn lattice(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
    let data = (0..n * d)
        .map(|_| f64::from(rng.random_range(-2i32..=2)))
        .collect();
    PointCloud::from_data(data, d).unwrap()
}

/// Gaussian rows where a third of the rows repeat earlier rows exactly.
pub fn with_duplicates(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
    let base = gaussian(rng, n, d);
    let mut data = base.data().to_vec();
    for i in 1..n {
        if rng.random_bool(1.0 / 3.0) {
            let src = rng.random_range(0..i);
            let row: Vec<f64> = data[src * d..(src + 1) * d].to_vec();
            data[i * d..(i + 1) * d].copy_from_slice(&row);
        }
    }
    PointCloud::from_data(data, d).unwrap()
}

/// Gaussian rows with a large common offset, so the Gram expansion loses
/// most significant digits.
pub fn offset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
    let base = gaussian(rng, n, d);
    let data = base.data().iter().map(|v| v * 1e-3 + 1e4).collect();
    PointCloud::from_data(data, d).unwrap()
}

/// Instance `i` of the randomized oracle corpus: sizes `N <= 200`,
/// `D <= 50`, cycling through Gaussian, lattice, duplicate-row and
/// large-offset families (lattice and duplicate families are the
/// duplicate-point instances).
pub fn oracle_instance(i: u64) -> (PointCloud, PointCloud) {
    let mut r = rng(0xA11CE ^ i);
    let n = r.random_range(3..=200);
    let dx = r.random_range(1..=50);
    let dy = r.random_range(1..=50);
    let make = |r: &mut ChaCha8Rng, d: usize| match i % 4 {
        0 => gaussian(r, n, d),
        1 => lattice(r, n, d.min(4)),
        2 => with_duplicates(r, n, d),
        _ => offset(r, n, d),
    };
    let x = make(&mut r, dx);
    let y = make(&mut r, dy);
    (x, y)
}
