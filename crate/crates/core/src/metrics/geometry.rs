//! Pairwise geometry of a point cloud: a blocked Gram kernel plus an exact
//! neighbor ordering built on top of it.
//!
//! Squared distances come from `|a|^2 + |b|^2 - 2 a.b`, which is fast but
//! loses relative accuracy when two candidates are almost equidistant.
//! [`NeighborRow`] compares two candidates through the Gram values only when
//! their gap exceeds a rigorous rounding bound, and otherwise falls back to
//! direct subtraction `sum_k (a_k - b_k)^2`, so every ordering it produces
//! is the one a plain double loop would produce.
//!
//! The Gram matrix is taken over the column-centered cloud. Distances do
//! not change under a shift, centering keeps the expansion well conditioned
//! for clouds far from the origin, and the centered Gram is exactly what
//! linear CKA needs.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::tensorio::PointCloud;

/// Rows of the Gram matrix handled by one parallel task.
const PANEL: usize = 32;
/// Feature chunk length. Partial dot products are reduced per chunk and
/// the chunk sums added in order, so every entry has a fixed summation
/// order independent of scheduling.
const KC: usize = 512;
const LANES: usize = 4;
const TILE: usize = 4;

/// Symmetric Gram matrix `X X^T`, row-major `n x n`.
pub fn gram_matrix(cloud: &PointCloud) -> Vec<f64> {
    gram_of(cloud.data(), cloud.n_samples(), cloud.dim())
}

/// `X - 1 mu^T` with `mu` the column means, summed in row order.
pub fn center_columns(cloud: &PointCloud) -> Vec<f64> {
    let d = cloud.dim();
    let mut mean = vec![0.0f64; d];
    for i in 0..cloud.n_samples() {
        for (m, v) in mean.iter_mut().zip(cloud.row(i)) {
            *m += v;
        }
    }
    let n = cloud.n_samples() as f64;
    for m in &mut mean {
        *m /= n;
    }
    let mut out = cloud.data().to_vec();
    out.par_chunks_mut(d).for_each(|row| {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    });
    out
}

fn gram_of(data: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut gram = vec![0.0f64; n * n];

    gram.par_chunks_mut(PANEL * n)
        .enumerate()
        .for_each(|(panel, out)| {
            let row0 = panel * PANEL;
            let rows = out.len() / n;
            for k0 in (0..d).step_by(KC) {
                let k1 = (k0 + KC).min(d);
                let mut i = 0;
                while i < rows {
                    let ti = TILE.min(rows - i);
                    let gi = row0 + i;
                    // Upper triangle only, starting at the tile's first row.
                    let mut j = gi;
                    while j < n {
                        let tj = TILE.min(n - j);
                        let mut tile = [[0.0f64; TILE]; TILE];
                        dot_tile(data, d, gi, ti, j, tj, k0, k1, &mut tile);
                        for a in 0..ti {
                            let orow = &mut out[(i + a) * n..(i + a + 1) * n];
                            for b in 0..tj {
                                orow[j + b] += tile[a][b];
                            }
                        }
                        j += tj;
                    }
                    i += ti;
                }
            }
        });

    // Mirror the upper triangle.
    for i in 0..n {
        for j in 0..i {
            gram[i * n + j] = gram[j * n + i];
        }
    }
    gram
}

/// Dot products of rows `i0..i0+ti` against rows `j0..j0+tj` over features
/// `k0..k1`. Each entry accumulates in `LANES` strided partial sums reduced
/// pairwise, so the result for one entry never depends on the tile shape.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn dot_tile(
    data: &[f64],
    d: usize,
    i0: usize,
    ti: usize,
    j0: usize,
    tj: usize,
    k0: usize,
    k1: usize,
    out: &mut [[f64; TILE]; TILE],
) {
    if ti == TILE && tj == TILE {
        let xs: [&[f64]; TILE] = std::array::from_fn(|a| &data[(i0 + a) * d + k0..(i0 + a) * d + k1]);
        let ys: [&[f64]; TILE] = std::array::from_fn(|b| &data[(j0 + b) * d + k0..(j0 + b) * d + k1]);
        let mut acc = [[[0.0f64; LANES]; TILE]; TILE];
        let len = k1 - k0;
        let full = len - len % LANES;
        let mut k = 0;
        while k < full {
            let xv: [[f64; LANES]; TILE] = std::array::from_fn(|a| xs[a][k..k + LANES].try_into().unwrap());
            let yv: [[f64; LANES]; TILE] = std::array::from_fn(|b| ys[b][k..k + LANES].try_into().unwrap());
            for a in 0..TILE {
                for b in 0..TILE {
                    for l in 0..LANES {
                        acc[a][b][l] += xv[a][l] * yv[b][l];
                    }
                }
            }
            k += LANES;
        }
        for a in 0..TILE {
            for b in 0..TILE {
                let mut tail = 0.0;
                for kk in full..len {
                    tail += xs[a][kk] * ys[b][kk];
                }
                out[a][b] = reduce_lanes(acc[a][b]) + tail;
            }
        }
    } else {
        for a in 0..ti {
            for b in 0..tj {
                let x = &data[(i0 + a) * d + k0..(i0 + a) * d + k1];
                let y = &data[(j0 + b) * d + k0..(j0 + b) * d + k1];
                out[a][b] = dot_lanes(x, y);
            }
        }
    }
}

#[inline(always)]
fn reduce_lanes(acc: [f64; LANES]) -> f64 {
    (acc[0] + acc[2]) + (acc[1] + acc[3])
}

/// Same summation order as the tiled path.
#[inline(always)]
fn dot_lanes(x: &[f64], y: &[f64]) -> f64 {
    let len = x.len();
    let full = len - len % LANES;
    let mut acc = [0.0f64; LANES];
    let mut k = 0;
    while k < full {
        for l in 0..LANES {
            acc[l] += x[k + l] * y[k + l];
        }
        k += LANES;
    }
    let mut tail = 0.0;
    for kk in full..len {
        tail += x[kk] * y[kk];
    }
    reduce_lanes(acc) + tail
}

/// Squared Euclidean distance by direct subtraction, summed in feature order.
#[inline]
pub fn direct_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Centered Gram matrix of a cloud together with the cloud itself, for
/// exact fallback comparisons.
pub struct Geometry<'a> {
    cloud: &'a PointCloud,
    gram: Vec<f64>,
    /// Absolute error bound per unit of `|a|^2 + |b|^2` (centered norms) on
    /// the difference between the expanded distance and the directly
    /// subtracted one on the original rows. Covers the expansion itself and
    /// the rounding of each centered coordinate (at most `eps |c|`).
    bound_factor: f64,
}

impl<'a> Geometry<'a> {
    pub fn new(cloud: &'a PointCloud) -> Self {
        let centered = center_columns(cloud);
        let gram = gram_of(&centered, cloud.n_samples(), cloud.dim());
        let bound_factor = 8.0 * (cloud.dim() as f64 + 5.0) * f64::EPSILON;
        Self {
            cloud,
            gram,
            bound_factor,
        }
    }

    pub fn cloud(&self) -> &PointCloud {
        self.cloud
    }

    pub fn n(&self) -> usize {
        self.cloud.n_samples()
    }

    /// Inner product of centered rows `i` and `j`.
    #[inline]
    pub fn gram(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.n() + j]
    }

    /// Expanded squared distance, clamped at zero.
    #[inline]
    pub fn approx_sq_dist(&self, i: usize, j: usize) -> f64 {
        let n = self.n();
        let v = self.gram[i * n + i] + self.gram[j * n + j] - 2.0 * self.gram[i * n + j];
        v.max(0.0)
    }

    #[inline]
    pub fn exact_sq_dist(&self, i: usize, j: usize) -> f64 {
        direct_sq_dist(self.cloud.row(i), self.cloud.row(j))
    }

    /// Neighbor ordering of `members[query]` among `members`, which must be
    /// sorted ascending (ties are broken by position in `members`).
    pub fn row<'g>(&'g self, members: &'g [usize], query: usize) -> NeighborRow<'g, 'a> {
        let q = members[query];
        let n = self.n();
        let gqq = self.gram[q * n + q];
        let mut approx = Vec::with_capacity(members.len());
        let mut slack = Vec::with_capacity(members.len());
        for &m in members {
            let gmm = self.gram[m * n + m];
            approx.push((gqq + gmm - 2.0 * self.gram[q * n + m]).max(0.0));
            slack.push(self.bound_factor * (gqq + gmm));
        }
        NeighborRow {
            geom: self,
            members,
            query,
            approx,
            slack,
            exact: vec![f64::NAN; members.len()],
        }
    }
}

/// Total order of the other members by `(distance to query, position)`.
pub struct NeighborRow<'g, 'a> {
    geom: &'g Geometry<'a>,
    members: &'g [usize],
    query: usize,
    approx: Vec<f64>,
    slack: Vec<f64>,
    exact: Vec<f64>,
}

impl NeighborRow<'_, '_> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn query(&self) -> usize {
        self.query
    }

    fn exact(&mut self, a: usize) -> f64 {
        let v = self.exact[a];
        if !v.is_nan() {
            return v;
        }
        let q = self.members[self.query];
        let v = self.geom.exact_sq_dist(q, self.members[a]);
        self.exact[a] = v;
        v
    }

    /// Compares two local indices as neighbors of the query.
    pub fn cmp(&mut self, a: usize, b: usize) -> Ordering {
        if a == b {
            return Ordering::Equal;
        }
        let (da, db) = (self.approx[a], self.approx[b]);
        let ord = if (da - db).abs() > self.slack[a] + self.slack[b] {
            da.total_cmp(&db)
        } else {
            let ea = self.exact(a);
            let eb = self.exact(b);
            ea.total_cmp(&eb)
        };
        ord.then(a.cmp(&b))
    }

    /// Local index of the rank-1 neighbor.
    pub fn nearest(&mut self) -> usize {
        let mut best = usize::MAX;
        for j in 0..self.len() {
            if j == self.query {
                continue;
            }
            if best == usize::MAX || self.cmp(j, best) == Ordering::Less {
                best = j;
            }
        }
        best
    }

    /// Rank (1-based) of local index `target` among all members except the
    /// query.
    pub fn rank_of(&mut self, target: usize) -> u64 {
        let mut rank = 1;
        for j in 0..self.len() {
            if j != self.query && j != target && self.cmp(j, target) == Ordering::Less {
                rank += 1;
            }
        }
        rank
    }

    /// Local indices of the `k` nearest members, nearest first.
    pub fn k_nearest(&mut self, k: usize) -> Vec<usize> {
        let q = self.query;
        let mut others: Vec<usize> = (0..self.len()).filter(|&j| j != q).collect();
        if k < others.len() {
            others.select_nth_unstable_by(k - 1, |&a, &b| self.cmp(a, b));
            others.truncate(k);
        }
        others.sort_unstable_by(|&a, &b| self.cmp(a, b));
        others
    }

    /// All other members, nearest first.
    pub fn sorted(&mut self) -> Vec<usize> {
        let q = self.query;
        let mut others: Vec<usize> = (0..self.len()).filter(|&j| j != q).collect();
        others.sort_unstable_by(|&a, &b| self.cmp(a, b));
        others
    }
}
