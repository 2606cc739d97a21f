use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cka::centered_alignment;
use super::{check_pair, Geometry, MetricError, MetricKind, MetricResult};
use crate::tensorio::PointCloud;

/// `count` subsets of `n / 2` distinct indices, each sorted ascending.
///
/// Subsets are drawn independently from one ChaCha8 stream seeded with
/// `seed`, using Floyd/rejection sampling from `rand::seq::index::sample`.
pub fn half_subsets(n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut idx = rand::seq::index::sample(&mut rng, n, n / 2).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

/// Population standard deviation (divides by the count).
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

fn mean(values: &[f64]) -> f64 {
    // Constant inputs stay exact; a plain sum/len can drift by an ulp.
    if values.iter().all(|v| *v == values[0]) {
        return values[0];
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Default, Clone, Copy)]
struct RowStats {
    rank_xy: u64,
    rank_yx: u64,
    overlap: u64,
}

/// Two aligned clouds factored once, ready to evaluate any metric on any
/// subset of samples.
pub struct PairAnalysis<'a> {
    x: Geometry<'a>,
    y: Geometry<'a>,
}

impl<'a> PairAnalysis<'a> {
    pub fn new(x: &'a PointCloud, y: &'a PointCloud) -> Result<Self, MetricError> {
        check_pair(x, y)?;
        let (x, y) = rayon::join(|| Geometry::new(x), || Geometry::new(y));
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    /// Evaluates `kinds` on the samples listed in `members` (sorted
    /// ascending). Ranks are recomputed within the subset.
    pub fn evaluate(&self, kinds: &[MetricKind], members: &[usize]) -> Result<Vec<f64>, MetricError> {
        let n = members.len();
        for kind in kinds {
            if let MetricKind::NeighborhoodOverlap { k } = *kind {
                if k == 0 || k >= n {
                    return Err(MetricError::InvalidK {
                        k,
                        max: n.saturating_sub(1),
                    });
                }
            }
            if n < kind.min_samples() {
                return Err(MetricError::TooFewSamples {
                    needed: kind.min_samples(),
                    got: n,
                });
            }
        }
        let need_ii = kinds
            .iter()
            .any(|k| matches!(k, MetricKind::InformationImbalance { .. } | MetricKind::Asymmetry));
        let no_k = kinds.iter().find_map(|k| match k {
            MetricKind::NeighborhoodOverlap { k } => Some(*k),
            _ => None,
        });
        if kinds
            .iter()
            .filter_map(|k| match k {
                MetricKind::NeighborhoodOverlap { k } => Some(*k),
                _ => None,
            })
            .any(|k| Some(k) != no_k)
        {
            return Err(MetricError::InvalidMetric(
                "at most one neighborhood size per evaluation".into(),
            ));
        }

        let stats = if need_ii || no_k.is_some() {
            self.neighbor_stats(members, need_ii, no_k)
        } else {
            RowStats::default()
        };
        let cka = if kinds.contains(&MetricKind::LinearCka) {
            Some(centered_alignment(&self.x, &self.y, members)?)
        } else {
            None
        };

        // One correctly rounded division of exact integers, so identical
        // clouds give exactly 2/(n-1).
        let denom = ((n - 1) * n) as f64;
        let ii_xy = (2 * stats.rank_xy) as f64 / denom;
        let ii_yx = (2 * stats.rank_yx) as f64 / denom;
        Ok(kinds
            .iter()
            .map(|kind| match kind {
                MetricKind::InformationImbalance { direction } => match direction {
                    super::Direction::XToY => ii_xy,
                    super::Direction::YToX => ii_yx,
                },
                MetricKind::Asymmetry => ii_xy - ii_yx,
                MetricKind::LinearCka => cka.unwrap(),
                MetricKind::NeighborhoodOverlap { k } => stats.overlap as f64 / (n * k) as f64,
            })
            .collect())
    }

    fn neighbor_stats(&self, members: &[usize], need_ii: bool, no_k: Option<usize>) -> RowStats {
        let n = members.len();
        let rows: Vec<RowStats> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rx = self.x.row(members, i);
                let mut ry = self.y.row(members, i);
                let mut s = RowStats::default();
                if need_ii {
                    let nx = rx.nearest();
                    let ny = ry.nearest();
                    s.rank_xy = ry.rank_of(nx);
                    s.rank_yx = rx.rank_of(ny);
                }
                if let Some(k) = no_k {
                    let kx = rx.k_nearest(k);
                    let ky = ry.k_nearest(k);
                    let mut mark = vec![false; n];
                    for &j in &kx {
                        mark[j] = true;
                    }
                    s.overlap = ky.iter().filter(|&&j| mark[j]).count() as u64;
                }
                s
            })
            .collect();
        // Integer sums: independent of evaluation order.
        rows.iter().fold(RowStats::default(), |acc, r| RowStats {
            rank_xy: acc.rank_xy + r.rank_xy,
            rank_yx: acc.rank_yx + r.rank_yx,
            overlap: acc.overlap + r.overlap,
        })
    }

    /// Point values on all samples plus half-sample jackknife bands.
    ///
    /// The same `n_resamples` subsets (from [`half_subsets`]) are shared by
    /// every metric. With `n_resamples == 0` the band collapses onto the
    /// point value.
    pub fn analyze(
        &self,
        kinds: &[MetricKind],
        n_resamples: usize,
        seed: u64,
    ) -> Result<Vec<MetricResult>, MetricError> {
        let n = self.n();
        let all: Vec<usize> = (0..n).collect();
        let values = self.evaluate(kinds, &all)?;
        if n_resamples == 0 {
            return Ok(kinds
                .iter()
                .zip(values)
                .map(|(k, v)| MetricResult::point(*k, v, n))
                .collect());
        }
        if n_resamples < 2 {
            return Err(MetricError::InvalidMetric(
                "jackknife needs at least 2 resamples".into(),
            ));
        }
        if n < 6 {
            return Err(MetricError::TooFewSamples { needed: 6, got: n });
        }
        let subsets = half_subsets(n, n_resamples, seed);
        let mut per_kind = vec![Vec::with_capacity(n_resamples); kinds.len()];
        for subset in &subsets {
            for (slot, v) in per_kind.iter_mut().zip(self.evaluate(kinds, subset)?) {
                slot.push(v);
            }
        }
        Ok(kinds
            .iter()
            .zip(values)
            .zip(per_kind)
            .map(|((kind, value), samples)| MetricResult {
                value,
                jackknife_mean: mean(&samples),
                jackknife_std: population_std(&samples),
                n_samples: n,
                params: *kind,
                n_resamples,
                seed: Some(seed),
            })
            .collect())
    }
}

/// Evaluates one metric on the full clouds and on `n_resamples` half-size
/// subsets drawn without replacement (the same rows on both sides).
pub fn jackknife(
    metric: MetricKind,
    x: &PointCloud,
    y: &PointCloud,
    n_resamples: usize,
    seed: u64,
) -> Result<MetricResult, MetricError> {
    let n = check_pair(x, y)?;
    if n < 6 {
        return Err(MetricError::TooFewSamples { needed: 6, got: n });
    }
    if n_resamples < 2 {
        return Err(MetricError::InvalidMetric(
            "jackknife needs at least 2 resamples".into(),
        ));
    }
    if let MetricKind::NeighborhoodOverlap { k } = metric {
        if k == 0 || k >= n / 2 {
            return Err(MetricError::InvalidK { k, max: n / 2 - 1 });
        }
    }
    let analysis = PairAnalysis::new(x, y)?;
    Ok(analysis.analyze(&[metric], n_resamples, seed)?.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Direction;

    fn line(n: usize) -> PointCloud {
        PointCloud::from_data((0..n).map(|i| (i * i) as f64).collect(), 1).unwrap()
    }

    #[test]
    fn subsets_are_sorted_halves() {
        let subs = half_subsets(11, 5, 9);
        assert_eq!(subs.len(), 5);
        for s in &subs {
            assert_eq!(s.len(), 5);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&i| i < 11));
        }
        assert_eq!(subs, half_subsets(11, 5, 9));
        assert_ne!(subs, half_subsets(11, 5, 10));
    }

    #[test]
    fn identical_clouds_have_zero_spread() {
        let x = line(20);
        let r = jackknife(MetricKind::II_XY, &x, &x, 5, 1).unwrap();
        assert_eq!(r.value, 2.0 / 19.0);
        assert_eq!(r.jackknife_mean, 2.0 / 9.0);
        assert_eq!(r.jackknife_std, 0.0);
        assert_eq!(r.n_resamples, 5);
        assert_eq!(r.seed, Some(1));
    }

    #[test]
    fn error_paths() {
        let x = line(5);
        assert!(matches!(
            jackknife(MetricKind::LinearCka, &x, &x, 5, 0),
            Err(MetricError::TooFewSamples { .. })
        ));
        let x = line(12);
        assert!(matches!(
            jackknife(MetricKind::LinearCka, &x, &x, 1, 0),
            Err(MetricError::InvalidMetric(_))
        ));
        assert!(matches!(
            jackknife(MetricKind::NeighborhoodOverlap { k: 6 }, &x, &x, 3, 0),
            Err(MetricError::InvalidK { .. })
        ));
    }

    #[test]
    fn population_std_divides_by_count() {
        assert_eq!(population_std(&[1.0, 3.0]), 1.0);
        assert_eq!(population_std(&[2.0; 4]), 0.0);
    }

    #[test]
    fn evaluate_rejects_mixed_k() {
        let x = line(12);
        let a = PairAnalysis::new(&x, &x).unwrap();
        let all: Vec<usize> = (0..12).collect();
        let kinds = [
            MetricKind::NeighborhoodOverlap { k: 2 },
            MetricKind::NeighborhoodOverlap { k: 3 },
        ];
        assert!(a.evaluate(&kinds, &all).is_err());
        let v = a
            .evaluate(
                &[
                    MetricKind::InformationImbalance {
                        direction: Direction::YToX,
                    },
                    MetricKind::Asymmetry,
                ],
                &all,
            )
            .unwrap();
        assert_eq!(v, vec![2.0 / 11.0, 0.0]);
    }
}
