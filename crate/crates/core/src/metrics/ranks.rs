use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Geometry, MetricError};
use crate::tensorio::PointCloud;

/// How equidistant neighbors are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TiePolicy {
    /// Ascending Euclidean distance, then ascending sample index.
    DistanceThenIndex,
}

/// Neighbor ranks for every query sample.
///
/// Row `i` holds `n - 1` entries, one per sample `j != i` in index order
/// (sample `i` itself is skipped); the entry is the 1-based rank of `j`
/// among the neighbors of `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMatrix {
    n: usize,
    ranks: Vec<u32>,
    tie_policy: TiePolicy,
}

impl RankMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tie_policy(&self) -> TiePolicy {
        self.tie_policy
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let w = self.n - 1;
        &self.ranks[i * w..(i + 1) * w]
    }

    /// Rank of `j` as a neighbor of `i`; `None` when `i == j`.
    pub fn rank(&self, i: usize, j: usize) -> Option<u32> {
        match j.cmp(&i) {
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Less => Some(self.row(i)[j]),
            std::cmp::Ordering::Greater => Some(self.row(i)[j - 1]),
        }
    }

    /// Index of the rank-`r` neighbor of `i`.
    pub fn neighbor(&self, i: usize, r: u32) -> Option<usize> {
        self.row(i)
            .iter()
            .position(|&v| v == r)
            .map(|p| if p >= i { p + 1 } else { p })
    }
}

pub fn rank_matrix(cloud: &PointCloud) -> Result<RankMatrix, MetricError> {
    let n = cloud.n_samples();
    if n < 3 {
        return Err(MetricError::TooFewSamples { needed: 3, got: n });
    }
    let geom = Geometry::new(cloud);
    let members: Vec<usize> = (0..n).collect();
    let rows: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let order = geom.row(&members, i).sorted();
            let mut row = vec![0u32; n - 1];
            for (r, &j) in order.iter().enumerate() {
                let col = if j > i { j - 1 } else { j };
                row[col] = r as u32 + 1;
            }
            row
        })
        .collect();
    Ok(RankMatrix {
        n,
        ranks: rows.concat(),
        tie_policy: TiePolicy::DistanceThenIndex,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_ordering() {
        let c = PointCloud::from_data(vec![0.0, 1.0, 3.0], 1).unwrap();
        let r = rank_matrix(&c).unwrap();
        assert_eq!(r.rank(0, 1), Some(1));
        assert_eq!(r.rank(0, 2), Some(2));
        assert_eq!(r.rank(0, 0), None);
        // from sample 2: 1 at distance 2, 0 at distance 3
        assert_eq!(r.row(2), &[2, 1]);
        assert_eq!(r.neighbor(2, 1), Some(1));
    }

    #[test]
    fn duplicate_points() {
        let c = PointCloud::from_data(vec![0.0, 0.0, 5.0], 1).unwrap();
        let r = rank_matrix(&c).unwrap();
        assert_eq!(r.rank(2, 0), Some(1));
        assert_eq!(r.rank(2, 1), Some(2));
        assert_eq!(r.tie_policy(), TiePolicy::DistanceThenIndex);
    }
}
