use super::{check_pair, AsymmetryResult, MetricError, MetricKind, MetricResult, PairAnalysis};
use crate::tensorio::PointCloud;

/// `II(x -> y) = 2/(N-1) * mean_i r^y_{i, nn_x(i)}`, where `nn_x(i)` is the
/// rank-1 neighbor of `i` in `x` (ties broken by index).
///
/// Rows of `x` and `y` must already be paired by position. Ranges over
/// `[2/(N-1), 2]`; about 1 when `x` says nothing about `y`.
pub fn information_imbalance(x: &PointCloud, y: &PointCloud) -> Result<MetricResult, MetricError> {
    let n = check_pair(x, y)?;
    let analysis = PairAnalysis::new(x, y)?;
    let all: Vec<usize> = (0..n).collect();
    let v = analysis.evaluate(&[MetricKind::II_XY], &all)?[0];
    Ok(MetricResult::point(MetricKind::II_XY, v, n))
}

/// Both imbalance directions from one pair of rank structures.
pub fn asymmetry(x: &PointCloud, y: &PointCloud) -> Result<AsymmetryResult, MetricError> {
    let n = check_pair(x, y)?;
    let analysis = PairAnalysis::new(x, y)?;
    let all: Vec<usize> = (0..n).collect();
    let v = analysis.evaluate(&[MetricKind::II_XY, MetricKind::II_YX], &all)?;
    Ok(AsymmetryResult {
        a_value: v[0] - v[1],
        xy: MetricResult::point(MetricKind::II_XY, v[0], n),
        yx: MetricResult::point(MetricKind::II_YX, v[1], n),
    })
}
