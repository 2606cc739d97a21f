use super::{check_pair, MetricError, MetricKind, MetricResult, PairAnalysis};
use crate::tensorio::PointCloud;

/// Mean over samples of `|kNN_x(i) ∩ kNN_y(i)| / k`.
pub fn neighborhood_overlap(x: &PointCloud, y: &PointCloud, k: usize) -> Result<MetricResult, MetricError> {
    let n = check_pair(x, y)?;
    if k == 0 || k >= n {
        return Err(MetricError::InvalidK { k, max: n - 1 });
    }
    let kind = MetricKind::NeighborhoodOverlap { k };
    let analysis = PairAnalysis::new(x, y)?;
    let all: Vec<usize> = (0..n).collect();
    let v = analysis.evaluate(&[kind], &all)?[0];
    Ok(MetricResult::point(kind, v, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        // 1-NN in X: 0->1, 1->0, 2->1, 3->2. In Y: 0->1, 1->0, 2->3, 3->2.
        let x = PointCloud::from_data(vec![0.0, 1.0, 2.0, 10.0], 1).unwrap();
        let y = PointCloud::from_data(vec![0.0, 1.0, 10.0, 2.0], 1).unwrap();
        let r = neighborhood_overlap(&x, &y, 1).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(neighborhood_overlap(&y, &x, 1).unwrap().value, 0.5);
    }

    #[test]
    fn k_range() {
        let x = PointCloud::from_data(vec![0.0, 1.0, 2.0, 10.0], 1).unwrap();
        assert!(matches!(
            neighborhood_overlap(&x, &x, 0),
            Err(MetricError::InvalidK { .. })
        ));
        assert!(matches!(
            neighborhood_overlap(&x, &x, 4),
            Err(MetricError::InvalidK { .. })
        ));
        assert_eq!(neighborhood_overlap(&x, &x, 3).unwrap().value, 1.0);
    }
}
