use rayon::prelude::*;

use super::{check_pair, Geometry, MetricError, MetricKind, MetricResult};
use crate::tensorio::PointCloud;

/// Feature-centered linear CKA,
/// `|Yc^T Xc|_F^2 / (|Xc^T Xc|_F |Yc^T Yc|_F)`.
pub fn linear_cka(x: &PointCloud, y: &PointCloud) -> Result<MetricResult, MetricError> {
    let n = check_pair(x, y)?;
    let (gx, gy) = rayon::join(|| Geometry::new(x), || Geometry::new(y));
    let members: Vec<usize> = (0..n).collect();
    let v = centered_alignment(&gx, &gy, &members)?;
    Ok(MetricResult::point(MetricKind::LinearCka, v, n))
}

/// Row means of the Gram submatrix plus the grand mean.
fn centering(g: &Geometry<'_>, members: &[usize]) -> (Vec<f64>, f64) {
    let n = members.len() as f64;
    let means: Vec<f64> = members
        .iter()
        .map(|&a| members.iter().map(|&b| g.gram(a, b)).sum::<f64>() / n)
        .collect();
    let grand = means.iter().sum::<f64>() / n;
    (means, grand)
}

/// Linear CKA in Gram form: with `K = X X^T` and `H` the centering matrix,
/// `|Yc^T Xc|_F^2 = <HKH, HLH>_F`. Works on any subset of samples; every
/// reduction runs in a fixed row order.
pub(crate) fn centered_alignment(
    gx: &Geometry<'_>,
    gy: &Geometry<'_>,
    members: &[usize],
) -> Result<f64, MetricError> {
    let (mx, tx) = centering(gx, members);
    let (my, ty) = centering(gy, members);
    let rows: Vec<[f64; 3]> = members
        .par_iter()
        .enumerate()
        .map(|(ia, &a)| {
            let mut acc = [0.0f64; 3];
            for (ib, &b) in members.iter().enumerate() {
                let k = gx.gram(a, b) - mx[ia] - mx[ib] + tx;
                let l = gy.gram(a, b) - my[ia] - my[ib] + ty;
                acc[0] += k * l;
                acc[1] += k * k;
                acc[2] += l * l;
            }
            acc
        })
        .collect();
    let mut kl = 0.0;
    let mut kk = 0.0;
    let mut ll = 0.0;
    for r in &rows {
        kl += r[0];
        kk += r[1];
        ll += r[2];
    }
    if kk <= 0.0 || ll <= 0.0 {
        return Err(MetricError::Degenerate(
            "a cloud is constant after centering".into(),
        ));
    }
    Ok(kl / (kk.sqrt() * ll.sqrt()))
}
