//! Neighbor ranks, Information Imbalance, linear CKA, Neighborhood Overlap
//! and jackknife error bars.
//!
//! All metrics are computed from per-cloud [`Geometry`] (a Gram matrix plus
//! exact-fallback neighbor ordering), so a pair of clouds is factored once
//! and then evaluated on any number of sample subsets.

mod cka;
mod geometry;
mod imbalance;
mod jackknife;
mod overlap;
mod ranks;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cka::linear_cka;
pub use geometry::{direct_sq_dist, gram_matrix, Geometry, NeighborRow};
pub use imbalance::{asymmetry, information_imbalance};
pub use jackknife::{half_subsets, jackknife, population_std, PairAnalysis};
pub use overlap::neighborhood_overlap;
pub use ranks::{rank_matrix, RankMatrix, TiePolicy};

/// Default neighborhood size for Neighborhood Overlap.
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("clouds have different sample counts ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("k = {k} out of range 1..={max}")]
    InvalidK { k: usize, max: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid metric request: {0}")]
    InvalidMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "x->y")]
    XToY,
    #[serde(rename = "y->x")]
    YToX,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::XToY => "x->y",
            Direction::YToX => "y->x",
        }
    }
}

/// A metric together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum MetricKind {
    InformationImbalance {
        direction: Direction,
    },
    LinearCka,
    NeighborhoodOverlap {
        k: usize,
    },
    /// `II(x->y) - II(y->x)`.
    Asymmetry,
}

impl MetricKind {
    pub const II_XY: MetricKind = MetricKind::InformationImbalance {
        direction: Direction::XToY,
    };
    pub const II_YX: MetricKind = MetricKind::InformationImbalance {
        direction: Direction::YToX,
    };

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::InformationImbalance { .. } => "ii",
            MetricKind::LinearCka => "cka",
            MetricKind::NeighborhoodOverlap { .. } => "no",
            MetricKind::Asymmetry => "asymmetry",
        }
    }

    pub fn direction_label(&self) -> &'static str {
        match self {
            MetricKind::InformationImbalance { direction } => direction.label(),
            MetricKind::Asymmetry => "x->y minus y->x",
            _ => "sym",
        }
    }

    /// Smallest sample count the metric is defined for.
    pub fn min_samples(&self) -> usize {
        match self {
            MetricKind::NeighborhoodOverlap { k } => (*k + 1).max(3),
            _ => 3,
        }
    }
}

/// A metric value with its jackknife band and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub value: f64,
    pub jackknife_mean: f64,
    pub jackknife_std: f64,
    pub n_samples: usize,
    pub params: MetricKind,
    /// Number of half-size subsamples behind the band; zero when no
    /// resampling was done (the band then collapses onto `value`).
    pub n_resamples: usize,
    pub seed: Option<u64>,
}

impl MetricResult {
    pub fn point(params: MetricKind, value: f64, n_samples: usize) -> Self {
        Self {
            value,
            jackknife_mean: value,
            jackknife_std: 0.0,
            n_samples,
            params,
            n_resamples: 0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryResult {
    pub a_value: f64,
    pub xy: MetricResult,
    pub yx: MetricResult,
}

pub(crate) fn check_pair(
    x: &crate::tensorio::PointCloud,
    y: &crate::tensorio::PointCloud,
) -> Result<usize, MetricError> {
    let n = x.n_samples();
    if n != y.n_samples() {
        return Err(MetricError::LengthMismatch(n, y.n_samples()));
    }
    if n < 3 {
        return Err(MetricError::TooFewSamples { needed: 3, got: n });
    }
    Ok(n)
}
