//! Synthetic Gaussian benchmarks.
//!
//! Two constructions:
//!
//! - **rank sweep**: `X ~ N(0, I_p)`, `Y = X B^T + eps` with
//!   `B = U V`, `U` of shape `p x r` and `V` of shape `r x p`, both with
//!   i.i.d. standard normal entries, and `eps ~ N(0, sigma^2 I_p)`;
//! - **subset sweep**: `X ~ N(0, I_p)` against its leading `ceil(f p)`
//!   coordinates.
//!
//! Randomness: every generator seeds a ChaCha8 stream with `seed` and draws
//! standard normals with the ziggurat sampler of `rand_distr::StandardNormal`.
//!
//! The rank construction always draws full `p x p` factors and keeps the
//! first `r` columns of `U` and rows of `V`, so for one seed the maps are
//! nested (`B_{r+1} = B_r + u_{r+1} v_{r+1}^T`) and every rank shares the
//! same `X` and noise. Each `B_r` still has the distribution of a product
//! of independent `p x r` and `r x p` Gaussian factors. A rank sweep
//! therefore uses one generator seed for all points, which keeps the
//! curve free of map-to-map sampling noise. The subset sweep draws point
//! `i` from `seed + i`. Jackknife subsets of point `i` use
//! `(seed + i) ^ RESAMPLE_SEED_MIX` in both sweeps.
//!
//! [`gen_aligned_stores`] builds paired activation stores with a shared
//! latent signal, for exercising the store pipelines end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricError, MetricKind, MetricResult, PairAnalysis, DEFAULT_K};
use crate::table;
use crate::tensorio::{
    ActivationRecord, ActivationStore, PairManifest, PointCloud, StoreError, StoreMetadata,
};

/// Mixed into a point seed to derive its resampling seed.
pub const RESAMPLE_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;
/// Jackknife repetitions used by the synthetic sweeps unless overridden.
pub const DEFAULT_SWEEP_RESAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Cloud(#[from] StoreError),
}

fn sample_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

fn normals(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// One low-rank pair together with the map that produced it.
#[derive(Debug, Clone)]
pub struct RankPair {
    pub x: PointCloud,
    pub y: PointCloud,
    /// `p x p` row-major map `B = U V`.
    pub map: Vec<f64>,
}

/// Draws `X` (n x p), then `U` (p x p), `V` (p x p) and the noise (n x p),
/// in that order, from one stream; the map uses the leading `r` factors.
pub fn gen_rank_pair(p: usize, n: usize, r: usize, sigma: f64, seed: u64) -> Result<RankPair, SynthError> {
    if p == 0 || r == 0 || r > p {
        return Err(SynthError::Config(format!("rank {r} outside 1..={p}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(SynthError::Config(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normals(&mut rng, n * p);
    let u = normals(&mut rng, p * p);
    let v = normals(&mut rng, p * p);
    let eps = normals(&mut rng, n * p);

    let mut map = vec![0.0; p * p];
    for a in 0..p {
        for b in 0..p {
            map[a * p + b] = (0..r).map(|c| u[a * p + c] * v[c * p + b]).sum();
        }
    }
    let mut y = vec![0.0; n * p];
    for i in 0..n {
        let xi = &x[i * p..(i + 1) * p];
        for a in 0..p {
            let row = &map[a * p..(a + 1) * p];
            let lin: f64 = xi.iter().zip(row).map(|(s, t)| s * t).sum();
            y[i * p + a] = lin + sigma * eps[i * p + a];
        }
    }
    Ok(RankPair {
        x: PointCloud::new(x, p, sample_ids(n))?,
        y: PointCloud::new(y, p, sample_ids(n))?,
        map,
    })
}

/// Number of leading coordinates kept for `fraction` of `p`.
pub fn subset_width(p: usize, fraction: f64) -> Result<usize, SynthError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SynthError::Config(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    // Absorb representation error so 0.05 * 10000 keeps 500 coordinates.
    let m = (fraction * p as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(m.min(p))
}

/// A standard Gaussian cloud and its leading `ceil(fraction * p)` columns.
pub fn gen_subset_pair(
    p: usize,
    n: usize,
    fraction: f64,
    seed: u64,
) -> Result<(PointCloud, PointCloud), SynthError> {
    let m = subset_width(p, fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = PointCloud::new(normals(&mut rng, n * p), p, sample_ids(n))?;
    let cols: Vec<usize> = (0..m).collect();
    let subset = full.select_columns(&cols)?;
    Ok((full, subset))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSweepConfig {
    pub p: usize,
    pub n: usize,
    pub sigma: f64,
    pub ranks: Vec<usize>,
    pub seed: u64,
    pub resamples: usize,
    pub k: usize,
}

impl RankSweepConfig {
    /// `p = 10`, `n = 2500`, `sigma = 0.1`, every rank `1..=p`.
    pub fn standard(seed: u64) -> Self {
        Self {
            p: 10,
            n: 2500,
            sigma: 0.1,
            ranks: (1..=10).collect(),
            seed,
            resamples: DEFAULT_SWEEP_RESAMPLES,
            k: DEFAULT_K,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n < 3 {
            return Err(SynthError::Config(format!("n must be >= 3, got {}", self.n)));
        }
        if self.ranks.is_empty() {
            return Err(SynthError::Config("no ranks requested".into()));
        }
        if let Some(r) = self.ranks.iter().find(|&&r| r == 0 || r > self.p) {
            return Err(SynthError::Config(format!("rank {r} outside 1..={}", self.p)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SynthError::Config(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSweepConfig {
    pub p: usize,
    pub n: usize,
    pub fractions: Vec<f64>,
    pub seed: u64,
    pub resamples: usize,
    pub k: usize,
}

impl SubsetSweepConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n < 3 {
            return Err(SynthError::Config(format!("n must be >= 3, got {}", self.n)));
        }
        if self.fractions.is_empty() {
            return Err(SynthError::Config("no fractions requested".into()));
        }
        for &f in &self.fractions {
            subset_width(self.p, f)?;
        }
        if self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SynthError::Config("fractions must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// One sweep point: the four metrics with their jackknife bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Target rank `r` or feature fraction `f`.
    pub sweep_param: f64,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub seed: u64,
    pub ii_xy: MetricResult,
    pub ii_yx: MetricResult,
    pub cka: MetricResult,
    pub no: MetricResult,
}

/// Flat CSV row of a [`SweepPoint`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep_param: f64,
    pub ii_xy: f64,
    pub ii_xy_std: f64,
    pub ii_yx: f64,
    pub ii_yx_std: f64,
    pub cka: f64,
    pub cka_std: f64,
    pub no: f64,
    pub no_std: f64,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub seed: u64,
}

pub const SWEEP_COLUMNS: [&str; 13] = [
    "sweep_param",
    "ii_xy",
    "ii_xy_std",
    "ii_yx",
    "ii_yx_std",
    "cka",
    "cka_std",
    "no",
    "no_std",
    "n",
    "p",
    "sigma",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// `"rank"` or `"fraction"`.
    pub sweep: String,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.points
            .iter()
            .map(|pt| SweepRow {
                sweep_param: pt.sweep_param,
                ii_xy: pt.ii_xy.value,
                ii_xy_std: pt.ii_xy.jackknife_std,
                ii_yx: pt.ii_yx.value,
                ii_yx_std: pt.ii_yx.jackknife_std,
                cka: pt.cka.value,
                cka_std: pt.cka.jackknife_std,
                no: pt.no.value,
                no_std: pt.no.jackknife_std,
                n: pt.n,
                p: pt.p,
                sigma: pt.sigma,
                seed: pt.seed,
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        if self.points.is_empty() {
            return table::csv_header(&SWEEP_COLUMNS);
        }
        table::to_csv(&self.rows()).expect("sweep rows serialize")
    }
}

fn analyze_point(
    x: &PointCloud,
    y: &PointCloud,
    k: usize,
    resamples: usize,
    point_seed: u64,
) -> Result<[MetricResult; 4], SynthError> {
    let kinds = [
        MetricKind::II_XY,
        MetricKind::II_YX,
        MetricKind::LinearCka,
        MetricKind::NeighborhoodOverlap { k },
    ];
    let analysis = PairAnalysis::new(x, y)?;
    let mut r = analysis
        .analyze(&kinds, resamples, point_seed ^ RESAMPLE_SEED_MIX)?
        .into_iter();
    Ok([
        r.next().unwrap(),
        r.next().unwrap(),
        r.next().unwrap(),
        r.next().unwrap(),
    ])
}

pub fn run_rank_sweep(cfg: &RankSweepConfig) -> Result<SweepTable, SynthError> {
    cfg.validate()?;
    let points = cfg
        .ranks
        .par_iter()
        .enumerate()
        .map(|(idx, &r)| {
            let pair = gen_rank_pair(cfg.p, cfg.n, r, cfg.sigma, cfg.seed)?;
            let point_seed = cfg.seed.wrapping_add(idx as u64);
            let [ii_xy, ii_yx, cka, no] = analyze_point(&pair.x, &pair.y, cfg.k, cfg.resamples, point_seed)?;
            Ok(SweepPoint {
                sweep_param: r as f64,
                n: cfg.n,
                p: cfg.p,
                sigma: cfg.sigma,
                seed: cfg.seed,
                ii_xy,
                ii_yx,
                cka,
                no,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(SweepTable {
        sweep: "rank".into(),
        points,
    })
}

/// X is the full vector, Y the leading-coordinate subset.
pub fn run_subset_sweep(cfg: &SubsetSweepConfig) -> Result<SweepTable, SynthError> {
    cfg.validate()?;
    let points = cfg
        .fractions
        .par_iter()
        .enumerate()
        .map(|(idx, &f)| {
            let seed = cfg.seed.wrapping_add(idx as u64);
            let (full, subset) = gen_subset_pair(cfg.p, cfg.n, f, seed)?;
            let [ii_xy, ii_yx, cka, no] = analyze_point(&full, &subset, cfg.k, cfg.resamples, seed)?;
            Ok(SweepPoint {
                sweep_param: f,
                n: cfg.n,
                p: cfg.p,
                sigma: 0.0,
                seed,
                ii_xy,
                ii_yx,
                cka,
                no,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(SweepTable {
        sweep: "fraction".into(),
        points,
    })
}

/// Paired activation stores sharing one latent vector per sample.
///
/// Token `t` of sample `i` at layer `l` on side `x` is
/// `w z_i + sqrt(1 - w^2) xi` with `w = signal_x[l]`, `z_i ~ N(0, I)` shared
/// by both sides and `xi` fresh standard noise per token. Samples have a
/// token count drawn uniformly from `min_tokens..=max_tokens` per side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedStoreConfig {
    pub n_pairs: usize,
    pub dim: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Signal weight per layer of the first store, each in `[0, 1]`.
    pub signal_x: Vec<f64>,
    /// Signal weight per layer of the second store.
    pub signal_y: Vec<f64>,
    pub seed: u64,
}

fn synth_store(
    model: &str,
    prefix: &str,
    latent: &[f64],
    cfg: &AlignedStoreConfig,
    signal: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<ActivationStore, SynthError> {
    let d = cfg.dim;
    let mut store = ActivationStore::new(StoreMetadata::new(model, signal.len(), d))?;
    for i in 0..cfg.n_pairs {
        let tokens = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
        let z = &latent[i * d..(i + 1) * d];
        for (l, &w) in signal.iter().enumerate() {
            let noise = (1.0 - w * w).max(0.0).sqrt();
            let block = (0..tokens * d)
                .map(|k| (w * z[k % d] + noise * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect();
            store.push(ActivationRecord {
                sample_id: format!("{prefix}{i}"),
                layer: l as u16,
                tokens,
                block,
            })?;
        }
    }
    Ok(store)
}

/// Builds two stores and the manifest pairing `x{i}` with `y{i}`.
pub fn gen_aligned_stores(
    cfg: &AlignedStoreConfig,
) -> Result<(ActivationStore, ActivationStore, PairManifest), SynthError> {
    let weights_ok = |w: &[f64]| !w.is_empty() && w.iter().all(|v| (0.0..=1.0).contains(v));
    if cfg.dim == 0 || cfg.min_tokens == 0 || cfg.min_tokens > cfg.max_tokens {
        return Err(SynthError::Config(
            "need dim >= 1 and 1 <= min_tokens <= max_tokens".into(),
        ));
    }
    if !weights_ok(&cfg.signal_x) || !weights_ok(&cfg.signal_y) {
        return Err(SynthError::Config(
            "signal weights must be non-empty and in [0, 1]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let latent = normals(&mut rng, cfg.n_pairs * cfg.dim);
    let xs = synth_store("synthetic-x", "x", &latent, cfg, &cfg.signal_x, &mut rng)?;
    let ys = synth_store("synthetic-y", "y", &latent, cfg, &cfg.signal_y, &mut rng)?;
    let manifest = PairManifest {
        left_source: "synthetic-x".into(),
        right_source: "synthetic-y".into(),
        pairs: (0..cfg.n_pairs)
            .map(|i| (format!("x{i}"), format!("y{i}")))
            .collect(),
    };
    Ok((xs, ys, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        let a = gen_rank_pair(5, 20, 2, 0.1, 3).unwrap();
        let b = gen_rank_pair(5, 20, 2, 0.1, 3).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_ne!(a.x, gen_rank_pair(5, 20, 2, 0.1, 4).unwrap().x);
        let (f1, s1) = gen_subset_pair(10, 20, 0.3, 1).unwrap();
        let (f2, s2) = gen_subset_pair(10, 20, 0.3, 1).unwrap();
        assert_eq!((f1, s1), (f2, s2));
    }

    #[test]
    fn rank_out_of_range() {
        assert!(gen_rank_pair(5, 20, 0, 0.1, 0).is_err());
        assert!(gen_rank_pair(5, 20, 6, 0.1, 0).is_err());
        assert!(gen_rank_pair(5, 20, 5, -1.0, 0).is_err());
    }

    #[test]
    fn zero_noise_is_linear_image() {
        let pair = gen_rank_pair(4, 6, 4, 0.0, 11).unwrap();
        for i in 0..6 {
            for a in 0..4 {
                let expect: f64 = (0..4).map(|b| pair.map[a * 4 + b] * pair.x.row(i)[b]).sum();
                assert!((pair.y.row(i)[a] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subset_widths() {
        assert_eq!(subset_width(100, 0.25).unwrap(), 25);
        assert_eq!(subset_width(10_000, 0.01).unwrap(), 100);
        assert_eq!(subset_width(10_000, 0.05).unwrap(), 500);
        assert_eq!(subset_width(10_000, 1e-4).unwrap(), 1);
        assert_eq!(subset_width(10, 0.11).unwrap(), 2);
        assert_eq!(subset_width(10, 1.0).unwrap(), 10);
        assert!(subset_width(10, 0.0).is_err());
        assert!(subset_width(10, 1.5).is_err());
    }

    #[test]
    fn one_over_p_gives_one_column() {
        let (full, sub) = gen_subset_pair(8, 5, 1.0 / 8.0, 0).unwrap();
        assert_eq!(sub.dim(), 1);
        for i in 0..5 {
            assert_eq!(sub.row(i)[0], full.row(i)[0]);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = RankSweepConfig::standard(0);
        cfg.validate().unwrap();
        cfg.ranks = vec![11];
        assert!(cfg.validate().is_err());
        let sub = SubsetSweepConfig {
            p: 10,
            n: 50,
            fractions: vec![0.5, 0.2],
            seed: 0,
            resamples: 0,
            k: 10,
        };
        assert!(sub.validate().is_err());
        let empty = SubsetSweepConfig {
            fractions: vec![],
            ..sub
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn small_sweep_table_shape() {
        let cfg = RankSweepConfig {
            p: 4,
            n: 60,
            sigma: 0.1,
            ranks: vec![1, 4],
            seed: 5,
            resamples: 3,
            k: 5,
        };
        let t = run_rank_sweep(&cfg).unwrap();
        assert_eq!(t.points.len(), 2);
        assert_eq!(t.points[1].seed, 5);
        let csv = t.to_csv();
        assert!(csv.starts_with(&SWEEP_COLUMNS.join(",")));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn aligned_stores_shape() {
        let cfg = AlignedStoreConfig {
            n_pairs: 7,
            dim: 3,
            min_tokens: 2,
            max_tokens: 5,
            signal_x: vec![1.0, 0.5],
            signal_y: vec![0.0, 0.2, 0.9],
            seed: 1,
        };
        let (xs, ys, m) = gen_aligned_stores(&cfg).unwrap();
        assert_eq!((xs.n_layers(), ys.n_layers(), xs.dim()), (2, 3, 3));
        assert_eq!((xs.len(), ys.len(), m.pairs.len()), (14, 21, 7));
        crate::tensorio::validate_manifest(&m, &xs, &ys).unwrap();
        // Full signal weight copies the latent into every token.
        let r = xs.record("x3", 0).unwrap();
        assert_eq!(r.token_f64(0), r.token_f64(r.tokens - 1));
        assert_eq!(gen_aligned_stores(&cfg).unwrap().0, xs);
        let bad = AlignedStoreConfig {
            signal_x: vec![1.5],
            ..cfg
        };
        assert!(gen_aligned_stores(&bad).is_err());
    }
}
