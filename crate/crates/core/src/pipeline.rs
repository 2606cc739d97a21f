//! Analyses over activation stores: token aggregation, per-layer and
//! depth-matched profiles, asymmetry profiles, last-token vs earlier-token
//! offsets, and the batch-shuffle null.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricError, MetricKind, MetricResult, PairAnalysis, DEFAULT_K};
use crate::table;
use crate::tensorio::{validate_manifest, ActivationStore, PairManifest, PointCloud, StoreError};

/// Attempts at drawing a permutation without fixed points before settling
/// for the last draw.
pub const SHUFFLE_ATTEMPTS: usize = 100;
pub const DEFAULT_T: usize = 20;
pub const DEFAULT_DROP_TRAILING: usize = 2;
pub const DEFAULT_PROFILE_RESAMPLES: usize = 5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("sample {sample_id:?} has {tokens} tokens at layer {layer}, needs at least {needed}")]
    SampleTooShort {
        sample_id: String,
        layer: usize,
        tokens: usize,
        needed: usize,
    },
    #[error("layer {layer} out of range for {model:?} with {n_layers} layers")]
    LayerOutOfRange {
        model: String,
        layer: usize,
        n_layers: usize,
    },
    #[error("no record for sample {sample_id:?} at layer {layer} in {model:?}")]
    MissingRecord {
        model: String,
        sample_id: String,
        layer: usize,
    },
    #[error("stores have {left} and {right} layers; same-model profiles need equal counts")]
    LayerMismatch { left: usize, right: usize },
    #[error("only {usable} usable pairs ({dropped} dropped as too short); need at least 3")]
    TooFewPairs { usable: usize, dropped: usize },
    #[error("manifest has {0} pairs; a shuffle needs at least 2")]
    CannotShuffle(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationMode {
    #[serde(rename = "last_token")]
    LastToken,
    #[serde(rename = "mean_last_T")]
    MeanLastT,
    #[serde(rename = "concat_last_T")]
    ConcatLastT,
}

impl AggregationMode {
    pub fn label(self) -> &'static str {
        match self {
            AggregationMode::LastToken => "last_token",
            AggregationMode::MeanLastT => "mean_last_T",
            AggregationMode::ConcatLastT => "concat_last_T",
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "last_token" | "last" => Ok(AggregationMode::LastToken),
            "mean_last_T" | "mean" => Ok(AggregationMode::MeanLastT),
            "concat_last_T" | "concat" => Ok(AggregationMode::ConcatLastT),
            other => Err(format!(
                "unknown aggregation {other:?} (last_token, mean_last_T, concat_last_T)"
            )),
        }
    }
}

/// How a `(tokens x dim)` block is reduced to one vector.
///
/// The last `drop_trailing` tokens are ignored; the window is the `T`
/// tokens (one for `last_token`) ending right before them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationSpec {
    pub mode: AggregationMode,
    #[serde(rename = "T")]
    pub t: usize,
    pub drop_trailing: usize,
}

impl Default for AggregationSpec {
    fn default() -> Self {
        Self {
            mode: AggregationMode::MeanLastT,
            t: DEFAULT_T,
            drop_trailing: DEFAULT_DROP_TRAILING,
        }
    }
}

impl AggregationSpec {
    pub fn new(mode: AggregationMode, t: usize, drop_trailing: usize) -> Result<Self, PipelineError> {
        let spec = Self {
            mode,
            t,
            drop_trailing,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.mode != AggregationMode::LastToken && self.t == 0 {
            return Err(PipelineError::Config("T must be >= 1".into()));
        }
        Ok(())
    }

    /// Tokens in the aggregation window.
    pub fn window(&self) -> usize {
        match self.mode {
            AggregationMode::LastToken => 1,
            _ => self.t,
        }
    }

    /// Minimum token count for a sample to be usable.
    pub fn min_tokens(&self) -> usize {
        self.drop_trailing + self.window()
    }

    pub fn is_usable(&self, tokens: usize) -> bool {
        tokens >= self.min_tokens()
    }

    pub fn output_dim(&self, hidden: usize) -> usize {
        match self.mode {
            AggregationMode::ConcatLastT => self.t * hidden,
            _ => hidden,
        }
    }
}

fn check_layer(store: &ActivationStore, layer: usize) -> Result<u16, PipelineError> {
    if layer >= store.n_layers() {
        return Err(PipelineError::LayerOutOfRange {
            model: store.model().to_string(),
            layer,
            n_layers: store.n_layers(),
        });
    }
    Ok(layer as u16)
}

fn record_tokens(store: &ActivationStore, id: &str, layer: usize) -> Result<usize, PipelineError> {
    let l = check_layer(store, layer)?;
    store
        .record(id, l)
        .map(|r| r.tokens)
        .ok_or_else(|| PipelineError::MissingRecord {
            model: store.model().to_string(),
            sample_id: id.to_string(),
            layer,
        })
}

/// Reduces each sample's block at `layer` to one row.
pub fn aggregate<S: AsRef<str>>(
    store: &ActivationStore,
    layer: usize,
    spec: &AggregationSpec,
    sample_ids: &[S],
) -> Result<PointCloud, PipelineError> {
    let ids: Vec<String> = sample_ids.iter().map(|s| s.as_ref().to_string()).collect();
    aggregate_rows(store, layer, spec, sample_ids, ids)
}

fn aggregate_rows<S: AsRef<str>>(
    store: &ActivationStore,
    layer: usize,
    spec: &AggregationSpec,
    sample_ids: &[S],
    row_ids: Vec<String>,
) -> Result<PointCloud, PipelineError> {
    spec.validate()?;
    let l = check_layer(store, layer)?;
    let hidden = store.dim();
    let window = spec.window();
    let out_dim = spec.output_dim(hidden);
    let mut data = Vec::with_capacity(sample_ids.len() * out_dim);
    for id in sample_ids {
        let id = id.as_ref();
        let rec = store.record(id, l).ok_or_else(|| PipelineError::MissingRecord {
            model: store.model().to_string(),
            sample_id: id.to_string(),
            layer,
        })?;
        if !spec.is_usable(rec.tokens) {
            return Err(PipelineError::SampleTooShort {
                sample_id: id.to_string(),
                layer,
                tokens: rec.tokens,
                needed: spec.min_tokens(),
            });
        }
        let last = rec.tokens - 1 - spec.drop_trailing;
        let first = last + 1 - window;
        match spec.mode {
            AggregationMode::LastToken => data.extend(rec.token_f64(last)),
            AggregationMode::MeanLastT => {
                let mut acc = vec![0.0; hidden];
                for t in first..=last {
                    rec.add_token_into(t, &mut acc);
                }
                let w = window as f64;
                data.extend(acc.into_iter().map(|v| v / w));
            }
            AggregationMode::ConcatLastT => {
                for t in first..=last {
                    data.extend(rec.token_f64(t));
                }
            }
        }
    }
    Ok(PointCloud::new(data, out_dim, row_ids)?)
}

/// Which metrics a profile reports. Information Imbalance is always
/// reported in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMetric {
    Ii,
    Cka,
    No,
    Asymmetry,
}

impl std::str::FromStr for ProfileMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ii" => Ok(ProfileMetric::Ii),
            "cka" => Ok(ProfileMetric::Cka),
            "no" => Ok(ProfileMetric::No),
            "asymmetry" => Ok(ProfileMetric::Asymmetry),
            other => Err(format!("unknown metric {other:?} (ii, cka, no, asymmetry)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub metrics: Vec<ProfileMetric>,
    pub k: usize,
    pub resamples: usize,
    /// Seed of the jackknife subsets; every layer uses the same seed.
    pub seed: u64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            metrics: vec![ProfileMetric::Ii],
            k: DEFAULT_K,
            resamples: DEFAULT_PROFILE_RESAMPLES,
            seed: 0,
        }
    }
}

impl ProfileOptions {
    fn kinds(&self) -> Vec<MetricKind> {
        let mut kinds = Vec::new();
        for m in &self.metrics {
            let add: &[MetricKind] = match m {
                ProfileMetric::Ii => &[MetricKind::II_XY, MetricKind::II_YX],
                ProfileMetric::Cka => &[MetricKind::LinearCka],
                ProfileMetric::No => &[MetricKind::NeighborhoodOverlap { k: self.k }],
                ProfileMetric::Asymmetry => &[MetricKind::II_XY, MetricKind::II_YX, MetricKind::Asymmetry],
            };
            for k in add {
                if !kinds.contains(k) {
                    kinds.push(*k);
                }
            }
        }
        kinds
    }
}

/// `l / (n_layers - 1)`, so the first and last layers sit at 0 and 1.
pub fn relative_depth(layer: usize, n_layers: usize) -> f64 {
    if n_layers <= 1 {
        0.0
    } else {
        layer as f64 / (n_layers - 1) as f64
    }
}

/// For every layer of the first model, the layer of the second model at
/// the closest relative depth (ties go to the shallower layer).
pub fn match_depths(n_layers_x: usize, n_layers_y: usize) -> Vec<(usize, usize)> {
    let lx = n_layers_x.saturating_sub(1) as i128;
    let ly = n_layers_y.saturating_sub(1) as i128;
    (0..n_layers_x)
        .map(|l1| {
            if lx == 0 || ly == 0 {
                return (l1, 0);
            }
            // |l1/lx - l2/ly| compared via |l1*ly - l2*lx|.
            let best = (0..n_layers_y)
                .min_by_key(|&l2| ((l1 as i128 * ly - l2 as i128 * lx).abs(), l2))
                .unwrap();
            (l1, best)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer: usize,
    pub layer_y: usize,
    pub relative_depth: f64,
    pub result: MetricResult,
}

/// Metric values per layer (or matched layer pair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub model_x: String,
    pub model_y: String,
    pub aggregation: AggregationSpec,
    pub n_pairs: usize,
    pub dropped_pairs: usize,
    pub entries: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCsvRow<'a> {
    pub layer: usize,
    pub relative_depth: f64,
    pub metric: &'a str,
    pub direction: &'a str,
    pub value: f64,
    pub std: f64,
    pub n_pairs: usize,
    pub aggregation: &'a str,
    #[serde(rename = "T")]
    pub t: usize,
    pub drop_trailing: usize,
}

pub const LAYER_COLUMNS: [&str; 10] = [
    "layer",
    "relative_depth",
    "metric",
    "direction",
    "value",
    "std",
    "n_pairs",
    "aggregation",
    "T",
    "drop_trailing",
];

impl LayerProfile {
    /// Entries for one metric, in layer order.
    pub fn series(&self, kind: MetricKind) -> Vec<&LayerEntry> {
        self.entries.iter().filter(|e| e.result.params == kind).collect()
    }

    pub fn to_csv(&self) -> String {
        if self.entries.is_empty() {
            return table::csv_header(&LAYER_COLUMNS);
        }
        let rows: Vec<LayerCsvRow<'_>> = self
            .entries
            .iter()
            .map(|e| LayerCsvRow {
                layer: e.layer,
                relative_depth: e.relative_depth,
                metric: e.result.params.name(),
                direction: e.result.params.direction_label(),
                value: e.result.value,
                std: e.result.jackknife_std,
                n_pairs: e.result.n_samples,
                aggregation: self.aggregation.mode.label(),
                t: self.aggregation.window(),
                drop_trailing: self.aggregation.drop_trailing,
            })
            .collect();
        table::to_csv(&rows).expect("profile rows serialize")
    }
}

/// Pairs usable at every requested layer on both sides, plus the number
/// dropped as too short.
fn usable_pairs(
    xs: &ActivationStore,
    ys: &ActivationStore,
    manifest: &PairManifest,
    spec: &AggregationSpec,
    layers: &[(usize, usize)],
) -> Result<(Vec<(String, String)>, usize), PipelineError> {
    let mut keep = Vec::with_capacity(manifest.pairs.len());
    let mut dropped = 0;
    for (l, r) in &manifest.pairs {
        let mut ok = true;
        for &(lx, ly) in layers {
            let tx = record_tokens(xs, l, lx)?;
            let ty = record_tokens(ys, r, ly)?;
            ok &= spec.is_usable(tx) && spec.is_usable(ty);
        }
        if ok {
            keep.push((l.clone(), r.clone()));
        } else {
            dropped += 1;
        }
    }
    if keep.len() < 3 {
        return Err(PipelineError::TooFewPairs {
            usable: keep.len(),
            dropped,
        });
    }
    Ok((keep, dropped))
}

fn resamples_for(n: usize, requested: usize) -> usize {
    // Half-size subsets need at least 3 samples each.
    if n < 6 {
        0
    } else {
        requested
    }
}

fn profile_over(
    xs: &ActivationStore,
    ys: &ActivationStore,
    manifest: &PairManifest,
    spec: &AggregationSpec,
    layers: &[(usize, usize)],
    kinds: &[MetricKind],
    opts: &ProfileOptions,
) -> Result<LayerProfile, PipelineError> {
    spec.validate()?;
    validate_manifest(manifest, xs, ys)?;
    for &(lx, ly) in layers {
        check_layer(xs, lx)?;
        check_layer(ys, ly)?;
    }
    let (pairs, dropped) = usable_pairs(xs, ys, manifest, spec, layers)?;
    let n = pairs.len();
    let left: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
    let right: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
    let row_ids: Vec<String> = pairs.iter().map(|(l, r)| format!("{l}::{r}")).collect();
    let resamples = resamples_for(n, opts.resamples);

    let per_layer = layers
        .par_iter()
        .map(|&(lx, ly)| {
            let x = aggregate_rows(xs, lx, spec, &left, row_ids.clone())?;
            let y = aggregate_rows(ys, ly, spec, &right, row_ids.clone())?;
            let results = PairAnalysis::new(&x, &y)?.analyze(kinds, resamples, opts.seed)?;
            let depth = relative_depth(lx, xs.n_layers());
            Ok(results
                .into_iter()
                .map(|result| LayerEntry {
                    layer: lx,
                    layer_y: ly,
                    relative_depth: depth,
                    result,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    Ok(LayerProfile {
        model_x: xs.model().to_string(),
        model_y: ys.model().to_string(),
        aggregation: *spec,
        n_pairs: n,
        dropped_pairs: dropped,
        entries: per_layer.into_iter().flatten().collect(),
    })
}

/// Same-model profile: layer `l` of one side against layer `l` of the other.
pub fn layer_profile(
    xs: &ActivationStore,
    ys: &ActivationStore,
    manifest: &PairManifest,
    spec: &AggregationSpec,
    opts: &ProfileOptions,
) -> Result<LayerProfile, PipelineError> {
    if xs.n_layers() != ys.n_layers() {
        return Err(PipelineError::LayerMismatch {
            left: xs.n_layers(),
            right: ys.n_layers(),
        });
    }
    let layers: Vec<(usize, usize)> = (0..xs.n_layers()).map(|l| (l, l)).collect();
    profile_over(xs, ys, manifest, spec, &layers, &opts.kinds(), opts)
}

/// Profile across models with different depths: each layer of `xs` is
/// compared with the `ys` layer at the closest relative depth, unless
/// explicit `depth_pairs` are given.
pub fn cross_model_profile(
    xs: &ActivationStore,
    ys: &ActivationStore,
    manifest: &PairManifest,
    spec: &AggregationSpec,
    depth_pairs: Option<&[(usize, usize)]>,
    opts: &ProfileOptions,
) -> Result<LayerProfile, PipelineError> {
    let layers = match depth_pairs {
        Some(p) => p.to_vec(),
        None => match_depths(xs.n_layers(), ys.n_layers()),
    };
    profile_over(xs, ys, manifest, spec, &layers, &opts.kinds(), opts)
}

/// `II(x->y) - II(y->x)` per layer, with both components. Layers are
/// depth-matched when the stores differ in depth.
pub fn asymmetry_profile(
    xs: &ActivationStore,
    ys: &ActivationStore,
    manifest: &PairManifest,
    spec: &AggregationSpec,
    opts: &ProfileOptions,
) -> Result<LayerProfile, PipelineError> {
    let layers = match_depths(xs.n_layers(), ys.n_layers());
    let kinds = [MetricKind::Asymmetry, MetricKind::II_XY, MetricKind::II_YX];
    profile_over(xs, ys, manifest, spec, &layers, &kinds, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub tau: usize,
    pub n_contributing: usize,
    pub result: MetricResult,
}

/// An offset that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauWarning {
    pub tau: usize,
    pub n_available: usize,
    pub message: String,
}

/// II from the last token to the token `tau` positions before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauProfile {
    pub layer: usize,
    pub relative_depth: f64,
    pub drop_trailing: usize,
    pub rows: Vec<TauRow>,
    pub warnings: Vec<TauWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauCsvRow {
    pub layer: usize,
    pub tau: usize,
    pub value: f64,
    pub std: f64,
    pub n_contributing: usize,
}

pub const TAU_COLUMNS: [&str; 5] = ["layer", "tau", "value", "std", "n_contributing"];

pub fn tau_profiles_to_csv(profiles: &[TauProfile]) -> String {
    let rows: Vec<TauCsvRow> = profiles
        .iter()
        .flat_map(|p| {
            p.rows.iter().map(move |r| TauCsvRow {
                layer: p.layer,
                tau: r.tau,
                value: r.result.value,
                std: r.result.jackknife_std,
                n_contributing: r.n_contributing,
            })
        })
        .collect();
    if rows.is_empty() {
        return table::csv_header(&TAU_COLUMNS);
    }
    table::to_csv(&rows).expect("tau rows serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauOptions {
    pub drop_trailing: usize,
    pub resamples: usize,
    pub seed: u64,
}

/// For each layer and offset `tau`, X is the last token (after dropping
/// trailing tokens) and Y the token `tau` positions earlier; samples too
/// short for a given `tau` are left out of that point only.
pub fn token_tau_profile(
    store: &ActivationStore,
    layers: &[usize],
    taus: &[usize],
    opts: &TauOptions,
) -> Result<Vec<TauProfile>, PipelineError> {
    if taus.contains(&0) {
        return Err(PipelineError::Config("tau must be >= 1".into()));
    }
    for &l in layers {
        check_layer(store, l)?;
    }
    let ids = store.sample_ids();
    layers
        .par_iter()
        .map(|&layer| {
            let l = layer as u16;
            let present: Vec<(&str, usize)> = ids
                .iter()
                .filter_map(|id| store.record(id, l).map(|r| (*id, r.tokens)))
                .collect();
            let mut rows = Vec::new();
            let mut warnings = Vec::new();
            for &tau in taus {
                let need = opts.drop_trailing + tau + 1;
                let usable: Vec<&str> = present
                    .iter()
                    .filter(|(_, t)| *t >= need)
                    .map(|(id, _)| *id)
                    .collect();
                if usable.len() < 3 {
                    warnings.push(TauWarning {
                        tau,
                        n_available: usable.len(),
                        message: format!(
                            "omitted: {} samples have at least {need} tokens, need 3",
                            usable.len()
                        ),
                    });
                    continue;
                }
                let n = usable.len();
                let mut xd = Vec::with_capacity(n * store.dim());
                let mut yd = Vec::with_capacity(n * store.dim());
                for id in &usable {
                    let rec = store.record(id, l).expect("record present");
                    let last = rec.tokens - 1 - opts.drop_trailing;
                    xd.extend(rec.token_f64(last));
                    yd.extend(rec.token_f64(last - tau));
                }
                let row_ids: Vec<String> = usable.iter().map(|s| s.to_string()).collect();
                let x = PointCloud::new(xd, store.dim(), row_ids.clone())?;
                let y = PointCloud::new(yd, store.dim(), row_ids)?;
                let result = PairAnalysis::new(&x, &y)?
                    .analyze(&[MetricKind::II_XY], resamples_for(n, opts.resamples), opts.seed)?
                    .pop()
                    .unwrap();
                rows.push(TauRow {
                    tau,
                    n_contributing: n,
                    result,
                });
            }
            Ok(TauProfile {
                layer,
                relative_depth: relative_depth(layer, store.n_layers()),
                drop_trailing: opts.drop_trailing,
                rows,
                warnings,
            })
        })
        .collect()
}

/// Misaligns a manifest by permuting its right-hand ids.
///
/// Draws seeded uniform shuffles until one has no fixed point, giving up
/// after [`SHUFFLE_ATTEMPTS`] draws and keeping the last one.
pub fn shuffle_null(manifest: &PairManifest, seed: u64) -> Result<PairManifest, PipelineError> {
    let n = manifest.pairs.len();
    if n < 2 {
        return Err(PipelineError::CannotShuffle(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..SHUFFLE_ATTEMPTS {
        perm = (0..n).collect();
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            break;
        }
    }
    Ok(PairManifest {
        left_source: manifest.left_source.clone(),
        right_source: manifest.right_source.clone(),
        pairs: manifest
            .pairs
            .iter()
            .zip(&perm)
            .map(|((l, _), &p)| (l.clone(), manifest.pairs[p].1.clone()))
            .collect(),
    })
}
