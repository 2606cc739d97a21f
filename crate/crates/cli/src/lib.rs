//! Command-line runner for the synthetic benchmarks and activation-store
//! pipelines of `repalign`.
//!
//! Every subcommand writes its tables as CSV and JSON into `--out`, plus a
//! `run_config.json` sidecar holding the parsed arguments; the JSON tables
//! embed the same config. `--plot` adds an SVG line chart.
//!
//! Seeds: all randomness derives from `--seed`. Synthetic sweeps pass it to
//! the generators unchanged. Pipelines use it for jackknife subsets, and
//! the batch-shuffle permutation uses `seed + SHUFFLE_SEED_OFFSET`.

pub mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use repalign::pipeline::{
    self, AggregationMode, AggregationSpec, LayerProfile, ProfileMetric, ProfileOptions, TauOptions,
    TauProfile,
};
use repalign::synthbench::{self, RankSweepConfig, SubsetSweepConfig, SweepTable};
use repalign::{load_store, table, ActivationStore, PairManifest};

use plot::{LineChart, Series};

/// Offset from `--seed` to the batch-shuffle permutation seed.
pub const SHUFFLE_SEED_OFFSET: u64 = 1;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<synthbench::SynthError> for Failure {
    fn from(e: synthbench::SynthError) -> Self {
        match e {
            synthbench::SynthError::Config(m) => Failure::Usage(m),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<pipeline::PipelineError> for Failure {
    fn from(e: pipeline::PipelineError) -> Self {
        match e {
            pipeline::PipelineError::Config(m) => Failure::Usage(m),
            other => Failure::Runtime(other.into()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "repalign",
    version,
    about = "Information Imbalance, CKA and neighborhood overlap for representation analysis"
)]
pub struct Cli {
    /// Worker threads; 0 uses every core. Never changes numeric output.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Low-rank Gaussian map sweep over the target rank r.
    SynthRank(SynthRankArgs),
    /// Full Gaussian vector against its leading-feature subsets.
    SynthSubset(SynthSubsetArgs),
    /// Layer-by-layer comparison of two same-depth stores.
    Profile(ProfileArgs),
    /// Comparison of stores of different depth at matched relative depth.
    CrossProfile(CrossProfileArgs),
    /// II(x->y) - II(y->x) per matched layer.
    Asymmetry(AsymmetryArgs),
    /// II from the last token to the token tau positions earlier.
    TokenTau(TokenTauArgs),
    /// Writes a batch-shuffled copy of a pair manifest.
    ShuffleNull(ShuffleNullArgs),
    /// Loads and checks a store (and optionally a manifest).
    ValidateStore(ValidateStoreArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Root seed for every random stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = "repalign-out")]
    pub out: PathBuf,
    /// Also write an SVG line chart.
    #[arg(long)]
    pub plot: bool,
    /// Logarithmic x axis for the chart.
    #[arg(long)]
    pub log_x: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthRankArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long, default_value_t = 2500)]
    pub n: usize,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Target ranks, comma separated (default 1..=p).
    #[arg(long, value_delimiter = ',')]
    pub ranks: Vec<usize>,
    /// Neighborhood size for the overlap.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Jackknife half-subsets per point (0 disables the bands).
    #[arg(long, default_value_t = synthbench::DEFAULT_SWEEP_RESAMPLES)]
    pub resamples: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthSubsetArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 100)]
    pub p: usize,
    #[arg(long, default_value_t = 2500)]
    pub n: usize,
    /// Feature fractions in (0, 1], strictly increasing.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.1, 0.25, 1.0])]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = synthbench::DEFAULT_SWEEP_RESAMPLES)]
    pub resamples: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StoreArgs {
    /// Store of the first representation.
    #[arg(long)]
    pub x: PathBuf,
    /// Store of the second representation (defaults to --x).
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Pair manifest; without one, every sample of --x is paired with
    /// the same id in --y.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AggregationArgs {
    /// last_token, mean_last_T or concat_last_T.
    #[arg(long, default_value_t = AggregationMode::MeanLastT)]
    pub aggregation: AggregationMode,
    /// Tokens averaged or concatenated.
    #[arg(long = "T", default_value_t = pipeline::DEFAULT_T)]
    #[serde(rename = "T")]
    pub t: usize,
    /// Trailing tokens excluded from every sample.
    #[arg(long, default_value_t = pipeline::DEFAULT_DROP_TRAILING)]
    pub drop_trailing: usize,
}

impl AggregationArgs {
    fn spec(&self) -> Result<AggregationSpec, Failure> {
        Ok(AggregationSpec::new(
            self.aggregation,
            self.t,
            self.drop_trailing,
        )?)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProfileMetricArgs {
    /// Metrics: ii, cka, no, asymmetry.
    #[arg(long, value_delimiter = ',', default_value = "ii")]
    pub metrics: Vec<ProfileMetric>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = pipeline::DEFAULT_PROFILE_RESAMPLES)]
    pub resamples: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProfileArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub stores: StoreArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub aggregation: AggregationArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub metrics: ProfileMetricArgs,
    /// Also profile a batch-shuffled manifest (null control).
    #[arg(long)]
    pub shuffle_null: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CrossProfileArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub stores: StoreArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub aggregation: AggregationArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub metrics: ProfileMetricArgs,
    /// Explicit layer pairs `lx:ly`, comma separated (default: nearest
    /// relative depth).
    #[arg(long, value_delimiter = ',')]
    pub depth_pairs: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AsymmetryArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub stores: StoreArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub aggregation: AggregationArgs,
    #[arg(long, default_value_t = pipeline::DEFAULT_PROFILE_RESAMPLES)]
    pub resamples: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TokenTauArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub store: PathBuf,
    /// Layers to profile, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    /// Token offsets, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 16, 32])]
    pub taus: Vec<usize>,
    #[arg(long, default_value_t = pipeline::DEFAULT_DROP_TRAILING)]
    pub drop_trailing: usize,
    #[arg(long, default_value_t = pipeline::DEFAULT_PROFILE_RESAMPLES)]
    pub resamples: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ShuffleNullArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateStoreArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub store: PathBuf,
    /// Right-hand store for manifest validation (defaults to --store).
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Everything needed to re-run a command identically. The thread count
/// is left out because it cannot change any output.
#[derive(Debug, Serialize)]
pub struct RunConfig<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    #[serde(flatten)]
    pub command: &'a Command,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config: &'a RunConfig<'a>,
    result: &'a T,
}

struct Output<'a> {
    dir: &'a Path,
    config: RunConfig<'a>,
}

impl<'a> Output<'a> {
    fn create(common: &'a CommonArgs, command: &'a Command) -> Result<Self, Failure> {
        fs::create_dir_all(&common.out)
            .with_context(|| format!("cannot create output directory {}", common.out.display()))?;
        let out = Output {
            dir: &common.out,
            config: RunConfig {
                tool: "repalign",
                version: env!("CARGO_PKG_VERSION"),
                command,
            },
        };
        out.text(
            "run_config.json",
            &table::to_json(&out.config).map_err(anyhow::Error::from)?,
        )?;
        Ok(out)
    }

    fn text(&self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, result: &T) -> Result<(), Failure> {
        let env = Envelope {
            config: &self.config,
            result,
        };
        self.text(name, &table::to_json(&env).map_err(anyhow::Error::from)?)
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "input file not found: {}",
            path.display()
        )))
    }
}

fn open_store(path: &Path) -> Result<ActivationStore, Failure> {
    require_file(path)?;
    load_store(path)
        .with_context(|| format!("cannot load store {}", path.display()))
        .map_err(Failure::from)
}

fn open_manifest(path: &Path) -> Result<PairManifest, Failure> {
    require_file(path)?;
    PairManifest::load(path)
        .with_context(|| format!("cannot load manifest {}", path.display()))
        .map_err(Failure::from)
}

struct Inputs {
    x: ActivationStore,
    y: Option<ActivationStore>,
    manifest: PairManifest,
}

impl Inputs {
    fn load(args: &StoreArgs) -> Result<Self, Failure> {
        // Check every path before reading any of them.
        require_file(&args.x)?;
        if let Some(y) = &args.y {
            require_file(y)?;
        }
        if let Some(m) = &args.manifest {
            require_file(m)?;
        }
        let x = open_store(&args.x)?;
        let y = args.y.as_deref().map(open_store).transpose()?;
        let manifest = match &args.manifest {
            Some(m) => open_manifest(m)?,
            None => PairManifest::identity(&x.sample_ids(), &args.x.display().to_string()),
        };
        Ok(Inputs { x, y, manifest })
    }

    fn y(&self) -> &ActivationStore {
        self.y.as_ref().unwrap_or(&self.x)
    }
}

fn sweep_chart(table: &SweepTable, title: &str, x_label: &str, log_x: bool) -> LineChart {
    let rows = table.rows();
    let col = |f: fn(&synthbench::SweepRow) -> f64| rows.iter().map(|r| (r.sweep_param, f(r))).collect();
    LineChart {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "value".into(),
        log_x,
        series: vec![
            Series::new("II x->y", col(|r| r.ii_xy)),
            Series::new("II y->x", col(|r| r.ii_yx)),
            Series::new("CKA", col(|r| r.cka)),
            Series::new("NO", col(|r| r.no)),
        ],
    }
}

pub fn profile_chart(profile: &LayerProfile, title: &str, log_x: bool) -> LineChart {
    let mut series: Vec<Series> = Vec::new();
    for e in &profile.entries {
        let kind = e.result.params;
        let name = format!("{} {}", kind.name(), kind.direction_label());
        let point = (e.relative_depth, e.result.value);
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push(point),
            None => series.push(Series::new(name, vec![point])),
        }
    }
    LineChart {
        title: title.into(),
        x_label: "relative depth".into(),
        y_label: "value".into(),
        log_x,
        series,
    }
}

pub fn tau_chart(profiles: &[TauProfile], log_x: bool) -> LineChart {
    LineChart {
        title: "II from last token to offset tau".into(),
        x_label: "tau".into(),
        y_label: "II".into(),
        log_x,
        series: profiles
            .iter()
            .map(|p| {
                Series::new(
                    format!("layer {}", p.layer),
                    p.rows.iter().map(|r| (r.tau as f64, r.result.value)).collect(),
                )
            })
            .collect(),
    }
}

fn write_sweep(
    out: &Output,
    stem: &str,
    table: &SweepTable,
    chart: impl FnOnce() -> LineChart,
    plot: bool,
) -> Result<(), Failure> {
    out.text(&format!("{stem}.csv"), &table.to_csv())?;
    out.json(&format!("{stem}.json"), table)?;
    if plot {
        out.text(&format!("{stem}.svg"), &chart().to_svg())?;
    }
    Ok(())
}

fn write_profile(
    out: &Output,
    stem: &str,
    profile: &LayerProfile,
    common: &CommonArgs,
    title: &str,
) -> Result<(), Failure> {
    out.text(&format!("{stem}.csv"), &profile.to_csv())?;
    out.json(&format!("{stem}.json"), profile)?;
    if common.plot {
        out.text(
            &format!("{stem}.svg"),
            &profile_chart(profile, title, common.log_x).to_svg(),
        )?;
    }
    Ok(())
}

fn parse_depth_pairs(raw: &[String]) -> Result<Option<Vec<(usize, usize)>>, Failure> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.iter()
        .map(|s| {
            let (a, b) = s
                .split_once(':')
                .ok_or_else(|| Failure::Usage(format!("depth pair {s:?} is not of the form lx:ly")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Failure::Usage(format!("bad layer index in depth pair {s:?}")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn profile_options(m: &ProfileMetricArgs, seed: u64) -> Result<ProfileOptions, Failure> {
    if m.metrics.is_empty() {
        return Err(Failure::Usage("no metrics requested".into()));
    }
    Ok(ProfileOptions {
        metrics: m.metrics.clone(),
        k: m.k,
        resamples: m.resamples,
        seed,
    })
}

#[derive(Serialize)]
struct LayerSummary {
    layer: usize,
    n_records: usize,
    min_tokens: usize,
    max_tokens: usize,
}

fn store_summary(store: &ActivationStore) -> Vec<LayerSummary> {
    let mut by_layer: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for r in store.records() {
        let e = by_layer.entry(usize::from(r.layer)).or_insert((0, usize::MAX, 0));
        e.0 += 1;
        e.1 = e.1.min(r.tokens);
        e.2 = e.2.max(r.tokens);
    }
    (0..store.n_layers())
        .map(|layer| {
            let (n, lo, hi) = by_layer.get(&layer).copied().unwrap_or((0, 0, 0));
            LayerSummary {
                layer,
                n_records: n,
                min_tokens: lo,
                max_tokens: hi,
            }
        })
        .collect()
}

/// Runs one parsed command. Thread-pool setup is left to the caller.
pub fn execute(command: &Command) -> Result<(), Failure> {
    match command {
        Command::SynthRank(a) => {
            let cfg = RankSweepConfig {
                p: a.p,
                n: a.n,
                sigma: a.sigma,
                ranks: if a.ranks.is_empty() {
                    (1..=a.p).collect()
                } else {
                    a.ranks.clone()
                },
                seed: a.common.seed,
                resamples: a.resamples,
                k: a.k,
            };
            cfg.validate()?;
            let out = Output::create(&a.common, command)?;
            let table = synthbench::run_rank_sweep(&cfg)?;
            write_sweep(
                &out,
                "rank_sweep",
                &table,
                || sweep_chart(&table, "Low-rank map sweep", "rank r", a.common.log_x),
                a.common.plot,
            )
        }
        Command::SynthSubset(a) => {
            let cfg = SubsetSweepConfig {
                p: a.p,
                n: a.n,
                fractions: a.fractions.clone(),
                seed: a.common.seed,
                resamples: a.resamples,
                k: a.k,
            };
            cfg.validate()?;
            let out = Output::create(&a.common, command)?;
            let table = synthbench::run_subset_sweep(&cfg)?;
            write_sweep(
                &out,
                "subset_sweep",
                &table,
                || {
                    sweep_chart(
                        &table,
                        "Feature subset sweep",
                        "fraction of features",
                        a.common.log_x,
                    )
                },
                a.common.plot,
            )
        }
        Command::Profile(a) => {
            let spec = a.aggregation.spec()?;
            let opts = profile_options(&a.metrics, a.common.seed)?;
            let inputs = Inputs::load(&a.stores)?;
            let out = Output::create(&a.common, command)?;
            let profile = pipeline::layer_profile(&inputs.x, inputs.y(), &inputs.manifest, &spec, &opts)?;
            write_profile(&out, "layer_profile", &profile, &a.common, "Layer profile")?;
            if a.shuffle_null {
                let shuffled = pipeline::shuffle_null(
                    &inputs.manifest,
                    a.common.seed.wrapping_add(SHUFFLE_SEED_OFFSET),
                )?;
                let null = pipeline::layer_profile(&inputs.x, inputs.y(), &shuffled, &spec, &opts)?;
                write_profile(
                    &out,
                    "layer_profile_shuffled",
                    &null,
                    &a.common,
                    "Layer profile, shuffled pairs",
                )?;
            }
            Ok(())
        }
        Command::CrossProfile(a) => {
            let spec = a.aggregation.spec()?;
            let opts = profile_options(&a.metrics, a.common.seed)?;
            let pairs = parse_depth_pairs(&a.depth_pairs)?;
            let inputs = Inputs::load(&a.stores)?;
            let out = Output::create(&a.common, command)?;
            let profile = pipeline::cross_model_profile(
                &inputs.x,
                inputs.y(),
                &inputs.manifest,
                &spec,
                pairs.as_deref(),
                &opts,
            )?;
            write_profile(&out, "cross_profile", &profile, &a.common, "Cross-model profile")
        }
        Command::Asymmetry(a) => {
            let spec = a.aggregation.spec()?;
            let opts = ProfileOptions {
                metrics: vec![ProfileMetric::Asymmetry],
                resamples: a.resamples,
                seed: a.common.seed,
                ..ProfileOptions::default()
            };
            let inputs = Inputs::load(&a.stores)?;
            let out = Output::create(&a.common, command)?;
            let profile = pipeline::asymmetry_profile(&inputs.x, inputs.y(), &inputs.manifest, &spec, &opts)?;
            write_profile(
                &out,
                "asymmetry_profile",
                &profile,
                &a.common,
                "Information Imbalance asymmetry",
            )
        }
        Command::TokenTau(a) => {
            if a.taus.is_empty() {
                return Err(Failure::Usage("no taus requested".into()));
            }
            let store = open_store(&a.store)?;
            let layers: Vec<usize> = if a.layers.is_empty() {
                (0..store.n_layers()).collect()
            } else {
                a.layers.clone()
            };
            let opts = TauOptions {
                drop_trailing: a.drop_trailing,
                resamples: a.resamples,
                seed: a.common.seed,
            };
            let out = Output::create(&a.common, command)?;
            let profiles = pipeline::token_tau_profile(&store, &layers, &a.taus, &opts)?;
            for p in &profiles {
                for w in &p.warnings {
                    eprintln!("warning: layer {} tau {}: {}", p.layer, w.tau, w.message);
                }
            }
            out.text("tau_profile.csv", &pipeline::tau_profiles_to_csv(&profiles))?;
            out.json("tau_profile.json", &profiles)?;
            if a.common.plot {
                out.text("tau_profile.svg", &tau_chart(&profiles, a.common.log_x).to_svg())?;
            }
            Ok(())
        }
        Command::ShuffleNull(a) => {
            let manifest = open_manifest(&a.manifest)?;
            let out = Output::create(&a.common, command)?;
            let shuffled =
                pipeline::shuffle_null(&manifest, a.common.seed.wrapping_add(SHUFFLE_SEED_OFFSET))?;
            #[derive(Serialize)]
            struct PairRow<'r> {
                index: usize,
                left: &'r str,
                right: &'r str,
            }
            let rows: Vec<PairRow> = shuffled
                .pairs
                .iter()
                .enumerate()
                .map(|(index, (l, r))| PairRow {
                    index,
                    left: l,
                    right: r,
                })
                .collect();
            out.text(
                "shuffled_pairs.csv",
                &table::to_csv(&rows).map_err(anyhow::Error::from)?,
            )?;
            out.json("manifest_shuffled.json", &shuffled)
        }
        Command::ValidateStore(a) => {
            require_file(&a.store)?;
            if let Some(y) = &a.y {
                require_file(y)?;
            }
            if let Some(m) = &a.manifest {
                require_file(m)?;
            }
            let store = open_store(&a.store)?;
            if let Some(m) = &a.manifest {
                let manifest = open_manifest(m)?;
                let right = a.y.as_deref().map(open_store).transpose()?;
                repalign::validate_manifest(&manifest, &store, right.as_ref().unwrap_or(&store))
                    .with_context(|| format!("manifest {} does not match the stores", m.display()))?;
            }
            let out = Output::create(&a.common, command)?;
            let summary = store_summary(&store);
            out.text(
                "store_summary.csv",
                &table::to_csv(&summary).map_err(anyhow::Error::from)?,
            )?;
            println!(
                "ok: model {:?}, {} layers, dim {}, {} samples, {} records",
                store.model(),
                store.n_layers(),
                store.dim(),
                store.sample_ids().len(),
                store.len()
            );
            Ok(())
        }
    }
}
