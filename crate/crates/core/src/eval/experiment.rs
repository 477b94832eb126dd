//! Repeated Given-N experiments over several models.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{synth_generate, SyntheticSpec};
use super::{mae, EvalError, Result};
use crate::baselines::{
    common_only_train, fmm_train, nmf_predict, nmf_train, ModelKind, NmfConfig, NmfFactors,
    SparseRatings,
};
use crate::data::{
    build_dataset, given_n_split, parse_ratings, select_subset, ColumnMap, CrossDomainDataset,
    ParseOptions, RatingTriple, ScaleSpec, SubsetSpec,
};
use crate::infer::{PredictionWeights, Predictor, Support};
use crate::model::{self, ModelDims, TrainConfig};

/// One rating file of a file-backed experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSource {
    #[serde(default)]
    pub name: Option<String>,
    pub path: PathBuf,
    #[serde(default)]
    pub scale: ScaleSpec,
    /// A single character; `"\t"` by default.
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    /// Zero-based user, item and rating columns.
    #[serde(default = "default_columns")]
    pub columns: [usize; 3],
    #[serde(default)]
    pub skip_header: bool,
    #[serde(default)]
    pub subset: SubsetSpec,
}

fn default_delimiter() -> String {
    "\t".into()
}

fn default_columns() -> [usize; 3] {
    [0, 1, 2]
}

impl DomainSource {
    pub fn parse_options(&self) -> Result<ParseOptions> {
        let delimiter = match self.delimiter.as_bytes() {
            [b] => *b,
            _ => {
                return Err(EvalError::Config(format!(
                    "{}: delimiter must be one byte, got {:?}",
                    self.path.display(),
                    self.delimiter
                )))
            }
        };
        let [user, item, rating] = self.columns;
        Ok(ParseOptions {
            delimiter,
            columns: ColumnMap { user, item, rating },
            skip_header: self.skip_header,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    /// `[[dataset.files]]` tables, one per domain.
    Files(Vec<DomainSource>),
    /// A `[dataset.synthetic]` table.
    Synthetic(SyntheticSpec),
}

/// Dimensions, weights and training controls shared by every cell.
///
/// Per-domain lists of length one apply to every domain. Seeds inside
/// `train` and `nmf` are replaced by the repeat seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub user_clusters: usize,
    pub common_clusters: usize,
    pub specific_clusters: Vec<usize>,
    pub w1: Vec<f64>,
    pub train: TrainConfig,
    pub nmf: NmfConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            user_clusters: 20,
            common_clusters: 10,
            specific_clusters: vec![15],
            w1: vec![crate::infer::DEFAULT_W1],
            train: TrainConfig::default(),
            nmf: NmfConfig::default(),
        }
    }
}

fn per_domain<T: Copy>(what: &str, values: &[T], n_domains: usize) -> Result<Vec<T>> {
    match values.len() {
        1 => Ok(vec![values[0]; n_domains]),
        n if n == n_domains => Ok(values.to_vec()),
        n => Err(EvalError::Config(format!(
            "{what} has {n} entries for {n_domains} domains"
        ))),
    }
}

impl ModelSettings {
    pub fn specific_for(&self, n_domains: usize) -> Result<Vec<usize>> {
        per_domain("specific_clusters", &self.specific_clusters, n_domains)
    }

    pub fn weights_for(&self, n_domains: usize) -> Result<PredictionWeights> {
        let w = per_domain("w1", &self.w1, n_domains)?;
        PredictionWeights::new(w).map_err(EvalError::from)
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_repeats")]
    pub n_repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_given_n")]
    pub given_n: Vec<usize>,
    /// Users `0..n_train_users` of every domain are training users.
    #[serde(default = "default_train_users")]
    pub n_train_users: usize,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    /// Redraw subsets (or the synthetic data) every repeat.
    #[serde(default)]
    pub resample_subsets: bool,
    #[serde(default)]
    pub model: ModelSettings,
    pub dataset: DatasetSource,
}

fn default_repeats() -> usize {
    10
}

fn default_given_n() -> Vec<usize> {
    vec![5, 10, 15]
}

fn default_train_users() -> usize {
    300
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        Self {
            n_repeats: default_repeats(),
            base_seed: 0,
            given_n: default_given_n(),
            n_train_users: default_train_users(),
            models: default_models(),
            resample_subsets: false,
            model: ModelSettings::default(),
            dataset,
        }
    }

    /// Parses TOML; relative dataset paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, origin: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|source| EvalError::ConfigParse {
            path: origin.into(),
            source,
        })?;
        if let DatasetSource::Files(files) = &mut cfg.dataset {
            for f in files {
                if f.path.is_relative() {
                    f.path = base_dir.join(&f.path);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            EvalError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, &path.display().to_string(), base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_repeats == 0 {
            return Err(EvalError::Config("n_repeats must be >= 1".into()));
        }
        if self.given_n.is_empty() {
            return Err(EvalError::Config("given_n is empty".into()));
        }
        if self.models.is_empty() {
            return Err(EvalError::Config("models is empty".into()));
        }
        match &self.dataset {
            DatasetSource::Files(files) if files.is_empty() => {
                Err(EvalError::Config("dataset.files is empty".into()))
            }
            DatasetSource::Synthetic(spec) => spec.validate(),
            _ => Ok(()),
        }?;
        self.model.train.validate()?;
        Ok(())
    }

    pub fn domain_names(&self) -> Vec<String> {
        match &self.dataset {
            DatasetSource::Files(files) => files
                .iter()
                .enumerate()
                .map(|(z, f)| f.name.clone().unwrap_or_else(|| format!("D{z}")))
                .collect(),
            DatasetSource::Synthetic(spec) => (0..spec.n_domains()).map(|z| format!("D{z}")).collect(),
        }
    }
}

/// Builds the dataset for repeat `repeat`; subsets and synthetic data are
/// fixed across repeats unless `resample_subsets` is set.
pub fn load_datasets(config: &ExperimentConfig, repeat: u64) -> Result<CrossDomainDataset> {
    let shift = if config.resample_subsets { repeat } else { 0 };
    match &config.dataset {
        DatasetSource::Synthetic(spec) => {
            let spec = SyntheticSpec {
                seed: spec.seed.wrapping_add(shift),
                ..spec.clone()
            };
            Ok(synth_generate(&spec)?.dataset)
        }
        DatasetSource::Files(files) => {
            let mut per_domain = Vec::with_capacity(files.len());
            for f in files {
                let ctx = |source| EvalError::Data {
                    context: f.path.display().to_string(),
                    source,
                };
                let raw = parse_ratings(&f.path, &f.parse_options()?, &f.scale).map_err(ctx)?;
                let subset = SubsetSpec {
                    seed: f.subset.seed.wrapping_add(shift),
                    ..f.subset.clone()
                };
                let raw = select_subset(&raw, &subset).map_err(ctx)?;
                per_domain.push((raw, f.scale));
            }
            build_dataset(per_domain).map_err(|source| EvalError::Data {
                context: "building dataset".into(),
                source,
            })
        }
    }
}

/// A trained model of any kind, ready to score held-out triples.
#[derive(Debug, Clone)]
pub enum FittedModel {
    /// PCLF or the common-only model on the pooled domains.
    Pooled {
        kind: ModelKind,
        predictor: Predictor,
        weights: PredictionWeights,
    },
    /// One single-domain mixture per domain.
    Fmm(Vec<Predictor>),
    Nmf { factors: Vec<NmfFactors>, levels: usize },
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Pooled { kind, .. } => *kind,
            FittedModel::Fmm(_) => ModelKind::Fmm,
            FittedModel::Nmf { .. } => ModelKind::Nmf,
        }
    }

    pub fn predict(&self, t: &RatingTriple) -> Result<f64> {
        Ok(match self {
            FittedModel::Pooled {
                predictor, weights, ..
            } => predictor.predict(weights, t.domain, t.user, t.item)?,
            FittedModel::Fmm(per) => {
                let p = per.get(t.domain).ok_or_else(|| {
                    EvalError::Config(format!("no FMM model for domain {}", t.domain))
                })?;
                p.predict(&PredictionWeights::common_only(1), 0, t.user, t.item)?
            }
            FittedModel::Nmf { factors, levels } => {
                let f = factors.get(t.domain).ok_or_else(|| {
                    EvalError::Config(format!("no NMF model for domain {}", t.domain))
                })?;
                nmf_predict(f, t.user, t.item, *levels)?
            }
        })
    }
}

/// Trains `kind` on `train` with every seed set to `seed`.
pub fn fit_model(
    kind: ModelKind,
    train: &CrossDomainDataset,
    settings: &ModelSettings,
    seed: u64,
) -> Result<FittedModel> {
    let z = train.n_domains();
    let (k, t) = (settings.user_clusters, settings.common_clusters);
    let cfg = settings.train_config(seed);
    let support = Support::of(train);
    Ok(match kind {
        ModelKind::Pclf => {
            let dims = ModelDims::for_dataset(train, k, t, settings.specific_for(z)?)?;
            let fit = model::train(train, &dims, &cfg)?;
            FittedModel::Pooled {
                kind,
                predictor: Predictor::with_support(&fit.params, &support),
                weights: settings.weights_for(z)?,
            }
        }
        ModelKind::RmgmLike => {
            let fit = common_only_train(train, k, t, &cfg)?;
            FittedModel::Pooled {
                kind,
                predictor: Predictor::with_support(&fit.params, &support),
                weights: PredictionWeights::common_only(z),
            }
        }
        ModelKind::Fmm => {
            let mut per = Vec::with_capacity(z);
            for d in 0..z {
                let single = train.single_domain(d)?;
                let fit = fmm_train(&single, k, t, &cfg)?;
                per.push(Predictor::with_support(&fit.params, &Support::of(&single)));
            }
            FittedModel::Fmm(per)
        }
        ModelKind::Nmf => {
            let nmf_cfg = NmfConfig {
                seed,
                ..settings.nmf.clone()
            };
            let mut factors = Vec::with_capacity(z);
            for d in 0..z {
                let m = SparseRatings::from_domain(train, d)?;
                factors.push(nmf_train(&m, &nmf_cfg)?.factors);
            }
            FittedModel::Nmf {
                factors,
                levels: train.levels() as usize,
            }
        }
    })
}

/// MAE of `model` on each domain's evaluation triples.
pub fn domain_maes(model: &FittedModel, eval_sets: &[Vec<RatingTriple>]) -> Result<Vec<f64>> {
    eval_sets
        .iter()
        .map(|set| {
            let preds = set.iter().map(|t| model.predict(t)).collect::<Result<Vec<_>>>()?;
            let truths: Vec<u8> = set.iter().map(|t| t.rating).collect();
            mae(&preds, &truths)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelKind,
    pub domain: usize,
    pub given_n: usize,
    pub repeat: usize,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub model: ModelKind,
    pub domain: usize,
    pub given_n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single repeat.
    pub std: f64,
    pub n_repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsReport {
    pub domain_names: Vec<String>,
    pub models: Vec<ModelKind>,
    pub given_n: Vec<usize>,
    pub records: Vec<RunRecord>,
    /// Ordered by domain, then model, then given_n.
    pub summary: Vec<CellSummary>,
}

impl ResultsReport {
    pub fn from_records(
        domain_names: Vec<String>,
        models: Vec<ModelKind>,
        given_n: Vec<usize>,
        records: Vec<RunRecord>,
    ) -> Self {
        let mut summary = Vec::new();
        for domain in 0..domain_names.len() {
            for &model in &models {
                for &g in &given_n {
                    let xs: Vec<f64> = records
                        .iter()
                        .filter(|r| r.model == model && r.domain == domain && r.given_n == g)
                        .map(|r| r.mae)
                        .collect();
                    if xs.is_empty() {
                        continue;
                    }
                    let n = xs.len() as f64;
                    let mean = xs.iter().sum::<f64>() / n;
                    let std = if xs.len() > 1 {
                        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                    } else {
                        0.0
                    };
                    summary.push(CellSummary {
                        model,
                        domain,
                        given_n: g,
                        mean,
                        std,
                        n_repeats: xs.len(),
                    });
                }
            }
        }
        Self {
            domain_names,
            models,
            given_n,
            records,
            summary,
        }
    }

    pub fn cell(&self, model: ModelKind, domain: usize, given_n: usize) -> Option<&CellSummary> {
        self.summary
            .iter()
            .find(|c| c.model == model && c.domain == domain && c.given_n == given_n)
    }
}

fn split_seed(seed: u64, domain: usize) -> u64 {
    // splitmix64 step keyed by domain
    let mut x = seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn check_leaks(
    train: &CrossDomainDataset,
    eval_sets: &[Vec<RatingTriple>],
    n_train_users: usize,
) -> Result<()> {
    let seen: HashSet<(usize, usize, usize)> =
        train.pooled().map(|t| (t.domain, t.user, t.item)).collect();
    for t in eval_sets.iter().flatten() {
        if seen.contains(&(t.domain, t.user, t.item)) {
            return Err(EvalError::Leak(format!(
                "evaluation cell (domain {}, user {}, item {}) is in the training data",
                t.domain, t.user, t.item
            )));
        }
        if t.user < n_train_users {
            return Err(EvalError::Leak(format!(
                "evaluation cell (domain {}, user {}) belongs to a training user",
                t.domain, t.user
            )));
        }
    }
    Ok(())
}

/// Runs every (repeat, given_n, model) cell in a fixed order.
///
/// Repeat `r` uses seed `base_seed + r` for the Given-N draws and for model
/// initialization. Each domain keeps its own Given-N draw, and the draws for
/// different `given_n` values are nested.
/// The training dataset and per-domain evaluation sets of one repeat at one
/// Given-N setting, as [`run_experiment`] builds them.
pub fn given_n_splits(
    ds: &CrossDomainDataset,
    n_train_users: usize,
    given_n: usize,
    seed: u64,
) -> Result<(CrossDomainDataset, Vec<Vec<RatingTriple>>)> {
    let mut pools = Vec::with_capacity(ds.n_domains());
    let mut eval_sets = Vec::with_capacity(ds.n_domains());
    for z in 0..ds.n_domains() {
        let split = given_n_split(ds, z, n_train_users, given_n, split_seed(seed, z))?;
        if split.eval_set.is_empty() {
            return Err(EvalError::Config(format!(
                "domain {z} has an empty evaluation set"
            )));
        }
        pools.push(split.train_pool);
        eval_sets.push(split.eval_set);
    }
    let train = ds.with_triples(pools)?;
    check_leaks(&train, &eval_sets, n_train_users)?;
    Ok((train, eval_sets))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsReport> {
    config.validate()?;
    let mut records = Vec::new();
    let mut dataset = None;
    for r in 0..config.n_repeats {
        let seed = config.base_seed.wrapping_add(r as u64);
        if dataset.is_none() || config.resample_subsets {
            dataset = Some(load_datasets(config, r as u64)?);
        }
        let ds = dataset.as_ref().expect("loaded above");
        for &g in &config.given_n {
            let cell = |m: Option<ModelKind>| match m {
                Some(m) => format!("repeat {r}, given {g}, model {m}"),
                None => format!("repeat {r}, given {g}"),
            };
            let wrap = |m, source| EvalError::Cell {
                cell: cell(m),
                source: Box::new(source),
            };
            let (train, eval_sets) =
                given_n_splits(ds, config.n_train_users, g, seed).map_err(|e| wrap(None, e))?;
            for &kind in &config.models {
                let maes = fit_model(kind, &train, &config.model, seed)
                    .and_then(|m| domain_maes(&m, &eval_sets))
                    .map_err(|e| wrap(Some(kind), e))?;
                for (domain, mae) in maes.into_iter().enumerate() {
                    records.push(RunRecord {
                        model: kind,
                        domain,
                        given_n: g,
                        repeat: r,
                        mae,
                    });
                }
            }
        }
    }
    Ok(ResultsReport::from_records(
        config.domain_names(),
        config.models.clone(),
        config.given_n.clone(),
        records,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Plain,
    Csv,
}

/// Mean MAE per (dataset, model) row and Given-N column.
pub fn report_table(report: &ResultsReport, format: TableFormat) -> Result<String> {
    if report.summary.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let mut header = vec!["Dataset".to_string(), "Model".to_string()];
    header.extend(report.given_n.iter().map(|g| format!("Given{g}")));
    let mut rows = Vec::new();
    for (z, name) in report.domain_names.iter().enumerate() {
        for &m in &report.models {
            if !report.given_n.iter().any(|&g| report.cell(m, z, g).is_some()) {
                continue;
            }
            let mut row = vec![name.clone(), m.to_string()];
            row.extend(report.given_n.iter().map(|&g| match report.cell(m, z, g) {
                Some(c) => format!("{:.4}", c.mean),
                None => "-".into(),
            }));
            rows.push(row);
        }
    }
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            for row in std::iter::once(&header).chain(&rows) {
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        TableFormat::Plain => {
            let widths: Vec<usize> = (0..header.len())
                .map(|c| {
                    std::iter::once(&header)
                        .chain(&rows)
                        .map(|r| r[c].len())
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            for row in std::iter::once(&header).chain(&rows) {
                let mut line = String::new();
                for (c, cell) in row.iter().enumerate() {
                    if c > 0 {
                        line.push_str("  ");
                    }
                    if c < 2 {
                        let _ = write!(line, "{cell:<w$}", w = widths[c]);
                    } else {
                        let _ = write!(line, "{cell:>w$}", w = widths[c]);
                    }
                }
                out.push_str(line.trim_end());
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Raw per-run results as `model,domain,given_n,repeat,mae`.
pub fn write_results_csv<W: std::io::Write>(report: &ResultsReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "model,domain,given_n,repeat,mae")?;
    for r in &report.records {
        writeln!(w, "{},{},{},{},{}", r.model, r.domain, r.given_n, r.repeat, r.mae)?;
    }
    Ok(())
}
