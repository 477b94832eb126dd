use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pclf::baselines::{common_only_train, fmm_train, nmf_predict, nmf_train};
use pclf::data::{build_dataset, parse_ratings, select_subset, ColumnMap, ParseOptions};
use pclf::eval::{
    report_table, run_experiment, synth_generate, write_results_csv, ExperimentConfig,
    SyntheticSpec, TableFormat,
};
use pclf::infer::{cluster_rating_matrices, InferError};
use pclf::{
    Checkpoint, CrossDomainDataset, CrossDomainMode, ModelDims, ModelKind, NmfConfig,
    PredictionWeights, Predictor, ScaleSpec, SparseRatings, SubsetSpec, TrainConfig, TrainedModel,
    DEFAULT_W1,
};

#[derive(Parser)]
#[command(name = "pclf", version, about = "Cross-domain rating prediction with shared cluster-level patterns")]
struct Cli {
    /// Worker threads. Work currently runs on one thread regardless.
    #[arg(long, global = true, env = "PCLF_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse rating files into an indexed dataset dump.
    Ingest(IngestArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Predict ratings from a checkpoint.
    Predict(PredictArgs),
    /// Run a Given-N experiment from a TOML config.
    Evaluate(EvaluateArgs),
    /// Generate a planted-cluster dataset.
    Synth(SynthArgs),
    /// Print the contents of a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// One rating file per domain, in domain order.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Source scale as `min,max,levels`; one value for all domains or one
    /// per input.
    #[arg(long = "scale", default_value = "1,5,5")]
    scales: Vec<String>,
    #[arg(long, default_value = "\t")]
    delimiter: String,
    /// Zero-based user, item and rating columns.
    #[arg(long, default_value = "0,1,2")]
    columns: String,
    #[arg(long)]
    skip_header: bool,
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    n_items: Option<usize>,
    #[arg(long, default_value_t = 0)]
    min_user_ratings: usize,
    #[arg(long, default_value_t = 0)]
    min_item_ratings: usize,
    #[arg(long, default_value_t = 0)]
    subset_seed: u64,
    /// Output directory.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `ingest` or `synth`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Pclf)]
    model: ModelArg,
    #[arg(long = "k", default_value_t = 20)]
    user_clusters: usize,
    #[arg(long = "t", default_value_t = 10)]
    common_clusters: usize,
    /// Specific clusters, one value for all domains or a comma list.
    #[arg(long = "l", default_value = "15")]
    specific_clusters: String,
    /// Comma-separated ascending inverse temperatures ending at 1.
    #[arg(long, default_value = "0.5,0.6,0.7,0.8,0.9,1.0")]
    beta_schedule: String,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    floor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent initializations; the best final log-likelihood wins.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 20)]
    nmf_rank: usize,
    #[arg(long, default_value_t = 200)]
    nmf_iters: usize,
    #[arg(long)]
    nmf_zero_fill: bool,
    /// Checkpoint path.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Pclf,
    Fmm,
    RmgmLike,
    Nmf,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Pclf => ModelKind::Pclf,
            ModelArg::Fmm => ModelKind::Fmm,
            ModelArg::RmgmLike => ModelKind::RmgmLike,
            ModelArg::Nmf => ModelKind::Nmf,
        }
    }
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Common-pattern weight, one value for all domains or a comma list.
    #[arg(long)]
    w1: Option<String>,
    /// File of cells, one per line: `domain,user,item` or
    /// `user_domain,user,item_domain,item`.
    #[arg(long, conflicts_with = "complete")]
    cells: Option<PathBuf>,
    /// Predict every cell of this domain.
    #[arg(long)]
    complete: Option<usize>,
    #[arg(long, value_enum, default_value_t = CrossArg::CommonOnly)]
    cross_mode: CrossArg,
    /// Output CSV; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CrossArg {
    CommonOnly,
    ItemDomainWeights,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `n_repeats` from the config.
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Plain)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Plain,
    Csv,
}

#[derive(Args)]
struct SynthArgs {
    /// Users per domain, comma list.
    #[arg(long, default_value = "300,300")]
    users: String,
    #[arg(long, default_value = "500,500")]
    items: String,
    #[arg(long = "k", default_value_t = 4)]
    user_clusters: usize,
    #[arg(long = "t", default_value_t = 3)]
    common_clusters: usize,
    #[arg(long = "l", default_value = "3")]
    specific_clusters: String,
    /// Probability that a rating follows the common pattern.
    #[arg(long, default_value = "0.5")]
    w1: String,
    #[arg(long, default_value_t = 5)]
    levels: u8,
    #[arg(long, default_value_t = 0.05)]
    density: f64,
    #[arg(long, default_value_t = 0.8)]
    peak: f64,
    #[arg(long, default_value_t = 1.0)]
    purity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; the generating parameters go to `truth.json`.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Entities listed per cluster.
    #[arg(long, default_value_t = 5)]
    top: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = io::stdout();
    match run(cli, &mut out.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let io = c.downcast_ref::<io::Error>().or(match c.downcast_ref::<InferError>() {
            Some(InferError::Io(io)) => Some(io),
            _ => None,
        });
        io.is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn run(cli: Cli, out: &mut impl Write) -> Result<()> {
    if cli.threads == 0 {
        bail!("thread count must be at least 1");
    }
    match cli.command {
        Command::Ingest(a) => ingest(a, out),
        Command::Train(a) => train(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Synth(a) => synth(a, out),
        Command::Inspect(a) => inspect(a, out),
    }
}

fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| anyhow!("{what}: cannot parse {s:?}: {e}"))
        })
        .collect()
}

/// Broadcasts a single value to `n` domains.
fn per_domain<T: Clone>(what: &str, values: Vec<T>, n: usize) -> Result<Vec<T>> {
    match values.len() {
        1 => Ok(vec![values[0].clone(); n]),
        m if m == n => Ok(values),
        m => bail!("{what}: {m} values for {n} domains"),
    }
}

fn parse_scale(text: &str) -> Result<ScaleSpec> {
    let parts: Vec<&str> = text.split(',').collect();
    let [min, max, levels] = parts.as_slice() else {
        bail!("scale {text:?}: expected min,max,levels");
    };
    let parse = |s: &str| -> Result<f64> { s.trim().parse().with_context(|| format!("scale {text:?}")) };
    let levels: u8 = levels.trim().parse().with_context(|| format!("scale {text:?}"))?;
    Ok(ScaleSpec::new(parse(min)?, parse(max)?, levels)?)
}

fn summarize(ds: &CrossDomainDataset, out: &mut impl Write) -> Result<()> {
    writeln!(out, "domains={} levels={}", ds.n_domains(), ds.levels())?;
    for (z, d) in ds.domains().iter().enumerate() {
        writeln!(
            out,
            "domain {z}: users={} items={} ratings={}",
            d.n_users(),
            d.n_items(),
            d.n_ratings()
        )?;
    }
    Ok(())
}

fn ingest(a: IngestArgs, out: &mut impl Write) -> Result<()> {
    let scales = per_domain(
        "scale",
        a.scales.iter().map(|s| parse_scale(s)).collect::<Result<Vec<_>>>()?,
        a.inputs.len(),
    )?;
    let delimiter = match a.delimiter.as_bytes() {
        [b] => *b,
        _ => bail!("delimiter must be a single byte, got {:?}", a.delimiter),
    };
    let cols: Vec<usize> = parse_list("columns", &a.columns)?;
    let [user, item, rating] = cols.as_slice() else {
        bail!("columns: expected user,item,rating");
    };
    let options = ParseOptions {
        delimiter,
        columns: ColumnMap {
            user: *user,
            item: *item,
            rating: *rating,
        },
        skip_header: a.skip_header,
    };
    let subset = SubsetSpec {
        n_users: a.n_users,
        n_items: a.n_items,
        min_user_ratings: a.min_user_ratings,
        min_item_ratings: a.min_item_ratings,
        seed: a.subset_seed,
    };
    let mut per_domain = Vec::with_capacity(a.inputs.len());
    for (path, scale) in a.inputs.iter().zip(scales) {
        let raw = parse_ratings(path, &options, &scale)
            .with_context(|| format!("parsing {}", path.display()))?;
        let raw = select_subset(&raw, &subset).with_context(|| path.display().to_string())?;
        per_domain.push((raw, scale));
    }
    let ds = build_dataset(per_domain)?;
    ds.save(&a.output)?;
    summarize(&ds, out)
}

fn train(a: TrainArgs, out: &mut impl Write) -> Result<()> {
    let ds = CrossDomainDataset::load(&a.dataset)?;
    let kind = ModelKind::from(a.model);
    let config = TrainConfig {
        beta_schedule: parse_list("beta schedule", &a.beta_schedule)?,
        max_iters_per_beta: a.max_iters,
        rel_ll_tol: a.tol,
        smoothing_floor: a.floor,
        seed: a.seed,
        restarts: a.restarts,
    };
    let z = ds.n_domains();
    let checkpoint = match kind {
        ModelKind::Nmf => {
            let nmf = NmfConfig {
                rank: a.nmf_rank,
                iters: a.nmf_iters,
                seed: a.seed,
                zero_fill: a.nmf_zero_fill,
            };
            writeln!(out, "model=nmf rank={} iters={} seed={}", nmf.rank, nmf.iters, nmf.seed)?;
            let mut fits = Vec::with_capacity(z);
            for d in 0..z {
                let fit = nmf_train(&SparseRatings::from_domain(&ds, d)?, &nmf)?;
                writeln!(
                    out,
                    "domain {d}: objective {:.6} -> {:.6}",
                    fit.objective.first().copied().unwrap_or(f64::NAN),
                    fit.objective.last().copied().unwrap_or(f64::NAN)
                )?;
                fits.push(fit);
            }
            Checkpoint::from_nmf(&fits, &nmf, &ds)
        }
        ModelKind::Fmm if z != 1 => {
            bail!("fmm trains on exactly one domain, dataset has {z}; ingest each domain separately")
        }
        _ => {
            let specific: Vec<usize> = parse_list("l", &a.specific_clusters)?;
            let (k, t) = (a.user_clusters, a.common_clusters);
            let header_l = match kind {
                ModelKind::Pclf => per_domain("l", specific.clone(), z)?,
                _ => vec![0; z],
            };
            let l_text: Vec<String> = header_l.iter().map(|l| l.to_string()).collect();
            writeln!(
                out,
                "model={kind} K={k} T={t} L={} seed={}",
                l_text.join(","),
                a.seed
            )?;
            let model: TrainedModel = match kind {
                ModelKind::Pclf => {
                    let dims = ModelDims::for_dataset(&ds, k, t, header_l)?;
                    pclf::train(&ds, &dims, &config)?
                }
                ModelKind::Fmm => fmm_train(&ds, k, t, &config)?,
                ModelKind::RmgmLike => common_only_train(&ds, k, t, &config)?,
                ModelKind::Nmf => unreachable!(),
            };
            report_trace(&model, out)?;
            Checkpoint::from_mixture(kind, &model, &config, &ds)
        }
    };
    checkpoint
        .save(&a.output)
        .with_context(|| format!("writing {}", a.output.display()))?;
    Ok(())
}

fn report_trace(model: &TrainedModel, out: &mut impl Write) -> Result<()> {
    let mut rest = &model.trace[1..];
    while let Some(first) = rest.first() {
        let len = rest[1..]
            .iter()
            .position(|e| e.iteration == 1)
            .map_or(rest.len(), |p| p + 1);
        let last = &rest[len - 1];
        writeln!(
            out,
            "beta={} iterations={} log_likelihood={:.6}",
            first.beta, len, last.log_likelihood
        )?;
        rest = &rest[len..];
    }
    writeln!(out, "final log_likelihood={:.6}", model.final_log_likelihood())?;
    Ok(())
}

/// A loaded checkpoint, ready to score cells.
enum Scorer {
    Mixture(Predictor),
    Nmf(Vec<pclf::NmfFactors>, usize),
}

impl Scorer {
    fn load(path: &Path) -> Result<(Checkpoint, Self)> {
        let ck = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
        let scorer = match ck.model_kind {
            ModelKind::Nmf => Scorer::Nmf(ck.to_nmf()?, ck.layout.levels),
            _ => {
                let params = ck.to_params()?;
                Scorer::Mixture(match &ck.support {
                    Some(s) => Predictor::with_support(&params, s),
                    None => Predictor::new(&params),
                })
            }
        };
        Ok((ck, scorer))
    }
}

struct Cell {
    user_domain: usize,
    user: usize,
    item_domain: usize,
    item: usize,
}

fn read_cells(path: &Path) -> Result<Vec<Cell>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut cells = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<usize> = parse_list(&format!("{}:{}", path.display(), n + 1), line)?;
        cells.push(match fields.as_slice() {
            &[z, u, v] => Cell {
                user_domain: z,
                user: u,
                item_domain: z,
                item: v,
            },
            &[a, u, b, v] => Cell {
                user_domain: a,
                user: u,
                item_domain: b,
                item: v,
            },
            _ => bail!("{}:{}: expected 3 or 4 fields", path.display(), n + 1),
        });
    }
    Ok(cells)
}

fn predict(a: PredictArgs, out: &mut impl Write) -> Result<()> {
    let (ck, scorer) = Scorer::load(&a.checkpoint)?;
    let z = ck.layout.n_users.len();
    let w1 = per_domain(
        "w1",
        match &a.w1 {
            Some(text) => parse_list("w1", text)?,
            None => vec![DEFAULT_W1],
        },
        z,
    )?;
    let weights = PredictionWeights::new(w1.clone())?;
    let mode = match a.cross_mode {
        CrossArg::CommonOnly => CrossDomainMode::CommonOnly,
        CrossArg::ItemDomainWeights => CrossDomainMode::ItemDomainWeights,
    };

    let mut sink: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(&mut *out),
    };
    let w1_text: Vec<String> = w1.iter().map(|w| w.to_string()).collect();
    writeln!(sink, "# model={} w1={}", ck.model_kind, w1_text.join(","))?;

    match (a.cells, a.complete) {
        (Some(path), _) => {
            let cells = read_cells(&path)?;
            writeln!(sink, "domain,user_idx,item_idx,predicted_rating,user_domain,cross_domain")?;
            for c in cells {
                let cross = c.user_domain != c.item_domain;
                let value = match &scorer {
                    Scorer::Mixture(p) if cross => {
                        p.predict_cross((c.user_domain, c.user), (c.item_domain, c.item), mode, &weights)?
                    }
                    Scorer::Mixture(p) => p.predict(&weights, c.item_domain, c.user, c.item)?,
                    Scorer::Nmf(..) if cross => bail!("nmf models cannot score cross-domain cells"),
                    Scorer::Nmf(f, levels) => {
                        let f = f
                            .get(c.item_domain)
                            .ok_or_else(|| anyhow!("domain {} out of range", c.item_domain))?;
                        nmf_predict(f, c.user, c.item, *levels)?
                    }
                };
                writeln!(
                    sink,
                    "{},{},{},{:.6},{},{}",
                    c.item_domain,
                    c.user,
                    c.item,
                    value,
                    c.user_domain,
                    u8::from(cross)
                )?;
            }
        }
        (None, Some(d)) => {
            writeln!(sink, "domain,user_idx,item_idx,predicted_rating")?;
            match &scorer {
                Scorer::Mixture(p) => p.complete_matrix(&weights, d, |u, row| {
                    for (v, x) in row.iter().enumerate() {
                        writeln!(sink, "{d},{u},{v},{x:.6}")?;
                    }
                    Ok(())
                })?,
                Scorer::Nmf(f, levels) => {
                    let f = f.get(d).ok_or_else(|| anyhow!("domain {d} out of range"))?;
                    for u in 0..f.user.nrows() {
                        for v in 0..f.item.nrows() {
                            writeln!(sink, "{d},{u},{v},{:.6}", nmf_predict(f, u, v, *levels)?)?;
                        }
                    }
                }
            }
        }
        (None, None) => bail!("either --cells or --complete is required"),
    }
    sink.flush()?;
    Ok(())
}

fn evaluate(a: EvaluateArgs, out: &mut impl Write) -> Result<()> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Some(r) = a.repeats {
        config.n_repeats = r;
    }
    let report = run_experiment(&config)?;
    fs::create_dir_all(&a.output).with_context(|| format!("cannot create {}", a.output.display()))?;
    let path = a.output.join("results.csv");
    write_results_csv(&report, BufWriter::new(File::create(&path)?))
        .with_context(|| format!("writing {}", path.display()))?;
    let mut summary = String::from("model,domain,given_n,mean,std,n_repeats\n");
    for c in &report.summary {
        summary.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.model, c.domain, c.given_n, c.mean, c.std, c.n_repeats
        ));
    }
    fs::write(a.output.join("summary.csv"), summary)?;
    let plain = report_table(&report, TableFormat::Plain)?;
    let csv = report_table(&report, TableFormat::Csv)?;
    fs::write(a.output.join("table.txt"), &plain)?;
    fs::write(a.output.join("table.csv"), &csv)?;
    out.write_all(match a.format {
        FormatArg::Plain => plain.as_bytes(),
        FormatArg::Csv => csv.as_bytes(),
    })?;
    Ok(())
}

fn synth(a: SynthArgs, out: &mut impl Write) -> Result<()> {
    let n_users: Vec<usize> = parse_list("users", &a.users)?;
    let z = n_users.len();
    let spec = SyntheticSpec {
        user_clusters: a.user_clusters,
        common_clusters: a.common_clusters,
        specific_clusters: per_domain("l", parse_list("l", &a.specific_clusters)?, z)?,
        levels: a.levels,
        n_items: per_domain("items", parse_list("items", &a.items)?, z)?,
        n_users,
        w1: per_domain("w1", parse_list("w1", &a.w1)?, z)?,
        density: a.density,
        rating_peak: a.peak,
        membership_purity: a.purity,
        seed: a.seed,
    };
    let data = synth_generate(&spec)?;
    data.dataset.save(&a.output)?;
    let truth = TrainedModel {
        params: data.truth,
        trace: Vec::new(),
        seed: a.seed,
    };
    Checkpoint::from_mixture(ModelKind::Pclf, &truth, &TrainConfig::default(), &data.dataset)
        .save(a.output.join("truth.json"))?;
    summarize(&data.dataset, out)
}

fn write_matrix(out: &mut impl Write, m: &ndarray::Array2<f64>) -> io::Result<()> {
    for row in m.outer_iter() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.4}")).collect();
        writeln!(out, "  {}", cells.join(" "))?;
    }
    Ok(())
}

/// Indices of the `n` largest entries, largest first.
fn top_n(values: ndarray::ArrayView1<f64>, n: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    idx.truncate(n);
    idx
}

fn write_top(out: &mut impl Write, label: &str, cond: &ndarray::Array2<f64>, offsets: &[usize], n: usize) -> io::Result<()> {
    for (c, row) in cond.outer_iter().enumerate() {
        let items: Vec<String> = top_n(row, n)
            .into_iter()
            .map(|(g, p)| {
                let z = offsets.partition_point(|&o| o <= g) - 1;
                format!("{z}:{}({p:.4})", g - offsets[z])
            })
            .collect();
        writeln!(out, "  {label} {c}: {}", items.join(" "))?;
    }
    Ok(())
}

fn inspect(a: InspectArgs, out: &mut impl Write) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    writeln!(out, "format={} model={} seed={}", ck.format, ck.model_kind, ck.seed)?;
    writeln!(
        out,
        "levels={} users={:?} items={:?}",
        ck.layout.levels, ck.layout.n_users, ck.layout.n_items
    )?;
    if ck.model_kind == ModelKind::Nmf {
        for (z, f) in ck.to_nmf()?.iter().enumerate() {
            writeln!(out, "domain {z}: rank={} users={} items={}", f.rank(), f.user.nrows(), f.item.nrows())?;
        }
        return Ok(());
    }
    let params = ck.to_params()?;
    let d = &params.dims;
    let l: Vec<String> = d.specific_clusters.iter().map(|l| l.to_string()).collect();
    writeln!(out, "K={} T={} L={}", d.user_clusters, d.common_clusters, l.join(","))?;
    if let Some(last) = ck.trace.last() {
        writeln!(out, "iterations={} log_likelihood={:.6}", ck.trace.len() - 1, last.log_likelihood)?;
    }
    let s = cluster_rating_matrices(&params);
    writeln!(out, "S_com ({}x{}):", d.user_clusters, d.common_clusters)?;
    write_matrix(out, &s.common)?;
    for (z, m) in s.specific.iter().enumerate() {
        if d.has_specific(z) {
            writeln!(out, "S_spe[{z}] ({}x{}):", d.user_clusters, d.specific_clusters[z])?;
            write_matrix(out, m)?;
        }
    }
    writeln!(out, "top users per cluster (domain:index(P(u|k))):")?;
    write_top(out, "user cluster", &params.user_cond, &d.user_offsets(), a.top)?;
    writeln!(out, "top items per common cluster:")?;
    write_top(out, "common cluster", &params.common_cond, &d.item_offsets(), a.top)?;
    for z in 0..d.n_domains() {
        if d.has_specific(z) {
            writeln!(out, "top items per specific cluster of domain {z}:")?;
            write_top(out, "specific cluster", &params.specific_cond[z], &[0, d.n_items[z]], a.top)?;
        }
    }
    Ok(())
}
