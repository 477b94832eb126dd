//! Rating ingestion, scale normalization, indexing, and Given-N splits.
//!
//! Every domain keeps its own dense user and item index spaces. Two domains
//! that happen to share an opaque id string still get distinct entities.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATASET_FORMAT: &str = "pclf-dataset-v1";
pub const RATINGS_FILE: &str = "ratings.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {reason}")]
    Malformed { row: u64, reason: String },
    #[error("row {row}: rating {value} outside scale [{min}, {max}]")]
    OutOfScale {
        row: u64,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("value {value} outside scale [{min}, {max}]")]
    ValueOutOfScale { value: f64, min: f64, max: f64 },
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("requested {requested} {what} but only {available} qualify")]
    Infeasible {
        what: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("no domains given")]
    NoDomains,
    #[error("domain {0} has no ratings")]
    EmptyDomain(usize),
    #[error("domain {domain} uses {found} rating levels, expected {expected}")]
    LevelMismatch {
        domain: usize,
        expected: u8,
        found: u8,
    },
    #[error("domain {domain} out of range (dataset has {n_domains})")]
    DomainOutOfRange { domain: usize, n_domains: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Write(#[from] std::io::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Source rating scale and the number of discrete target levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSpec {
    pub min: f64,
    pub max: f64,
    pub levels: u8,
}

impl ScaleSpec {
    pub fn new(min: f64, max: f64, levels: u8) -> Result<Self> {
        let scale = Self { min, max, levels };
        scale.validate()?;
        Ok(scale)
    }

    /// Scale `1..=levels`, i.e. ratings already on the target levels.
    pub fn identity(levels: u8) -> Self {
        Self {
            min: 1.0,
            max: levels as f64,
            levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(DataError::InvalidScale(format!(
                "need min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        if self.levels < 2 {
            return Err(DataError::InvalidScale(format!(
                "need at least 2 levels, got {}",
                self.levels
            )));
        }
        Ok(())
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }
}

impl Default for ScaleSpec {
    fn default() -> Self {
        Self::identity(5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub user_id: String,
    pub item_id: String,
    pub value: f64,
}

impl RawRating {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, value: f64) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            value,
        }
    }
}

/// Zero-based column positions of the user, item and rating fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnMap {
    pub user: usize,
    pub item: usize,
    pub rating: usize,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            user: 0,
            item: 1,
            rating: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub delimiter: u8,
    pub columns: ColumnMap,
    pub skip_header: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            delimiter: b'\t',
            columns: ColumnMap::default(),
            skip_header: false,
        }
    }
}

pub fn parse_ratings(
    path: impl AsRef<Path>,
    options: &ParseOptions,
    scale: &ScaleSpec,
) -> Result<Vec<RawRating>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ratings_from_reader(file, options, scale)
}

/// Parses delimited rating rows. Blank lines are skipped; row numbers in
/// errors are 1-based physical line numbers.
pub fn parse_ratings_from_reader<R: Read>(
    reader: R,
    options: &ParseOptions,
    scale: &ScaleSpec,
) -> Result<Vec<RawRating>> {
    scale.validate()?;
    let cols = options.columns;
    let needed = cols.user.max(cols.item).max(cols.rating) + 1;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let row = idx as u64 + 1;
        let line = line.map_err(DataError::Write)?;
        if idx == 0 && options.skip_header {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(options.delimiter as char).collect();
        if fields.len() < needed {
            return Err(DataError::Malformed {
                row,
                reason: format!("expected at least {needed} fields, found {}", fields.len()),
            });
        }
        let raw_value = fields[cols.rating].trim();
        let value: f64 = raw_value.parse().map_err(|_| DataError::Malformed {
            row,
            reason: format!("rating {raw_value:?} is not a number"),
        })?;
        if !scale.contains(value) {
            return Err(DataError::OutOfScale {
                row,
                value,
                min: scale.min,
                max: scale.max,
            });
        }
        out.push(RawRating::new(
            fields[cols.user].trim(),
            fields[cols.item].trim(),
            value,
        ));
    }
    Ok(out)
}

/// Linear map of `value` onto `1..=levels`, rounded half away from zero.
pub fn normalize_scale(value: f64, scale: &ScaleSpec) -> Result<u8> {
    if !scale.contains(value) {
        return Err(DataError::ValueOutOfScale {
            value,
            min: scale.min,
            max: scale.max,
        });
    }
    let top = (scale.levels - 1) as f64;
    let level = (1.0 + top * (value - scale.min) / (scale.max - scale.min)).round();
    Ok(level.clamp(1.0, scale.levels as f64) as u8)
}

/// Filtering and sampling controls for [`select_subset`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetSpec {
    /// `None` keeps every qualifying user.
    #[serde(default)]
    pub n_users: Option<usize>,
    #[serde(default)]
    pub n_items: Option<usize>,
    /// Users must have at least this many ratings to qualify.
    #[serde(default)]
    pub min_user_ratings: usize,
    #[serde(default)]
    pub min_item_ratings: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Samples users first, then items among the sampled users' ratings.
///
/// The result is ordered by the sampled user order (file order within a
/// user), so dense indices assigned later follow the seeded sample.
pub fn select_subset(ratings: &[RawRating], spec: &SubsetSpec) -> Result<Vec<RawRating>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (user_order, user_counts) = count_by(ratings.iter().map(|r| r.user_id.as_str()));
    let mut users: Vec<&str> = user_order
        .into_iter()
        .filter(|u| user_counts[u] >= spec.min_user_ratings)
        .collect();
    users.shuffle(&mut rng);
    if let Some(n) = spec.n_users {
        if n > users.len() {
            return Err(DataError::Infeasible {
                what: "users",
                requested: n,
                available: users.len(),
            });
        }
        users.truncate(n);
    }
    let user_rank: HashMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (*u, i)).collect();

    let kept_users: Vec<&RawRating> = ratings
        .iter()
        .filter(|r| user_rank.contains_key(r.user_id.as_str()))
        .collect();
    let (item_order, item_counts) = count_by(kept_users.iter().map(|r| r.item_id.as_str()));
    let mut items: Vec<&str> = item_order
        .into_iter()
        .filter(|i| item_counts[i] >= spec.min_item_ratings)
        .collect();
    items.shuffle(&mut rng);
    if let Some(n) = spec.n_items {
        if n > items.len() {
            return Err(DataError::Infeasible {
                what: "items",
                requested: n,
                available: items.len(),
            });
        }
        items.truncate(n);
    }
    let item_set: std::collections::HashSet<&str> = items.into_iter().collect();

    let mut out: Vec<&RawRating> = kept_users
        .into_iter()
        .filter(|r| item_set.contains(r.item_id.as_str()))
        .collect();
    // stable: file order is preserved within each user
    out.sort_by_key(|r| user_rank[r.user_id.as_str()]);
    Ok(out.into_iter().cloned().collect())
}

fn count_by<'a>(keys: impl Iterator<Item = &'a str>) -> (Vec<&'a str>, HashMap<&'a str, usize>) {
    let mut order = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for key in keys {
        let c = counts.entry(key).or_insert_with(|| {
            order.push(key);
            0
        });
        *c += 1;
    }
    (order, counts)
}

/// One observed rating with dense, per-domain indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RatingTriple {
    pub domain: usize,
    pub user: usize,
    pub item: usize,
    /// Level in `1..=levels`.
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub triples: Vec<RatingTriple>,
}

impl Domain {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_ratings(&self) -> usize {
        self.triples.len()
    }
}

/// Indexed rating pools for `Z` domains sharing one rating scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossDomainDataset {
    levels: u8,
    domains: Vec<Domain>,
}

pub fn build_dataset(per_domain: Vec<(Vec<RawRating>, ScaleSpec)>) -> Result<CrossDomainDataset> {
    let Some((_, first)) = per_domain.first() else {
        return Err(DataError::NoDomains);
    };
    let levels = first.levels;
    let mut domains = Vec::with_capacity(per_domain.len());
    for (z, (ratings, scale)) in per_domain.into_iter().enumerate() {
        scale.validate()?;
        if scale.levels != levels {
            return Err(DataError::LevelMismatch {
                domain: z,
                expected: levels,
                found: scale.levels,
            });
        }
        if ratings.is_empty() {
            return Err(DataError::EmptyDomain(z));
        }
        let mut users = Interner::default();
        let mut items = Interner::default();
        let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
        let mut triples: Vec<RatingTriple> = Vec::new();
        for raw in &ratings {
            let user = users.intern(&raw.user_id);
            let item = items.intern(&raw.item_id);
            let rating = normalize_scale(raw.value, &scale)?;
            let triple = RatingTriple {
                domain: z,
                user,
                item,
                rating,
            };
            match slot.get(&(user, item)) {
                // later occurrence wins, position of the first is kept
                Some(&pos) => triples[pos] = triple,
                None => {
                    slot.insert((user, item), triples.len());
                    triples.push(triple);
                }
            }
        }
        domains.push(Domain {
            user_ids: users.ids,
            item_ids: items.ids,
            triples,
        });
    }
    Ok(CrossDomainDataset { levels, domains })
}

#[derive(Default)]
struct Interner {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }
}

impl CrossDomainDataset {
    /// Assembles a dataset from already-indexed domains, checking every
    /// structural invariant.
    pub fn from_domains(levels: u8, domains: Vec<Domain>) -> Result<Self> {
        if levels < 2 {
            return Err(DataError::InvalidScale(format!(
                "need at least 2 levels, got {levels}"
            )));
        }
        if domains.is_empty() {
            return Err(DataError::NoDomains);
        }
        for (z, d) in domains.iter().enumerate() {
            let mut seen = std::collections::HashSet::with_capacity(d.triples.len());
            for t in &d.triples {
                if t.domain != z {
                    return Err(DataError::Inconsistent(format!(
                        "triple tagged domain {} stored in domain {z}",
                        t.domain
                    )));
                }
                if t.user >= d.n_users() || t.item >= d.n_items() {
                    return Err(DataError::Inconsistent(format!(
                        "domain {z}: index ({}, {}) outside {}x{}",
                        t.user,
                        t.item,
                        d.n_users(),
                        d.n_items()
                    )));
                }
                if t.rating < 1 || t.rating > levels {
                    return Err(DataError::Inconsistent(format!(
                        "domain {z}: rating {} outside 1..={levels}",
                        t.rating
                    )));
                }
                if !seen.insert((t.user, t.item)) {
                    return Err(DataError::Inconsistent(format!(
                        "domain {z}: duplicate cell ({}, {})",
                        t.user, t.item
                    )));
                }
            }
        }
        Ok(Self { levels, domains })
    }

    pub fn levels(&self) -> u8 {
        self.levels
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn domain(&self, z: usize) -> Result<&Domain> {
        self.domains.get(z).ok_or(DataError::DomainOutOfRange {
            domain: z,
            n_domains: self.domains.len(),
        })
    }

    pub fn triples(&self, z: usize) -> &[RatingTriple] {
        &self.domains[z].triples
    }

    pub fn total_ratings(&self) -> usize {
        self.domains.iter().map(Domain::n_ratings).sum()
    }

    /// Pooled view: every domain's triples, domain by domain.
    pub fn pooled(&self) -> impl Iterator<Item = &RatingTriple> {
        self.domains.iter().flat_map(|d| d.triples.iter())
    }

    /// Same index spaces and id maps, different observed triples.
    pub fn with_triples(&self, per_domain: Vec<Vec<RatingTriple>>) -> Result<Self> {
        if per_domain.len() != self.domains.len() {
            return Err(DataError::Inconsistent(format!(
                "expected {} triple lists, got {}",
                self.domains.len(),
                per_domain.len()
            )));
        }
        let domains = self
            .domains
            .iter()
            .zip(per_domain)
            .map(|(d, triples)| Domain {
                user_ids: d.user_ids.clone(),
                item_ids: d.item_ids.clone(),
                triples,
            })
            .collect();
        Self::from_domains(self.levels, domains)
    }

    /// Extracts domain `z` as a standalone one-domain dataset.
    pub fn single_domain(&self, z: usize) -> Result<Self> {
        let d = self.domain(z)?;
        let triples = d
            .triples
            .iter()
            .map(|t| RatingTriple { domain: 0, ..*t })
            .collect();
        Ok(Self {
            levels: self.levels,
            domains: vec![Domain {
                user_ids: d.user_ids.clone(),
                item_ids: d.item_ids.clone(),
                triples,
            }],
        })
    }

    /// Reorders domains: new domain `i` is old domain `order[i]`.
    pub fn reorder_domains(&self, order: &[usize]) -> Result<Self> {
        let mut check = order.to_vec();
        check.sort_unstable();
        if check != (0..self.domains.len()).collect::<Vec<_>>() {
            return Err(DataError::Inconsistent(format!(
                "{order:?} is not a permutation of the domains"
            )));
        }
        let domains = order
            .iter()
            .enumerate()
            .map(|(new, &old)| {
                let d = &self.domains[old];
                Domain {
                    user_ids: d.user_ids.clone(),
                    item_ids: d.item_ids.clone(),
                    triples: d
                        .triples
                        .iter()
                        .map(|t| RatingTriple { domain: new, ..*t })
                        .collect(),
                }
            })
            .collect();
        Ok(Self {
            levels: self.levels,
            domains,
        })
    }

    /// Concatenates all domains into one domain with disjoint index ranges.
    /// Ids are kept as they are, so they may repeat across the old domains.
    pub fn concatenated(&self) -> Self {
        let mut merged = Domain {
            user_ids: Vec::new(),
            item_ids: Vec::new(),
            triples: Vec::with_capacity(self.total_ratings()),
        };
        for d in &self.domains {
            let (du, dv) = (merged.user_ids.len(), merged.item_ids.len());
            merged
                .user_ids
                .extend(d.user_ids.iter().cloned());
            merged
                .item_ids
                .extend(d.item_ids.iter().cloned());
            merged.triples.extend(d.triples.iter().map(|t| RatingTriple {
                domain: 0,
                user: t.user + du,
                item: t.item + dv,
                rating: t.rating,
            }));
        }
        Self {
            levels: self.levels,
            domains: vec![merged],
        }
    }

    /// Converts back to raw ratings on the identity scale, using the id maps.
    pub fn to_raw(&self) -> Vec<(Vec<RawRating>, ScaleSpec)> {
        self.domains
            .iter()
            .map(|d| {
                let raw = d
                    .triples
                    .iter()
                    .map(|t| {
                        RawRating::new(
                            d.user_ids[t.user].clone(),
                            d.item_ids[t.item].clone(),
                            t.rating as f64,
                        )
                    })
                    .collect();
                (raw, ScaleSpec::identity(self.levels))
            })
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: DATASET_FORMAT.to_string(),
            n_domains: self.domains.len(),
            levels: self.levels,
            domains: self
                .domains
                .iter()
                .map(|d| DomainManifest {
                    n_users: d.n_users(),
                    n_items: d.n_items(),
                    n_ratings: d.n_ratings(),
                    user_ids: d.user_ids.clone(),
                    item_ids: d.item_ids.clone(),
                })
                .collect(),
        }
    }

    /// Writes `domain,user_idx,item_idx,rating` rows with a header line.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["domain", "user_idx", "item_idx", "rating"])?;
        for t in self.pooled() {
            w.write_record([
                t.domain.to_string(),
                t.user.to_string(),
                t.item.to_string(),
                t.rating.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `ratings.csv` and `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let csv_path = dir.join(RATINGS_FILE);
        let file = File::create(&csv_path).map_err(|source| DataError::Io {
            path: csv_path.clone(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest())?;
        text.push('\n');
        std::fs::write(&manifest_path, text).map_err(|source| DataError::Io {
            path: manifest_path,
            source,
        })?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path).map_err(|source| DataError::Io {
            path: manifest_path,
            source,
        })?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let csv_path = dir.join(RATINGS_FILE);
        let file = File::open(&csv_path).map_err(|source| DataError::Io {
            path: csv_path,
            source,
        })?;
        Self::from_dump(&manifest, file)
    }

    pub fn from_dump<R: Read>(manifest: &Manifest, ratings_csv: R) -> Result<Self> {
        if manifest.format != DATASET_FORMAT {
            return Err(DataError::Inconsistent(format!(
                "expected format {DATASET_FORMAT}, found {}",
                manifest.format
            )));
        }
        if manifest.n_domains != manifest.domains.len() {
            return Err(DataError::Inconsistent(format!(
                "manifest declares {} domains but lists {}",
                manifest.n_domains,
                manifest.domains.len()
            )));
        }
        let mut per_domain: Vec<Vec<RatingTriple>> = vec![Vec::new(); manifest.n_domains];
        let mut reader = csv::Reader::from_reader(ratings_csv);
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = row as u64 + 2;
            let field = |i: usize| -> Result<usize> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| DataError::Malformed {
                        row,
                        reason: format!("field {i} missing or not an integer"),
                    })
            };
            let domain = field(0)?;
            let rating = field(3)?;
            if domain >= manifest.n_domains || rating > u8::MAX as usize {
                return Err(DataError::Malformed {
                    row,
                    reason: format!("domain {domain} or rating {rating} out of range"),
                });
            }
            per_domain[domain].push(RatingTriple {
                domain,
                user: field(1)?,
                item: field(2)?,
                rating: rating as u8,
            });
        }
        let domains: Vec<Domain> = manifest
            .domains
            .iter()
            .zip(per_domain)
            .map(|(m, triples)| Domain {
                user_ids: m.user_ids.clone(),
                item_ids: m.item_ids.clone(),
                triples,
            })
            .collect();
        for (z, (d, m)) in domains.iter().zip(&manifest.domains).enumerate() {
            if d.n_users() != m.n_users || d.n_items() != m.n_items || d.n_ratings() != m.n_ratings
            {
                return Err(DataError::Inconsistent(format!(
                    "domain {z}: counts disagree with manifest"
                )));
            }
        }
        Self::from_domains(manifest.levels, domains)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub n_domains: usize,
    pub levels: u8,
    pub domains: Vec<DomainManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainManifest {
    pub n_users: usize,
    pub n_items: usize,
    pub n_ratings: usize,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

/// Given-N split of one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GivenNSplit {
    pub domain: usize,
    pub n_given: usize,
    pub seed: u64,
    /// All ratings of training users plus `n_given` per test user, in
    /// dataset order.
    pub train_pool: Vec<RatingTriple>,
    /// The remaining ratings of test users, in dataset order.
    pub eval_set: Vec<RatingTriple>,
}

/// Users `0..n_train_users` are training users; every later user is a test
/// user who keeps a seeded sample of `n_given` ratings for training.
pub fn given_n_split(
    dataset: &CrossDomainDataset,
    domain: usize,
    n_train_users: usize,
    n_given: usize,
    seed: u64,
) -> Result<GivenNSplit> {
    let d = dataset.domain(domain)?;
    if n_train_users >= d.n_users() {
        return Err(DataError::InvalidSplit(format!(
            "domain {domain}: {n_train_users} training users leaves no test users out of {}",
            d.n_users()
        )));
    }
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); d.n_users()];
    for (pos, t) in d.triples.iter().enumerate() {
        by_user[t.user].push(pos);
    }
    let mut in_train = vec![false; d.triples.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (user, positions) in by_user.iter_mut().enumerate() {
        if user < n_train_users {
            positions.iter().for_each(|&p| in_train[p] = true);
        } else {
            positions.shuffle(&mut rng);
            positions
                .iter()
                .take(n_given)
                .for_each(|&p| in_train[p] = true);
        }
    }
    let (train, eval): (Vec<_>, Vec<_>) = d
        .triples
        .iter()
        .zip(&in_train)
        .partition(|(_, &keep)| keep);
    Ok(GivenNSplit {
        domain,
        n_given,
        seed,
        train_pool: train.into_iter().map(|(t, _)| *t).collect(),
        eval_set: eval.into_iter().map(|(t, _)| *t).collect(),
    })
}
