//! Parameters, E-step, M-step and the annealed EM loop.
//!
//! The common component models every triple of the pooled data with user
//! clusters and common item clusters. Each domain's specific component
//! models that domain's triples with the same user clusters and private
//! item clusters. Both components share the user prior and user
//! conditionals. A domain with zero specific clusters has no specific
//! component, which is how the single-domain and common-only baselines are
//! expressed.
//!
//! Reductions over the pooled data are always taken per domain and then
//! folded in domain order, so relabeling two domains only reorders
//! commutative additions.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CrossDomainDataset, RatingTriple};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dims(String),
    #[error("invalid training config: {0}")]
    Config(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Cluster counts and the entity counts they are laid out over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// K
    pub user_clusters: usize,
    /// T
    pub common_clusters: usize,
    /// L_z per domain; 0 disables that domain's specific component.
    pub specific_clusters: Vec<usize>,
    pub levels: usize,
    pub n_users: Vec<usize>,
    pub n_items: Vec<usize>,
}

impl ModelDims {
    pub fn for_dataset(
        dataset: &CrossDomainDataset,
        user_clusters: usize,
        common_clusters: usize,
        specific_clusters: Vec<usize>,
    ) -> Result<Self> {
        let dims = Self {
            user_clusters,
            common_clusters,
            specific_clusters,
            levels: dataset.levels() as usize,
            n_users: dataset.domains().iter().map(|d| d.n_users()).collect(),
            n_items: dataset.domains().iter().map(|d| d.n_items()).collect(),
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.user_clusters == 0 || self.common_clusters == 0 {
            return Err(ModelError::Dims(format!(
                "need K, T >= 1, got K={} T={}",
                self.user_clusters, self.common_clusters
            )));
        }
        if self.levels < 2 {
            return Err(ModelError::Dims(format!(
                "need at least 2 rating levels, got {}",
                self.levels
            )));
        }
        let z = self.n_domains();
        if z == 0 || self.n_items.len() != z || self.specific_clusters.len() != z {
            return Err(ModelError::Dims(format!(
                "per-domain lists disagree: {} user counts, {} item counts, {} specific cluster counts",
                self.n_users.len(),
                self.n_items.len(),
                self.specific_clusters.len()
            )));
        }
        Ok(())
    }

    pub fn check_dataset(&self, dataset: &CrossDomainDataset) -> Result<()> {
        let users: Vec<usize> = dataset.domains().iter().map(|d| d.n_users()).collect();
        let items: Vec<usize> = dataset.domains().iter().map(|d| d.n_items()).collect();
        if users != self.n_users || items != self.n_items || dataset.levels() as usize != self.levels
        {
            return Err(ModelError::Dims(format!(
                "model laid out for users {:?} items {:?} R={}, dataset has users {users:?} items {items:?} R={}",
                self.n_users,
                self.n_items,
                self.levels,
                dataset.levels()
            )));
        }
        Ok(())
    }

    pub fn n_domains(&self) -> usize {
        self.n_users.len()
    }

    pub fn total_users(&self) -> usize {
        self.n_users.iter().sum()
    }

    pub fn total_items(&self) -> usize {
        self.n_items.iter().sum()
    }

    /// Domain boundaries in the pooled user index space, length Z+1.
    pub fn user_offsets(&self) -> Vec<usize> {
        offsets(&self.n_users)
    }

    pub fn item_offsets(&self) -> Vec<usize> {
        offsets(&self.n_items)
    }

    pub fn has_specific(&self, z: usize) -> bool {
        self.specific_clusters[z] > 0
    }
}

fn offsets(counts: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(counts.len() + 1);
    out.push(0);
    let mut acc = 0;
    for &c in counts {
        acc += c;
        out.push(acc);
    }
    out
}

/// Full parameter set. Conditionals over users and common items are laid
/// out over the pooled index space (domain 0 first).
#[derive(Debug, Clone, PartialEq)]
pub struct PclfParams {
    pub dims: ModelDims,
    /// P(C_u^k), length K.
    pub user_prior: Array1<f64>,
    /// P(u | C_u^k), K x total users; each row sums to 1.
    pub user_cond: Array2<f64>,
    /// P(C_vcom^t), length T.
    pub common_prior: Array1<f64>,
    /// P(v | C_vcom^t), T x total items.
    pub common_cond: Array2<f64>,
    /// P(r | C_u^k, C_vcom^t), K x T x R.
    pub common_rating: Array3<f64>,
    /// P(C_vspez^l), length L_z per domain.
    pub specific_prior: Vec<Array1<f64>>,
    /// P(v | C_vspez^l), L_z x N_z per domain.
    pub specific_cond: Vec<Array2<f64>>,
    /// P(r | C_u^k, C_vspez^l), K x L_z x R per domain.
    pub specific_rating: Vec<Array3<f64>>,
}

impl PclfParams {
    /// Every distribution uniform.
    pub fn uniform(dims: &ModelDims) -> Result<Self> {
        dims.validate()?;
        let (k, t, r) = (dims.user_clusters, dims.common_clusters, dims.levels);
        let (nu, nv) = (dims.total_users(), dims.total_items());
        let fill1 = |n: usize| Array1::from_elem(n, if n > 0 { 1.0 / n as f64 } else { 0.0 });
        Ok(Self {
            dims: dims.clone(),
            user_prior: fill1(k),
            user_cond: Array2::from_elem((k, nu), 1.0 / nu.max(1) as f64),
            common_prior: fill1(t),
            common_cond: Array2::from_elem((t, nv), 1.0 / nv.max(1) as f64),
            common_rating: Array3::from_elem((k, t, r), 1.0 / r as f64),
            specific_prior: dims.specific_clusters.iter().map(|&l| fill1(l)).collect(),
            specific_cond: dims
                .specific_clusters
                .iter()
                .zip(&dims.n_items)
                .map(|(&l, &n)| Array2::from_elem((l, n), 1.0 / n.max(1) as f64))
                .collect(),
            specific_rating: dims
                .specific_clusters
                .iter()
                .map(|&l| Array3::from_elem((k, l, r), 1.0 / r as f64))
                .collect(),
        })
    }

    /// Checks that every array has the shape `dims` implies.
    pub fn check_shapes(&self) -> Result<()> {
        let d = &self.dims;
        d.validate()?;
        let (k, t, r) = (d.user_clusters, d.common_clusters, d.levels);
        let mut problems = Vec::new();
        let mut expect = |name: String, got: &[usize], want: &[usize]| {
            if got != want {
                problems.push(format!("{name}: {got:?} != {want:?}"));
            }
        };
        expect("user_prior".into(), self.user_prior.shape(), &[k]);
        expect("user_cond".into(), self.user_cond.shape(), &[k, d.total_users()]);
        expect("common_prior".into(), self.common_prior.shape(), &[t]);
        expect("common_cond".into(), self.common_cond.shape(), &[t, d.total_items()]);
        expect("common_rating".into(), self.common_rating.shape(), &[k, t, r]);
        let z = d.n_domains();
        if self.specific_prior.len() != z
            || self.specific_cond.len() != z
            || self.specific_rating.len() != z
        {
            return Err(ModelError::Dims(format!(
                "expected {z} specific components"
            )));
        }
        for zz in 0..z {
            let l = d.specific_clusters[zz];
            expect(format!("specific_prior[{zz}]"), self.specific_prior[zz].shape(), &[l]);
            expect(
                format!("specific_cond[{zz}]"),
                self.specific_cond[zz].shape(),
                &[l, d.n_items[zz]],
            );
            expect(
                format!("specific_rating[{zz}]"),
                self.specific_rating[zz].shape(),
                &[k, l, r],
            );
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Dims(problems.join("; ")))
        }
    }

    /// Visits every probability distribution with a descriptive name.
    pub fn for_each_distribution(&self, mut visit: impl FnMut(&str, &[f64])) {
        visit("user_prior", self.user_prior.as_slice().unwrap());
        for row in self.user_cond.outer_iter() {
            visit("user_cond", row.as_slice().unwrap());
        }
        visit("common_prior", self.common_prior.as_slice().unwrap());
        for row in self.common_cond.outer_iter() {
            visit("common_cond", row.as_slice().unwrap());
        }
        for lane in self.common_rating.lanes(Axis(2)) {
            visit("common_rating", lane.as_slice().unwrap());
        }
        for z in 0..self.dims.n_domains() {
            if !self.dims.has_specific(z) {
                continue;
            }
            visit("specific_prior", self.specific_prior[z].as_slice().unwrap());
            for row in self.specific_cond[z].outer_iter() {
                visit("specific_cond", row.as_slice().unwrap());
            }
            for lane in self.specific_rating[z].lanes(Axis(2)) {
                visit("specific_rating", lane.as_slice().unwrap());
            }
        }
    }

    /// Largest |sum - 1| over all distributions.
    pub fn max_normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        self.for_each_distribution(|_, p| {
            worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
        });
        worst
    }

    pub fn min_entry(&self) -> f64 {
        let mut lo = f64::INFINITY;
        self.for_each_distribution(|_, p| {
            lo = p.iter().copied().fold(lo, f64::min);
        });
        lo
    }
}

/// E-step posteriors. `common[z]` holds the pooled-data posteriors of
/// domain z's triples (S_z x K x T); `specific[z]` is S_z x K x L_z.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub common: Vec<Array3<f64>>,
    pub specific: Vec<Array3<f64>>,
}

impl Responsibilities {
    /// Largest |sum - 1| over all per-triple matrices.
    pub fn max_normalization_error(&self) -> f64 {
        self.common
            .iter()
            .chain(self.specific.iter())
            .filter(|a| a.shape()[1] * a.shape()[2] > 0)
            .flat_map(|a| a.outer_iter().map(|m| (m.sum() - 1.0).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    /// Validates shapes against `dataset` and recovers the model dims.
    pub fn dims(&self, dataset: &CrossDomainDataset) -> Result<ModelDims> {
        let z = dataset.n_domains();
        if self.common.len() != z || self.specific.len() != z {
            return Err(ModelError::Dims(format!(
                "responsibilities cover {} / {} domains, dataset has {z}",
                self.common.len(),
                self.specific.len()
            )));
        }
        let k = self.common[0].shape()[1];
        let t = self.common[0].shape()[2];
        let mut specific_clusters = Vec::with_capacity(z);
        for zz in 0..z {
            let s = dataset.triples(zz).len();
            let c = self.common[zz].shape();
            let sp = self.specific[zz].shape();
            if c != [s, k, t] || sp[0] != s || sp[1] != k {
                return Err(ModelError::Dims(format!(
                    "domain {zz}: common {c:?} specific {sp:?} for {s} triples, K={k} T={t}"
                )));
            }
            specific_clusters.push(sp[2]);
        }
        ModelDims::for_dataset(dataset, k, t, specific_clusters)
    }
}

/// Annealing schedule and stopping rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Ascending inverse temperatures, ending at 1.0.
    pub beta_schedule: Vec<f64>,
    pub max_iters_per_beta: usize,
    pub rel_ll_tol: f64,
    pub smoothing_floor: f64,
    pub seed: u64,
    /// Independent initializations; the run with the highest final
    /// log-likelihood is kept.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta_schedule: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            max_iters_per_beta: 50,
            rel_ll_tol: 1e-6,
            smoothing_floor: 1e-10,
            seed: 0,
            restarts: 1,
        }
    }
}

impl TrainConfig {
    /// Plain EM: a single step at beta = 1.
    pub fn plain_em() -> Self {
        Self {
            beta_schedule: vec![1.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.beta_schedule;
        if s.is_empty() {
            return Err(ModelError::Config("beta schedule is empty".into()));
        }
        if s.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
            return Err(ModelError::Config(format!(
                "beta values must lie in (0, 1], got {s:?}"
            )));
        }
        if s.windows(2).any(|w| w[1] < w[0]) {
            return Err(ModelError::Config(format!(
                "beta schedule must be ascending, got {s:?}"
            )));
        }
        if *s.last().unwrap() != 1.0 {
            return Err(ModelError::Config(format!(
                "beta schedule must end at 1.0, got {s:?}"
            )));
        }
        if self.restarts == 0 {
            return Err(ModelError::Config("restarts must be >= 1".into()));
        }
        if self.max_iters_per_beta == 0 {
            return Err(ModelError::Config("max_iters_per_beta must be >= 1".into()));
        }
        if !(self.rel_ll_tol > 0.0) {
            return Err(ModelError::Config("rel_ll_tol must be > 0".into()));
        }
        if !(self.smoothing_floor >= 0.0 && self.smoothing_floor.is_finite()) {
            return Err(ModelError::Config("smoothing_floor must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub beta: f64,
    pub iteration: usize,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: PclfParams,
    pub trace: Vec<TraceEntry>,
    pub seed: u64,
}

impl TrainedModel {
    pub fn final_log_likelihood(&self) -> f64 {
        self.trace.last().map_or(f64::NEG_INFINITY, |e| e.log_likelihood)
    }
}

/// Log-space factor tables, precomputed once per pass over the data.
struct LogTables {
    /// ln P(C_u^k) + ln P(u|C_u^k), total users x K.
    user: Array2<f64>,
    /// ln P(C_vcom^t) + ln P(v|C_vcom^t), total items x T.
    common_item: Array2<f64>,
    /// ln P(r|k,t), R x K x T.
    common_rating: Array3<f64>,
    specific_item: Vec<Array2<f64>>,
    specific_rating: Vec<Array3<f64>>,
}

impl LogTables {
    fn new(p: &PclfParams) -> Self {
        let joint = |prior: &Array1<f64>, cond: &Array2<f64>| {
            let mut out = cond.t().mapv(f64::ln);
            for mut row in out.outer_iter_mut() {
                row.iter_mut()
                    .zip(prior.iter())
                    .for_each(|(x, &pk)| *x += pk.ln());
            }
            out.as_standard_layout().into_owned()
        };
        let rating = |table: &Array3<f64>| {
            table
                .mapv(f64::ln)
                .permuted_axes([2, 0, 1])
                .as_standard_layout()
                .into_owned()
        };
        Self {
            user: joint(&p.user_prior, &p.user_cond),
            common_item: joint(&p.common_prior, &p.common_cond),
            common_rating: rating(&p.common_rating),
            specific_item: p
                .specific_prior
                .iter()
                .zip(&p.specific_cond)
                .map(|(pr, c)| joint(pr, c))
                .collect(),
            specific_rating: p.specific_rating.iter().map(rating).collect(),
        }
    }
}

/// `exp(beta * (x - row max))` for every row of a log table, with the
/// shifts kept apart, so joint weights become plain products.
struct Scaled {
    values: Array2<f64>,
    shift: Vec<f64>,
}

impl Scaled {
    fn new(logs: ndarray::ArrayView2<f64>, beta: f64) -> Self {
        let mut values = Array2::<f64>::zeros(logs.dim());
        let mut shift = Vec::with_capacity(logs.nrows());
        for (src, mut dst) in logs.outer_iter().zip(values.outer_iter_mut()) {
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max.is_finite() {
                dst.iter_mut()
                    .zip(src)
                    .for_each(|(d, &x)| *d = (beta * (x - max)).exp());
                shift.push(beta * max);
            } else {
                shift.push(0.0);
            }
        }
        Self { values, shift }
    }

    fn row(&self, i: usize) -> (&[f64], f64) {
        (self.values.row(i).to_slice().unwrap(), self.shift[i])
    }
}

/// Fills `out[k * C + c] = user[k] * item[c] * rating[k * C + c]` and
/// returns the sum.
#[inline]
fn product_joint(out: &mut [f64], user: &[f64], item: &[f64], rating: &[f64]) -> f64 {
    let c = item.len();
    let mut sum = 0.0;
    for (k, &a) in user.iter().enumerate() {
        let row = &mut out[k * c..(k + 1) * c];
        let rrow = &rating[k * c..(k + 1) * c];
        for ((o, &b), &r) in row.iter_mut().zip(item).zip(rrow) {
            *o = a * b * r;
            sum += *o;
        }
    }
    sum
}

/// Fills `out[k * C + c] = beta * (user[k] + item[c] + rating[k * C + c])`.
#[inline]
fn log_joint(out: &mut [f64], user: &[f64], item: &[f64], rating: &[f64], beta: f64) {
    let c = item.len();
    for (k, &a) in user.iter().enumerate() {
        let row = &mut out[k * c..(k + 1) * c];
        let rrow = &rating[k * c..(k + 1) * c];
        for ((o, &b), &lr) in row.iter_mut().zip(item).zip(rrow) {
            *o = beta * (a + b + lr);
        }
    }
}

/// Turns log weights into a normalized distribution in place. All -inf
/// (zero mass) gives the uniform distribution.
fn normalize_log(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        let u = 1.0 / values.len() as f64;
        values.iter_mut().for_each(|v| *v = u);
        return;
    }
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    values.iter_mut().for_each(|v| *v /= sum);
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sums below this are recomputed in log space.
const TINY: f64 = 1e-200;

/// Which of the two joint factorizations a triple is scored under.
#[derive(Clone, Copy)]
enum Component {
    Common,
    Specific(usize),
}

/// Evaluates per-triple joint weights for one parameter set and one beta.
struct Joint<'a> {
    logs: LogTables,
    scaled_user: Scaled,
    scaled_item: Vec<Scaled>,
    scaled_rating: Vec<Scaled>,
    beta: f64,
    user_offsets: Vec<usize>,
    item_offsets: Vec<usize>,
    dims: &'a ModelDims,
}

impl<'a> Joint<'a> {
    fn new(params: &'a PclfParams, beta: f64) -> Self {
        let logs = LogTables::new(params);
        let flat = |t: &Array3<f64>| {
            let (r, a, b) = t.dim();
            Scaled::new(t.view().into_shape_with_order((r, a * b)).unwrap(), beta)
        };
        // slot 0 is the common component, slot 1 + z the specific one of z
        let mut scaled_item = vec![Scaled::new(logs.common_item.view(), beta)];
        scaled_item.extend(logs.specific_item.iter().map(|x| Scaled::new(x.view(), beta)));
        let mut scaled_rating = vec![flat(&logs.common_rating)];
        scaled_rating.extend(logs.specific_rating.iter().map(flat));
        Self {
            scaled_user: Scaled::new(logs.user.view(), beta),
            scaled_item,
            scaled_rating,
            logs,
            beta,
            user_offsets: params.dims.user_offsets(),
            item_offsets: params.dims.item_offsets(),
            dims: &params.dims,
        }
    }

    fn width(&self, c: Component) -> usize {
        self.dims.user_clusters
            * match c {
                Component::Common => self.dims.common_clusters,
                Component::Specific(z) => self.dims.specific_clusters[z],
            }
    }

    fn rows(&self, c: Component, tr: &RatingTriple) -> (usize, usize, usize, usize) {
        let user = self.user_offsets[tr.domain] + tr.user;
        let rating = tr.rating as usize - 1;
        match c {
            Component::Common => (user, self.item_offsets[tr.domain] + tr.item, rating, 0),
            Component::Specific(z) => (user, tr.item, rating, 1 + z),
        }
    }

    fn log_fill(&self, c: Component, tr: &RatingTriple, out: &mut [f64], beta: f64) {
        let (u, v, r, _) = self.rows(c, tr);
        let (item, rating) = match c {
            Component::Common => (&self.logs.common_item, &self.logs.common_rating),
            Component::Specific(z) => (&self.logs.specific_item[z], &self.logs.specific_rating[z]),
        };
        log_joint(
            out,
            self.logs.user.row(u).as_slice().unwrap(),
            item.row(v).as_slice().unwrap(),
            rating.index_axis(Axis(0), r).as_slice().unwrap(),
            beta,
        );
    }

    /// Tempered posterior of one triple into `out`.
    fn posterior(&self, c: Component, tr: &RatingTriple, out: &mut [f64]) {
        let (u, v, r, slot) = self.rows(c, tr);
        let sum = product_joint(
            out,
            self.scaled_user.row(u).0,
            self.scaled_item[slot].row(v).0,
            self.scaled_rating[slot].row(r).0,
        );
        if sum > TINY && sum.is_finite() {
            let inv = 1.0 / sum;
            out.iter_mut().for_each(|x| *x *= inv);
        } else {
            self.log_fill(c, tr, out, self.beta);
            normalize_log(out);
        }
    }

    /// ln of the untempered joint mass of one triple; needs beta = 1.
    fn log_mass(&self, c: Component, tr: &RatingTriple, scratch: &mut [f64]) -> f64 {
        let (u, v, r, slot) = self.rows(c, tr);
        let (a, sa) = self.scaled_user.row(u);
        let (b, sb) = self.scaled_item[slot].row(v);
        let (w, sw) = self.scaled_rating[slot].row(r);
        let sum = product_joint(scratch, a, b, w);
        if sum > TINY && sum.is_finite() {
            sum.ln() + sa + sb + sw
        } else {
            self.log_fill(c, tr, scratch, 1.0);
            log_sum_exp(scratch)
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(ModelError::Config(format!("beta must lie in (0, 1], got {beta}")))
    }
}

/// Per-triple joint posteriors over cluster pairs, tempered by `beta`.
pub fn e_step(params: &PclfParams, dataset: &CrossDomainDataset, beta: f64) -> Result<Responsibilities> {
    check_beta(beta)?;
    params.check_shapes()?;
    params.dims.check_dataset(dataset)?;
    let dims = &params.dims;
    let joint = Joint::new(params, beta);
    let (k, t) = (dims.user_clusters, dims.common_clusters);

    let mut common = Vec::with_capacity(dims.n_domains());
    let mut specific = Vec::with_capacity(dims.n_domains());
    for z in 0..dims.n_domains() {
        let triples = dataset.triples(z);
        let mut com = Array3::<f64>::zeros((triples.len(), k, t));
        for (tr, mut m) in triples.iter().zip(com.outer_iter_mut()) {
            joint.posterior(Component::Common, tr, m.as_slice_mut().unwrap());
        }
        common.push(com);

        let l = dims.specific_clusters[z];
        let mut spe = Array3::<f64>::zeros((triples.len(), k, l));
        if l > 0 {
            for (tr, mut m) in triples.iter().zip(spe.outer_iter_mut()) {
                joint.posterior(Component::Specific(z), tr, m.as_slice_mut().unwrap());
            }
        }
        specific.push(spe);
    }
    Ok(Responsibilities { common, specific })
}

/// Sum over the domain segments of `row`, folded in domain order.
fn segmented_sum(row: &[f64], offsets: &[usize]) -> f64 {
    offsets
        .windows(2)
        .map(|w| row[w[0]..w[1]].iter().sum::<f64>())
        .fold(0.0, |acc, s| acc + s)
}

/// Adds `floor` to every entry and rescales to sum 1; a zero vector becomes
/// uniform.
fn floor_normalize(values: &mut [f64], offsets: &[usize], floor: f64) {
    if values.is_empty() {
        return;
    }
    values.iter_mut().for_each(|v| *v += floor);
    let sum = segmented_sum(values, offsets);
    if sum > 0.0 && sum.is_finite() {
        values.iter_mut().for_each(|v| *v /= sum);
    } else {
        let u = 1.0 / values.len() as f64;
        values.iter_mut().for_each(|v| *v = u);
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Sufficient statistics of the M-step, accumulated one triple at a time.
/// Triples must arrive domain by domain, common component first.
struct Stats {
    dims: ModelDims,
    /// users x K, entity-major
    user: Vec<f64>,
    /// items x T
    common_item: Vec<f64>,
    /// per domain, R x K x T
    common_rating: Vec<Vec<f64>>,
    /// per domain, items x L_z
    specific_item: Vec<Vec<f64>>,
    /// per domain, R x K x L_z
    specific_rating: Vec<Vec<f64>>,
    user_offsets: Vec<usize>,
    item_offsets: Vec<usize>,
}

impl Stats {
    fn new(dims: &ModelDims) -> Self {
        let (k, t, r) = (dims.user_clusters, dims.common_clusters, dims.levels);
        Self {
            user: vec![0.0; dims.total_users() * k],
            common_item: vec![0.0; dims.total_items() * t],
            common_rating: vec![vec![0.0; r * k * t]; dims.n_domains()],
            specific_item: (0..dims.n_domains())
                .map(|z| vec![0.0; dims.n_items[z] * dims.specific_clusters[z]])
                .collect(),
            specific_rating: dims
                .specific_clusters
                .iter()
                .map(|&l| vec![0.0; r * k * l])
                .collect(),
            user_offsets: dims.user_offsets(),
            item_offsets: dims.item_offsets(),
            dims: dims.clone(),
        }
    }

    #[inline]
    fn accumulate(k: usize, m: &[f64], c: usize, user: &mut [f64], item: &mut [f64], rating: &mut [f64]) {
        for kk in 0..k {
            let row = &m[kk * c..(kk + 1) * c];
            user[kk] += row.iter().sum::<f64>();
            for ((dst, num), &p) in item.iter_mut().zip(&mut rating[kk * c..(kk + 1) * c]).zip(row) {
                *dst += p;
                *num += p;
            }
        }
    }

    fn add(&mut self, c: Component, tr: &RatingTriple, m: &[f64]) {
        let k = self.dims.user_clusters;
        let z = tr.domain;
        let ug = self.user_offsets[z] + tr.user;
        let rr = tr.rating as usize - 1;
        let user = &mut self.user[ug * k..(ug + 1) * k];
        match c {
            Component::Common => {
                let t = self.dims.common_clusters;
                let vg = self.item_offsets[z] + tr.item;
                Self::accumulate(
                    k,
                    m,
                    t,
                    user,
                    &mut self.common_item[vg * t..(vg + 1) * t],
                    &mut self.common_rating[z][rr * k * t..(rr + 1) * k * t],
                );
            }
            Component::Specific(z) => {
                let l = self.dims.specific_clusters[z];
                Self::accumulate(
                    k,
                    m,
                    l,
                    user,
                    &mut self.specific_item[z][tr.item * l..(tr.item + 1) * l],
                    &mut self.specific_rating[z][rr * k * l..(rr + 1) * k * l],
                );
            }
        }
    }

    fn finish(self, dataset: &CrossDomainDataset, floor: f64) -> PclfParams {
        let dims = self.dims;
        let (k, t, r) = (dims.user_clusters, dims.common_clusters, dims.levels);
        let (uo, vo) = (self.user_offsets, self.item_offsets);
        let zc = dims.n_domains();

        let transpose = |acc: &[f64], c: usize, n: usize| {
            Array2::from_shape_fn((c, n), |(cc, e)| acc[e * c + cc])
        };
        // R x (K*C) flat -> K x C x R
        let rating_table = |num: &[f64], c: usize| {
            Array3::from_shape_fn((k, c, r), |(kk, cc, rr)| num[rr * k * c + kk * c + cc])
        };

        let pooled: usize = dataset.total_ratings();
        let user_total = (pooled
            + (0..zc)
                .filter(|&z| dims.has_specific(z))
                .map(|z| dataset.triples(z).len())
                .sum::<usize>()) as f64;

        let single = |n: usize| [0, n];

        let mut user_prior = Array1::<f64>::zeros(k);
        let mut user_cond = transpose(&self.user, k, dims.total_users());
        for (kk, mut row) in user_cond.outer_iter_mut().enumerate() {
            let s = segmented_sum(row.as_slice().unwrap(), &uo);
            user_prior[kk] = ratio(s, user_total);
            row.mapv_inplace(|x| ratio(x, s));
            floor_normalize(row.as_slice_mut().unwrap(), &uo, floor);
        }
        floor_normalize(user_prior.as_slice_mut().unwrap(), &single(k), floor);

        let mut common_prior = Array1::<f64>::zeros(t);
        let mut common_cond = transpose(&self.common_item, t, dims.total_items());
        for (tt, mut row) in common_cond.outer_iter_mut().enumerate() {
            let s = segmented_sum(row.as_slice().unwrap(), &vo);
            common_prior[tt] = ratio(s, pooled as f64);
            row.mapv_inplace(|x| ratio(x, s));
            floor_normalize(row.as_slice_mut().unwrap(), &vo, floor);
        }
        floor_normalize(common_prior.as_slice_mut().unwrap(), &single(t), floor);

        let mut common_rating = Array3::<f64>::zeros((k, t, r));
        for part in &self.common_rating {
            common_rating += &rating_table(part, t);
        }
        normalize_rating(&mut common_rating, floor);

        let mut specific_prior = Vec::with_capacity(zc);
        let mut specific_cond = Vec::with_capacity(zc);
        let mut specific_rating = Vec::with_capacity(zc);
        for z in 0..zc {
            let l = dims.specific_clusters[z];
            let n = dims.n_items[z];
            let s_z = dataset.triples(z).len() as f64;
            let mut cond = transpose(&self.specific_item[z], l, n);
            let mut rating = rating_table(&self.specific_rating[z], l);
            let mut prior = Array1::<f64>::zeros(l);
            for (ll, mut row) in cond.outer_iter_mut().enumerate() {
                let s = segmented_sum(row.as_slice().unwrap(), &single(n));
                prior[ll] = ratio(s, s_z);
                row.mapv_inplace(|x| ratio(x, s));
                floor_normalize(row.as_slice_mut().unwrap(), &single(n), floor);
            }
            floor_normalize(prior.as_slice_mut().unwrap(), &single(l), floor);
            normalize_rating(&mut rating, floor);
            specific_prior.push(prior);
            specific_cond.push(cond);
            specific_rating.push(rating);
        }

        PclfParams {
            dims,
            user_prior,
            user_cond,
            common_prior,
            common_cond,
            common_rating,
            specific_prior,
            specific_cond,
            specific_rating,
        }
    }
}

/// Closed-form parameter updates from the responsibilities, then flooring.
pub fn m_step(resp: &Responsibilities, dataset: &CrossDomainDataset, floor: f64) -> Result<PclfParams> {
    let dims = resp.dims(dataset)?;
    let mut stats = Stats::new(&dims);
    for z in 0..dims.n_domains() {
        let triples = dataset.triples(z);
        for (tr, m) in triples.iter().zip(resp.common[z].outer_iter()) {
            stats.add(Component::Common, tr, m.as_slice().unwrap());
        }
        if dims.has_specific(z) {
            for (tr, m) in triples.iter().zip(resp.specific[z].outer_iter()) {
                stats.add(Component::Specific(z), tr, m.as_slice().unwrap());
            }
        }
    }
    Ok(stats.finish(dataset, floor))
}

/// One E-step followed by one M-step without materializing the
/// responsibilities. Gives the same result as `m_step(e_step(..))`.
pub fn em_step(params: &PclfParams, dataset: &CrossDomainDataset, beta: f64, floor: f64) -> Result<PclfParams> {
    check_beta(beta)?;
    params.check_shapes()?;
    params.dims.check_dataset(dataset)?;
    let dims = &params.dims;
    let joint = Joint::new(params, beta);
    let mut stats = Stats::new(dims);
    let mut scratch = vec![0.0; joint.width(Component::Common)];
    for z in 0..dims.n_domains() {
        let triples = dataset.triples(z);
        for tr in triples {
            joint.posterior(Component::Common, tr, &mut scratch);
            stats.add(Component::Common, tr, &scratch);
        }
        if dims.has_specific(z) {
            let c = Component::Specific(z);
            let mut scratch = vec![0.0; joint.width(c)];
            for tr in triples {
                joint.posterior(c, tr, &mut scratch);
                stats.add(c, tr, &scratch);
            }
        }
    }
    Ok(stats.finish(dataset, floor))
}

fn normalize_rating(table: &mut Array3<f64>, floor: f64) {
    let r = table.shape()[2];
    for mut lane in table.lanes_mut(Axis(2)) {
        let s = lane.sum();
        lane.mapv_inplace(|x| ratio(x, s));
        floor_normalize(lane.as_slice_mut().unwrap(), &[0, r], floor);
    }
}

/// Sum of the common-component and specific-component data log-likelihoods.
pub fn log_likelihood(params: &PclfParams, dataset: &CrossDomainDataset) -> Result<f64> {
    params.check_shapes()?;
    params.dims.check_dataset(dataset)?;
    let dims = &params.dims;
    let joint = Joint::new(params, 1.0);
    let mut total = 0.0;
    for z in 0..dims.n_domains() {
        let mut domain_ll = 0.0;
        let mut scratch = vec![0.0; joint.width(Component::Common)];
        for tr in dataset.triples(z) {
            domain_ll += joint.log_mass(Component::Common, tr, &mut scratch);
        }
        if dims.has_specific(z) {
            let c = Component::Specific(z);
            let mut scratch = vec![0.0; joint.width(c)];
            for tr in dataset.triples(z) {
                domain_ll += joint.log_mass(c, tr, &mut scratch);
            }
        }
        total += domain_ll;
    }
    Ok(total)
}

/// FNV-1a over a byte stream, finished with a splitmix64 mix.
fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // separator so ("ab","c") and ("a","bc") differ
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random positive responsibilities, normalized per triple.
///
/// A triple's matrix is the outer product of random weight vectors drawn
/// for its user and its item, times per-triple noise. Every draw depends
/// only on the seed and id strings, so the initialization does not depend
/// on where a triple is stored. The entity factors make the initial
/// clusters differ from each other; per-triple noise alone averages out.
pub fn random_responsibilities(
    dims: &ModelDims,
    dataset: &CrossDomainDataset,
    seed: u64,
) -> Result<Responsibilities> {
    dims.validate()?;
    dims.check_dataset(dataset)?;
    let seed_bytes = seed.to_le_bytes();
    let rng_for = |parts: &[&[u8]]| {
        let mut all: Vec<&[u8]> = vec![&seed_bytes];
        all.extend_from_slice(parts);
        ChaCha8Rng::seed_from_u64(stable_hash(&all))
    };
    let entity = |tag: &[u8], id: &str, n: usize| -> Vec<f64> {
        let mut rng = rng_for(&[tag, id.as_bytes()]);
        (0..n)
            .map(|_| {
                let e = -(1.0 - rng.gen::<f64>()).ln();
                e * e + 1e-3
            })
            .collect()
    };
    let pair = |tag: &[u8], user: &[f64], item: &[f64], uid: &str, iid: &str, out: &mut [f64]| {
        let mut rng = rng_for(&[tag, uid.as_bytes(), iid.as_bytes()]);
        let w = item.len();
        for (i, v) in out.iter_mut().enumerate() {
            *v = user[i / w] * item[i % w] * (0.5 + rng.gen::<f64>());
        }
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= s);
    };
    let (k, t) = (dims.user_clusters, dims.common_clusters);
    let mut common = Vec::with_capacity(dims.n_domains());
    let mut specific = Vec::with_capacity(dims.n_domains());
    for (z, domain) in dataset.domains().iter().enumerate() {
        let s = domain.triples.len();
        let l = dims.specific_clusters[z];
        let users: Vec<Vec<f64>> = domain.user_ids.iter().map(|id| entity(b"user", id, k)).collect();
        let com_items: Vec<Vec<f64>> = domain
            .item_ids
            .iter()
            .map(|id| entity(b"common-item", id, t))
            .collect();
        let spe_items: Vec<Vec<f64>> = domain
            .item_ids
            .iter()
            .map(|id| entity(b"specific-item", id, l))
            .collect();
        let mut com = Array3::<f64>::zeros((s, k, t));
        let mut spe = Array3::<f64>::zeros((s, k, l));
        for (j, tr) in domain.triples.iter().enumerate() {
            let (uid, iid) = (&domain.user_ids[tr.user], &domain.item_ids[tr.item]);
            let mut m = com.index_axis_mut(Axis(0), j);
            pair(b"common", &users[tr.user], &com_items[tr.item], uid, iid, m.as_slice_mut().unwrap());
            if l > 0 {
                let mut m = spe.index_axis_mut(Axis(0), j);
                pair(b"specific", &users[tr.user], &spe_items[tr.item], uid, iid, m.as_slice_mut().unwrap());
            }
        }
        common.push(com);
        specific.push(spe);
    }
    Ok(Responsibilities { common, specific })
}

/// Random responsibilities followed by one M-step.
pub fn init_params(
    dims: &ModelDims,
    dataset: &CrossDomainDataset,
    seed: u64,
    floor: f64,
) -> Result<PclfParams> {
    let resp = random_responsibilities(dims, dataset, seed)?;
    m_step(&resp, dataset, floor)
}

/// Annealed EM: for each beta, alternate E and M steps until the relative
/// log-likelihood change drops below the tolerance.
pub fn train(dataset: &CrossDomainDataset, dims: &ModelDims, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let mut best = run_once(dataset, dims, config, config.seed)?;
    for r in 1..config.restarts as u64 {
        let seed = stable_hash(&[&config.seed.to_le_bytes(), b"restart", &r.to_le_bytes()]);
        let run = run_once(dataset, dims, config, seed)?;
        if run.final_log_likelihood() > best.final_log_likelihood() {
            best = run;
        }
    }
    Ok(best)
}

fn run_once(
    dataset: &CrossDomainDataset,
    dims: &ModelDims,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let mut params = init_params(dims, dataset, seed, config.smoothing_floor)?;
    let mut prev = log_likelihood(&params, dataset)?;
    let mut trace = vec![TraceEntry {
        beta: config.beta_schedule[0],
        iteration: 0,
        log_likelihood: prev,
    }];
    for &beta in &config.beta_schedule {
        for iteration in 1..=config.max_iters_per_beta {
            params = em_step(&params, dataset, beta, config.smoothing_floor)?;
            let ll = log_likelihood(&params, dataset)?;
            trace.push(TraceEntry {
                beta,
                iteration,
                log_likelihood: ll,
            });
            let change = (ll - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            prev = ll;
            if change < config.rel_ll_tol {
                break;
            }
        }
    }
    Ok(TrainedModel {
        params,
        trace,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, RawRating, ScaleSpec};

    fn toy() -> CrossDomainDataset {
        build_dataset(vec![
            (
                vec![
                    RawRating::new("a", "x", 1.0),
                    RawRating::new("a", "y", 2.0),
                    RawRating::new("b", "x", 5.0),
                    RawRating::new("c", "z", 4.0),
                    RawRating::new("c", "x", 4.0),
                ],
                ScaleSpec::identity(5),
            ),
            (
                vec![
                    RawRating::new("p", "q", 3.0),
                    RawRating::new("p", "s", 5.0),
                    RawRating::new("o", "q", 5.0),
                ],
                ScaleSpec::identity(5),
            ),
        ])
        .unwrap()
    }

    #[test]
    fn single_cluster_init_is_histogram() {
        let ds = toy();
        let dims = ModelDims::for_dataset(&ds, 1, 1, vec![1, 1]).unwrap();
        let p = init_params(&dims, &ds, 3, 0.0).unwrap();
        assert_eq!(p.user_prior[0], 1.0);
        assert_eq!(p.common_prior[0], 1.0);
        // pooled ratings: 1,2,5,4,4,3,5,5
        let hist = [1.0, 1.0, 1.0, 2.0, 3.0].map(|c| c / 8.0);
        for (r, h) in hist.iter().enumerate() {
            assert!((p.common_rating[[0, 0, r]] - h).abs() < 1e-15);
        }
        // domain 1 ratings: 3,5,5
        assert!((p.specific_rating[1][[0, 0, 4]] - 2.0 / 3.0).abs() < 1e-15);
        // user a has 2 common + 2 specific of 16 total
        assert!((p.user_cond[[0, 0]] - 4.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn init_is_deterministic_and_normalized() {
        let ds = toy();
        let dims = ModelDims::for_dataset(&ds, 3, 2, vec![2, 3]).unwrap();
        let a = init_params(&dims, &ds, 11, 1e-10).unwrap();
        let b = init_params(&dims, &ds, 11, 1e-10).unwrap();
        assert_eq!(a, b);
        assert!(a.max_normalization_error() < 1e-12);
        assert!(a.min_entry() > 0.0);
        let c = init_params(&dims, &ds, 12, 1e-10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fused_step_matches_separate_steps() {
        let ds = toy();
        let dims = ModelDims::for_dataset(&ds, 3, 2, vec![2, 0]).unwrap();
        let p = init_params(&dims, &ds, 5, 1e-10).unwrap();
        for beta in [0.5, 1.0] {
            let two = m_step(&e_step(&p, &ds, beta).unwrap(), &ds, 1e-10).unwrap();
            assert_eq!(em_step(&p, &ds, beta, 1e-10).unwrap(), two);
        }
    }

    #[test]
    fn uniform_params_give_uniform_posteriors() {
        let ds = toy();
        let dims = ModelDims::for_dataset(&ds, 2, 3, vec![4, 1]).unwrap();
        let p = PclfParams::uniform(&dims).unwrap();
        let resp = e_step(&p, &ds, 0.7).unwrap();
        for a in &resp.common {
            assert!(a.iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
        }
        assert!(resp.specific[0].iter().all(|&x| (x - 1.0 / 8.0).abs() < 1e-15));
        assert!(resp.specific[1].iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn zero_mass_triple_gets_uniform_posterior() {
        let ds = toy();
        let dims = ModelDims::for_dataset(&ds, 2, 2, vec![0, 0]).unwrap();
        let mut p = PclfParams::uniform(&dims).unwrap();
        p.common_rating.fill(0.0);
        p.common_rating.index_axis_mut(Axis(2), 0).fill(1.0);
        let resp = e_step(&p, &ds, 1.0).unwrap();
        // rating 5 has zero probability under every cluster pair
        assert!(resp.common[0]
            .index_axis(Axis(0), 2)
            .iter()
            .all(|&x| x == 0.25));
        assert_eq!(log_likelihood(&p, &ds).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_bad_beta_and_config() {
        let ds = toy();
        let dims = ModelDims::for_dataset(&ds, 2, 2, vec![1, 1]).unwrap();
        let p = PclfParams::uniform(&dims).unwrap();
        assert!(e_step(&p, &ds, 0.0).is_err());
        assert!(e_step(&p, &ds, 1.5).is_err());
        for schedule in [vec![], vec![0.5], vec![0.9, 0.5, 1.0], vec![0.0, 1.0]] {
            let cfg = TrainConfig {
                beta_schedule: schedule,
                ..TrainConfig::default()
            };
            assert!(cfg.validate().is_err());
        }
        assert!(ModelDims::for_dataset(&ds, 0, 2, vec![1, 1]).is_err());
        assert!(ModelDims::for_dataset(&ds, 2, 2, vec![1]).is_err());
    }

    #[test]
    fn log_likelihood_is_additive_over_triples() {
        let ds = toy();
        let dims = ModelDims::for_dataset(&ds, 2, 2, vec![2, 2]).unwrap();
        let p = init_params(&dims, &ds, 5, 1e-10).unwrap();
        let whole = log_likelihood(&p, &ds).unwrap();
        let (mut a, mut b) = (vec![Vec::new(); 2], vec![Vec::new(); 2]);
        for (j, tr) in ds.pooled().enumerate() {
            if j % 2 == 0 { a[tr.domain].push(*tr) } else { b[tr.domain].push(*tr) }
        }
        let la = log_likelihood(&p, &ds.with_triples(a).unwrap()).unwrap();
        let lb = log_likelihood(&p, &ds.with_triples(b).unwrap()).unwrap();
        assert!((whole - (la + lb)).abs() < 1e-12);
    }

}
