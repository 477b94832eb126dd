//! Cluster-level rating matrices, membership vectors and rating prediction.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CrossDomainDataset;
use crate::model::{ModelDims, PclfParams};

#[derive(Debug, Error)]
pub enum InferError {
    #[error("domain {domain} out of range (model has {n_domains})")]
    Domain { domain: usize, n_domains: usize },
    #[error("domain {domain}: user {user} out of range (domain has {n})")]
    User { domain: usize, user: usize, n: usize },
    #[error("domain {domain}: item {item} out of range (domain has {n})")]
    Item { domain: usize, item: usize, n: usize },
    #[error("cross-domain prediction needs different domains, got {0} twice")]
    SameDomain(usize),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = InferError> = std::result::Result<T, E>;

/// Expected rating of each user cluster on each item cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRatingMatrices {
    /// K x T.
    pub common: Array2<f64>,
    /// K x L_z per domain.
    pub specific: Vec<Array2<f64>>,
}

pub fn cluster_rating_matrices(params: &PclfParams) -> ClusterRatingMatrices {
    let levels = Array1::from_iter((1..=params.dims.levels).map(|r| r as f64));
    let expect = |table: &ndarray::Array3<f64>| table.map_axis(Axis(2), |p| p.dot(&levels));
    ClusterRatingMatrices {
        common: expect(&params.common_rating),
        specific: params.specific_rating.iter().map(expect).collect(),
    }
}

/// Posterior cluster memberships of every user and item.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipVectors {
    /// total users x K, pooled user index space.
    pub user: Array2<f64>,
    /// total items x T, pooled item index space.
    pub common_item: Array2<f64>,
    /// N_z x L_z per domain.
    pub specific_item: Vec<Array2<f64>>,
    /// Entities whose vector fell back to uniform.
    pub user_fallback: Vec<bool>,
    pub common_item_fallback: Vec<bool>,
    pub specific_item_fallback: Vec<Vec<bool>>,
}

/// Bayes inversion of `cond` (C x N) and `prior` (C) into N x C memberships.
fn invert(prior: &Array1<f64>, cond: &Array2<f64>) -> (Array2<f64>, Vec<bool>) {
    let (c, n) = cond.dim();
    let mut out = Array2::<f64>::zeros((n, c));
    let mut fallback = vec![false; n];
    for (e, mut row) in out.outer_iter_mut().enumerate() {
        for k in 0..c {
            row[k] = cond[[k, e]] * prior[k];
        }
        let s = row.sum();
        if s > 0.0 && s.is_finite() {
            row /= s;
        } else {
            row.fill(1.0 / c as f64);
            fallback[e] = true;
        }
    }
    (out, fallback)
}

pub fn memberships(params: &PclfParams) -> MembershipVectors {
    let (user, user_fallback) = invert(&params.user_prior, &params.user_cond);
    let (common_item, common_item_fallback) = invert(&params.common_prior, &params.common_cond);
    let (specific_item, specific_item_fallback) = params
        .specific_prior
        .iter()
        .zip(&params.specific_cond)
        .map(|(p, c)| invert(p, c))
        .unzip();
    MembershipVectors {
        user,
        common_item,
        specific_item,
        user_fallback,
        common_item_fallback,
        specific_item_fallback,
    }
}

/// Training rating counts per user and item, pooled index spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub user_ratings: Vec<u32>,
    pub item_ratings: Vec<u32>,
}

impl Support {
    pub fn of(dataset: &CrossDomainDataset) -> Self {
        let (mut uo, mut vo) = (vec![0], vec![0]);
        for d in dataset.domains() {
            uo.push(uo.last().unwrap() + d.n_users());
            vo.push(vo.last().unwrap() + d.n_items());
        }
        let mut user_ratings = vec![0; *uo.last().unwrap()];
        let mut item_ratings = vec![0; *vo.last().unwrap()];
        for t in dataset.pooled() {
            user_ratings[uo[t.domain] + t.user] += 1;
            item_ratings[vo[t.domain] + t.item] += 1;
        }
        Self {
            user_ratings,
            item_ratings,
        }
    }
}

impl MembershipVectors {
    /// Resets every user or item without training ratings to the uniform
    /// vector and flags it.
    pub fn mask_unseen(&mut self, dims: &ModelDims, support: &Support) {
        let vo = dims.item_offsets();
        let reset = |m: &mut Array2<f64>, flags: &mut [bool], counts: &[u32]| {
            let c = m.ncols();
            for (e, mut row) in m.outer_iter_mut().enumerate() {
                if counts.get(e).copied().unwrap_or(0) == 0 {
                    row.fill(1.0 / c as f64);
                    flags[e] = true;
                }
            }
        };
        reset(&mut self.user, &mut self.user_fallback, &support.user_ratings);
        reset(
            &mut self.common_item,
            &mut self.common_item_fallback,
            &support.item_ratings,
        );
        for z in 0..dims.n_domains() {
            let counts = support.item_ratings.get(vo[z]..vo[z + 1]).unwrap_or(&[]);
            reset(
                &mut self.specific_item[z],
                &mut self.specific_item_fallback[z],
                counts,
            );
        }
    }
}

/// Per-domain mixing weights; W2 is always `1 - W1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionWeights {
    w1: Vec<f64>,
}

pub const DEFAULT_W1: f64 = 0.35;

impl PredictionWeights {
    pub fn new(w1: Vec<f64>) -> Result<Self> {
        if let Some(bad) = w1.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(InferError::Weights(format!("W1 = {bad} outside [0, 1]")));
        }
        Ok(Self { w1 })
    }

    pub fn uniform(n_domains: usize, w1: f64) -> Result<Self> {
        Self::new(vec![w1; n_domains])
    }

    pub fn common_only(n_domains: usize) -> Self {
        Self {
            w1: vec![1.0; n_domains],
        }
    }

    pub fn n_domains(&self) -> usize {
        self.w1.len()
    }

    pub fn w1(&self, z: usize) -> f64 {
        self.w1[z]
    }

    pub fn w2(&self, z: usize) -> f64 {
        1.0 - self.w1[z]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w1
    }
}

/// How a user is scored on an item of another domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossDomainMode {
    /// Common rating function only.
    #[default]
    CommonOnly,
    /// Mix in the item domain's specific pattern with that domain's weights.
    ItemDomainWeights,
}

/// Read-only scorer over trained parameters.
#[derive(Debug, Clone)]
pub struct Predictor {
    dims: ModelDims,
    matrices: ClusterRatingMatrices,
    memberships: MembershipVectors,
    user_offsets: Vec<usize>,
    item_offsets: Vec<usize>,
}

fn bilinear(left: ArrayView1<f64>, m: &Array2<f64>, right: ArrayView1<f64>) -> f64 {
    left.dot(&m.dot(&right))
}

impl Predictor {
    pub fn new(params: &PclfParams) -> Self {
        Self::from_parts(
            params.dims.clone(),
            cluster_rating_matrices(params),
            memberships(params),
        )
    }

    /// Like [`Predictor::new`], with users and items that have no training
    /// ratings given uniform memberships.
    pub fn with_support(params: &PclfParams, support: &Support) -> Self {
        let mut mems = memberships(params);
        mems.mask_unseen(&params.dims, support);
        Self::from_parts(params.dims.clone(), cluster_rating_matrices(params), mems)
    }

    pub fn from_parts(
        dims: ModelDims,
        matrices: ClusterRatingMatrices,
        memberships: MembershipVectors,
    ) -> Self {
        Self {
            user_offsets: dims.user_offsets(),
            item_offsets: dims.item_offsets(),
            dims,
            matrices,
            memberships,
        }
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn matrices(&self) -> &ClusterRatingMatrices {
        &self.matrices
    }

    pub fn memberships(&self) -> &MembershipVectors {
        &self.memberships
    }

    fn check_user(&self, z: usize, u: usize) -> Result<()> {
        self.check_domain(z)?;
        if u >= self.dims.n_users[z] {
            return Err(InferError::User {
                domain: z,
                user: u,
                n: self.dims.n_users[z],
            });
        }
        Ok(())
    }

    fn check_item(&self, z: usize, v: usize) -> Result<()> {
        self.check_domain(z)?;
        if v >= self.dims.n_items[z] {
            return Err(InferError::Item {
                domain: z,
                item: v,
                n: self.dims.n_items[z],
            });
        }
        Ok(())
    }

    fn check_domain(&self, z: usize) -> Result<()> {
        if z >= self.dims.n_domains() {
            return Err(InferError::Domain {
                domain: z,
                n_domains: self.dims.n_domains(),
            });
        }
        Ok(())
    }

    fn check_weights(&self, weights: &PredictionWeights) -> Result<()> {
        if weights.n_domains() != self.dims.n_domains() {
            return Err(InferError::Weights(format!(
                "{} weights for {} domains",
                weights.n_domains(),
                self.dims.n_domains()
            )));
        }
        Ok(())
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(1.0, self.dims.levels as f64)
    }

    /// f_Rc: `p_u . S_com . p_vcom^T` for a user of `user_domain` and an item
    /// of `item_domain`.
    pub fn common_score(&self, user_domain: usize, u: usize, item_domain: usize, v: usize) -> Result<f64> {
        self.check_user(user_domain, u)?;
        self.check_item(item_domain, v)?;
        let pu = self.memberships.user.row(self.user_offsets[user_domain] + u);
        let pv = self
            .memberships
            .common_item
            .row(self.item_offsets[item_domain] + v);
        Ok(bilinear(pu, &self.matrices.common, pv))
    }

    /// f_Rs for domain `z`; `None` when the domain has no specific component.
    pub fn specific_score(&self, user_domain: usize, u: usize, z: usize, v: usize) -> Result<Option<f64>> {
        self.check_user(user_domain, u)?;
        self.check_item(z, v)?;
        if !self.dims.has_specific(z) {
            return Ok(None);
        }
        let pu = self.memberships.user.row(self.user_offsets[user_domain] + u);
        let pv = self.memberships.specific_item[z].row(v);
        Ok(Some(bilinear(pu, &self.matrices.specific[z], pv)))
    }

    /// `W1 f_Rc + W2 f_Rs` for a user and item of domain `z`. Domains
    /// without a specific component use `f_Rc` alone.
    pub fn predict(&self, weights: &PredictionWeights, z: usize, u: usize, v: usize) -> Result<f64> {
        self.check_weights(weights)?;
        let common = self.common_score(z, u, z, v)?;
        Ok(self.clamp(match self.specific_score(z, u, z, v)? {
            Some(specific) => weights.w1(z) * common + weights.w2(z) * specific,
            None => common,
        }))
    }

    /// Scores a user of domain `user.0` on an item of domain `item.0`.
    pub fn predict_cross(
        &self,
        user: (usize, usize),
        item: (usize, usize),
        mode: CrossDomainMode,
        weights: &PredictionWeights,
    ) -> Result<f64> {
        let ((a, u), (b, v)) = (user, item);
        if a == b {
            return Err(InferError::SameDomain(a));
        }
        let common = self.common_score(a, u, b, v)?;
        let value = match mode {
            CrossDomainMode::CommonOnly => common,
            CrossDomainMode::ItemDomainWeights => {
                self.check_weights(weights)?;
                match self.specific_score(a, u, b, v)? {
                    Some(s) => weights.w1(b) * common + weights.w2(b) * s,
                    None => common,
                }
            }
        };
        Ok(self.clamp(value))
    }

    /// True when either side of the cell fell back to a uniform membership.
    pub fn uses_fallback(&self, user: (usize, usize), item: (usize, usize)) -> bool {
        let m = &self.memberships;
        let ug = self.user_offsets[user.0] + user.1;
        let vg = self.item_offsets[item.0] + item.1;
        m.user_fallback[ug]
            || m.common_item_fallback[vg]
            || m.specific_item_fallback[item.0]
                .get(item.1)
                .copied()
                .unwrap_or(false)
    }

    /// Streams every prediction of domain `z`, one user row at a time.
    pub fn complete_matrix<F>(&self, weights: &PredictionWeights, z: usize, mut sink: F) -> Result<()>
    where
        F: FnMut(usize, &[f64]) -> std::io::Result<()>,
    {
        self.check_domain(z)?;
        self.check_weights(weights)?;
        let (uo, vo) = (self.user_offsets[z], self.item_offsets[z]);
        let n_items = self.dims.n_items[z];
        let mut row = vec![0.0; n_items];
        for u in 0..self.dims.n_users[z] {
            let pu = self.memberships.user.row(uo + u);
            let left_common = pu.dot(&self.matrices.common);
            let left_specific = self
                .dims
                .has_specific(z)
                .then(|| pu.dot(&self.matrices.specific[z]));
            for (v, out) in row.iter_mut().enumerate() {
                let common = left_common.dot(&self.memberships.common_item.row(vo + v));
                let value = match &left_specific {
                    Some(ls) => {
                        let s = ls.dot(&self.memberships.specific_item[z].row(v));
                        weights.w1(z) * common + weights.w2(z) * s
                    }
                    None => common,
                };
                *out = self.clamp(value);
            }
            sink(u, &row)?;
        }
        Ok(())
    }
}
