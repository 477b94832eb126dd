//! Planted-cluster data generator.
//!
//! Ratings are drawn from the model's own generative story, so the
//! generating parameters are a ground truth to measure training against.

use ndarray::{Array1, Array2, Array3};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::data::{CrossDomainDataset, Domain, RatingTriple};
use crate::model::{ModelDims, PclfParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub user_clusters: usize,
    pub common_clusters: usize,
    /// Planted specific clusters per domain.
    pub specific_clusters: Vec<usize>,
    pub levels: u8,
    pub n_users: Vec<usize>,
    pub n_items: Vec<usize>,
    /// Probability that a rating comes from the common pattern.
    pub w1: Vec<f64>,
    /// Fraction of each user's row that is observed.
    pub density: f64,
    /// Mass each rating categorical puts on its mode.
    pub rating_peak: f64,
    /// Mass each entity's membership puts on its primary cluster.
    pub membership_purity: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            user_clusters: 4,
            common_clusters: 3,
            specific_clusters: vec![3, 3],
            levels: 5,
            n_users: vec![300, 300],
            n_items: vec![500, 500],
            w1: vec![0.5, 0.5],
            density: 0.05,
            rating_peak: 0.8,
            membership_purity: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn n_domains(&self) -> usize {
        self.n_users.len()
    }

    pub fn validate(&self) -> Result<()> {
        let z = self.n_domains();
        let bad = |msg: String| Err(EvalError::Config(format!("synthetic: {msg}")));
        if z == 0 {
            return bad("no domains".into());
        }
        if self.n_items.len() != z || self.specific_clusters.len() != z || self.w1.len() != z {
            return bad(format!(
                "per-domain lists disagree: n_users {z}, n_items {}, specific_clusters {}, w1 {}",
                self.n_items.len(),
                self.specific_clusters.len(),
                self.w1.len()
            ));
        }
        if self.user_clusters == 0 || self.common_clusters == 0 || self.levels < 2 {
            return bad("need K, T >= 1 and at least 2 levels".into());
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density {} outside (0, 1]", self.density));
        }
        if self.n_users.contains(&0) || self.n_items.contains(&0) {
            return bad("every domain needs users and items (no cells)".into());
        }
        for (zz, &w) in self.w1.iter().enumerate() {
            if !(0.0..=1.0).contains(&w) {
                return bad(format!("w1[{zz}] = {w} outside [0, 1]"));
            }
            if w < 1.0 && self.specific_clusters[zz] == 0 {
                return bad(format!("domain {zz} mixes in a specific pattern but has none"));
            }
        }
        for (name, p) in [("rating_peak", self.rating_peak), ("membership_purity", self.membership_purity)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Output of [`synth_generate`].
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: CrossDomainDataset,
    /// Generating parameters laid out as a model of the generated data.
    pub truth: PclfParams,
    /// Memberships used for sampling: users (pooled), common items (pooled),
    /// specific items per domain.
    pub user_membership: Array2<f64>,
    pub common_membership: Array2<f64>,
    pub specific_membership: Vec<Array2<f64>>,
}

fn peaked(rng: &mut impl Rng, n: usize, peak: f64) -> Array1<f64> {
    if n == 1 {
        return Array1::ones(1);
    }
    let mode = rng.gen_range(0..n);
    Array1::from_shape_fn(n, |i| if i == mode { peak } else { (1.0 - peak) / (n - 1) as f64 })
}

fn draw(rng: &mut impl Rng, p: ndarray::ArrayView1<f64>) -> usize {
    WeightedIndex::new(p.iter().copied())
        .map(|w| w.sample(rng))
        .unwrap_or(0)
}

fn rating_table(rng: &mut impl Rng, k: usize, c: usize, r: usize, peak: f64) -> Array3<f64> {
    let mut t = Array3::zeros((k, c, r));
    for kk in 0..k {
        for cc in 0..c {
            let p = peaked(rng, r, peak);
            t.slice_mut(ndarray::s![kk, cc, ..]).assign(&p);
        }
    }
    t
}

fn membership(rng: &mut impl Rng, n: usize, c: usize, purity: f64) -> Array2<f64> {
    let mut m = Array2::zeros((n, c));
    for mut row in m.outer_iter_mut() {
        row.assign(&peaked(rng, c, purity));
    }
    m
}

/// Turns memberships and per-entity weights into `(prior, cond)` whose
/// Bayes inversion gives back the memberships.
fn prior_and_cond(memb: &Array2<f64>, weight: &[f64]) -> (Array1<f64>, Array2<f64>) {
    let (n, c) = memb.dim();
    let mut cond = Array2::<f64>::zeros((c, n));
    for e in 0..n {
        for k in 0..c {
            cond[[k, e]] = weight[e] * memb[[e, k]];
        }
    }
    let total: f64 = cond.sum();
    let mut prior = Array1::<f64>::zeros(c);
    for (k, mut row) in cond.outer_iter_mut().enumerate() {
        let s = row.sum();
        prior[k] = if total > 0.0 { s / total } else { 0.0 };
        if s > 0.0 {
            row /= s;
        }
    }
    (prior, cond)
}

fn floor_all(p: &mut PclfParams, floor: f64) {
    fn fix(v: &mut [f64], floor: f64) {
        if v.is_empty() {
            return;
        }
        v.iter_mut().for_each(|x| *x += floor);
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
    }
    fix(p.user_prior.as_slice_mut().unwrap(), floor);
    fix(p.common_prior.as_slice_mut().unwrap(), floor);
    for mut row in p.user_cond.outer_iter_mut() {
        fix(row.as_slice_mut().unwrap(), floor);
    }
    for mut row in p.common_cond.outer_iter_mut() {
        fix(row.as_slice_mut().unwrap(), floor);
    }
    for mut lane in p.common_rating.lanes_mut(ndarray::Axis(2)) {
        fix(lane.as_slice_mut().unwrap(), floor);
    }
    for z in 0..p.dims.n_domains() {
        fix(p.specific_prior[z].as_slice_mut().unwrap(), floor);
        for mut row in p.specific_cond[z].outer_iter_mut() {
            fix(row.as_slice_mut().unwrap(), floor);
        }
        for mut lane in p.specific_rating[z].lanes_mut(ndarray::Axis(2)) {
            fix(lane.as_slice_mut().unwrap(), floor);
        }
    }
}

/// Samples a dataset from planted clusters.
///
/// Each user observes `max(1, round(density * N_z))` distinct items. For
/// each observed cell the rating comes from the common pattern with
/// probability `w1[z]`, otherwise from the domain's specific pattern; the
/// user and item clusters are drawn from their membership vectors.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (k, t, r) = (spec.user_clusters, spec.common_clusters, spec.levels as usize);
    let zc = spec.n_domains();
    let total_users: usize = spec.n_users.iter().sum();
    let total_items: usize = spec.n_items.iter().sum();

    let common_rating = rating_table(&mut rng, k, t, r, spec.rating_peak);
    let specific_rating: Vec<Array3<f64>> = spec
        .specific_clusters
        .iter()
        .map(|&l| rating_table(&mut rng, k, l, r, spec.rating_peak))
        .collect();
    let user_m = membership(&mut rng, total_users, k, spec.membership_purity);
    let common_m = membership(&mut rng, total_items, t, spec.membership_purity);
    let specific_m: Vec<Array2<f64>> = spec
        .specific_clusters
        .iter()
        .zip(&spec.n_items)
        .map(|(&l, &n)| {
            if l == 0 {
                Array2::zeros((n, 0))
            } else {
                membership(&mut rng, n, l, spec.membership_purity)
            }
        })
        .collect();

    let mut domains = Vec::with_capacity(zc);
    let (mut uo, mut vo) = (0, 0);
    for z in 0..zc {
        let (m, n) = (spec.n_users[z], spec.n_items[z]);
        let per_user = ((spec.density * n as f64).round() as usize).clamp(1, n);
        let mut triples = Vec::with_capacity(m * per_user);
        for u in 0..m {
            let mut items = rand::seq::index::sample(&mut rng, n, per_user).into_vec();
            items.sort_unstable();
            for v in items {
                let kk = draw(&mut rng, user_m.row(uo + u));
                let dist = if rng.gen::<f64>() < spec.w1[z] {
                    let tt = draw(&mut rng, common_m.row(vo + v));
                    common_rating.slice(ndarray::s![kk, tt, ..]).to_owned()
                } else {
                    let ll = draw(&mut rng, specific_m[z].row(v));
                    specific_rating[z].slice(ndarray::s![kk, ll, ..]).to_owned()
                };
                let rating = draw(&mut rng, dist.view()) as u8 + 1;
                triples.push(RatingTriple {
                    domain: z,
                    user: u,
                    item: v,
                    rating,
                });
            }
        }
        domains.push(Domain {
            user_ids: (0..m).map(|u| format!("d{z}u{u}")).collect(),
            item_ids: (0..n).map(|v| format!("d{z}i{v}")).collect(),
            triples,
        });
        uo += m;
        vo += n;
    }
    let dataset = CrossDomainDataset::from_domains(spec.levels, domains)?;

    // entity weights: ratings seen by each component
    let dims = ModelDims::for_dataset(&dataset, k, t, spec.specific_clusters.clone())?;
    let (uoff, voff) = (dims.user_offsets(), dims.item_offsets());
    let mut user_w = vec![0.0; total_users];
    let mut item_w = vec![0.0; total_items];
    let mut spec_w: Vec<Vec<f64>> = spec.n_items.iter().map(|&n| vec![0.0; n]).collect();
    for tr in dataset.pooled() {
        let z = tr.domain;
        user_w[uoff[z] + tr.user] += if dims.has_specific(z) { 2.0 } else { 1.0 };
        item_w[voff[z] + tr.item] += 1.0;
        spec_w[z][tr.item] += 1.0;
    }
    let (user_prior, user_cond) = prior_and_cond(&user_m, &user_w);
    let (common_prior, common_cond) = prior_and_cond(&common_m, &item_w);
    let (specific_prior, specific_cond): (Vec<_>, Vec<_>) = specific_m
        .iter()
        .zip(&spec_w)
        .map(|(m, w)| prior_and_cond(m, w))
        .unzip();
    let mut truth = PclfParams {
        dims,
        user_prior,
        user_cond,
        common_prior,
        common_cond,
        common_rating,
        specific_prior,
        specific_cond,
        specific_rating,
    };
    floor_all(&mut truth, 1e-10);
    Ok(SyntheticData {
        dataset,
        truth,
        user_membership: user_m,
        common_membership: common_m,
        specific_membership: specific_m,
    })
}
