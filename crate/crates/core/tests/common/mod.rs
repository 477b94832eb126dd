#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3, Axis};
use pclf::data::Domain;
use pclf::{CrossDomainDataset, ModelDims, PclfParams, RatingTriple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn rows(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    let mut m = Array2::zeros((r, c));
    for mut row in m.outer_iter_mut() {
        row.assign(&Array1::from(simplex(rng, c)));
    }
    m
}

fn rating_table(rng: &mut ChaCha8Rng, a: usize, b: usize, levels: usize) -> Array3<f64> {
    let mut m = Array3::zeros((a, b, levels));
    for i in 0..a {
        for j in 0..b {
            m.index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), j)
                .assign(&Array1::from(simplex(rng, levels)));
        }
    }
    m
}

/// Strictly positive random parameters of the given shape.
pub fn random_params(dims: &ModelDims, seed: u64) -> PclfParams {
    let mut r = rng(seed);
    let mut p = PclfParams::uniform(dims).unwrap();
    let (k, t) = (dims.user_clusters, dims.common_clusters);
    p.user_prior = Array1::from(simplex(&mut r, k));
    p.user_cond = rows(&mut r, k, dims.total_users());
    p.common_prior = Array1::from(simplex(&mut r, t));
    p.common_cond = rows(&mut r, t, dims.total_items());
    p.common_rating = rating_table(&mut r, k, t, dims.levels);
    for z in 0..dims.n_domains() {
        let l = dims.specific_clusters[z];
        p.specific_prior[z] = Array1::from(simplex(&mut r, l));
        p.specific_cond[z] = rows(&mut r, l, dims.n_items[z]);
        p.specific_rating[z] = rating_table(&mut r, k, l, dims.levels);
    }
    p.check_shapes().unwrap();
    p
}

/// Random dataset with each cell observed with probability `density`
/// (at least one rating per domain).
pub fn random_dataset(
    n_users: &[usize],
    n_items: &[usize],
    levels: u8,
    density: f64,
    seed: u64,
) -> CrossDomainDataset {
    let mut r = rng(seed);
    let domains = n_users
        .iter()
        .zip(n_items)
        .enumerate()
        .map(|(z, (&m, &n))| {
            let mut triples = Vec::new();
            for u in 0..m {
                for v in 0..n {
                    if r.gen_bool(density) {
                        triples.push(RatingTriple {
                            domain: z,
                            user: u,
                            item: v,
                            rating: r.gen_range(1..=levels),
                        });
                    }
                }
            }
            if triples.is_empty() {
                triples.push(RatingTriple {
                    domain: z,
                    user: 0,
                    item: 0,
                    rating: 1,
                });
            }
            Domain {
                user_ids: (0..m).map(|u| format!("d{z}u{u}")).collect(),
                item_ids: (0..n).map(|v| format!("d{z}i{v}")).collect(),
                triples,
            }
        })
        .collect();
    CrossDomainDataset::from_domains(levels, domains).unwrap()
}

pub fn dims(ds: &CrossDomainDataset, k: usize, t: usize, l: Vec<usize>) -> ModelDims {
    ModelDims::for_dataset(ds, k, t, l).unwrap()
}

/// Applies cluster permutations to every table indexed by user clusters,
/// common clusters and the specific clusters of each domain.
pub fn relabel(p: &PclfParams, pk: &[usize], pt: &[usize], pl: &[Vec<usize>]) -> PclfParams {
    let mut q = p.clone();
    for (new, &old) in pk.iter().enumerate() {
        q.user_prior[new] = p.user_prior[old];
        q.user_cond.row_mut(new).assign(&p.user_cond.row(old));
    }
    for (new, &old) in pt.iter().enumerate() {
        q.common_prior[new] = p.common_prior[old];
        q.common_cond.row_mut(new).assign(&p.common_cond.row(old));
    }
    for (nk, &ok) in pk.iter().enumerate() {
        for (nt, &ot) in pt.iter().enumerate() {
            for r in 0..p.dims.levels {
                q.common_rating[[nk, nt, r]] = p.common_rating[[ok, ot, r]];
            }
        }
    }
    for z in 0..p.dims.n_domains() {
        for (nl, &ol) in pl[z].iter().enumerate() {
            q.specific_prior[z][nl] = p.specific_prior[z][ol];
            q.specific_cond[z].row_mut(nl).assign(&p.specific_cond[z].row(ol));
            for (nk, &ok) in pk.iter().enumerate() {
                for r in 0..p.dims.levels {
                    q.specific_rating[z][[nk, nl, r]] = p.specific_rating[z][[ok, ol, r]];
                }
            }
        }
    }
    q
}

/// The same parameters with every specific component removed.
pub fn strip_specific(p: &PclfParams) -> PclfParams {
    let z = p.dims.n_domains();
    let d = ModelDims {
        specific_clusters: vec![0; z],
        ..p.dims.clone()
    };
    let mut q = PclfParams::uniform(&d).unwrap();
    q.user_prior = p.user_prior.clone();
    q.user_cond = p.user_cond.clone();
    q.common_prior = p.common_prior.clone();
    q.common_cond = p.common_cond.clone();
    q.common_rating = p.common_rating.clone();
    q
}

/// Unnormalized joint of one triple under one component, multiplied
/// straight from the tables.
pub fn joint_common(p: &PclfParams, tr: &RatingTriple, k: usize, t: usize) -> f64 {
    let uo: usize = p.dims.n_users[..tr.domain].iter().sum();
    let vo: usize = p.dims.n_items[..tr.domain].iter().sum();
    p.user_prior[k]
        * p.user_cond[[k, uo + tr.user]]
        * p.common_prior[t]
        * p.common_cond[[t, vo + tr.item]]
        * p.common_rating[[k, t, tr.rating as usize - 1]]
}

pub fn joint_specific(p: &PclfParams, tr: &RatingTriple, k: usize, l: usize) -> f64 {
    let z = tr.domain;
    let uo: usize = p.dims.n_users[..z].iter().sum();
    p.user_prior[k]
        * p.user_cond[[k, uo + tr.user]]
        * p.specific_prior[z][l]
        * p.specific_cond[z][[l, tr.item]]
        * p.specific_rating[z][[k, l, tr.rating as usize - 1]]
}

pub fn brute_posterior(
    rows: usize,
    cols: usize,
    beta: f64,
    joint: impl Fn(usize, usize) -> f64,
) -> Vec<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = (0..rows)
        .map(|a| (0..cols).map(|b| joint(a, b).powf(beta)).collect())
        .collect();
    let total: f64 = m.iter().flatten().sum();
    for row in &mut m {
        for x in row {
            *x /= total;
        }
    }
    m
}

/// Σ_r r Σ_{k,c} P(k|u) P(c|v) P(r|k,c), with memberships by Bayes' rule
/// from the priors and conditionals.
pub fn brute_expected_rating(
    user_weight: impl Fn(usize) -> f64,
    item_weight: impl Fn(usize) -> f64,
    rating: impl Fn(usize, usize, usize) -> f64,
    k: usize,
    c: usize,
    levels: usize,
) -> f64 {
    let zu: f64 = (0..k).map(&user_weight).sum();
    let zv: f64 = (0..c).map(&item_weight).sum();
    let mut total = 0.0;
    for r in 0..levels {
        let mut pr = 0.0;
        for a in 0..k {
            for b in 0..c {
                pr += user_weight(a) / zu * item_weight(b) / zv * rating(a, b, r);
            }
        }
        total += (r + 1) as f64 * pr;
    }
    total
}

pub fn brute_common(p: &PclfParams, user: (usize, usize), item: (usize, usize)) -> f64 {
    let uo: usize = p.dims.n_users[..user.0].iter().sum::<usize>() + user.1;
    let vo: usize = p.dims.n_items[..item.0].iter().sum::<usize>() + item.1;
    brute_expected_rating(
        |k| p.user_prior[k] * p.user_cond[[k, uo]],
        |t| p.common_prior[t] * p.common_cond[[t, vo]],
        |k, t, r| p.common_rating[[k, t, r]],
        p.dims.user_clusters,
        p.dims.common_clusters,
        p.dims.levels,
    )
}

pub fn brute_specific(p: &PclfParams, user: (usize, usize), item: (usize, usize)) -> f64 {
    let uo: usize = p.dims.n_users[..user.0].iter().sum::<usize>() + user.1;
    let z = item.0;
    brute_expected_rating(
        |k| p.user_prior[k] * p.user_cond[[k, uo]],
        |l| p.specific_prior[z][l] * p.specific_cond[z][[l, item.1]],
        |k, l, r| p.specific_rating[z][[k, l, r]],
        p.dims.user_clusters,
        p.dims.specific_clusters[z],
        p.dims.levels,
    )
}
