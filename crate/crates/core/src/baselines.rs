//! Comparison models: the single-domain mixture (`fmm`), the pooled
//! common-pattern-only model (`rmgm-like`), and masked NMF.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CrossDomainDataset;
use crate::model::{self, ModelDims, ModelError, TrainConfig, TrainedModel};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("{model} needs {expected}, dataset has {found} domain(s)")]
    DomainCount {
        model: ModelKind,
        expected: &'static str,
        found: usize,
    },
    #[error("nmf: {0}")]
    Nmf(String),
    #[error("index ({u}, {v}) outside {rows}x{cols} factors")]
    Index {
        u: usize,
        v: usize,
        rows: usize,
        cols: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = BaselineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "pclf")]
    Pclf,
    #[serde(rename = "fmm")]
    Fmm,
    #[serde(rename = "rmgm-like")]
    RmgmLike,
    #[serde(rename = "nmf")]
    Nmf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::Pclf, Self::RmgmLike, Self::Fmm, Self::Nmf];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pclf => "pclf",
            Self::Fmm => "fmm",
            Self::RmgmLike => "rmgm-like",
            Self::Nmf => "nmf",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model kind {s:?} (expected pclf, fmm, rmgm-like or nmf)"))
    }
}

/// Single-domain mixture: the common component alone on a one-domain
/// dataset.
pub fn fmm_train(
    dataset: &CrossDomainDataset,
    user_clusters: usize,
    item_clusters: usize,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    if dataset.n_domains() != 1 {
        return Err(BaselineError::DomainCount {
            model: ModelKind::Fmm,
            expected: "exactly one domain",
            found: dataset.n_domains(),
        });
    }
    let dims = ModelDims::for_dataset(dataset, user_clusters, item_clusters, vec![0])?;
    Ok(model::train(dataset, &dims, config)?)
}

/// Pooled model with every specific component removed.
pub fn common_only_train(
    dataset: &CrossDomainDataset,
    user_clusters: usize,
    common_clusters: usize,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    if dataset.n_domains() < 2 {
        return Err(BaselineError::DomainCount {
            model: ModelKind::RmgmLike,
            expected: "at least two domains",
            found: dataset.n_domains(),
        });
    }
    let dims = ModelDims::for_dataset(
        dataset,
        user_clusters,
        common_clusters,
        vec![0; dataset.n_domains()],
    )?;
    Ok(model::train(dataset, &dims, config)?)
}

/// Observed entries of one rating matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRatings {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseRatings {
    pub fn from_domain(dataset: &CrossDomainDataset, z: usize) -> Result<Self> {
        let d = dataset
            .domain(z)
            .map_err(|e| BaselineError::Nmf(e.to_string()))?;
        Ok(Self {
            n_rows: d.n_users(),
            n_cols: d.n_items(),
            entries: d
                .triples
                .iter()
                .map(|t| (t.user, t.item, t.rating as f64))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmfConfig {
    pub rank: usize,
    pub iters: usize,
    pub seed: u64,
    /// Treat missing cells as observed zeros instead of masking them.
    pub zero_fill: bool,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            rank: 20,
            iters: 200,
            seed: 0,
            zero_fill: false,
        }
    }
}

/// `X ~ U V^T` with non-negative factors.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfFactors {
    /// M x d
    pub user: Array2<f64>,
    /// N x d
    pub item: Array2<f64>,
}

impl NmfFactors {
    pub fn rank(&self) -> usize {
        self.user.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfFit {
    pub factors: NmfFactors,
    /// Squared-error objective before the first update and after each one.
    pub objective: Vec<f64>,
}

fn nmf_objective(m: &SparseRatings, f: &NmfFactors, zero_fill: bool) -> f64 {
    let mut obj = 0.0;
    for &(u, v, x) in &m.entries {
        let p = f.user.row(u).dot(&f.item.row(v));
        obj += if zero_fill { x * x - 2.0 * x * p } else { (x - p) * (x - p) };
    }
    if zero_fill {
        // sum over all cells of (u.v)^2 = tr(U^T U V^T V)
        let uu = f.user.t().dot(&f.user);
        let vv = f.item.t().dot(&f.item);
        obj += (&uu * &vv).sum();
    }
    obj
}

/// Lee-Seung multiplicative updates on the squared error, restricted to
/// observed cells unless `zero_fill` is set.
pub fn nmf_train(matrix: &SparseRatings, config: &NmfConfig) -> Result<NmfFit> {
    if config.rank == 0 {
        return Err(BaselineError::Nmf("rank must be >= 1".into()));
    }
    if matrix.entries.is_empty() {
        return Err(BaselineError::Nmf("no observed entries".into()));
    }
    let d = config.rank;
    let mean = matrix.entries.iter().map(|e| e.2).sum::<f64>() / matrix.entries.len() as f64;
    let scale = (mean.max(f64::MIN_POSITIVE) / d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init = |n: usize| {
        Array2::from_shape_fn((n, d), |_| scale * (0.5 + rng.gen::<f64>()))
    };
    let mut f = NmfFactors {
        user: init(matrix.n_rows),
        item: init(matrix.n_cols),
    };
    let mut objective = Vec::with_capacity(config.iters + 1);
    objective.push(nmf_objective(matrix, &f, config.zero_fill));
    for _ in 0..config.iters {
        update_side(matrix, &mut f, true, config.zero_fill);
        update_side(matrix, &mut f, false, config.zero_fill);
        objective.push(nmf_objective(matrix, &f, config.zero_fill));
    }
    Ok(NmfFit {
        factors: f,
        objective,
    })
}

/// One multiplicative update of `U` (`rows == true`) or `V`.
fn update_side(m: &SparseRatings, f: &mut NmfFactors, rows: bool, zero_fill: bool) {
    let (target, other) = if rows {
        (&f.user, &f.item)
    } else {
        (&f.item, &f.user)
    };
    let mut num = Array2::<f64>::zeros(target.dim());
    let mut den = Array2::<f64>::zeros(target.dim());
    for &(u, v, x) in &m.entries {
        let (a, b) = if rows { (u, v) } else { (v, u) };
        let o = other.row(b);
        num.row_mut(a).scaled_add(x, &o);
        if !zero_fill {
            let p = target.row(a).dot(&o);
            den.row_mut(a).scaled_add(p, &o);
        }
    }
    if zero_fill {
        den = target.dot(&other.t().dot(other));
    }
    let target = if rows { &mut f.user } else { &mut f.item };
    ndarray::Zip::from(target).and(&num).and(&den).for_each(|t, &n, &d| {
        if d > 0.0 {
            *t *= n / d;
        }
    });
}

/// Dot product of the factor rows, clamped to `[1, levels]`.
pub fn nmf_predict(factors: &NmfFactors, u: usize, v: usize, levels: usize) -> Result<f64> {
    if u >= factors.user.nrows() || v >= factors.item.nrows() {
        return Err(BaselineError::Index {
            u,
            v,
            rows: factors.user.nrows(),
            cols: factors.item.nrows(),
        });
    }
    Ok(factors
        .user
        .row(u)
        .dot(&factors.item.row(v))
        .clamp(1.0, levels as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, RawRating, ScaleSpec};

    fn two_domains() -> CrossDomainDataset {
        let d = |tag: &str| {
            (
                (0..4)
                    .flat_map(|u| {
                        (0..3).map(move |v| {
                            RawRating::new(format!("{u}"), format!("{v}"), ((u + v) % 5 + 1) as f64)
                        })
                    })
                    .map(|mut r| {
                        r.item_id.push_str(tag);
                        r
                    })
                    .collect(),
                ScaleSpec::identity(5),
            )
        };
        build_dataset(vec![d("a"), d("b")]).unwrap()
    }

    #[test]
    fn model_kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("rmgm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn domain_count_preconditions() {
        let ds = two_domains();
        let cfg = TrainConfig::plain_em();
        assert!(matches!(
            fmm_train(&ds, 2, 2, &cfg),
            Err(BaselineError::DomainCount { model: ModelKind::Fmm, .. })
        ));
        let single = ds.single_domain(0).unwrap();
        assert!(common_only_train(&single, 2, 2, &cfg).is_err());
        let m = common_only_train(&ds, 2, 2, &cfg).unwrap();
        assert_eq!(m.params.dims.specific_clusters, vec![0, 0]);
        assert!(m.params.max_normalization_error() < 1e-12);
    }

    #[test]
    fn nmf_fits_constant_rank_one() {
        let m = SparseRatings {
            n_rows: 3,
            n_cols: 4,
            entries: (0..3)
                .flat_map(|u| (0..4).map(move |v| (u, v, 4.0)))
                .collect(),
        };
        let fit = nmf_train(
            &m,
            &NmfConfig {
                rank: 1,
                ..NmfConfig::default()
            },
        )
        .unwrap();
        for u in 0..3 {
            for v in 0..4 {
                assert!((nmf_predict(&fit.factors, u, v, 5).unwrap() - 4.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn nmf_objective_never_increases() {
        for zero_fill in [false, true] {
            let m = SparseRatings::from_domain(&two_domains(), 1).unwrap();
            let fit = nmf_train(
                &m,
                &NmfConfig {
                    rank: 3,
                    iters: 100,
                    seed: 4,
                    zero_fill,
                },
            )
            .unwrap();
            for w in fit.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn nmf_missing_cell_prediction_is_clamped() {
        let mut entries: Vec<_> = (0..3)
            .flat_map(|u| (0..3).map(move |v| (u, v, ((u * 3 + v) % 5 + 1) as f64)))
            .collect();
        entries.retain(|&(u, v, _)| (u, v) != (2, 2));
        let m = SparseRatings {
            n_rows: 3,
            n_cols: 3,
            entries,
        };
        let fit = nmf_train(
            &m,
            &NmfConfig {
                rank: 2,
                iters: 2000,
                ..NmfConfig::default()
            },
        )
        .unwrap();
        let x = nmf_predict(&fit.factors, 2, 2, 5).unwrap();
        assert!((1.0..=5.0).contains(&x));
    }

    #[test]
    fn nmf_predict_clamps_and_checks_bounds() {
        let f = NmfFactors {
            user: ndarray::arr2(&[[0.0, 0.0], [2.0, 0.0], [3.0, 1.0]]),
            item: ndarray::arr2(&[[2.0, 0.0], [2.0, 1.3]]),
        };
        assert_eq!(nmf_predict(&f, 0, 0, 5).unwrap(), 1.0);
        assert_eq!(nmf_predict(&f, 1, 0, 5).unwrap(), 4.0);
        // 3*2 + 1*1.3 = 7.3
        assert_eq!(nmf_predict(&f, 2, 1, 5).unwrap(), 5.0);
        assert!(nmf_predict(&f, 3, 0, 5).is_err());
        assert!(nmf_train(
            &SparseRatings {
                n_rows: 1,
                n_cols: 1,
                entries: vec![]
            },
            &NmfConfig::default()
        )
        .is_err());
    }
}
