//! Self-describing model checkpoints.
//!
//! A checkpoint is one JSON document: a `format` header, the model kind,
//! the layout it was trained on, every parameter array as
//! `{name, shape, data}` in row-major order, the training trace and the seed.

use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{ModelKind, NmfConfig, NmfFactors, NmfFit};
use crate::data::CrossDomainDataset;
use crate::infer::Support;
use crate::model::{ModelDims, PclfParams, TraceEntry, TrainConfig, TrainedModel};

pub const CHECKPOINT_FORMAT: &str = "pclf-model-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },
    #[error("checkpoint has no {0:?} array")]
    Missing(String),
    #[error("array {name:?}: {reason}")]
    Shape { name: String, reason: String },
    #[error("checkpoint of kind {found} cannot be used as {wanted}")]
    Kind { found: ModelKind, wanted: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Entity layout a checkpoint was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub levels: usize,
    pub n_users: Vec<usize>,
    pub n_items: Vec<usize>,
}

impl Layout {
    pub fn of(dataset: &CrossDomainDataset) -> Self {
        Self {
            levels: dataset.levels() as usize,
            n_users: dataset.domains().iter().map(|d| d.n_users()).collect(),
            n_items: dataset.domains().iter().map(|d| d.n_items()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model_kind: ModelKind,
    pub seed: u64,
    pub layout: Layout,
    /// Cluster dims; absent for NMF.
    pub dims: Option<ModelDims>,
    pub train_config: Option<TrainConfig>,
    pub nmf_config: Option<NmfConfig>,
    pub support: Option<Support>,
    pub arrays: Vec<NamedArray>,
    pub trace: Vec<TraceEntry>,
    /// NMF objective per iteration, one list per domain.
    pub nmf_objective: Vec<Vec<f64>>,
}

fn named<D: ndarray::Dimension>(name: impl Into<String>, a: &ndarray::Array<f64, D>) -> NamedArray {
    NamedArray {
        name: name.into(),
        shape: a.shape().to_vec(),
        data: a.iter().copied().collect(),
    }
}

impl Checkpoint {
    pub fn from_mixture(
        kind: ModelKind,
        model: &TrainedModel,
        config: &TrainConfig,
        train: &CrossDomainDataset,
    ) -> Self {
        let p = &model.params;
        let mut arrays = vec![
            named("user_prior", &p.user_prior),
            named("user_cond", &p.user_cond),
            named("common_prior", &p.common_prior),
            named("common_cond", &p.common_cond),
            named("common_rating", &p.common_rating),
        ];
        for z in 0..p.dims.n_domains() {
            arrays.push(named(format!("specific_prior[{z}]"), &p.specific_prior[z]));
            arrays.push(named(format!("specific_cond[{z}]"), &p.specific_cond[z]));
            arrays.push(named(format!("specific_rating[{z}]"), &p.specific_rating[z]));
        }
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            model_kind: kind,
            seed: model.seed,
            layout: Layout::of(train),
            dims: Some(p.dims.clone()),
            train_config: Some(config.clone()),
            nmf_config: None,
            support: Some(Support::of(train)),
            arrays,
            trace: model.trace.clone(),
            nmf_objective: Vec::new(),
        }
    }

    /// One NMF fit per domain.
    pub fn from_nmf(fits: &[NmfFit], config: &NmfConfig, train: &CrossDomainDataset) -> Self {
        let mut arrays = Vec::new();
        for (z, fit) in fits.iter().enumerate() {
            arrays.push(named(format!("nmf_user[{z}]"), &fit.factors.user));
            arrays.push(named(format!("nmf_item[{z}]"), &fit.factors.item));
        }
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            model_kind: ModelKind::Nmf,
            seed: config.seed,
            layout: Layout::of(train),
            dims: None,
            train_config: None,
            nmf_config: Some(config.clone()),
            support: Some(Support::of(train)),
            arrays,
            trace: Vec::new(),
            nmf_objective: fits.iter().map(|f| f.objective.clone()).collect(),
        }
    }

    fn array(&self, name: &str, shape: &[usize]) -> Result<&NamedArray> {
        let a = self
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
        if a.shape != shape {
            return Err(CheckpointError::Shape {
                name: name.into(),
                reason: format!("expected shape {shape:?}, found {:?}", a.shape),
            });
        }
        let n: usize = shape.iter().product();
        if a.data.len() != n {
            return Err(CheckpointError::Shape {
                name: name.into(),
                reason: format!("shape {shape:?} needs {n} values, found {}", a.data.len()),
            });
        }
        Ok(a)
    }

    fn vec1(&self, name: &str, n: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.array(name, &[n])?.data.clone()))
    }

    fn mat2(&self, name: &str, r: usize, c: usize) -> Result<Array2<f64>> {
        let a = self.array(name, &[r, c])?;
        Ok(Array2::from_shape_vec((r, c), a.data.clone()).expect("length checked"))
    }

    fn mat3(&self, name: &str, a0: usize, a1: usize, a2: usize) -> Result<Array3<f64>> {
        let a = self.array(name, &[a0, a1, a2])?;
        Ok(Array3::from_shape_vec((a0, a1, a2), a.data.clone()).expect("length checked"))
    }

    pub fn to_params(&self) -> Result<PclfParams> {
        let Some(d) = &self.dims else {
            return Err(CheckpointError::Kind {
                found: self.model_kind,
                wanted: "a mixture model",
            });
        };
        let (k, t, r) = (d.user_clusters, d.common_clusters, d.levels);
        let mut p = PclfParams {
            dims: d.clone(),
            user_prior: self.vec1("user_prior", k)?,
            user_cond: self.mat2("user_cond", k, d.total_users())?,
            common_prior: self.vec1("common_prior", t)?,
            common_cond: self.mat2("common_cond", t, d.total_items())?,
            common_rating: self.mat3("common_rating", k, t, r)?,
            specific_prior: Vec::new(),
            specific_cond: Vec::new(),
            specific_rating: Vec::new(),
        };
        for z in 0..d.n_domains() {
            let l = d.specific_clusters[z];
            p.specific_prior
                .push(self.vec1(&format!("specific_prior[{z}]"), l)?);
            p.specific_cond
                .push(self.mat2(&format!("specific_cond[{z}]"), l, d.n_items[z])?);
            p.specific_rating
                .push(self.mat3(&format!("specific_rating[{z}]"), k, l, r)?);
        }
        p.check_shapes().map_err(|e| CheckpointError::Shape {
            name: "dims".into(),
            reason: e.to_string(),
        })?;
        Ok(p)
    }

    pub fn to_nmf(&self) -> Result<Vec<NmfFactors>> {
        let Some(cfg) = &self.nmf_config else {
            return Err(CheckpointError::Kind {
                found: self.model_kind,
                wanted: "an NMF model",
            });
        };
        (0..self.layout.n_users.len())
            .map(|z| {
                Ok(NmfFactors {
                    user: self.mat2(&format!("nmf_user[{z}]"), self.layout.n_users[z], cfg.rank)?,
                    item: self.mat2(&format!("nmf_item[{z}]"), self.layout.n_items[z], cfg.rank)?,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a checkpoint, checking the format header before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format")
            .and_then(|f| f.as_str())
            .unwrap_or("<missing>");
        if found != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Version {
                expected: CHECKPOINT_FORMAT.to_string(),
                found: found.to_string(),
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{nmf_train, SparseRatings};
    use crate::data::{build_dataset, RawRating, ScaleSpec};
    use crate::model::train;

    fn ds() -> CrossDomainDataset {
        let d = |n: usize| {
            (
                (0..n)
                    .map(|i| RawRating::new(format!("u{}", i % 3), format!("i{i}"), (i % 5 + 1) as f64))
                    .collect(),
                ScaleSpec::identity(5),
            )
        };
        build_dataset(vec![d(7), d(5)]).unwrap()
    }

    #[test]
    fn mixture_round_trip() {
        let ds = ds();
        let dims = ModelDims::for_dataset(&ds, 2, 3, vec![2, 0]).unwrap();
        let cfg = TrainConfig {
            max_iters_per_beta: 3,
            ..TrainConfig::default()
        };
        let model = train(&ds, &dims, &cfg).unwrap();
        let ck = Checkpoint::from_mixture(ModelKind::Pclf, &model, &cfg, &ds);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_params().unwrap(), model.params);
        assert_eq!(back.support.as_ref().unwrap().user_ratings, vec![3, 2, 2, 2, 2, 1]);
        assert!(back.to_nmf().is_err());
    }

    #[test]
    fn nmf_round_trip() {
        let ds = ds();
        let cfg = NmfConfig {
            rank: 2,
            iters: 5,
            ..NmfConfig::default()
        };
        let fits: Vec<_> = (0..2)
            .map(|z| nmf_train(&SparseRatings::from_domain(&ds, z).unwrap(), &cfg).unwrap())
            .collect();
        let ck = Checkpoint::from_nmf(&fits, &cfg, &ds);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        let factors = back.to_nmf().unwrap();
        assert_eq!(factors[1], fits[1].factors);
        assert!(back.to_params().is_err());
    }

    #[test]
    fn version_and_shape_errors() {
        let err = Checkpoint::from_json(r#"{"format": "pclf-model-v0"}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pclf-model-v1") && msg.contains("pclf-model-v0"), "{msg}");
        assert!(matches!(
            Checkpoint::from_json("{not json"),
            Err(CheckpointError::Json(_))
        ));

        let ds = ds();
        let dims = ModelDims::for_dataset(&ds, 1, 1, vec![1, 1]).unwrap();
        let cfg = TrainConfig::plain_em();
        let model = train(&ds, &dims, &cfg).unwrap();
        let mut ck = Checkpoint::from_mixture(ModelKind::Pclf, &model, &cfg, &ds);
        ck.arrays[0].shape = vec![2];
        assert!(matches!(ck.to_params(), Err(CheckpointError::Shape { .. })));
        ck.arrays.remove(0);
        assert!(matches!(ck.to_params(), Err(CheckpointError::Missing(_))));
    }
}
