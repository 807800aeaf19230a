//! Classifiers: the trust Vision Transformer (with and without the spatial
//! representation) and the NB / KNN / SVM / CNN baselines.
//!
//! Every model standardizes features with training-split statistics and
//! emits a `(label, score)` pair per prediction: the label is the score
//! thresholded at 0 (margin models) or 0.5 (vote fractions).

pub mod baselines;
pub mod cnn;
pub mod vit;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint, ArrayInfo, CheckpointHeader};
use crate::nn::Tensor;

/// Model identifiers, as used by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Vit,
    VitNosp,
    Nb,
    Knn,
    Svm,
    Cnn,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "vit" => ModelKind::Vit,
            "vit-nosp" => ModelKind::VitNosp,
            "nb" => ModelKind::Nb,
            "knn" => ModelKind::Knn,
            "svm" => ModelKind::Svm,
            "cnn" => ModelKind::Cnn,
            other => {
                return Err(Error::invalid(format!(
                    "unknown model \"{other}\" (vit, vit-nosp, nb, knn, svm, cnn)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Vit => "vit",
            ModelKind::VitNosp => "vit-nosp",
            ModelKind::Nb => "nb",
            ModelKind::Knn => "knn",
            ModelKind::Svm => "svm",
            ModelKind::Cnn => "cnn",
        }
    }

    pub fn all() -> [ModelKind; 6] {
        [
            ModelKind::Vit,
            ModelKind::VitNosp,
            ModelKind::Nb,
            ModelKind::Knn,
            ModelKind::Svm,
            ModelKind::Cnn,
        ]
    }
}

/// Binary prediction with its continuous score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub score: f64,
}

impl Prediction {
    /// Margin-style score: positive means trust.
    pub fn from_margin(score: f64) -> Self {
        Prediction {
            label: u8::from(score > 0.0),
            score,
        }
    }

    /// Vote-fraction score in [0, 1]; ties go to distrust.
    pub fn from_vote(fraction: f64) -> Self {
        Prediction {
            label: u8::from(fraction > 0.5),
            score: fraction,
        }
    }
}

/// Per-feature standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("cannot standardize an empty training set"));
        }
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            if row.len() != dim {
                return Err(Error::shape("inconsistent feature dimensions".to_string()));
            }
            for (m, v) in mean.iter_mut().zip(*row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut std = vec![0.0; dim];
        for row in rows {
            for (s, (v, m)) in std.iter_mut().zip(row.iter().zip(&mean)) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut std {
            *s = (*s / n).sqrt().max(1e-9);
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::shape(format!(
                "feature row has {} values, standardizer expects {}",
                row.len(),
                self.mean.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

/// A labeled training set of raw (unstandardized) feature rows.
pub struct TrainSet<'a> {
    pub rows: Vec<&'a [f64]>,
    pub labels: Vec<u8>,
}

impl<'a> TrainSet<'a> {
    pub fn new(rows: Vec<&'a [f64]>, labels: Vec<u8>) -> Result<Self> {
        if rows.len() != labels.len() || rows.is_empty() {
            return Err(Error::invalid("training rows and labels must align"));
        }
        Ok(TrainSet { rows, labels })
    }

    pub fn both_classes_present(&self) -> bool {
        self.labels.iter().any(|&l| l == 0) && self.labels.iter().any(|&l| l == 1)
    }
}

/// Any fitted model.
pub enum Fitted {
    Vit(vit::VitModel),
    Nb(baselines::NaiveBayes),
    Knn(baselines::Knn),
    Svm(baselines::LinearSvm),
    Cnn(cnn::CnnModel),
}

impl Fitted {
    pub fn kind(&self) -> ModelKind {
        match self {
            Fitted::Vit(m) => {
                if m.spatial {
                    ModelKind::Vit
                } else {
                    ModelKind::VitNosp
                }
            }
            Fitted::Nb(_) => ModelKind::Nb,
            Fitted::Knn(_) => ModelKind::Knn,
            Fitted::Svm(_) => ModelKind::Svm,
            Fitted::Cnn(_) => ModelKind::Cnn,
        }
    }

    pub fn predict(&self, row: &[f64]) -> Result<Prediction> {
        match self {
            Fitted::Vit(m) => m.predict(row),
            Fitted::Nb(m) => m.predict(row),
            Fitted::Knn(m) => m.predict(row),
            Fitted::Svm(m) => m.predict(row),
            Fitted::Cnn(m) => m.predict(row),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (config, arrays) = match self {
            Fitted::Vit(m) => m.to_arrays(),
            Fitted::Nb(m) => m.to_arrays(),
            Fitted::Knn(m) => m.to_arrays(),
            Fitted::Svm(m) => m.to_arrays(),
            Fitted::Cnn(m) => m.to_arrays(),
        };
        let header = CheckpointHeader {
            model: self.kind().name().to_string(),
            config,
            seed: match self {
                Fitted::Vit(m) => m.seed,
                Fitted::Cnn(m) => m.seed,
                _ => 0,
            },
            arrays: arrays
                .iter()
                .map(|(name, t)| ArrayInfo {
                    name: name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let refs: Vec<&Tensor> = arrays.iter().map(|(_, t)| t).collect();
        save_checkpoint(path, &header, &refs)
    }

    pub fn load(path: &Path) -> Result<Fitted> {
        let (header, tensors) = load_checkpoint(path)?;
        let named: Vec<(String, Tensor)> = header
            .arrays
            .iter()
            .map(|a| a.name.clone())
            .zip(tensors)
            .collect();
        match header.model.as_str() {
            "vit" | "vit-nosp" => Ok(Fitted::Vit(vit::VitModel::from_arrays(
                &header.config,
                header.seed,
                named,
            )?)),
            "nb" => Ok(Fitted::Nb(baselines::NaiveBayes::from_arrays(named)?)),
            "knn" => Ok(Fitted::Knn(baselines::Knn::from_arrays(
                &header.config,
                named,
            )?)),
            "svm" => Ok(Fitted::Svm(baselines::LinearSvm::from_arrays(named)?)),
            "cnn" => Ok(Fitted::Cnn(cnn::CnnModel::from_arrays(
                &header.config,
                header.seed,
                named,
            )?)),
            other => Err(Error::parse(path, format!("unknown model \"{other}\""))),
        }
    }
}

/// Fits a model of the requested kind. `channel_names` is needed by the
/// image-based models (ViT spatial mode and CNN).
pub fn fit(
    kind: ModelKind,
    config: &RunConfig,
    channel_names: &[String],
    train: &TrainSet<'_>,
    seed: u64,
) -> Result<Fitted> {
    match kind {
        ModelKind::Vit => Ok(Fitted::Vit(vit::VitModel::fit(
            config,
            channel_names,
            train,
            seed,
            true,
        )?)),
        ModelKind::VitNosp => Ok(Fitted::Vit(vit::VitModel::fit(
            config,
            channel_names,
            train,
            seed,
            false,
        )?)),
        ModelKind::Nb => Ok(Fitted::Nb(baselines::NaiveBayes::fit(train)?)),
        ModelKind::Knn => Ok(Fitted::Knn(baselines::Knn::fit(
            train,
            config.baselines.knn_k,
        )?)),
        ModelKind::Svm => Ok(Fitted::Svm(baselines::LinearSvm::fit(
            train,
            &config.baselines,
        )?)),
        ModelKind::Cnn => Ok(Fitted::Cnn(cnn::CnnModel::fit(
            config,
            channel_names,
            train,
            seed,
        )?)),
    }
}

/// Serialization helpers shared by the model files.
pub(crate) fn standardizer_arrays(s: &Standardizer) -> Vec<(String, Tensor)> {
    vec![
        (
            "standardizer.mean".to_string(),
            Tensor::from_vec(&[s.mean.len()], s.mean.clone()).expect("counted"),
        ),
        (
            "standardizer.std".to_string(),
            Tensor::from_vec(&[s.std.len()], s.std.clone()).expect("counted"),
        ),
    ]
}

pub(crate) fn standardizer_from(named: &[(String, Tensor)]) -> Result<Standardizer> {
    let mean = named
        .iter()
        .find(|(n, _)| n == "standardizer.mean")
        .ok_or_else(|| Error::invalid("checkpoint missing standardizer.mean"))?;
    let std = named
        .iter()
        .find(|(n, _)| n == "standardizer.std")
        .ok_or_else(|| Error::invalid("checkpoint missing standardizer.std"))?;
    Ok(Standardizer {
        mean: mean.1.data.clone(),
        std: std.1.data.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizer_normalizes_training_rows() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 10.0], vec![3.0, 30.0], vec![5.0, 20.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = Standardizer::fit(&refs).unwrap();
        let mut mean = [0.0; 2];
        let mut var = [0.0; 2];
        for r in &rows {
            let z = s.apply(r).unwrap();
            mean[0] += z[0];
            mean[1] += z[1];
            var[0] += z[0] * z[0];
            var[1] += z[1] * z[1];
        }
        for j in 0..2 {
            assert!((mean[j] / 3.0).abs() < 1e-12);
            assert!((var[j] / 3.0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn prediction_label_consistency() {
        assert_eq!(Prediction::from_margin(0.2).label, 1);
        assert_eq!(Prediction::from_margin(-0.2).label, 0);
        assert_eq!(Prediction::from_margin(0.0).label, 0);
        assert_eq!(Prediction::from_vote(0.6).label, 1);
        assert_eq!(Prediction::from_vote(0.5).label, 0);
    }

    #[test]
    fn model_kind_parse_roundtrip() {
        for kind in ModelKind::all() {
            assert_eq!(ModelKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(ModelKind::parse("mlp").is_err());
    }
}
