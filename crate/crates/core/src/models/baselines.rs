//! Traditional baselines: Gaussian Naive Bayes, K-Nearest Neighbor, and a
//! linear SVM trained by full-batch subgradient descent.

use serde::Serialize;

use crate::config::BaselineSettings;
use crate::error::{Error, Result};
use crate::models::{standardizer_arrays, standardizer_from, Prediction, Standardizer, TrainSet};
use crate::nn::Tensor;

const NB_VARIANCE_FLOOR: f64 = 1e-9;

/// Gaussian Naive Bayes with per-class feature means and variances,
/// scored in log space.
pub struct NaiveBayes {
    pub standardizer: Standardizer,
    pub log_prior: [f64; 2],
    pub mean: [Vec<f64>; 2],
    pub var: [Vec<f64>; 2],
}

impl NaiveBayes {
    pub fn fit(train: &TrainSet<'_>) -> Result<Self> {
        if !train.both_classes_present() {
            return Err(Error::invalid("naive bayes needs both classes"));
        }
        let standardizer = Standardizer::fit(&train.rows)?;
        let dim = train.rows[0].len();
        let mut count = [0usize; 2];
        let mut mean = [vec![0.0; dim], vec![0.0; dim]];
        let mut var = [vec![0.0; dim], vec![0.0; dim]];
        let rows: Vec<Vec<f64>> = train
            .rows
            .iter()
            .map(|r| standardizer.apply(r))
            .collect::<Result<_>>()?;
        for (row, &label) in rows.iter().zip(&train.labels) {
            let c = label as usize;
            count[c] += 1;
            for (m, v) in mean[c].iter_mut().zip(row) {
                *m += v;
            }
        }
        for c in 0..2 {
            for m in &mut mean[c] {
                *m /= count[c] as f64;
            }
        }
        for (row, &label) in rows.iter().zip(&train.labels) {
            let c = label as usize;
            for (j, v) in row.iter().enumerate() {
                let d = v - mean[c][j];
                var[c][j] += d * d;
            }
        }
        for c in 0..2 {
            for v in &mut var[c] {
                *v = (*v / count[c] as f64).max(NB_VARIANCE_FLOOR);
            }
        }
        let total = (count[0] + count[1]) as f64;
        Ok(NaiveBayes {
            standardizer,
            log_prior: [
                (count[0] as f64 / total).ln(),
                (count[1] as f64 / total).ln(),
            ],
            mean,
            var,
        })
    }

    fn class_log_likelihood(&self, row: &[f64], c: usize) -> f64 {
        let mut ll = self.log_prior[c];
        for (j, v) in row.iter().enumerate() {
            let var = self.var[c][j];
            let d = v - self.mean[c][j];
            ll -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var);
        }
        ll
    }

    /// Score is the log-posterior margin (class 1 minus class 0).
    pub fn predict(&self, row: &[f64]) -> Result<Prediction> {
        let z = self.standardizer.apply(row)?;
        let margin = self.class_log_likelihood(&z, 1) - self.class_log_likelihood(&z, 0);
        Ok(Prediction::from_margin(margin))
    }

    pub fn to_arrays(&self) -> (serde_json::Value, Vec<(String, Tensor)>) {
        let mut arrays = standardizer_arrays(&self.standardizer);
        let dim = self.mean[0].len();
        arrays.push((
            "log_prior".into(),
            Tensor::from_vec(&[2], self.log_prior.to_vec()).expect("counted"),
        ));
        for c in 0..2 {
            arrays.push((
                format!("mean.{c}"),
                Tensor::from_vec(&[dim], self.mean[c].clone()).expect("counted"),
            ));
            arrays.push((
                format!("var.{c}"),
                Tensor::from_vec(&[dim], self.var[c].clone()).expect("counted"),
            ));
        }
        (serde_json::Value::Null, arrays)
    }

    pub fn from_arrays(named: Vec<(String, Tensor)>) -> Result<Self> {
        let get = |name: &str| -> Result<Vec<f64>> {
            named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.data.clone())
                .ok_or_else(|| Error::invalid(format!("checkpoint missing {name}")))
        };
        let lp = get("log_prior")?;
        Ok(NaiveBayes {
            standardizer: standardizer_from(&named)?,
            log_prior: [lp[0], lp[1]],
            mean: [get("mean.0")?, get("mean.1")?],
            var: [get("var.0")?, get("var.1")?],
        })
    }
}

/// K-Nearest Neighbor with Euclidean distance on standardized features.
pub struct Knn {
    pub standardizer: Standardizer,
    pub k: usize,
    pub train: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl Knn {
    pub fn fit(train: &TrainSet<'_>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("knn needs k >= 1"));
        }
        if !train.both_classes_present() {
            return Err(Error::invalid("knn needs both classes"));
        }
        let standardizer = Standardizer::fit(&train.rows)?;
        let rows = train
            .rows
            .iter()
            .map(|r| standardizer.apply(r))
            .collect::<Result<_>>()?;
        Ok(Knn {
            standardizer,
            k,
            train: rows,
            labels: train.labels.clone(),
        })
    }

    /// Score is the trust vote fraction among the k nearest neighbors;
    /// distance ties break deterministically by training index.
    pub fn predict(&self, row: &[f64]) -> Result<Prediction> {
        let z = self.standardizer.apply(row)?;
        let mut dist: Vec<(f64, usize)> = self
            .train
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let d: f64 = t.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        let k = self.k.min(dist.len());
        dist.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let votes: f64 = dist[..k]
            .iter()
            .map(|&(_, i)| f64::from(self.labels[i]))
            .sum();
        Ok(Prediction::from_vote(votes / k as f64))
    }

    pub fn to_arrays(&self) -> (serde_json::Value, Vec<(String, Tensor)>) {
        #[derive(Serialize)]
        struct Cfg {
            k: usize,
        }
        let mut arrays = standardizer_arrays(&self.standardizer);
        let dim = self.train.first().map_or(0, |r| r.len());
        arrays.push((
            "train".into(),
            Tensor::from_vec(
                &[self.train.len(), dim],
                self.train.iter().flatten().copied().collect(),
            )
            .expect("counted"),
        ));
        arrays.push((
            "labels".into(),
            Tensor::from_vec(
                &[self.labels.len()],
                self.labels.iter().map(|&l| f64::from(l)).collect(),
            )
            .expect("counted"),
        ));
        (
            serde_json::to_value(Cfg { k: self.k }).expect("serializable"),
            arrays,
        )
    }

    pub fn from_arrays(config: &serde_json::Value, named: Vec<(String, Tensor)>) -> Result<Self> {
        let k = config
            .get("k")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::invalid("knn checkpoint missing k"))? as usize;
        let train_t = named
            .iter()
            .find(|(n, _)| n == "train")
            .ok_or_else(|| Error::invalid("knn checkpoint missing train matrix"))?;
        let dim = train_t.1.shape[1];
        let train: Vec<Vec<f64>> = train_t.1.data.chunks(dim).map(|c| c.to_vec()).collect();
        let labels = named
            .iter()
            .find(|(n, _)| n == "labels")
            .ok_or_else(|| Error::invalid("knn checkpoint missing labels"))?
            .1
            .data
            .iter()
            .map(|&v| v as u8)
            .collect();
        Ok(Knn {
            standardizer: standardizer_from(&named)?,
            k,
            train,
            labels,
        })
    }
}

/// Linear SVM: hinge loss plus L2 penalty, full-batch subgradient descent.
pub struct LinearSvm {
    pub standardizer: Standardizer,
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearSvm {
    pub fn fit(train: &TrainSet<'_>, settings: &BaselineSettings) -> Result<Self> {
        if !train.both_classes_present() {
            return Err(Error::invalid("svm needs both classes"));
        }
        let standardizer = Standardizer::fit(&train.rows)?;
        let rows: Vec<Vec<f64>> = train
            .rows
            .iter()
            .map(|r| standardizer.apply(r))
            .collect::<Result<_>>()?;
        let y: Vec<f64> = train
            .labels
            .iter()
            .map(|&l| if l == 1 { 1.0 } else { -1.0 })
            .collect();
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let lr = settings.svm_learning_rate;
        let lambda = settings.svm_lambda;
        for _ in 0..settings.svm_iterations {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for (row, &yi) in rows.iter().zip(&y) {
                let margin = yi * (dot(&w, row) + b);
                if margin < 1.0 {
                    for (g, x) in gw.iter_mut().zip(row) {
                        *g -= yi * x;
                    }
                    gb -= yi;
                }
            }
            for (wj, gj) in w.iter_mut().zip(&gw) {
                *wj -= lr * (lambda * *wj + gj / n);
            }
            b -= lr * gb / n;
        }
        Ok(LinearSvm { standardizer, w, b })
    }

    /// Score is the signed margin.
    pub fn predict(&self, row: &[f64]) -> Result<Prediction> {
        let z = self.standardizer.apply(row)?;
        Ok(Prediction::from_margin(dot(&self.w, &z) + self.b))
    }

    pub fn to_arrays(&self) -> (serde_json::Value, Vec<(String, Tensor)>) {
        let mut arrays = standardizer_arrays(&self.standardizer);
        arrays.push((
            "w".into(),
            Tensor::from_vec(&[self.w.len()], self.w.clone()).expect("counted"),
        ));
        arrays.push(("b".into(), Tensor::scalar(self.b)));
        (serde_json::Value::Null, arrays)
    }

    pub fn from_arrays(named: Vec<(String, Tensor)>) -> Result<Self> {
        let w = named
            .iter()
            .find(|(n, _)| n == "w")
            .ok_or_else(|| Error::invalid("svm checkpoint missing w"))?
            .1
            .data
            .clone();
        let b = named
            .iter()
            .find(|(n, _)| n == "b")
            .ok_or_else(|| Error::invalid("svm checkpoint missing b"))?
            .1
            .data[0];
        Ok(LinearSvm {
            standardizer: standardizer_from(&named)?,
            w,
            b,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Two well-separated Gaussian blobs in 8 dimensions.
    fn blobs(n_per_class: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per_class * 2 {
            let label = (i % 2) as u8;
            let mu = if label == 1 { sep } else { -sep };
            rows.push((0..8).map(|_| mu + normal.sample(&mut rng)).collect());
            labels.push(label);
        }
        (rows, labels)
    }

    #[test]
    fn nb_separates_blobs() {
        let (rows, labels) = blobs(100, 3.0, 1);
        let (test_rows, test_labels) = blobs(100, 3.0, 2);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let model = NaiveBayes::fit(&TrainSet::new(refs, labels).unwrap()).unwrap();
        let correct = test_rows
            .iter()
            .zip(&test_labels)
            .filter(|(r, &l)| model.predict(r).unwrap().label == l)
            .count();
        assert!(
            correct as f64 / test_rows.len() as f64 >= 0.99,
            "{correct}/{}",
            test_rows.len()
        );
    }

    #[test]
    fn knn_returns_own_label_with_k1() {
        let (rows, labels) = blobs(20, 1.0, 3);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let model = Knn::fit(&TrainSet::new(refs, labels.clone()).unwrap(), 1).unwrap();
        for (row, &label) in rows.iter().zip(&labels) {
            let p = model.predict(row).unwrap();
            assert_eq!(p.label, label);
        }
    }

    #[test]
    fn knn_vote_fraction_is_score() {
        // 4 neighbors at distance ~1 with labels 1,1,1,0 and k=4: vote 0.75
        let rows = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ];
        let labels = vec![1, 1, 1, 0];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let model = Knn::fit(&TrainSet::new(refs, labels).unwrap(), 4).unwrap();
        let p = model.predict(&[0.0, 0.0]).unwrap();
        assert!((p.score - 0.75).abs() < 1e-12);
        assert_eq!(p.label, 1);
    }

    #[test]
    fn svm_separable_reaches_full_training_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // 2-D separable data with margin
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let label = (i % 2) as u8;
            let base = if label == 1 { 2.0 } else { -2.0 };
            rows.push(vec![
                base + rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]);
            labels.push(label);
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let settings = BaselineSettings::default();
        let model = LinearSvm::fit(&TrainSet::new(refs, labels.clone()).unwrap(), &settings)
            .unwrap();
        let correct = rows
            .iter()
            .zip(&labels)
            .filter(|(r, &l)| model.predict(r).unwrap().label == l)
            .count();
        assert_eq!(correct, rows.len());

        // margin sign agrees with a brute-force perceptron on the same data
        let std_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| model.standardizer.apply(r).unwrap())
            .collect();
        let perceptron = {
            let mut w = vec![0.0; 2];
            let mut b = 0.0;
            for _ in 0..200 {
                let mut changed = false;
                for (row, &l) in std_rows.iter().zip(&labels) {
                    let y = if l == 1 { 1.0 } else { -1.0 };
                    if y * (dot(&w, row) + b) <= 0.0 {
                        for (wj, x) in w.iter_mut().zip(row) {
                            *wj += y * x;
                        }
                        b += y;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            (w, b)
        };
        for row in &std_rows {
            let svm_sign = (dot(&model.w, row) + model.b) > 0.0;
            let per_sign = (dot(&perceptron.0, row) + perceptron.1) > 0.0;
            assert_eq!(svm_sign, per_sign);
        }
    }

    #[test]
    fn predict_before_single_class_fit_rejected() {
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let train = TrainSet::new(refs, vec![1, 1]).unwrap();
        assert!(NaiveBayes::fit(&train).is_err());
        assert!(Knn::fit(&train, 3).is_err());
        assert!(LinearSvm::fit(&train, &BaselineSettings::default()).is_err());
    }
}
