//! Small convolutional baseline over the spatial representation: two 3x3
//! convolutions (16 then 32 maps) with GELU, 2x2 max pooling after the
//! second, and a linear head. Trained with the same hyperparameters as the
//! transformer.

use rand::seq::SliceRandom;

use crate::config::{seeded_rng, RunConfig};
use crate::error::{Error, Result};
use crate::models::vit::channel_positions;
use crate::models::{standardizer_arrays, standardizer_from, Prediction, Standardizer, TrainSet};
use crate::nn::{adam_step, linear, AdamConfig, Parameter, Tape, Tensor, Var};
use crate::spatial;

use super::vit::{EpochLog, TrainLog};

const CONV1_MAPS: usize = 16;
const CONV2_MAPS: usize = 32;
const INIT_STD: f64 = 0.02;

/// Fitted CNN baseline.
pub struct CnnModel {
    pub d_f: usize,
    pub params: Vec<Parameter>,
    pub standardizer: Standardizer,
    pub seed: u64,
    pub log: TrainLog,
    positions: Vec<usize>,
}

fn init_params(d_f: usize, seed: u64) -> Vec<Parameter> {
    let mut rng = seeded_rng(seed, "cnn-init", &[]);
    let g = spatial::GRID_SIZE;
    let flat = CONV2_MAPS * (g / 2) * (g / 2);
    vec![
        Parameter::trunc_normal("conv1.w", &[CONV1_MAPS, d_f, 3, 3], INIT_STD, &mut rng),
        Parameter::zeros("conv1.b", &[CONV1_MAPS]),
        Parameter::trunc_normal("conv2.w", &[CONV2_MAPS, CONV1_MAPS, 3, 3], INIT_STD, &mut rng),
        Parameter::zeros("conv2.b", &[CONV2_MAPS]),
        Parameter::trunc_normal("head.w", &[flat, 2], INIT_STD, &mut rng),
        Parameter::zeros("head.b", &[2]),
    ]
}

fn forward(
    tape: &mut Tape,
    vars: &[Var],
    images: Tensor, // [B, d_f, 9, 9]
    batch: usize,
) -> Result<Var> {
    let g = spatial::GRID_SIZE;
    let x = tape.input(images);
    let c1 = tape.conv2d(x, vars[0], vars[1], 1)?;
    let a1 = tape.gelu(c1);
    let c2 = tape.conv2d(a1, vars[2], vars[3], 1)?;
    let a2 = tape.gelu(c2);
    let pooled = tape.max_pool2(a2)?;
    let flat = tape.reshape(pooled, &[batch, CONV2_MAPS * (g / 2) * (g / 2)])?;
    linear(tape, flat, vars[4], vars[5])
}

impl CnnModel {
    /// Standardized `[d_f, 9, 9]` image (bands as channels) for one raw row.
    fn image_data(&self, row: &[f64]) -> Result<Vec<f64>> {
        let z = self.standardizer.apply(row)?;
        let g = spatial::GRID_SIZE;
        let mut out = vec![0.0; self.d_f * g * g];
        for (c, &cell) in self.positions.iter().enumerate() {
            for b in 0..self.d_f {
                out[b * g * g + cell] = z[c * self.d_f + b];
            }
        }
        Ok(out)
    }

    fn batch_tensor(&self, rows: &[&[f64]]) -> Result<Tensor> {
        let g = spatial::GRID_SIZE;
        let mut data = Vec::with_capacity(rows.len() * self.d_f * g * g);
        for row in rows {
            data.extend(self.image_data(row)?);
        }
        Tensor::from_vec(&[rows.len(), self.d_f, g, g], data)
    }

    pub fn forward_logits(&self, rows: &[&[f64]]) -> Result<Vec<[f64; 2]>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.input(p.value.clone()))
            .collect();
        let logits = forward(&mut tape, &vars, self.batch_tensor(rows)?, rows.len())?;
        let lv = tape.value(logits);
        Ok((0..rows.len())
            .map(|i| [lv.data[i * 2], lv.data[i * 2 + 1]])
            .collect())
    }

    pub fn predict(&self, row: &[f64]) -> Result<Prediction> {
        let logits = self.forward_logits(&[row])?;
        Ok(Prediction::from_margin(logits[0][1] - logits[0][0]))
    }

    pub fn fit(
        config: &RunConfig,
        channel_names: &[String],
        train: &TrainSet<'_>,
        seed: u64,
    ) -> Result<CnnModel> {
        if !train.both_classes_present() {
            return Err(Error::invalid(
                "training set contains a single class; need both trust and distrust",
            ));
        }
        let d_f = config.vit.feature_dim;
        let mut model = CnnModel {
            d_f,
            params: init_params(d_f, seed),
            standardizer: Standardizer::fit(&train.rows)?,
            seed,
            log: TrainLog::default(),
            positions: channel_positions(channel_names)?,
        };
        let labels: Vec<usize> = train.labels.iter().map(|&l| l as usize).collect();
        let images: Vec<Vec<f64>> = train
            .rows
            .iter()
            .map(|r| model.image_data(r))
            .collect::<Result<_>>()?;

        let hyper = &config.hyper;
        let adam = AdamConfig::with_lr(hyper.learning_rate);
        let g = spatial::GRID_SIZE;
        let mut shuffle_rng = seeded_rng(seed, "cnn-shuffle", &[]);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        for _ in 0..hyper.max_epochs {
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            let mut correct = 0usize;
            for chunk in order.chunks(hyper.batch_size.max(1)) {
                let batch = chunk.len();
                let mut data = Vec::with_capacity(batch * d_f * g * g);
                for &i in chunk {
                    data.extend_from_slice(&images[i]);
                }
                let tensor = Tensor::from_vec(&[batch, d_f, g, g], data)?;
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

                let mut tape = Tape::new();
                let vars: Vec<Var> = model
                    .params
                    .iter()
                    .map(|p| tape.input(p.value.clone()))
                    .collect();
                let logits = forward(&mut tape, &vars, tensor, batch)?;
                let loss = tape.cross_entropy(logits, &batch_labels)?;
                epoch_loss += tape.value(loss).data[0] * batch as f64;
                let lv = tape.value(logits);
                for (i, &label) in batch_labels.iter().enumerate() {
                    let predicted = usize::from(lv.data[i * 2 + 1] > lv.data[i * 2]);
                    correct += usize::from(predicted == label);
                }
                let grads = tape.backward(loss)?;
                let grad_list: Vec<Option<Tensor>> =
                    vars.iter().map(|v| grads.try_get(*v).cloned()).collect();
                adam_step(&mut model.params, &grad_list, &adam)?;
            }
            let mean_loss = epoch_loss / labels.len() as f64;
            model.log.epochs.push(EpochLog {
                loss: mean_loss,
                accuracy: correct as f64 / labels.len() as f64,
            });
            if mean_loss < hyper.early_stop_loss {
                model.log.stopped_early = true;
                break;
            }
        }
        Ok(model)
    }

    pub fn to_arrays(&self) -> (serde_json::Value, Vec<(String, Tensor)>) {
        let config = serde_json::json!({ "d_f": self.d_f, "log": self.log });
        let mut arrays = standardizer_arrays(&self.standardizer);
        arrays.push((
            "channel_cells".to_string(),
            Tensor::from_vec(
                &[self.positions.len()],
                self.positions.iter().map(|&p| p as f64).collect(),
            )
            .expect("counted"),
        ));
        for p in &self.params {
            arrays.push((p.name.clone(), p.value.clone()));
        }
        (config, arrays)
    }

    pub fn from_arrays(
        config: &serde_json::Value,
        seed: u64,
        named: Vec<(String, Tensor)>,
    ) -> Result<CnnModel> {
        let d_f = config
            .get("d_f")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::invalid("cnn checkpoint missing d_f"))? as usize;
        let log: TrainLog = config
            .get("log")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::invalid(format!("cnn checkpoint log: {e}")))?
            .unwrap_or_default();
        let standardizer = standardizer_from(&named)?;
        let positions: Vec<usize> = named
            .iter()
            .find(|(n, _)| n == "channel_cells")
            .ok_or_else(|| Error::invalid("cnn checkpoint missing channel_cells"))?
            .1
            .data
            .iter()
            .map(|&v| v as usize)
            .collect();
        let mut params = Vec::new();
        for template in init_params(d_f, 0) {
            let found = named
                .iter()
                .find(|(n, _)| *n == template.name)
                .ok_or_else(|| {
                    Error::invalid(format!("cnn checkpoint missing parameter {}", template.name))
                })?;
            params.push(Parameter::new(template.name.clone(), found.1.clone()));
        }
        Ok(CnnModel {
            d_f,
            params,
            standardizer,
            seed,
            log,
            positions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HyperParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names() -> Vec<String> {
        spatial::build_map().channel_order()
    }

    #[test]
    fn cnn_learns_separable_images() {
        let mut config = RunConfig::default();
        config.hyper = HyperParams {
            max_epochs: 60,
            batch_size: 16,
            learning_rate: 1e-3,
            early_stop_loss: 1e-3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let shift = if i % 2 == 0 { -1.0 } else { 1.0 };
                (0..256).map(|_| rng.gen_range(-0.5..0.5) + shift).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let train = TrainSet::new(refs.clone(), labels.clone()).unwrap();
        let model = CnnModel::fit(&config, &names(), &train, 6, ).unwrap();
        let correct = refs
            .iter()
            .zip(&labels)
            .filter(|(r, &l)| model.predict(r).unwrap().label == l)
            .count();
        assert!(correct >= 38, "{correct}/40");
    }

    #[test]
    fn cnn_deterministic_under_seed() {
        let mut config = RunConfig::default();
        config.hyper = HyperParams {
            max_epochs: 2,
            batch_size: 8,
            ..HyperParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
        let fit = || {
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let train = TrainSet::new(refs, labels.clone()).unwrap();
            CnnModel::fit(&config, &names(), &train, 9).unwrap()
        };
        let a = fit();
        let b = fit();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa.value.data, pb.value.data);
        }
    }
}
