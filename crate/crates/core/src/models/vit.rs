//! The trust Vision Transformer.
//!
//! In spatial mode a slice's `[64 x 4]` standardized features are scattered
//! onto the 9x9 grid and cut into p x p patches; each flattened patch is
//! projected to the model width, a class token is prepended, position
//! embeddings are added, and the tokens run through six pre-norm encoder
//! blocks (attention and MLP branches with residuals). The classification
//! head reads the final class-token row. The no-spatial variant feeds the
//! same encoder with the flat 256-vector cut into 16 tokens of 16 values.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{seeded_rng, RunConfig, VitSettings};
use crate::error::{Error, Result};
use crate::models::{standardizer_arrays, standardizer_from, Prediction, Standardizer, TrainSet};
use crate::nn::{
    adam_step, linear, mlp_block, multi_head_attention, Activation, AdamConfig, AttentionConfig,
    Parameter, Tape, Tensor, Var,
};
use crate::spatial::{self, EegImage};

const LN_EPS: f64 = 1e-8;
const INIT_STD: f64 = 0.02;

/// Resolved encoder geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub tokens: usize,
    pub patch_dim: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub mlp_dim: usize,
    pub n_classes: usize,
}

impl EncoderArch {
    /// Spatial mode: `(m/p)^2` patches of `p^2 * d_f` values.
    pub fn spatial(v: &VitSettings) -> Result<Self> {
        if v.patch == 0 || v.grid % v.patch != 0 {
            return Err(Error::invalid(format!(
                "patch size {} does not divide grid {}",
                v.patch, v.grid
            )));
        }
        let side = v.grid / v.patch;
        let tokens = side * side;
        // m^2 == p^2 * L exactly
        debug_assert_eq!(v.grid * v.grid, v.patch * v.patch * tokens);
        Ok(EncoderArch {
            tokens,
            patch_dim: v.patch * v.patch * v.feature_dim,
            model_dim: v.model_dim,
            n_heads: v.n_heads,
            n_blocks: v.n_blocks,
            mlp_dim: v.mlp_dim,
            n_classes: v.n_classes,
        })
    }

    /// Flat mode: the 64 * d_f vector as `nosp_tokens` equal tokens.
    pub fn flat(v: &VitSettings) -> Result<Self> {
        let total = spatial::N_CHANNELS * v.feature_dim;
        if v.nosp_tokens == 0 || total % v.nosp_tokens != 0 {
            return Err(Error::invalid(format!(
                "{total} features do not split into {} tokens",
                v.nosp_tokens
            )));
        }
        Ok(EncoderArch {
            tokens: v.nosp_tokens,
            patch_dim: total / v.nosp_tokens,
            model_dim: v.model_dim,
            n_heads: v.n_heads,
            n_blocks: v.n_blocks,
            mlp_dim: v.mlp_dim,
            n_classes: v.n_classes,
        })
    }

    pub fn attention(&self) -> Result<AttentionConfig> {
        AttentionConfig::new(self.model_dim, self.n_heads)
    }
}

/// Parameter count: embed + cls + pos + 12 per block + head W/b.
const BLOCK_PARAMS: usize = 12;

/// Initializes all trainable parameters: truncated normal (std 0.02) for
/// projections and embeddings, zeros for biases, ones for norm gains.
pub fn init_params(arch: &EncoderArch, seed: u64) -> Vec<Parameter> {
    let mut rng = seeded_rng(seed, "vit-init", &[]);
    let d = arch.model_dim;
    let mut params = Vec::new();
    params.push(Parameter::trunc_normal(
        "patch_embed.w",
        &[arch.patch_dim, d],
        INIT_STD,
        &mut rng,
    ));
    params.push(Parameter::trunc_normal("cls_token", &[1, d], INIT_STD, &mut rng));
    params.push(Parameter::trunc_normal(
        "pos_embed",
        &[arch.tokens + 1, d],
        INIT_STD,
        &mut rng,
    ));
    for i in 0..arch.n_blocks {
        let p = |suffix: &str| format!("blocks.{i}.{suffix}");
        params.push(Parameter::ones(p("ln1.gain"), &[d]));
        params.push(Parameter::zeros(p("ln1.bias"), &[d]));
        for w in ["attn.w_q", "attn.w_k", "attn.w_v", "attn.w_o"] {
            params.push(Parameter::trunc_normal(p(w), &[d, d], INIT_STD, &mut rng));
        }
        params.push(Parameter::ones(p("ln2.gain"), &[d]));
        params.push(Parameter::zeros(p("ln2.bias"), &[d]));
        params.push(Parameter::trunc_normal(
            p("mlp.w1"),
            &[d, arch.mlp_dim],
            INIT_STD,
            &mut rng,
        ));
        params.push(Parameter::zeros(p("mlp.b1"), &[arch.mlp_dim]));
        params.push(Parameter::trunc_normal(
            p("mlp.w2"),
            &[arch.mlp_dim, d],
            INIT_STD,
            &mut rng,
        ));
        params.push(Parameter::zeros(p("mlp.b2"), &[d]));
    }
    params.push(Parameter::trunc_normal(
        "head.w",
        &[d, arch.n_classes],
        INIT_STD,
        &mut rng,
    ));
    params.push(Parameter::zeros("head.b", &[arch.n_classes]));
    params
}

/// Registers parameter values on a tape, preserving order.
pub fn register_params(tape: &mut Tape, params: &[Parameter]) -> Vec<Var> {
    params.iter().map(|p| tape.input(p.value.clone())).collect()
}

/// Token matrices after the full encoder stack: patch projection, class
/// token, position embeddings, then the pre-norm attention/MLP blocks with
/// residuals. Returns the final `[batch * (L + 1), D]` tokens.
pub fn encoder_tokens(
    tape: &mut Tape,
    arch: &EncoderArch,
    vars: &[Var],
    patch_rows: Tensor,
    batch: usize,
) -> Result<Var> {
    let att = arch.attention()?;
    let x = tape.input(patch_rows);
    let proj = tape.matmul(x, vars[0])?;
    let mut z = tape.assemble_tokens(proj, vars[1], vars[2], batch)?;
    for i in 0..arch.n_blocks {
        let base = 3 + i * BLOCK_PARAMS;
        let normed = tape.layer_norm(z, vars[base], vars[base + 1], LN_EPS)?;
        let attn = multi_head_attention(
            tape,
            normed,
            &att,
            vars[base + 2],
            vars[base + 3],
            vars[base + 4],
            vars[base + 5],
            batch,
        )?;
        z = tape.add(z, attn)?;
        let normed2 = tape.layer_norm(z, vars[base + 6], vars[base + 7], LN_EPS)?;
        let mlp = mlp_block(
            tape,
            normed2,
            vars[base + 8],
            vars[base + 9],
            vars[base + 10],
            vars[base + 11],
            Activation::Gelu,
        )?;
        z = tape.add(z, mlp)?;
        if !tape.value(z).is_finite() {
            return Err(Error::numerical(format!(
                "non-finite activation after encoder block {i}"
            )));
        }
    }
    Ok(z)
}

/// Full forward: encoder stack, then the classification head on each
/// sample's class-token row. Returns `[batch, n_classes]` logits.
pub fn encoder_forward(
    tape: &mut Tape,
    arch: &EncoderArch,
    vars: &[Var],
    patch_rows: Tensor,
    batch: usize,
) -> Result<Var> {
    let z = encoder_tokens(tape, arch, vars, patch_rows, batch)?;
    let head_base = 3 + arch.n_blocks * BLOCK_PARAMS;
    let cls_indices: Vec<usize> = (0..batch).map(|s| s * (arch.tokens + 1)).collect();
    let cls_rows = tape.gather_rows(z, &cls_indices)?;
    linear(tape, cls_rows, vars[head_base], vars[head_base + 1])
}

/// Cuts a `[9 x 9 x d_f]` image into row-major `p x p` patches; each patch is
/// flattened position-major with the `d_f` band values contiguous per cell.
pub fn patchify(image: &EegImage, p: usize) -> Result<Vec<f64>> {
    let m = spatial::GRID_SIZE;
    if p == 0 || m % p != 0 {
        return Err(Error::invalid(format!(
            "patch size {p} does not divide grid {m}"
        )));
    }
    let d_f = image.d_f;
    let side = m / p;
    let mut out = Vec::with_capacity(m * m * d_f);
    for pr in 0..side {
        for pc in 0..side {
            for rl in 0..p {
                for cl in 0..p {
                    for b in 0..d_f {
                        out.push(image.at(pr * p + rl, pc * p + cl, b));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(rows: &[f64], p: usize, d_f: usize) -> Result<EegImage> {
    let m = spatial::GRID_SIZE;
    if p == 0 || m % p != 0 || rows.len() != m * m * d_f {
        return Err(Error::shape(format!(
            "cannot reassemble {} values into a {m}x{m}x{d_f} image with patch {p}",
            rows.len()
        )));
    }
    let side = m / p;
    let mut image = EegImage::zeros(d_f);
    let mut it = rows.iter();
    for pr in 0..side {
        for pc in 0..side {
            for rl in 0..p {
                for cl in 0..p {
                    for b in 0..d_f {
                        image.set(pr * p + rl, pc * p + cl, b, *it.next().expect("counted"));
                    }
                }
            }
        }
    }
    Ok(image)
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// A fitted Vision Transformer (spatial or flat input mode).
pub struct VitModel {
    pub spatial: bool,
    pub settings: VitSettings,
    pub arch: EncoderArch,
    pub params: Vec<Parameter>,
    pub standardizer: Standardizer,
    pub seed: u64,
    pub log: TrainLog,
    /// Channel -> flat grid-cell index (spatial mode only).
    positions: Vec<usize>,
}

impl VitModel {
    /// Standardizes a raw feature row and lays it out as `[L, patch_dim]`
    /// token rows.
    fn token_rows(&self, row: &[f64]) -> Result<Vec<f64>> {
        let z = self.standardizer.apply(row)?;
        if self.spatial {
            let d_f = self.settings.feature_dim;
            let mut image = EegImage::zeros(d_f);
            for (c, cell) in self.positions.iter().enumerate() {
                for b in 0..d_f {
                    image.values[cell * d_f + b] = z[c * d_f + b];
                }
            }
            patchify(&image, self.settings.patch)
        } else {
            Ok(z)
        }
    }

    fn batch_tensor(&self, rows: &[&[f64]]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(rows.len() * self.arch.tokens * self.arch.patch_dim);
        for row in rows {
            data.extend(self.token_rows(row)?);
        }
        Tensor::from_vec(&[rows.len() * self.arch.tokens, self.arch.patch_dim], data)
    }

    /// Logits for a batch of raw feature rows.
    pub fn forward_logits(&self, rows: &[&[f64]]) -> Result<Vec<[f64; 2]>> {
        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &self.params);
        let batch = rows.len();
        let logits = encoder_forward(&mut tape, &self.arch, &vars, self.batch_tensor(rows)?, batch)?;
        let lv = tape.value(logits);
        Ok((0..batch).map(|i| [lv.data[i * 2], lv.data[i * 2 + 1]]).collect())
    }

    pub fn predict(&self, row: &[f64]) -> Result<Prediction> {
        let logits = self.forward_logits(&[row])?;
        Ok(Prediction::from_margin(logits[0][1] - logits[0][0]))
    }

    /// Trains a fresh model. `spatial` selects the input mode.
    pub fn fit(
        config: &RunConfig,
        channel_names: &[String],
        train: &TrainSet<'_>,
        seed: u64,
        spatial: bool,
    ) -> Result<VitModel> {
        if !train.both_classes_present() {
            return Err(Error::invalid(
                "training set contains a single class; need both trust and distrust",
            ));
        }
        let settings = config.vit.clone();
        let arch = if spatial {
            EncoderArch::spatial(&settings)?
        } else {
            EncoderArch::flat(&settings)?
        };
        let positions = channel_positions(channel_names)?;
        let standardizer = Standardizer::fit(&train.rows)?;
        let params = init_params(&arch, seed);
        let mut model = VitModel {
            spatial,
            settings,
            arch,
            params,
            standardizer,
            seed,
            log: TrainLog::default(),
            positions,
        };
        let labels: Vec<usize> = train.labels.iter().map(|&l| l as usize).collect();
        let token_rows: Vec<Vec<f64>> = train
            .rows
            .iter()
            .map(|r| model.token_rows(r))
            .collect::<Result<_>>()?;

        let hyper = &config.hyper;
        let adam = AdamConfig::with_lr(hyper.learning_rate);
        let mut shuffle_rng = seeded_rng(seed, "vit-shuffle", &[]);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        for _ in 0..hyper.max_epochs {
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            let mut correct = 0usize;
            for chunk in order.chunks(hyper.batch_size.max(1)) {
                let batch = chunk.len();
                let mut data =
                    Vec::with_capacity(batch * model.arch.tokens * model.arch.patch_dim);
                for &i in chunk {
                    data.extend_from_slice(&token_rows[i]);
                }
                let tensor = Tensor::from_vec(
                    &[batch * model.arch.tokens, model.arch.patch_dim],
                    data,
                )?;
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

                let mut tape = Tape::new();
                let vars = register_params(&mut tape, &model.params);
                let logits = encoder_forward(&mut tape, &model.arch, &vars, tensor, batch)?;
                let loss = tape.cross_entropy(logits, &batch_labels)?;
                epoch_loss += tape.value(loss).data[0] * batch as f64;

                let lv = tape.value(logits);
                for (i, &label) in batch_labels.iter().enumerate() {
                    let predicted = usize::from(lv.data[i * 2 + 1] > lv.data[i * 2]);
                    correct += usize::from(predicted == label);
                }

                let grads = tape.backward(loss)?;
                let grad_list: Vec<Option<Tensor>> = vars
                    .iter()
                    .map(|v| grads.try_get(*v).cloned())
                    .collect();
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
        let config = serde_json::json!({
            "settings": self.settings,
            "spatial": self.spatial,
            "log": self.log,
        });
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
    ) -> Result<VitModel> {
        let settings: VitSettings = serde_json::from_value(
            config
                .get("settings")
                .cloned()
                .ok_or_else(|| Error::invalid("checkpoint missing settings"))?,
        )
        .map_err(|e| Error::invalid(format!("checkpoint settings: {e}")))?;
        let spatial = config
            .get("spatial")
            .and_then(|v| v.as_bool())
            .ok_or_else(|| Error::invalid("checkpoint missing spatial flag"))?;
        let log: TrainLog = config
            .get("log")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::invalid(format!("checkpoint log: {e}")))?
            .unwrap_or_default();
        let arch = if spatial {
            EncoderArch::spatial(&settings)?
        } else {
            EncoderArch::flat(&settings)?
        };
        let standardizer = standardizer_from(&named)?;
        let positions = named
            .iter()
            .find(|(n, _)| n == "channel_cells")
            .ok_or_else(|| Error::invalid("checkpoint missing channel_cells"))?
            .1
            .data
            .iter()
            .map(|&v| v as usize)
            .collect();
        let expected = init_params(&arch, 0);
        let mut params = Vec::with_capacity(expected.len());
        for template in &expected {
            let found = named
                .iter()
                .find(|(n, _)| *n == template.name)
                .ok_or_else(|| {
                    Error::invalid(format!("checkpoint missing parameter {}", template.name))
                })?;
            if found.1.shape != template.value.shape {
                return Err(Error::shape(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    template.name, found.1.shape, template.value.shape
                )));
            }
            params.push(Parameter::new(template.name.clone(), found.1.clone()));
        }
        Ok(VitModel {
            spatial,
            settings,
            arch,
            params,
            standardizer,
            seed,
            log,
            positions,
        })
    }
}

/// Flat grid-cell index per channel name.
pub(crate) fn channel_positions(channel_names: &[String]) -> Result<Vec<usize>> {
    let map = spatial::build_map();
    channel_names
        .iter()
        .map(|n| {
            map.lookup(n)
                .map(|(r, c)| r * spatial::GRID_SIZE + c)
                .ok_or_else(|| Error::invalid(format!("unknown channel name \"{n}\"")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HyperParams;
    use crate::nn::{grad_check_params, DEFAULT_H};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names() -> Vec<String> {
        spatial::build_map().channel_order()
    }

    fn tiny_settings() -> VitSettings {
        VitSettings {
            model_dim: 8,
            n_heads: 2,
            n_blocks: 1,
            mlp_dim: 16,
            ..VitSettings::default()
        }
    }

    #[test]
    fn patchify_shapes() {
        let image = EegImage::zeros(4);
        let rows = patchify(&image, 3).unwrap();
        assert_eq!(rows.len(), 9 * 36);
        let rows = patchify(&image, 9).unwrap();
        assert_eq!(rows.len(), 324);
        assert!(patchify(&image, 2).is_err());
    }

    #[test]
    fn patchify_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut image = EegImage::zeros(4);
        for v in &mut image.values {
            *v = rng.gen_range(-1.0..1.0);
        }
        for p in [1usize, 3, 9] {
            let rows = patchify(&image, p).unwrap();
            let back = unpatchify(&rows, p, 4).unwrap();
            assert_eq!(back.values, image.values);
        }
    }

    #[test]
    fn z0_has_l_plus_one_rows_and_projection_rows() {
        // with cls and pos zeroed, token rows equal the patch projections
        let settings = tiny_settings();
        let arch = EncoderArch::spatial(&settings).unwrap();
        assert_eq!(arch.tokens, 9);
        assert_eq!(arch.patch_dim, 36);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let patches = tape.input(crate::nn::adam::random_tensor(&[9, 36], &mut rng, 1.0));
        let embed = tape.input(crate::nn::adam::random_tensor(&[36, 8], &mut rng, 0.5));
        let proj = tape.matmul(patches, embed).unwrap();
        let cls = tape.input(Tensor::zeros(&[1, 8]));
        let pos = tape.input(Tensor::zeros(&[10, 8]));
        let z0 = tape.assemble_tokens(proj, cls, pos, 1).unwrap();
        assert_eq!(tape.value(z0).shape, vec![10, 8]);
        for (a, b) in tape.value(z0).data[8..].iter().zip(&tape.value(proj).data) {
            assert_eq!(a, b);
        }
        assert!(tape.value(z0).data[..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_give_head_bias_logits() {
        let config = RunConfig {
            vit: tiny_settings(),
            ..RunConfig::default()
        };
        let arch = EncoderArch::spatial(&config.vit).unwrap();
        let mut params = init_params(&arch, 0);
        for p in params.iter_mut() {
            for v in &mut p.value.data {
                *v = 0.0;
            }
        }
        let head_b = params.len() - 1;
        params[head_b].value.data = vec![0.7, -0.3];

        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &params);
        let patches = Tensor::zeros(&[9, 36]);
        let logits = encoder_forward(&mut tape, &arch, &vars, patches, 1).unwrap();
        let lv = tape.value(logits);
        assert!((lv.data[0] - 0.7).abs() < 1e-12);
        assert!((lv.data[1] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn residual_identity_with_zeroed_branches() {
        // zero attention and MLP weights: the full 6-block encoder passes
        // token values through unchanged up to the (zeroed) head
        let settings = VitSettings {
            model_dim: 8,
            n_heads: 2,
            mlp_dim: 16,
            ..VitSettings::default()
        };
        let arch = EncoderArch::spatial(&settings).unwrap();
        assert_eq!(arch.n_blocks, 6);
        let mut params = init_params(&arch, 3);
        for p in params.iter_mut() {
            if p.name.contains("attn.") || p.name.contains("mlp.") {
                for v in &mut p.value.data {
                    *v = 0.0;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let patches = crate::nn::adam::random_tensor(&[2 * 9, 36], &mut rng, 1.0);

        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &params);
        let z_final = encoder_tokens(&mut tape, &arch, &vars, patches.clone(), 2).unwrap();
        // reconstruct z_0 through the same vars and compare
        let x = tape.input(patches);
        let proj = tape.matmul(x, vars[0]).unwrap();
        let z0 = tape.assemble_tokens(proj, vars[1], vars[2], 2).unwrap();
        let a = tape.value(z_final);
        let b = tape.value(z0);
        assert_eq!(a.shape, b.shape);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn patch_swap_changes_logits() {
        let config = RunConfig {
            vit: tiny_settings(),
            ..RunConfig::default()
        };
        let arch = EncoderArch::spatial(&config.vit).unwrap();
        let params = init_params(&arch, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut patches = crate::nn::adam::random_tensor(&[9, 36], &mut rng, 1.0);

        let run = |patches: Tensor, params: &[Parameter]| {
            let mut tape = Tape::new();
            let vars = register_params(&mut tape, params);
            let logits = encoder_forward(&mut tape, &arch, &vars, patches, 1).unwrap();
            tape.value(logits).data.clone()
        };
        let base = run(patches.clone(), &params);
        // swap patch rows 0 and 4
        for j in 0..36 {
            patches.data.swap(j, 4 * 36 + j);
        }
        let swapped = run(patches, &params);
        let delta: f64 = base
            .iter()
            .zip(&swapped)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(delta > 1e-6, "position information ignored (delta {delta})");
    }

    #[test]
    fn full_vit_grad_check_tiny_config() {
        // one block, two tokens (flat mode), D = 8, H = 2
        let settings = VitSettings {
            model_dim: 8,
            n_heads: 2,
            n_blocks: 1,
            mlp_dim: 12,
            nosp_tokens: 2,
            ..VitSettings::default()
        };
        let arch = EncoderArch::flat(&settings).unwrap();
        assert_eq!(arch.tokens, 2);
        let params = init_params(&arch, 7);
        let points: Vec<Tensor> = params.iter().map(|p| p.value.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let patch_rows = crate::nn::adam::random_tensor(&[2 * 2, arch.patch_dim], &mut rng, 1.0);
        let labels = vec![0usize, 1usize];

        let err = grad_check_params(
            |tape, vars| {
                let logits = encoder_forward(tape, &arch, vars, patch_rows.clone(), 2)?;
                tape.cross_entropy(logits, &labels)
            },
            &points,
            DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn batch_forward_matches_per_sample() {
        let mut config = RunConfig::default();
        config.vit = tiny_settings();
        config.hyper = HyperParams {
            max_epochs: 2,
            batch_size: 8,
            ..HyperParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let labels = vec![0, 1, 0, 1, 0, 1];
        let train = TrainSet::new(refs.clone(), labels).unwrap();
        let model = VitModel::fit(&config, &names(), &train, 1, true).unwrap();

        let batched = model.forward_logits(&refs).unwrap();
        for (i, r) in refs.iter().enumerate() {
            let single = model.forward_logits(&[r]).unwrap();
            assert!((single[0][0] - batched[i][0]).abs() < 1e-6);
            assert!((single[0][1] - batched[i][1]).abs() < 1e-6);
        }
    }

    #[test]
    fn first_epoch_loss_near_ln2_and_determinism() {
        let mut config = RunConfig::default();
        config.vit = tiny_settings();
        config.hyper = HyperParams {
            max_epochs: 3,
            batch_size: 16,
            ..HyperParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rows: Vec<Vec<f64>> = (0..32)
            .map(|_| (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let labels: Vec<u8> = (0..32).map(|i| (i % 2) as u8).collect();
        let train = TrainSet::new(refs, labels).unwrap();
        let m1 = VitModel::fit(&config, &names(), &train, 11, true).unwrap();
        assert!(
            (m1.log.epochs[0].loss - std::f64::consts::LN_2).abs() < 0.05,
            "first-epoch loss {}",
            m1.log.epochs[0].loss
        );
        let train2 = TrainSet::new(
            rows.iter().map(|r| r.as_slice()).collect(),
            (0..32).map(|i| (i % 2) as u8).collect(),
        )
        .unwrap();
        let m2 = VitModel::fit(&config, &names(), &train2, 11, true).unwrap();
        for (a, b) in m1.params.iter().zip(&m2.params) {
            assert_eq!(a.value.data, b.value.data, "parameter {}", a.name);
        }
    }

    #[test]
    fn single_class_training_rejected() {
        let config = RunConfig::default();
        let rows = vec![vec![0.0; 256], vec![1.0; 256]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let train = TrainSet::new(refs, vec![1, 1]).unwrap();
        assert!(VitModel::fit(&config, &names(), &train, 0, true).is_err());
    }

    #[test]
    fn separable_data_reaches_full_training_accuracy() {
        let mut config = RunConfig::default();
        config.vit = VitSettings {
            model_dim: 16,
            n_heads: 4,
            n_blocks: 2,
            mlp_dim: 32,
            ..VitSettings::default()
        };
        config.hyper = HyperParams {
            max_epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            early_stop_loss: 1e-4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                let shift = if i % 2 == 0 { -1.0 } else { 1.0 };
                (0..256)
                    .map(|_| rng.gen_range(-0.5..0.5) + shift)
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let labels: Vec<u8> = (0..64).map(|i| (i % 2) as u8).collect();
        let train = TrainSet::new(refs.clone(), labels.clone()).unwrap();
        let model = VitModel::fit(&config, &names(), &train, 13, true).unwrap();
        assert!(model.log.epochs.len() <= 200);
        let last = model.log.epochs.last().unwrap();
        assert!(
            (last.accuracy - 1.0).abs() < 1e-9,
            "training accuracy {} after {} epochs",
            last.accuracy,
            model.log.epochs.len()
        );
    }

    #[test]
    fn nosp_zero_params_and_permutation_sensitivity() {
        let mut config = RunConfig::default();
        config.vit = tiny_settings();
        let arch = EncoderArch::flat(&config.vit).unwrap();
        assert_eq!(arch.tokens, 16);
        assert_eq!(arch.patch_dim, 16);
        let mut params = init_params(&arch, 20);
        for p in params.iter_mut() {
            for v in &mut p.value.data {
                *v = 0.0;
            }
        }
        let n = params.len();
        params[n - 1].value.data = vec![1.5, -2.5];
        let mut tape = Tape::new();
        let vars = register_params(&mut tape, &params);
        let logits =
            encoder_forward(&mut tape, &arch, &vars, Tensor::zeros(&[16, 16]), 1).unwrap();
        assert_eq!(tape.value(logits).data, vec![1.5, -2.5]);

        // channel permutation changes logits under random params
        let params = init_params(&arch, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let flat: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut permuted = flat.clone();
        permuted.swap(3, 130);
        permuted.swap(40, 200);
        let run = |data: &[f64]| {
            let mut tape = Tape::new();
            let vars = register_params(&mut tape, &params);
            let t = Tensor::from_vec(&[16, 16], data.to_vec()).unwrap();
            let logits = encoder_forward(&mut tape, &arch, &vars, t, 1).unwrap();
            tape.value(logits).data.clone()
        };
        let a = run(&flat);
        let b = run(&permuted);
        assert!((a[0] - b[0]).abs() + (a[1] - b[1]).abs() > 1e-9);
    }
}
