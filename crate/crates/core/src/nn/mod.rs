//! Minimal dense tensor math with reverse-mode automatic differentiation:
//! enough for the transformer and the small CNN, plus Adam and a
//! finite-difference gradient checker.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, Parameter};
pub use gradcheck::{grad_check, grad_check_params, DEFAULT_H};
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Attention geometry: model width and head count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub n_heads: usize,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || model_dim % n_heads != 0 {
            return Err(Error::invalid(format!(
                "model_dim {model_dim} not divisible by {n_heads} heads"
            )));
        }
        Ok(AttentionConfig {
            model_dim,
            n_heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }
}

/// `y = x W + b`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Multi-head self-attention over `z` (`[batch * tokens, D]`): per head,
/// scaled dot-product attention on column slices of the Q/K/V projections,
/// heads concatenated and projected by `w_o`.
pub fn multi_head_attention(
    tape: &mut Tape,
    z: Var,
    cfg: &AttentionConfig,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    w_o: Var,
    batch: usize,
) -> Result<Var> {
    let q = tape.matmul(z, w_q)?;
    let k = tape.matmul(z, w_k)?;
    let v = tape.matmul(z, w_v)?;
    let dh = cfg.head_dim();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        heads.push(tape.attention_core(qh, kh, vh, batch)?);
    }
    let concat = tape.concat_cols(&heads)?;
    tape.matmul(concat, w_o)
}

/// Two-layer MLP applied per row: `W2 act(W1 z + b1) + b2`.
pub fn mlp_block(
    tape: &mut Tape,
    z: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    act: Activation,
) -> Result<Var> {
    let hidden = linear(tape, z, w1, b1)?;
    let activated = tape.activation(hidden, act);
    linear(tape, activated, w2, b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::adam::random_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn linear_identity_and_hand_case() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = tape.input(eye(2));
        let b0 = tape.input(Tensor::zeros(&[2]));
        let y = linear(&mut tape, x, w, b0).unwrap();
        assert_eq!(tape.value(y).data, vec![1.0, 2.0]);

        let b = tape.input(Tensor::from_vec(&[2], vec![3.0, 3.0]).unwrap());
        let y = linear(&mut tape, x, w, b).unwrap();
        assert_eq!(tape.value(y).data, vec![4.0, 5.0]);
    }

    #[test]
    fn linear_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[1, 3]));
        let w = tape.input(Tensor::zeros(&[2, 2]));
        assert!(tape.matmul(x, w).is_err());
    }

    #[test]
    fn linear_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[3, 4], &mut rng, 1.0);
        let w = random_tensor(&[4, 2], &mut rng, 1.0);
        let b = random_tensor(&[2], &mut rng, 1.0);
        let err = grad_check_params(
            |tape, vars| {
                let y = linear(tape, vars[0], vars[1], vars[2])?;
                let sq = tape.mul(y, y)?;
                Ok(tape.sum_all(sq))
            },
            &[x, w, b],
            DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn layer_norm_hand_cases() {
        let mut tape = Tape::new();
        let gain = tape.input(Tensor::filled(&[2], 1.0));
        let bias = tape.input(Tensor::zeros(&[2]));
        // constant row collapses to bias
        let x = tape.input(Tensor::from_vec(&[1, 2], vec![4.0, 4.0]).unwrap());
        let y = tape.layer_norm(x, gain, bias, 1e-8).unwrap();
        assert!(tape.value(y).data.iter().all(|v| v.abs() < 1e-3));
        // [1, 3]: mean 2, population sd 1
        let x = tape.input(Tensor::from_vec(&[1, 2], vec![1.0, 3.0]).unwrap());
        let y = tape.layer_norm(x, gain, bias, 0.0).unwrap();
        let out = &tape.value(y).data;
        assert!((out[0] + 1.0).abs() < 1e-9 && (out[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let d = 16;
        let x = tape.input(random_tensor(&[4, d], &mut rng, 3.0));
        let gain = tape.input(Tensor::filled(&[d], 1.0));
        let bias = tape.input(Tensor::zeros(&[d]));
        let y = tape.layer_norm(x, gain, bias, 1e-10).unwrap();
        for r in 0..4 {
            let row = &tape.value(y).data[r * d..(r + 1) * d];
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&[3, 6], &mut rng, 2.0);
        let gain = random_tensor(&[6], &mut rng, 1.0);
        let bias = random_tensor(&[6], &mut rng, 1.0);
        let err = grad_check_params(
            |tape, vars| {
                let y = tape.layer_norm(vars[0], vars[1], vars[2], 1e-8)?;
                let sq = tape.mul(y, y)?;
                Ok(tape.sum_all(sq))
            },
            &[x, gain, bias],
            DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn softmax_basics() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(&[2, 2], vec![0.0, 0.0, 1000.0, 0.0]).unwrap());
        let y = tape.softmax(x).unwrap();
        let out = &tape.value(y).data;
        assert!((out[0] - 0.5).abs() < 1e-12 && (out[1] - 0.5).abs() < 1e-12);
        assert!(out[2] > 0.999999 && out[3] < 1e-6);
        assert!(out.iter().all(|v| v.is_finite()));
        // shift invariance
        let x1 = tape.input(Tensor::from_vec(&[1, 3], vec![0.3, -1.0, 2.0]).unwrap());
        let x2 = tape.input(Tensor::from_vec(&[1, 3], vec![10.3, 9.0, 12.0]).unwrap());
        let y1 = tape.softmax(x1).unwrap();
        let y2 = tape.softmax(x2).unwrap();
        for (a, b) in tape.value(y1).data.iter().zip(&tape.value(y2).data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let x = tape.input(random_tensor(&[5, 7], &mut rng, 4.0));
        let y = tape.softmax(x).unwrap();
        for r in 0..5 {
            let s: f64 = tape.value(y).data[r * 7..(r + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&[2, 4], &mut rng, 2.0);
        let weights = random_tensor(&[2, 4], &mut rng, 1.0);
        let err = grad_check_params(
            |tape, vars| {
                let y = tape.softmax(vars[0])?;
                let w = tape.mul(y, vars[1])?;
                Ok(tape.sum_all(w))
            },
            &[x, weights],
            DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn cross_entropy_cases_and_grad() {
        let mut tape = Tape::new();
        let logits = tape.input(Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap());
        let loss = tape.cross_entropy(logits, &[1]).unwrap();
        assert!((tape.value(loss).data[0] - std::f64::consts::LN_2).abs() < 1e-12);

        let logits = tape.input(Tensor::from_vec(&[1, 2], vec![20.0, -20.0]).unwrap());
        let loss = tape.cross_entropy(logits, &[0]).unwrap();
        assert!(tape.value(loss).data[0] < 1e-9);

        let logits = tape.input(Tensor::zeros(&[1, 2]));
        assert!(tape.cross_entropy(logits, &[2]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&[4, 2], &mut rng, 2.0);
        let err = grad_check(
            |tape, v| tape.cross_entropy(v, &[0, 1, 1, 0]),
            &x,
            DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn single_token_attention_is_identity_weighting() {
        // with one token the attention matrix is [[1.0]], so the output is
        // exactly the V path through W_o
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = AttentionConfig::new(6, 2).unwrap();
        let mut tape = Tape::new();
        let z = tape.input(random_tensor(&[1, 6], &mut rng, 1.0));
        let wq = tape.input(random_tensor(&[6, 6], &mut rng, 1.0));
        let wk = tape.input(random_tensor(&[6, 6], &mut rng, 1.0));
        let wv = tape.input(random_tensor(&[6, 6], &mut rng, 1.0));
        let wo = tape.input(random_tensor(&[6, 6], &mut rng, 1.0));
        let out = multi_head_attention(&mut tape, z, &cfg, wq, wk, wv, wo, 1).unwrap();
        let v = tape.matmul(z, wv).unwrap();
        let expected = tape.matmul(v, wo).unwrap();
        for (a, b) in tape.value(out).data.iter().zip(&tape.value(expected).data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        // with V = all-ones (single column), output = row sums of the
        // attention matrix = 1
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::new();
        let q = tape.input(random_tensor(&[6, 1], &mut rng, 2.0));
        let k = tape.input(random_tensor(&[6, 1], &mut rng, 2.0));
        let v = tape.input(Tensor::filled(&[6, 1], 1.0));
        let out = tape.attention_core(q, k, v, 2).unwrap();
        for x in &tape.value(out).data {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = AttentionConfig::new(8, 2).unwrap();
        let tokens = 5;
        let z = random_tensor(&[tokens, 8], &mut rng, 1.0);
        let wq = random_tensor(&[8, 8], &mut rng, 0.5);
        let wk = random_tensor(&[8, 8], &mut rng, 0.5);
        let wv = random_tensor(&[8, 8], &mut rng, 0.5);
        let wo = random_tensor(&[8, 8], &mut rng, 0.5);

        let run = |input: &Tensor| {
            let mut tape = Tape::new();
            let zv = tape.input(input.clone());
            let q = tape.input(wq.clone());
            let k = tape.input(wk.clone());
            let v = tape.input(wv.clone());
            let o = tape.input(wo.clone());
            let out = multi_head_attention(&mut tape, zv, &cfg, q, k, v, o, 1).unwrap();
            tape.value(out).clone()
        };

        let base = run(&z);
        let perm: Vec<usize> = vec![3, 0, 4, 1, 2];
        let mut permuted = Tensor::zeros(&[tokens, 8]);
        for (r, &p) in perm.iter().enumerate() {
            permuted.data[r * 8..(r + 1) * 8].copy_from_slice(&z.data[p * 8..(p + 1) * 8]);
        }
        let out_p = run(&permuted);
        for (r, &p) in perm.iter().enumerate() {
            for j in 0..8 {
                assert!((out_p.data[r * 8 + j] - base.data[p * 8 + j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn attention_grad_check_all_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = AttentionConfig::new(4, 2).unwrap();
        let z = random_tensor(&[6, 4], &mut rng, 1.0); // batch 2 x 3 tokens
        let wq = random_tensor(&[4, 4], &mut rng, 0.7);
        let wk = random_tensor(&[4, 4], &mut rng, 0.7);
        let wv = random_tensor(&[4, 4], &mut rng, 0.7);
        let wo = random_tensor(&[4, 4], &mut rng, 0.7);
        let err = grad_check_params(
            |tape, vars| {
                let out = multi_head_attention(
                    tape, vars[0], &cfg, vars[1], vars[2], vars[3], vars[4], 2,
                )?;
                let sq = tape.mul(out, out)?;
                Ok(tape.sum_all(sq))
            },
            &[z, wq, wk, wv, wo],
            DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn mlp_zero_weights_give_bias_and_identity_mode_roundtrips() {
        let mut tape = Tape::new();
        let z = tape.input(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let w1 = tape.input(Tensor::zeros(&[3, 5]));
        let b1 = tape.input(Tensor::zeros(&[5]));
        let w2 = tape.input(Tensor::zeros(&[5, 3]));
        let b2 = tape.input(Tensor::from_vec(&[3], vec![0.5, -0.5, 2.0]).unwrap());
        let y = mlp_block(&mut tape, z, w1, b1, w2, b2, Activation::Gelu).unwrap();
        assert_eq!(tape.value(y).data, vec![0.5, -0.5, 2.0, 0.5, -0.5, 2.0]);

        // identity construction with activation bypass
        let mut tape = Tape::new();
        let z = tape.input(Tensor::from_vec(&[1, 2], vec![0.25, -1.5]).unwrap());
        let w1 = tape.input(eye(2));
        let b1 = tape.input(Tensor::zeros(&[2]));
        let w2 = tape.input(eye(2));
        let b2 = tape.input(Tensor::zeros(&[2]));
        let y = mlp_block(&mut tape, z, w1, b1, w2, b2, Activation::Identity).unwrap();
        assert_eq!(tape.value(y).data, vec![0.25, -1.5]);
    }

    #[test]
    fn mlp_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = random_tensor(&[3, 4], &mut rng, 1.0);
        let w1 = random_tensor(&[4, 6], &mut rng, 0.7);
        let b1 = random_tensor(&[6], &mut rng, 0.3);
        let w2 = random_tensor(&[6, 4], &mut rng, 0.7);
        let b2 = random_tensor(&[4], &mut rng, 0.3);
        let err = grad_check_params(
            |tape, vars| {
                let y = mlp_block(
                    tape,
                    vars[0],
                    vars[1],
                    vars[2],
                    vars[3],
                    vars[4],
                    Activation::Gelu,
                )?;
                let sq = tape.mul(y, y)?;
                Ok(tape.sum_all(sq))
            },
            &[z, w1, b1, w2, b2],
            DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn conv_and_pool_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_tensor(&[2, 2, 5, 5], &mut rng, 1.0);
        let w = random_tensor(&[3, 2, 3, 3], &mut rng, 0.5);
        let b = random_tensor(&[3], &mut rng, 0.2);
        let err = grad_check_params(
            |tape, vars| {
                let y = tape.conv2d(vars[0], vars[1], vars[2], 1)?;
                let a = tape.gelu(y);
                let p = tape.max_pool2(a)?;
                let sq = tape.mul(p, p)?;
                Ok(tape.sum_all(sq))
            },
            &[x, w, b],
            DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn conv_hand_case() {
        // 1x1x3x3 input, single all-ones 3x3 kernel, pad 1
        let mut tape = Tape::new();
        let x = tape.input(
            Tensor::from_vec(
                &[1, 1, 3, 3],
                vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
            )
            .unwrap(),
        );
        let w = tape.input(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let b = tape.input(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, w, b, 1).unwrap();
        // center output = sum of all inputs
        assert_eq!(tape.value(y).shape, vec![1, 1, 3, 3]);
        assert_eq!(tape.value(y).data[4], 45.0);
        // corner output = 2x2 corner sum
        assert_eq!(tape.value(y).data[0], 1.0 + 2.0 + 4.0 + 5.0);
    }

    #[test]
    fn gather_and_assemble_shapes() {
        let mut tape = Tape::new();
        let patches = tape.input(Tensor::from_vec(&[4, 2], vec![1.0; 8]).unwrap());
        let cls = tape.input(Tensor::from_vec(&[1, 2], vec![9.0, 9.0]).unwrap());
        let pos = tape.input(Tensor::zeros(&[3, 2]));
        let z0 = tape.assemble_tokens(patches, cls, pos, 2).unwrap();
        assert_eq!(tape.value(z0).shape, vec![6, 2]);
        assert_eq!(tape.value(z0).data[0], 9.0);
        assert_eq!(tape.value(z0).data[2], 1.0);
        let cls_rows = tape.gather_rows(z0, &[0, 3]).unwrap();
        assert_eq!(tape.value(cls_rows).data, vec![9.0, 9.0, 9.0, 9.0]);
    }

    #[test]
    fn assemble_tokens_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let patches = random_tensor(&[4, 3], &mut rng, 1.0);
        let cls = random_tensor(&[1, 3], &mut rng, 1.0);
        let pos = random_tensor(&[3, 3], &mut rng, 1.0);
        let err = grad_check_params(
            |tape, vars| {
                let z0 = tape.assemble_tokens(vars[0], vars[1], vars[2], 2)?;
                let sq = tape.mul(z0, z0)?;
                Ok(tape.sum_all(sq))
            },
            &[patches, cls, pos],
            DEFAULT_H,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}
