//! Tape-based reverse-mode automatic differentiation.
//!
//! Operations append nodes to a [`Tape`]; each node stores its operation and
//! forward value. [`Tape::backward`] walks the tape in reverse, accumulating
//! gradients. Backward passes recompute small intermediates (softmax rows,
//! layer statistics, attention matrices) from the stored input values
//! instead of caching them.

use crate::error::{Error, Result};
use crate::nn::tensor::{gemm, Tensor};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// MLP activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
    /// Pass-through, for identity-construction tests.
    Identity,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Gelu(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    AttentionCore {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        scale: f64,
    },
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        indices: Vec<usize>,
    },
    AssembleTokens {
        patches: Var,
        cls: Var,
        pos: Var,
        batch: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
    },
    MaxPool2(Var),
    Reshape(Var),
    SumAll(Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients keyed by [`Var`], produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, zero-shaped if the
    /// variable did not influence the loss.
    pub fn get(&self, var: Var, shape_of: &Tensor) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&shape_of.shape),
        }
    }

    pub fn try_get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Registers an input (leaf) tensor.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            data,
        };
        Ok(self.push(Op::Add(a, b), t))
    }

    /// `[R, C] + [C]` row broadcast.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if xv.rank() != 2 || bv.numel() != xv.cols() {
            return Err(Error::shape(format!(
                "add_row: {:?} + {:?}",
                xv.shape, bv.shape
            )));
        }
        let cols = xv.cols();
        let mut out = xv.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            *v += bv.data[i % cols];
        }
        Ok(self.push(Op::AddRow(x, bias), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            data,
        };
        Ok(self.push(Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut t = self.value(a).clone();
        for v in &mut t.data {
            *v *= c;
        }
        self.push(Op::Scale(a, c), t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows() {
            return Err(Error::shape(format!(
                "matmul: {:?} x {:?}",
                av.shape, bv.shape
            )));
        }
        let out = gemm(av, false, bv, false);
        Ok(self.push(Op::Matmul(a, b), out))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            data: self.value(a).data.iter().map(|&x| gelu_fwd(x)).collect(),
        };
        self.push(Op::Gelu(a), t)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            data: self.value(a).data.iter().map(|&x| x.max(0.0)).collect(),
        };
        self.push(Op::Relu(a), t)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Gelu => self.gelu(a),
            Activation::Relu => self.relu(a),
            Activation::Identity => self.scale(a, 1.0),
        }
    }

    /// Row-wise layer normalization with affine parameters.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape("layer_norm expects rank-2 input".to_string()));
        }
        let d = xv.cols();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::shape(format!(
                "layer_norm: gain/bias must have {d} values"
            )));
        }
        let gain_v = self.value(gain).data.clone();
        let bias_v = self.value(bias).data.clone();
        let mut out = xv.clone();
        for r in 0..xv.rows() {
            let row = &mut out.data[r * d..(r + 1) * d];
            let (mean, inv_std) = row_stats(row, eps);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv_std * gain_v[j] + bias_v[j];
            }
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias, eps }, out))
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(Error::shape("softmax expects rank-2 input".to_string()));
        }
        let d = av.cols();
        let mut out = av.clone();
        for r in 0..av.rows() {
            softmax_row(&mut out.data[r * d..(r + 1) * d]);
        }
        Ok(self.push(Op::Softmax(a), out))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits` (`[B, K]`).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.rows() != labels.len() {
            return Err(Error::shape(format!(
                "cross_entropy: logits {:?} vs {} labels",
                lv.shape,
                labels.len()
            )));
        }
        let k = lv.cols();
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &lv.data[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            let logsum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += logsum - row[label];
        }
        loss /= labels.len() as f64;
        let t = Tensor::scalar(loss);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            t,
        ))
    }

    /// Scaled dot-product attention, one head, batched: `q`, `k`, `v` are
    /// `[batch * tokens, head_dim]`; each sample's rows attend only within
    /// that sample.
    pub fn attention_core(&mut self, q: Var, k: Var, v: Var, batch: usize) -> Result<Var> {
        self.same_shape(q, k, "attention q/k")?;
        self.same_shape(q, v, "attention q/v")?;
        let qv = self.value(q);
        if qv.rank() != 2 || qv.rows() % batch != 0 {
            return Err(Error::shape(format!(
                "attention: rows {} not divisible into {batch} samples",
                qv.rows()
            )));
        }
        let tokens = qv.rows() / batch;
        let dh = qv.cols();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(&[batch * tokens, dh]);
        let kv = self.value(k);
        let vv = self.value(v);
        for s in 0..batch {
            let rows = s * tokens..(s + 1) * tokens;
            let qs = slice_rows(qv, rows.clone());
            let ks = slice_rows(kv, rows.clone());
            let vs = slice_rows(vv, rows.clone());
            let mut attn = gemm(&qs, false, &ks, true);
            for x in &mut attn.data {
                *x *= scale;
            }
            for r in 0..tokens {
                softmax_row(&mut attn.data[r * tokens..(r + 1) * tokens]);
            }
            let os = gemm(&attn, false, &vs, false);
            out.data[s * tokens * dh..(s + 1) * tokens * dh].copy_from_slice(&os.data);
        }
        Ok(self.push(
            Op::AttentionCore {
                q,
                k,
                v,
                batch,
                scale,
            },
            out,
        ))
    }

    /// Column slice `[.., start..start+len]` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start + len > xv.cols() {
            return Err(Error::shape(format!(
                "slice_cols {start}..{} of {:?}",
                start + len,
                xv.shape
            )));
        }
        let cols = xv.cols();
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.data[r * cols + start..r * cols + start + len]);
        }
        let t = Tensor {
            shape: vec![xv.rows(), len],
            data,
        };
        Ok(self.push(Op::SliceCols { x, start, len }, t))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols of zero parts".to_string()));
        }
        let rows = self.value(parts[0]).rows();
        for p in parts {
            if self.value(*p).rank() != 2 || self.value(*p).rows() != rows {
                return Err(Error::shape("concat_cols: row counts differ".to_string()));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let pv = self.value(*p);
                let c = pv.cols();
                data.extend_from_slice(&pv.data[r * c..(r + 1) * c]);
            }
        }
        let t = Tensor {
            shape: vec![rows, total],
            data,
        };
        Ok(self.push(Op::ConcatCols(parts.to_vec()), t))
    }

    /// Gathers rows of a rank-2 tensor by index.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape("gather_rows expects rank-2 input".to_string()));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::shape(format!(
                "gather_rows: index {bad} out of {} rows",
                xv.rows()
            )));
        }
        let c = xv.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&xv.data[i * c..(i + 1) * c]);
        }
        let t = Tensor {
            shape: vec![indices.len(), c],
            data,
        };
        Ok(self.push(
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            t,
        ))
    }

    /// Builds token matrices for a batch: for each sample, a class-token row
    /// followed by that sample's `L` projected patch rows, plus position
    /// embeddings. `patches` is `[batch * L, D]`, `cls` is `[1, D]`, `pos` is
    /// `[L + 1, D]`; the result is `[batch * (L + 1), D]`.
    pub fn assemble_tokens(&mut self, patches: Var, cls: Var, pos: Var, batch: usize) -> Result<Var> {
        let pv = self.value(patches);
        let cv = self.value(cls);
        let ev = self.value(pos);
        if pv.rank() != 2 || pv.rows() % batch != 0 {
            return Err(Error::shape(format!(
                "assemble_tokens: {} patch rows not divisible by batch {batch}",
                pv.rows()
            )));
        }
        let l = pv.rows() / batch;
        let d = pv.cols();
        if cv.shape != vec![1, d] || ev.shape != vec![l + 1, d] {
            return Err(Error::shape(format!(
                "assemble_tokens: cls {:?} pos {:?} incompatible with L={l}, D={d}",
                cv.shape, ev.shape
            )));
        }
        let mut data = Vec::with_capacity(batch * (l + 1) * d);
        for s in 0..batch {
            for j in 0..d {
                data.push(cv.data[j] + ev.data[j]);
            }
            for i in 0..l {
                let row = &pv.data[(s * l + i) * d..(s * l + i + 1) * d];
                let pe = &ev.data[(i + 1) * d..(i + 2) * d];
                for j in 0..d {
                    data.push(row[j] + pe[j]);
                }
            }
        }
        let t = Tensor {
            shape: vec![batch * (l + 1), d],
            data,
        };
        Ok(self.push(
            Op::AssembleTokens {
                patches,
                cls,
                pos,
                batch,
            },
            t,
        ))
    }

    /// 2-D convolution, stride 1, zero padding `pad`: `x` is
    /// `[B, Cin, H, W]`, `w` is `[Cout, Cin, KH, KW]`, `b` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        if xv.rank() != 4 || wv.rank() != 4 || xv.shape[1] != wv.shape[1] {
            return Err(Error::shape(format!(
                "conv2d: x {:?} w {:?}",
                xv.shape, wv.shape
            )));
        }
        if bv.numel() != wv.shape[0] {
            return Err(Error::shape("conv2d: bias length != out channels".to_string()));
        }
        let (bsz, h, wid) = (xv.shape[0], xv.shape[2], xv.shape[3]);
        let (cout, kh, kw) = (wv.shape[0], wv.shape[2], wv.shape[3]);
        let oh = h + 2 * pad + 1 - kh;
        let ow = wid + 2 * pad + 1 - kw;

        let col = im2col(xv, pad, oh, ow);
        let w_mat = weight_matrix(wv);
        let y_mat = gemm(&col, false, &w_mat, false); // [B*OH*OW, Cout]

        let mut out = Tensor::zeros(&[bsz, cout, oh, ow]);
        for bi in 0..bsz {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (bi * oh + oy) * ow + ox;
                    for co in 0..cout {
                        out.data[((bi * cout + co) * oh + oy) * ow + ox] =
                            y_mat.data[row * cout + co] + bv.data[co];
                    }
                }
            }
        }
        Ok(self.push(Op::Conv2d { x, w, b, pad }, out))
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(Error::shape("max_pool2 expects [B, C, H, W]".to_string()));
        }
        let (b, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[b, c, oh, ow]);
        for bi in 0..b {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::MIN;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let v = xv.data
                                    [((bi * c + ci) * h + 2 * oy + dy) * w + 2 * ox + dx];
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        out.data[((bi * c + ci) * oh + oy) * ow + ox] = best;
                    }
                }
            }
        }
        Ok(self.push(Op::MaxPool2(x), out))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), t))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data.iter().sum();
        self.push(Op::SumAll(x), Tensor::scalar(s))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input => {}
            Op::Add(a, b) => {
                accum_owned(grads, *a, g.clone());
                accum_owned(grads, *b, g.clone());
            }
            Op::AddRow(x, bias) => {
                accum_owned(grads, *x, g.clone());
                let cols = self.value(*bias).numel();
                let mut gb = Tensor::zeros(&self.value(*bias).shape);
                for (idx, v) in g.data.iter().enumerate() {
                    gb.data[idx % cols] += v;
                }
                accum_owned(grads, *bias, gb);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let ga = Tensor {
                    shape: av.shape.clone(),
                    data: g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect(),
                };
                let gb = Tensor {
                    shape: bv.shape.clone(),
                    data: g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect(),
                };
                accum_owned(grads, *a, ga);
                accum_owned(grads, *b, gb);
            }
            Op::Scale(a, c) => {
                let ga = Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().map(|v| v * c).collect(),
                };
                accum_owned(grads, *a, ga);
            }
            Op::Matmul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let ga = gemm(g, false, bv, true);
                let gb = gemm(av, true, g, false);
                accum_owned(grads, *a, ga);
                accum_owned(grads, *b, gb);
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                let ga = Tensor {
                    shape: av.shape.clone(),
                    data: g
                        .data
                        .iter()
                        .zip(&av.data)
                        .map(|(gv, &x)| gv * gelu_grad(x))
                        .collect(),
                };
                accum_owned(grads, *a, ga);
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let ga = Tensor {
                    shape: av.shape.clone(),
                    data: g
                        .data
                        .iter()
                        .zip(&av.data)
                        .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                        .collect(),
                };
                accum_owned(grads, *a, ga);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let gain_v = self.value(*gain);
                let d = xv.cols();
                let mut gx = Tensor::zeros(&xv.shape);
                let mut ggain = Tensor::zeros(&gain_v.shape);
                let mut gbias = Tensor::zeros(&gain_v.shape);
                for r in 0..xv.rows() {
                    let row = &xv.data[r * d..(r + 1) * d];
                    let (mean, inv_std) = row_stats(row, *eps);
                    let grow = &g.data[r * d..(r + 1) * d];
                    // dxhat, plus its mean and its xhat-weighted mean
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f64> = grow
                        .iter()
                        .zip(&gain_v.data)
                        .map(|(gv, ga)| gv * ga)
                        .collect();
                    for j in 0..d {
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[j];
                        ggain.data[j] += grow[j] * xhat[j];
                        gbias.data[j] += grow[j];
                    }
                    mean_dxhat /= d as f64;
                    mean_dxhat_xhat /= d as f64;
                    for j in 0..d {
                        gx.data[r * d + j] =
                            (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat) * inv_std;
                    }
                }
                accum_owned(grads, *x, gx);
                accum_owned(grads, *gain, ggain);
                accum_owned(grads, *bias, gbias);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let d = y.cols();
                let mut ga = Tensor::zeros(&y.shape);
                for r in 0..y.rows() {
                    let yr = &y.data[r * d..(r + 1) * d];
                    let gr = &g.data[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        ga.data[r * d + j] = (gr[j] - dot) * yr[j];
                    }
                }
                accum_owned(grads, *a, ga);
            }
            Op::CrossEntropy { logits, labels } => {
                let lv = self.value(*logits);
                let k = lv.cols();
                let batch = labels.len() as f64;
                let gscalar = g.data[0];
                let mut gl = Tensor::zeros(&lv.shape);
                for (r, &label) in labels.iter().enumerate() {
                    let mut row: Vec<f64> = lv.data[r * k..(r + 1) * k].to_vec();
                    softmax_row(&mut row);
                    for j in 0..k {
                        let delta = if j == label { 1.0 } else { 0.0 };
                        gl.data[r * k + j] = (row[j] - delta) / batch * gscalar;
                    }
                }
                accum_owned(grads, *logits, gl);
            }
            Op::AttentionCore {
                q,
                k,
                v,
                batch,
                scale,
            } => {
                let qv = self.value(*q);
                let kv = self.value(*k);
                let vv = self.value(*v);
                let tokens = qv.rows() / batch;
                let mut gq = Tensor::zeros(&qv.shape);
                let mut gk = Tensor::zeros(&kv.shape);
                let mut gv = Tensor::zeros(&vv.shape);
                for s in 0..*batch {
                    let rows = s * tokens..(s + 1) * tokens;
                    let qs = slice_rows(qv, rows.clone());
                    let ks = slice_rows(kv, rows.clone());
                    let vs = slice_rows(vv, rows.clone());
                    let go = slice_rows(g, rows.clone());
                    // recompute attention
                    let mut attn = gemm(&qs, false, &ks, true);
                    for x in &mut attn.data {
                        *x *= scale;
                    }
                    for r in 0..tokens {
                        softmax_row(&mut attn.data[r * tokens..(r + 1) * tokens]);
                    }
                    // dV = A^T gO ; dA = gO V^T
                    let gvs = gemm(&attn, true, &go, false);
                    let mut da = gemm(&go, false, &vs, true);
                    // softmax backward rows, then scale
                    for r in 0..tokens {
                        let ar = &attn.data[r * tokens..(r + 1) * tokens];
                        let dar = &mut da.data[r * tokens..(r + 1) * tokens];
                        let dot: f64 = ar.iter().zip(dar.iter()).map(|(a, b)| a * b).sum();
                        for j in 0..tokens {
                            dar[j] = (dar[j] - dot) * ar[j] * scale;
                        }
                    }
                    let gqs = gemm(&da, false, &ks, false);
                    let gks = gemm(&da, true, &qs, false);
                    copy_rows(&mut gq, rows.clone(), &gqs);
                    copy_rows(&mut gk, rows.clone(), &gks);
                    copy_rows(&mut gv, rows, &gvs);
                }
                accum_owned(grads, *q, gq);
                accum_owned(grads, *k, gk);
                accum_owned(grads, *v, gv);
            }
            Op::SliceCols { x, start, len } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut gx = Tensor::zeros(&xv.shape);
                for r in 0..xv.rows() {
                    for j in 0..*len {
                        gx.data[r * cols + start + j] = g.data[r * len + j];
                    }
                }
                accum_owned(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let c = pv.cols();
                    let mut gp = Tensor::zeros(&pv.shape);
                    for r in 0..rows {
                        gp.data[r * c..(r + 1) * c]
                            .copy_from_slice(&g.data[r * total + offset..r * total + offset + c]);
                    }
                    accum_owned(grads, *p, gp);
                    offset += c;
                }
            }
            Op::GatherRows { x, indices } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut gx = Tensor::zeros(&xv.shape);
                for (r, &idx) in indices.iter().enumerate() {
                    for j in 0..c {
                        gx.data[idx * c + j] += g.data[r * c + j];
                    }
                }
                accum_owned(grads, *x, gx);
            }
            Op::AssembleTokens {
                patches,
                cls,
                pos,
                batch,
            } => {
                let pv = self.value(*patches);
                let d = pv.cols();
                let l = pv.rows() / batch;
                let mut gpatches = Tensor::zeros(&pv.shape);
                let mut gcls = Tensor::zeros(&self.value(*cls).shape);
                let mut gpos = Tensor::zeros(&self.value(*pos).shape);
                for s in 0..*batch {
                    let base = s * (l + 1) * d;
                    for j in 0..d {
                        gcls.data[j] += g.data[base + j];
                        gpos.data[j] += g.data[base + j];
                    }
                    for i in 0..l {
                        let row = &g.data[base + (i + 1) * d..base + (i + 2) * d];
                        for j in 0..d {
                            gpatches.data[(s * l + i) * d + j] = row[j];
                            gpos.data[(i + 1) * d + j] += row[j];
                        }
                    }
                }
                accum_owned(grads, *patches, gpatches);
                accum_owned(grads, *cls, gcls);
                accum_owned(grads, *pos, gpos);
            }
            Op::Conv2d { x, w, b, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (bsz, _cin, _h, _wid) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
                let (cout, kh, kw) = (wv.shape[0], wv.shape[2], wv.shape[3]);
                let (oh, ow) = (node.value.shape[2], node.value.shape[3]);

                // g as [B*OH*OW, Cout]
                let mut g_mat = Tensor::zeros(&[bsz * oh * ow, cout]);
                for bi in 0..bsz {
                    for co in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                g_mat.data[((bi * oh + oy) * ow + ox) * cout + co] =
                                    g.data[((bi * cout + co) * oh + oy) * ow + ox];
                            }
                        }
                    }
                }
                let col = im2col(xv, *pad, oh, ow);
                // dW
                let dw_mat = gemm(&col, true, &g_mat, false); // [Cin*KH*KW, Cout]
                let mut gw = Tensor::zeros(&wv.shape);
                let cin = wv.shape[1];
                for co in 0..cout {
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                gw.data[((co * cin + ci) * kh + ky) * kw + kx] =
                                    dw_mat.data[((ci * kh + ky) * kw + kx) * cout + co];
                            }
                        }
                    }
                }
                accum_owned(grads, *w, gw);
                // db
                let mut gb = Tensor::zeros(&self.value(*b).shape);
                for (idx, v) in g_mat.data.iter().enumerate() {
                    gb.data[idx % cout] += v;
                }
                accum_owned(grads, *b, gb);
                // dX via col2im
                let dcol = gemm(&g_mat, false, &weight_matrix(wv), true); // [B*OH*OW, Cin*KH*KW]
                let gx = col2im(&dcol, &xv.shape, kh, kw, *pad, oh, ow);
                accum_owned(grads, *x, gx);
            }
            Op::MaxPool2(x) => {
                let xv = self.value(*x);
                let (b, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
                let (oh, ow) = (h / 2, w / 2);
                let mut gx = Tensor::zeros(&xv.shape);
                for bi in 0..b {
                    for ci in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                // first maximum wins, matching forward
                                let mut best = f64::MIN;
                                let mut best_at = (0, 0);
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        let v = xv.data
                                            [((bi * c + ci) * h + 2 * oy + dy) * w + 2 * ox + dx];
                                        if v > best {
                                            best = v;
                                            best_at = (dy, dx);
                                        }
                                    }
                                }
                                gx.data[((bi * c + ci) * h + 2 * oy + best_at.0) * w
                                    + 2 * ox
                                    + best_at.1] +=
                                    g.data[((bi * c + ci) * oh + oy) * ow + ox];
                            }
                        }
                    }
                }
                accum_owned(grads, *x, gx);
            }
            Op::Reshape(x) => {
                let gx = Tensor {
                    shape: self.value(*x).shape.clone(),
                    data: g.data.clone(),
                };
                accum_owned(grads, *x, gx);
            }
            Op::SumAll(x) => {
                let gx = Tensor::filled(&self.value(*x).shape, g.data[0]);
                accum_owned(grads, *x, gx);
            }
        }
        Ok(())
    }
}

fn accum_owned(grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, d) in existing.data.iter_mut().zip(&delta.data) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::MIN, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn slice_rows(t: &Tensor, rows: std::ops::Range<usize>) -> Tensor {
    let c = t.cols();
    Tensor {
        shape: vec![rows.len(), c],
        data: t.data[rows.start * c..rows.end * c].to_vec(),
    }
}

fn copy_rows(dst: &mut Tensor, rows: std::ops::Range<usize>, src: &Tensor) {
    let c = dst.cols();
    dst.data[rows.start * c..rows.end * c].copy_from_slice(&src.data);
}

/// Unfolds `[B, Cin, H, W]` into `[B*OH*OW, Cin*KH*KW]` patches for a
/// stride-1 convolution with zero padding.
fn im2col(x: &Tensor, pad: usize, oh: usize, ow: usize) -> Tensor {
    let (b, cin, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let kh = h + 2 * pad + 1 - oh;
    let kw = w + 2 * pad + 1 - ow;
    let cols = cin * kh * kw;
    let mut out = Tensor::zeros(&[b * oh * ow, cols]);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (bi * oh + oy) * ow + ox;
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out.data[row * cols + (ci * kh + ky) * kw + kx] =
                                x.data[((bi * cin + ci) * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Folds `[B*OH*OW, Cin*KH*KW]` gradients back onto the input image.
fn col2im(
    dcol: &Tensor,
    x_shape: &[usize],
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Tensor {
    let (b, cin, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let cols = cin * kh * kw;
    let mut out = Tensor::zeros(x_shape);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (bi * oh + oy) * ow + ox;
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out.data[((bi * cin + ci) * h + iy as usize) * w + ix as usize] +=
                                dcol.data[row * cols + (ci * kh + ky) * kw + kx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `[Cout, Cin, KH, KW]` weights as a `[Cin*KH*KW, Cout]` matrix.
fn weight_matrix(w: &Tensor) -> Tensor {
    let (cout, cin, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    let rows = cin * kh * kw;
    let mut out = Tensor::zeros(&[rows, cout]);
    for co in 0..cout {
        for r in 0..rows {
            out.data[r * cout + co] = w.data[co * rows + r];
        }
    }
    out
}
