//! Forward operations and their backward rules.
//!
//! Each operation validates shapes, computes its result eagerly, and records
//! a closure that maps the output gradient to one gradient buffer per input.
//! Matrix products use an i-k-j loop so the inner walk stays row-major.

use rand::Rng;

use super::{BackCtx, Mask, Tensor, TensorError};

// ── Raw matrix kernels ──────────────────────────────────────────────────────

/// `a [m×k] · b [k×n]`, all row-major.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ [k×m] · b [k×n]` without materializing the transpose.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, av) in arow.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a [m×k] · bᵀ [n×k]` without materializing the transpose.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn want_2d(t: &Tensor) -> Result<(usize, usize), TensorError> {
    if t.ndim() != 2 {
        return Err(TensorError::RankMismatch {
            expected: 2,
            got: t.ndim(),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Tensor {
    // ── Elementwise ─────────────────────────────────────────────────────────

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        same_shape(self, other)?;
        let values: Vec<f64> = self
            .values_ref()
            .iter()
            .zip(other.values_ref().iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(|ctx: &BackCtx| vec![ctx.out_grad.to_vec(), ctx.out_grad.to_vec()]),
        ))
    }

    /// Elementwise difference `self − other`.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        same_shape(self, other)?;
        let values: Vec<f64> = self
            .values_ref()
            .iter()
            .zip(other.values_ref().iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(|ctx: &BackCtx| {
                vec![
                    ctx.out_grad.to_vec(),
                    ctx.out_grad.iter().map(|g| -g).collect(),
                ]
            }),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        same_shape(self, other)?;
        let values: Vec<f64> = self
            .values_ref()
            .iter()
            .zip(other.values_ref().iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(|ctx: &BackCtx| {
                let a = ctx.inputs[0].values_ref();
                let b = ctx.inputs[1].values_ref();
                let da = ctx.out_grad.iter().zip(b.iter()).map(|(g, v)| g * v).collect();
                let db = ctx.out_grad.iter().zip(a.iter()).map(|(g, v)| g * v).collect();
                vec![da, db]
            }),
        ))
    }

    /// Multiplication by a plain scalar constant.
    pub fn scale(&self, factor: f64) -> Tensor {
        let values: Vec<f64> = self.values_ref().iter().map(|v| v * factor).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |ctx: &BackCtx| vec![ctx.out_grad.iter().map(|g| g * factor).collect()]),
        )
    }

    /// Elementwise exponential.
    pub fn exp(&self) -> Tensor {
        let values: Vec<f64> = self.values_ref().iter().map(|v| v.exp()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(|ctx: &BackCtx| {
                vec![ctx
                    .out_grad
                    .iter()
                    .zip(ctx.out_values)
                    .map(|(g, y)| g * y)
                    .collect()]
            }),
        )
    }

    /// Elementwise natural logarithm.
    pub fn ln(&self) -> Tensor {
        let values: Vec<f64> = self.values_ref().iter().map(|v| v.ln()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(|ctx: &BackCtx| {
                let x = ctx.inputs[0].values_ref();
                vec![ctx.out_grad.iter().zip(x.iter()).map(|(g, v)| g / v).collect()]
            }),
        )
    }

    /// Rectified linear unit.
    pub fn relu(&self) -> Tensor {
        let values: Vec<f64> = self.values_ref().iter().map(|v| v.max(0.0)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(|ctx: &BackCtx| {
                let x = ctx.inputs[0].values_ref();
                vec![ctx
                    .out_grad
                    .iter()
                    .zip(x.iter())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect()]
            }),
        )
    }

    // ── Reductions ──────────────────────────────────────────────────────────

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.values_ref().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |ctx: &BackCtx| vec![vec![ctx.out_grad[0]; n]]),
        )
    }

    /// Arithmetic mean of all elements, as a `[1]` tensor.
    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let total: f64 = self.values_ref().iter().sum();
        Tensor::from_op(
            vec![1],
            vec![total / n as f64],
            vec![self.clone()],
            Box::new(move |ctx: &BackCtx| vec![vec![ctx.out_grad[0] / n as f64; n]]),
        )
    }

    // ── Linear algebra ──────────────────────────────────────────────────────

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = want_2d(self)?;
        let (k2, n) = want_2d(other)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let values = matmul_raw(&self.values_ref(), &other.values_ref(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            values,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx: &BackCtx| {
                let a = ctx.inputs[0].values_ref();
                let b = ctx.inputs[1].values_ref();
                // dA = G · Bᵀ, dB = Aᵀ · G.
                let da = matmul_nt(ctx.out_grad, &b, m, n, k);
                let db = matmul_tn(&a, ctx.out_grad, k, m, n);
                vec![da, db]
            }),
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor, TensorError> {
        let (r, c) = want_2d(self)?;
        let src = self.values_ref();
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = src[i * c + j];
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            vec![c, r],
            values,
            vec![self.clone()],
            Box::new(move |ctx: &BackCtx| {
                let mut dx = vec![0.0; r * c];
                for j in 0..c {
                    for i in 0..r {
                        dx[i * c + j] = ctx.out_grad[j * r + i];
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Adds a length-`c` bias vector to every row of a `[r×c]` tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor, TensorError> {
        let (r, c) = want_2d(self)?;
        if bias.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let b = bias.values_ref();
        let values: Vec<f64> = self
            .values_ref()
            .iter()
            .enumerate()
            .map(|(idx, v)| v + b[idx % c])
            .collect();
        drop(b);
        Ok(Tensor::from_op(
            vec![r, c],
            values,
            vec![self.clone(), bias.clone()],
            Box::new(move |ctx: &BackCtx| {
                let dx = ctx.out_grad.to_vec();
                let mut db = vec![0.0; c];
                for (idx, g) in ctx.out_grad.iter().enumerate() {
                    db[idx % c] += g;
                }
                vec![dx, db]
            }),
        ))
    }

    // ── Shape surgery ───────────────────────────────────────────────────────

    /// Stacks 2-D tensors with equal column counts on top of each other.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor, TensorError> {
        let first = parts.first().ok_or(TensorError::EmptyConcat)?;
        let (_, c) = want_2d(first)?;
        let mut total_rows = 0;
        let mut values = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, pc) = want_2d(p)?;
            if pc != c {
                return Err(TensorError::ShapeMismatch {
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            total_rows += r;
            row_counts.push(r);
            values.extend_from_slice(&p.values_ref());
        }
        Ok(Tensor::from_op(
            vec![total_rows, c],
            values,
            parts.to_vec(),
            Box::new(move |ctx: &BackCtx| {
                let mut grads = Vec::with_capacity(row_counts.len());
                let mut offset = 0;
                for r in &row_counts {
                    let len = r * c;
                    grads.push(ctx.out_grad[offset..offset + len].to_vec());
                    offset += len;
                }
                grads
            }),
        ))
    }

    /// Joins two 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (r, c1) = want_2d(self)?;
        let (r2, c2) = want_2d(other)?;
        if r != r2 {
            return Err(TensorError::ShapeMismatch {
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let a = self.values_ref();
        let b = other.values_ref();
        let mut values = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            values.extend_from_slice(&a[i * c1..(i + 1) * c1]);
            values.extend_from_slice(&b[i * c2..(i + 1) * c2]);
        }
        drop(a);
        drop(b);
        Ok(Tensor::from_op(
            vec![r, c1 + c2],
            values,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx: &BackCtx| {
                let mut da = vec![0.0; r * c1];
                let mut db = vec![0.0; r * c2];
                let w = c1 + c2;
                for i in 0..r {
                    da[i * c1..(i + 1) * c1].copy_from_slice(&ctx.out_grad[i * w..i * w + c1]);
                    db[i * c2..(i + 1) * c2].copy_from_slice(&ctx.out_grad[i * w + c1..(i + 1) * w]);
                }
                vec![da, db]
            }),
        ))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor, TensorError> {
        let (r, c) = want_2d(self)?;
        if start > end || end > c {
            return Err(TensorError::BadSlice { start, end, rows: c });
        }
        let w = end - start;
        let src = self.values_ref();
        let mut values = Vec::with_capacity(r * w);
        for i in 0..r {
            values.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        drop(src);
        Ok(Tensor::from_op(
            vec![r, w],
            values,
            vec![self.clone()],
            Box::new(move |ctx: &BackCtx| {
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + end]
                        .copy_from_slice(&ctx.out_grad[i * w..(i + 1) * w]);
                }
                vec![dx]
            }),
        ))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor, TensorError> {
        let (r, c) = want_2d(self)?;
        if start > end || end > r {
            return Err(TensorError::BadSlice { start, end, rows: r });
        }
        let values = self.values_ref()[start * c..end * c].to_vec();
        Ok(Tensor::from_op(
            vec![end - start, c],
            values,
            vec![self.clone()],
            Box::new(move |ctx: &BackCtx| {
                let mut dx = vec![0.0; r * c];
                dx[start * c..end * c].copy_from_slice(ctx.out_grad);
                vec![dx]
            }),
        ))
    }

    /// Gathers rows of a 2-D table by index; duplicate indices are allowed
    /// and their gradients accumulate on the shared row.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor, TensorError> {
        let (r, c) = want_2d(self)?;
        for &id in ids {
            if id >= r {
                return Err(TensorError::RowOutOfRange { row: id, rows: r });
            }
        }
        let src = self.values_ref();
        let mut values = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            values.extend_from_slice(&src[id * c..(id + 1) * c]);
        }
        drop(src);
        let ids_owned = ids.to_vec();
        Ok(Tensor::from_op(
            vec![ids.len(), c],
            values,
            vec![self.clone()],
            Box::new(move |ctx: &BackCtx| {
                let mut dx = vec![0.0; r * c];
                for (k, &id) in ids_owned.iter().enumerate() {
                    let g = &ctx.out_grad[k * c..(k + 1) * c];
                    let slot = &mut dx[id * c..(id + 1) * c];
                    for (s, gv) in slot.iter_mut().zip(g) {
                        *s += gv;
                    }
                }
                vec![dx]
            }),
        ))
    }

    // ── Normalization and probability ───────────────────────────────────────

    /// Softmax along `axis`, with an optional blocking mask of the same
    /// shape. Masked positions are exactly zero in the output; a lane with
    /// every position blocked is an error.
    pub fn softmax(&self, axis: usize, mask: Option<&Mask>) -> Result<Tensor, TensorError> {
        let ndim = self.ndim();
        if axis >= ndim {
            return Err(TensorError::InvalidAxis { axis, ndim });
        }
        if let Some(m) = mask {
            if m.shape() != self.shape() {
                return Err(TensorError::ShapeMismatch {
                    lhs: self.shape().to_vec(),
                    rhs: m.shape().to_vec(),
                });
            }
        }
        let shape = self.shape().to_vec();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();

        let src = self.values_ref();
        let mut values = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let lane = o * inner + i;
                let idx = |a: usize| (o * axis_len + a) * inner + i;
                let blocked =
                    |a: usize| mask.map_or(false, |m| m.flags()[idx(a)]);
                let mut max = f64::NEG_INFINITY;
                for a in 0..axis_len {
                    if !blocked(a) {
                        max = max.max(src[idx(a)]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    return Err(TensorError::AllMasked { lane });
                }
                let mut denom = 0.0;
                for a in 0..axis_len {
                    if blocked(a) {
                        continue;
                    }
                    let e = (src[idx(a)] - max).exp();
                    values[idx(a)] = e;
                    denom += e;
                }
                for a in 0..axis_len {
                    values[idx(a)] = if blocked(a) { 0.0 } else { values[idx(a)] / denom };
                }
            }
        }
        drop(src);

        Ok(Tensor::from_op(
            shape.clone(),
            values,
            vec![self.clone()],
            Box::new(move |ctx: &BackCtx| {
                // dL/dx_a = y_a · (g_a − Σ_b g_b y_b); masked lanes carry y = 0.
                let y = ctx.out_values;
                let g = ctx.out_grad;
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * axis_len + a) * inner + i;
                        let mut dot = 0.0;
                        for a in 0..axis_len {
                            dot += g[idx(a)] * y[idx(a)];
                        }
                        for a in 0..axis_len {
                            dx[idx(a)] = y[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Per-row normalization over the last axis with learned gain and bias.
    pub fn layer_norm(
        &self,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor, TensorError> {
        let ndim = self.ndim();
        if ndim == 0 {
            return Err(TensorError::RankMismatch { expected: 2, got: 0 });
        }
        let d = self.shape()[ndim - 1];
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                lhs: vec![d],
                rhs: if gain.shape() != [d] {
                    gain.shape().to_vec()
                } else {
                    bias.shape().to_vec()
                },
            });
        }
        let rows = self.numel() / d;
        let src = self.values_ref();
        let gv = gain.values_ref();
        let bv = bias.values_ref();
        let mut values = vec![0.0; src.len()];
        let mut normalized = vec![0.0; src.len()];
        let mut inv_sigma = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mu: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[r] = inv;
            for j in 0..d {
                let y = (row[j] - mu) * inv;
                normalized[r * d + j] = y;
                values[r * d + j] = y * gv[j] + bv[j];
            }
        }
        drop(src);
        drop(gv);
        drop(bv);

        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |ctx: &BackCtx| {
                let g = ctx.out_grad;
                let gain_v = ctx.inputs[1].values_ref();
                let mut dx = vec![0.0; rows * d];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let y = &normalized[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mut ghat = vec![0.0; d];
                    let mut mean_ghat = 0.0;
                    let mut mean_ghat_y = 0.0;
                    for j in 0..d {
                        dgain[j] += gr[j] * y[j];
                        dbias[j] += gr[j];
                        ghat[j] = gr[j] * gain_v[j];
                        mean_ghat += ghat[j];
                        mean_ghat_y += ghat[j] * y[j];
                    }
                    mean_ghat /= d as f64;
                    mean_ghat_y /= d as f64;
                    let inv = inv_sigma[r];
                    for j in 0..d {
                        dx[r * d + j] = inv * (ghat[j] - mean_ghat - y[j] * mean_ghat_y);
                    }
                }
                vec![dx, dgain, dbias]
            }),
        ))
    }

    /// Inverted-scaling dropout. In evaluation mode (or with `p == 0`) this
    /// is the identity; in training mode each element survives with
    /// probability `1 − p` and is scaled by `1 / (1 − p)`.
    pub fn dropout<R: Rng>(
        &self,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::BadProbability { p });
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 - p;
        let factors: Vec<f64> = (0..self.numel())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let values: Vec<f64> = self
            .values_ref()
            .iter()
            .zip(&factors)
            .map(|(v, f)| v * f)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |ctx: &BackCtx| {
                vec![ctx
                    .out_grad
                    .iter()
                    .zip(&factors)
                    .map(|(g, f)| g * f)
                    .collect()]
            }),
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `[n × classes]` logits, as a `[1]` tensor. Computed through
    /// log-sum-exp so large logits stay finite.
    pub fn cross_entropy_mean(&self, targets: &[usize]) -> Result<Tensor, TensorError> {
        let (n, classes) = want_2d(self)?;
        if targets.len() != n {
            return Err(TensorError::TargetCount {
                expected: n,
                got: targets.len(),
            });
        }
        for &t in targets {
            if t >= classes {
                return Err(TensorError::ClassOutOfRange { class: t, classes });
            }
        }
        let src = self.values_ref();
        let mut total = 0.0;
        let mut lse = vec![0.0; n];
        for (r, &t) in targets.iter().enumerate() {
            let row = &src[r * classes..(r + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            lse[r] = max + sum.ln();
            total += lse[r] - row[t];
        }
        drop(src);
        let targets_owned = targets.to_vec();
        Ok(Tensor::from_op(
            vec![1],
            vec![total / n as f64],
            vec![self.clone()],
            Box::new(move |ctx: &BackCtx| {
                let src = ctx.inputs[0].values_ref();
                let g = ctx.out_grad[0] / n as f64;
                let mut dx = vec![0.0; n * classes];
                for (r, &t) in targets_owned.iter().enumerate() {
                    let row = &src[r * classes..(r + 1) * classes];
                    for j in 0..classes {
                        let p = (row[j] - lse[r]).exp();
                        dx[r * classes + j] = g * (p - if j == t { 1.0 } else { 0.0 });
                    }
                }
                vec![dx]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_small_product() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[5.0, 6.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.values(), vec![17.0, 39.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        assert!(matches!(
            a.matmul(&b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn softmax_of_zero_and_ln2_is_thirds() {
        let x = t(&[2], &[0.0, 2.0f64.ln()]);
        let y = x.softmax(0, None).unwrap();
        let v = y.values();
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one_under_large_offsets() {
        // Shifting a row by a huge constant must not change the result.
        let x = t(&[2, 3], &[1e9, 1e9 + 1.0, 1e9 - 2.0, -3.0, 0.0, 1.5]);
        let y = x.softmax(1, None).unwrap();
        let v = y.values();
        for r in 0..2 {
            let s: f64 = v[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let plain = t(&[3], &[0.0, 1.0, -2.0]).softmax(0, None).unwrap();
        for (a, b) in v[..3].iter().zip(plain.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_mask_zeroes_blocked_positions_exactly() {
        let x = t(&[1, 4], &[0.3, -1.0, 2.0, 0.0]);
        let mask = Mask::new(vec![1, 4], vec![false, true, false, true]).unwrap();
        let y = x.softmax(1, Some(&mask)).unwrap();
        let v = y.values();
        assert_eq!(v[1], 0.0);
        assert_eq!(v[3], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_fully_masked_lane_is_an_error() {
        let x = t(&[1, 2], &[0.0, 1.0]);
        let mask = Mask::new(vec![1, 2], vec![true, true]).unwrap();
        assert_eq!(
            x.softmax(1, Some(&mask)).unwrap_err(),
            TensorError::AllMasked { lane: 0 }
        );
    }

    #[test]
    fn layer_norm_centers_and_scales_rows() {
        let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let gain = t(&[4], &[1.0; 4]);
        let bias = t(&[4], &[0.0; 4]);
        let y = x.layer_norm(&gain, &bias, 1e-5).unwrap();
        let v = y.values();
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        let var: f64 = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let x = t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = x.dropout(0.5, false, &mut rng).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn dropout_train_mode_zeroes_or_rescales() {
        let x = t(&[1, 1000], &[1.0; 1000]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = x.dropout(0.25, true, &mut rng).unwrap();
        let v = y.values();
        let kept = v.iter().filter(|a| **a != 0.0).count();
        for a in &v {
            assert!(*a == 0.0 || (*a - 1.0 / 0.75).abs() < 1e-12);
        }
        // Roughly three quarters survive.
        assert!(kept > 650 && kept < 850, "kept {kept}");
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        let x = t(&[1], &[1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            x.dropout(1.0, true, &mut rng),
            Err(TensorError::BadProbability { .. })
        ));
    }

    #[test]
    fn gather_rows_accumulates_duplicate_gradients() {
        let table = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let picked = table.gather_rows(&[1, 1, 0]).unwrap();
        assert_eq!(picked.values(), vec![3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let loss = picked.sum();
        loss.backward().unwrap();
        assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_matches_hand_computation() {
        // Two classes with logits [0, ln 3]: p = [1/4, 3/4].
        let logits = t(&[1, 2], &[0.0, 3.0f64.ln()]);
        let loss = logits.cross_entropy_mean(&[1]).unwrap();
        assert!((loss.item() - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    // ── Backward rules against finite differences ───────────────────────────

    #[test]
    fn grad_matmul_chain() {
        let x = t(&[2, 3], &[0.5, -1.0, 2.0, 1.5, 0.25, -0.75]);
        let w = t(&[3, 2], &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]);
        let err = grad_check(
            |probe: &Tensor| probe.matmul(&w).map(|y| y.sum()),
            &x,
            1e-5,
        );
        assert!(err < 1e-8, "matmul lhs grad error {err}");
        let err = grad_check(
            |probe: &Tensor| x.matmul(probe).map(|y| y.mul(&y).unwrap().sum()),
            &w,
            1e-5,
        );
        assert!(err < 1e-7, "matmul rhs grad error {err}");
    }

    #[test]
    fn grad_softmax_cross_entropy_composition() {
        // Softmax probabilities fed into an explicit negative log-likelihood.
        let x = t(&[1, 3], &[0.2, -0.4, 1.1]);
        let err = grad_check(
            |probe: &Tensor| {
                let p = probe.softmax(1, None)?;
                let picked = p.ln().mul(&t(&[1, 3], &[0.0, 1.0, 0.0]))?;
                Ok::<_, TensorError>(picked.sum().scale(-1.0))
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-6, "softmax chain grad error {err}");
    }

    #[test]
    fn grad_fused_cross_entropy() {
        let x = t(&[2, 4], &[0.3, -0.2, 0.9, 0.0, -1.2, 0.4, 0.1, 0.8]);
        let err = grad_check(
            |probe: &Tensor| probe.cross_entropy_mean(&[2, 1]),
            &x,
            1e-6,
        );
        assert!(err < 1e-7, "cross entropy grad error {err}");
    }

    #[test]
    fn grad_layer_norm_all_arguments() {
        let x = t(&[2, 4], &[0.5, 1.5, -0.5, 2.0, -1.0, 0.0, 0.25, 0.75]);
        let gain = t(&[4], &[1.1, 0.9, 1.2, 0.8]);
        let bias = t(&[4], &[0.1, -0.1, 0.0, 0.2]);
        let err = grad_check(
            |probe: &Tensor| probe.layer_norm(&gain, &bias, 1e-5).map(|y| y.mul(&y).unwrap().sum()),
            &x,
            1e-6,
        );
        assert!(err < 1e-6, "layer_norm input grad error {err}");
        let err = grad_check(
            |probe: &Tensor| x.layer_norm(probe, &bias, 1e-5).map(|y| y.mul(&y).unwrap().sum()),
            &gain,
            1e-6,
        );
        assert!(err < 1e-6, "layer_norm gain grad error {err}");
        let err = grad_check(
            |probe: &Tensor| x.layer_norm(&gain, probe, 1e-5).map(|y| y.sum()),
            &bias,
            1e-6,
        );
        assert!(err < 1e-6, "layer_norm bias grad error {err}");
    }

    #[test]
    fn grad_masked_softmax() {
        let x = t(&[2, 3], &[0.3, -0.6, 0.9, 1.2, 0.0, -0.3]);
        let mask = Mask::new(
            vec![2, 3],
            vec![false, true, false, false, false, true],
        )
        .unwrap();
        let weights = t(&[2, 3], &[0.7, 0.1, -0.4, 0.2, 0.9, -0.8]);
        let err = grad_check(
            |probe: &Tensor| {
                let y = probe.softmax(1, Some(&mask))?;
                Ok::<_, TensorError>(y.mul(&weights)?.sum())
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-6, "masked softmax grad error {err}");
    }

    #[test]
    fn grad_shape_surgery_ops() {
        let x = t(&[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let other = t(&[2, 2], &[1.0, -1.0, 0.5, 0.25]);
        let err = grad_check(
            |probe: &Tensor| {
                let top = probe.slice_rows(0, 2)?;
                let joined = Tensor::concat_rows(&[top, other.clone()])?;
                let wide = joined.concat_cols(&joined)?;
                let narrow = wide.slice_cols(1, 3)?;
                Ok::<_, TensorError>(narrow.mul(&narrow)?.sum())
            },
            &x,
            1e-5,
        );
        assert!(err < 1e-7, "shape surgery grad error {err}");
    }

    #[test]
    fn grad_bias_relu_transpose() {
        let x = t(&[2, 3], &[0.4, -0.7, 1.3, 0.9, -0.2, 0.6]);
        let b = t(&[3], &[0.05, -0.15, 0.25]);
        let err = grad_check(
            |probe: &Tensor| {
                let y = probe.add_bias(&b)?.relu().transpose()?;
                Ok::<_, TensorError>(y.mul(&y)?.sum())
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-6, "bias/relu/transpose grad error {err}");
    }

    #[test]
    fn grad_dropout_respects_recorded_mask() {
        // With a fixed seed the mask is fixed, so the op is a linear map and
        // its gradient must match finite differences rebuilt with that seed.
        let x = t(&[1, 16], &[0.5; 16]);
        let err = grad_check(
            |probe: &Tensor| {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                let y = probe.dropout(0.5, true, &mut rng)?;
                Ok::<_, TensorError>(y.mul(&y)?.sum())
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-7, "dropout grad error {err}");
    }
}
