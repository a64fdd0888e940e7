use super::{Op, Tape, Var, MASKED, ROPE_BASE};
use crate::error::{shape_err, Result, VoraError};
use crate::kernels;
use crate::tensor::Tensor;

pub(crate) const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
pub(crate) const GELU_K: f32 = 0.044_715;

#[inline]
pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn rope_angle(pos: usize, pair: usize, dim: usize) -> f32 {
    pos as f32 * ROPE_BASE.powf(-((2 * pair) as f32) / dim as f32)
}

impl Tape {
    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `a[m,k] · b[n,k]ᵀ`; the linear-layer product for `[d_out, d_in]` weights.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        self.push("matmul_nt", out, Op::MatMulNt(a, b), &[a, b])
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Adds `bias[n]` to every row of `x[..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.shape() != [tx.cols()] {
            return Err(shape_err("add_bias", tx.shape(), tb.shape()));
        }
        let n = tx.cols();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("add_bias", out, Op::AddBias(x, bias), &[x, bias])
    }

    /// `scale · x + shift` with constant scalars.
    pub fn affine(&mut self, x: Var, scale: f32, shift: f32) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| scale * v + shift).collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("affine", out, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| gelu(v)).collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("gelu", out, Op::Gelu(x), &[x])
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v * sigmoid(v)).collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("silu", out, Op::Silu(x), &[x])
    }

    /// `x / sqrt(mean(x²) + eps) ⊙ gain` over the trailing axis.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f32) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(gain));
        let d = tx.cols();
        if tg.shape() != [d] {
            return Err(shape_err("rms_norm", tx.shape(), tg.shape()));
        }
        if eps < 0.0 {
            return Err(VoraError::InvalidTensor(format!("rms_norm eps {eps} < 0")));
        }
        let mut data = Vec::with_capacity(tx.numel());
        let mut inv_rms = Vec::with_capacity(tx.rows());
        for row in tx.data().chunks(d) {
            let ms = row.iter().map(|v| (v * v) as f64).sum::<f64>() / d as f64;
            let r = (1.0 / (ms + eps as f64).sqrt()) as f32;
            inv_rms.push(r);
            data.extend(row.iter().zip(tg.data()).map(|(v, g)| v * r * g));
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("rms_norm", out, Op::RmsNorm { x, gain, inv_rms }, &[x, gain])
    }

    /// Row softmax of `x + mask`. Entries where `mask` holds [`MASKED`] come out as exactly 0.
    pub fn softmax_rows(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.expect_2d("softmax_rows")?;
        if mask.shape() != [m, n] {
            return Err(shape_err("softmax_rows", tx.shape(), mask.shape()));
        }
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            let xr = &tx.data()[r * n..(r + 1) * n];
            let mr = &mask.data()[r * n..(r + 1) * n];
            let mut max = f32::NEG_INFINITY;
            for (v, &mk) in xr.iter().zip(mr) {
                if mk > MASKED {
                    max = max.max(v + mk);
                }
            }
            if max == f32::NEG_INFINITY {
                return Err(VoraError::FullyMaskedRow { row: r });
            }
            let out = &mut data[r * n..(r + 1) * n];
            let mut sum = 0.0f32;
            for ((o, v), &mk) in out.iter_mut().zip(xr).zip(mr) {
                if mk > MASKED {
                    *o = (v + mk - max).exp();
                    sum += *o;
                }
            }
            let inv = 1.0 / sum;
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        let out = Tensor::from_parts(vec![m, n], data);
        self.push("softmax_rows", out, Op::Softmax(x), &[x])
    }

    /// Mean negative log-likelihood over rows whose `ignore` flag is false.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: &[bool]) -> Result<Var> {
        let tl = self.value(logits);
        let (t, v) = tl.expect_2d("cross_entropy")?;
        if targets.len() != t || ignore.len() != t {
            return Err(shape_err("cross_entropy", tl.shape(), &[targets.len(), ignore.len()]));
        }
        let active: Vec<bool> = ignore.iter().map(|i| !i).collect();
        let count = active.iter().filter(|a| **a).count();
        if count == 0 {
            return Err(VoraError::EmptySupervision);
        }
        let mut probs = vec![0.0; t * v];
        let mut total = 0.0f64;
        for r in 0..t {
            let row = tl.row(r);
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = row.iter().map(|x| ((x - max) as f64).exp()).sum::<f64>().ln() + max as f64;
            for (p, x) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = ((*x as f64) - lse).exp() as f32;
            }
            if active[r] {
                let tgt = targets[r];
                if tgt >= v {
                    return Err(VoraError::InvalidTensor(format!("target {tgt} outside vocab {v}")));
                }
                total += lse - row[tgt] as f64;
            }
        }
        let out = Tensor::scalar((total / count as f64) as f32);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            active,
            probs,
        };
        self.push("cross_entropy", out, op, &[logits])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        self.push("transpose", out, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| VoraError::InvalidTensor("concat of nothing".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(VoraError::InvalidTensor(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total_axis = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            total_axis += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total_axis;
        let out = Tensor::from_parts(shape, data);
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        self.push("concat", out, op, inputs)
    }

    /// Gathers rows of `table[V, d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (vocab, d) = tt.expect_2d("embedding")?;
        if ids.is_empty() {
            return Err(VoraError::InvalidTensor("embedding of empty id list".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(VoraError::InvalidTensor(format!("token id {id} outside vocab {vocab}")));
            }
            data.extend_from_slice(tt.row(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        self.push("embedding", out, op, &[table])
    }

    /// Rows `[start, end)` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.expect_2d("slice_rows")?;
        if start >= end || end > r {
            return Err(VoraError::InvalidTensor(format!("row slice {start}..{end} of {r}")));
        }
        let out = Tensor::from_parts(vec![end - start, c], tx.data()[start * c..end * c].to_vec());
        self.push("slice_rows", out, Op::SliceRows { x, start }, &[x])
    }

    /// Columns `[start, end)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.expect_2d("slice_cols")?;
        if start >= end || end > c {
            return Err(VoraError::InvalidTensor(format!("column slice {start}..{end} of {c}")));
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for row in tx.data().chunks(c) {
            data.extend_from_slice(&row[start..end]);
        }
        let out = Tensor::from_parts(vec![r, end - start], data);
        self.push("slice_cols", out, Op::SliceCols { x, start }, &[x])
    }

    /// Rotary position encoding over adjacent column pairs; row `i` is rotated by `positions[i]`.
    pub fn rope(&mut self, x: Var, positions: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (r, d) = tx.expect_2d("rope")?;
        if d % 2 != 0 || positions.len() != r {
            return Err(shape_err("rope", tx.shape(), &[positions.len()]));
        }
        let mut data = tx.data().to_vec();
        for (row, &pos) in data.chunks_mut(d).zip(positions) {
            for p in 0..d / 2 {
                let (sin, cos) = rope_angle(pos, p, d).sin_cos();
                let (a, b) = (row[2 * p], row[2 * p + 1]);
                row[2 * p] = a * cos - b * sin;
                row[2 * p + 1] = a * sin + b * cos;
            }
        }
        let out = Tensor::from_parts(vec![r, d], data);
        let op = Op::Rope {
            x,
            positions: positions.to_vec(),
        };
        self.push("rope", out, op, &[x])
    }

    /// Row-wise cosine similarity of two `[S, d]` tensors, giving `[S]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (s, _) = ta.expect_2d("cosine_rows")?;
        if ta.shape() != tb.shape() {
            return Err(shape_err("cosine_rows", ta.shape(), tb.shape()));
        }
        let mut data = Vec::with_capacity(s);
        for r in 0..s {
            let (ra, rb) = (ta.row(r), tb.row(r));
            let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
            for (x, y) in ra.iter().zip(rb) {
                dot += (*x as f64) * (*y as f64);
                na += (*x as f64) * (*x as f64);
                nb += (*y as f64) * (*y as f64);
            }
            if na == 0.0 || nb == 0.0 {
                return Err(VoraError::ZeroNorm { row: r });
            }
            data.push((dot / (na.sqrt() * nb.sqrt())) as f32);
        }
        let out = Tensor::from_parts(vec![s], data);
        self.push("cosine_rows", out, Op::CosineRows(a, b), &[a, b])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|&v| v as f64).sum::<f64>();
        self.push("sum", Tensor::scalar(s as f32), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64;
        self.push("mean", Tensor::scalar(s as f32), Op::Mean(x), &[x])
    }
}

/// Plain matrix product helper for backward rules.
pub(crate) fn mm(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    kernels::matmul(a, b, &mut out, m, k, n);
    out
}

pub(crate) fn mm_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    kernels::matmul_nt(a, b, &mut out, m, k, n);
    out
}

pub(crate) fn mm_tn(a: &[f32], b: &[f32], m: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    kernels::matmul_tn(a, b, &mut out, m, n);
    out
}
