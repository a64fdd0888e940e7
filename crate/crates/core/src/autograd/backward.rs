use super::ops::{mm, mm_nt, mm_tn, rope_angle, sigmoid, GELU_C, GELU_K};
use super::{Op, Tape, Var};
use crate::error::{Result, VoraError};
use crate::tensor::Tensor;

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `v` does not require grad or is unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

struct Accum<'t> {
    tape: &'t Tape,
    grads: Vec<Option<Vec<f32>>>,
}

impl Accum<'_> {
    fn wants(&self, v: Var) -> bool {
        self.tape.requires_grad(v)
    }

    fn add(&mut self, v: Var, contrib: Vec<f32>) {
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&contrib) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }
}

impl Tape {
    /// Back-propagates from a scalar `loss` through every recorded op.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(VoraError::NotScalar(lv.shape().to_vec()));
        }
        let mut acc = Accum {
            tape: self,
            grads: vec![None; self.len()],
        };
        if self.requires_grad(loss) {
            acc.grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = acc.grads[i].take() else {
                continue;
            };
            self.backward_node(Var(i), &g, &mut acc);
            acc.grads[i] = Some(g);
        }
        let grads = acc
            .grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, out: Var, g: &[f32], acc: &mut Accum<'_>) {
        let node = self.node(out);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if acc.wants(*a) {
                    acc.add(*a, mm_nt(g, tb.data(), m, n, k));
                }
                if acc.wants(*b) {
                    acc.add(*b, mm_tn(ta.data(), g, k, n));
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[0];
                if acc.wants(*a) {
                    acc.add(*a, mm(g, tb.data(), m, n, k));
                }
                if acc.wants(*b) {
                    acc.add(*b, mm_tn(g, ta.data(), n, k));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if acc.wants(v) {
                        acc.add(v, g.to_vec());
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if acc.wants(*x) {
                    acc.add(*x, g.to_vec());
                }
                if acc.wants(*bias) {
                    let n = self.value(*bias).numel();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc.add(*bias, db);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if acc.wants(*a) {
                    acc.add(*a, g.iter().zip(tb.data()).map(|(g, y)| g * y).collect());
                }
                if acc.wants(*b) {
                    acc.add(*b, g.iter().zip(ta.data()).map(|(g, x)| g * x).collect());
                }
            }
            Op::Affine(x, s) => {
                if acc.wants(*x) {
                    acc.add(*x, g.iter().map(|g| g * s).collect());
                }
            }
            Op::Gelu(x) => {
                if acc.wants(*x) {
                    let dx = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(g, &x)| {
                            let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                            let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                            g * (0.5 * (1.0 + t) + 0.5 * x * dt)
                        })
                        .collect();
                    acc.add(*x, dx);
                }
            }
            Op::Silu(x) => {
                if acc.wants(*x) {
                    let dx = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(g, &x)| {
                            let s = sigmoid(x);
                            g * s * (1.0 + x * (1.0 - s))
                        })
                        .collect();
                    acc.add(*x, dx);
                }
            }
            Op::RmsNorm { x, gain, inv_rms } => self.rms_norm_backward(*x, *gain, inv_rms, g, acc),
            Op::Softmax(x) => {
                if acc.wants(*x) {
                    let p = &node.value;
                    let n = p.cols();
                    let mut dx = vec![0.0; p.numel()];
                    for ((dr, pr), gr) in dx.chunks_mut(n).zip(p.data().chunks(n)).zip(g.chunks(n)) {
                        let dot: f32 = pr.iter().zip(gr).map(|(p, g)| p * g).sum();
                        for ((d, p), g) in dr.iter_mut().zip(pr).zip(gr) {
                            *d = p * (g - dot);
                        }
                    }
                    acc.add(*x, dx);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                active,
                probs,
            } => {
                if acc.wants(*logits) {
                    let v = self.value(*logits).cols();
                    let count = active.iter().filter(|a| **a).count() as f32;
                    let scale = g[0] / count;
                    let mut dx = vec![0.0; probs.len()];
                    for (r, (&tgt, &on)) in targets.iter().zip(active).enumerate() {
                        if !on {
                            continue;
                        }
                        let row = &mut dx[r * v..(r + 1) * v];
                        for (d, p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *d = p * scale;
                        }
                        row[tgt] -= scale;
                    }
                    acc.add(*logits, dx);
                }
            }
            Op::Transpose(x) => {
                if acc.wants(*x) {
                    let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                    let mut dx = vec![0.0; g.len()];
                    crate::kernels::transpose(g, &mut dx, r, c);
                    acc.add(*x, dx);
                }
            }
            Op::Reshape(x) => {
                if acc.wants(*x) {
                    acc.add(*x, g.to_vec());
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.value(v).shape()[*axis] * inner;
                    if acc.wants(v) {
                        let mut dv = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            dv.extend_from_slice(&g[o * row + offset..o * row + offset + chunk]);
                        }
                        acc.add(v, dv);
                    }
                    offset += chunk;
                }
            }
            Op::Embedding { table, ids } => {
                if acc.wants(*table) {
                    let tt = self.value(*table);
                    let d = tt.cols();
                    let mut dt = vec![0.0; tt.numel()];
                    for (gr, &id) in g.chunks(d).zip(ids) {
                        for (a, b) in dt[id * d..(id + 1) * d].iter_mut().zip(gr) {
                            *a += b;
                        }
                    }
                    acc.add(*table, dt);
                }
            }
            Op::SliceRows { x, start } => {
                if acc.wants(*x) {
                    let tx = self.value(*x);
                    let c = tx.cols();
                    let mut dx = vec![0.0; tx.numel()];
                    dx[start * c..start * c + g.len()].copy_from_slice(g);
                    acc.add(*x, dx);
                }
            }
            Op::SliceCols { x, start } => {
                if acc.wants(*x) {
                    let tx = self.value(*x);
                    let c = tx.cols();
                    let w = node.value.cols();
                    let mut dx = vec![0.0; tx.numel()];
                    for (dr, gr) in dx.chunks_mut(c).zip(g.chunks(w)) {
                        dr[*start..start + w].copy_from_slice(gr);
                    }
                    acc.add(*x, dx);
                }
            }
            Op::Rope { x, positions } => {
                if acc.wants(*x) {
                    let d = node.value.cols();
                    let mut dx = g.to_vec();
                    for (row, &pos) in dx.chunks_mut(d).zip(positions) {
                        for p in 0..d / 2 {
                            let (sin, cos) = rope_angle(pos, p, d).sin_cos();
                            let (a, b) = (row[2 * p], row[2 * p + 1]);
                            row[2 * p] = a * cos + b * sin;
                            row[2 * p + 1] = -a * sin + b * cos;
                        }
                    }
                    acc.add(*x, dx);
                }
            }
            Op::CosineRows(a, b) => self.cosine_backward(*a, *b, g, acc),
            Op::Sum(x) => {
                if acc.wants(*x) {
                    acc.add(*x, vec![g[0]; self.value(*x).numel()]);
                }
            }
            Op::Mean(x) => {
                if acc.wants(*x) {
                    let n = self.value(*x).numel();
                    acc.add(*x, vec![g[0] / n as f32; n]);
                }
            }
        }
    }

    fn rms_norm_backward(&self, x: Var, gain: Var, inv_rms: &[f32], g: &[f32], acc: &mut Accum<'_>) {
        let (tx, tg) = (self.value(x), self.value(gain));
        let d = tx.cols();
        let want_x = acc.wants(x);
        let want_gain = acc.wants(gain);
        let mut dx = if want_x { vec![0.0; tx.numel()] } else { Vec::new() };
        let mut dgain = vec![0.0; d];
        for (r, (xr, gr)) in tx.data().chunks(d).zip(g.chunks(d)).enumerate() {
            let inv = inv_rms[r];
            if want_gain {
                for ((dg, x), g) in dgain.iter_mut().zip(xr).zip(gr) {
                    *dg += g * x * inv;
                }
            }
            if want_x {
                let proj: f32 = xr
                    .iter()
                    .zip(gr)
                    .zip(tg.data())
                    .map(|((x, g), w)| x * g * w)
                    .sum();
                let coeff = inv * inv * inv * proj / d as f32;
                for (((dx, x), g), w) in dx[r * d..(r + 1) * d].iter_mut().zip(xr).zip(gr).zip(tg.data()) {
                    *dx = inv * w * g - x * coeff;
                }
            }
        }
        if want_x {
            acc.add(x, dx);
        }
        if want_gain {
            acc.add(gain, dgain);
        }
    }

    fn cosine_backward(&self, a: Var, b: Var, g: &[f32], acc: &mut Accum<'_>) {
        let (ta, tb) = (self.value(a), self.value(b));
        let d = ta.cols();
        let mut da = vec![0.0; ta.numel()];
        let mut db = vec![0.0; tb.numel()];
        for (r, &gr) in g.iter().enumerate() {
            let (ra, rb) = (ta.row(r), tb.row(r));
            let (mut dot, mut na2, mut nb2) = (0.0f64, 0.0f64, 0.0f64);
            for (x, y) in ra.iter().zip(rb) {
                dot += (*x as f64) * (*y as f64);
                na2 += (*x as f64) * (*x as f64);
                nb2 += (*y as f64) * (*y as f64);
            }
            let (na, nb) = (na2.sqrt(), nb2.sqrt());
            let cos = dot / (na * nb);
            let gr = gr as f64;
            for i in 0..d {
                let (x, y) = (ra[i] as f64, rb[i] as f64);
                da[r * d + i] = (gr * (y / (na * nb) - cos * x / na2)) as f32;
                db[r * d + i] = (gr * (x / (na * nb) - cos * y / nb2)) as f32;
            }
        }
        if acc.wants(a) {
            acc.add(a, da);
        }
        if acc.wants(b) {
            acc.add(b, db);
        }
    }
}
