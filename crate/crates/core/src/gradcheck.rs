//! Central finite-difference gradient checking.
//!
//! The scalar being differentiated is `Σ wᵢ·yᵢ` for a fixed random projection
//! `w`; the numeric side evaluates that sum in `f64` outside the tape, so the
//! only rounding it sees is the op's own `f32` forward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var, MASKED};
use crate::distill::{distill_loss, lm_loss, total_loss, DistillMode};
use crate::error::Result;
use crate::model::{MaskMode, Model, ModelConfig, SequenceInput, SequenceLayout, Session, Trainable};
use crate::rng::rng_for;
use crate::tensor::Tensor;
use crate::vision::{Image, Teacher};

pub const FD_STEP: f32 = 1e-3;
pub const REL_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= REL_TOL
    }
}

/// Worst `|analytic − fd| / max(1, |fd|)` over every coordinate of every input.
pub fn check_fn<F>(inputs: &[Tensor], f: F, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let y = f(&mut tape, &vars)?;
    let y_shape = tape.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::uniform(&y_shape, -1.0, 1.0, &mut rng);
    let wv = tape.constant(w.clone());
    let prod = tape.mul(y, wv)?;
    let loss = tape.sum(prod)?;
    let grads = tape.backward(loss)?;

    let project = |ins: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.constant(x.clone())).collect();
        let y = f(&mut t, &vs)?;
        Ok(t.value(y)
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum())
    };

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|g| g.data().to_vec());
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            let (xp, xm) = (x0 + FD_STEP, x0 - FD_STEP);
            work[i].data_mut()[j] = xp;
            let lp = project(&work)?;
            work[i].data_mut()[j] = xm;
            let lm = project(&work)?;
            work[i].data_mut()[j] = x0;
            let fd = (lp - lm) / (xp as f64 - xm as f64);
            let an = analytic.as_ref().map_or(0.0, |g| g[j] as f64);
            worst = worst.max((an - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn extent<R: Rng>(rng: &mut R) -> usize {
    rng.random_range(1..=8)
}

fn randn<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Rows with RMS ≥ 0.1. Closer to the origin `x/rms(x)` bends on the scale of
/// the finite-difference step and the central difference stops being an oracle.
fn rows_away_from_zero<R: Rng>(m: usize, d: usize, rng: &mut R) -> Tensor {
    loop {
        let t = randn(&[m, d], rng);
        let ok = (0..m).all(|r| t.row(r).iter().map(|v| v * v).sum::<f32>() / d as f32 >= 0.01);
        if ok {
            return t;
        }
    }
}

type OpCase = fn(&mut ChaCha8Rng, u64) -> Result<f64>;

fn op_cases() -> Vec<(&'static str, OpCase)> {
    vec![
        ("matmul", |rng, s| {
            let (m, k, n) = (extent(rng), extent(rng), extent(rng));
            check_fn(&[randn(&[m, k], rng), randn(&[k, n], rng)], |t, v| t.matmul(v[0], v[1]), s)
        }),
        ("matmul_nt", |rng, s| {
            let (m, k, n) = (extent(rng), extent(rng), extent(rng));
            check_fn(&[randn(&[m, k], rng), randn(&[n, k], rng)], |t, v| t.matmul_nt(v[0], v[1]), s)
        }),
        ("add", |rng, s| {
            let sh = [extent(rng), extent(rng)];
            check_fn(&[randn(&sh, rng), randn(&sh, rng)], |t, v| t.add(v[0], v[1]), s)
        }),
        ("mul", |rng, s| {
            let sh = [extent(rng), extent(rng)];
            check_fn(&[randn(&sh, rng), randn(&sh, rng)], |t, v| t.mul(v[0], v[1]), s)
        }),
        ("add_bias", |rng, s| {
            let (m, n) = (extent(rng), extent(rng));
            check_fn(&[randn(&[m, n], rng), randn(&[n], rng)], |t, v| t.add_bias(v[0], v[1]), s)
        }),
        ("scale", |rng, s| {
            let sh = [extent(rng), extent(rng)];
            let k = rng.random_range(-2.0..2.0);
            check_fn(&[randn(&sh, rng)], move |t, v| t.scale(v[0], k), s)
        }),
        ("gelu", |rng, s| {
            let sh = [extent(rng), extent(rng)];
            check_fn(&[randn(&sh, rng)], |t, v| t.gelu(v[0]), s)
        }),
        ("silu", |rng, s| {
            let sh = [extent(rng), extent(rng)];
            check_fn(&[randn(&sh, rng)], |t, v| t.silu(v[0]), s)
        }),
        ("rms_norm", |rng, s| {
            let (m, d) = (extent(rng), extent(rng));
            check_fn(&[rows_away_from_zero(m, d, rng), randn(&[d], rng)], |t, v| t.rms_norm(v[0], v[1], 1e-5), s)
        }),
        ("softmax_rows", |rng, s| {
            let (m, n) = (extent(rng), extent(rng));
            let mut mask = Tensor::zeros(&[m, n]);
            for r in 0..m {
                let keep = rng.random_range(0..n);
                for c in 0..n {
                    if c != keep && rng.random_bool(0.3) {
                        mask.data_mut()[r * n + c] = MASKED;
                    }
                }
            }
            check_fn(&[randn(&[m, n], rng)], move |t, v| t.softmax_rows(v[0], &mask), s)
        }),
        ("cross_entropy", |rng, s| {
            let (m, n) = (extent(rng), extent(rng));
            let targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
            let mut ignore: Vec<bool> = (0..m).map(|_| rng.random_bool(0.3)).collect();
            ignore[0] = false;
            check_fn(&[randn(&[m, n], rng)], move |t, v| t.cross_entropy(v[0], &targets, &ignore), s)
        }),
        ("transpose", |rng, s| {
            let sh = [extent(rng), extent(rng)];
            check_fn(&[randn(&sh, rng)], |t, v| t.transpose(v[0]), s)
        }),
        ("reshape", |rng, s| {
            let (a, b) = (extent(rng), extent(rng));
            check_fn(&[randn(&[a, b], rng)], move |t, v| t.reshape(v[0], &[b, a]), s)
        }),
        ("concat", |rng, s| {
            let axis = rng.random_range(0..2);
            let (a, b, c) = (extent(rng), extent(rng), extent(rng));
            let (s1, s2) = if axis == 0 { ([a, c], [b, c]) } else { ([c, a], [c, b]) };
            check_fn(&[randn(&s1, rng), randn(&s2, rng)], move |t, v| t.concat(v, axis), s)
        }),
        ("embedding", |rng, s| {
            let (vocab, d, n) = (extent(rng), extent(rng), extent(rng));
            let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
            check_fn(&[randn(&[vocab, d], rng)], move |t, v| t.embedding(v[0], &ids), s)
        }),
        ("slice_rows", |rng, s| {
            let (r, c) = (extent(rng), extent(rng));
            let a = rng.random_range(0..r);
            let b = rng.random_range(a + 1..=r);
            check_fn(&[randn(&[r, c], rng)], move |t, v| t.slice_rows(v[0], a, b), s)
        }),
        ("slice_cols", |rng, s| {
            let (r, c) = (extent(rng), extent(rng));
            let a = rng.random_range(0..c);
            let b = rng.random_range(a + 1..=c);
            check_fn(&[randn(&[r, c], rng)], move |t, v| t.slice_cols(v[0], a, b), s)
        }),
        ("rope", |rng, s| {
            let (r, d) = (extent(rng), 2 * rng.random_range(1..=4));
            let pos: Vec<usize> = (0..r).map(|_| rng.random_range(0..16)).collect();
            check_fn(&[randn(&[r, d], rng)], move |t, v| t.rope(v[0], &pos), s)
        }),
        ("cosine_rows", |rng, s| {
            let sh = [extent(rng), extent(rng)];
            check_fn(&[randn(&sh, rng), randn(&sh, rng)], |t, v| t.cosine_rows(v[0], v[1]), s)
        }),
        ("sum", |rng, s| {
            let sh = [extent(rng), extent(rng)];
            check_fn(&[randn(&sh, rng)], |t, v| t.sum(v[0]), s)
        }),
        ("mean", |rng, s| {
            let sh = [extent(rng), extent(rng)];
            check_fn(&[randn(&sh, rng)], |t, v| t.mean(v[0]), s)
        }),
    ]
}

/// Runs every differentiable op through `trials` random small-tensor cases.
pub fn check_ops(trials: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for (name, case) in op_cases() {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let s = rng.random();
            worst = worst.max(case(&mut rng, s)?);
        }
        reports.push(CheckReport {
            name: name.to_string(),
            trials,
            max_rel_err: worst,
        });
    }
    Ok(reports)
}

/// The combined objective on a nano model (every extent ≤ 8), differentiated
/// with respect to every student tensor at once: base weights, adapters with
/// nonzero `b`, vision embedding and AuxHeads.
pub fn check_end_to_end(seed: u64) -> Result<CheckReport> {
    let cfg = ModelConfig::nano(8);
    let mut model = Model::init(cfg.clone(), seed)?;
    model.attach_lora(seed)?;
    model.attach_aux_heads(&[0, 1], seed)?;
    let mut rng = rng_for(seed, "gradcheck", 0);
    let b_names: Vec<String> = model
        .params
        .with_prefix("lora.")
        .filter(|(n, _)| n.ends_with(".b"))
        .map(|(n, _)| n.clone())
        .collect();
    for n in b_names {
        let shape = model.params.get(&n)?.shape().to_vec();
        model.params.insert(n, Tensor::randn(&shape, 0.3, &mut rng));
    }
    let teacher = Teacher::init(&cfg, seed)?;
    let image = Image::new(2, 2, Tensor::uniform(&[12], 0.0, 1.0, &mut rng).into_data())?;
    let states = teacher.forward(&image)?;
    let tokens = [3, 3, 3, 3, 1, 5, 6, 7, 2];
    let layout = SequenceLayout {
        vision: 0..4,
        text: 4..9,
        supervise_from: 6,
    };
    let input = SequenceInput {
        tokens: &tokens,
        layout: &layout,
        image: Some(&image),
    };
    let names: Vec<String> = model.params.names().cloned().collect();
    let inputs = names
        .iter()
        .map(|n| model.params.get(n).cloned())
        .collect::<Result<Vec<_>>>()?;
    let all = Trainable::all();
    let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let mut sess = Session::with_tape(&model.params, &all, std::mem::take(tape));
        for (n, v) in names.iter().zip(vars) {
            sess.bind(n, *v);
        }
        let out = model.forward(&mut sess, &input, MaskMode::Hybrid)?;
        let lm = lm_loss(&mut sess.tape, out.logits, &layout, &tokens)?;
        let d = distill_loss(&mut sess, &out.taps, &states, DistillMode::BlockWise, layout.vision.clone())?;
        let total = total_loss(&mut sess.tape, d.total, lm, 1.0)?;
        *tape = sess.into_tape();
        Ok(total)
    };
    Ok(CheckReport {
        name: "end_to_end".into(),
        trials: 1,
        max_rel_err: check_fn(&inputs, f, seed)?,
    })
}

/// Every op case plus the end-to-end check.
pub fn check_all(trials: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut reports = check_ops(trials, seed)?;
    reports.push(check_end_to_end(seed)?);
    Ok(reports)
}
