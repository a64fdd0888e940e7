//! Forward values of individual tape ops against hand arithmetic and direct formulas.

use rand::Rng;
use vora::autograd::{Tape, MASKED};
use vora::rng::rng_for;
use vora::Tensor;

fn t2(rows: &[&[f32]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn matmul_two_by_two() {
    let mut tape = Tape::new();
    let a = tape.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = tape.constant(t2(&[&[5.0, 6.0], &[7.0, 8.0]]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
    // a · bᵀ with b already transposed
    let bt = tape.constant(t2(&[&[5.0, 7.0], &[6.0, 8.0]]));
    let c = tape.matmul_nt(a, bt).unwrap();
    assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_inner_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let msg = tape.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn softmax_row_matches_exp_over_sum() {
    let mut tape = Tape::new();
    let x = tape.constant(t2(&[&[1.0, 2.0, 3.0]]));
    let p = tape.softmax_rows(x, &Tensor::zeros(&[1, 3])).unwrap();
    let z: f64 = (1..=3).map(|v| (v as f64).exp()).sum();
    for (i, got) in tape.value(p).data().iter().enumerate() {
        let want = ((i + 1) as f64).exp() / z;
        assert!((*got as f64 - want).abs() <= 1e-6, "{got} vs {want}");
    }
}

#[test]
fn masked_entries_are_exactly_zero() {
    let mut tape = Tape::new();
    let x = tape.constant(t2(&[&[1.0, 2.0, 3.0], &[50.0, -4.0, 9.0]]));
    let mask = t2(&[&[0.0, MASKED, 0.0], &[MASKED, MASKED, 0.0]]);
    let p = tape.softmax_rows(x, &mask).unwrap();
    let p = tape.value(p);
    assert_eq!(p.row(0)[1], 0.0);
    assert_eq!(p.row(1), &[0.0, 0.0, 1.0]);
    let z = 1f64.exp() + 3f64.exp();
    assert!((p.row(0)[0] as f64 - 1f64.exp() / z).abs() <= 1e-6);
}

#[test]
fn fully_masked_row_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.constant(t2(&[&[1.0, 2.0]]));
    assert!(tape.softmax_rows(x, &Tensor::full(&[1, 2], MASKED)).is_err());
}

#[test]
fn rms_norm_three_four() {
    let mut tape = Tape::new();
    let x = tape.constant(t2(&[&[3.0, 4.0]]));
    let g = tape.constant(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
    let y = tape.rms_norm(x, g, 1e-6).unwrap();
    let r = (12.5f64 + 1e-6).sqrt();
    let got = tape.value(y).data();
    assert!((got[0] as f64 - 3.0 / r).abs() <= 1e-6);
    assert!((got[1] as f64 - 4.0 / r).abs() <= 1e-6);
}

#[test]
fn cross_entropy_matches_log_sum_exp() {
    let mut rng = rng_for(5, "ce", 0);
    let logits: Vec<f32> = (0..5).map(|_| rng.random_range(-3.0f32..3.0)).collect();
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::new(vec![1, 5], logits.clone()).unwrap());
    let loss = tape.cross_entropy(l, &[3], &[false]).unwrap();
    let lse = logits.iter().map(|&v| (v as f64).exp()).sum::<f64>().ln();
    let want = lse - logits[3] as f64;
    assert!((tape.value(loss).item() as f64 - want).abs() <= 1e-5);
}

#[test]
fn cross_entropy_averages_only_kept_rows() {
    let mut tape = Tape::new();
    let l = tape.constant(t2(&[&[0.0, 0.0], &[9.0, -9.0], &[2.0, 0.0]]));
    let loss = tape.cross_entropy(l, &[0, 1, 0], &[false, true, false]).unwrap();
    let want = (2f64.ln() + (1.0 + (-2f64).exp()).ln()) / 2.0;
    assert!((tape.value(loss).item() as f64 - want).abs() <= 1e-6);
}

#[test]
fn cosine_rows_match_dot_over_norms() {
    let mut rng = rng_for(9, "cos", 0);
    let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let b = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.cosine_rows(va, vb).unwrap();
    for r in 0..3 {
        let (x, y) = (a.row(r), b.row(r));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| *p as f64 * *q as f64).sum();
        let nx: f64 = x.iter().map(|p| (*p as f64).powi(2)).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|p| (*p as f64).powi(2)).sum::<f64>().sqrt();
        let got = tape.value(c).data()[r] as f64;
        assert!((got - dot / (nx * ny)).abs() <= 1e-6);
    }
}

#[test]
fn gelu_and_silu_at_known_points() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let g = tape.gelu(x).unwrap();
    let s = tape.silu(x).unwrap();
    let c = (2.0 / std::f64::consts::PI).sqrt();
    for (i, &v) in [-1.0f64, 0.0, 2.0].iter().enumerate() {
        let gelu = 0.5 * v * (1.0 + (c * (v + 0.044715 * v.powi(3))).tanh());
        let silu = v / (1.0 + (-v).exp());
        assert!((tape.value(g).data()[i] as f64 - gelu).abs() <= 1e-6);
        assert!((tape.value(s).data()[i] as f64 - silu).abs() <= 1e-6);
    }
}

#[test]
fn rope_preserves_pair_norms_and_fixes_position_zero() {
    let mut rng = rng_for(2, "rope", 0);
    let x = Tensor::randn(&[3, 6], 1.0, &mut rng);
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.rope(v, &[0, 1, 7]).unwrap();
    let y = tape.value(y);
    assert_eq!(y.row(0), x.row(0));
    for r in 0..3 {
        for p in 0..3 {
            let n0 = x.row(r)[2 * p].hypot(x.row(r)[2 * p + 1]);
            let n1 = y.row(r)[2 * p].hypot(y.row(r)[2 * p + 1]);
            assert!((n0 - n1).abs() <= 1e-5);
        }
    }
    // first pair rotates by exactly `pos` radians
    let (s, c) = 7f32.sin_cos();
    let (a, b) = (x.row(2)[0], x.row(2)[1]);
    assert!((y.row(2)[0] - (a * c - b * s)).abs() <= 1e-5);
}

#[test]
fn backward_of_sum_of_product() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true);
    let b = tape.leaf(Tensor::new(vec![3], vec![4.0, 5.0, 6.0]).unwrap(), true);
    let p = tape.mul(a, b).unwrap();
    let s = tape.sum(p).unwrap();
    assert_eq!(tape.value(s).item(), 32.0);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(a).unwrap().data(), &[4.0, 5.0, 6.0]);
    assert_eq!(g.get(b).unwrap().data(), &[1.0, 2.0, 3.0]);
}
