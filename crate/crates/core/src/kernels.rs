//! Raw matrix kernels over row-major slices.
//!
//! Every kernel computes each output row with a fixed accumulation order, so
//! the row-parallel variants are bit-identical to the sequential ones for any
//! thread count.

/// Work (in multiply-adds) below which the parallel kernels stay sequential.
pub const PAR_THRESHOLD: usize = 1 << 18;

const LANES: usize = 8;

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let a = &a[c * LANES..(c + 1) * LANES];
        let b = &b[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            acc[l] += a[l] * b[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * LANES..a.len() {
        tail += a[i] * b[i];
    }
    let mut s = 0.0;
    for v in acc {
        s += v;
    }
    s + tail
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

fn matmul_row(a_row: &[f32], b: &[f32], out_row: &mut [f32], n: usize) {
    out_row.fill(0.0);
    for (p, &av) in a_row.iter().enumerate() {
        if av != 0.0 {
            axpy(av, &b[p * n..(p + 1) * n], out_row);
        }
    }
}

fn matmul_nt_row(a_row: &[f32], b: &[f32], out_row: &mut [f32], k: usize) {
    for (j, o) in out_row.iter_mut().enumerate() {
        *o = dot(a_row, &b[j * k..(j + 1) * k]);
    }
}

fn matmul_tn_row(a: &[f32], b: &[f32], out_row: &mut [f32], i: usize, m: usize, n: usize) {
    out_row.fill(0.0);
    let rows = a.len() / m;
    for r in 0..rows {
        let av = a[r * m + i];
        if av != 0.0 {
            axpy(av, &b[r * n..(r + 1) * n], out_row);
        }
    }
}

/// `out[m,n] = a[m,k] · b[k,n]`, single-threaded.
pub fn matmul_seq(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for (i, row) in out.chunks_mut(n).enumerate().take(m) {
        matmul_row(&a[i * k..(i + 1) * k], b, row, n);
    }
}

/// `out[m,n] = a[m,k] · b[n,k]ᵀ`, single-threaded.
pub fn matmul_nt_seq(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for (i, row) in out.chunks_mut(n).enumerate().take(m) {
        matmul_nt_row(&a[i * k..(i + 1) * k], b, row, k);
    }
}

/// `out[m,n] = a[r,m]ᵀ · b[r,n]`, single-threaded.
pub fn matmul_tn_seq(a: &[f32], b: &[f32], out: &mut [f32], m: usize, n: usize) {
    for (i, row) in out.chunks_mut(n).enumerate().take(m) {
        matmul_tn_row(a, b, row, i, m, n);
    }
}

#[cfg(feature = "parallel")]
mod parallel {
    use rayon::prelude::*;

    use super::*;

    pub fn matmul_par(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| matmul_row(&a[i * k..(i + 1) * k], b, row, n));
        let _ = m;
    }

    pub fn matmul_nt_par(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| matmul_nt_row(&a[i * k..(i + 1) * k], b, row, k));
        let _ = m;
    }

    pub fn matmul_tn_par(a: &[f32], b: &[f32], out: &mut [f32], m: usize, n: usize) {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| matmul_tn_row(a, b, row, i, m, n));
    }
}

#[cfg(feature = "parallel")]
pub use parallel::{matmul_nt_par, matmul_par, matmul_tn_par};

#[cfg(feature = "parallel")]
#[inline]
fn go_parallel(work: usize, rows: usize) -> bool {
    rows > 1 && work >= PAR_THRESHOLD
}

pub fn matmul(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    #[cfg(feature = "parallel")]
    if go_parallel(m * k * n, m) {
        return matmul_par(a, b, out, m, k, n);
    }
    matmul_seq(a, b, out, m, k, n)
}

pub fn matmul_nt(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    #[cfg(feature = "parallel")]
    if go_parallel(m * k * n, m) {
        return matmul_nt_par(a, b, out, m, k, n);
    }
    matmul_nt_seq(a, b, out, m, k, n)
}

pub fn matmul_tn(a: &[f32], b: &[f32], out: &mut [f32], m: usize, n: usize) {
    #[cfg(feature = "parallel")]
    if go_parallel(a.len() * n, m) {
        return matmul_tn_par(a, b, out, m, n);
    }
    matmul_tn_seq(a, b, out, m, n)
}

pub fn transpose(a: &[f32], out: &mut [f32], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0f64;
                for p in 0..k {
                    s += a[i * k + p] as f64 * b[p * n + j] as f64;
                }
                out[i * n + j] = s as f32;
            }
        }
        out
    }

    fn seq(len: usize, seed: u32) -> Vec<f32> {
        (0..len)
            .map(|i| (((i as u32).wrapping_mul(2654435761).wrapping_add(seed)) % 1000) as f32 / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn all_layouts_agree_with_naive() {
        let (m, k, n) = (5, 19, 7);
        let a = seq(m * k, 1);
        let b = seq(k * n, 2);
        let want = naive(&a, &b, m, k, n);

        let mut out = vec![0.0; m * n];
        matmul(&a, &b, &mut out, m, k, n);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-5);
        }

        let mut bt = vec![0.0; k * n];
        transpose(&b, &mut bt, k, n);
        matmul_nt(&a, &bt, &mut out, m, k, n);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-5);
        }

        let mut at = vec![0.0; m * k];
        transpose(&a, &mut at, m, k);
        matmul_tn(&at, &b, &mut out, m, n);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_kernels_are_bit_identical() {
        let (m, k, n) = (33, 70, 41);
        let a = seq(m * k, 3);
        let b = seq(k * n, 4);
        let bt = seq(n * k, 5);
        let (mut s, mut p) = (vec![0.0; m * n], vec![0.0; m * n]);
        matmul_seq(&a, &b, &mut s, m, k, n);
        matmul_par(&a, &b, &mut p, m, k, n);
        assert_eq!(s, p);
        matmul_nt_seq(&a, &bt, &mut s, m, k, n);
        matmul_nt_par(&a, &bt, &mut p, m, k, n);
        assert_eq!(s, p);
        let at = seq(k * m, 6);
        matmul_tn_seq(&at, &b, &mut s, m, n);
        matmul_tn_par(&at, &b, &mut p, m, n);
        assert_eq!(s, p);
    }
}
