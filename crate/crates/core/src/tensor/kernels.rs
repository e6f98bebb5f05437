//! Row-major matrix products.
//!
//! Every output row is accumulated from the matching input row alone, in a
//! fixed order, so a row's result never depends on how many other rows share
//! the call. Batch-composition invariance tests rely on this.

/// `a (n×k) · b (k×m)`.
pub fn gemm_nn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g (n×m) · bᵀ` where `b` is `k×m`; result `n×k`.
pub fn gemm_nt(g: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            out[i * k + p] = dot(grow, brow);
        }
    }
    out
}

/// `aᵀ · g` where `a` is `n×k` and `g` is `n×m`; result `k×m`.
pub fn gemm_tn(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = (0..k).map(|p| a[i * k + p] * b[p * m + j]).sum();
            }
        }
        out
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn variants_agree_with_naive() {
        let (n, k, m) = (5, 7, 3);
        let a: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * m).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, n, k, m);
        let got = gemm_nn(&a, &b, n, k, m);
        for (x, y) in want.iter().zip(&got) {
            assert!((x - y).abs() < 1e-12);
        }
        let bt = transpose(&b, k, m);
        let got = gemm_nt(&a, &bt, n, k, m);
        for (x, y) in want.iter().zip(&got) {
            assert!((x - y).abs() < 1e-12);
        }
        let at = transpose(&a, n, k);
        let got = gemm_tn(&at, &b, k, n, m);
        for (x, y) in want.iter().zip(&got) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_independent_of_batch() {
        let (k, m) = (9, 4);
        let a: Vec<f64> = (0..3 * k).map(|i| (i as f64 * 0.71).sin()).collect();
        let b: Vec<f64> = (0..k * m).map(|i| (i as f64 * 0.13).cos()).collect();
        let full = gemm_nn(&a, &b, 3, k, m);
        let single = gemm_nn(&a[k..2 * k], &b, 1, k, m);
        assert_eq!(&full[m..2 * m], &single[..]);
    }
}
