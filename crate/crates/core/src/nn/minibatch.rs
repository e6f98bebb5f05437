//! Minibatch discrimination: cross-sample closeness features.
//!
//! Each row of `F (n×A)` is projected through `T (A×B×C)` into `M_i (B×C)`.
//! For every kernel `b`, `c_b(i, j) = exp(−‖M_{i,b} − M_{j,b}‖₁)` and the side
//! feature is `o(x_i)_b = Σ_j c_b(i, j)`.

use crate::tensor::{Tape, Tensor};

use super::{NnError, Result};

/// Shape of the projection tensor `T`, stored as an `A × (B·C)` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelShape {
    pub input: usize,
    pub kernels: usize,
    pub kernel_dim: usize,
}

/// Side features `o(X)` (`n×B`) for features `f (n×A)` and projection `t`.
///
/// With `include_self` the sum runs over every `j` including `i`, which adds
/// the constant `exp(0) = 1` per kernel; otherwise `j ≠ i`.
pub fn minibatch_features(
    tape: &Tape,
    f: &Tensor,
    t: &Tensor,
    shape: KernelShape,
    include_self: bool,
) -> Result<Tensor> {
    let KernelShape {
        input,
        kernels,
        kernel_dim,
    } = shape;
    if f.shape().rank() != 2 || f.cols() != input {
        return Err(NnError::Shape(format!(
            "minibatch features expect input width {input}, got shape {}",
            f.shape()
        )));
    }
    if t.dims() != [input, kernels * kernel_dim] {
        return Err(NnError::Shape(format!(
            "projection tensor must be {input}×{}, got {}",
            kernels * kernel_dim,
            t.shape()
        )));
    }
    let n = f.rows();
    if n == 0 {
        return Err(NnError::EmptyBatch("minibatch features"));
    }
    let m = tape.matmul(f, t)?;
    closeness(tape, &m, n, kernels, kernel_dim, include_self)
}

/// The fused `M → o` step with its adjoint.
fn closeness(
    tape: &Tape,
    m: &Tensor,
    n: usize,
    kernels: usize,
    kernel_dim: usize,
    include_self: bool,
) -> Result<Tensor> {
    let width = kernels * kernel_dim;
    let md = m.data();
    // kern[(i*n + j)*B + b] = c_b(i, j); symmetric in i, j.
    let mut kern = vec![0.0; n * n * kernels];
    for i in 0..n {
        for j in i..n {
            for b in 0..kernels {
                let (ri, rj) = (i * width + b * kernel_dim, j * width + b * kernel_dim);
                let dist: f64 = (0..kernel_dim).map(|c| (md[ri + c] - md[rj + c]).abs()).sum();
                let k = (-dist).exp();
                kern[(i * n + j) * kernels + b] = k;
                kern[(j * n + i) * kernels + b] = k;
            }
        }
    }
    let mut out = vec![0.0; n * kernels];
    for i in 0..n {
        for j in 0..n {
            if i == j && !include_self {
                continue;
            }
            for b in 0..kernels {
                out[i * kernels + b] += kern[(i * n + j) * kernels + b];
            }
        }
    }

    let mc = m.detach();
    tape.custom([n, kernels], out, &[m], move |g, _| {
        let md = mc.data();
        let mut gm = vec![0.0; n * width];
        // ∂/∂M[p,b,c] = −Σ_j (G[p,b] + G[j,b]) · c_b(p,j) · sign(M[p,b,c] − M[j,b,c])
        for p in 0..n {
            for j in 0..n {
                if p == j {
                    continue;
                }
                for b in 0..kernels {
                    let w = (g[p * kernels + b] + g[j * kernels + b]) * kern[(p * n + j) * kernels + b];
                    if w == 0.0 {
                        continue;
                    }
                    let (rp, rj) = (p * width + b * kernel_dim, j * width + b * kernel_dim);
                    for c in 0..kernel_dim {
                        let diff = md[rp + c] - md[rj + c];
                        if diff > 0.0 {
                            gm[rp + c] -= w;
                        } else if diff < 0.0 {
                            gm[rp + c] += w;
                        }
                    }
                }
            }
        }
        vec![Some(gm)]
    })
    .map_err(NnError::from)
}

/// Side features for a real and a generated batch, each computed within its
/// own source, concatenated after the input features.
pub fn minibatch_layer_forward(
    tape: &Tape,
    f_real: &Tensor,
    f_fake: &Tensor,
    t: &Tensor,
    shape: KernelShape,
    include_self: bool,
) -> Result<(Tensor, Tensor)> {
    if f_real.rows() == 0 || f_fake.rows() == 0 || f_real.numel() == 0 || f_fake.numel() == 0 {
        return Err(NnError::EmptyBatch("minibatch layer"));
    }
    let o_real = minibatch_features(tape, f_real, t, shape, include_self)?;
    let o_fake = minibatch_features(tape, f_fake, t, shape, include_self)?;
    Ok((tape.concat_cols(f_real, &o_real)?, tape.concat_cols(f_fake, &o_fake)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check_many;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent triple loop over b, j, c straight from the definition.
    fn oracle(f: &[Vec<f64>], t: &[Vec<Vec<f64>>], include_self: bool) -> Vec<Vec<f64>> {
        let (n, a) = (f.len(), f[0].len());
        let (bk, ck) = (t[0].len(), t[0][0].len());
        let mproj: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|i| {
                (0..bk)
                    .map(|b| (0..ck).map(|c| (0..a).map(|k| f[i][k] * t[k][b][c]).sum()).collect())
                    .collect()
            })
            .collect();
        (0..n)
            .map(|i| {
                (0..bk)
                    .map(|b| {
                        let mut s = 0.0;
                        for j in 0..n {
                            if j == i && !include_self {
                                continue;
                            }
                            let mut d = 0.0;
                            for c in 0..ck {
                                d += (mproj[i][b][c] - mproj[j][b][c]).abs();
                            }
                            s += (-d).exp();
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    fn random_t(rng: &mut ChaCha8Rng, a: usize, b: usize, c: usize) -> Vec<Vec<Vec<f64>>> {
        (0..a)
            .map(|_| {
                (0..b)
                    .map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect()
    }

    fn flatten_t(t: &[Vec<Vec<f64>>]) -> Tensor {
        let (a, b, c) = (t.len(), t[0].len(), t[0][0].len());
        let data = t.iter().flatten().flatten().copied().collect();
        Tensor::matrix(a, b * c, data).unwrap()
    }

    #[test]
    fn single_row_yields_ones() {
        let tape = Tape::new();
        let f = Tensor::matrix(1, 3, vec![0.4, -2.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = flatten_t(&random_t(&mut rng, 3, 4, 2));
        let shape = KernelShape {
            input: 3,
            kernels: 4,
            kernel_dim: 2,
        };
        let o = minibatch_features(&tape, &f, &t, shape, true).unwrap();
        assert_eq!(o.data(), &[1.0; 4]);
    }

    #[test]
    fn identical_rows_yield_two() {
        let tape = Tape::new();
        let f = Tensor::matrix(2, 2, vec![0.5, 1.5, 0.5, 1.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = flatten_t(&random_t(&mut rng, 2, 3, 2));
        let shape = KernelShape {
            input: 2,
            kernels: 3,
            kernel_dim: 2,
        };
        let o = minibatch_features(&tape, &f, &t, shape, true).unwrap();
        assert_eq!(o.data(), &[2.0; 6]);
    }

    #[test]
    fn fixed_example_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tn = random_t(&mut rng, 2, 2, 3);
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let want = oracle(&rows, &tn, true);
        let tape = Tape::new();
        let f = Tensor::from_rows(&rows).unwrap();
        let shape = KernelShape {
            input: 2,
            kernels: 2,
            kernel_dim: 3,
        };
        let o = minibatch_features(&tape, &f, &flatten_t(&tn), shape, true).unwrap();
        for i in 0..2 {
            for b in 0..2 {
                assert!((o.get(i, b) - want[i][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn excluding_self_subtracts_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tn = random_t(&mut rng, 3, 2, 2);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let tape = Tape::new();
        let f = Tensor::from_rows(&rows).unwrap();
        let shape = KernelShape {
            input: 3,
            kernels: 2,
            kernel_dim: 2,
        };
        let with = minibatch_features(&tape, &f, &flatten_t(&tn), shape, true).unwrap();
        let without = minibatch_features(&tape, &f, &flatten_t(&tn), shape, false).unwrap();
        let want = oracle(&rows, &tn, false);
        for i in 0..4 {
            for b in 0..2 {
                assert!((with.get(i, b) - without.get(i, b) - 1.0).abs() < 1e-12);
                assert!((without.get(i, b) - want[i][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let tape = Tape::new();
        let f = Tensor::zeros([2, 3]);
        let t = Tensor::zeros([4, 6]);
        let shape = KernelShape {
            input: 4,
            kernels: 2,
            kernel_dim: 3,
        };
        assert!(matches!(
            minibatch_features(&tape, &f, &t, shape, true),
            Err(NnError::Shape(_))
        ));
    }

    #[test]
    fn collapsed_fake_batch_signature() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = KernelShape {
            input: 3,
            kernels: 1,
            kernel_dim: 4,
        };
        let t = flatten_t(&random_t(&mut rng, 3, 1, 4));
        let fake = Tensor::from_rows(&vec![vec![0.2, -0.1, 0.7]; 8]).unwrap();
        let real_rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let real = Tensor::from_rows(&real_rows).unwrap();
        let tape = Tape::new();
        let (r, f) = minibatch_layer_forward(&tape, &real, &fake, &t, shape, true).unwrap();
        for i in 0..8 {
            assert_eq!(f.get(i, 3), 8.0);
            assert!(r.get(i, 3) < 8.0);
            assert_eq!(&r.row(i)[..3], real.row(i));
            assert_eq!(&f.row(i)[..3], fake.row(i));
        }
    }

    fn min_pair_gap(f: &Tensor, t: &Tensor) -> f64 {
        let m = Tape::new().matmul(f, t).unwrap();
        let mut gap = f64::INFINITY;
        for i in 0..m.rows() {
            for j in i + 1..m.rows() {
                for c in 0..m.cols() {
                    gap = gap.min((m.get(i, c) - m.get(j, c)).abs());
                }
            }
        }
        gap
    }

    #[test]
    fn gradient_through_features_and_projection() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = KernelShape {
                input: 3,
                kernels: 2,
                kernel_dim: 3,
            };
            // |·| is not differentiable where two projections coincide; draw
            // instances whose pairwise gaps clear the finite-difference step.
            let (f, t) = loop {
                let f = Tensor::matrix(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let t = Tensor::matrix(3, 6, (0..18).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
                if min_pair_gap(&f, &t) > 1e-3 {
                    break (f, t);
                }
            };
            let w = Tensor::matrix(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let err = grad_check_many(
                |tape, xs| {
                    let o = minibatch_features(tape, &xs[0], &xs[1], shape, true).map_err(|e| match e {
                        NnError::Tensor(t) => t,
                        other => panic!("{other}"),
                    })?;
                    Ok(tape.reduce_sum(&tape.mul(&o, &w)?))
                },
                &[f, t],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
