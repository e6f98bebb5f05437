//! The primitive op set. Each op computes its value eagerly and, when an input
//! is tracked, records its local adjoint on the tape.

use std::sync::Arc;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Result, Shape, Tape, Tensor, TensorError};

/// How the right-hand operand of a binary op lines up with the left.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Bcast {
    Same,
    /// `[d]` or `[1, d]` repeated over every row.
    Row,
    /// `[n, 1]` repeated over every column.
    Col,
    Scalar,
}

impl Bcast {
    fn classify(op: &'static str, lhs: &Shape, rhs: &Shape) -> Result<Self> {
        if lhs == rhs {
            return Ok(Bcast::Same);
        }
        if rhs.numel() == 1 {
            return Ok(Bcast::Scalar);
        }
        let (rows, cols) = lhs.as_matrix();
        let rd = rhs.dims();
        let row_like = matches!(rd, [d] if *d == cols) || matches!(rd, [1, d] if *d == cols);
        if row_like && lhs.rank() >= 1 {
            return Ok(Bcast::Row);
        }
        if lhs.rank() == 2 && matches!(rd, [n, 1] if *n == rows) {
            return Ok(Bcast::Col);
        }
        Err(TensorError::ShapeMismatch {
            op,
            lhs: lhs.clone(),
            rhs: rhs.clone(),
        })
    }

    #[inline]
    fn index(self, idx: usize, cols: usize) -> usize {
        match self {
            Bcast::Same => idx,
            Bcast::Row => idx % cols,
            Bcast::Col => idx / cols,
            Bcast::Scalar => 0,
        }
    }
}

fn reduce_to_rhs(kind: Bcast, grad: impl Iterator<Item = f64>, cols: usize, rhs_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; rhs_len];
    for (idx, g) in grad.enumerate() {
        out[kind.index(idx, cols)] += g;
    }
    out
}

impl Tape {
    fn binary(
        &self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: fn(f64, f64) -> f64,
        // (∂f/∂a, ∂f/∂b) at (a, b, out)
        df: fn(f64, f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        let kind = Bcast::classify(op, a.shape(), b.shape())?;
        let cols = a.cols();
        let (ad, bd) = (a.data(), b.data());
        let value: Vec<f64> = ad
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[kind.index(i, cols)]))
            .collect();
        let out = Arc::new(value.clone());
        let (ac, bc) = (a.detach(), b.detach());
        let b_len = b.numel();
        Ok(self.record(a.shape().clone(), value, &[a, b], move |g, needs| {
            let (ad, bd) = (ac.data(), bc.data());
            let partial = |i: usize| df(ad[i], bd[kind.index(i, cols)], out[i]);
            let ga = needs[0].then(|| (0..g.len()).map(|i| g[i] * partial(i).0).collect());
            let gb = needs[1].then(|| reduce_to_rhs(kind, (0..g.len()).map(|i| g[i] * partial(i).1), cols, b_len));
            vec![ga, gb]
        }))
    }

    /// Elementwise sum; `b` may broadcast as a row, column or scalar.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("add", a, b, |x, y| x + y, |_, _, _| (1.0, 1.0))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("sub", a, b, |x, y| x - y, |_, _, _| (1.0, -1.0))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("mul", a, b, |x, y| x * y, |x, y, _| (y, x))
    }

    /// Elementwise quotient. Any zero in the divisor is rejected.
    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if let Some(pos) = b.data().iter().position(|&v| v == 0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: format!("zero divisor at flat index {pos}"),
            });
        }
        self.binary("div", a, b, |x, y| x / y, |_, y, o| (1.0 / y, -o / y))
    }

    fn unary(
        &self,
        x: &Tensor,
        f: impl Fn(f64) -> f64,
        // derivative at (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let value: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
        let out = Arc::new(value.clone());
        let xc = x.detach();
        self.record(x.shape().clone(), value, &[x], move |g, _| {
            let xd = xc.data();
            vec![Some(
                g.iter().enumerate().map(|(i, &gi)| gi * df(xd[i], out[i])).collect(),
            )]
        })
    }

    pub fn add_scalar(&self, x: &Tensor, c: f64) -> Tensor {
        self.unary(x, move |v| v + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, x: &Tensor, c: f64) -> Tensor {
        self.unary(x, move |v| v * c, move |_, _| c)
    }

    /// `c − x`.
    pub fn rsub_scalar(&self, c: f64, x: &Tensor) -> Tensor {
        self.unary(x, move |v| c - v, |_, _| -1.0)
    }

    pub fn neg(&self, x: &Tensor) -> Tensor {
        self.mul_scalar(x, -1.0)
    }

    pub fn square(&self, x: &Tensor) -> Tensor {
        self.unary(x, |v| v * v, |v, _| 2.0 * v)
    }

    pub fn exp(&self, x: &Tensor) -> Tensor {
        self.unary(x, f64::exp, |_, y| y)
    }

    /// Natural log; non-positive entries are rejected.
    pub fn log(&self, x: &Tensor) -> Result<Tensor> {
        if let Some(pos) = x.data().iter().position(|&v| v <= 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive value {} at flat index {pos}", x.data()[pos]),
            });
        }
        Ok(self.unary(x, f64::ln, |v, _| 1.0 / v))
    }

    /// Square root; negative entries are rejected.
    pub fn sqrt(&self, x: &Tensor) -> Result<Tensor> {
        if let Some(pos) = x.data().iter().position(|&v| v < 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                op: "sqrt",
                detail: format!("negative value {} at flat index {pos}", x.data()[pos]),
            });
        }
        Ok(self.unary(x, f64::sqrt, |_, y| 0.5 / y))
    }

    pub fn tanh(&self, x: &Tensor) -> Tensor {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self, x: &Tensor) -> Tensor {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn leaky_relu(&self, x: &Tensor, slope: f64) -> Tensor {
        self.unary(
            x,
            move |v| if v > 0.0 { v } else { slope * v },
            move |v, _| if v > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn relu(&self, x: &Tensor) -> Tensor {
        self.leaky_relu(x, 0.0)
    }

    /// `log(1 + eˣ)` evaluated without overflow.
    pub fn softplus(&self, x: &Tensor) -> Tensor {
        self.unary(x, softplus, |v, _| sigmoid(v))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, x: &Tensor, lo: f64, hi: f64) -> Tensor {
        self.unary(
            x,
            move |v| v.clamp(lo, hi),
            move |v, _| if v > lo && v < hi { 1.0 } else { 0.0 },
        )
    }

    /// `a (n×k) · b (k×m)`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ad, bd) = (a.dims(), b.dims());
        let (n, k, m) = match (ad, bd) {
            ([n, k], [k2, m]) if k == k2 => (*n, *k, *m),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().clone(),
                    rhs: b.shape().clone(),
                })
            }
        };
        let value = gemm_nn(a.data(), b.data(), n, k, m);
        let (ac, bc) = (a.detach(), b.detach());
        Ok(self.record(Shape(vec![n, m]), value, &[a, b], move |g, needs| {
            let ga = needs[0].then(|| gemm_nt(g, bc.data(), n, m, k));
            let gb = needs[1].then(|| gemm_tn(ac.data(), g, n, k, m));
            vec![ga, gb]
        }))
    }

    /// Sum of every entry, as a scalar.
    pub fn reduce_sum(&self, x: &Tensor) -> Tensor {
        let s: f64 = x.data().iter().sum();
        let len = x.numel();
        self.record(Shape::default(), vec![s], &[x], move |g, _| vec![Some(vec![g[0]; len])])
    }

    pub fn reduce_mean(&self, x: &Tensor) -> Tensor {
        let len = x.numel();
        let s: f64 = x.data().iter().sum::<f64>() / len as f64;
        self.record(Shape::default(), vec![s], &[x], move |g, _| {
            vec![Some(vec![g[0] / len as f64; len])]
        })
    }

    /// Column sums of an `n×d` matrix, shape `[1, d]`.
    pub fn sum_rows(&self, x: &Tensor) -> Tensor {
        self.scaled_column_sum(x, 1.0)
    }

    /// Column means of an `n×d` matrix, shape `[1, d]`.
    pub fn mean_rows(&self, x: &Tensor) -> Tensor {
        self.scaled_column_sum(x, 1.0 / x.rows() as f64)
    }

    fn scaled_column_sum(&self, x: &Tensor, scale: f64) -> Tensor {
        let (n, d) = x.shape().as_matrix();
        let mut out = vec![0.0; d];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= scale);
        self.record(Shape(vec![1, d]), out, &[x], move |g, _| {
            let mut gx = Vec::with_capacity(n * d);
            for _ in 0..n {
                gx.extend(g.iter().map(|v| v * scale));
            }
            vec![Some(gx)]
        })
    }

    /// Row sums of an `n×d` matrix, shape `[n, 1]`.
    pub fn sum_cols(&self, x: &Tensor) -> Tensor {
        let (n, d) = x.shape().as_matrix();
        let out: Vec<f64> = (0..n).map(|i| x.row(i).iter().sum()).collect();
        self.record(Shape(vec![n, 1]), out, &[x], move |g, _| {
            let mut gx = Vec::with_capacity(n * d);
            for gi in g {
                gx.extend(std::iter::repeat_n(*gi, d));
            }
            vec![Some(gx)]
        })
    }

    /// `Σ x²`.
    pub fn sq_l2_norm(&self, x: &Tensor) -> Tensor {
        let s: f64 = x.data().iter().map(|v| v * v).sum();
        let xc = x.detach();
        self.record(Shape::default(), vec![s], &[x], move |g, _| {
            vec![Some(xc.data().iter().map(|v| 2.0 * v * g[0]).collect())]
        })
    }

    /// `Σ |x|`, with subgradient 0 at 0.
    pub fn l1_norm(&self, x: &Tensor) -> Tensor {
        let s: f64 = x.data().iter().map(|v| v.abs()).sum();
        let xc = x.detach();
        self.record(Shape::default(), vec![s], &[x], move |g, _| {
            vec![Some(xc.data().iter().map(|v| sign(*v) * g[0]).collect())]
        })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self, x: &Tensor) -> Tensor {
        let (n, d) = x.shape().as_matrix();
        let mut y = Vec::with_capacity(n * d);
        for i in 0..n {
            y.extend(softmax(x.row(i)));
        }
        let out = Arc::new(y.clone());
        self.record(x.shape().clone(), y, &[x], move |g, _| {
            let mut gx = vec![0.0; n * d];
            for i in 0..n {
                let r = i * d..(i + 1) * d;
                let (yr, gr) = (&out[r.clone()], &g[r.clone()]);
                let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for (j, o) in gx[r].iter_mut().enumerate() {
                    *o = yr[j] * (gr[j] - s);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Row-wise `x − logsumexp(x)`.
    pub fn log_softmax_rows(&self, x: &Tensor) -> Tensor {
        let (n, d) = x.shape().as_matrix();
        let mut y = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = x.row(i);
            let lse = log_sum_exp(row);
            y.extend(row.iter().map(|v| v - lse));
        }
        let out = Arc::new(y.clone());
        self.record(x.shape().clone(), y, &[x], move |g, _| {
            let mut gx = vec![0.0; n * d];
            for i in 0..n {
                let r = i * d..(i + 1) * d;
                let s: f64 = g[r.clone()].iter().sum();
                for (j, o) in gx[r.clone()].iter_mut().enumerate() {
                    *o = g[i * d + j] - out[i * d + j].exp() * s;
                }
            }
            vec![Some(gx)]
        })
    }

    /// Row-wise log-sum-exp, shape `[n, 1]`.
    pub fn logsumexp_rows(&self, x: &Tensor) -> Tensor {
        let (n, d) = x.shape().as_matrix();
        let out: Vec<f64> = (0..n).map(|i| log_sum_exp(x.row(i))).collect();
        let (xc, lse) = (x.detach(), Arc::new(out.clone()));
        self.record(Shape(vec![n, 1]), out, &[x], move |g, _| {
            let xd = xc.data();
            let mut gx = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..d {
                    gx[i * d + j] = g[i] * (xd[i * d + j] - lse[i]).exp();
                }
            }
            vec![Some(gx)]
        })
    }

    /// Joins `a (n×p)` and `b (n×q)` into `n×(p+q)`.
    pub fn concat_cols(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (n, p) = a.shape().as_matrix();
        let (n2, q) = b.shape().as_matrix();
        if n != n2 || a.shape().rank() != 2 || b.shape().rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: a.shape().clone(),
                rhs: b.shape().clone(),
            });
        }
        let w = p + q;
        let mut out = Vec::with_capacity(n * w);
        for i in 0..n {
            out.extend_from_slice(a.row(i));
            out.extend_from_slice(b.row(i));
        }
        Ok(self.record(Shape(vec![n, w]), out, &[a, b], move |g, needs| {
            let ga = needs[0].then(|| (0..n).flat_map(|i| g[i * w..i * w + p].iter().copied()).collect());
            let gb = needs[1].then(|| (0..n).flat_map(|i| g[i * w + p..(i + 1) * w].iter().copied()).collect());
            vec![ga, gb]
        }))
    }

    /// Stacks `a (n×d)` over `b (m×d)`.
    pub fn concat_rows(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape().rank() != 2 || b.shape().rank() != 2 || a.cols() != b.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_rows",
                lhs: a.shape().clone(),
                rhs: b.shape().clone(),
            });
        }
        let split = a.numel();
        let mut out = a.to_vec();
        out.extend_from_slice(b.data());
        let shape = Shape(vec![a.rows() + b.rows(), a.cols()]);
        Ok(self.record(shape, out, &[a, b], move |g, needs| {
            vec![
                needs[0].then(|| g[..split].to_vec()),
                needs[1].then(|| g[split..].to_vec()),
            ]
        }))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        let (n, d) = x.shape().as_matrix();
        if start >= end || end > n || x.shape().rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "slice_rows",
                lhs: x.shape().clone(),
                rhs: Shape(vec![start, end]),
            });
        }
        let out = x.data()[start * d..end * d].to_vec();
        Ok(self.record(Shape(vec![end - start, d]), out, &[x], move |g, _| {
            let mut gx = vec![0.0; n * d];
            gx[start * d..end * d].copy_from_slice(g);
            vec![Some(gx)]
        }))
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, x: &Tensor, shape: impl Into<Shape>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.numel() != x.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: x.shape().clone(),
                rhs: shape,
            });
        }
        Ok(self.record(shape, x.to_vec(), &[x], |g, _| vec![Some(g.to_vec())]))
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let out = tape.matmul(&a, &Tensor::eye(2)).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let err = tape.matmul(&Tensor::zeros([2, 3]), &Tensor::zeros([2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_uniform() {
        let tape = Tape::new();
        let y = tape.softmax_rows(&m(1, 3, &[0.0, 0.0, 0.0]));
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let tape = Tape::new();
        let y = tape.softmax_rows(&m(1, 2, &[1000.0, 0.0]));
        assert!(y.all_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leaky_relu_piecewise() {
        let tape = Tape::new();
        let y = tape.leaky_relu(&Tensor::vector(vec![-1.0, 2.0]), 0.2);
        assert!((y.data()[0] + 0.2).abs() < 1e-15);
        assert_eq!(y.data()[1], 2.0);
    }

    #[test]
    fn log_rejects_non_positive() {
        let tape = Tape::new();
        assert!(matches!(
            tape.log(&Tensor::vector(vec![1.0, 0.0])),
            Err(TensorError::Domain { op: "log", .. })
        ));
    }

    #[test]
    fn div_rejects_zero() {
        let tape = Tape::new();
        let r = tape.div(&Tensor::vector(vec![1.0]), &Tensor::vector(vec![0.0]));
        assert!(matches!(r, Err(TensorError::Domain { op: "div", .. })));
    }

    #[test]
    fn add_shape_mismatch_rejected() {
        let tape = Tape::new();
        let r = tape.add(&Tensor::zeros([2, 3]), &Tensor::zeros([3, 2]));
        assert!(matches!(r, Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn constants_record_nothing() {
        let tape = Tape::new();
        let _ = tape.exp(&Tensor::vector(vec![1.0]));
        assert!(tape.is_empty());
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let loss = tape.reduce_sum(&tape.mul(&x, &x).unwrap());
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.wrt(&x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(&m(2, 3, &[0.3, -1.0, 2.0, 5.0, 0.0, 1.0]));
        let g = tape.backward(&tape.reduce_sum(&x)).unwrap();
        assert_eq!(g.wrt(&x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let y = tape.exp(&x);
        assert!(matches!(tape.backward(&y), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn backward_rejects_untracked() {
        let tape = Tape::new();
        assert!(matches!(
            tape.backward(&Tensor::scalar(1.0)),
            Err(TensorError::UntrackedLoss)
        ));
    }

    #[test]
    fn row_broadcast_gradient_matches_explicit_tiling() {
        let x = m(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, -2.0]);
        let bias = Tensor::vector(vec![0.7, -0.3]);
        let weights = m(3, 2, &[0.2, 1.0, -0.4, 2.0, 1.5, 0.1]);

        let tape = Tape::new();
        let b = tape.leaf(&bias);
        let y = tape.add(&x, &b).unwrap();
        let loss = tape.reduce_sum(&tape.mul(&tape.square(&y), &weights).unwrap());
        let broadcast_grad = tape.backward(&loss).unwrap().wrt(&b).unwrap();

        // Same function with the bias tiled by hand: gradient per tile, summed.
        let tape = Tape::new();
        let tiled = tape.leaf(&m(3, 2, &[0.7, -0.3, 0.7, -0.3, 0.7, -0.3]));
        let y = tape.add(&x, &tiled).unwrap();
        let loss = tape.reduce_sum(&tape.mul(&tape.square(&y), &weights).unwrap());
        let tile_grad = tape.backward(&loss).unwrap().wrt(&tiled).unwrap();
        let summed: Vec<f64> = (0..2).map(|j| (0..3).map(|i| tile_grad.get(i, j)).sum()).collect();
        for (a, b) in broadcast_grad.data().iter().zip(&summed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![3.0]));
        let y = tape.add(&x, &x).unwrap();
        let z = tape.mul(&y, &x).unwrap(); // 2x²
        let g = tape.backward(&tape.reduce_sum(&z)).unwrap();
        assert_eq!(g.wrt(&x).unwrap().data(), &[12.0]);
    }
}
