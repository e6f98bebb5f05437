use super::{Result, Tape, Tensor};

/// Largest relative disagreement between the tape gradient of `f` at `x` and
/// a central finite difference with step `eps`.
///
/// The relative error per coordinate is
/// `|analytic − numeric| / max(1e-6, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    grad_check_many(|tape, xs| f(tape, &xs[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several inputs at once; the maximum over all of them.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor> = xs.iter().map(|x| tape.leaf(x)).collect();
    let loss = f(&tape, &leaves)?;
    let grads = tape.backward(&loss)?;

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        Ok(f(&tape, inputs)?.item())
    };

    let mut worst: f64 = 0.0;
    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt_or_zero(leaf);
        for k in 0..xs[which].numel() {
            let mut shifted: Vec<Tensor> = xs.iter().map(Tensor::detach).collect();
            let mut plus = xs[which].to_vec();
            plus[k] += eps;
            shifted[which] = Tensor::new(xs[which].shape().clone(), plus)?;
            let up = eval(&shifted)?;
            let mut minus = xs[which].to_vec();
            minus[k] -= eps;
            shifted[which] = Tensor::new(xs[which].shape().clone(), minus)?;
            let down = eval(&shifted)?;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[k];
            // floor keeps structurally zero gradients (e.g. a bias cancelled by
            // normalization) from turning difference roundoff into large ratios
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.2, 4.0]);
        let err = grad_check(|t, x| Ok(t.reduce_sum(x)), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn wrong_adjoint_is_caught() {
        let x = Tensor::vector(vec![0.5, 1.5, -0.7]);
        // cube with a deliberately wrong derivative (2x instead of 3x²)
        let err = grad_check(
            |t, x| {
                let xc = x.detach();
                let value = x.data().iter().map(|v| v * v * v).collect();
                let y = t.custom(x.shape().clone(), value, &[x], move |g, _| {
                    vec![Some(g.iter().zip(xc.data()).map(|(g, v)| g * 2.0 * v).collect())]
                })?;
                Ok(t.reduce_sum(&y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-2, "{err}");
    }
}
