//! Batch normalization and virtual batch normalization.

use crate::tensor::{Tape, Tensor};

use super::{NnError, Result};

/// Per-feature statistics of one batch, shapes `[1, d]`.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub count: usize,
}

/// Biased per-feature mean and variance of `h (n×d)`.
pub fn batch_stats(tape: &Tape, h: &Tensor) -> Result<BatchStats> {
    let mean = tape.mean_rows(h);
    let centered = tape.sub(h, &mean)?;
    let var = tape.mean_rows(&tape.square(&centered));
    Ok(BatchStats {
        mean,
        var,
        count: h.rows(),
    })
}

fn affine(tape: &Tape, normed: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let scaled = tape.mul(normed, gamma)?;
    Ok(tape.add(&scaled, beta)?)
}

/// `γ · (h − mean) / √(var + ε) + β` with the given statistics.
pub fn normalize_with(
    tape: &Tape,
    h: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let centered = tape.sub(h, mean)?;
    let std = tape.sqrt(&tape.add_scalar(var, eps))?;
    affine(tape, &tape.div(&centered, &std)?, gamma, beta)
}

/// Train-mode batch normalization; returns the output and the batch statistics.
pub fn batch_norm_train(
    tape: &Tape,
    h: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, BatchStats)> {
    if h.rows() == 0 {
        return Err(NnError::EmptyBatch("batch norm"));
    }
    let stats = batch_stats(tape, h)?;
    let out = normalize_with(tape, h, &stats.mean, &stats.var, gamma, beta, eps)?;
    Ok((out, stats))
}

/// Virtual batch normalization of `h` against reference activations.
///
/// Each row `x` is normalized with the statistics of `reference ∪ {x}`, so
/// every member of the reference batch carries weight `1/(N+1)` and `x` the
/// remaining `1/(N+1)`. No other row of `h` influences the result.
///
/// The augmented variance uses the exact decomposition
/// `[N·(v_ref + (μ_ref − μ_x)²) + (x − μ_x)²] / (N+1)`.
pub fn vbn_forward(
    tape: &Tape,
    h: &Tensor,
    reference: &BatchStats,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let n_ref = reference.count;
    if n_ref < 2 {
        return Err(NnError::ReferenceTooSmall(n_ref));
    }
    let nf = n_ref as f64;
    let w_new = 1.0 / (nf + 1.0);
    // μ_x = (N·μ_ref + x)/(N+1)
    let mean = tape.add(
        &tape.mul_scalar(h, w_new),
        &tape.mul_scalar(&reference.mean, nf * w_new),
    )?;
    let shift = tape.sub(&mean, &reference.mean)?;
    let ref_part = tape.add(&tape.square(&shift), &reference.var)?;
    let own = tape.square(&tape.sub(h, &mean)?);
    let var = tape.add(&tape.mul_scalar(&ref_part, nf * w_new), &tape.mul_scalar(&own, w_new))?;
    normalize_with(tape, h, &mean, &var, gamma, beta, eps)
}

/// Normalization of the reference batch itself: only its own statistics.
pub fn vbn_reference(
    tape: &Tape,
    reference: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, BatchStats)> {
    if reference.rows() < 2 {
        return Err(NnError::ReferenceTooSmall(reference.rows()));
    }
    batch_norm_train(tape, reference, gamma, beta, eps)
}
