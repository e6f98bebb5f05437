//! Classifier-based sample score and mode coverage on 2-D mixtures.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::NnError;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("row {row}: {detail}")]
    InvalidRow { row: usize, detail: String },
    #[error("label matrix must have at least one row and one column, got {0}×{1}")]
    Empty(usize, usize),
    #[error("expected {expected} rows from the classifier, got {got}")]
    RowCount { expected: usize, got: usize },
    #[error("classifier produced {got} classes, expected {expected}")]
    ClassCount { expected: usize, got: usize },
    #[error("chunk size must be positive")]
    Chunk,
    #[error("sigma must be positive, got {0}")]
    Sigma(f64),
    #[error("sample width {samples} does not match center width {centers}")]
    Width { samples: usize, centers: usize },
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Tolerance on each row's sum.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Minimum samples per class before [`score_generator`] warns.
pub const MIN_SAMPLES_PER_CLASS: usize = 10;

/// `n × K` row-stochastic matrix of `p(y|x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondLabelMatrix {
    n: usize,
    k: usize,
    p: Vec<f64>,
}

fn check_row(row: &[f64], i: usize) -> Result<()> {
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(MetricsError::InvalidRow {
            row: i,
            detail: format!("entry {v} is not a finite non-negative probability"),
        });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(MetricsError::InvalidRow {
            row: i,
            detail: format!("sums to {sum}"),
        });
    }
    Ok(())
}

impl CondLabelMatrix {
    pub fn new(n: usize, k: usize, p: Vec<f64>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(MetricsError::Empty(n, k));
        }
        assert_eq!(p.len(), n * k, "data length must be n·K");
        for (i, row) in p.chunks(k).enumerate() {
            check_row(row, i)?;
        }
        Ok(CondLabelMatrix { n, k, p })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        let mut p = Vec::with_capacity(rows.len() * k);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(MetricsError::InvalidRow {
                    row: i,
                    detail: format!("{} columns, expected {k}", r.len()),
                });
            }
            p.extend_from_slice(r);
        }
        Self::new(rows.len(), k, p)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, k) = t.shape().as_matrix();
        Self::new(n, k, t.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.k..(i + 1) * self.k]
    }

    pub fn marginal(&self) -> Vec<f64> {
        let mut m = vec![Sum::default(); self.k];
        for i in 0..self.n {
            for (a, &b) in m.iter_mut().zip(self.row(i)) {
                a.add(b);
            }
        }
        m.iter().map(|v| v.value() / self.n as f64).collect()
    }

    /// Headerless CSV, one row per sample.
    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut rows = Vec::new();
        for rec in reader.deserialize() {
            let row: Vec<f64> = rec?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for i in 0..self.n {
            out.serialize(self.row(i))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        self.c += if self.s.abs() >= x.abs() {
            (self.s - t) + x
        } else {
            (x - t) + self.s
        };
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// `Σ_i KL(p_i || q)` kept as probability mass per distinct ratio
/// `r = p_iy / q_y`, so the score is `Π_r r^(mass_r / n)`.
#[derive(Debug, Default)]
struct KlMass {
    by_ratio: BTreeMap<u64, Sum>,
}

impl KlMass {
    /// Adds `KL(p || q)` with `0·log 0 = 0`.
    fn add(&mut self, p: &[f64], q: &[f64]) {
        for (&a, &b) in p.iter().zip(q) {
            if a > 0.0 {
                self.by_ratio.entry((a / b).to_bits()).or_default().add(a);
            }
        }
    }

    /// `exp(Σ_i KL_i / n)`. A single ratio is raised directly, which keeps
    /// uniform and balanced one-hot inputs exact.
    fn score(&self, n: usize) -> f64 {
        let n = n as f64;
        if let [(r, mass)] = self.by_ratio.iter().collect::<Vec<_>>()[..] {
            return f64::from_bits(*r).powf(mass.value() / n);
        }
        let mut total = Sum::default();
        for (r, mass) in &self.by_ratio {
            total.add(mass.value() * f64::from_bits(*r).ln());
        }
        (total.value() / n).exp()
    }
}

/// `exp(mean_i KL(p(y|x_i) || p(y)))` with `p(y)` the mean row.
pub fn classifier_score(p: &CondLabelMatrix) -> f64 {
    let marginal = p.marginal();
    let mut kl = KlMass::default();
    for i in 0..p.rows() {
        kl.add(p.row(i), &marginal);
    }
    kl.score(p.rows())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub score: f64,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub classifier_id: String,
}

/// Scores `n_samples` generated examples in chunks of `chunk`.
///
/// `generate(start, len)` must return samples `start..start+len` and be a
/// pure function of its range, since it is called twice per chunk: once to
/// accumulate the marginal and once for the KL pass. `classify` maps a batch
/// of samples to class probabilities.
pub fn score_generator<G, C>(mut generate: G, mut classify: C, n_samples: usize, chunk: usize) -> Result<(f64, usize)>
where
    G: FnMut(usize, usize) -> Result<Tensor, NnError>,
    C: FnMut(&Tensor) -> Result<Tensor, NnError>,
{
    if chunk == 0 {
        return Err(MetricsError::Chunk);
    }
    if n_samples == 0 {
        return Err(MetricsError::Empty(0, 0));
    }
    let mut probs = |start: usize, len: usize| -> Result<CondLabelMatrix> {
        let x = generate(start, len)?;
        let p = classify(&x)?;
        let m = CondLabelMatrix::from_tensor(&p).map_err(|e| match e {
            MetricsError::InvalidRow { row, detail } => MetricsError::InvalidRow {
                row: row + start,
                detail,
            },
            other => other,
        })?;
        if m.rows() != len {
            return Err(MetricsError::RowCount {
                expected: len,
                got: m.rows(),
            });
        }
        Ok(m)
    };

    let mut k = 0;
    let mut sum: Vec<Sum> = Vec::new();
    let mut start = 0;
    while start < n_samples {
        let len = chunk.min(n_samples - start);
        let m = probs(start, len)?;
        if sum.is_empty() {
            k = m.classes();
            sum = vec![Sum::default(); k];
        } else if m.classes() != k {
            return Err(MetricsError::ClassCount {
                expected: k,
                got: m.classes(),
            });
        }
        for i in 0..len {
            for (a, &b) in sum.iter_mut().zip(m.row(i)) {
                a.add(b);
            }
        }
        start += len;
    }
    if n_samples < MIN_SAMPLES_PER_CLASS * k {
        log::warn!(
            "scoring {n_samples} samples over {k} classes; fewer than {} under-measures diversity",
            MIN_SAMPLES_PER_CLASS * k
        );
    }
    let marginal: Vec<f64> = sum.iter().map(|v| v.value() / n_samples as f64).collect();

    let mut kl = KlMass::default();
    let mut start = 0;
    while start < n_samples {
        let len = chunk.min(n_samples - start);
        let m = probs(start, len)?;
        for i in 0..len {
            kl.add(m.row(i), &marginal);
        }
        start += len;
    }
    Ok((kl.score(n_samples), k))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport {
    pub modes_covered: usize,
    /// Nearest center per sample.
    pub assignments: Vec<usize>,
    /// Samples within 3σ of each center.
    pub counts: Vec<usize>,
    pub high_quality_fraction: f64,
}

/// Nearest-center assignment; a mode counts as covered when at least
/// `min_frac·n` samples lie within `3σ` of it.
pub fn mode_coverage(samples: &Tensor, centers: &[Vec<f64>], sigma: f64, min_frac: f64) -> Result<ModeReport> {
    if !(sigma > 0.0) {
        return Err(MetricsError::Sigma(sigma));
    }
    let d = centers.first().map_or(0, Vec::len);
    if centers.is_empty() || samples.cols() != d {
        return Err(MetricsError::Width {
            samples: samples.cols(),
            centers: d,
        });
    }
    let n = samples.rows();
    let mut assignments = Vec::with_capacity(n);
    let mut counts = vec![0usize; centers.len()];
    let mut near = 0usize;
    for i in 0..n {
        let x = samples.row(i);
        let (best, dist) = centers
            .iter()
            .map(|c| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (j, dj)| if dj < acc.1 { (j, dj) } else { acc },
            );
        assignments.push(best);
        if dist <= 3.0 * sigma {
            counts[best] += 1;
            near += 1;
        }
    }
    let need = min_frac * n as f64;
    let modes_covered = counts.iter().filter(|&&c| c > 0 && c as f64 >= need).count();
    Ok(ModeReport {
        modes_covered,
        assignments,
        counts,
        high_quality_fraction: if n == 0 { 0.0 } else { near as f64 / n as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(n: usize, k: usize, class: impl Fn(usize) -> usize) -> CondLabelMatrix {
        let mut p = vec![0.0; n * k];
        for i in 0..n {
            p[i * k + class(i)] = 1.0;
        }
        CondLabelMatrix::new(n, k, p).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> CondLabelMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let r: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect();
        CondLabelMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn reference_configurations() {
        for (n, k) in [(4, 5), (100, 10), (33, 7)] {
            let uniform = CondLabelMatrix::new(n, k, vec![1.0 / k as f64; n * k]).unwrap();
            assert_eq!(classifier_score(&uniform), 1.0);
        }
        for k in [2usize, 3, 7, 10, 16] {
            assert_eq!(classifier_score(&one_hot(k, k, |i| i)), k as f64);
            assert_eq!(classifier_score(&one_hot(10 * k, k, |i| i % k)), k as f64);
        }
        assert_eq!(classifier_score(&one_hot(7, 10, |_| 3)), 1.0);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_matrix(&mut rng, 6, 3);
        let mut py = [0.0; 3];
        for i in 0..6 {
            for k in 0..3 {
                py[k] += m.row(i)[k] / 6.0;
            }
        }
        let mut acc = 0.0;
        for i in 0..6 {
            for k in 0..3 {
                let p = m.row(i)[k];
                acc += p * (p.ln() - py[k].ln());
            }
        }
        assert!((classifier_score(&m) - (acc / 6.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn invalid_rows_are_named() {
        let err = CondLabelMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.6]]).unwrap_err();
        assert!(matches!(err, MetricsError::InvalidRow { row: 1, .. }));
        let err = CondLabelMatrix::from_rows(&[vec![1.5, -0.5]]).unwrap_err();
        assert!(matches!(err, MetricsError::InvalidRow { row: 0, .. }));
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_matrix(&mut rng, 5, 4);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(!String::from_utf8_lossy(&buf).starts_with('p'));
        let back = CondLabelMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    fn toy_generator(start: usize, len: usize, modes: usize) -> Tensor {
        let data = (start..start + len).map(|i| (i % modes) as f64).collect();
        Tensor::matrix(len, 1, data).unwrap()
    }

    fn toy_classifier(x: &Tensor, k: usize) -> Tensor {
        let mut p = vec![0.0; x.rows() * k];
        for i in 0..x.rows() {
            p[i * k + x.get(i, 0) as usize] = 1.0;
        }
        Tensor::matrix(x.rows(), k, p).unwrap()
    }

    #[test]
    fn chunking_does_not_change_the_score() {
        let gen = |s, l| Ok(toy_generator(s, l, 7));
        let cls = |x: &Tensor| {
            let mut p = toy_classifier(x, 10).to_vec();
            for v in p.iter_mut() {
                *v = 0.9 * *v + 0.01;
            }
            Tensor::matrix(x.rows(), 10, p).map_err(NnError::from)
        };
        let (a, k) = score_generator(gen, cls, 53, 1).unwrap();
        let (b, _) = score_generator(gen, cls, 53, 53).unwrap();
        let (c, _) = score_generator(gen, cls, 53, 8).unwrap();
        assert_eq!(k, 10);
        assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples_score_below_full_coverage() {
        let k = 10;
        let cls = |x: &Tensor| Ok(toy_classifier(x, k));
        let (few, _) = score_generator(|s, l| Ok(toy_generator(s, l, k)), cls, 4, 2).unwrap();
        let (full, _) = score_generator(|s, l| Ok(toy_generator(s, l, k)), cls, 10 * k, 16).unwrap();
        assert!(few < full);
        assert!((full - k as f64).abs() < 1e-12);
    }

    fn ring(k: usize) -> Vec<Vec<f64>> {
        (0..k)
            .map(|j| {
                let a = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                vec![2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect()
    }

    #[test]
    fn coverage_edge_cases() {
        let centers = ring(8);
        let collapsed = Tensor::matrix(50, 2, [2.0, 0.0].repeat(50)).unwrap();
        let r = mode_coverage(&collapsed, &centers, 0.02, 0.01).unwrap();
        assert_eq!(r.modes_covered, 1);
        assert_eq!(r.high_quality_fraction, 1.0);
        let far = Tensor::matrix(10, 2, [40.0, 40.0].repeat(10)).unwrap();
        let r = mode_coverage(&far, &centers, 0.02, 0.01).unwrap();
        assert_eq!(r.modes_covered, 0);
        assert_eq!(r.high_quality_fraction, 0.0);
        assert!(mode_coverage(&far, &centers, 0.0, 0.01).is_err());
    }

    proptest! {
        #[test]
        fn score_bounded_and_permutation_invariant(seed in 0u64..1000, n in 1usize..12, k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, n, k);
            let s = classifier_score(&m);
            prop_assert!(s >= 1.0 - 1e-12 && s <= k as f64 + 1e-12);
            let mut rows: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
            rows.reverse();
            rows.rotate_left(seed as usize % n);
            let p = CondLabelMatrix::from_rows(&rows).unwrap();
            prop_assert!((classifier_score(&p) - s).abs() < 1e-12);
        }
    }
}
