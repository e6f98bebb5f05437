//! Synthetic mixtures, IDX ingestion, labeled subsets and seeded batching.

use std::f64::consts::PI;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::seed::{stream, Rng};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: wrong magic at offset 0: expected {expected:#010x}, found {found:#010x}")]
    Magic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated at offset {offset}: need {needed} bytes, {available} available")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error(
        "count mismatch: {images} images (offset 4 of {image_path}) but {labels} labels (offset 4 of {label_path})"
    )]
    CountMismatch {
        images: usize,
        labels: usize,
        image_path: PathBuf,
        label_path: PathBuf,
    },
    #[error("{path}: read failed: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid mixture: {0}")]
    Mixture(String),
    #[error("labeled subset of {m} cannot be split evenly over {k} classes")]
    Indivisible { m: usize, k: usize },
    #[error("class {class} has {available} examples, {needed} requested")]
    ClassTooSmall {
        class: usize,
        available: usize,
        needed: usize,
    },
    #[error("requested {size} examples from a dataset of {n}")]
    TooLarge { size: usize, n: usize },
    #[error("batch size must be positive")]
    BatchSize,
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Gaussian mixture in the plane (or any width; the generators here are 2-D).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub centers: Vec<Vec<f64>>,
    pub sigma: f64,
    pub weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(centers: Vec<Vec<f64>>, sigma: f64, weights: Option<Vec<f64>>) -> Result<Self> {
        if centers.is_empty() {
            return Err(DataError::Mixture("no components".into()));
        }
        let d = centers[0].len();
        if d == 0 || centers.iter().any(|c| c.len() != d) {
            return Err(DataError::Mixture("centers must share a positive width".into()));
        }
        if !(sigma > 0.0) {
            return Err(DataError::Mixture(format!("sigma must be positive, got {sigma}")));
        }
        let k = centers.len();
        let weights = weights.unwrap_or_else(|| vec![1.0 / k as f64; k]);
        if weights.len() != k || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(DataError::Mixture("one non-negative weight per component".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DataError::Mixture(format!("weights sum to {total}")));
        }
        Ok(MixtureSpec {
            centers,
            sigma,
            weights,
        })
    }

    /// `k` centers evenly spaced on a circle, the first at `(radius, 0)`.
    pub fn ring(k: usize, radius: f64, sigma: f64) -> Result<Self> {
        let centers = (0..k)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / k as f64;
                vec![radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Self::new(centers, sigma, None)
    }

    /// A `rows × cols` lattice centered on the origin.
    pub fn grid(rows: usize, cols: usize, spacing: f64, sigma: f64) -> Result<Self> {
        let mut centers = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                centers.push(vec![
                    (c as f64 - (cols as f64 - 1.0) / 2.0) * spacing,
                    (r as f64 - (rows as f64 - 1.0) / 2.0) * spacing,
                ]);
            }
        }
        Self::new(centers, sigma, None)
    }

    pub fn components(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    /// Draws `n` samples; returns them with their component indices.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        let mut comps = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut j = self.components() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    j = i;
                    break;
                }
            }
            comps.push(j);
            for c in &self.centers[j] {
                let e: f64 = StandardNormal.sample(rng);
                data.push(c + self.sigma * e);
            }
        }
        (Tensor::matrix(n, d, data).expect("n·d values"), comps)
    }
}

pub fn gaussian_ring(k: usize, radius: f64, sigma: f64, n: usize, seed: u64) -> Result<Tensor> {
    let spec = MixtureSpec::ring(k, radius, sigma)?;
    Ok(spec.sample(n, &mut stream(seed, "mixture", 0)).0)
}

pub fn gaussian_grid(rows: usize, cols: usize, spacing: f64, sigma: f64, n: usize, seed: u64) -> Result<Tensor> {
    let spec = MixtureSpec::grid(rows, cols, spacing, sigma)?;
    Ok(spec.sample(n, &mut stream(seed, "mixture", 0)).0)
}

/// Features in `[0, 1]`, labels in `0..classes`, and which examples may use
/// their label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub labeled_mask: Vec<bool>,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Self {
        assert_eq!(features.rows(), labels.len(), "one label per row");
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let n = labels.len();
        LabeledDataset {
            features,
            labels,
            labeled_mask: vec![false; n],
            classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled_mask[i]).collect()
    }

    /// Copies out the rows `idx` (mask carried along).
    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            labeled_mask: idx.iter().map(|&i| self.labeled_mask[i]).collect(),
            classes: self.classes,
        }
    }

    /// 2×2 average pooling of square images (`28×28 → 14×14`).
    pub fn pool2(&self) -> LabeledDataset {
        let side = (self.dim() as f64).sqrt() as usize;
        assert_eq!(side * side, self.dim(), "square images");
        let half = side / 2;
        let mut out = Vec::with_capacity(self.len() * half * half);
        for i in 0..self.len() {
            let row = self.features.row(i);
            for r in 0..half {
                for c in 0..half {
                    let at = |dr: usize, dc: usize| row[(2 * r + dr) * side + 2 * c + dc];
                    out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
                }
            }
        }
        LabeledDataset {
            features: Tensor::matrix(self.len(), half * half, out).expect("pooled size"),
            labels: self.labels.clone(),
            labeled_mask: self.labeled_mask.clone(),
            classes: self.classes,
        }
    }
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a file, gunzipping when it starts with the gzip signature.
fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = std::fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let available = self.bytes.len().saturating_sub(self.at);
        if available < n {
            return Err(DataError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.at,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(DataError::Magic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

/// Parses an IDX image file: `n × (rows·cols)` raw bytes.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let mut c = Cursor {
        path,
        bytes: &bytes,
        at: 0,
    };
    c.magic(IDX_IMAGES_MAGIC)?;
    let n = c.u32()? as usize;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    let pixels = c.take(n * rows * cols)?.to_vec();
    Ok((n, rows * cols, pixels))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let mut c = Cursor {
        path,
        bytes: &bytes,
        at: 0,
    };
    c.magic(IDX_LABELS_MAGIC)?;
    let n = c.u32()? as usize;
    Ok(c.take(n)?.to_vec())
}

/// Loads an IDX image/label pair, scaling bytes to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (n, d, pixels) = read_idx_images(ip)?;
    let labels = read_idx_labels(lp)?;
    if labels.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: labels.len(),
            image_path: ip.to_path_buf(),
            label_path: lp.to_path_buf(),
        });
    }
    let features = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(LabeledDataset::new(
        Tensor::matrix(n, d, features).expect("n·d pixels"),
        labels.into_iter().map(usize::from).collect(),
    ))
}

/// Uncompressed IDX image bytes for `n` images of `rows × cols`.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Marks exactly `m_total / K` uniformly chosen examples of each class.
pub fn balanced_label_subset(ds: &LabeledDataset, m_total: usize, seed: u64) -> Result<Vec<bool>> {
    let k = ds.classes;
    if k == 0 || !m_total.is_multiple_of(k) {
        return Err(DataError::Indivisible { m: m_total, k });
    }
    let per = m_total / k;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut mask = vec![false; ds.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < per {
            return Err(DataError::ClassTooSmall {
                class,
                available: members.len(),
                needed: per,
            });
        }
        let mut rng = stream(seed, "labels", class as u64);
        let (picked, _) = members.partial_shuffle(&mut rng, per);
        for &i in picked.iter() {
            mask[i] = true;
        }
    }
    Ok(mask)
}

/// Reshuffled index batches; each epoch visits every index exactly once.
#[derive(Debug, Clone)]
pub struct Batches {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(DataError::BatchSize);
        }
        if n == 0 {
            return Err(DataError::TooLarge { size: batch_size, n });
        }
        let mut b = Batches {
            n,
            batch_size,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        b.shuffle();
        Ok(b)
    }

    fn shuffle(&mut self) {
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut stream(self.seed, "epoch", self.epoch));
        self.pos = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// The next batch; the last one of an epoch may be short.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.epoch += 1;
            self.shuffle();
        }
        let end = (self.pos + self.batch_size).min(self.n);
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }

    /// Jumps to the state after `batches` calls to [`Batches::next_batch`].
    pub fn seek(&mut self, batches: u64) {
        let per_epoch = self.n.div_ceil(self.batch_size) as u64;
        self.epoch = batches / per_epoch;
        self.shuffle();
        self.pos = ((batches % per_epoch) as usize * self.batch_size).min(self.n);
    }
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

/// Indices of a fixed reference batch, drawn without replacement.
pub fn reference_batch(n: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > n {
        return Err(DataError::TooLarge { size, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let (picked, _) = idx.partial_shuffle(&mut stream(seed, "reference", 0), size);
    Ok(picked.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    #[default]
    Uniform,
    Normal,
}

pub const NOISE_DIM_2D: usize = 8;
pub const NOISE_DIM_DIGITS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSource {
    pub dim: usize,
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSource {
    pub fn new(dim: usize, kind: NoiseKind, seed: u64) -> Self {
        NoiseSource { dim, kind, seed }
    }

    fn fill(&self, rng: &mut Rng, out: &mut Vec<f64>, count: usize) {
        for _ in 0..count {
            out.push(match self.kind {
                NoiseKind::Uniform => rng.random_range(-1.0..1.0),
                NoiseKind::Normal => StandardNormal.sample(rng),
            });
        }
    }

    /// `n × dim` noise for training step `step`.
    pub fn batch(&self, step: u64, n: usize) -> Tensor {
        let mut rng = stream(self.seed, "noise", step);
        let mut data = Vec::with_capacity(n * self.dim);
        self.fill(&mut rng, &mut data, n * self.dim);
        Tensor::matrix(n, self.dim, data).expect("n·dim values")
    }

    /// Rows `start..start+len` of an indexable noise sequence: row `i` depends
    /// only on `(seed, tag, i)`.
    pub fn rows(&self, tag: &str, start: usize, len: usize) -> Tensor {
        let mut data = Vec::with_capacity(len * self.dim);
        for i in start..start + len {
            self.fill(&mut stream(self.seed, tag, i as u64), &mut data, self.dim);
        }
        Tensor::matrix(len, self.dim, data).expect("len·dim values")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture(dir: &Path, images: &[u8], labels: &[u8]) -> (PathBuf, PathBuf) {
        let ip = dir.join("images.idx");
        let lp = dir.join("labels.idx");
        std::fs::write(&ip, images).unwrap();
        std::fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn degenerate_ring_component() {
        let x = gaussian_ring(1, 3.0, 1e-9, 50, 1).unwrap();
        for i in 0..50 {
            assert!((x.get(i, 0) - 3.0).abs() < 1e-7 && x.get(i, 1).abs() < 1e-7);
        }
    }

    #[test]
    fn ring_counts_and_mean() {
        let spec = MixtureSpec::ring(8, 2.0, 0.02).unwrap();
        let n = 8000;
        let (x, comps) = spec.sample(n, &mut stream(3, "mixture", 0));
        let mut counts = [0usize; 8];
        comps.iter().for_each(|&c| counts[c] += 1);
        let tol = 3.0 * (n as f64).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 8.0).abs() < tol, "{counts:?}");
        }
        // The empirical mean also absorbs multinomial imbalance of the
        // components, which dominates the 4σ/√n noise term at this σ.
        let spread = (spec.sigma * spec.sigma + 2.0 * 2.0 / 2.0).sqrt();
        for j in 0..2 {
            let m: f64 = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            assert!(m.abs() < 4.0 * spread / (n as f64).sqrt(), "{m}");
        }
    }

    #[test]
    fn grid_centers() {
        let g = MixtureSpec::grid(2, 3, 1.0, 0.1).unwrap();
        assert_eq!(g.components(), 6);
        assert_eq!(g.centers[0], vec![-1.0, -0.5]);
        assert!(MixtureSpec::grid(0, 3, 1.0, 0.1).is_err());
        assert!(MixtureSpec::ring(3, 1.0, 0.0).is_err());
    }

    #[test]
    fn idx_fixture_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = [0u8, 255, 128, 64, 1, 2, 3, 4];
        let (ip, lp) = fixture(
            dir.path(),
            &encode_idx_images(2, 2, &pixels),
            &encode_idx_labels(&[7, 1]),
        );
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.features.row(0), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(ds.labels, vec![7, 1]);
        let back: Vec<u8> = ds.features.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(back, pixels);
    }

    #[test]
    fn gzip_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let gz = |bytes: &[u8]| {
            let mut e = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
            e.write_all(bytes).unwrap();
            e.finish().unwrap()
        };
        let pixels = [9u8, 8, 7, 6];
        let (ip, lp) = fixture(
            dir.path(),
            &gz(&encode_idx_images(2, 2, &pixels)),
            &gz(&encode_idx_labels(&[3])),
        );
        assert_eq!(load_idx(&ip, &lp).unwrap().features.row(0)[0], 9.0 / 255.0);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let images = encode_idx_images(2, 2, &[0; 8]);
        let labels = encode_idx_labels(&[0, 1]);

        let (ip, _) = fixture(dir.path(), &images, &labels);
        assert!(matches!(
            load_idx(&ip, &ip),
            Err(DataError::Magic {
                expected: 0x801,
                found: 0x803,
                ..
            })
        ));

        let (ip, lp) = fixture(dir.path(), &images[..20], &labels);
        match load_idx(&ip, &lp) {
            Err(DataError::Truncated {
                offset: 16,
                needed: 8,
                available: 4,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }

        let (ip, lp) = fixture(dir.path(), &images, &encode_idx_labels(&[0, 1, 2]));
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(DataError::CountMismatch {
                images: 2,
                labels: 3,
                ..
            })
        ));

        let (ip, lp) = fixture(dir.path(), &images[..6], &labels);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(DataError::Truncated { offset: 4, .. })
        ));
    }

    fn toy_labeled(per_class: usize, k: usize) -> LabeledDataset {
        let n = per_class * k;
        LabeledDataset::new(Tensor::zeros([n, 1]), (0..n).map(|i| i % k).collect())
    }

    #[test]
    fn balanced_subsets() {
        let ds = toy_labeled(30, 10);
        for (m, seed) in [(100, 0), (20, 1), (20, 2)] {
            let mask = balanced_label_subset(&ds, m, seed).unwrap();
            let mut counts = [0usize; 10];
            for (i, &on) in mask.iter().enumerate() {
                if on {
                    counts[ds.labels[i]] += 1;
                }
            }
            assert!(counts.iter().all(|&c| c == m / 10));
        }
        assert_ne!(
            balanced_label_subset(&ds, 20, 1).unwrap(),
            balanced_label_subset(&ds, 20, 2).unwrap()
        );
        assert!(matches!(
            balanced_label_subset(&ds, 25, 0),
            Err(DataError::Indivisible { .. })
        ));
        assert!(matches!(
            balanced_label_subset(&ds, 400, 0),
            Err(DataError::ClassTooSmall { .. })
        ));
    }

    #[test]
    fn epochs_cover_everything_once() {
        let mut b = Batches::new(23, 5, 4).unwrap();
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..5).flat_map(|_| b.next_batch()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..23).collect::<Vec<_>>());
        }
        let mut fresh = Batches::new(23, 5, 4).unwrap();
        fresh.seek(7);
        let mut replay = Batches::new(23, 5, 4).unwrap();
        for _ in 0..7 {
            replay.next_batch();
        }
        assert_eq!(fresh.next_batch(), replay.next_batch());
    }

    #[test]
    fn reference_batches() {
        assert_eq!(
            reference_batch(100, 16, 9).unwrap(),
            reference_batch(100, 16, 9).unwrap()
        );
        assert_ne!(
            reference_batch(100, 16, 9).unwrap(),
            reference_batch(100, 16, 10).unwrap()
        );
        assert!(reference_batch(10, 11, 0).is_err());
    }

    #[test]
    fn noise_is_replayable() {
        let z = NoiseSource::new(4, NoiseKind::Uniform, 2);
        assert_eq!(z.batch(5, 3), z.batch(5, 3));
        assert_ne!(z.batch(5, 3), z.batch(6, 3));
        assert!(z.batch(0, 100).data().iter().all(|v| (-1.0..1.0).contains(v)));
        let all = z.rows("score", 0, 10);
        assert_eq!(z.rows("score", 4, 3).data(), &all.data()[16..28]);
    }

    #[test]
    fn pooling() {
        let ds = LabeledDataset::new(
            Tensor::matrix(1, 16, (0..16).map(f64::from).collect()).unwrap(),
            vec![0],
        );
        let p = ds.pool2();
        assert_eq!(p.features.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    #[ignore = "reads the bundled digit files"]
    fn bundled_digits() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
        let ds = load_idx(
            root.join("train-images-idx3-ubyte.gz"),
            root.join("train-labels-idx1-ubyte.gz"),
        )
        .unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.classes), (8000, 784, 10));
    }
}
