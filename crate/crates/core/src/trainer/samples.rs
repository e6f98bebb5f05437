//! Sample grids as binary PGM (square grayscale images) or a PPM scatter
//! raster (2-D outputs, colored by the mode each sample sits on).

use std::path::Path;

use super::checkpoint::Checkpoint;
use super::gan::{GanTrainer, MODE_MIN_FRAC};
use super::{Result, TrainerError};
use crate::metrics::mode_coverage;
use crate::tensor::Tensor;

/// Samples drawn for a 2-D scatter raster.
pub const SCATTER_SAMPLES: usize = 2000;
/// Pixels per raster cell edge.
pub const CELL_PX: usize = 4;

const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [0, 128, 128],
    [170, 110, 40],
];
const UNASSIGNED: [u8; 3] = [128, 128, 128];
const EMPTY: [u8; 3] = [255, 255, 255];

/// A rendered raster: `image` is the file body, `cells` the per-cell mode
/// label (`None` when empty, `Some(None)` when occupied by unassigned samples).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub image: Vec<u8>,
    pub cells: Vec<Option<Option<usize>>>,
}

fn side(dim: usize) -> Option<usize> {
    let s = (dim as f64).sqrt().round() as usize;
    (s * s == dim && s > 1).then_some(s)
}

/// `rows × cols` generator samples tiled as a P5 image; pixel values are the
/// clamped outputs scaled to 0..=255.
pub fn image_grid(samples: &Tensor, rows: usize, cols: usize) -> Result<Vec<u8>> {
    let s = side(samples.cols()).ok_or_else(|| TrainerError::Config("samples are not square images".into()))?;
    if samples.rows() < rows * cols {
        return Err(TrainerError::Config("not enough samples for the grid".into()));
    }
    let (w, h) = (cols * s, rows * s);
    let mut px = vec![0u8; w * h];
    for r in 0..rows {
        for c in 0..cols {
            let img = samples.row(r * cols + c);
            for y in 0..s {
                for x in 0..s {
                    px[(r * s + y) * w + c * s + x] = (img[y * s + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(px);
    Ok(out)
}

/// 2-D samples binned into a `rows × cols` grid over `[lo, hi]²`. Each
/// occupied cell takes the most common mode assignment among its samples.
pub fn scatter_raster(
    samples: &Tensor,
    assignments: &[Option<usize>],
    rows: usize,
    cols: usize,
    lo: [f64; 2],
    hi: [f64; 2],
) -> Raster {
    let mut votes: Vec<Vec<usize>> = vec![Vec::new(); rows * cols];
    let modes = assignments.iter().flatten().max().map_or(0, |m| m + 1);
    for (i, a) in assignments.iter().enumerate() {
        let p = samples.row(i);
        let fx = (p[0] - lo[0]) / (hi[0] - lo[0]);
        let fy = (hi[1] - p[1]) / (hi[1] - lo[1]);
        if !(0.0..1.0).contains(&fx) || !(0.0..1.0).contains(&fy) {
            continue;
        }
        let cell = (fy * rows as f64) as usize * cols + (fx * cols as f64) as usize;
        if votes[cell].is_empty() {
            votes[cell] = vec![0; modes + 1];
        }
        votes[cell][a.map_or(modes, |m| m)] += 1;
    }
    let cells: Vec<Option<Option<usize>>> = votes
        .iter()
        .map(|v| {
            if v.is_empty() {
                return None;
            }
            let best = (0..v.len()).fold(0, |b, j| if v[j] > v[b] { j } else { b });
            Some((best < modes).then_some(best))
        })
        .collect();
    let (w, h) = (cols * CELL_PX, rows * CELL_PX);
    let mut image = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let rgb = match cells[(y / CELL_PX) * cols + x / CELL_PX] {
                None => EMPTY,
                Some(None) => UNASSIGNED,
                Some(Some(m)) => PALETTE[m % PALETTE.len()],
            };
            image.extend(rgb);
        }
    }
    Raster { image, cells }
}

/// Renders a checkpoint's generator. Image outputs give a `rows × cols` grid
/// of samples; 2-D outputs give a `rows × cols` cell scatter raster.
/// Output is a pure function of the checkpoint.
pub fn export_sample_grid(ckpt: &Checkpoint, rows: usize, cols: usize, out_path: impl AsRef<Path>) -> Result<Vec<u8>> {
    if rows == 0 || cols == 0 {
        return Err(TrainerError::Config("grid must be at least 1x1".into()));
    }
    let trainer = GanTrainer::resume(ckpt.to_state()?)?;
    let dim = trainer.state.g.output_width();
    let bytes = if dim == 2 {
        let m = trainer
            .config()
            .dataset
            .mixture()
            .ok_or_else(|| TrainerError::Config("2-D output without a mixture dataset".into()))?;
        let x = trainer.eval_samples(0, SCATTER_SAMPLES)?;
        let labels = near_mode_labels(&x, &m.centers, m.sigma)?;
        let (lo, hi) = plot_box(&m.centers);
        scatter_raster(&x, &labels, rows, cols, lo, hi).image
    } else {
        image_grid(&trainer.eval_samples(0, rows * cols)?, rows, cols)?
    };
    std::fs::write(out_path, &bytes)?;
    Ok(bytes)
}

/// The nearest-center assignment from [`mode_coverage`] for samples within
/// 3σ of that center, `None` for the rest.
pub fn near_mode_labels(x: &Tensor, centers: &[Vec<f64>], sigma: f64) -> Result<Vec<Option<usize>>> {
    let report = mode_coverage(x, centers, sigma, MODE_MIN_FRAC)?;
    Ok(report
        .assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let d2: f64 = centers[a].iter().zip(x.row(i)).map(|(c, v)| (c - v) * (c - v)).sum();
            (d2.sqrt() <= 3.0 * sigma).then_some(a)
        })
        .collect())
}

/// Square box around the centers with a margin of 25% of their span.
pub fn plot_box(centers: &[Vec<f64>]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in centers {
        for d in 0..2 {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let half = span * 0.75;
    ([mid[0] - half, mid[1] - half], [mid[0] + half, mid[1] + half])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_grid_is_the_clamped_sample() {
        let x = Tensor::matrix(1, 4, vec![-0.5, 0.25, 1.0, 2.0]).unwrap();
        let img = image_grid(&x, 1, 1).unwrap();
        assert_eq!(&img[..11], b"P5\n2 2\n255\n");
        assert_eq!(&img[11..], &[0, 64, 255, 255]);
    }

    #[test]
    fn raster_cells_follow_assignments() {
        let x = Tensor::matrix(3, 2, vec![-0.9, 0.9, 0.9, -0.9, 0.1, 0.1]).unwrap();
        let r = scatter_raster(&x, &[Some(0), Some(1), None], 2, 2, [-1.0, -1.0], [1.0, 1.0]);
        assert_eq!(r.cells, vec![Some(Some(0)), Some(None), None, Some(Some(1))]);
        assert_eq!(&r.image[..11], b"P6\n8 8\n255\n");
        assert_eq!(r.image.len(), 11 + 8 * 8 * 3);
        assert_eq!(&r.image[11..14], &PALETTE[0]);
    }
}
