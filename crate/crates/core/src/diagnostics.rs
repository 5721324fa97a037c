//! Weak principal curve diagnostics and the idealized penalty-shape curves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{sorted_sum, DiffError, Matrix, Tape};
use crate::network::{Autoencoder, NetError};
use crate::risks::{record_ortho_per_point, record_residual};

pub const DEFAULT_BINS: usize = 32;
pub const DEFECT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("all latent values coincide; cannot bin")]
    DegenerateLatent,
    #[error("latent dimension {0} not supported (needs 1)")]
    LatentDim(usize),
    #[error("need at least {min} bins, got {got}")]
    TooFewBins { min: usize, got: usize },
    #[error("{latents} latent values for {points} points")]
    LengthMismatch { latents: usize, points: usize },
    #[error("non-finite latent value at point {0}")]
    NonFiniteLatent(usize),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error(transparent)]
    Shape(#[from] NetError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Equal-width binning of a 1-D latent code with per-bin input means.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDecoder {
    lo: f64,
    width: f64,
    counts: Vec<usize>,
    /// Per-bin `(mean latent, mean input)`; `None` for empty bins.
    means: Vec<Option<(f64, Vec<f64>)>>,
    /// Indices of nonempty bins, ascending.
    occupied: Vec<usize>,
}

impl BinnedDecoder {
    pub fn fit(latents: &[f64], points: &Matrix, n_bins: usize) -> Result<Self, DiagnosticsError> {
        if n_bins == 0 {
            return Err(DiagnosticsError::TooFewBins { min: 1, got: 0 });
        }
        if latents.len() != points.cols() {
            return Err(DiagnosticsError::LengthMismatch {
                latents: latents.len(),
                points: points.cols(),
            });
        }
        if let Some(i) = latents.iter().position(|z| !z.is_finite()) {
            return Err(DiagnosticsError::NonFiniteLatent(i));
        }
        let lo = latents.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = latents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(DiagnosticsError::DegenerateLatent);
        }
        let width = (hi - lo) / n_bins as f64;
        let d = points.rows();
        let mut counts = vec![0usize; n_bins];
        let mut z_sum = vec![0.0; n_bins];
        let mut x_sum = vec![vec![0.0; d]; n_bins];
        for (j, &z) in latents.iter().enumerate() {
            let b = bin_index(z, lo, width, n_bins);
            counts[b] += 1;
            z_sum[b] += z;
            for i in 0..d {
                x_sum[b][i] += points[(i, j)];
            }
        }
        let means: Vec<_> = (0..n_bins)
            .map(|b| {
                (counts[b] > 0).then(|| {
                    let c = counts[b] as f64;
                    (z_sum[b] / c, x_sum[b].iter().map(|s| s / c).collect())
                })
            })
            .collect();
        let occupied = (0..n_bins).filter(|&b| counts[b] > 0).collect();
        Ok(Self {
            lo,
            width,
            counts,
            means,
            occupied,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n_bins()).map(|b| self.lo + b as f64 * self.width).collect()
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.width
    }

    /// Bin containing `z`; values outside the fitted range go to the end bins.
    pub fn bin_of(&self, z: f64) -> usize {
        bin_index(z, self.lo, self.width, self.n_bins())
    }

    pub fn mean(&self, bin: usize) -> Option<&[f64]> {
        self.means[bin].as_ref().map(|(_, x)| x.as_slice())
    }

    pub fn occupied(&self) -> &[usize] {
        &self.occupied
    }

    /// `(mean latent, mean input)` of every nonempty bin, in bin order.
    pub fn knots(&self) -> Vec<(f64, &[f64])> {
        self.occupied
            .iter()
            .map(|&b| {
                let (z, x) = self.means[b].as_ref().expect("occupied bin");
                (*z, x.as_slice())
            })
            .collect()
    }

    /// Piecewise-linear conditional mean through the knots, extended
    /// linearly past the end knots.
    pub fn interpolate(&self, z: f64) -> Vec<f64> {
        let knots = self.knots();
        if knots.len() == 1 {
            return knots[0].1.to_vec();
        }
        let k = knots.partition_point(|(kz, _)| *kz <= z).clamp(1, knots.len() - 1);
        let (z0, x0) = knots[k - 1];
        let (z1, x1) = knots[k];
        let s = if z1 > z0 { (z - z0) / (z1 - z0) } else { 0.0 };
        x0.iter().zip(x1).map(|(a, b)| a + s * (b - a)).collect()
    }

    /// Central difference of the knots around `bin` (one-sided at the ends).
    /// Empty bins take the tangent of the nearest nonempty bin.
    pub fn tangent_at(&self, bin: usize) -> Vec<f64> {
        let knots = self.knots();
        let k = match self.occupied.binary_search(&bin) {
            Ok(k) => k,
            Err(k) => k.min(knots.len() - 1),
        };
        if knots.len() < 2 {
            return vec![0.0; knots[0].1.len()];
        }
        let a = k.saturating_sub(1);
        let b = (k + 1).min(knots.len() - 1);
        let dz = knots[b].0 - knots[a].0;
        knots[b]
            .1
            .iter()
            .zip(knots[a].1)
            .map(|(p, q)| if dz > 0.0 { (p - q) / dz } else { 0.0 })
            .collect()
    }
}

fn bin_index(z: f64, lo: f64, width: f64, n_bins: usize) -> usize {
    let b = ((z - lo) / width).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(n_bins - 1)
    }
}

fn latents_1d<M: Autoencoder + ?Sized>(model: &M, batch: &Matrix) -> Result<Vec<f64>, DiagnosticsError> {
    if batch.cols() == 0 {
        return Err(DiagnosticsError::EmptyBatch);
    }
    if batch.rows() != model.input_dim() {
        return Err(NetError::Shape {
            expected: model.input_dim(),
            got: batch.rows(),
        }
        .into());
    }
    if model.latent_dim() != 1 {
        return Err(DiagnosticsError::LatentDim(model.latent_dim()));
    }
    Ok(model.encode_batch(batch)?.into_vec())
}

/// Mean distance, over nonempty bins, between the decoder at the bin centre
/// and the bin's conditional mean of the inputs.
pub fn self_consistency_residual<M: Autoencoder + ?Sized>(
    model: &M,
    batch: &Matrix,
    n_bins: usize,
) -> Result<f64, DiagnosticsError> {
    if n_bins < 3 {
        return Err(DiagnosticsError::TooFewBins { min: 3, got: n_bins });
    }
    let latents = latents_1d(model, batch)?;
    let dec = BinnedDecoder::fit(&latents, batch, n_bins)?;
    let centers: Vec<f64> = dec.occupied().iter().map(|&b| dec.center(b)).collect();
    let decoded = model.decode_batch(&Matrix::from_vec(1, centers.len(), centers))?;
    let dists: Vec<f64> = dec
        .occupied()
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let mean = dec.mean(b).expect("occupied bin");
            (0..batch.rows())
                .map(|i| (decoded[(i, k)] - mean[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(sorted_sum(&dists) / dists.len() as f64)
}

/// Mean of `|J_gᵀ r| / (|r| |J_g|_F + ε)` over the batch: 0 when residuals
/// are orthogonal to the decoded manifold, 1 when aligned with a 1-D tangent.
pub fn orthogonality_defect<M: Autoencoder + ?Sized>(model: &M, batch: &Matrix) -> Result<f64, DiagnosticsError> {
    if batch.cols() == 0 {
        return Err(DiagnosticsError::EmptyBatch);
    }
    if batch.rows() != model.input_dim() {
        return Err(NetError::Shape {
            expected: model.input_dim(),
            got: batch.rows(),
        }
        .into());
    }
    let n = batch.cols();
    let k = model.latent_dim();
    let mut tape = Tape::new();
    let p = tape.constant(Matrix::column_vector(model.params().to_vec()));
    let rec = record_residual(model, &mut tape, p, batch, batch);
    let ortho_sq = record_ortho_per_point(&mut tape, &rec);
    let r_sq = {
        let sq = tape.mul(rec.residual, rec.residual);
        tape.col_sum(sq)
    };
    let mut jac_sq = Vec::with_capacity(k);
    for l in 0..k {
        let mut e = Matrix::zeros(k, n);
        e.as_mut_slice()[l * n..(l + 1) * n].fill(1.0);
        let e = tape.constant(e);
        let col = tape.jvp(rec.latent, rec.output, e);
        let sq = tape.mul(col, col);
        jac_sq.push(tape.col_sum(sq));
    }
    tape.check()?;
    let terms: Vec<f64> = (0..n)
        .map(|j| {
            let num = tape.value(ortho_sq).as_slice()[j].sqrt();
            let r = tape.value(r_sq).as_slice()[j].sqrt();
            let jf = jac_sq.iter().map(|&v| tape.value(v).as_slice()[j]).sum::<f64>().sqrt();
            num / (r * jf + DEFECT_EPSILON)
        })
        .collect();
    Ok(sorted_sum(&terms) / n as f64)
}

/// One sample of the idealized model with residual `t` and decoder
/// Jacobian `1 - t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub t: f64,
    pub residual_sq: f64,
    pub ortho: f64,
    pub normalized: f64,
    pub ortho_total: f64,
    pub normalized_total: f64,
}

pub const SHAPE_COLUMNS: [&str; 6] = [
    "t",
    "residual_sq",
    "ortho_penalty",
    "normalized_penalty",
    "ortho_total",
    "normalized_total",
];

impl ShapeRow {
    pub fn values(&self) -> [f64; 6] {
        [
            self.t,
            self.residual_sq,
            self.ortho,
            self.normalized,
            self.ortho_total,
            self.normalized_total,
        ]
    }
}

pub fn penalty_shapes(alpha: f64, n_samples: usize) -> Result<Vec<ShapeRow>, DiagnosticsError> {
    if n_samples < 2 {
        return Err(DiagnosticsError::TooFewSamples { min: 2, got: n_samples });
    }
    Ok((0..n_samples)
        .map(|i| {
            let t = i as f64 / (n_samples - 1) as f64;
            let residual_sq = t * t;
            let jac_sq = (1.0 - t) * (1.0 - t);
            let ortho = residual_sq * jac_sq;
            ShapeRow {
                t,
                residual_sq,
                ortho,
                normalized: jac_sq,
                ortho_total: residual_sq + alpha * ortho,
                normalized_total: residual_sq + alpha * jac_sq,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init, parse_arch, Activation, CircleProjection, LatentRule, Net};

    fn line_model(dir: [f64; 2]) -> Net {
        let arch = parse_arch("1", 2, LatentRule::Auto)
            .unwrap()
            .with_activation(Activation::Identity);
        let mut n = init(&arch, 0);
        n.set_layer(0, &Matrix::from_vec(1, 2, dir.to_vec()), &[0.0]);
        n.set_layer(1, &Matrix::from_vec(2, 1, dir.to_vec()), &[0.0, 0.0]);
        n
    }

    #[test]
    fn binning_covers_range_and_counts_everything() {
        let z: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Matrix::from_vec(1, 100, z.clone());
        let dec = BinnedDecoder::fit(&z, &x, 8).unwrap();
        assert_eq!(dec.counts().iter().sum::<usize>(), 100);
        let e = dec.edges();
        assert_eq!(e[0], z.iter().copied().fold(f64::INFINITY, f64::min));
        let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((e[8] - hi).abs() < 1e-15);
    }

    #[test]
    fn constant_latent_is_degenerate() {
        let x = Matrix::from_vec(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(
            BinnedDecoder::fit(&[1.0, 1.0, 1.0], &x, 4),
            Err(DiagnosticsError::DegenerateLatent)
        );
    }

    #[test]
    fn interpolation_is_exact_on_lines() {
        let z: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let cols: Vec<Vec<f64>> = z.iter().map(|&t| vec![2.0 * t - 1.0, 0.5 * t]).collect();
        let dec = BinnedDecoder::fit(&z, &Matrix::from_columns(&cols), 7).unwrap();
        for &t in &[-0.3, 0.0, 0.41, 1.0, 1.7] {
            let g = dec.interpolate(t);
            assert!((g[0] - (2.0 * t - 1.0)).abs() < 1e-12);
            assert!((g[1] - 0.5 * t).abs() < 1e-12);
        }
        let tan = dec.tangent_at(3);
        assert!((tan[0] - 2.0).abs() < 1e-12 && (tan[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn self_consistency_rejects_constant_encoder() {
        let arch = parse_arch("1", 2, LatentRule::Auto).unwrap();
        let mut n = init(&arch, 1);
        n.set_layer(0, &Matrix::zeros(1, 2), &[0.2]);
        let x = Matrix::from_columns(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]]);
        assert_eq!(
            self_consistency_residual(&n, &x, 4),
            Err(DiagnosticsError::DegenerateLatent)
        );
        assert!(matches!(
            self_consistency_residual(&n, &x, 2),
            Err(DiagnosticsError::TooFewBins { .. })
        ));
    }

    #[test]
    fn defect_zero_for_radial_residuals() {
        let c = CircleProjection::new(1.0);
        let x = Matrix::from_columns(&[vec![1.2, 0.3], vec![-0.5, 0.1], vec![0.0, -2.0]]);
        assert!(orthogonality_defect(&c, &x).unwrap() < 1e-10);
    }

    #[test]
    fn defect_one_for_aligned_residuals() {
        // Encoder projects onto e1 and shifts; decoder embeds back along e1.
        let mut n = line_model([1.0, 0.0]);
        n.set_layer(0, &Matrix::from_vec(1, 2, vec![1.0, 0.0]), &[0.5]);
        let x = Matrix::from_columns(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![-3.0, 0.0]]);
        let d = orthogonality_defect(&n, &x).unwrap();
        assert!((d - 1.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn defect_zero_for_exact_reconstruction() {
        let n = line_model([0.6, 0.8]);
        let x = Matrix::from_columns(&[vec![0.6, 0.8], vec![-1.2, -1.6]]);
        assert_eq!(orthogonality_defect(&n, &x).unwrap(), 0.0);
    }

    #[test]
    fn shape_endpoints() {
        let rows = penalty_shapes(1.0, 11).unwrap();
        assert_eq!(rows[0].residual_sq, 0.0);
        assert_eq!(rows[0].normalized, 1.0);
        let last = rows[10];
        assert_eq!((last.residual_sq, last.ortho, last.normalized), (1.0, 0.0, 0.0));
        assert!(penalty_shapes(1.0, 1).is_err());
    }
}
