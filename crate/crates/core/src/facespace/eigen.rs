use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::{Decoder, FaceSpaceError, LatentPoint, Result};
use crate::imagecore::Image;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RELATIVE_EIGEN_FLOOR: f64 = 1e-10;
/// Per-intensity variance treated as zero; absorbs rounding in the mean.
const ABSOLUTE_VARIANCE_FLOOR: f64 = 1e-20;

/// Linear face space: mean image plus an orthonormal principal basis.
///
/// Coordinates are whitened: coordinate `k` is the projection onto basis
/// vector `k` divided by `scales[k]`, the training standard deviation along
/// it (sample convention, `n - 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct EigenfaceModel {
    pub(crate) image_side: usize,
    pub(crate) mean: Image,
    pub(crate) basis: Vec<Vec<f64>>,
    pub(crate) scales: Vec<f64>,
    pub(crate) total_variance: f64,
}

impl EigenfaceModel {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn image_side(&self) -> usize {
        self.image_side
    }

    pub fn mean(&self) -> &Image {
        &self.mean
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Summed per-pixel variance of the training corpus.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Fraction of the training variance carried by each component.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.scales
            .iter()
            .map(|s| {
                if self.total_variance > 0.0 {
                    s * s / self.total_variance
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        if img.width() != self.image_side || img.height() != self.image_side {
            return Err(FaceSpaceError::Shape(format!(
                "image {}x{} vs model side {}",
                img.width(),
                img.height(),
                self.image_side
            )));
        }
        Ok(())
    }

    /// Whitened coordinates of `img`; zero along components with zero scale.
    pub fn encode(&self, img: &Image) -> Result<LatentPoint> {
        self.check_image(img)?;
        let centered: Vec<f64> = img
            .data()
            .iter()
            .zip(self.mean.data())
            .map(|(x, m)| x - m)
            .collect();
        Ok(LatentPoint(
            self.basis
                .iter()
                .zip(&self.scales)
                .map(|(b, &s)| {
                    if s > 0.0 {
                        dot(b, &centered) / s
                    } else {
                        0.0
                    }
                })
                .collect(),
        ))
    }

    /// `mean + Σ z_k · scale_k · basis_k` before clamping.
    pub fn reconstruct(&self, z: &LatentPoint) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let mut out = self.mean.data().to_vec();
        for ((b, &s), &zk) in self.basis.iter().zip(&self.scales).zip(z.coords()) {
            let w = zk * s;
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(b) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// Rank-d projection of `img` onto the model, before clamping.
    pub fn project(&self, img: &Image) -> Result<Vec<f64>> {
        self.reconstruct(&self.encode(img)?)
    }
}

impl Decoder for EigenfaceModel {
    fn latent_dim(&self) -> usize {
        self.dim()
    }

    fn output_side(&self) -> usize {
        self.image_side
    }

    fn decode(&self, z: &LatentPoint) -> Result<Image> {
        let data = self.reconstruct(z)?;
        Ok(Image::from_clamped(self.image_side, self.image_side, data)?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Removes the components of `v` along every vector in `basis` (two passes
/// of modified Gram-Schmidt) and returns the remaining norm.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
    dot(v, v).sqrt()
}

/// Flips `v` so that its first non-negligible entry is positive.
fn canonicalize_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Principal components of a corpus of equally sized square images.
///
/// Works through the `n × n` Gram matrix of centered images, so cost scales
/// with the corpus size rather than the pixel count.
pub fn fit_eigenfaces(images: &[Image], d: usize) -> Result<EigenfaceModel> {
    let n = images.len();
    if d == 0 {
        return Err(FaceSpaceError::InvalidArgument("latent dimension must be >= 1".into()));
    }
    if n < d + 1 {
        return Err(FaceSpaceError::InsufficientCorpus(format!(
            "{n} images cannot support {d} components (need at least {})",
            d + 1
        )));
    }
    let first = &images[0];
    let side = first.width();
    if first.height() != side {
        return Err(FaceSpaceError::Shape(format!(
            "images must be square, got {}x{}",
            first.width(),
            first.height()
        )));
    }
    if let Some(bad) = images.iter().find(|img| !img.same_shape(first)) {
        return Err(FaceSpaceError::Shape(format!(
            "{}x{} vs {}x{}",
            bad.width(),
            bad.height(),
            side,
            side
        )));
    }
    let p = first.data().len();
    if d > p {
        return Err(FaceSpaceError::InvalidArgument(format!(
            "{d} components exceed {p} pixel intensities"
        )));
    }

    let mut mean = vec![0.0; p];
    for img in images {
        for (m, v) in mean.iter_mut().zip(img.data()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| img.data().iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| dot(&centered[i], &centered[j])).collect())
        .collect();
    let gram = DMatrix::from_fn(n, n, |i, j| if j <= i { rows[i][j] } else { rows[j][i] });
    let trace: f64 = (0..n).map(|i| gram[(i, i)]).sum();

    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = (RELATIVE_EIGEN_FLOOR * top).max(ABSOLUTE_VARIANCE_FLOOR * p as f64);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut scales = Vec::with_capacity(d);
    for &k in order.iter().take(d) {
        let lambda = eig.eigenvalues[k];
        if lambda <= floor {
            break;
        }
        let coef = eig.eigenvectors.column(k);
        let mut v = vec![0.0; p];
        for (c, row) in coef.iter().zip(&centered) {
            for (o, x) in v.iter_mut().zip(row) {
                *o += c * x;
            }
        }
        let norm = orthogonalize(&mut v, &basis);
        if norm <= 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        canonicalize_sign(&mut v);
        basis.push(v);
        scales.push((lambda / (n - 1) as f64).sqrt());
    }

    // Complete with zero-variance directions so the basis always has d
    // orthonormal members; they never contribute to decoding.
    let mut axis = 0;
    while basis.len() < d {
        let mut v = vec![0.0; p];
        v[axis] = 1.0;
        axis += 1;
        let norm = orthogonalize(&mut v, &basis);
        if norm > 0.5 {
            v.iter_mut().for_each(|x| *x /= norm);
            canonicalize_sign(&mut v);
            basis.push(v);
            scales.push(0.0);
        }
    }

    Ok(EigenfaceModel {
        image_side: side,
        mean: Image::from_clamped(side, side, mean)?,
        basis,
        scales,
        total_variance: trace / (n - 1) as f64,
    })
}
