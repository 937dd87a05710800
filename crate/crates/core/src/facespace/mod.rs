//! Latent face spaces.
//!
//! Anything that turns a latent point into a portrait implements [`Decoder`].
//! The crate ships a linear [`EigenfaceModel`]; trained neural decoders plug
//! in through the same trait. Latent coordinates are whitened, so a standard
//! normal draw is a draw from the model's prior.

mod eigen;
mod model_file;

pub use eigen::{fit_eigenfaces, EigenfaceModel};
pub use model_file::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{
    lanczos_resample, pixel_correlation, Image, ImageError, ResampleSpec, CHANNELS,
};

/// Default latent dimension for desk-scale corpora.
pub const DEFAULT_LATENT_DIM: usize = 64;

/// Number of perturbation intensity levels.
pub const PERTURB_LEVELS: u32 = 4;

#[derive(Debug, Error)]
pub enum FaceSpaceError {
    #[error("insufficient corpus: {0}")]
    InsufficientCorpus(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid count {0}: need at least 2 points")]
    InvalidCount(usize),
    #[error("invalid perturbation level {0}: expected 1..=4")]
    InvalidLevel(u32),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FaceSpaceError> = std::result::Result<T, E>;

/// A point in a latent face space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentPoint(pub Vec<f64>);

impl LatentPoint {
    pub fn origin(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &LatentPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self + k * dir`.
    pub fn offset(&self, dir: &[f64], k: f64) -> LatentPoint {
        LatentPoint(self.0.iter().zip(dir).map(|(a, b)| a + k * b).collect())
    }

    /// Little-endian coordinate bytes, used for hashing.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

impl From<Vec<f64>> for LatentPoint {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Deterministic map from latent points to square portraits.
pub trait Decoder: Send + Sync {
    fn latent_dim(&self) -> usize;
    fn output_side(&self) -> usize;
    fn decode(&self, z: &LatentPoint) -> Result<Image>;

    fn check_dim(&self, z: &LatentPoint) -> Result<()> {
        if z.dim() != self.latent_dim() {
            return Err(FaceSpaceError::Shape(format!(
                "latent dimension {} does not match decoder dimension {}",
                z.dim(),
                self.latent_dim()
            )));
        }
        Ok(())
    }
}

impl<D: Decoder + ?Sized> Decoder for &D {
    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }
    fn output_side(&self) -> usize {
        (**self).output_side()
    }
    fn decode(&self, z: &LatentPoint) -> Result<Image> {
        (**self).decode(z)
    }
}

impl<D: Decoder + ?Sized> Decoder for std::sync::Arc<D> {
    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }
    fn output_side(&self) -> usize {
        (**self).output_side()
    }
    fn decode(&self, z: &LatentPoint) -> Result<Image> {
        (**self).decode(z)
    }
}

/// Wraps a decoder and Lanczos-resamples its output to a fixed side.
pub struct Rescaled<D> {
    inner: D,
    side: usize,
}

impl<D: Decoder> Rescaled<D> {
    pub fn new(inner: D, side: usize) -> Self {
        Self { inner, side }
    }
}

impl<D: Decoder> Decoder for Rescaled<D> {
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn output_side(&self) -> usize {
        self.side
    }

    fn decode(&self, z: &LatentPoint) -> Result<Image> {
        let img = self.inner.decode(z)?;
        if img.width() == self.side && img.height() == self.side {
            return Ok(img);
        }
        Ok(lanczos_resample(&img, ResampleSpec::square(self.side))?)
    }
}

/// I.i.d. standard normal coordinates.
pub fn sample_prior<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> LatentPoint {
    LatentPoint((0..dim).map(|_| StandardNormal.sample(rng)).collect())
}

/// `k` evenly spaced points from `z0` to `z1`, both endpoints exact.
pub fn interpolate(z0: &LatentPoint, z1: &LatentPoint, k: usize) -> Result<Vec<LatentPoint>> {
    if k < 2 {
        return Err(FaceSpaceError::InvalidCount(k));
    }
    if z0.dim() != z1.dim() {
        return Err(FaceSpaceError::Shape(format!("{} vs {}", z0.dim(), z1.dim())));
    }
    let last = (k - 1) as f64;
    Ok((0..k)
        .map(|j| match j {
            0 => z0.clone(),
            _ if j == k - 1 => z1.clone(),
            _ => {
                let t = j as f64 / last;
                LatentPoint(
                    z0.0.iter()
                        .zip(&z1.0)
                        .map(|(a, b)| a + t * (b - a))
                        .collect(),
                )
            }
        })
        .collect())
}

/// Noise scale used at a perturbation level: `base_sigma * 2^(level - 1)`.
pub fn perturbation_sigma(level: u32, base_sigma: f64) -> Result<f64> {
    if !(1..=PERTURB_LEVELS).contains(&level) {
        return Err(FaceSpaceError::InvalidLevel(level));
    }
    if !(base_sigma.is_finite() && base_sigma >= 0.0) {
        return Err(FaceSpaceError::InvalidArgument(format!(
            "base sigma {base_sigma}"
        )));
    }
    Ok(base_sigma * f64::from(1u32 << (level - 1)))
}

/// `z + sigma_level * eps` with `eps` standard normal.
pub fn perturb<R: Rng + ?Sized>(
    z: &LatentPoint,
    level: u32,
    base_sigma: f64,
    rng: &mut R,
) -> Result<LatentPoint> {
    let sigma = perturbation_sigma(level, base_sigma)?;
    let eps = sample_prior(z.dim(), rng);
    Ok(z.offset(&eps.0, sigma))
}

/// Index and correlation of the corpus image best correlated with `query`.
///
/// Ties keep the lowest index. Constant corpus members have no defined
/// correlation and are skipped.
pub fn nearest_neighbor(corpus: &[Image], query: &Image) -> Result<(usize, f64)> {
    if corpus.is_empty() {
        return Err(FaceSpaceError::EmptyCorpus);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, img) in corpus.iter().enumerate() {
        let r = match pixel_correlation(img, query) {
            Ok(r) => r,
            Err(ImageError::UndefinedCorrelation) => {
                // Distinguish a constant query (fatal) from a constant member.
                pixel_correlation(query, query)?;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    best.ok_or(FaceSpaceError::Image(ImageError::UndefinedCorrelation))
}

/// Per-location bootstrap: each output pixel copies the RGB value found at
/// the same location in an independently, uniformly drawn corpus image.
pub fn bootstrap_sample<R: Rng + ?Sized>(corpus: &[Image], rng: &mut R) -> Result<Image> {
    let first = corpus.first().ok_or(FaceSpaceError::EmptyCorpus)?;
    if let Some(bad) = corpus.iter().find(|img| !img.same_shape(first)) {
        return Err(FaceSpaceError::Shape(format!(
            "{}x{} vs {}x{}",
            bad.width(),
            bad.height(),
            first.width(),
            first.height()
        )));
    }
    let pixels = first.width() * first.height();
    let mut data = Vec::with_capacity(pixels * CHANNELS);
    for p in 0..pixels {
        let src = &corpus[rng.random_range(0..corpus.len())];
        data.extend_from_slice(&src.data()[p * CHANNELS..(p + 1) * CHANNELS]);
    }
    Ok(Image::new(first.width(), first.height(), data)?)
}

/// A labelled source of synthetic portraits.
pub trait ImageSampler: Send + Sync {
    fn label(&self) -> &str;
    fn sample(&self, rng: &mut dyn RngCore) -> Result<Image>;
}

/// Decodes draws from the prior of a decoder.
pub struct PriorSampler<D> {
    label: String,
    decoder: D,
}

impl<D: Decoder> PriorSampler<D> {
    pub fn new(label: impl Into<String>, decoder: D) -> Self {
        Self {
            label: label.into(),
            decoder,
        }
    }
}

impl<D: Decoder> ImageSampler for PriorSampler<D> {
    fn label(&self) -> &str {
        &self.label
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Result<Image> {
        let z = sample_prior(self.decoder.latent_dim(), rng);
        self.decoder.decode(&z)
    }
}

/// The pixel-bootstrap control generator.
pub struct BootstrapSampler {
    label: String,
    corpus: Vec<Image>,
}

impl BootstrapSampler {
    pub const LABEL: &'static str = "bootstrap";

    pub fn new(corpus: Vec<Image>) -> Result<Self> {
        if corpus.is_empty() {
            return Err(FaceSpaceError::EmptyCorpus);
        }
        Ok(Self {
            label: Self::LABEL.into(),
            corpus,
        })
    }
}

impl ImageSampler for BootstrapSampler {
    fn label(&self) -> &str {
        &self.label
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Result<Image> {
        bootstrap_sample(&self.corpus, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, side: usize) -> Image {
        Image::from_fn(side, side, |_, _, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn prior_is_seeded_and_sized() {
        let a = sample_prior(16, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_prior(16, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.dim(), 16);
    }

    #[test]
    fn prior_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let d = 4;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for _ in 0..n {
            let z = sample_prior(d, &mut rng);
            for k in 0..d {
                sum[k] += z.0[k];
                sq[k] += z.0[k] * z.0[k];
            }
        }
        for k in 0..d {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z0 = sample_prior(8, &mut rng);
        let z1 = sample_prior(8, &mut rng);
        let pts = interpolate(&z0, &z1, 7).unwrap();
        assert_eq!(pts.len(), 7);
        assert_eq!(pts[0], z0);
        assert_eq!(pts[6], z1);
        for (j, p) in pts.iter().enumerate() {
            let t = j as f64 / 6.0;
            let err: f64 = (0..8)
                .map(|k| ((p.0[k] - z0.0[k]) - t * (z1.0[k] - z0.0[k])).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-12);
        }

        let same = interpolate(&z0, &z0, 5).unwrap();
        assert!(same.iter().all(|p| *p == z0));

        let mid = interpolate(&LatentPoint(vec![0.0, 0.0]), &LatentPoint(vec![2.0, 4.0]), 3).unwrap();
        assert_eq!(mid[1].0, vec![1.0, 2.0]);

        assert!(matches!(interpolate(&z0, &z1, 1), Err(FaceSpaceError::InvalidCount(1))));
        assert!(interpolate(&z0, &LatentPoint::origin(3), 3).is_err());
    }

    #[test]
    fn perturbation_levels() {
        let z = LatentPoint(vec![0.5, -1.0, 2.0]);
        for level in 1..=4 {
            let out = perturb(&z, level, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert_eq!(out, z);
        }
        let origin = LatentPoint::origin(6);
        let l1 = perturb(&origin, 1, 0.3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let l2 = perturb(&origin, 2, 0.3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for (a, b) in l1.0.iter().zip(&l2.0) {
            assert_eq!(*b, 2.0 * a);
        }
        assert!(matches!(
            perturb(&z, 0, 1.0, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(FaceSpaceError::InvalidLevel(0))
        ));
        assert!(perturb(&z, 5, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn perturbation_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = LatentPoint(vec![1.0, -2.0, 0.5, 3.0]);
        let trials = 10_000;
        let mut msd = 0.0;
        for _ in 0..trials {
            let p = perturb(&z, 1, 0.5, &mut rng).unwrap();
            msd += p.0.iter().zip(&z.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let per_coord = msd / (trials * z.dim()) as f64;
        assert!((per_coord - 0.25).abs() < 0.05 * 0.25, "{per_coord}");
    }

    #[test]
    fn nearest_neighbor_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let corpus: Vec<Image> = (0..10).map(|_| random_image(&mut rng, 6)).collect();
        let (i, r) = nearest_neighbor(&corpus, &corpus[4]).unwrap();
        assert_eq!(i, 4);
        assert!((r - 1.0).abs() < 1e-12);

        let x = corpus[0].clone();
        let neg = Image::new(6, 6, x.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert_eq!(nearest_neighbor(&[neg, x.clone()], &x).unwrap().0, 1);

        let query = random_image(&mut rng, 6);
        let (i, r) = nearest_neighbor(&corpus, &query).unwrap();
        let scan: Vec<f64> = corpus
            .iter()
            .map(|c| pixel_correlation(c, &query).unwrap())
            .collect();
        let best = scan.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(i, scan.iter().position(|&v| v == best).unwrap());
        assert_eq!(r, best);
    }

    #[test]
    fn nearest_neighbor_errors_and_ties() {
        let flat = Image::filled(4, 4, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng, 4);
        assert!(matches!(nearest_neighbor(&[], &x), Err(FaceSpaceError::EmptyCorpus)));
        assert!(matches!(
            nearest_neighbor(std::slice::from_ref(&x), &flat),
            Err(FaceSpaceError::Image(ImageError::UndefinedCorrelation))
        ));
        // Constant members are skipped; duplicates keep the first index.
        assert_eq!(nearest_neighbor(&[flat, x.clone(), x.clone()], &x).unwrap().0, 1);
    }

    #[test]
    fn bootstrap_singleton_and_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 5);
        assert_eq!(bootstrap_sample(std::slice::from_ref(&a), &mut rng).unwrap(), a);

        let corpus: Vec<Image> = (0..3).map(|_| random_image(&mut rng, 5)).collect();
        let out = bootstrap_sample(&corpus, &mut rng).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                assert!(corpus.iter().any(|c| c.pixel(x, y) == out.pixel(x, y)));
            }
        }
        assert!(matches!(bootstrap_sample(&[], &mut rng), Err(FaceSpaceError::EmptyCorpus)));
        assert!(bootstrap_sample(&[a, random_image(&mut rng, 4)], &mut rng).is_err());
    }

    #[test]
    fn bootstrap_binary_corpus_is_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let corpus = [Image::filled(32, 32, 0.0).unwrap(), Image::filled(32, 32, 1.0).unwrap()];
        let out = bootstrap_sample(&corpus, &mut rng).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let n = (32 * 32) as f64;
        let ones = out.data().iter().step_by(3).filter(|&&v| v == 1.0).count() as f64;
        assert!((ones / n - 0.5).abs() <= 3.0 * (0.25 / n).sqrt());
    }

    #[test]
    fn rescaled_decoder_changes_side_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let imgs: Vec<Image> = (0..4).map(|_| random_image(&mut rng, 8)).collect();
        let model = fit_eigenfaces(&imgs, 2).unwrap();
        let big = Rescaled::new(&model, 16);
        assert_eq!(big.output_side(), 16);
        assert_eq!(big.latent_dim(), 2);
        let img = big.decode(&LatentPoint::origin(2)).unwrap();
        assert_eq!(img.width(), 16);
        let same = Rescaled::new(&model, 8);
        assert_eq!(same.decode(&LatentPoint::origin(2)).unwrap(), *model.mean());
    }
}
