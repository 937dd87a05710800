//! Procrustes superimposition of portraits onto a composite landmark target.
//!
//! Pixel centers sit at integer coordinates: landmark `(x, y)` lies on the
//! center of column `x`, row `y`. Resizing maps `p` to `(p + 0.5) * k - 0.5`,
//! which matches the sample placement used by the Lanczos resampler.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{center_crop, lanczos_resample, Image, ImageError, ResampleSpec, CHANNELS};

/// Landmark count produced by the common 68-point face annotation scheme.
pub const DEFAULT_LANDMARK_COUNT: usize = 68;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("portrait {id}: {source}")]
    Portrait {
        id: String,
        #[source]
        source: Box<AlignError>,
    },
    #[error("landmark file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AlignError> = std::result::Result<T, E>;

/// Ordered 2-D landmarks of one portrait. Serializes to
/// `{"source_id": ..., "points": [[x, y], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub source_id: String,
    pub points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(source_id: impl Into<String>, points: Vec<[f64; 2]>) -> Result<Self> {
        let set = Self {
            source_id: source_id.into(),
            points,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AlignError::InvalidLandmarks(format!(
                "{}: non-finite coordinate",
                self.source_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("landmarks serialize")
    }

    /// Landmarks after resizing their image from `from` to `to` (width, height).
    pub fn rescaled(&self, from: (usize, usize), to: (usize, usize)) -> Self {
        let kx = to.0 as f64 / from.0 as f64;
        let ky = to.1 as f64 / from.1 as f64;
        Self {
            source_id: self.source_id.clone(),
            points: self
                .points
                .iter()
                .map(|&[x, y]| [(x + 0.5) * kx - 0.5, (y + 0.5) * ky - 0.5])
                .collect(),
        }
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> Self {
        Self {
            source_id: self.source_id.clone(),
            points: self.points.iter().map(|&p| t.apply(p)).collect(),
        }
    }
}

/// `p ↦ scale · R(rotation) · p + translation`, orientation preserving.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl SimilarityTransform {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        rotation: 0.0,
        translation: [0.0, 0.0],
    };

    /// Normalizes the rotation into `(-π, π]`.
    pub fn new(scale: f64, rotation: f64, translation: [f64; 2]) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(AlignError::Degenerate("transform scale must be positive"));
        }
        if !rotation.is_finite() || translation.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::Degenerate("non-finite transform"));
        }
        Ok(Self {
            scale,
            rotation: wrap_angle(rotation),
            translation,
        })
    }

    /// `[[a, -b], [b, a]]` with `a = s cos θ`, `b = s sin θ`.
    fn linear(&self) -> (f64, f64) {
        let (sin, cos) = self.rotation.sin_cos();
        (self.scale * cos, self.scale * sin)
    }

    pub fn apply(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        let (a, b) = self.linear();
        [
            a * x - b * y + self.translation[0],
            b * x + a * y + self.translation[1],
        ]
    }

    pub fn apply_inverse(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        let (sin, cos) = self.rotation.sin_cos();
        let (dx, dy) = (x - self.translation[0], y - self.translation[1]);
        [
            (cos * dx + sin * dy) / self.scale,
            (-sin * dx + cos * dy) / self.scale,
        ]
    }

    pub fn inverse(&self) -> Self {
        let scale = 1.0 / self.scale;
        let rotation = wrap_angle(-self.rotation);
        let mut inv = Self {
            scale,
            rotation,
            translation: [0.0, 0.0],
        };
        let t = inv.apply(self.translation);
        inv.translation = [-t[0], -t[1]];
        inv
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let t = self.apply(other.translation);
        Self {
            scale: self.scale * other.scale,
            rotation: wrap_angle(self.rotation + other.rotation),
            translation: t,
        }
    }

    /// Determinant of the rotation part; always `+1` by construction.
    pub fn rotation_determinant(&self) -> f64 {
        let (s, c) = self.rotation.sin_cos();
        c * c + s * s
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Pointwise mean of a non-empty corpus of equally sized landmark sets.
pub fn mean_landmarks(sets: &[LandmarkSet]) -> Result<LandmarkSet> {
    let first = sets
        .first()
        .ok_or_else(|| AlignError::InvalidCorpus("no landmark sets".into()))?;
    let count = first.len();
    if let Some(bad) = sets.iter().find(|s| s.len() != count) {
        return Err(AlignError::InvalidCorpus(format!(
            "{} has {} landmarks, expected {count}",
            bad.source_id,
            bad.len()
        )));
    }
    let n = sets.len() as f64;
    let points = (0..count)
        .map(|i| {
            let (sx, sy) = sets
                .iter()
                .fold((0.0, 0.0), |(ax, ay), s| (ax + s.points[i][0], ay + s.points[i][1]));
            [sx / n, sy / n]
        })
        .collect();
    Ok(LandmarkSet {
        source_id: "composite".into(),
        points,
    })
}

/// Sum of squared distances between `t(src_i)` and `dst_i`.
pub fn residual(src: &LandmarkSet, dst: &LandmarkSet, t: &SimilarityTransform) -> f64 {
    src.points
        .iter()
        .zip(&dst.points)
        .map(|(&p, &q)| {
            let m = t.apply(p);
            (m[0] - q[0]).powi(2) + (m[1] - q[1]).powi(2)
        })
        .sum()
}

fn centroid(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(ax, ay), p| (ax + p[0], ay + p[1]));
    [sx / n, sy / n]
}

/// Least-squares similarity (rotation, uniform scale, translation, no
/// reflection) taking `src` onto `dst`.
///
/// In 2-D the optimal linear part is `[[a, -b], [b, a]]` with
/// `a = Σ u·v / Σ|u|²`, `b = Σ u×v / Σ|u|²` over centered points `u`, `v`.
pub fn fit_similarity(src: &LandmarkSet, dst: &LandmarkSet) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(AlignError::InvalidLandmarks(format!(
            "{} has {} points, {} has {}",
            src.source_id,
            src.len(),
            dst.source_id,
            dst.len()
        )));
    }
    if src.len() < 2 {
        return Err(AlignError::InvalidLandmarks("need at least 2 landmarks".into()));
    }
    src.validate()?;
    dst.validate()?;

    let ms = centroid(&src.points);
    let md = centroid(&dst.points);
    let (mut dot, mut cross, mut norm, mut spread) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in src.points.iter().zip(&dst.points) {
        let (ux, uy) = (p[0] - ms[0], p[1] - ms[1]);
        let (vx, vy) = (q[0] - md[0], q[1] - md[1]);
        dot += ux * vx + uy * vy;
        cross += ux * vy - uy * vx;
        norm += ux * ux + uy * uy;
        spread += p[0] * p[0] + p[1] * p[1];
    }
    if norm <= 1e-24 * (1.0 + spread) {
        return Err(AlignError::Degenerate("source landmarks coincide"));
    }
    let scale = dot.hypot(cross) / norm;
    if scale <= 0.0 {
        return Err(AlignError::Degenerate("target landmarks coincide"));
    }
    let mut t = SimilarityTransform::new(scale, cross.atan2(dot), [0.0, 0.0])?;
    let rotated = t.apply(ms);
    t.translation = [md[0] - rotated[0], md[1] - rotated[1]];
    Ok(t)
}

fn bilinear(img: &Image, x: f64, y: f64) -> [f64; CHANNELS] {
    let (w, h) = (img.width(), img.height());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out = [0.0; CHANNELS];
    for (c, o) in out.iter_mut().enumerate() {
        let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
        let bottom = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Resamples `img` so output pixel `p` holds the source value at `t⁻¹(p)`.
/// Bilinear sampling, clamped at the source borders.
pub fn warp(img: &Image, t: &SimilarityTransform, out_side: usize) -> Result<Image> {
    if out_side == 0 {
        return Err(AlignError::Image(ImageError::InvalidSpec("zero output side".into())));
    }
    let mut data = Vec::with_capacity(out_side * out_side * CHANNELS);
    for y in 0..out_side {
        for x in 0..out_side {
            let [sx, sy] = t.apply_inverse([x as f64, y as f64]);
            data.extend_from_slice(&bilinear(img, sx, sy));
        }
    }
    Ok(Image::from_clamped(out_side, out_side, data)?)
}

/// Geometry of the corpus alignment pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub resize_side: usize,
    pub crop_side: usize,
    pub out_side: usize,
    pub kernel_radius: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            resize_side: 1024,
            crop_side: 640,
            out_side: 512,
            kernel_radius: ResampleSpec::DEFAULT_RADIUS,
        }
    }
}

impl AlignConfig {
    fn validate(&self) -> Result<()> {
        if self.out_side == 0 || self.crop_side == 0 || self.crop_side > self.resize_side {
            return Err(AlignError::InvalidCorpus(format!(
                "bad geometry: resize {} crop {} out {}",
                self.resize_side, self.crop_side, self.out_side
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AlignedPortrait {
    pub source_id: String,
    pub image: Image,
    /// Landmarks in the resized frame, before warping.
    pub landmarks: LandmarkSet,
    /// Maps the resized frame onto the composite.
    pub transform: SimilarityTransform,
}

#[derive(Clone, Debug)]
pub struct AlignedCorpus {
    /// Mean landmark positions in the resized frame.
    pub composite: LandmarkSet,
    pub portraits: Vec<AlignedPortrait>,
}

impl AlignedCorpus {
    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.portraits.iter().map(|p| &p.image)
    }
}

fn tag(id: &str) -> impl Fn(AlignError) -> AlignError + '_ {
    move |e| AlignError::Portrait {
        id: id.to_string(),
        source: Box::new(e),
    }
}

/// Resize to `resize_side`, fit each portrait onto the mean landmarks of the
/// resized corpus, warp, center-crop and downsample to `out_side`.
pub fn align_corpus(portraits: &[(Image, LandmarkSet)], cfg: &AlignConfig) -> Result<AlignedCorpus> {
    cfg.validate()?;
    if portraits.is_empty() {
        return Err(AlignError::InvalidCorpus("empty corpus".into()));
    }
    let count = portraits[0].1.len();
    for (_, lm) in portraits {
        if lm.len() != count {
            return Err(tag(&lm.source_id)(AlignError::InvalidCorpus(format!(
                "{} landmarks, corpus uses {count}",
                lm.len()
            ))));
        }
    }

    let side = cfg.resize_side;
    let resized: Vec<(Image, LandmarkSet)> = portraits
        .par_iter()
        .map(|(img, lm)| {
            let spec = ResampleSpec::square(side).with_radius(cfg.kernel_radius);
            let out = lanczos_resample(img, spec).map_err(|e| tag(&lm.source_id)(e.into()))?;
            Ok((out, lm.rescaled((img.width(), img.height()), (side, side))))
        })
        .collect::<Result<_>>()?;

    let sets: Vec<LandmarkSet> = resized.iter().map(|(_, lm)| lm.clone()).collect();
    let composite = mean_landmarks(&sets)?;

    let aligned = resized
        .into_par_iter()
        .map(|(img, lm)| {
            let id = lm.source_id.clone();
            let run = || -> Result<AlignedPortrait> {
                let transform = fit_similarity(&lm, &composite)?;
                let warped = warp(&img, &transform, side)?;
                let cropped = center_crop(&warped, cfg.crop_side)?;
                let spec = ResampleSpec::square(cfg.out_side).with_radius(cfg.kernel_radius);
                let image = lanczos_resample(&cropped, spec)?;
                Ok(AlignedPortrait {
                    source_id: lm.source_id.clone(),
                    image,
                    landmarks: lm,
                    transform,
                })
            };
            run().map_err(tag(&id))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AlignedCorpus {
        composite,
        portraits: aligned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut impl Rng, n: usize) -> LandmarkSet {
        let points = (0..n)
            .map(|_| [rng.random_range(0.0..1024.0), rng.random_range(0.0..1024.0)])
            .collect();
        LandmarkSet::new("r", points).unwrap()
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        wrap_angle(a - b).abs()
    }

    #[test]
    fn mean_of_singleton_is_itself() {
        let s = LandmarkSet::new("a", vec![[1.0, 2.0], [3.0, 5.0]]).unwrap();
        assert_eq!(mean_landmarks(std::slice::from_ref(&s)).unwrap().points, s.points);
    }

    #[test]
    fn mean_of_mirror_pair_lies_on_axis() {
        let a = LandmarkSet::new("a", vec![[1.0, 2.0], [7.5, -3.0], [4.0, 9.0]]).unwrap();
        let axis = 10.0;
        let b = LandmarkSet::new(
            "b",
            a.points.iter().map(|p| [2.0 * axis - p[0], p[1]]).collect(),
        )
        .unwrap();
        let m = mean_landmarks(&[a, b]).unwrap();
        assert!(m.points.iter().all(|p| p[0] == axis));
    }

    #[test]
    fn mean_of_three_sets_by_hand() {
        let a = LandmarkSet::new("a", vec![[0.0, 0.0], [3.0, 6.0], [1.0, 1.0]]).unwrap();
        let b = LandmarkSet::new("b", vec![[3.0, 3.0], [0.0, 0.0], [2.0, 4.0]]).unwrap();
        let c = LandmarkSet::new("c", vec![[6.0, 0.0], [3.0, 3.0], [3.0, 1.0]]).unwrap();
        let m = mean_landmarks(&[a, b, c]).unwrap();
        assert_eq!(m.points, vec![[3.0, 1.0], [2.0, 3.0], [2.0, 2.0]]);
    }

    #[test]
    fn mean_rejects_bad_corpora() {
        assert!(matches!(mean_landmarks(&[]), Err(AlignError::InvalidCorpus(_))));
        let a = LandmarkSet::new("a", vec![[0.0, 0.0]]).unwrap();
        let b = LandmarkSet::new("b", vec![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(mean_landmarks(&[a, b]), Err(AlignError::InvalidCorpus(_))));
    }

    #[test]
    fn fit_identity_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_set(&mut rng, 68);
        let t = fit_similarity(&src, &src).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.rotation.abs() < 1e-12);
        assert!(t.translation[0].abs() < 1e-9 && t.translation[1].abs() < 1e-9);

        let shifted = LandmarkSet::new(
            "s",
            src.points.iter().map(|p| [p[0] + 5.0, p[1] - 3.0]).collect(),
        )
        .unwrap();
        let t = fit_similarity(&src, &shifted).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.rotation.abs() < 1e-12);
        assert!((t.translation[0] - 5.0).abs() < 1e-9);
        assert!((t.translation[1] + 3.0).abs() < 1e-9);
    }

    #[test]
    fn fit_recovers_generated_transform_and_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let src = random_set(&mut rng, 68);
        let truth = SimilarityTransform::new(1.7, 0.4, [12.0, -8.0]).unwrap();
        let dst = src.transformed(&truth);
        let t = fit_similarity(&src, &dst).unwrap();
        assert!((t.scale - 1.7).abs() < 1e-9);
        assert!(angle_diff(t.rotation, 0.4) < 1e-9);
        assert!((t.translation[0] - 12.0).abs() < 1e-9);
        assert!((t.translation[1] + 8.0).abs() < 1e-9);

        // Random-search oracle on a noisy target: nothing nearby beats the fit.
        let noisy = LandmarkSet::new(
            "n",
            dst.points
                .iter()
                .map(|p| [p[0] + rng.random_range(-4.0..4.0), p[1] + rng.random_range(-4.0..4.0)])
                .collect(),
        )
        .unwrap();
        let fit = fit_similarity(&src, &noisy).unwrap();
        let best = residual(&src, &noisy, &fit);
        for _ in 0..10_000 {
            let cand = SimilarityTransform {
                scale: fit.scale * (1.0 + rng.random_range(-1e-3..1e-3)),
                rotation: fit.rotation + rng.random_range(-1e-3..1e-3),
                translation: [
                    fit.translation[0] + rng.random_range(-0.5..0.5),
                    fit.translation[1] + rng.random_range(-0.5..0.5),
                ],
            };
            assert!(residual(&src, &noisy, &cand) >= best);
        }
    }

    #[test]
    fn forward_and_backward_fits_compose_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let src = random_set(&mut rng, 20);
            let truth = SimilarityTransform::new(
                rng.random_range(0.5..2.0),
                rng.random_range(-PI..PI),
                [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)],
            )
            .unwrap();
            let dst = src.transformed(&truth);
            let fwd = fit_similarity(&src, &dst).unwrap();
            let back = fit_similarity(&dst, &src).unwrap();
            let id = back.compose(&fwd);
            assert!((fwd.scale * back.scale - 1.0).abs() < 1e-9);
            assert!(id.rotation.abs() < 1e-9);
            assert!(id.translation[0].abs() < 1e-9 && id.translation[1].abs() < 1e-9);
            assert_eq!(fwd.rotation_determinant().round(), 1.0);
        }
    }

    #[test]
    fn fit_never_reflects() {
        // A mirrored target: the best proper similarity cannot undo it.
        let src = LandmarkSet::new("s", vec![[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]).unwrap();
        let dst = LandmarkSet::new("d", vec![[0.0, 0.0], [-2.0, 0.0], [0.0, 1.0]]).unwrap();
        let t = fit_similarity(&src, &dst).unwrap();
        assert!(t.scale > 0.0);
        assert!((t.rotation_determinant() - 1.0).abs() < 1e-12);
        assert!(residual(&src, &dst, &t) > 1.0);
    }

    #[test]
    fn fit_rejects_degenerate_source() {
        let src = LandmarkSet::new("s", vec![[4.0, 4.0]; 5]).unwrap();
        let dst = LandmarkSet::new("d", vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 2.0]])
            .unwrap();
        assert!(matches!(fit_similarity(&src, &dst), Err(AlignError::Degenerate(_))));
        assert!(fit_similarity(&dst, &src).is_err());
    }

    #[test]
    fn inverse_round_trips() {
        let t = SimilarityTransform::new(0.8, -2.5, [3.0, 7.0]).unwrap();
        let p = [11.0, -4.0];
        let q = t.inverse().apply(t.apply(p));
        assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        let r = t.apply_inverse(t.apply(p));
        assert!((r[0] - p[0]).abs() < 1e-12 && (r[1] - p[1]).abs() < 1e-12);
    }

    fn pattern(side: usize) -> Image {
        Image::from_fn(side, side, |x, y, c| ((x * 13 + y * 7 + c * 3) % 17) as f64 / 16.0).unwrap()
    }

    #[test]
    fn warp_identity_is_top_left_window() {
        let img = pattern(12);
        assert_eq!(warp(&img, &SimilarityTransform::IDENTITY, 12).unwrap(), img);
        assert_eq!(
            warp(&img, &SimilarityTransform::IDENTITY, 7).unwrap(),
            img.crop(0, 0, 7, 7).unwrap()
        );
    }

    #[test]
    fn warp_integer_shift() {
        let img = pattern(16);
        let t = SimilarityTransform::new(1.0, 0.0, [3.0, 0.0]).unwrap();
        let out = warp(&img, &t, 16).unwrap();
        for y in 0..16 {
            for x in 3..16 {
                assert_eq!(out.pixel(x, y), img.pixel(x - 3, y));
            }
        }
    }

    #[test]
    fn warp_quarter_turn_of_symmetric_pattern() {
        let side = 15;
        let c = (side - 1) as f64 / 2.0;
        let img = Image::from_fn(side, side, |x, y, ch| {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            ((dx.abs().max(dy.abs()) + dx.abs().min(dy.abs()) * 0.5 + ch as f64) * 0.37).sin().abs()
        })
        .unwrap();
        // Rotation about the image center.
        let rot = SimilarityTransform::new(1.0, PI / 2.0, [0.0, 0.0]).unwrap();
        let shift = rot.apply([c, c]);
        let t = SimilarityTransform::new(1.0, PI / 2.0, [c - shift[0], c - shift[1]]).unwrap();
        let out = warp(&img, &t, side).unwrap();
        for y in 1..side - 1 {
            for x in 1..side - 1 {
                for ch in 0..3 {
                    assert!((out.get(x, y, ch) - img.get(x, y, ch)).abs() < 1e-9);
                }
            }
        }
    }

    fn small_cfg() -> AlignConfig {
        AlignConfig {
            resize_side: 64,
            crop_side: 40,
            out_side: 32,
            kernel_radius: 3,
        }
    }

    #[test]
    fn singleton_corpus_is_identity_aligned() {
        let img = pattern(20);
        let lm = LandmarkSet::new("solo", vec![[4.0, 5.0], [15.0, 6.0], [10.0, 15.0]]).unwrap();
        let out = align_corpus(&[(img.clone(), lm)], &AlignConfig::default()).unwrap();
        let p = &out.portraits[0];
        assert!((p.transform.scale - 1.0).abs() < 1e-9);
        assert!(p.transform.rotation.abs() < 1e-9);
        assert!(p.transform.translation.iter().all(|v| v.abs() < 1e-9));
        assert_eq!((p.image.width(), p.image.height()), (512, 512));

        // Same as resize -> crop -> downsample with no warp.
        let resized = lanczos_resample(&img, ResampleSpec::square(1024)).unwrap();
        let expect = lanczos_resample(&center_crop(&resized, 640).unwrap(), ResampleSpec::square(512))
            .unwrap();
        let max_err = p
            .image
            .data()
            .iter()
            .zip(expect.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-9);
    }

    #[test]
    fn equal_landmarks_give_identity_transforms() {
        let lm = LandmarkSet::new("x", vec![[3.0, 4.0], [12.0, 5.0], [8.0, 14.0], [6.0, 9.0]]).unwrap();
        let corpus: Vec<_> = (0..3)
            .map(|i| {
                let mut l = lm.clone();
                l.source_id = format!("p{i}");
                (pattern(18), l)
            })
            .collect();
        let out = align_corpus(&corpus, &small_cfg()).unwrap();
        for p in &out.portraits {
            assert!((p.transform.scale - 1.0).abs() < 1e-9);
            assert!(p.transform.rotation.abs() < 1e-9);
            assert!(p.transform.translation.iter().all(|v| v.abs() < 1e-9));
            assert_eq!((p.image.width(), p.image.height()), (32, 32));
        }
    }

    #[test]
    fn rotated_copy_residual_drops() {
        let base = LandmarkSet::new(
            "a",
            vec![[6.0, 7.0], [13.0, 7.0], [9.5, 11.0], [7.0, 14.0], [12.0, 14.0]],
        )
        .unwrap();
        let c = 9.5;
        let rot = SimilarityTransform::new(1.0, 0.3, [0.0, 0.0]).unwrap();
        let r = rot.apply([c, c]);
        let about_center = SimilarityTransform::new(1.0, 0.3, [c - r[0], c - r[1]]).unwrap();
        let mut turned = base.transformed(&about_center);
        turned.source_id = "b".into();
        let img = pattern(20);
        let rotated_img = warp(&img, &about_center, 20).unwrap();

        let out = align_corpus(&[(img, base), (rotated_img, turned)], &small_cfg()).unwrap();
        let before: f64 = out
            .portraits
            .iter()
            .map(|p| residual(&p.landmarks, &out.composite, &SimilarityTransform::IDENTITY))
            .sum();
        let after: f64 = out
            .portraits
            .iter()
            .map(|p| residual(&p.landmarks, &out.composite, &p.transform))
            .sum();
        assert!(before > 1.0);
        assert!(after < 1e-6 * before, "before {before} after {after}");
    }

    #[test]
    fn corpus_errors_carry_portrait_id() {
        let a = LandmarkSet::new("a", vec![[1.0, 1.0], [5.0, 5.0]]).unwrap();
        let b = LandmarkSet::new("bad", vec![[1.0, 1.0]]).unwrap();
        let err = align_corpus(&[(pattern(8), a), (pattern(8), b)], &small_cfg()).unwrap_err();
        assert!(matches!(err, AlignError::Portrait { ref id, .. } if id == "bad"));

        let flat = LandmarkSet::new("flat", vec![[2.0, 2.0], [2.0, 2.0]]).unwrap();
        let err = align_corpus(&[(pattern(8), flat)], &small_cfg()).unwrap_err();
        assert!(matches!(err, AlignError::Portrait { ref id, .. } if id == "flat"));
        assert!(align_corpus(&[], &small_cfg()).is_err());
    }

    #[test]
    fn landmark_json_round_trip() {
        let text = r#"{"source_id": "p001", "points": [[1.5, 2.0], [3.0, 4.25]]}"#;
        let lm = LandmarkSet::from_json(text).unwrap();
        assert_eq!(lm.points, vec![[1.5, 2.0], [3.0, 4.25]]);
        assert_eq!(LandmarkSet::from_json(&lm.to_json()).unwrap(), lm);
        assert!(LandmarkSet::from_json(r#"{"source_id": "x", "points": [[1.0]]}"#).is_err());
    }
}
