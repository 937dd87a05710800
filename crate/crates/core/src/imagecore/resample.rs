use std::f64::consts::PI;

use super::{Image, ImageError, Result, CHANNELS};

/// Target geometry and lobe count for [`lanczos_resample`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResampleSpec {
    pub out_width: usize,
    pub out_height: usize,
    pub kernel_radius: usize,
}

impl ResampleSpec {
    pub const DEFAULT_RADIUS: usize = 3;

    pub fn new(out_width: usize, out_height: usize) -> Self {
        Self {
            out_width,
            out_height,
            kernel_radius: Self::DEFAULT_RADIUS,
        }
    }

    pub fn square(side: usize) -> Self {
        Self::new(side, side)
    }

    pub fn with_radius(mut self, radius: usize) -> Self {
        self.kernel_radius = radius;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.out_width == 0 || self.out_height == 0 {
            return Err(ImageError::InvalidSpec(format!(
                "zero-sized output {}x{}",
                self.out_width, self.out_height
            )));
        }
        if self.kernel_radius == 0 {
            return Err(ImageError::InvalidSpec("kernel radius must be >= 1".into()));
        }
        Ok(())
    }
}

/// `sinc(x) * sinc(x / a)` on `|x| < a`, zero elsewhere.
///
/// Nonzero integers return exactly zero so that same-size resampling is a
/// bit-exact copy.
pub fn lanczos_kernel(x: f64, a: f64) -> f64 {
    let ax = x.abs();
    if ax >= a {
        return 0.0;
    }
    if x == 0.0 {
        return 1.0;
    }
    if x.fract() == 0.0 {
        return 0.0;
    }
    let px = PI * x;
    a * px.sin() * (px / a).sin() / (px * px)
}

/// Per-output-sample source taps along one axis, weights normalized to 1.
struct AxisTaps {
    starts: Vec<usize>,
    lens: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl AxisTaps {
    fn new(in_len: usize, out_len: usize, radius: usize) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let stretch = scale.max(1.0);
        let a = radius as f64;
        let support = a * stretch;
        let last = (in_len - 1) as isize;

        let mut taps = AxisTaps {
            starts: Vec::with_capacity(out_len),
            lens: Vec::with_capacity(out_len),
            indices: Vec::new(),
            weights: Vec::new(),
        };
        for i in 0..out_len {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let start = taps.weights.len();
            let mut total = 0.0;
            for j in lo..=hi {
                let w = lanczos_kernel((j as f64 - center) / stretch, a);
                if w == 0.0 {
                    continue;
                }
                taps.indices.push(j.clamp(0, last) as usize);
                taps.weights.push(w);
                total += w;
            }
            for w in &mut taps.weights[start..] {
                *w /= total;
            }
            taps.starts.push(start);
            taps.lens.push(taps.weights.len() - start);
        }
        taps
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.starts[i]..self.starts[i] + self.lens[i];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }
}

/// Separable Lanczos resampling with clamp-to-edge borders.
///
/// Source and destination pixel centers sit at `i + 0.5` in their own
/// coordinate frames; when shrinking, the kernel is stretched by the scale
/// factor. The intermediate pass is kept unclamped, the output is clamped.
pub fn lanczos_resample(img: &Image, spec: ResampleSpec) -> Result<Image> {
    spec.validate()?;
    let (in_w, in_h) = (img.width(), img.height());
    let (out_w, out_h) = (spec.out_width, spec.out_height);
    let src = img.data();

    let xt = AxisTaps::new(in_w, out_w, spec.kernel_radius);
    let mut tmp = vec![0.0; out_w * in_h * CHANNELS];
    for y in 0..in_h {
        for ox in 0..out_w {
            let mut acc = [0.0; CHANNELS];
            for (sx, w) in xt.row(ox) {
                let p = (y * in_w + sx) * CHANNELS;
                for c in 0..CHANNELS {
                    acc[c] += w * src[p + c];
                }
            }
            let o = (y * out_w + ox) * CHANNELS;
            tmp[o..o + CHANNELS].copy_from_slice(&acc);
        }
    }

    let yt = AxisTaps::new(in_h, out_h, spec.kernel_radius);
    let mut out = vec![0.0; out_w * out_h * CHANNELS];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut acc = [0.0; CHANNELS];
            for (sy, w) in yt.row(oy) {
                let p = (sy * out_w + ox) * CHANNELS;
                for c in 0..CHANNELS {
                    acc[c] += w * tmp[p + c];
                }
            }
            let o = (oy * out_w + ox) * CHANNELS;
            out[o..o + CHANNELS].copy_from_slice(&acc);
        }
    }
    Image::from_clamped(out_w, out_h, out)
}

/// Enlarges an image to a square display size.
///
/// Learned super-resolution networks implement this externally; the Lanczos
/// implementation is the built-in baseline.
pub trait Upsampler: Send + Sync {
    fn upsample(&self, img: &Image, side: usize) -> Result<Image>;
}

#[derive(Clone, Copy, Debug)]
pub struct LanczosUpsampler {
    pub radius: usize,
}

impl Default for LanczosUpsampler {
    fn default() -> Self {
        Self {
            radius: ResampleSpec::DEFAULT_RADIUS,
        }
    }
}

impl Upsampler for LanczosUpsampler {
    fn upsample(&self, img: &Image, side: usize) -> Result<Image> {
        lanczos_resample(img, ResampleSpec::square(side).with_radius(self.radius))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 2-D convolution sum written against the textbook kernel, with no
    /// separability or tap caching.
    fn oracle(img: &Image, ow: usize, oh: usize, a: usize) -> Vec<f64> {
        fn kernel(x: f64, a: f64) -> f64 {
            if x.abs() >= a {
                return 0.0;
            }
            let sinc = |t: f64| {
                if t.abs() < 1e-300 {
                    1.0
                } else {
                    (PI * t).sin() / (PI * t)
                }
            };
            sinc(x) * sinc(x / a)
        }
        let (iw, ih) = (img.width() as isize, img.height() as isize);
        let (sx, sy) = (iw as f64 / ow as f64, ih as f64 / oh as f64);
        let (fx, fy) = (sx.max(1.0), sy.max(1.0));
        let af = a as f64;
        let mut out = Vec::new();
        for oy in 0..oh {
            for ox in 0..ow {
                let cx = (ox as f64 + 0.5) * sx - 0.5;
                let cy = (oy as f64 + 0.5) * sy - 0.5;
                let mut acc = [0.0; 3];
                let mut wsum = 0.0;
                for jy in -40..ih + 40 {
                    let wy = kernel((jy as f64 - cy) / fy, af);
                    for jx in -40..iw + 40 {
                        let w = wy * kernel((jx as f64 - cx) / fx, af);
                        if w == 0.0 {
                            continue;
                        }
                        let px = jx.clamp(0, iw - 1) as usize;
                        let py = jy.clamp(0, ih - 1) as usize;
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += w * img.get(px, py, c);
                        }
                        wsum += w;
                    }
                }
                for v in acc {
                    out.push((v / wsum).clamp(0.0, 1.0));
                }
            }
        }
        out
    }

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |_, _, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn identity_resample_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 512, 512);
        let out = lanczos_resample(&img, ResampleSpec::square(512)).unwrap();
        assert_eq!(out, img);
        for a in 1..=5 {
            let small = random_image(&mut rng, 9, 6);
            assert_eq!(
                lanczos_resample(&small, ResampleSpec::new(9, 6).with_radius(a)).unwrap(),
                small
            );
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(13, 7, 0.25).unwrap();
        for (w, h) in [(1, 1), (3, 20), (26, 14), (64, 3)] {
            let out = lanczos_resample(&img, ResampleSpec::new(w, h)).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn ramp_downsample_matches_oracle() {
        let img = Image::from_fn(4, 4, |x, _, c| (x as f64 + c as f64 * 0.1) / 4.0).unwrap();
        let out = lanczos_resample(&img, ResampleSpec::square(2)).unwrap();
        let expect = oracle(&img, 2, 2, 3);
        for (g, e) in out.data().iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn rejects_zero_output() {
        let img = Image::filled(4, 4, 0.5).unwrap();
        assert!(matches!(
            lanczos_resample(&img, ResampleSpec::new(0, 4)),
            Err(ImageError::InvalidSpec(_))
        ));
        assert!(lanczos_resample(&img, ResampleSpec::new(4, 4).with_radius(0)).is_err());
    }

    #[test]
    fn kernel_values() {
        assert_eq!(lanczos_kernel(0.0, 3.0), 1.0);
        assert_eq!(lanczos_kernel(2.0, 3.0), 0.0);
        assert_eq!(lanczos_kernel(3.0, 3.0), 0.0);
        assert_eq!(lanczos_kernel(-3.5, 3.0), 0.0);
        let x: f64 = 0.5;
        let direct = (PI * x).sin() / (PI * x) * (PI * x / 3.0).sin() / (PI * x / 3.0);
        assert!((lanczos_kernel(x, 3.0) - direct).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn agrees_with_direct_sum(seed in any::<u64>(), iw in 1usize..=8, ih in 1usize..=8,
                                  ow in 1usize..=4, oh in 1usize..=4, a in 1usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, iw, ih);
            let out = lanczos_resample(&img, ResampleSpec::new(ow, oh).with_radius(a)).unwrap();
            let expect = oracle(&img, ow, oh, a);
            for (g, e) in out.data().iter().zip(&expect) {
                prop_assert!((g - e).abs() < 1e-12);
            }
        }
    }
}
