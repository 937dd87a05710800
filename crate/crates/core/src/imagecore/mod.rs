//! Raster primitives shared by the rest of the pipeline.
//!
//! Images are RGB grids of real intensities in `[0, 1]`, stored row-major with
//! interleaved channels. Conversion to 8-bit only happens at PNG boundaries.

mod png_io;
mod resample;

pub use png_io::{content_hash, decode_png, encode_png, read_png, to_rgb8, write_png};
pub use resample::{lanczos_kernel, lanczos_resample, LanczosUpsampler, ResampleSpec, Upsampler};

use thiserror::Error;

pub const CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("invalid resample spec: {0}")]
    InvalidSpec(String),
    #[error("crop side {side} exceeds image {width}x{height}")]
    InvalidCrop {
        side: usize,
        width: usize,
        height: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("correlation undefined: image has zero pixel variance")]
    UndefinedCorrelation,
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

/// Row-major RGB image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from interleaved RGB data, rejecting wrong lengths and
    /// values outside `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("zero-sized image {width}x{height}")));
        }
        if data.len() != width * height * CHANNELS {
            return Err(ImageError::Invalid(format!(
                "expected {} intensities for {width}x{height}, got {}",
                width * height * CHANNELS,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(ImageError::Invalid(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image from arbitrary finite values, clamping into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::Invalid("non-finite intensity".into()));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height * CHANNELS])
    }

    /// Builds an image by evaluating `f(x, y, channel)`; results are clamped.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_clamped(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; CHANNELS] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Rectangular window with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(ImageError::Invalid(format!(
                "window {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + width * CHANNELS]);
        }
        Ok(Self { width, height, data })
    }

    /// Pastes `tile` with its top-left corner at `(x0, y0)`. The tile must fit.
    pub fn paste(&mut self, tile: &Image, x0: usize, y0: usize) -> Result<()> {
        if x0 + tile.width > self.width || y0 + tile.height > self.height {
            return Err(ImageError::Shape(format!(
                "tile {}x{} at ({x0},{y0}) does not fit {}x{}",
                tile.width, tile.height, self.width, self.height
            )));
        }
        for y in 0..tile.height {
            let dst = ((y0 + y) * self.width + x0) * CHANNELS;
            let src = y * tile.width * CHANNELS;
            self.data[dst..dst + tile.width * CHANNELS]
                .copy_from_slice(&tile.data[src..src + tile.width * CHANNELS]);
        }
        Ok(())
    }
}

/// Tiles equally sized images row-major into a `rows`×`cols` grid with no
/// gutter. Cells past the end of `tiles` stay black.
pub fn tile_grid(tiles: &[Image], rows: usize, cols: usize) -> Result<Image> {
    let first = tiles
        .first()
        .ok_or_else(|| ImageError::Shape("no tiles".into()))?;
    if tiles.len() > rows * cols {
        return Err(ImageError::Shape(format!(
            "{} tiles do not fit {rows}x{cols}",
            tiles.len()
        )));
    }
    let (w, h) = (first.width, first.height);
    let mut grid = Image::filled(w * cols, h * rows, 0.0)?;
    for (i, t) in tiles.iter().enumerate() {
        if !t.same_shape(first) {
            return Err(ImageError::Shape(format!(
                "tile {i} is {}x{}, expected {w}x{h}",
                t.width, t.height
            )));
        }
        grid.paste(t, (i % cols) * w, (i / cols) * h)?;
    }
    Ok(grid)
}

/// Centered `side`×`side` window; odd margins round the offset down.
pub fn center_crop(img: &Image, side: usize) -> Result<Image> {
    if side == 0 || side > img.width || side > img.height {
        return Err(ImageError::InvalidCrop {
            side,
            width: img.width,
            height: img.height,
        });
    }
    let x0 = (img.width - side) / 2;
    let y0 = (img.height - side) / 2;
    img.crop(x0, y0, side, side)
}

/// Pearson correlation over all flattened channel intensities.
pub fn pixel_correlation(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(ImageError::Shape(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let n = a.data.len() as f64;
    let mean_a = a.data.iter().sum::<f64>() / n;
    let mean_b = b.data.iter().sum::<f64>() / n;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a.data.iter().zip(&b.data) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    // Rounding in the mean leaves tiny residuals on constant images.
    let floor = 1e-24 * n;
    if saa <= floor || sbb <= floor {
        return Err(ImageError::UndefinedCorrelation);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}
