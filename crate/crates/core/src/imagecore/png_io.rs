use std::fs;
use std::io::Cursor;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Image, ImageError, Result, CHANNELS};

/// Quantizes to 8-bit RGB with round-half-up: `floor(i * 255 + 0.5)`.
pub fn to_rgb8(img: &Image) -> Vec<u8> {
    img.data()
        .iter()
        .map(|v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| ImageError::Png(e.to_string()))?;
        writer
            .write_image_data(&to_rgb8(img))
            .map_err(|e| ImageError::Png(e.to_string()))?;
        writer.finish().map_err(|e| ImageError::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Decodes any 8/16-bit PNG into RGB intensities. Alpha is dropped and
/// grayscale is replicated across channels.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| ImageError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageError::Png(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let per_px = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(ImageError::Png("palette was not expanded".into()));
        }
    };
    let mut data = Vec::with_capacity(w * h * CHANNELS);
    for y in 0..h {
        let row = &buf[y * stride..y * stride + w * per_px];
        for px in row.chunks_exact(per_px) {
            let rgb = if per_px < 3 {
                [px[0]; 3]
            } else {
                [px[0], px[1], px[2]]
            };
            data.extend(rgb.iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    Image::new(w, h, data)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    decode_png(&fs::read(path)?)
}

pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    fs::write(path, encode_png(img)?)?;
    Ok(())
}

/// Hex SHA-256 over the dimensions and the 8-bit pixel payload. Two images
/// that would write identical PNG pixels share a hash.
pub fn content_hash(img: &Image) -> String {
    let mut h = Sha256::new();
    h.update((img.width() as u64).to_le_bytes());
    h.update((img.height() as u64).to_le_bytes());
    h.update(to_rgb8(img));
    hex::encode(h.finalize())
}
