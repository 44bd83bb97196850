//! PNG and binary PPM (P6) output, PNG/PPM input. 8 bits per channel.

use std::io::Write;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::rasterizer::Image;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb8(img: &Image) -> RgbImage {
    RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let p = img.pixel(x as usize, y as usize);
        Rgb([quantize(p[0]), quantize(p[1]), quantize(p[2])])
    })
}

/// Decoded pixels with alpha set to 1.
pub fn from_rgb8(rgb: &RgbImage) -> Image {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut img = Image::new(w, h, [0.0; 3]);
    for (x, y, p) in rgb.enumerate_pixels() {
        let i = (y as usize * w + x as usize) * 4;
        for c in 0..3 {
            img.data[i + c] = p[c] as f64 / 255.0;
        }
        img.data[i + 3] = 1.0;
    }
    img
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::input(format!("{path:?}: image path must end in .png or .ppm"))),
    }
}

pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let rgb = to_rgb8(img);
    let io_err = |e: image::ImageError| Error::io(path, std::io::Error::other(e.to_string()));
    match format {
        ImageFormat::Pnm => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut out = std::io::BufWriter::new(file);
            PnmEncoder::new(&mut out)
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                .write_image(rgb.as_raw(), rgb.width(), rgb.height(), ExtendedColorType::Rgb8)
                .map_err(io_err)?;
            out.flush().map_err(|e| Error::io(path, e))
        }
        _ => rgb.save_with_format(path, format).map_err(io_err),
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, format).map_err(|e| Error::Malformed {
        format: "image",
        path: path.to_path_buf(),
        location: "byte 0".into(),
        message: e.to_string(),
    })?;
    Ok(from_rgb8(&decoded.to_rgb8()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_ppm_round_trip_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(5, 3, [0.0; 3]);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f64 / 255.0;
        }
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            write_image(&img, &p).unwrap();
            let back = read_image(&p).unwrap();
            for (i, (a, b)) in img.data.iter().zip(&back.data).enumerate() {
                if i % 4 != 3 {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        let ppm = std::fs::read(dir.path().join("a.ppm")).unwrap();
        assert_eq!(&ppm[..2], b"P6");
    }
}
