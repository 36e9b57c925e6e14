use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::Image;
use crate::error::{Error, Result};

/// Reads an 8-bit RGB PNG or binary PPM (P6). Other decodable inputs are
/// converted to RGB8 first.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let rgb = decoded.to_rgb8();
    Image::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())
}

/// Writes the image as 8-bit RGB; `.ppm` selects PPM (P6), anything else PNG.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_ppm = matches!(path.extension().and_then(|e| e.to_str()), Some(ext) if ext.eq_ignore_ascii_case("ppm"));
    let (w, h) = (image.width() as u32, image.height() as u32);
    let pixels = image.to_rgb8();
    let mut encoded = Vec::new();
    let written = if is_ppm {
        PnmEncoder::new(&mut encoded)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(&pixels, w, h, ExtendedColorType::Rgb8)
    } else {
        PngEncoder::new(&mut encoded).write_image(&pixels, w, h, ExtendedColorType::Rgb8)
    };
    written.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    std::fs::write(path, encoded).map_err(|e| Error::io(path, e))
}

/// `<dir>/<stem>.sr.png` next to an image file.
pub fn sr_sibling_path(image_path: &Path) -> PathBuf {
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    image_path.with_file_name(format!("{stem}.sr.png"))
}
