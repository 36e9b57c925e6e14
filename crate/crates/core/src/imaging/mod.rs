//! RGB images in the unit interval, file I/O, and the preprocessing chain
//! (color constancy → CLAHE → resize), SR-target generation and augmentation.

mod augment;
mod clahe;
mod color;
mod io;
mod resample;

pub use augment::{augment, AugmentConfig, AugmentParams};
pub use clahe::{clahe, clahe_with_mode, ClaheMode};
pub use color::shades_of_gray;
pub use io::{load_image, save_image, sr_sibling_path};
pub use resample::{resize_bicubic, resize_bilinear, resize_plane_bilinear, sr_target, SrMethod};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// H×W×3 raster, channels interleaved, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    /// Builds an image from interleaved RGB values, clipping into `[0, 1]`.
    pub fn from_rgb(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("image extents must be positive"));
        }
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "{height}×{width} RGB image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("image contains non-finite values".into()));
        }
        let mut img = Image {
            height,
            width,
            data,
        };
        img.clip();
        Ok(img)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Image::from_rgb(height, width, data).expect("valid extents")
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Image::from_rgb(
            height,
            width,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub(crate) fn clip(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub(crate) fn from_planes(height: usize, width: usize, planes: [&[f32]; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for i in 0..height * width {
            data.extend(planes.iter().map(|p| p[i]));
        }
        Image::from_rgb(height, width, data)
    }

    /// BT.601 luma of every pixel.
    pub fn luma(&self) -> Vec<f32> {
        self.data
            .chunks(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .collect()
    }

    /// Appends this image to `out` in CHW order.
    pub fn write_chw<T: Scalar>(&self, out: &mut Vec<T>) {
        for c in 0..3 {
            out.extend(
                self.data
                    .iter()
                    .skip(c)
                    .step_by(3)
                    .map(|&v| T::from_f64(v as f64)),
            );
        }
    }
}

pub(crate) fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stacks equally sized images into an N×3×H×W tensor.
pub fn batch_tensor<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::shape("cannot batch zero images"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(Error::shape(format!(
                "batch mixes {h}×{w} and {}×{} images",
                img.height, img.width
            )));
        }
        img.write_chw(&mut data);
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

/// Settings of the fixed preprocessing chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Minkowski norm order for shades-of-gray.
    pub gray_p: f32,
    pub clahe_clip_limit: f32,
    pub clahe_tiles: usize,
    pub clahe_mode: ClaheMode,
    pub skip_color_constancy: bool,
    pub skip_clahe: bool,
    /// Square output extent.
    pub size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            gray_p: 6.0,
            clahe_clip_limit: 2.0,
            clahe_tiles: 8,
            clahe_mode: ClaheMode::Luma,
            skip_color_constancy: false,
            skip_clahe: false,
            size: 64,
        }
    }
}

/// Color constancy, then CLAHE, then resize to `size × size`.
pub fn preprocess(image: &Image, cfg: &PreprocessConfig) -> Result<Image> {
    let mut img = image.clone();
    if !cfg.skip_color_constancy {
        img = shades_of_gray(&img, cfg.gray_p)?;
    }
    if !cfg.skip_clahe {
        img = clahe_with_mode(&img, cfg.clahe_clip_limit, cfg.clahe_tiles, cfg.clahe_mode)?;
    }
    resize_bilinear(&img, cfg.size, cfg.size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_rgb_clips_and_validates() {
        let img = Image::from_rgb(1, 1, vec![-0.5, 0.5, 2.0]).unwrap();
        assert_eq!(img.data(), &[0.0, 0.5, 1.0]);
        assert!(Image::from_rgb(1, 2, vec![0.0; 3]).is_err());
        assert!(Image::from_rgb(1, 1, vec![f32::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn batch_is_chw() {
        let a = Image::filled(1, 2, [0.1, 0.2, 0.3]);
        let t = batch_tensor::<f32>(&[&a, &a]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 1, 2]);
        assert_eq!(&t.data()[..6], &[0.1, 0.1, 0.2, 0.2, 0.3, 0.3]);
        assert!(batch_tensor::<f32>(&[&a, &Image::filled(2, 2, [0.0; 3])]).is_err());
    }

    #[test]
    fn preprocess_outputs_requested_size() {
        let img = Image::filled(20, 30, [0.4, 0.5, 0.6]);
        let out = preprocess(
            &img,
            &PreprocessConfig {
                size: 16,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!((out.height(), out.width()), (16, 16));
    }
}
