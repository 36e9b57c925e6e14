use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{luma, Image};
use crate::error::{Error, Result};

/// Magnitudes of the training-time augmentations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hflip_prob: f32,
    pub vflip_prob: f32,
    /// Zoom factor range; must bracket 1.
    pub scale_range: [f32; 2],
    /// Max additive brightness offset.
    pub brightness: f32,
    /// Max fractional contrast change.
    pub contrast: f32,
    /// Max fractional saturation change.
    pub saturation: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            scale_range: [0.9, 1.1],
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Configuration under which [`augment`] is the identity.
    pub fn disabled() -> Self {
        AugmentConfig {
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            scale_range: [1.0, 1.0],
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f32| (0.0..=1.0).contains(&p);
        if !prob(self.hflip_prob) || !prob(self.vflip_prob) {
            return Err(Error::Config(
                "flip probabilities must lie in [0, 1]".into(),
            ));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= 1.0 && 1.0 <= hi) {
            return Err(Error::Config(format!(
                "scale range [{lo}, {hi}] must bracket 1"
            )));
        }
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One concrete draw of augmentation parameters. Sampling consumes the RNG
/// in a fixed order regardless of which transforms are active.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub scale: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub noise_sigma: f32,
}

impl AugmentParams {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let mut uniform = || rng.random::<f32>();
        let hflip = uniform() < cfg.hflip_prob;
        let vflip = uniform() < cfg.vflip_prob;
        let [lo, hi] = cfg.scale_range;
        let scale = lo + (hi - lo) * uniform();
        let mut jitter = |m: f32| m * (2.0 * uniform() - 1.0);
        AugmentParams {
            hflip,
            vflip,
            scale,
            brightness: jitter(cfg.brightness),
            contrast: 1.0 + jitter(cfg.contrast),
            saturation: 1.0 + jitter(cfg.saturation),
            noise_sigma: cfg.noise_sigma,
        }
    }

    /// Applies flips, scale-and-center-crop, brightness, contrast, saturation
    /// and additive Gaussian noise, in that order.
    pub fn apply<R: Rng + ?Sized>(&self, image: &Image, rng: &mut R) -> Image {
        let mut img = self.apply_without_noise(image);
        if self.noise_sigma > 0.0 {
            for v in img.data_mut() {
                let z: f32 = StandardNormal.sample(rng);
                *v += self.noise_sigma * z;
            }
            img.clip();
        }
        img
    }

    /// Everything except the noise; used to keep an external SR target
    /// aligned with its augmented input.
    pub fn apply_without_noise(&self, image: &Image) -> Image {
        let mut img = image.clone();
        if self.hflip {
            img = flip(&img, true);
        }
        if self.vflip {
            img = flip(&img, false);
        }
        if self.scale != 1.0 {
            img = zoom(&img, self.scale);
        }
        if self.brightness != 0.0 {
            img.data_mut()
                .iter_mut()
                .for_each(|v| *v += self.brightness);
            img.clip();
        }
        if self.contrast != 1.0 {
            let mean = img.luma().iter().map(|&v| v as f64).sum::<f64>()
                / (img.height() * img.width()) as f64;
            let mean = mean as f32;
            let c = self.contrast;
            img.data_mut()
                .iter_mut()
                .for_each(|v| *v = mean + c * (*v - mean));
            img.clip();
        }
        if self.saturation != 1.0 {
            let s = self.saturation;
            for px in img.data_mut().chunks_mut(3) {
                let y = luma(px[0], px[1], px[2]);
                px.iter_mut().for_each(|v| *v = y + s * (*v - y));
            }
            img.clip();
        }
        img
    }
}

/// Samples parameters from `cfg` and applies them.
pub fn augment<R: Rng + ?Sized>(image: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    AugmentParams::sample(cfg, rng).apply(image, rng)
}

fn flip(image: &Image, horizontal: bool) -> Image {
    let (h, w) = (image.height(), image.width());
    let mut data = Vec::with_capacity(image.data().len());
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = if horizontal {
                (y, w - 1 - x)
            } else {
                (h - 1 - y, x)
            };
            data.extend_from_slice(&image.data()[(sy * w + sx) * 3..(sy * w + sx) * 3 + 3]);
        }
    }
    Image::from_rgb(h, w, data).expect("same extents")
}

/// Zooms about the image center by `scale`, keeping the extents; borders
/// are edge-clamped when zooming out.
fn zoom(image: &Image, scale: f32) -> Image {
    let (h, w) = (image.height(), image.width());
    let coord = |d: usize, n: usize| -> (usize, usize, f32) {
        let half = n as f32 / 2.0;
        let s = ((d as f32 + 0.5 - half) / scale + half - 0.5).clamp(0.0, (n - 1) as f32);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n - 1), s - i0 as f32)
    };
    let at = |y: usize, x: usize, c: usize| image.get(y, x, c);
    let mut data = Vec::with_capacity(image.data().len());
    for y in 0..h {
        let (y0, y1, ty) = coord(y, h);
        for x in 0..w {
            let (x0, x1, tx) = coord(x, w);
            for c in 0..3 {
                let top = at(y0, x0, c) * (1.0 - tx) + at(y0, x1, c) * tx;
                let bottom = at(y1, x0, c) * (1.0 - tx) + at(y1, x1, c) * tx;
                data.push(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    Image::from_rgb(h, w, data).expect("same extents")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_image() -> Image {
        Image::from_rgb(
            6,
            5,
            (0..90).map(|i| ((i * 13) % 29) as f32 / 29.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let img = sample_image();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(augment(&img, &AugmentConfig::disabled(), &mut rng), img);
    }

    #[test]
    fn double_hflip_is_identity() {
        let img = sample_image();
        let cfg = AugmentConfig {
            hflip_prob: 1.0,
            ..AugmentConfig::disabled()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let once = augment(&img, &cfg, &mut rng);
        assert_ne!(once, img);
        assert_eq!(augment(&once, &cfg, &mut rng), img);
    }

    #[test]
    fn same_seed_same_output() {
        let img = sample_image();
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(42));
        let b = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a.data(), b.data());
        let c = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(43));
        assert_ne!(a.data(), c.data());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            scale_range: [1.1, 1.2],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            hflip_prob: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
