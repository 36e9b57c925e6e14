use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_image, sr_sibling_path, Image};
use crate::error::{Error, Result};

/// Source coordinate of destination index `dst` under the half-pixel-center
/// convention.
fn source_coord(dst: usize, in_len: usize, out_len: usize) -> f64 {
    (dst as f64 + 0.5) * (in_len as f64 / out_len as f64) - 0.5
}

/// Bilinear resampling of one row-major plane; no clipping is applied.
pub fn resize_plane_bilinear(
    plane: &[f32],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f32)> {
        (0..out_len)
            .map(|d| {
                let s = source_coord(d, in_len, out_len).clamp(0.0, (in_len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let (ys, xs) = (taps(out_h, h), taps(out_w, w));
    let lerp = |a: f32, b: f32, t: f32| a * (1.0 - t) + b * t;
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], tx);
            let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], tx);
            out.push(lerp(top, bottom, ty));
        }
    }
    out
}

fn check_extents(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize target extents must be positive"));
    }
    Ok(())
}

fn per_channel(
    image: &Image,
    out_h: usize,
    out_w: usize,
    f: impl Fn(&[f32]) -> Vec<f32>,
) -> Result<Image> {
    let planes: Vec<Vec<f32>> = (0..3).map(|c| f(&image.channel(c))).collect();
    Image::from_planes(out_h, out_w, [&planes[0], &planes[1], &planes[2]])
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(image: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    check_extents(out_h, out_w)?;
    if (out_h, out_w) == (image.height(), image.width()) {
        return Ok(image.clone());
    }
    let (h, w) = (image.height(), image.width());
    per_channel(image, out_h, out_w, |p| {
        resize_plane_bilinear(p, h, w, out_h, out_w)
    })
}

/// Catmull-Rom cubic convolution kernel (a = −0.5).
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x.powi(3) - (A + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        A * x.powi(3) - 5.0 * A * x.powi(2) + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

fn resize_plane_bicubic(plane: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let taps = |out_len: usize, in_len: usize| -> Vec<([usize; 4], [f64; 4])> {
        (0..out_len)
            .map(|d| {
                let s = source_coord(d, in_len, out_len);
                let base = s.floor();
                let t = s - base;
                let mut idx = [0usize; 4];
                let mut wts = [0.0f64; 4];
                for k in 0..4 {
                    let i = base as isize + k as isize - 1;
                    idx[k] = i.clamp(0, in_len as isize - 1) as usize;
                    wts[k] = cubic_weight(t - (k as f64 - 1.0));
                }
                (idx, wts)
            })
            .collect()
    };
    let (ys, xs) = (taps(out_h, h), taps(out_w, w));
    let mut out = Vec::with_capacity(out_h * out_w);
    for (yi, yw) in &ys {
        for (xi, xw) in &xs {
            let mut acc = 0.0f64;
            for a in 0..4 {
                let row = &plane[yi[a] * w..(yi[a] + 1) * w];
                let r: f64 = (0..4).map(|b| row[xi[b]] as f64 * xw[b]).sum();
                acc += r * yw[a];
            }
            out.push(acc as f32);
        }
    }
    out
}

/// Bicubic (Catmull-Rom) resize with half-pixel centers; clipped to `[0, 1]`.
pub fn resize_bicubic(image: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    check_extents(out_h, out_w)?;
    let (h, w) = (image.height(), image.width());
    per_channel(image, out_h, out_w, |p| {
        resize_plane_bicubic(p, h, w, out_h, out_w)
    })
}

/// How the super-resolution target of an image is produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SrMethod {
    #[default]
    Bilinear,
    Bicubic,
    /// A precomputed `<stem>.sr.png` next to the source image.
    File,
}

impl std::str::FromStr for SrMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(SrMethod::Bilinear),
            "bicubic" => Ok(SrMethod::Bicubic),
            "file" => Ok(SrMethod::File),
            other => Err(Error::Config(format!("unknown SR method `{other}`"))),
        }
    }
}

/// Upscales `image` by `factor` (a power of two). The `File` method reads the
/// sibling SR image of `source_path` and checks its extents.
pub fn sr_target(
    image: &Image,
    method: SrMethod,
    factor: usize,
    source_path: Option<&Path>,
) -> Result<Image> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::Config(format!(
            "SR factor must be a power of two, got {factor}"
        )));
    }
    let (oh, ow) = (image.height() * factor, image.width() * factor);
    match method {
        SrMethod::Bilinear => resize_bilinear(image, oh, ow),
        SrMethod::Bicubic => resize_bicubic(image, oh, ow),
        SrMethod::File => {
            let src = source_path.ok_or_else(|| {
                Error::Config("file SR method needs the source image path".into())
            })?;
            let target = load_image(sr_sibling_path(src))?;
            if (target.height(), target.width()) != (oh, ow) {
                return Err(Error::shape(format!(
                    "SR file for {} is {}×{}, expected {oh}×{ow}",
                    src.display(),
                    target.height(),
                    target.width()
                )));
            }
            Ok(target)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::save_image;

    #[test]
    fn hand_case_2x2_to_4x4() {
        let out = resize_plane_bilinear(&[0.0, 4.0, 8.0, 12.0], 2, 2, 4, 4);
        assert_eq!(
            out,
            vec![0.0, 1.0, 3.0, 4.0, 2.0, 3.0, 5.0, 6.0, 6.0, 7.0, 9.0, 10.0, 8.0, 9.0, 11.0, 12.0]
        );
    }

    #[test]
    fn identity_and_constant() {
        let img = Image::from_rgb(3, 5, (0..45).map(|i| i as f32 / 45.0).collect()).unwrap();
        assert_eq!(resize_bilinear(&img, 3, 5).unwrap(), img);
        let flat = Image::filled(5, 7, [0.2, 0.4, 0.6]);
        for (h, w) in [(1, 1), (3, 11), (10, 14), (17, 2)] {
            for out in [
                resize_bilinear(&flat, h, w).unwrap(),
                resize_bicubic(&flat, h, w).unwrap(),
            ] {
                for px in out.data().chunks(3) {
                    for (a, b) in px.iter().zip([0.2, 0.4, 0.6]) {
                        assert!((a - b).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn up_then_down_preserves_constant() {
        let flat = Image::filled(6, 6, [0.3, 0.3, 0.3]);
        let up = resize_bilinear(&flat, 12, 12).unwrap();
        assert_eq!(resize_bilinear(&up, 6, 6).unwrap(), flat);
    }

    #[test]
    fn cubic_kernel_partition_of_unity() {
        for i in 0..10 {
            let t = i as f64 / 10.0;
            let s: f64 = (0..4).map(|k| cubic_weight(t - (k as f64 - 1.0))).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
    }

    #[test]
    fn sr_target_extents_and_equivalence() {
        let img = Image::from_rgb(4, 6, (0..72).map(|i| (i % 17) as f32 / 17.0).collect()).unwrap();
        let bl = sr_target(&img, SrMethod::Bilinear, 2, None).unwrap();
        assert_eq!(bl, resize_bilinear(&img, 8, 12).unwrap());
        let bc = sr_target(&img, SrMethod::Bicubic, 2, None).unwrap();
        assert_eq!((bc.height(), bc.width()), (8, 12));
        assert!(bc.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(sr_target(&img, SrMethod::Bilinear, 3, None).is_err());
    }

    #[test]
    fn file_method_checks_extents() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("x.png");
        let img = Image::filled(4, 4, [0.5; 3]);
        save_image(&img, &src).unwrap();
        assert!(matches!(
            sr_target(&img, SrMethod::File, 2, Some(&src)),
            Err(Error::Io { .. })
        ));
        save_image(&Image::filled(8, 7, [0.5; 3]), sr_sibling_path(&src)).unwrap();
        assert!(matches!(
            sr_target(&img, SrMethod::File, 2, Some(&src)),
            Err(Error::Shape(_))
        ));
        save_image(&Image::filled(8, 8, [0.5; 3]), sr_sibling_path(&src)).unwrap();
        assert_eq!(
            sr_target(&img, SrMethod::File, 2, Some(&src))
                .unwrap()
                .height(),
            8
        );
    }
}
