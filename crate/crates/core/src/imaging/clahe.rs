use serde::{Deserialize, Serialize};

use super::{luma, Image};
use crate::error::{Error, Result};

const BINS: usize = 256;

/// Which planes CLAHE equalizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaheMode {
    /// Equalize BT.601 luma and keep the color differences.
    #[default]
    Luma,
    /// Equalize R, G and B independently.
    PerChannel,
}

/// CLAHE on the luma channel. `clip_limit = f32::INFINITY` disables clipping.
pub fn clahe(image: &Image, clip_limit: f32, tiles: usize) -> Result<Image> {
    clahe_with_mode(image, clip_limit, tiles, ClaheMode::Luma)
}

pub fn clahe_with_mode(
    image: &Image,
    clip_limit: f32,
    tiles: usize,
    mode: ClaheMode,
) -> Result<Image> {
    if clip_limit.is_nan() || clip_limit < 1.0 {
        return Err(Error::Config(format!(
            "CLAHE clip limit must be ≥ 1, got {clip_limit}"
        )));
    }
    if tiles == 0 {
        return Err(Error::Config("CLAHE needs at least one tile".into()));
    }
    let (h, w) = (image.height(), image.width());
    match mode {
        ClaheMode::PerChannel => {
            let planes: Vec<Vec<f32>> = (0..3)
                .map(|c| equalize_plane(&image.channel(c), h, w, clip_limit as f64, tiles))
                .collect();
            Image::from_planes(h, w, [&planes[0], &planes[1], &planes[2]])
        }
        ClaheMode::Luma => {
            let y = image.luma();
            let y_eq = equalize_plane(&y, h, w, clip_limit as f64, tiles);
            let mut data = Vec::with_capacity(h * w * 3);
            for (px, (&y0, &y1)) in image.data().chunks(3).zip(y.iter().zip(&y_eq)) {
                // color differences relative to luma are preserved
                let (cr, cb) = (px[0] - y0, px[2] - y0);
                let (r, b) = (y1 + cr, y1 + cb);
                let g = (y1 - 0.299 * r - 0.114 * b) / 0.587;
                data.extend([r, g, b]);
            }
            debug_assert!(data
                .chunks(3)
                .zip(&y_eq)
                .all(|(p, &y)| (luma(p[0], p[1], p[2]) - y).abs() < 1e-4));
            Image::from_rgb(h, w, data)
        }
    }
}

fn level(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

fn tile_bounds(extent: usize, tiles: usize) -> Vec<usize> {
    (0..=tiles).map(|i| i * extent / tiles).collect()
}

/// Contrast-limited equalization of one plane in the Zuiderveld formulation:
/// each tile's clipped CDF maps levels into the plane's own `[min, max]`
/// range, and tile mappings are bilinearly blended between tile centers.
fn equalize_plane(plane: &[f32], h: usize, w: usize, clip_limit: f64, tiles: usize) -> Vec<f32> {
    let levels: Vec<usize> = plane.iter().map(|&v| level(v)).collect();
    let lo = *levels.iter().min().expect("non-empty plane") as f64;
    let hi = *levels.iter().max().expect("non-empty plane") as f64;
    let (ty, tx) = (tiles.min(h), tiles.min(w));
    let (rows, cols) = (tile_bounds(h, ty), tile_bounds(w, tx));

    let mut maps = Vec::with_capacity(ty * tx);
    for i in 0..ty {
        for j in 0..tx {
            let mut hist = [0.0f64; BINS];
            for y in rows[i]..rows[i + 1] {
                for x in cols[j]..cols[j + 1] {
                    hist[levels[y * w + x]] += 1.0;
                }
            }
            let count = ((rows[i + 1] - rows[i]) * (cols[j + 1] - cols[j])) as f64;
            if clip_limit.is_finite() {
                let limit = clip_limit * count / BINS as f64;
                let mut excess = 0.0;
                for b in hist.iter_mut() {
                    if *b > limit {
                        excess += *b - limit;
                        *b = limit;
                    }
                }
                let share = excess / BINS as f64;
                hist.iter_mut().for_each(|b| *b += share);
            }
            let mut map = [0.0f64; BINS];
            let mut cdf = 0.0;
            for (m, &b) in map.iter_mut().zip(&hist) {
                cdf += b;
                *m = (lo + (hi - lo) * cdf / count).min(hi);
            }
            maps.push(map);
        }
    }

    let centers = |b: &[usize]| -> Vec<f64> {
        b.windows(2)
            .map(|p| (p[0] + p[1]) as f64 / 2.0 - 0.5)
            .collect()
    };
    let (cy, cx) = (centers(&rows), centers(&cols));
    let neighbours = |pos: f64, c: &[f64]| -> (usize, usize, f64) {
        let i0 = c.iter().rposition(|&v| v <= pos).unwrap_or(0);
        let i1 = (i0 + 1).min(c.len() - 1);
        let t = if i1 == i0 {
            0.0
        } else {
            ((pos - c[i0]) / (c[i1] - c[i0])).clamp(0.0, 1.0)
        };
        (i0, i1, t)
    };

    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (y0, y1, wy) = neighbours(y as f64, &cy);
        for x in 0..w {
            let (x0, x1, wx) = neighbours(x as f64, &cx);
            let l = levels[y * w + x];
            let m = |i: usize, j: usize| maps[i * tx + j][l];
            let top = m(y0, x0) * (1.0 - wx) + m(y0, x1) * wx;
            let bottom = m(y1, x0) * (1.0 - wx) + m(y1, x1) * wx;
            out.push(((top * (1.0 - wy) + bottom * wy) / 255.0) as f32);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rank-based global equalization, written without histograms:
    /// out(p) = min + (max − min) · #{q : level(q) ≤ level(p)} / N.
    fn brute_force_equalize(levels: &[u8]) -> Vec<f64> {
        let lo = *levels.iter().min().unwrap() as f64;
        let hi = *levels.iter().max().unwrap() as f64;
        let n = levels.len() as f64;
        levels
            .iter()
            .map(|&p| {
                let rank = levels.iter().filter(|&&q| q <= p).count() as f64;
                lo + (hi - lo) * rank / n
            })
            .collect()
    }

    #[test]
    fn constant_image_unchanged() {
        for rgb in [
            [0.5, 0.5, 0.5],
            [0.8, 0.3, 0.1],
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
        ] {
            let img = Image::filled(24, 20, rgb);
            let out = clahe(&img, 2.0, 8).unwrap();
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_tile_unclipped_matches_global_equalization() {
        // 8x8 ramp covering the full 8-bit range
        let levels: Vec<u8> = (0..64).map(|i| (i * 255 / 63) as u8).collect();
        let data: Vec<f32> = levels.iter().flat_map(|&l| [l as f32 / 255.0; 3]).collect();
        let img = Image::from_rgb(8, 8, data).unwrap();
        let out = clahe(&img, f32::INFINITY, 1).unwrap();
        let expected = brute_force_equalize(&levels);
        for (i, e) in expected.iter().enumerate() {
            let got = out.get(i / 8, i % 8, 0) as f64 * 255.0;
            assert!((got - e).abs() <= 1.0, "pixel {i}: {got} vs {e}");
        }
    }

    #[test]
    fn per_channel_mode_equalizes_each_plane() {
        let data: Vec<f32> = (0..16 * 16 * 3)
            .map(|i| ((i * 31) % 200) as f32 / 255.0)
            .collect();
        let img = Image::from_rgb(16, 16, data).unwrap();
        let out = clahe_with_mode(&img, f32::INFINITY, 1, ClaheMode::PerChannel).unwrap();
        for c in 0..3 {
            let levels: Vec<u8> = img.channel(c).iter().map(|&v| level(v) as u8).collect();
            let expected = brute_force_equalize(&levels);
            for (got, e) in out.channel(c).iter().zip(&expected) {
                assert!((*got as f64 * 255.0 - e).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let img = Image::filled(4, 4, [0.5; 3]);
        assert!(clahe(&img, 0.5, 8).is_err());
        assert!(clahe(&img, 2.0, 0).is_err());
    }

    #[test]
    fn more_tiles_than_pixels() {
        let img = Image::from_rgb(3, 2, (0..18).map(|i| i as f32 / 18.0).collect()).unwrap();
        let out = clahe(&img, 2.0, 8).unwrap();
        assert_eq!((out.height(), out.width()), (3, 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn output_in_unit_range(
            h in 1usize..12,
            w in 1usize..12,
            tiles in 1usize..5,
            clip in 1.0f32..6.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..h * w * 3).map(|_| rng.random_range(0..=255u8) as f32 / 255.0).collect();
            let img = Image::from_rgb(h, w, data).unwrap();
            let out = clahe(&img, clip, tiles).unwrap();
            prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
