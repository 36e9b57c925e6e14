use super::Image;
use crate::error::{Error, Result};

/// Minkowski p-norm illuminant estimate of one channel. `p = ∞` gives the max.
fn illuminant(channel: impl Iterator<Item = f32> + Clone, p: f64) -> f64 {
    if p.is_infinite() {
        return channel.fold(0.0f32, f32::max) as f64;
    }
    let (sum, n) = channel.fold((0.0f64, 0usize), |(s, n), v| {
        (s + (v as f64).powf(p), n + 1)
    });
    (sum / n as f64).powf(1.0 / p)
}

/// Shades-of-gray color constancy: scales each channel so the three p-norm
/// illuminant estimates agree on their mean. `p = 1` is gray-world and
/// `p = ∞` is white-patch. A channel whose estimate is zero is left as is.
pub fn shades_of_gray(image: &Image, p: f32) -> Result<Image> {
    let p = p as f64;
    if p.is_nan() || p < 1.0 {
        return Err(Error::Config(format!(
            "Minkowski order must be ≥ 1, got {p}"
        )));
    }
    let estimates: Vec<f64> = (0..3)
        .map(|c| illuminant(image.data().iter().skip(c).step_by(3).copied(), p))
        .collect();
    let target = estimates.iter().sum::<f64>() / 3.0;
    let gains: Vec<f64> = estimates
        .iter()
        .map(|&e| if e > 0.0 { target / e } else { 1.0 })
        .collect();
    let mut out = image.clone();
    for px in out.data_mut().chunks_mut(3) {
        for (v, &g) in px.iter_mut().zip(&gains) {
            *v = (*v as f64 * g) as f32;
        }
    }
    out.clip();
    Ok(out)
}
