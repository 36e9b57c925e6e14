//! Tape-free forward and backward kernels.
//!
//! Everything here is a pure function of its arguments; the tape calls
//! these and the gradient-check tests call them directly.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution, validated once.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let [batch, in_channels, height, width] = *input else {
            return Err(Error::shape(format!(
                "conv2d input must be NCHW, got {input:?}"
            )));
        };
        let [out_channels, wc, kh, kw] = *weight else {
            return Err(Error::shape(format!(
                "conv2d weight must be OCkk, got {weight:?}"
            )));
        };
        if wc != in_channels {
            return Err(Error::shape(format!(
                "conv2d weight expects {wc} input channels, input has {in_channels}"
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!(
                "conv2d kernel must be square, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d stride must be positive"));
        }
        let extent = |n: usize| -> Result<usize> {
            let padded = n + 2 * padding;
            if padded < kh {
                return Err(Error::shape(format!(
                    "conv2d kernel {kh} does not fit extent {n} with padding {padding}"
                )));
            }
            Ok((padded - kh) / stride + 1)
        };
        Ok(ConvGeometry {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel: kh,
            stride,
            padding,
            out_height: extent(height)?,
            out_width: extent(width)?,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [
            self.batch,
            self.out_channels,
            self.out_height,
            self.out_width,
        ]
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let (k, hw) = (g.kernel, g.out_pixels());
    for ci in 0..g.in_channels {
        let plane = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let (k, hw) = (g.kernel, g.out_pixels());
    for ci in 0..g.in_channels {
        let plane = &mut dx[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_width {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.out_width + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) of an NCHW input with an OCkk kernel.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    if bias.shape() != [g.out_channels] {
        return Err(Error::shape(format!(
            "conv2d bias must have shape [{}], got {:?}",
            g.out_channels,
            bias.shape()
        )));
    }
    let (pl, hw) = (g.patch_len(), g.out_pixels());
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * hw;
    let mut out = vec![T::zero(); g.batch * out_len];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); pl * hw]
    };
    for n in 0..g.batch {
        let x = &input.data()[n * in_len..(n + 1) * in_len];
        let y = &mut out[n * out_len..(n + 1) * out_len];
        for (o, row) in y.chunks_mut(hw).enumerate() {
            row.fill(bias.data()[o]);
        }
        let cols_ref: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        T::gemm(
            g.out_channels,
            pl,
            hw,
            T::one(),
            weight.data(),
            (pl, 1),
            cols_ref,
            (hw, 1),
            T::one(),
            y,
            (hw, 1),
        );
    }
    Tensor::from_vec(&g.output_shape(), out)
}

/// Gradients of a convolution with respect to input, weight and bias.
pub struct ConvGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    let (pl, hw) = (g.patch_len(), g.out_pixels());
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * hw;
    if grad_out.len() != g.batch * out_len {
        return Err(Error::shape(
            "conv2d backward: upstream gradient has wrong length",
        ));
    }
    let mut d_in = vec![T::zero(); input.numel()];
    let mut d_w = vec![T::zero(); weight.numel()];
    let mut d_b = vec![T::zero(); g.out_channels];
    let mut cols = vec![T::zero(); pl * hw];
    let mut d_cols = vec![T::zero(); pl * hw];
    for n in 0..g.batch {
        let x = &input.data()[n * in_len..(n + 1) * in_len];
        let dy = &grad_out[n * out_len..(n + 1) * out_len];
        for (o, row) in dy.chunks(hw).enumerate() {
            d_b[o] = d_b[o] + row.iter().copied().sum::<T>();
        }
        let cols_ref: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        // dW (O x PL) += dY (O x HW) * cols^T (HW x PL)
        T::gemm(
            g.out_channels,
            hw,
            pl,
            T::one(),
            dy,
            (hw, 1),
            cols_ref,
            (1, hw),
            T::one(),
            &mut d_w,
            (pl, 1),
        );
        // dcols (PL x HW) = W^T (PL x O) * dY (O x HW)
        let dx = &mut d_in[n * in_len..(n + 1) * in_len];
        if g.is_pointwise() {
            T::gemm(
                pl,
                g.out_channels,
                hw,
                T::one(),
                weight.data(),
                (1, pl),
                dy,
                (hw, 1),
                T::zero(),
                dx,
                (hw, 1),
            );
        } else {
            T::gemm(
                pl,
                g.out_channels,
                hw,
                T::one(),
                weight.data(),
                (1, pl),
                dy,
                (hw, 1),
                T::zero(),
                &mut d_cols,
                (hw, 1),
            );
            col2im(&d_cols, &g, dx);
        }
    }
    Ok(ConvGrads {
        input: d_in,
        weight: d_w,
        bias: d_b,
    })
}

fn linear_dims(input: &[usize], weight: &[usize], bias: &[usize]) -> Result<(usize, usize, usize)> {
    let [n, d] = *input else {
        return Err(Error::shape(format!(
            "linear input must be N×D, got {input:?}"
        )));
    };
    let [wd, m] = *weight else {
        return Err(Error::shape(format!(
            "linear weight must be D×M, got {weight:?}"
        )));
    };
    if wd != d {
        return Err(Error::shape(format!(
            "linear: input has {d} features, weight expects {wd}"
        )));
    }
    if bias != [m] {
        return Err(Error::shape(format!(
            "linear bias must be [{m}], got {bias:?}"
        )));
    }
    Ok((n, d, m))
}

/// `input · weight + bias` with `input` N×D, `weight` D×M.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, d, m) = linear_dims(input.shape(), weight.shape(), bias.shape())?;
    let mut out: Vec<T> = (0..n).flat_map(|_| bias.data().iter().copied()).collect();
    T::gemm(
        n,
        d,
        m,
        T::one(),
        input.data(),
        (d, 1),
        weight.data(),
        (m, 1),
        T::one(),
        &mut out,
        (m, 1),
    );
    Tensor::from_vec(&[n, m], out)
}

pub struct LinearGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
) -> Result<LinearGrads<T>> {
    let [n, d] = *input.shape() else {
        return Err(Error::shape("linear backward: input must be 2-D"));
    };
    let m = weight.shape()[1];
    if grad_out.len() != n * m {
        return Err(Error::shape(
            "linear backward: upstream gradient has wrong length",
        ));
    }
    let mut d_in = vec![T::zero(); n * d];
    let mut d_w = vec![T::zero(); d * m];
    // dX = dY · Wᵀ
    T::gemm(
        n,
        m,
        d,
        T::one(),
        grad_out,
        (m, 1),
        weight.data(),
        (1, m),
        T::zero(),
        &mut d_in,
        (d, 1),
    );
    // dW = Xᵀ · dY
    T::gemm(
        d,
        n,
        m,
        T::one(),
        input.data(),
        (1, d),
        grad_out,
        (m, 1),
        T::zero(),
        &mut d_w,
        (m, 1),
    );
    let mut d_b = vec![T::zero(); m];
    for row in grad_out.chunks(m) {
        d_b.iter_mut().zip(row).for_each(|(b, &g)| *b = *b + g);
    }
    Ok(LinearGrads {
        input: d_in,
        weight: d_w,
        bias: d_b,
    })
}

fn nchw(shape: &[usize], op: &str) -> Result<[usize; 4]> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::shape(format!(
            "{op} expects NCHW input, got {shape:?}"
        ))),
    }
}

fn pool_window(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

/// Adaptive average pooling into an `out_h × out_w` grid of contiguous windows.
pub fn adaptive_avg_pool<T: Scalar>(
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = nchw(input.shape(), "adaptive_avg_pool")?;
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(Error::shape(format!(
            "adaptive_avg_pool: output {out_h}×{out_w} must be within input {h}×{w}"
        )));
    }
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in input.data().chunks(h * w) {
        for oy in 0..out_h {
            let (y0, y1) = pool_window(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = pool_window(ox, w, out_w);
                let mut acc = T::zero();
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc = acc + plane[y * w + x];
                    }
                }
                out.push(acc / T::from_f64(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    Tensor::from_vec(&[n, c, out_h, out_w], out)
}

pub fn adaptive_avg_pool_backward<T: Scalar>(
    in_shape: &[usize],
    out_h: usize,
    out_w: usize,
    grad_out: &[T],
) -> Result<Vec<T>> {
    let [n, c, h, w] = nchw(in_shape, "adaptive_avg_pool")?;
    let mut d_in = vec![T::zero(); n * c * h * w];
    for (plane, g) in d_in.chunks_mut(h * w).zip(grad_out.chunks(out_h * out_w)) {
        for oy in 0..out_h {
            let (y0, y1) = pool_window(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = pool_window(ox, w, out_w);
                let share = g[oy * out_w + ox] / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for x in x0..x1 {
                        plane[y * w + x] = plane[y * w + x] + share;
                    }
                }
            }
        }
    }
    Ok(d_in)
}

/// Nearest-neighbour upsampling: each pixel becomes a `factor × factor` block.
pub fn nearest_upsample<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = nchw(input.shape(), "nearest_upsample")?;
    if factor == 0 {
        return Err(Error::shape("nearest_upsample factor must be ≥ 1"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in input.data().chunks(h * w) {
        for y in 0..oh {
            let row = &plane[(y / factor) * w..(y / factor + 1) * w];
            for x in 0..ow {
                out.push(row[x / factor]);
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

pub fn nearest_upsample_backward<T: Scalar>(
    in_shape: &[usize],
    factor: usize,
    grad_out: &[T],
) -> Result<Vec<T>> {
    let [n, c, h, w] = nchw(in_shape, "nearest_upsample")?;
    let (oh, ow) = (h * factor, w * factor);
    let mut d_in = vec![T::zero(); n * c * h * w];
    for (plane, g) in d_in.chunks_mut(h * w).zip(grad_out.chunks(oh * ow)) {
        for y in 0..oh {
            for x in 0..ow {
                let i = (y / factor) * w + x / factor;
                plane[i] = plane[i] + g[y * ow + x];
            }
        }
    }
    Ok(d_in)
}

/// Row-wise softmax of an N×K matrix, stabilised by max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = *logits.shape() else {
        return Err(Error::shape(format!(
            "softmax expects N×K, got {:?}",
            logits.shape()
        )));
    };
    if k < 2 {
        return Err(Error::shape("softmax needs at least two classes"));
    }
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / total);
    }
    Tensor::from_vec(logits.shape(), out)
}

pub fn softmax_backward<T: Scalar>(probs: &[T], k: usize, grad_out: &[T]) -> Vec<T> {
    let mut d = Vec::with_capacity(probs.len());
    for (p, g) in probs.chunks(k).zip(grad_out.chunks(k)) {
        let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        d.extend(p.iter().zip(g).map(|(&pi, &gi)| pi * (gi - dot)));
    }
    d
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_sum_of_ones() {
        let out = conv2d(
            &Tensor::<f64>::ones(&[1, 1, 3, 3]),
            &Tensor::ones(&[1, 1, 3, 3]),
            &Tensor::zeros(&[1]),
            1,
            0,
        )
        .unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 1, 2, 3], &[1.0, -2.0, 3.0, 4.0, 5.0, -6.0]);
        let out = conv2d(&x, &t(&[1, 1, 1, 1], &[1.0]), &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_output_extent_formula() {
        let g = ConvGeometry::new(&[2, 3, 7, 9], &[4, 3, 3, 3], 2, 1).unwrap();
        assert_eq!(
            (g.out_height, g.out_width),
            ((7 + 2 - 3) / 2 + 1, (9 + 2 - 3) / 2 + 1)
        );
        assert!(ConvGeometry::new(&[1, 1, 2, 2], &[1, 1, 5, 5], 1, 0).is_err());
        assert!(ConvGeometry::new(&[1, 2, 4, 4], &[1, 3, 3, 3], 1, 0).is_err());
    }

    #[test]
    fn conv_padding_matches_manual() {
        // 3x3 input, 3x3 all-ones kernel, padding 1: each output is the sum of its neighbourhood
        let x = t(
            &[1, 1, 3, 3],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        );
        let out = conv2d(&x, &Tensor::ones(&[1, 1, 3, 3]), &t(&[1], &[0.5]), 1, 1).unwrap();
        assert_eq!(out.data()[0], 1.0 + 2.0 + 4.0 + 5.0 + 0.5);
        assert_eq!(out.data()[4], 45.5);
    }

    #[test]
    fn linear_hand_cases() {
        let out = linear(
            &t(&[1, 2], &[1.0, 0.0]),
            &t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            &Tensor::zeros(&[2]),
        )
        .unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);
        let out = linear(
            &t(&[1, 2], &[1.0, 2.0]),
            &t(&[2, 1], &[1.0, 1.0]),
            &t(&[1], &[3.0]),
        )
        .unwrap();
        assert_eq!(out.data(), &[6.0]);
        assert!(linear(
            &t(&[1, 3], &[1.0; 3]),
            &t(&[2, 1], &[1.0; 2]),
            &t(&[1], &[0.0])
        )
        .is_err());
    }

    #[test]
    fn pooling_cases() {
        let out = adaptive_avg_pool(&Tensor::<f64>::full(&[1, 1, 4, 4], 5.0), 1, 1).unwrap();
        assert_eq!(out.data(), &[5.0]);
        let out = adaptive_avg_pool(&t(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]), 1, 1).unwrap();
        assert_eq!(out.data(), &[4.0]);
        let x = t(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]);
        assert_eq!(adaptive_avg_pool(&x, 2, 2).unwrap().data(), x.data());
        assert!(adaptive_avg_pool(&x, 3, 1).is_err());
    }

    #[test]
    fn upsample_replicates() {
        let out = nearest_upsample(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(
            out.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(nearest_upsample(&x, 1).unwrap(), x);
        let g = nearest_upsample_backward(&[1, 1, 2, 2], 3, &[1.0f64; 36]).unwrap();
        assert!(g.iter().all(|&v| v == 9.0));
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&t(&[1, 3], &[0.0, 0.0, 0.0])).unwrap();
        p.data()
            .iter()
            .for_each(|&v| assert!((v - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax(&Tensor::<f32>::from_vec(&[1, 2], vec![1000.0, 0.0]).unwrap()).unwrap();
        assert_eq!(p.data(), &[1.0, 0.0]);
        let p = softmax(&t(&[1, 2], &[2f64.ln(), 0.0])).unwrap();
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(softmax(&t(&[2, 1], &[0.0, 0.0])).is_err());
    }
}
