//! The primitive ops: products, convolutions, activations, normalization
//! and resampling. Every reduction runs in a fixed sequential order so
//! results are bit-deterministic.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(shape_err("matmul", format!("{m}×{k} · {k2}×{n}")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for t in 0..k {
                acc += ad[i * k + t] * bd[t * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::from_op("matmul", vec![m, n], out)
}

fn check_bias(op: &'static str, b: Option<&Tensor>, c_out: usize) -> Result<()> {
    match b {
        Some(b) if b.shape() != [c_out] => Err(shape_err(
            op,
            format!("bias {:?} for {c_out} output channels", b.shape()),
        )),
        _ => Ok(()),
    }
}

/// Cross-correlation of a C_in×H×W input with a C_out×C_in×K×K kernel.
///
/// Odd kernels with `pad = K/2` give "same" output at stride 1. Even
/// kernels are accepted so that the transpose of [`deconv2d`] can be
/// expressed with the same weight array.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::BadStride(stride));
    }
    let (c_in, h, wd) = x.dims3("conv2d")?;
    let (c_out, wc_in, kh, kw) = w.dims4("conv2d")?;
    if wc_in != c_in || kh != kw {
        return Err(shape_err(
            "conv2d",
            format!("kernel {:?} for input {:?}", w.shape(), x.shape()),
        ));
    }
    check_bias("conv2d", b, c_out)?;
    let k = kh;
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(shape_err(
            "conv2d",
            format!("kernel {k} larger than padded {h}×{wd}"),
        ));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0; c_out * ho * wo];
    for o in 0..c_out {
        let bias = b.map_or(0.0, |b| b.data()[o]);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias;
                for c in 0..c_in {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc += wdat[((o * c_in + c) * k + ky) * k + kx]
                                * xd[(c * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Tensor::from_op("conv2d", vec![c_out, ho, wo], out)
}

/// Gradient of a stride-1 [`conv2d`] with respect to its kernel, given the
/// upstream gradient `g` (C_out×H'×W').
pub fn conv2d_weight_grad(x: &Tensor, g: &Tensor, k: usize, pad: usize) -> Result<Tensor> {
    let (c_in, h, wd) = x.dims3("conv2d_weight_grad")?;
    let (c_out, ho, wo) = g.dims3("conv2d_weight_grad")?;
    if h + 2 * pad < k || ho != h + 2 * pad - k + 1 || wo != wd + 2 * pad - k + 1 {
        return Err(shape_err(
            "conv2d_weight_grad",
            format!(
                "gradient {:?} for input {:?}, kernel {k}",
                g.shape(),
                x.shape()
            ),
        ));
    }
    let (xd, gd) = (x.data(), g.data());
    let mut out = vec![0.0; c_out * c_in * k * k];
    for o in 0..c_out {
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for oy in 0..ho {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc += gd[(o * ho + oy) * wo + ox]
                                * xd[(c * h + iy as usize) * wd + ix as usize];
                        }
                    }
                    out[((o * c_in + c) * k + ky) * k + kx] = acc;
                }
            }
        }
    }
    Tensor::from_op("conv2d_weight_grad", vec![c_out, c_in, k, k], out)
}

/// Transposed convolution without padding. The kernel is laid out
/// C_in×C_out×K×K; output spatial size is `(h−1)·stride + K`, which for the
/// 2×2 stride-2 case used by the model is exactly `2h`.
pub fn deconv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::BadStride(stride));
    }
    let (c_in, h, wd) = x.dims3("deconv2d")?;
    let (wc_in, c_out, kh, kw) = w.dims4("deconv2d")?;
    if wc_in != c_in || kh != kw {
        return Err(shape_err(
            "deconv2d",
            format!("kernel {:?} for input {:?}", w.shape(), x.shape()),
        ));
    }
    check_bias("deconv2d", b, c_out)?;
    let k = kh;
    let ho = (h - 1) * stride + k;
    let wo = (wd - 1) * stride + k;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0; c_out * ho * wo];
    if let Some(b) = b {
        for (o, plane) in out.chunks_mut(ho * wo).enumerate() {
            plane.fill(b.data()[o]);
        }
    }
    for c in 0..c_in {
        for iy in 0..h {
            for ix in 0..wd {
                let v = xd[(c * h + iy) * wd + ix];
                for o in 0..c_out {
                    for ky in 0..k {
                        for kx in 0..k {
                            out[(o * ho + iy * stride + ky) * wo + ix * stride + kx] +=
                                v * wdat[((c * c_out + o) * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_op("deconv2d", vec![c_out, ho, wo], out)
}

/// Softmax along `axis`, with max subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(shape_err("softmax", format!("axis {axis} of {shape:?}")));
    }
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).map(|j| xd[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (xd[idx(j)] - max).exp();
                out[idx(j)] = e;
                sum += e;
            }
            for j in 0..n {
                out[idx(j)] /= sum;
            }
        }
    }
    Tensor::from_op("softmax", shape.to_vec(), out)
}

pub fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    x.map("sigmoid", sigmoid_scalar)
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    x.map("relu", |v| v.max(0.0))
}

/// Normalizes each row (last axis) to zero mean and unit variance, then
/// applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c = *x.shape().last().unwrap();
    if gain.shape() != [c] || bias.shape() != [c] {
        return Err(shape_err(
            "layer_norm",
            format!(
                "gain {:?}, bias {:?} for width {c}",
                gain.shape(),
                bias.shape()
            ),
        ));
    }
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for ((v, g), b) in row.iter().zip(gain.data()).zip(bias.data()) {
            out.push((v - mean) * inv * g + b);
        }
    }
    Tensor::from_op("layer_norm", x.shape().to_vec(), out)
}

/// For each output coordinate: the two source indices and the weight of the
/// second one, using half-pixel centers with edge clamping.
fn bilinear_taps(n: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n * factor)
        .map(|d| {
            let src = ((d as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor (align-corners false).
pub fn bilinear_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::BadFactor(factor));
    }
    let (c, h, w) = x.dims3("bilinear_upsample")?;
    let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
    let (ho, wo) = (h * factor, w * factor);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, ly) in &ty {
            for &(x0, x1, lx) in &tx {
                let top = plane[y0 * w + x0] * (1.0 - lx) + plane[y0 * w + x1] * lx;
                let bottom = plane[y1 * w + x0] * (1.0 - lx) + plane[y1 * w + x1] * lx;
                out.push(top * (1.0 - ly) + bottom * ly);
            }
        }
    }
    Tensor::from_op("bilinear_upsample", vec![c, ho, wo], out)
}

/// Adjoint of [`bilinear_upsample`]: scatters a gradient on the upsampled
/// grid back to the source grid.
pub fn bilinear_upsample_adjoint(g: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::BadFactor(factor));
    }
    let (c, ho, wo) = g.dims3("bilinear_upsample_adjoint")?;
    if ho % factor != 0 || wo % factor != 0 {
        return Err(shape_err(
            "bilinear_upsample_adjoint",
            format!("{ho}×{wo} is not a multiple of {factor}"),
        ));
    }
    let (h, w) = (ho / factor, wo / factor);
    let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
    let gd = g.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v = gd[(ch * ho + oy) * wo + ox];
                plane[y0 * w + x0] += v * (1.0 - ly) * (1.0 - lx);
                plane[y0 * w + x1] += v * (1.0 - ly) * lx;
                plane[y1 * w + x0] += v * ly * (1.0 - lx);
                plane[y1 * w + x1] += v * ly * lx;
            }
        }
    }
    Tensor::from_op("bilinear_upsample_adjoint", vec![c, h, w], out)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn nearest_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::BadFactor(factor));
    }
    let (c, h, w) = x.dims3("nearest_upsample")?;
    let (ho, wo) = (h * factor, w * factor);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                out.push(xd[(ch * h + oy / factor) * w + ox / factor]);
            }
        }
    }
    Tensor::from_op("nearest_upsample", vec![c, ho, wo], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_small() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[5.0, 6.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
        assert!(matches!(matmul(&b, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn conv_ones_center() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert!(matches!(
            conv2d(&x, &w, None, 0, 1),
            Err(Error::BadStride(0))
        ));
    }

    #[test]
    fn conv_identity_and_stride() {
        let x = t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let w = t(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(conv2d(&x, &w, None, 1, 0).unwrap(), x);
        let x = Tensor::full(&[1, 8, 6], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        assert_eq!(conv2d(&x, &w, None, 2, 1).unwrap().shape(), &[1, 4, 3]);
    }

    #[test]
    fn deconv_spreads_input() {
        let x = t(&[1, 1, 1], &[2.5]);
        let w = Tensor::full(&[1, 1, 2, 2], 1.0);
        assert_eq!(deconv2d(&x, &w, None, 2).unwrap().data(), &[2.5; 4]);
        let z = deconv2d(
            &Tensor::zeros(&[3, 2, 2]),
            &Tensor::full(&[3, 2, 2, 2], 0.3),
            None,
            2,
        )
        .unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_and_sigmoid_basics() {
        assert_eq!(
            softmax(&t(&[2], &[0.0, 0.0]), 0).unwrap().data(),
            &[0.5, 0.5]
        );
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let s = softmax(&t(&[2, 2], &[1.0, 3.0, 2.0, 2.0]), 0).unwrap();
        assert_eq!(s.data()[0], s.data()[3]);
        assert_eq!(s.data()[1], s.data()[2]);
        assert!((s.data()[0] + s.data()[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_rows() {
        let x = t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]);
        let y = layer_norm(&x, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4])).unwrap();
        for r in 0..2 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn bilinear_ramp() {
        let x = t(&[1, 1, 2], &[0.0, 1.0]);
        let y = bilinear_upsample(&x, 2).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
        assert_eq!(bilinear_upsample(&x, 1).unwrap(), x);
        let c = bilinear_upsample(&Tensor::full(&[2, 3, 2], 3.0), 4).unwrap();
        assert!(c.data().iter().all(|&v| (v - 3.0).abs() < 1e-15));
        assert!(matches!(bilinear_upsample(&x, 0), Err(Error::BadFactor(0))));
    }

    #[test]
    fn nearest_repeats() {
        let x = t(&[1, 1, 2], &[1.0, 2.0]);
        let y = nearest_upsample(&x, 2).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
