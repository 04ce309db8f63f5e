//! Training losses with analytic gradients, a finite-difference checker and
//! a head-only micro-fit.

mod gradcheck;
mod microfit;

use cdqag_core::raster::BinaryMask;
use serde::{Deserialize, Serialize};

pub use gradcheck::{
    check_block, loss_gradient_suite, relative_error, BlockReport, GradCheckOptions,
    GradCheckReport,
};
pub use microfit::{
    head_loss, micro_fit, prepare_sample, synthetic_sample, HeadParams, MicroFitOptions,
    MicroFitResult, MicroFitSample, SyntheticSample,
};

use crate::error::{Error, Result};
use crate::ops::sigmoid_scalar;
use crate::tensor::Tensor;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_target(target: usize, classes: usize) -> Result<()> {
    if target >= classes {
        return Err(Error::BadTarget { target, classes });
    }
    Ok(())
}

/// Cross-entropy `−ln p[target]` on a probability vector, with the gradient
/// with respect to the pre-softmax logits (`p − onehot`).
pub fn ce_loss(probs: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    let p = probs.data();
    check_target(target, p.len())?;
    let loss = -p[target].max(f64::MIN_POSITIVE).ln();
    let mut grad = p.to_vec();
    grad[target] -= 1.0;
    Ok((loss, Tensor::new(probs.shape().to_vec(), grad)?))
}

/// Cross-entropy computed directly from logits via log-sum-exp.
pub fn ce_from_logits(logits: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    let z = logits.data();
    check_target(target, z.len())?;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    let mut grad: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
    grad[target] -= 1.0;
    Ok((lse - z[target], Tensor::new(logits.shape().to_vec(), grad)?))
}

fn check_mask_dims(op: &str, t: &Tensor, gt: &BinaryMask) -> Result<()> {
    let shape = t.shape();
    let dims = (shape.len() >= 2).then(|| (shape[shape.len() - 2], shape[shape.len() - 1]));
    if dims != Some((gt.height(), gt.width())) {
        return Err(Error::DimensionMismatch(format!(
            "{op}: tensor {shape:?} vs mask {}×{}",
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Mean per-pixel binary cross-entropy on 1×H×W logits, with the gradient
/// `(σ(z) − y) / (H·W)`.
pub fn bce_loss(logits: &Tensor, gt: &BinaryMask) -> Result<(f64, Tensor)> {
    if logits.rank() != 3 || logits.shape()[0] != 1 {
        return Err(Error::DimensionMismatch(format!(
            "bce_loss expects 1×H×W logits, got {:?}",
            logits.shape()
        )));
    }
    check_mask_dims("bce_loss", logits, gt)?;
    let bits = gt.to_bits();
    let n = bits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(bits.len());
    for (&z, &on) in logits.data().iter().zip(&bits) {
        let y = if on { 1.0 } else { 0.0 };
        loss += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid_scalar(z) - y) / n);
    }
    Ok((loss / n, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub grad_text: Tensor,
    pub grad_pixels: Tensor,
}

/// Text-to-pixel contrastive loss on the dot products `z_i = F_ta · F_va^i`:
/// `−ln σ(z_i)` for pixels inside the mask, `−ln(1 − σ(z_i))` outside,
/// averaged over all pixels.
pub fn contrastive_loss(
    f_ta: &Tensor,
    f_va: &Tensor,
    gt: &BinaryMask,
) -> Result<ContrastiveOutput> {
    let (c, h, w) = f_va.dims3("contrastive_loss")?;
    if f_ta.len() != c {
        return Err(Error::DimensionMismatch(format!(
            "text vector has {} channels, pixels have {c}",
            f_ta.len()
        )));
    }
    check_mask_dims("contrastive_loss", f_va, gt)?;
    let n = h * w;
    let (ta, va) = (f_ta.data(), f_va.data());
    let bits = gt.to_bits();
    let mut loss = 0.0;
    let mut dz = vec![0.0; n];
    for i in 0..n {
        let mut z = 0.0;
        for ch in 0..c {
            z += ta[ch] * va[ch * n + i];
        }
        if bits[i] {
            loss += softplus(-z);
            dz[i] = (sigmoid_scalar(z) - 1.0) / n as f64;
        } else {
            loss += softplus(z);
            dz[i] = sigmoid_scalar(z) / n as f64;
        }
    }
    let mut grad_text = vec![0.0; c];
    let mut grad_pixels = vec![0.0; c * n];
    for ch in 0..c {
        for i in 0..n {
            grad_text[ch] += dz[i] * va[ch * n + i];
            grad_pixels[ch * n + i] = dz[i] * ta[ch];
        }
    }
    Ok(ContrastiveOutput {
        loss: loss / n as f64,
        grad_text: Tensor::new(f_ta.shape().to_vec(), grad_text)?,
        grad_pixels: Tensor::new(f_va.shape().to_vec(), grad_pixels)?,
    })
}

/// λ1, λ2, λ3 for the text, mask and contrastive terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub txt: f64,
    pub mask: f64,
    pub con: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            txt: 0.2,
            mask: 1.0,
            con: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_txt: f64,
    pub l_mask: f64,
    pub l_con: f64,
    pub total: f64,
    pub lambdas: LossWeights,
}

pub fn composite_loss(l_txt: f64, l_mask: f64, l_con: f64, lambdas: LossWeights) -> LossBreakdown {
    LossBreakdown {
        l_txt,
        l_mask,
        l_con,
        total: lambdas.txt * l_txt + lambdas.mask * l_mask + lambdas.con * l_con,
        lambdas,
    }
}
