//! Output heads: the text-conditioned dynamic convolution and the answer
//! classifier.

use crate::error::{shape_err, Result};
use crate::nn::{module, Init, Linear};
use crate::ops::{bilinear_upsample, conv2d, relu, softmax};
use crate::tensor::Tensor;

/// Spatial factor between the decoder output and the full-resolution mask.
pub const MASK_UPSAMPLE: usize = 4;

/// Splits the head's output into a 1×C_m×k×k kernel and a scalar bias.
pub fn dynamic_kernel(
    f_sel: &Tensor,
    head: &Linear,
    c_m: usize,
    k: usize,
) -> Result<(Tensor, f64)> {
    let out = head.forward_vec(f_sel)?;
    let n = c_m * k * k;
    if out.len() != n + 1 {
        return Err(shape_err(
            "dynamic_head",
            format!("head emits {} values, need {}", out.len(), n + 1),
        ));
    }
    let data = out.data();
    let kernel = Tensor::new(vec![1, c_m, k, k], data[..n].to_vec())?;
    Ok((kernel, data[n]))
}

/// Convolves the C_m×h×w decoder features with the generated kernel and
/// upsamples the single-channel logits to full resolution.
pub fn dynamic_head(f_sel: &Tensor, f_m: &Tensor, head: &Linear, k: usize) -> Result<Tensor> {
    let (c_m, _, _) = f_m.dims3("dynamic_head")?;
    let (kernel, bias) = dynamic_kernel(f_sel, head, c_m, k)?;
    let bias = Tensor::vector(vec![bias])?;
    let low = conv2d(f_m, &kernel, Some(&bias), 1, k / 2)?;
    bilinear_upsample(&low, MASK_UPSAMPLE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub hidden: Linear,
    pub out: Linear,
}
module!(ClassifierParams { hidden, out });

impl ClassifierParams {
    pub fn init(init: &mut Init, c: usize, answers: usize) -> Self {
        ClassifierParams {
            hidden: init.linear(c, c),
            out: init.linear(c, answers),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerDistribution {
    pub logits: Tensor,
    pub probs: Tensor,
}

impl AnswerDistribution {
    /// Index of the most probable answer; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let p = self.probs.data();
        (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
    }
}

/// Linear → max(0, ·) → Linear → softmax.
pub fn classify(f_sel: &Tensor, p: &ClassifierParams) -> Result<AnswerDistribution> {
    let hidden = relu(&p.hidden.forward_vec(f_sel)?)?;
    let logits = p.out.forward_vec(&hidden)?;
    let probs = softmax(&logits, 0)?;
    Ok(AnswerDistribution { logits, probs })
}
