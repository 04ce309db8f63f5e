//! Vision-language decoder, Q&A selector, coarse mask and mask decoder.

use crate::error::{shape_err, Result};
use crate::nn::{ffn, mha, module, Conv, Deconv, FfnParams, Init, LayerNorm, MhaParams};
use crate::ops::{relu, sigmoid, sigmoid_scalar};
use crate::tensor::Tensor;

use super::Diagnostics;

/// Pooled features are clamped to this magnitude before the selector's
/// exponentials.
pub const SELECTOR_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VlLayer {
    pub sa: MhaParams,
    pub ca: MhaParams,
    pub ffn: FfnParams,
}
module!(VlLayer { sa, ca, ffn });

impl VlLayer {
    pub fn init(init: &mut Init, c: usize, heads: usize) -> Self {
        VlLayer {
            sa: init.mha(c, heads),
            ca: init.mha(c, heads),
            ffn: init.ffn(c),
        }
    }
}

/// Runs one decoder layer:
///
/// ```text
/// F_v'  = F_v + SA(F_v)
/// F_vl' = CA(F_v', F_w) ⊙ F_v'
/// F_vl  = FFN(F_vl' ⊙ F_v') + F_vl'
/// ```
pub fn vl_layer(
    f_v: &Tensor,
    f_w: &Tensor,
    p: &VlLayer,
    name: &str,
    diag: &mut Diagnostics,
) -> Result<Tensor> {
    let (sa, sa_w) = mha(f_v, f_v, f_v, &p.sa)?;
    diag.attention(&format!("{name}.sa"), &sa_w);
    let f_v1 = f_v.add(&sa)?;
    let (ca, ca_w) = mha(&f_v1, f_w, f_w, &p.ca)?;
    diag.attention(&format!("{name}.ca"), &ca_w);
    let f_vl1 = ca.mul(&f_v1)?;
    ffn(&f_vl1.mul(&f_v1)?, &p.ffn)?.add(&f_vl1)
}

/// Stacks [`vl_layer`]; each layer's output is the next layer's `F_v`.
pub fn vl_decode(
    f_v: &Tensor,
    f_w: &Tensor,
    layers: &[VlLayer],
    diag: &mut Diagnostics,
) -> Result<Tensor> {
    if layers.is_empty() {
        return Err(shape_err("vl_decode", "at least one layer is required"));
    }
    let mut x = f_v.clone();
    for (i, layer) in layers.iter().enumerate() {
        x = vl_layer(&x, f_w, layer, &format!("vl.{i}"), diag)?;
    }
    diag.shape("vl.f_vl", &x);
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorOutput {
    pub alpha: Tensor,
    pub beta: Tensor,
    pub f_sel: Tensor,
}

/// Soft gate between the pooled multimodal feature `v` and the pooled word
/// feature `w`: `α = e^v / (e^v + e^w)`, `β = 1 − α`, `F_sel = α⊙v + β⊙w`.
pub fn qa_select(f_vl: &Tensor, f_w: &Tensor) -> Result<SelectorOutput> {
    let v = f_vl.mean_rows()?;
    let w = f_w.mean_rows()?;
    if v.len() != w.len() {
        return Err(shape_err(
            "qa_select",
            format!("{:?} vs {:?}", f_vl.shape(), f_w.shape()),
        ));
    }
    let clamp = |x: f64| x.clamp(-SELECTOR_CLAMP, SELECTOR_CLAMP);
    let alpha: Vec<f64> = v
        .data()
        .iter()
        .zip(w.data())
        .map(|(&a, &b)| sigmoid_scalar(clamp(a) - clamp(b)))
        .collect();
    let beta: Vec<f64> = alpha.iter().map(|a| 1.0 - a).collect();
    let f_sel: Vec<f64> = (0..v.len())
        .map(|i| alpha[i] * v.data()[i] + beta[i] * w.data()[i])
        .collect();
    Ok(SelectorOutput {
        alpha: Tensor::vector(alpha)?,
        beta: Tensor::vector(beta)?,
        f_sel: Tensor::vector(f_sel)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMaskParams {
    /// Pixel decoder: two 3×3 convs, each followed by max(0, ·).
    pub pd: Vec<Conv>,
    pub proj: Conv,
}
module!(CoarseMaskParams { pd, proj });

impl CoarseMaskParams {
    pub fn init(init: &mut Init, c: usize) -> Self {
        CoarseMaskParams {
            pd: vec![init.conv(c, c, 3, 1), init.conv(c, c, 3, 1)],
            proj: init.conv(c, 1, 1, 1),
        }
    }

    /// `σ(F_sel) ⊗ F_PD(F_vl)`, before the 1-channel projection.
    pub fn gated(&self, f_sel: &Tensor, f_vl: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let mut x = f_vl.unflatten_spatial(h, w)?;
        for conv in &self.pd {
            x = relu(&conv.forward(&x)?)?;
        }
        x.scale_channels(&sigmoid(f_sel)?)
    }
}

/// Coarse 1×h×w mask logits at stride 16.
pub fn coarse_mask(
    f_sel: &Tensor,
    f_vl: &Tensor,
    h: usize,
    w: usize,
    p: &CoarseMaskParams,
) -> Result<Tensor> {
    p.proj.forward(&p.gated(f_sel, f_vl, h, w)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoWayBlock {
    pub prompt_to_image: MhaParams,
    pub ln1: LayerNorm,
    pub ffn: FfnParams,
    pub ln2: LayerNorm,
    pub image_to_prompt: MhaParams,
    pub ln3: LayerNorm,
}
module!(TwoWayBlock {
    prompt_to_image,
    ln1,
    ffn,
    ln2,
    image_to_prompt,
    ln3
});

impl TwoWayBlock {
    pub fn init(init: &mut Init, c: usize, heads: usize) -> Self {
        TwoWayBlock {
            prompt_to_image: init.mha(c, heads),
            ln1: LayerNorm::new(c),
            ffn: init.ffn(c),
            ln2: LayerNorm::new(c),
            image_to_prompt: init.mha(c, heads),
            ln3: LayerNorm::new(c),
        }
    }
}

/// One two-way block over a prompt stream `p` and image stream `i` (both
/// N×C). Returns the updated `(prompt, image)`.
pub fn two_way_block(
    prompt: &Tensor,
    image: &Tensor,
    b: &TwoWayBlock,
    name: &str,
    diag: &mut Diagnostics,
) -> Result<(Tensor, Tensor)> {
    let (a, w) = mha(prompt, image, image, &b.prompt_to_image)?;
    diag.attention(&format!("{name}.prompt_to_image"), &w);
    let prompt = b.ln1.forward(&prompt.add(&a)?)?;
    let prompt = b.ln2.forward(&prompt.add(&ffn(&prompt, &b.ffn)?)?)?;
    let (a, w) = mha(image, &prompt, &prompt, &b.image_to_prompt)?;
    diag.attention(&format!("{name}.image_to_prompt"), &w);
    let image = b.ln3.forward(&image.add(&a)?)?;
    Ok((prompt, image))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskDecoderParams {
    /// 1×1 conv embedding the coarse mask as a dense prompt.
    pub prompt: Conv,
    pub blocks: Vec<TwoWayBlock>,
    /// Two 2×2 stride-2 deconvs: C → C/2 → C/2.
    pub up: Vec<Deconv>,
}
module!(MaskDecoderParams { prompt, blocks, up });

impl MaskDecoderParams {
    pub fn init(init: &mut Init, c: usize, heads: usize) -> Self {
        MaskDecoderParams {
            prompt: init.conv(1, c, 1, 1),
            blocks: (0..2).map(|_| TwoWayBlock::init(init, c, heads)).collect(),
            up: vec![init.deconv(c, c / 2), init.deconv(c / 2, c / 2)],
        }
    }
}

/// Refines the image stream with the coarse mask as a dense prompt and
/// upsamples it to stride 4. Output is C/2 × 4h × 4w.
pub fn mask_decode(
    m_c: &Tensor,
    f_v: &Tensor,
    p: &MaskDecoderParams,
    diag: &mut Diagnostics,
) -> Result<Tensor> {
    let (_, h, w) = m_c.dims3("mask_decode")?;
    let prompt_embed = p.prompt.forward(m_c)?.flatten_spatial()?;
    let mut prompt = f_v.add(&prompt_embed)?;
    let mut image = f_v.clone();
    for (i, block) in p.blocks.iter().enumerate() {
        (prompt, image) = two_way_block(&prompt, &image, block, &format!("mask.{i}"), diag)?;
    }
    let mut x = image.unflatten_spatial(h, w)?;
    for (i, up) in p.up.iter().enumerate() {
        x = up.forward(&x)?;
        if i + 1 < p.up.len() {
            x = relu(&x)?;
        }
    }
    diag.shape("mask.f_m", &x);
    Ok(x)
}
