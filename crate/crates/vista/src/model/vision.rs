//! Shared-weight change encoder and language-guided feature aggregation.

use crate::error::{shape_err, Result};
use crate::nn::{module, Conv, Deconv, Init, Linear};
use crate::ops::{nearest_upsample, relu};
use crate::tensor::{concat_channels, Tensor};

use super::Diagnostics;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    /// Two stride-2 convs taking the input to stride 4.
    pub stem: Vec<Conv>,
    /// One stride-2 conv per stage, reaching strides 8, 16 and 32.
    pub stages: Vec<Conv>,
    /// Per-stage 1×1 conv over the concatenated T1/T2 streams.
    pub fuse: Vec<Conv>,
}
module!(BackboneParams { stem, stages, fuse });

impl BackboneParams {
    pub fn init(init: &mut Init, c: usize) -> Self {
        BackboneParams {
            stem: vec![init.conv(3, c, 3, 2), init.conv(c, c, 3, 2)],
            stages: (0..3).map(|_| init.conv(c, c, 3, 2)).collect(),
            fuse: (0..3).map(|_| init.conv(2 * c, c, 1, 1)).collect(),
        }
    }

    /// Stage outputs at strides 8, 16, 32 for one image.
    pub fn stages(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let mut x = image.clone();
        for conv in &self.stem {
            x = relu(&conv.forward(&x)?)?;
        }
        let mut out = Vec::with_capacity(self.stages.len());
        for conv in &self.stages {
            x = relu(&conv.forward(&x)?)?;
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// Change features at strides 8, 16 and 32.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeFeatures {
    pub f_c3: Tensor,
    pub f_c4: Tensor,
    pub f_c5: Tensor,
}

/// Runs the shared backbone on both images and fuses each stage with a 1×1
/// conv over `[T1, T2]`.
pub fn encode_images(
    t1: &Tensor,
    t2: &Tensor,
    p: &BackboneParams,
    diag: &mut Diagnostics,
) -> Result<ChangeFeatures> {
    if t1.shape() != t2.shape() {
        return Err(shape_err(
            "encode_images",
            format!("{:?} vs {:?}", t1.shape(), t2.shape()),
        ));
    }
    let (c, _, _) = t1.dims3("encode_images")?;
    if c != 3 {
        return Err(shape_err(
            "encode_images",
            format!("expected 3 channels, got {c}"),
        ));
    }
    let s1 = p.stages(t1)?;
    let s2 = p.stages(t2)?;
    let mut fused = Vec::with_capacity(3);
    for ((a, b), conv) in s1.iter().zip(&s2).zip(&p.fuse) {
        fused.push(conv.forward(&concat_channels(&[a, b])?)?);
    }
    let mut fused = fused.into_iter();
    let out = ChangeFeatures {
        f_c3: fused.next().unwrap(),
        f_c4: fused.next().unwrap(),
        f_c5: fused.next().unwrap(),
    };
    diag.shape("vision.f_c3", &out.f_c3);
    diag.shape("vision.f_c4", &out.f_c4);
    diag.shape("vision.f_c5", &out.f_c5);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LgfaParams {
    pub gate_conv: Conv,
    pub text: Linear,
    pub lateral4: Conv,
    pub lateral3: Conv,
    pub smooth4: Conv,
    pub smooth3: Conv,
    pub reduce5: Conv,
    pub up5: Deconv,
    pub down3: Conv,
    pub merge: Conv,
}
module!(LgfaParams {
    gate_conv,
    text,
    lateral4,
    lateral3,
    smooth4,
    smooth3,
    reduce5,
    up5,
    down3,
    merge
});

impl LgfaParams {
    pub fn init(init: &mut Init, c: usize) -> Self {
        LgfaParams {
            gate_conv: init.conv(c, c, 1, 1),
            text: init.linear(c, c),
            lateral4: init.conv(c, c, 1, 1),
            lateral3: init.conv(c, c, 1, 1),
            smooth4: init.conv(c, c, 3, 1),
            smooth3: init.conv(c, c, 3, 1),
            reduce5: init.conv(c, c, 1, 1),
            up5: init.deconv(c, c),
            down3: init.conv(c, c, 3, 2),
            merge: init.conv(3 * c, c, 1, 1),
        }
    }

    /// `F_m5 = Conv(F_c5) ⊙ Linear(F_s_sent)`, the sentence vector acting
    /// as a per-channel gate broadcast over positions.
    pub fn gate(&self, f_c5: &Tensor, f_s_sent: &Tensor) -> Result<Tensor> {
        let gate = self.text.forward_vec(f_s_sent)?;
        self.gate_conv.forward(f_c5)?.scale_channels(&gate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LgfaOutput {
    pub f_m5: Tensor,
    pub f_m4: Tensor,
    pub f_m3: Tensor,
    /// Aggregated stride-16 features flattened to N×C.
    pub f_v: Tensor,
}

/// Text gate on the deepest stage, a top-down pyramid, then aggregation of
/// all three levels at stride 16.
pub fn lgfa(
    f: &ChangeFeatures,
    f_s_sent: &Tensor,
    p: &LgfaParams,
    diag: &mut Diagnostics,
) -> Result<LgfaOutput> {
    let f_m5 = p.gate(&f.f_c5, f_s_sent)?;
    let top4 = p
        .lateral4
        .forward(&f.f_c4)?
        .add(&nearest_upsample(&f_m5, 2)?)?;
    let f_m4 = p.smooth4.forward(&top4)?;
    let top3 = p
        .lateral3
        .forward(&f.f_c3)?
        .add(&nearest_upsample(&f_m4, 2)?)?;
    let f_m3 = p.smooth3.forward(&top3)?;

    let a5 = p.up5.forward(&p.reduce5.forward(&f_m5)?)?;
    let a3 = p.down3.forward(&f_m3)?;
    let f_m = p.merge.forward(&concat_channels(&[&a5, &f_m4, &a3])?)?;
    let f_v = f_m.flatten_spatial()?;
    diag.shape("lgfa.f_m5", &f_m5);
    diag.shape("lgfa.f_m4", &f_m4);
    diag.shape("lgfa.f_m3", &f_m3);
    diag.shape("lgfa.f_v", &f_v);
    Ok(LgfaOutput {
        f_m5,
        f_m4,
        f_m3,
        f_v,
    })
}
