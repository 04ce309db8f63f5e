use cdqag_core::raster::{BinaryMask, ClassTaxonomy, MaskPair, SemanticMask};
use cdqag_core::rng::SplitMix64;
use cdqag_core::triplet::{
    AnswerToken, ChangeMeasure, QuestionSpec, QuestionType, SceneRules, TemplateBank,
};
use serde::{Deserialize, Serialize};

use super::{
    bce_loss, ce_from_logits, composite_loss, contrastive_loss, LossBreakdown, LossWeights,
};
use crate::error::{Error, Result};
use crate::model::{dynamic_kernel, ClassifierParams, Vista, MASK_UPSAMPLE};
use crate::nn::{assign_params, flatten_params, module, Linear};
use crate::ops::{bilinear_upsample, bilinear_upsample_adjoint, conv2d, conv2d_weight_grad};
use crate::tensor::Tensor;

/// Frozen features and targets for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroFitSample {
    pub f_sel: Tensor,
    /// Decoder features, C_m × H/4 × W/4.
    pub f_m: Tensor,
    pub target: usize,
    /// Full-resolution ground truth.
    pub gt: BinaryMask,
    /// Ground truth at the decoder resolution, by majority vote.
    pub gt_small: BinaryMask,
}

impl MicroFitSample {
    pub fn new(f_sel: Tensor, f_m: Tensor, target: usize, gt: BinaryMask) -> Result<Self> {
        let gt_small = downsample_majority(&gt, MASK_UPSAMPLE)?;
        Ok(MicroFitSample {
            f_sel,
            f_m,
            target,
            gt,
            gt_small,
        })
    }
}

/// A pixel of the reduced mask is on when more than half of its
/// `factor × factor` block is on.
pub fn downsample_majority(mask: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    let (w, h) = (mask.width(), mask.height());
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{w}×{h} mask cannot be reduced by {factor}"
        )));
    }
    let bits = mask.to_bits();
    let (ws, hs) = (w / factor, h / factor);
    let mut out = Vec::with_capacity(ws * hs);
    for by in 0..hs {
        for bx in 0..ws {
            let mut on = 0;
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    on += usize::from(bits[y * w + x]);
                }
            }
            out.push(2 * on > factor * factor);
        }
    }
    Ok(BinaryMask::from_bits(&out, ws, hs)?)
}

/// The trainable output heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub head: Linear,
    pub classifier: ClassifierParams,
}
module!(HeadParams { head, classifier });

impl HeadParams {
    pub fn from_model(model: &Vista) -> Self {
        HeadParams {
            head: model.params.head.clone(),
            classifier: model.params.classifier.clone(),
        }
    }
}

fn outer(a: &[f64], b: &[f64]) -> Result<Tensor> {
    let data = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| x * y))
        .collect();
    Tensor::new(vec![a.len(), b.len()], data)
}

/// Composite loss of the heads on one sample and its gradient with respect
/// to every head parameter (returned in the same layout as the params).
///
/// The contrastive term uses the centre tap of the generated kernel as the
/// text vector and the decoder features as pixel features.
pub fn head_loss(
    p: &HeadParams,
    s: &MicroFitSample,
    weights: LossWeights,
    k: usize,
) -> Result<(LossBreakdown, HeadParams)> {
    let (c_m, h, w) = s.f_m.dims3("head_loss")?;
    let f_sel = s.f_sel.data();

    // Dynamic mask head.
    let (kernel, bias) = dynamic_kernel(&s.f_sel, &p.head, c_m, k)?;
    let low = conv2d(
        &s.f_m,
        &kernel,
        Some(&Tensor::vector(vec![bias])?),
        1,
        k / 2,
    )?;
    let logits = bilinear_upsample(&low, MASK_UPSAMPLE)?;
    let (l_mask, g_mask) = bce_loss(&logits, &s.gt)?;
    let g_low = bilinear_upsample_adjoint(&g_mask, MASK_UPSAMPLE)?;
    let g_kernel = conv2d_weight_grad(&s.f_m, &g_low, k, k / 2)?;
    let g_bias: f64 = g_low.data().iter().sum();

    let centre = (k / 2) * k + k / 2;
    let taps: Vec<f64> = (0..c_m)
        .map(|c| kernel.data()[c * k * k + centre])
        .collect();
    let con = contrastive_loss(&Tensor::vector(taps)?, &s.f_m, &s.gt_small)?;
    debug_assert_eq!((h, w), (s.gt_small.height(), s.gt_small.width()));

    let mut g_out: Vec<f64> = g_kernel.data().iter().map(|g| weights.mask * g).collect();
    for (c, g) in con.grad_text.data().iter().enumerate() {
        g_out[c * k * k + centre] += weights.con * g;
    }
    g_out.push(weights.mask * g_bias);
    let g_head = Linear {
        weight: outer(f_sel, &g_out)?,
        bias: Tensor::vector(g_out)?,
    };

    // Classifier MLP.
    let pre = p.classifier.hidden.forward_vec(&s.f_sel)?;
    let hidden: Vec<f64> = pre.data().iter().map(|v| v.max(0.0)).collect();
    let answer_logits = p
        .classifier
        .out
        .forward_vec(&Tensor::vector(hidden.clone())?)?;
    let (l_txt, g_logits) = ce_from_logits(&answer_logits, s.target)?;
    let g_logits: Vec<f64> = g_logits.data().iter().map(|g| weights.txt * g).collect();
    let w2 = &p.classifier.out.weight;
    let v = g_logits.len();
    let g_pre: Vec<f64> = (0..hidden.len())
        .map(|i| {
            if pre.data()[i] > 0.0 {
                (0..v).map(|j| w2.data()[i * v + j] * g_logits[j]).sum()
            } else {
                0.0
            }
        })
        .collect();
    let g_classifier = ClassifierParams {
        hidden: Linear {
            weight: outer(f_sel, &g_pre)?,
            bias: Tensor::vector(g_pre)?,
        },
        out: Linear {
            weight: outer(&hidden, &g_logits)?,
            bias: Tensor::vector(g_logits)?,
        },
    };

    let breakdown = composite_loss(l_txt, l_mask, con.loss, weights);
    Ok((
        breakdown,
        HeadParams {
            head: g_head,
            classifier: g_classifier,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroFitOptions {
    pub steps: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub kernel: usize,
}

impl Default for MicroFitOptions {
    fn default() -> Self {
        MicroFitOptions {
            steps: 200,
            lr: 0.05,
            weights: LossWeights::default(),
            kernel: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroFitResult {
    /// Loss before the first step, then after every step.
    pub trace: Vec<LossBreakdown>,
    pub params: HeadParams,
}

/// Plain gradient descent on the heads with frozen features.
pub fn micro_fit(
    mut params: HeadParams,
    sample: &MicroFitSample,
    opts: &MicroFitOptions,
) -> Result<MicroFitResult> {
    let mut trace = Vec::with_capacity(opts.steps + 1);
    let mut flat = flatten_params(&params);
    for step in 0..=opts.steps {
        let (loss, grad) =
            head_loss(&params, sample, opts.weights, opts.kernel).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence(step),
                other => other,
            })?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence(step));
        }
        trace.push(loss);
        if step == opts.steps {
            break;
        }
        for (x, g) in flat.iter_mut().zip(flatten_params(&grad)) {
            *x -= opts.lr * g;
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(step + 1));
        }
        assign_params(&mut params, &flat);
    }
    Ok(MicroFitResult { trace, params })
}

/// Runs the frozen model once and captures the head inputs.
pub fn prepare_sample(
    model: &Vista,
    pair: &MaskPair,
    question: &str,
    answer: &AnswerToken,
    gt: &BinaryMask,
) -> Result<MicroFitSample> {
    let out = model.forward_masks(&pair.t1, &pair.t2, question)?;
    let normalized = AnswerToken::normalized(answer.as_str());
    let target = model
        .config
        .answers
        .iter()
        .position(|a| *a == normalized)
        .ok_or_else(|| Error::UnknownAnswer(answer.to_string()))?;
    MicroFitSample::new(out.selector.f_sel, out.f_m, target, gt.clone())
}

/// A generated scene with one question and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub taxonomy: ClassTaxonomy,
    pub pair: MaskPair,
    pub question: String,
    pub answer: AnswerToken,
    pub mask: BinaryMask,
}

/// Builds a scene of 8×8 land-cover blocks where one rectangle aligned to
/// the decoder grid turns into buildings, and asks whether the building
/// area changed.
pub fn synthetic_sample(seed: u64, width: usize, height: usize) -> Result<SyntheticSample> {
    let taxonomy = ClassTaxonomy::default_ten();
    let building = taxonomy
        .id_of("building")
        .expect("default taxonomy has building");
    let k = taxonomy.len();
    let mut rng = SplitMix64::new(seed);

    let (bw, bh) = (width.div_ceil(8), height.div_ceil(8));
    let blocks: Vec<u8> = (0..bw * bh)
        .map(|_| {
            let mut c = rng.below(k as u64 - 1) as usize;
            if c >= building {
                c += 1;
            }
            c as u8
        })
        .collect();
    let t1: Vec<u8> = (0..width * height)
        .map(|i| blocks[(i / width / 8) * bw + (i % width) / 8])
        .collect();

    let rect_w = (width / 4).max(4);
    let rect_h = (height / 4).max(4);
    let x0 = 4 * rng.below(((width - rect_w) / 4 + 1) as u64) as usize;
    let y0 = 4 * rng.below(((height - rect_h) / 4 + 1) as u64) as usize;
    let mut t2 = t1.clone();
    for y in y0..y0 + rect_h {
        for x in x0..x0 + rect_w {
            t2[y * width + x] = building as u8;
        }
    }

    let pair = MaskPair::new(
        format!("synthetic-{seed}"),
        SemanticMask::new(width, height, k, t1)?,
        SemanticMask::new(width, height, k, t2)?,
    )?;
    let spec = QuestionSpec::new(QuestionType::ChangeOrNot, 2, Some(building), 0)?;
    let question = TemplateBank::builtin().render(&spec, &taxonomy)?;
    let answer = SceneRules::new(&pair, &taxonomy, ChangeMeasure::Gross)?
        .answer(QuestionType::ChangeOrNot, Some(building))?;
    Ok(SyntheticSample {
        taxonomy,
        pair,
        question,
        answer: answer.token,
        mask: answer.mask,
    })
}
