//! Desk-scale vision-language model for change question answering and
//! grounding.
//!
//! The pipeline runs: text encoder → shared change encoder → language-guided
//! aggregation → vision-language decoder → Q&A selector → coarse mask →
//! two-way mask decoder → dynamic mask head and answer classifier.

mod decoder;
mod heads;
mod text;
mod vision;

use cdqag_core::raster::{ClassTaxonomy, SemanticMask};
use cdqag_core::triplet::{AnswerToken, AnswerVocabulary};
use serde::{Deserialize, Serialize};

pub use decoder::{
    coarse_mask, mask_decode, qa_select, two_way_block, vl_decode, vl_layer, CoarseMaskParams,
    MaskDecoderParams, SelectorOutput, TwoWayBlock, VlLayer, SELECTOR_CLAMP,
};
pub use heads::{
    classify, dynamic_head, dynamic_kernel, AnswerDistribution, ClassifierParams, MASK_UPSAMPLE,
};
pub use text::{encode_text, tokenize, TextEncoderParams, TextFeatures, EOC, FIRST_WORD, SOS};
pub use vision::{encode_images, lgfa, BackboneParams, ChangeFeatures, LgfaOutput, LgfaParams};

use crate::error::{shape_err, Error, Result};
use crate::nn::{module, AttentionWeights, Init, Linear};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Sequence length including [SOS] and [EOC].
    pub max_tokens: usize,
    pub heads: usize,
    pub vl_layers: usize,
    pub text_vocab: usize,
    pub answers: Vec<AnswerToken>,
    pub dyn_kernel: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::for_taxonomy(&ClassTaxonomy::default_ten())
    }
}

impl ModelConfig {
    pub fn for_taxonomy(taxonomy: &ClassTaxonomy) -> Self {
        ModelConfig {
            height: 64,
            width: 64,
            channels: 32,
            max_tokens: 15,
            heads: 4,
            vl_layers: 3,
            text_vocab: 512,
            answers: AnswerVocabulary::new(taxonomy).tokens().to_vec(),
            dyn_kernel: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return fail(format!(
                "channels must be even and ≥ 2, got {}",
                self.channels
            ));
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return fail(format!(
                "{} channels not divisible by {} heads",
                self.channels, self.heads
            ));
        }
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(32)
            || !self.width.is_multiple_of(32)
        {
            return fail(format!(
                "input {}×{} must be a positive multiple of 32",
                self.height, self.width
            ));
        }
        if self.max_tokens < 3 {
            return fail("max_tokens must leave room for one word".into());
        }
        if self.text_vocab <= FIRST_WORD {
            return fail(format!("text_vocab must exceed {FIRST_WORD}"));
        }
        if self.vl_layers == 0 {
            return fail("at least one decoder layer is required".into());
        }
        if self.dyn_kernel.is_multiple_of(2) {
            return fail(format!(
                "dynamic kernel must be odd, got {}",
                self.dyn_kernel
            ));
        }
        if self.answers.is_empty() {
            return fail("answer vocabulary is empty".into());
        }
        Ok(())
    }

    /// Spatial size of the aggregated stride-16 grid.
    pub fn grid(&self) -> (usize, usize) {
        (self.height / 16, self.width / 16)
    }

    pub fn mask_channels(&self) -> usize {
        self.channels / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionStats {
    pub name: String,
    pub heads: usize,
    pub queries: usize,
    pub keys: usize,
    pub max_row_error: f64,
    pub min_weight: f64,
}

/// Intermediate shapes and attention statistics collected during a forward.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub shapes: Vec<ShapeRecord>,
    pub attention: Vec<AttentionStats>,
}

impl Diagnostics {
    pub fn shape(&mut self, name: &str, t: &Tensor) {
        self.shapes.push(ShapeRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        });
    }

    pub fn attention(&mut self, name: &str, w: &AttentionWeights) {
        self.attention.push(AttentionStats {
            name: name.to_string(),
            heads: w.heads,
            queries: w.queries,
            keys: w.keys,
            max_row_error: w.max_row_error(),
            min_weight: w.min_weight(),
        });
    }

    pub fn shape_of(&self, name: &str) -> Option<&[usize]> {
        self.shapes
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.shape.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VistaParams {
    pub text: TextEncoderParams,
    pub backbone: BackboneParams,
    pub lgfa: LgfaParams,
    pub vl: Vec<VlLayer>,
    pub coarse: CoarseMaskParams,
    pub mask_decoder: MaskDecoderParams,
    pub head: Linear,
    pub classifier: ClassifierParams,
}
module!(VistaParams {
    text,
    backbone,
    lgfa,
    vl,
    coarse,
    mask_decoder,
    head,
    classifier
});

impl VistaParams {
    /// Seeded initialization; the draw order is fixed by the field order.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let h = config.heads;
        let mut init = Init::new(config.seed);
        let k = config.dyn_kernel;
        Ok(VistaParams {
            text: TextEncoderParams::init(&mut init, config.text_vocab, config.max_tokens, c, h),
            backbone: BackboneParams::init(&mut init, c),
            lgfa: LgfaParams::init(&mut init, c),
            vl: (0..config.vl_layers)
                .map(|_| VlLayer::init(&mut init, c, h))
                .collect(),
            coarse: CoarseMaskParams::init(&mut init, c),
            mask_decoder: MaskDecoderParams::init(&mut init, c, h),
            head: init.linear(c, config.mask_channels() * k * k + 1),
            classifier: ClassifierParams::init(&mut init, c, config.answers.len()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub text: TextFeatures,
    pub change: ChangeFeatures,
    pub lgfa: LgfaOutput,
    pub f_vl: Tensor,
    pub selector: SelectorOutput,
    /// Coarse mask logits, 1 × H/16 × W/16.
    pub m_c: Tensor,
    /// Decoder features, C/2 × H/4 × W/4.
    pub f_m: Tensor,
    /// Full-resolution mask logits, 1 × H × W.
    pub mask_logits: Tensor,
    pub answer: AnswerDistribution,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vista {
    pub config: ModelConfig,
    pub params: VistaParams,
}

impl Vista {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = VistaParams::init(&config)?;
        Ok(Vista { config, params })
    }

    /// Tokenizes a question, keeping as many words as fit the sequence.
    pub fn tokenize(&self, question: &str) -> Vec<usize> {
        tokenize(question, self.config.text_vocab, self.config.max_tokens - 2)
    }

    pub fn answer_token(&self, index: usize) -> Option<&AnswerToken> {
        self.config.answers.get(index)
    }

    pub fn forward(&self, t1: &Tensor, t2: &Tensor, tokens: &[usize]) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let expected = [3, cfg.height, cfg.width];
        if t1.shape() != expected || t2.shape() != expected {
            return Err(shape_err(
                "forward",
                format!(
                    "images {:?}/{:?}, config expects {expected:?}",
                    t1.shape(),
                    t2.shape()
                ),
            ));
        }
        let p = &self.params;
        let mut diag = Diagnostics::default();
        diag.shape("input.t1", t1);
        diag.shape("input.t2", t2);

        let text = encode_text(tokens, &p.text, &mut diag)?;
        let change = encode_images(t1, t2, &p.backbone, &mut diag)?;
        let agg = lgfa(&change, &text.f_s_sent, &p.lgfa, &mut diag)?;
        let f_vl = vl_decode(&agg.f_v, &text.f_w, &p.vl, &mut diag)?;
        let selector = qa_select(&f_vl, &text.f_w)?;
        diag.shape("selector.f_sel", &selector.f_sel);
        let (gh, gw) = cfg.grid();
        let m_c = coarse_mask(&selector.f_sel, &f_vl, gh, gw, &p.coarse)?;
        diag.shape("coarse.m_c", &m_c);
        let f_m = mask_decode(&m_c, &agg.f_v, &p.mask_decoder, &mut diag)?;
        let mask_logits = dynamic_head(&selector.f_sel, &f_m, &p.head, cfg.dyn_kernel)?;
        diag.shape("head.mask_logits", &mask_logits);
        let answer = classify(&selector.f_sel, &p.classifier)?;
        diag.shape("head.answer_probs", &answer.probs);

        Ok(ForwardOutput {
            text,
            change,
            lgfa: agg,
            f_vl,
            selector,
            m_c,
            f_m,
            mask_logits,
            answer,
            diagnostics: diag,
        })
    }

    /// Forward on a mask pair rendered as images, with a raw question.
    pub fn forward_masks(
        &self,
        t1: &SemanticMask,
        t2: &SemanticMask,
        question: &str,
    ) -> Result<ForwardOutput> {
        let tokens = self.tokenize(question);
        self.forward(&mask_to_image(t1)?, &mask_to_image(t2)?, &tokens)
    }
}

/// Renders a class-id mask as a 3-channel image with every channel equal to
/// `id / (K − 1)`.
pub fn mask_to_image(mask: &SemanticMask) -> Result<Tensor> {
    let denom = (mask.num_classes().max(2) - 1) as f64;
    let plane: Vec<f64> = mask
        .labels()
        .iter()
        .map(|&id| f64::from(id) / denom)
        .collect();
    Tensor::new(vec![3, mask.height(), mask.width()], plane.repeat(3))
}
