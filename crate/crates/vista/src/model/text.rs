//! Hash tokenizer and the one-layer transformer text encoder.

use cdqag_core::rng::fnv1a64;

use crate::error::{shape_err, Error, Result};
use crate::nn::{ffn, mha, module, FfnParams, Init, LayerNorm, MhaParams};
use crate::tensor::Tensor;

use super::Diagnostics;

/// Id 0 is reserved and never emitted.
pub const SOS: usize = 1;
pub const EOC: usize = 2;
/// First id available to words.
pub const FIRST_WORD: usize = 3;

/// Splits a question into lowercase words and hashes each into
/// `[FIRST_WORD, vocab)`. Words past `max_words` are dropped.
pub fn tokenize(question: &str, vocab: usize, max_words: usize) -> Vec<usize> {
    question
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_'))
        .filter(|w| !w.is_empty())
        .take(max_words)
        .map(|w| {
            let w = w.to_ascii_lowercase();
            FIRST_WORD + (fnv1a64(w.as_bytes()) % (vocab - FIRST_WORD) as u64) as usize
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderParams {
    pub token: Tensor,
    pub position: Tensor,
    pub attn: MhaParams,
    pub ln1: LayerNorm,
    pub ffn: FfnParams,
    pub ln2: LayerNorm,
}
module!(TextEncoderParams {
    token,
    position,
    attn,
    ln1,
    ffn,
    ln2
});

impl TextEncoderParams {
    pub fn init(init: &mut Init, vocab: usize, max_tokens: usize, c: usize, heads: usize) -> Self {
        TextEncoderParams {
            token: init.uniform(&[vocab, c], c),
            position: init.uniform(&[max_tokens, c], c),
            attn: init.mha(c, heads),
            ln1: LayerNorm::new(c),
            ffn: init.ffn(c),
            ln2: LayerNorm::new(c),
        }
    }

    pub fn vocab(&self) -> usize {
        self.token.shape()[0]
    }

    pub fn max_tokens(&self) -> usize {
        self.position.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    /// Word-level features, one row per position including [SOS] and [EOC].
    pub f_w: Tensor,
    /// Sentence feature taken from the [EOC] row.
    pub f_s_sent: Tensor,
}

/// Wraps `tokens` with [SOS]/[EOC], embeds them and runs one post-norm
/// transformer layer.
pub fn encode_text(
    tokens: &[usize],
    p: &TextEncoderParams,
    diag: &mut Diagnostics,
) -> Result<TextFeatures> {
    let vocab = p.vocab();
    let max = p.max_tokens() - 2;
    if tokens.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    if tokens.len() > max {
        return Err(Error::TooLong {
            len: tokens.len(),
            max,
        });
    }
    if let Some(&id) = tokens
        .iter()
        .find(|&&id| !(FIRST_WORD..vocab).contains(&id))
    {
        return Err(Error::TokenOutOfVocab { id, vocab });
    }
    let c = p.token.shape()[1];
    let ids: Vec<usize> = std::iter::once(SOS)
        .chain(tokens.iter().copied())
        .chain(std::iter::once(EOC))
        .collect();
    let l = ids.len();
    let mut x = Vec::with_capacity(l * c);
    for (pos, &id) in ids.iter().enumerate() {
        let tok = p.token.row(id);
        let pe = p.position.row(pos);
        x.extend(tok.iter().zip(pe).map(|(a, b)| a + b));
    }
    let x = Tensor::new(vec![l, c], x)?;
    let (sa, attn) = mha(&x, &x, &x, &p.attn)?;
    diag.attention("text.sa", &attn);
    let x = p.ln1.forward(&x.add(&sa)?)?;
    let x = p.ln2.forward(&x.add(&ffn(&x, &p.ffn)?)?)?;
    let f_s_sent = Tensor::vector(x.row(l - 1).to_vec())?;
    diag.shape("text.f_w", &x);
    diag.shape("text.f_s_sent", &f_s_sent);
    if x.shape() != [l, c] {
        return Err(shape_err("encode_text", format!("{:?}", x.shape())));
    }
    Ok(TextFeatures { f_w: x, f_s_sent })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_is_stable_and_bounded() {
        let a = tokenize("Has the Building area changed?", 512, 13);
        assert_eq!(a.len(), 5);
        assert_eq!(a, tokenize("has the building AREA changed", 512, 13));
        assert!(a.iter().all(|&t| (FIRST_WORD..512).contains(&t)));
        assert_eq!(tokenize("a b c d e f g h i j k l m n o", 512, 13).len(), 13);
        assert!(tokenize("?!", 512, 13).is_empty());
    }

    #[test]
    fn rejects_bad_token_lists() {
        let p = TextEncoderParams::init(&mut Init::new(0), 16, 5, 8, 2);
        let mut d = Diagnostics::default();
        assert!(matches!(
            encode_text(&[], &p, &mut d),
            Err(Error::EmptyQuestion)
        ));
        assert!(matches!(
            encode_text(&[3, 4, 5, 6], &p, &mut d),
            Err(Error::TooLong { len: 4, max: 3 })
        ));
        assert!(matches!(
            encode_text(&[3, 16], &p, &mut d),
            Err(Error::TokenOutOfVocab { id: 16, vocab: 16 })
        ));
        assert!(matches!(
            encode_text(&[EOC], &p, &mut d),
            Err(Error::TokenOutOfVocab { .. })
        ));
        assert_eq!(
            encode_text(&[3, 4, 5], &p, &mut d).unwrap().f_w.shape(),
            &[5, 8]
        );
    }
}
