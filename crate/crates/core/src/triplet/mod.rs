//! Question/answer/grounding triplets for the eight change question types.

mod dataset;
mod rules;
mod templates;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::raster::{BinaryMask, ClassTaxonomy};
use crate::{Error, Result};

pub use dataset::{
    dataset_stats, generate_dataset, generate_triplets, read_jsonl, split_dataset, write_jsonl,
    DatasetSplit, GenerationConfig, HistogramBin, SplitManifest, StatsReport, WordLengthStats,
};
pub use rules::{Answer, ChangeMeasure, SceneRules};
pub use templates::{render_question, Template, TemplateBank, TimeWording, TEMPLATES_PER_TYPE};

/// The eight change question types, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionType {
    /// Change or not?
    #[serde(rename = "CN")]
    ChangeOrNot,
    /// Change to what?
    #[serde(rename = "CtW")]
    ChangeToWhat,
    /// Change from what?
    #[serde(rename = "CfW")]
    ChangeFromWhat,
    /// Increase or not?
    #[serde(rename = "IN")]
    IncreaseOrNot,
    /// Decrease or not?
    #[serde(rename = "DN")]
    DecreaseOrNot,
    /// Largest change?
    #[serde(rename = "LC")]
    LargestChange,
    /// Smallest change?
    #[serde(rename = "SC")]
    SmallestChange,
    /// Change ratio?
    #[serde(rename = "CR")]
    ChangeRatio,
}

impl QuestionType {
    pub const ALL: [QuestionType; 8] = [
        QuestionType::ChangeOrNot,
        QuestionType::ChangeToWhat,
        QuestionType::ChangeFromWhat,
        QuestionType::IncreaseOrNot,
        QuestionType::DecreaseOrNot,
        QuestionType::LargestChange,
        QuestionType::SmallestChange,
        QuestionType::ChangeRatio,
    ];

    pub fn code(self) -> &'static str {
        match self {
            QuestionType::ChangeOrNot => "CN",
            QuestionType::ChangeToWhat => "CtW",
            QuestionType::ChangeFromWhat => "CfW",
            QuestionType::IncreaseOrNot => "IN",
            QuestionType::DecreaseOrNot => "DN",
            QuestionType::LargestChange => "LC",
            QuestionType::SmallestChange => "SC",
            QuestionType::ChangeRatio => "CR",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// LC and SC ask about the whole scene; every other type names a class.
    pub fn has_subject(self) -> bool {
        !matches!(
            self,
            QuestionType::LargestChange | QuestionType::SmallestChange
        )
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for QuestionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QuestionType::ALL
            .into_iter()
            .find(|q| q.code() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown question type {s:?}")))
    }
}

/// Structured form of a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuestionSpec {
    pub qtype: QuestionType,
    /// 1 = first/pre-change image, 2 = second/post-change image.
    pub time_index: u8,
    pub subject: Option<usize>,
    pub template_id: usize,
}

impl QuestionSpec {
    pub fn new(
        qtype: QuestionType,
        time_index: u8,
        subject: Option<usize>,
        template_id: usize,
    ) -> Result<Self> {
        let spec = Self {
            qtype,
            time_index,
            subject,
            template_id,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.time_index, 1 | 2) {
            return Err(Error::InvalidSpec(format!(
                "time_index must be 1 or 2, got {}",
                self.time_index
            )));
        }
        if self.qtype.has_subject() != self.subject.is_some() {
            return Err(Error::InvalidSpec(format!(
                "{} {} a subject class",
                self.qtype,
                if self.qtype.has_subject() {
                    "requires"
                } else {
                    "does not take"
                }
            )));
        }
        if self.template_id >= TEMPLATES_PER_TYPE {
            return Err(Error::TemplateOutOfRange {
                qtype: self.qtype.to_string(),
                template_id: self.template_id,
            });
        }
        Ok(())
    }
}

/// Change-ratio answer: exact zero or one of ten upper-inclusive deciles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RatioBucket(u8);

impl RatioBucket {
    pub const COUNT: usize = 11;

    /// Bucket of `part / total`: 0 iff `part == 0`, else `ceil(10 * part / total)`.
    pub fn of(part: u64, total: u64) -> Self {
        assert!(
            total > 0 && part <= total,
            "ratio {part}/{total} outside [0, 1]"
        );
        if part == 0 {
            RatioBucket(0)
        } else {
            RatioBucket((10 * part).div_ceil(total) as u8)
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        (index < Self::COUNT).then_some(RatioBucket(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Percent interval `(lo, hi]`, or `[0, 0]` for the zero bucket.
    pub fn bounds(self) -> (u32, u32) {
        match self.0 {
            0 => (0, 0),
            b => (10 * (u32::from(b) - 1), 10 * u32::from(b)),
        }
    }

    pub fn token(self) -> String {
        match self.0 {
            0 => "0".to_string(),
            _ => {
                let (lo, hi) = self.bounds();
                format!("{lo}_to_{hi}")
            }
        }
    }

    pub fn all() -> impl Iterator<Item = RatioBucket> {
        (0..Self::COUNT as u8).map(RatioBucket)
    }
}

/// A textual answer drawn from the closed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerToken(String);

impl AnswerToken {
    pub fn yes() -> Self {
        AnswerToken("yes".into())
    }

    pub fn no() -> Self {
        AnswerToken("no".into())
    }

    pub fn none() -> Self {
        AnswerToken("none".into())
    }

    pub fn class(name: &str) -> Self {
        AnswerToken(name.into())
    }

    pub fn ratio(bucket: RatioBucket) -> Self {
        AnswerToken(bucket.token())
    }

    /// Trimmed, lowercased form used for matching predictions.
    pub fn normalized(text: &str) -> Self {
        AnswerToken(text.trim().to_ascii_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True for the answers that carry an empty grounding mask.
    pub fn is_negative(&self) -> bool {
        matches!(self.0.as_str(), "no" | "none" | "0")
    }
}

impl fmt::Display for AnswerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `{yes, no, none} ∪ class names ∪ ratio buckets`, in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerVocabulary {
    tokens: Vec<AnswerToken>,
}

impl AnswerVocabulary {
    pub fn new(taxonomy: &ClassTaxonomy) -> Self {
        let mut tokens = vec![AnswerToken::yes(), AnswerToken::no(), AnswerToken::none()];
        tokens.extend(taxonomy.names().iter().map(|n| AnswerToken::class(n)));
        tokens.extend(RatioBucket::all().map(AnswerToken::ratio));
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[AnswerToken] {
        &self.tokens
    }

    pub fn index_of(&self, token: &AnswerToken) -> Option<usize> {
        let normalized = AnswerToken::normalized(token.as_str());
        self.tokens.iter().position(|t| *t == normalized)
    }

    pub fn token(&self, index: usize) -> Option<&AnswerToken> {
        self.tokens.get(index)
    }

    pub fn contains(&self, token: &AnswerToken) -> bool {
        self.index_of(token).is_some()
    }
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TripletRecord", into = "TripletRecord")]
pub struct Triplet {
    pub id: String,
    pub pair_id: String,
    pub spec: QuestionSpec,
    pub question: String,
    pub answer: AnswerToken,
    pub mask: BinaryMask,
}

/// Flat JSONL layout; field order is the on-disk key order.
#[derive(Serialize, Deserialize)]
struct TripletRecord {
    id: String,
    pair_id: String,
    qtype: QuestionType,
    time_index: u8,
    subject: Option<usize>,
    template_id: usize,
    question: String,
    answer: AnswerToken,
    mask: BinaryMask,
}

impl TryFrom<TripletRecord> for Triplet {
    type Error = Error;

    fn try_from(r: TripletRecord) -> Result<Self> {
        let spec = QuestionSpec::new(r.qtype, r.time_index, r.subject, r.template_id)?;
        Ok(Triplet {
            id: r.id,
            pair_id: r.pair_id,
            spec,
            question: r.question,
            answer: r.answer,
            mask: r.mask,
        })
    }
}

impl From<Triplet> for TripletRecord {
    fn from(t: Triplet) -> Self {
        TripletRecord {
            id: t.id,
            pair_id: t.pair_id,
            qtype: t.spec.qtype,
            time_index: t.spec.time_index,
            subject: t.spec.subject,
            template_id: t.spec.template_id,
            question: t.question,
            answer: t.answer,
            mask: t.mask,
        }
    }
}

/// Whitespace-separated word count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
