//! Answer rules for the eight question types.
//!
//! Every rule reads the scene's transition matrix; grounding masks come
//! from the per-pixel change masks. Ties in argmax/argmin resolve to the
//! smallest class id. Negative answers ("no", "none", "0") always carry an
//! empty mask.

use serde::{Deserialize, Serialize};

use super::{AnswerToken, QuestionType, RatioBucket};
use crate::change::{
    changed_mask, summarize, transition_mask, transition_matrix, ChangeRole, ClassChangeSummary,
    TransitionMatrix,
};
use crate::raster::{BinaryMask, ClassTaxonomy, MaskPair};
use crate::{Error, Result};

/// How LC/SC rank classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeMeasure {
    /// Pixels gained plus pixels lost.
    #[default]
    Gross,
    /// Absolute net area difference.
    Net,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub token: AnswerToken,
    pub mask: BinaryMask,
}

/// Rule evaluation for one scene, sharing a single transition matrix.
#[derive(Debug)]
pub struct SceneRules<'a> {
    pair: &'a MaskPair,
    taxonomy: &'a ClassTaxonomy,
    matrix: TransitionMatrix,
    summary: ClassChangeSummary,
    measure: ChangeMeasure,
}

impl<'a> SceneRules<'a> {
    pub fn new(
        pair: &'a MaskPair,
        taxonomy: &'a ClassTaxonomy,
        measure: ChangeMeasure,
    ) -> Result<Self> {
        if taxonomy.len() != pair.num_classes() {
            return Err(Error::DimensionMismatch(format!(
                "taxonomy has {} classes, pair {} was loaded with {}",
                taxonomy.len(),
                pair.pair_id,
                pair.num_classes()
            )));
        }
        let matrix = transition_matrix(pair)?;
        let summary = summarize(&matrix);
        Ok(Self {
            pair,
            taxonomy,
            matrix,
            summary,
            measure,
        })
    }

    pub fn matrix(&self) -> &TransitionMatrix {
        &self.matrix
    }

    pub fn summary(&self) -> &ClassChangeSummary {
        &self.summary
    }

    /// Classes present in either date, ascending.
    pub fn present_classes(&self) -> Vec<usize> {
        (0..self.taxonomy.len())
            .filter(|&k| self.summary.area_t1[k] > 0 || self.summary.area_t2[k] > 0)
            .collect()
    }

    pub fn answer(&self, qtype: QuestionType, subject: Option<usize>) -> Result<Answer> {
        let class = || {
            subject.ok_or_else(|| Error::InvalidSpec(format!("{qtype} requires a subject class")))
        };
        match qtype {
            QuestionType::ChangeOrNot => self.change_or_not(class()?),
            QuestionType::ChangeToWhat => self.change_to_what(class()?),
            QuestionType::ChangeFromWhat => self.change_from_what(class()?),
            QuestionType::IncreaseOrNot => self.increase_or_not(class()?),
            QuestionType::DecreaseOrNot => self.decrease_or_not(class()?),
            QuestionType::LargestChange => Ok(self.largest_change()),
            QuestionType::SmallestChange => Ok(self.smallest_change()),
            QuestionType::ChangeRatio => self.change_ratio(class()?),
        }
    }

    pub fn change_or_not(&self, class: usize) -> Result<Answer> {
        self.check(class)?;
        if self.summary.changed[class] > 0 {
            Ok(Answer {
                token: AnswerToken::yes(),
                mask: changed_mask(self.pair, class, ChangeRole::Either)?,
            })
        } else {
            Ok(self.negative(AnswerToken::no()))
        }
    }

    pub fn change_to_what(&self, class: usize) -> Result<Answer> {
        self.check(class)?;
        let row = (0..self.k()).map(|j| (j, self.matrix.get(class, j)));
        match first_max(row.filter(|&(j, _)| j != class)) {
            Some((to, n)) if n > 0 => Ok(Answer {
                token: self.class_token(to)?,
                mask: transition_mask(self.pair, class, to)?,
            }),
            _ => Ok(self.negative(AnswerToken::none())),
        }
    }

    pub fn change_from_what(&self, class: usize) -> Result<Answer> {
        self.check(class)?;
        let column = (0..self.k()).map(|i| (i, self.matrix.get(i, class)));
        match first_max(column.filter(|&(i, _)| i != class)) {
            Some((from, n)) if n > 0 => Ok(Answer {
                token: self.class_token(from)?,
                mask: transition_mask(self.pair, from, class)?,
            }),
            _ => Ok(self.negative(AnswerToken::none())),
        }
    }

    pub fn increase_or_not(&self, class: usize) -> Result<Answer> {
        self.check(class)?;
        if self.summary.area_t2[class] > self.summary.area_t1[class] {
            Ok(Answer {
                token: AnswerToken::yes(),
                mask: changed_mask(self.pair, class, ChangeRole::Target)?,
            })
        } else {
            Ok(self.negative(AnswerToken::no()))
        }
    }

    pub fn decrease_or_not(&self, class: usize) -> Result<Answer> {
        self.check(class)?;
        if self.summary.area_t2[class] < self.summary.area_t1[class] {
            Ok(Answer {
                token: AnswerToken::yes(),
                mask: changed_mask(self.pair, class, ChangeRole::Source)?,
            })
        } else {
            Ok(self.negative(AnswerToken::no()))
        }
    }

    pub fn largest_change(&self) -> Answer {
        let pick = first_max(self.ranked_changes());
        self.scene_answer(pick.map(|(k, _)| k))
    }

    /// Only classes that changed at all are candidates.
    pub fn smallest_change(&self) -> Answer {
        let pick = first_min(self.ranked_changes());
        self.scene_answer(pick.map(|(k, _)| k))
    }

    pub fn change_ratio(&self, class: usize) -> Result<Answer> {
        self.check(class)?;
        let changed = self.summary.changed[class];
        let bucket = RatioBucket::of(changed, self.matrix.total());
        if changed == 0 {
            return Ok(self.negative(AnswerToken::ratio(bucket)));
        }
        Ok(Answer {
            token: AnswerToken::ratio(bucket),
            mask: changed_mask(self.pair, class, ChangeRole::Either)?,
        })
    }

    /// `(class, measure)` for every class whose measure is nonzero.
    fn ranked_changes(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        (0..self.k())
            .map(|k| {
                let value = match self.measure {
                    ChangeMeasure::Gross => self.summary.changed[k],
                    ChangeMeasure::Net => self.summary.net(k).unsigned_abs(),
                };
                (k, value)
            })
            .filter(|&(_, v)| v > 0)
    }

    fn scene_answer(&self, pick: Option<usize>) -> Answer {
        match pick {
            Some(k) => Answer {
                token: AnswerToken::class(&self.taxonomy.names()[k]),
                mask: changed_mask(self.pair, k, ChangeRole::Either)
                    .expect("class id comes from the taxonomy"),
            },
            None => self.negative(AnswerToken::none()),
        }
    }

    fn negative(&self, token: AnswerToken) -> Answer {
        Answer {
            token,
            mask: BinaryMask::empty(self.pair.width(), self.pair.height()),
        }
    }

    fn class_token(&self, class: usize) -> Result<AnswerToken> {
        Ok(AnswerToken::class(self.taxonomy.name(class)?))
    }

    fn k(&self) -> usize {
        self.taxonomy.len()
    }

    fn check(&self, class: usize) -> Result<()> {
        if class >= self.k() {
            return Err(Error::ClassIdOutOfRange {
                id: class,
                num_classes: self.k(),
            });
        }
        Ok(())
    }
}

/// First `(index, value)` attaining the maximum value.
fn first_max(items: impl Iterator<Item = (usize, u64)>) -> Option<(usize, u64)> {
    items.fold(None, |best, (k, v)| match best {
        Some((_, bv)) if bv >= v => best,
        _ => Some((k, v)),
    })
}

/// First `(index, value)` attaining the minimum value.
fn first_min(items: impl Iterator<Item = (usize, u64)>) -> Option<(usize, u64)> {
    items.fold(None, |best, (k, v)| match best {
        Some((_, bv)) if bv <= v => best,
        _ => Some((k, v)),
    })
}
