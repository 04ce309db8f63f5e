//! Question template bank.
//!
//! Each question type has five templates. A template carries a `{time}`
//! placeholder and, for class-conditioned types, a `{class}` placeholder.
//! The temporal wording style is fixed per template so that the same
//! template always phrases T1/T2 the same way.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{word_count, QuestionSpec, QuestionType};
use crate::raster::ClassTaxonomy;
use crate::{Error, Result};

pub const TEMPLATES_PER_TYPE: usize = 5;

const BUILTIN_BANK: &str = include_str!("../../assets/templates.json");

const MIN_WORDS: usize = 4;
const MAX_WORDS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeWording {
    /// "first" / "second"
    Ordinal,
    /// "pre-change" / "post-change"
    Phase,
    /// "before" / "after"
    Relative,
}

impl TimeWording {
    pub fn word(self, time_index: u8) -> &'static str {
        let first = time_index == 1;
        match self {
            TimeWording::Ordinal => {
                if first {
                    "first"
                } else {
                    "second"
                }
            }
            TimeWording::Phase => {
                if first {
                    "pre-change"
                } else {
                    "post-change"
                }
            }
            TimeWording::Relative => {
                if first {
                    "before"
                } else {
                    "after"
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub text: String,
    pub time: TimeWording,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<QuestionType, Vec<Template>>")]
#[serde(into = "BTreeMap<QuestionType, Vec<Template>>")]
pub struct TemplateBank {
    by_type: Vec<Vec<Template>>,
}

impl TryFrom<BTreeMap<QuestionType, Vec<Template>>> for TemplateBank {
    type Error = Error;

    fn try_from(mut map: BTreeMap<QuestionType, Vec<Template>>) -> Result<Self> {
        let mut by_type = Vec::with_capacity(QuestionType::ALL.len());
        for qtype in QuestionType::ALL {
            let templates = map
                .remove(&qtype)
                .ok_or_else(|| Error::InvalidTemplate(format!("no templates for {qtype}")))?;
            if templates.len() != TEMPLATES_PER_TYPE {
                return Err(Error::InvalidTemplate(format!(
                    "{qtype} has {} templates, expected {TEMPLATES_PER_TYPE}",
                    templates.len()
                )));
            }
            for t in &templates {
                check_template(qtype, t)?;
            }
            by_type.push(templates);
        }
        Ok(TemplateBank { by_type })
    }
}

impl From<TemplateBank> for BTreeMap<QuestionType, Vec<Template>> {
    fn from(bank: TemplateBank) -> Self {
        QuestionType::ALL.into_iter().zip(bank.by_type).collect()
    }
}

fn check_template(qtype: QuestionType, t: &Template) -> Result<()> {
    let class_slots = t.text.matches("{class}").count();
    let expected = usize::from(qtype.has_subject());
    if class_slots != expected {
        return Err(Error::InvalidTemplate(format!(
            "{qtype} template {:?} has {class_slots} {{class}} slots, expected {expected}",
            t.text
        )));
    }
    if t.text.matches("{time}").count() != 1 {
        return Err(Error::InvalidTemplate(format!(
            "{qtype} template {:?} needs exactly one {{time}} slot",
            t.text
        )));
    }
    // Placeholders count as one word each; multi-word class names are
    // checked again at render time.
    let words = word_count(&t.text);
    if !(MIN_WORDS..=MAX_WORDS).contains(&words) {
        return Err(Error::InvalidTemplate(format!(
            "{qtype} template {:?} has {words} words",
            t.text
        )));
    }
    Ok(())
}

impl Default for TemplateBank {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateBank {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_BANK).expect("built-in template bank is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn templates(&self, qtype: QuestionType) -> &[Template] {
        &self.by_type[qtype.index()]
    }

    pub fn get(&self, qtype: QuestionType, template_id: usize) -> Result<&Template> {
        self.templates(qtype)
            .get(template_id)
            .ok_or(Error::TemplateOutOfRange {
                qtype: qtype.to_string(),
                template_id,
            })
    }

    pub fn render(&self, spec: &QuestionSpec, taxonomy: &ClassTaxonomy) -> Result<String> {
        spec.validate()?;
        let template = self.get(spec.qtype, spec.template_id)?;
        let mut text = template
            .text
            .replace("{time}", template.time.word(spec.time_index));
        if let Some(class) = spec.subject {
            let name = taxonomy.name(class)?.replace('_', " ");
            text = text.replace("{class}", &name);
        }
        let words = word_count(&text);
        if !(MIN_WORDS..=MAX_WORDS).contains(&words) {
            return Err(Error::QuestionLength {
                question: text,
                words,
            });
        }
        Ok(text)
    }
}

/// Renders with the built-in bank.
pub fn render_question(spec: &QuestionSpec, taxonomy: &ClassTaxonomy) -> Result<String> {
    TemplateBank::builtin().render(spec, taxonomy)
}
