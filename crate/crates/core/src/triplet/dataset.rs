//! Dataset generation, image-wise splitting, statistics and JSONL I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    word_count, AnswerToken, ChangeMeasure, QuestionSpec, QuestionType, RatioBucket, SceneRules,
    TemplateBank, Triplet, TEMPLATES_PER_TYPE,
};
use crate::raster::{ClassTaxonomy, MaskPair};
use crate::rng::{fnv1a64, SplitMix64};
use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct GenerationConfig {
    /// Ask about every taxonomy class, not only those present in the scene.
    pub include_absent: bool,
    pub change_measure: ChangeMeasure,
    pub templates: TemplateBank,
}

/// Template chosen for one question slot.
///
/// The draw is `SplitMix64(seed ^ fnv1a64(key)).next_u64() % 5` where `key`
/// is `"{pair_id}\x1f{qtype}\x1f{subject or -}\x1f{time_index}"`, so it does
/// not depend on generation order.
fn draw_template(
    seed: u64,
    pair_id: &str,
    qtype: QuestionType,
    subject: Option<usize>,
    time_index: u8,
) -> usize {
    let subject = subject.map_or_else(|| "-".to_string(), |s| s.to_string());
    let key = format!("{pair_id}\x1f{qtype}\x1f{subject}\x1f{time_index}");
    let mut rng = SplitMix64::new(seed ^ fnv1a64(key.as_bytes()));
    rng.below(TEMPLATES_PER_TYPE as u64) as usize
}

fn triplet_id(
    pair_id: &str,
    qtype: QuestionType,
    subject: Option<usize>,
    time_index: u8,
) -> String {
    match subject {
        Some(s) => format!("{pair_id}:{qtype}:{s}:t{time_index}"),
        None => format!("{pair_id}:{qtype}:scene:t{time_index}"),
    }
}

/// All triplets of one scene, ordered by `(qtype, subject, time_index)`.
pub fn generate_triplets(
    pair: &MaskPair,
    taxonomy: &ClassTaxonomy,
    config: &GenerationConfig,
    seed: u64,
) -> Result<Vec<Triplet>> {
    let rules = SceneRules::new(pair, taxonomy, config.change_measure)?;
    let subjects = if config.include_absent {
        (0..taxonomy.len()).collect()
    } else {
        rules.present_classes()
    };
    let mut out = Vec::new();
    for qtype in QuestionType::ALL {
        let slots: Vec<Option<usize>> = if qtype.has_subject() {
            subjects.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        for subject in slots {
            let answer = rules.answer(qtype, subject)?;
            for time_index in [1u8, 2] {
                let template_id = draw_template(seed, &pair.pair_id, qtype, subject, time_index);
                let spec = QuestionSpec::new(qtype, time_index, subject, template_id)?;
                out.push(Triplet {
                    id: triplet_id(&pair.pair_id, qtype, subject, time_index),
                    pair_id: pair.pair_id.clone(),
                    question: config.templates.render(&spec, taxonomy)?,
                    spec,
                    answer: answer.token.clone(),
                    mask: answer.mask.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Generates every pair in parallel on the current rayon pool. Output is
/// ordered by pair id, then per-scene order, whatever the worker count.
pub fn generate_dataset(
    pairs: &[MaskPair],
    taxonomy: &ClassTaxonomy,
    config: &GenerationConfig,
    seed: u64,
) -> Result<Vec<Triplet>> {
    let mut ordered: Vec<&MaskPair> = pairs.iter().collect();
    ordered.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    let per_pair: Vec<Vec<Triplet>> = ordered
        .par_iter()
        .map(|pair| generate_triplets(pair, taxonomy, config, seed))
        .collect::<Result<_>>()?;
    Ok(per_pair.into_iter().flatten().collect())
}

/// Pair ids assigned to each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Triplet>,
    pub val: Vec<Triplet>,
    pub test: Vec<Triplet>,
    pub manifest: SplitManifest,
}

/// Image-wise split: every triplet of a pair lands in the same split.
///
/// Sorted pair ids are shuffled with `SplitMix64(seed)`; the first
/// `round(r0 * n)` go to train and the next `round((r0 + r1) * n) - round(r0 * n)`
/// to val. Ids inside each manifest list are sorted.
pub fn split_dataset(triplets: &[Triplet], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios(ratios));
    }
    let mut ids: Vec<String> = triplets
        .iter()
        .map(|t| t.pair_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    SplitMix64::new(seed).shuffle(&mut ids);

    let n = ids.len() as f64;
    let n_train = (ratios[0] * n).round() as usize;
    let n_train_val = (((ratios[0] + ratios[1]) * n).round() as usize).max(n_train);
    let mut test = ids.split_off(n_train_val.min(ids.len()));
    let mut val = ids.split_off(n_train.min(ids.len()));
    let mut train = ids;
    train.sort();
    val.sort();
    test.sort();

    let train_set: BTreeSet<&str> = train.iter().map(String::as_str).collect();
    let val_set: BTreeSet<&str> = val.iter().map(String::as_str).collect();
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        manifest: SplitManifest {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        },
    };
    for t in triplets {
        let bucket = if train_set.contains(t.pair_id.as_str()) {
            &mut split.train
        } else if val_set.contains(t.pair_id.as_str()) {
            &mut split.val
        } else {
            &mut split.test
        };
        bucket.push(t.clone());
    }
    split.manifest = SplitManifest { train, val, test };
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bucket: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordLengthStats {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub total: u64,
    pub pairs: u64,
    pub answer_frequency: BTreeMap<String, u64>,
    pub type_counts: BTreeMap<QuestionType, u64>,
    /// Grounding-mask area as a fraction of the image, in the same eleven
    /// buckets as change-ratio answers.
    pub mask_area_histogram: Vec<HistogramBin>,
    pub question_words: WordLengthStats,
}

pub fn dataset_stats(triplets: &[Triplet]) -> Result<StatsReport> {
    if triplets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut answer_frequency = BTreeMap::new();
    let mut type_counts = BTreeMap::new();
    let mut bins = [0u64; RatioBucket::COUNT];
    let mut pairs = BTreeSet::new();
    let (mut min, mut max, mut sum) = (usize::MAX, 0, 0usize);
    for t in triplets {
        *answer_frequency
            .entry(t.answer.as_str().to_string())
            .or_insert(0) += 1;
        *type_counts.entry(t.spec.qtype).or_insert(0) += 1;
        bins[RatioBucket::of(t.mask.area(), t.mask.num_pixels() as u64).index()] += 1;
        pairs.insert(t.pair_id.as_str());
        let words = word_count(&t.question);
        min = min.min(words);
        max = max.max(words);
        sum += words;
    }
    Ok(StatsReport {
        total: triplets.len() as u64,
        pairs: pairs.len() as u64,
        answer_frequency,
        type_counts,
        mask_area_histogram: RatioBucket::all()
            .map(|b| HistogramBin {
                bucket: AnswerToken::ratio(b).as_str().to_string(),
                count: bins[b.index()],
            })
            .collect(),
        question_words: WordLengthStats {
            mean: sum as f64 / triplets.len() as f64,
            min,
            max,
        },
    })
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(record);
    }
    Ok(out)
}
