//! Scoring of textual and visual answers.
//!
//! Textual answers are scored by exact match after trimming and lowercasing,
//! reported as AA (mean of per-type accuracies over the types present) and
//! OA (global accuracy). Masks are scored by IoU: mIoU is the mean per-sample
//! IoU, oIoU divides the summed intersections by the summed unions. An empty
//! prediction against an empty ground truth has IoU 1.
//!
//! All accumulation is integer except the per-sample IoU sum, which is
//! reduced in ground-truth order, so reports do not depend on sharding.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::raster::BinaryMask;
use crate::triplet::{read_jsonl, AnswerToken, QuestionType, Triplet};
use crate::{Error, Result};

/// Probability threshold applied to predicted masks.
pub const DEFAULT_THRESHOLD: f64 = 0.35;

/// Dense per-pixel mask scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ScoreGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::SizeMismatch {
                width,
                height,
                expected: width * height,
                actual: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Reads `width * height` little-endian f32 values.
    pub fn read_f32(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != 4 * width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}: {} bytes, expected {} for {width}x{height} f32 scores",
                path.display(),
                bytes.len(),
                4 * width * height
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Self::new(width, height, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictedMask {
    Binary(BinaryMask),
    Scores(ScoreGrid),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub triplet_id: String,
    pub answer: String,
    pub mask: PredictedMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    #[default]
    Error,
    /// A missing prediction counts as a wrong answer with an empty mask.
    ScoreAsWrong,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    pub scores_are_logits: bool,
    pub missing: MissingPolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            scores_are_logits: false,
            missing: MissingPolicy::Error,
        }
    }
}

/// Pixel on iff its probability is `>= threshold`. Logits pass through the
/// logistic function first.
pub fn binarize(scores: &ScoreGrid, threshold: f64, scores_are_logits: bool) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::BadThreshold(threshold));
    }
    let bits = scores
        .values
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if !s.is_finite() {
                return Err(Error::NonFiniteScore(i));
            }
            let p = if scores_are_logits {
                1.0 / (1.0 + (-s).exp())
            } else {
                s
            };
            Ok(p >= threshold)
        })
        .collect::<Result<Vec<bool>>>()?;
    BinaryMask::from_bits(&bits, scores.width, scores.height)
}

/// `(|pred ∩ gt|, |pred ∪ gt|)` in pixels.
pub fn overlap(pred: &BinaryMask, gt: &BinaryMask) -> Result<(u64, u64)> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (p, g) = (pred.to_bits(), gt.to_bits());
    let (mut inter, mut union) = (0u64, 0u64);
    for (&a, &b) in p.iter().zip(&g) {
        inter += u64::from(a && b);
        union += u64::from(a || b);
    }
    Ok((inter, union))
}

fn ratio_or_one(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, union) = overlap(pred, gt)?;
    Ok(ratio_or_one(inter, union))
}

/// Scores for one question type (or for the whole set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    pub qtype: QuestionType,
    pub count: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub miou: f64,
    pub oiou: f64,
    pub intersection: u64,
    pub union: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub per_type: Vec<TypeReport>,
    pub aa: f64,
    pub oa: f64,
    pub miou: f64,
    pub oiou: f64,
    pub count: u64,
    pub correct: u64,
    pub intersection: u64,
    pub union: u64,
}

impl EvalReport {
    pub fn type_report(&self, qtype: QuestionType) -> Option<&TypeReport> {
        self.per_type.iter().find(|t| t.qtype == qtype)
    }

    /// Aligned text table: textual then visual scores per type, in percent.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:>7} {:>9} {:>9} {:>9}",
            "Type", "Count", "Acc(%)", "mIoU(%)", "oIoU(%)"
        );
        for qtype in QuestionType::ALL {
            match self.type_report(qtype) {
                Some(t) => {
                    let _ = writeln!(
                        s,
                        "{:<6} {:>7} {:>9.2} {:>9.2} {:>9.2}",
                        qtype.code(),
                        t.count,
                        100.0 * t.accuracy,
                        100.0 * t.miou,
                        100.0 * t.oiou
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        "{:<6} {:>7} {:>9} {:>9} {:>9}",
                        qtype.code(),
                        0,
                        "-",
                        "-",
                        "-"
                    );
                }
            }
        }
        let _ = writeln!(s, "{:<6} {:>7} {:>9.2}", "AA", self.count, 100.0 * self.aa);
        let _ = writeln!(s, "{:<6} {:>7} {:>9.2}", "OA", self.count, 100.0 * self.oa);
        let _ = writeln!(
            s,
            "{:<6} {:>7} {:>9} {:>9.2}",
            "mIoU",
            self.count,
            "",
            100.0 * self.miou
        );
        let _ = writeln!(
            s,
            "{:<6} {:>7} {:>9} {:>9} {:>9.2}",
            "oIoU",
            self.count,
            "",
            "",
            100.0 * self.oiou
        );
        s
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    count: u64,
    correct: u64,
    intersection: u64,
    union: u64,
}

impl Tally {
    fn add(&mut self, o: &Tally) {
        self.count += o.count;
        self.correct += o.correct;
        self.intersection += o.intersection;
        self.union += o.union;
    }
}

/// One scored ground-truth sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleScore {
    pub index: usize,
    pub qtype: QuestionType,
    pub correct: bool,
    pub intersection: u64,
    pub union: u64,
}

impl SampleScore {
    pub fn iou(&self) -> f64 {
        ratio_or_one(self.intersection, self.union)
    }
}

/// Mergeable evaluation state. Samples carry their ground-truth index so the
/// final floating-point reduction happens in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct EvalAccumulator {
    samples: Vec<SampleScore>,
}

impl EvalAccumulator {
    pub fn push(&mut self, sample: SampleScore) {
        self.samples.push(sample);
    }

    pub fn merge(&mut self, other: EvalAccumulator) {
        self.samples.extend(other.samples);
    }

    pub fn finish(mut self, threshold: f64) -> EvalReport {
        self.samples.sort_by_key(|s| s.index);
        let mut tallies = [Tally::default(); 8];
        let mut iou_sums = [0.0f64; 8];
        let mut total = Tally::default();
        let mut iou_total = 0.0;
        for s in &self.samples {
            let t = Tally {
                count: 1,
                correct: u64::from(s.correct),
                intersection: s.intersection,
                union: s.union,
            };
            tallies[s.qtype.index()].add(&t);
            total.add(&t);
            iou_sums[s.qtype.index()] += s.iou();
            iou_total += s.iou();
        }
        let per_type: Vec<TypeReport> = QuestionType::ALL
            .into_iter()
            .filter(|q| tallies[q.index()].count > 0)
            .map(|q| {
                let t = tallies[q.index()];
                TypeReport {
                    qtype: q,
                    count: t.count,
                    correct: t.correct,
                    accuracy: t.correct as f64 / t.count as f64,
                    miou: iou_sums[q.index()] / t.count as f64,
                    oiou: ratio_or_one(t.intersection, t.union),
                    intersection: t.intersection,
                    union: t.union,
                }
            })
            .collect();
        let (aa, oa, miou) = if total.count == 0 {
            (0.0, 0.0, 0.0)
        } else {
            (
                per_type.iter().map(|t| t.accuracy).sum::<f64>() / per_type.len() as f64,
                total.correct as f64 / total.count as f64,
                iou_total / total.count as f64,
            )
        };
        EvalReport {
            threshold,
            per_type,
            aa,
            oa,
            miou,
            oiou: ratio_or_one(total.intersection, total.union),
            count: total.count,
            correct: total.correct,
            intersection: total.intersection,
            union: total.union,
        }
    }
}

fn score_sample(
    index: usize,
    gt: &Triplet,
    pred: Option<&Prediction>,
    opts: &EvalOptions,
) -> Result<SampleScore> {
    let (correct, pred_mask) = match pred {
        Some(p) => {
            let mask = match &p.mask {
                PredictedMask::Binary(m) => m.clone(),
                PredictedMask::Scores(s) => binarize(s, opts.threshold, opts.scores_are_logits)?,
            };
            (
                AnswerToken::normalized(&p.answer) == AnswerToken::normalized(gt.answer.as_str()),
                mask,
            )
        }
        None => (false, BinaryMask::empty(gt.mask.width(), gt.mask.height())),
    };
    let (intersection, union) = overlap(&pred_mask, &gt.mask)?;
    Ok(SampleScore {
        index,
        qtype: gt.spec.qtype,
        correct,
        intersection,
        union,
    })
}

fn index_predictions<'a>(
    preds: &'a [Prediction],
    gts: &[Triplet],
    opts: &EvalOptions,
) -> Result<Vec<Option<&'a Prediction>>> {
    let gt_index: HashMap<&str, usize> = gts
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.as_str(), i))
        .collect();
    let mut matched: Vec<Option<&Prediction>> = vec![None; gts.len()];
    for p in preds {
        let &i = gt_index
            .get(p.triplet_id.as_str())
            .ok_or_else(|| Error::UnknownTripletId(p.triplet_id.clone()))?;
        if matched[i].replace(p).is_some() {
            return Err(Error::DuplicatePrediction(p.triplet_id.clone()));
        }
    }
    if opts.missing == MissingPolicy::Error {
        if let Some(i) = matched.iter().position(Option::is_none) {
            return Err(Error::MissingPrediction(gts[i].id.clone()));
        }
    }
    Ok(matched)
}

/// Scores predictions split into `shards` contiguous chunks evaluated in
/// parallel and merged.
pub fn evaluate_sharded(
    preds: &[Prediction],
    gts: &[Triplet],
    opts: &EvalOptions,
    shards: usize,
) -> Result<EvalReport> {
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(Error::BadThreshold(opts.threshold));
    }
    let matched = index_predictions(preds, gts, opts)?;
    let chunk = gts.len().div_ceil(shards.max(1)).max(1);
    let partials: Vec<EvalAccumulator> = (0..gts.len())
        .collect::<Vec<_>>()
        .par_chunks(chunk)
        .map(|indices| {
            let mut acc = EvalAccumulator::default();
            for &i in indices {
                acc.push(score_sample(i, &gts[i], matched[i], opts)?);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut acc = EvalAccumulator::default();
    // Merge in reverse so the final sort is exercised.
    for part in partials.into_iter().rev() {
        acc.merge(part);
    }
    Ok(acc.finish(opts.threshold))
}

pub fn evaluate(preds: &[Prediction], gts: &[Triplet], opts: &EvalOptions) -> Result<EvalReport> {
    evaluate_sharded(preds, gts, opts, rayon::current_num_threads())
}

/// Prediction line: `{"id", "answer", "mask": {...}}` or
/// `{"id", "answer", "scores_path"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<BinaryMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores_path: Option<String>,
}

/// Loads a predictions JSONL file. Relative `scores_path` entries resolve
/// against the file's directory; grid size comes from the matching ground
/// truth mask.
pub fn load_predictions(path: impl AsRef<Path>, gts: &[Triplet]) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let records: Vec<PredictionRecord> = read_jsonl(path)?;
    let dims: HashMap<&str, (usize, usize)> = gts
        .iter()
        .map(|t| (t.id.as_str(), (t.mask.width(), t.mask.height())))
        .collect();
    records
        .into_iter()
        .map(|r| {
            let mask = match (r.mask, r.scores_path) {
                (Some(m), None) => PredictedMask::Binary(m),
                (None, Some(p)) => {
                    let &(w, h) = dims
                        .get(r.id.as_str())
                        .ok_or_else(|| Error::UnknownTripletId(r.id.clone()))?;
                    PredictedMask::Scores(ScoreGrid::read_f32(base.join(p), w, h)?)
                }
                _ => {
                    return Err(Error::MalformedFile {
                        path: path.to_path_buf(),
                        reason: format!(
                            "prediction {} needs exactly one of \"mask\" or \"scores_path\"",
                            r.id
                        ),
                    })
                }
            };
            Ok(Prediction {
                triplet_id: r.id,
                answer: r.answer,
                mask,
            })
        })
        .collect()
}
