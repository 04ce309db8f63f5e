//! Acceptance suite. Each criterion prints one PASS or FAIL line; the
//! process exits non-zero if any criterion fails.

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cdqag_core::metrics::{
    evaluate, evaluate_sharded, iou, load_predictions, EvalOptions, PredictedMask, Prediction,
    DEFAULT_THRESHOLD,
};
use cdqag_core::raster::{BinaryMask, ClassTaxonomy, MaskPair, SemanticMask};
use cdqag_core::rng::SplitMix64;
use cdqag_core::triplet::{
    generate_dataset, read_jsonl, split_dataset, word_count, ChangeMeasure, GenerationConfig,
    QuestionSpec, QuestionType, SceneRules, TemplateBank, Triplet, TEMPLATES_PER_TYPE,
};
use cdqag_vista::losses::{
    bce_loss, ce_loss, check_block, composite_loss, contrastive_loss, loss_gradient_suite,
    micro_fit, prepare_sample, synthetic_sample, GradCheckOptions, HeadParams, LossWeights,
    MicroFitOptions,
};
use cdqag_vista::model::{qa_select, ModelConfig, Vista};
use cdqag_vista::ops::softmax;
use cdqag_vista::Tensor;

// Pinned tolerances and budgets.
const ORACLE_PAIRS: usize = 500;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const SELECTOR_DRAWS: usize = 1000;
const SELECTOR_TOL: f64 = 1e-12;
const ATTENTION_FORWARDS: usize = 100;
const ATTENTION_TOL: f64 = 1e-9;
const GRAD_INSTANCES: usize = 50;
const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-5;
const EQUIVALENCE_TOL: f64 = 1e-12;
const MICROFIT_STEPS: usize = 200;
const MICROFIT_RATIO: f64 = 0.5;
const MICROFIT_BUDGET: Duration = Duration::from_secs(60);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn random(rng: &mut SplitMix64, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform(-scale, scale)).collect(),
    )
    .unwrap()
}

fn random_mask(rng: &mut SplitMix64, w: usize, h: usize) -> BinaryMask {
    let bits: Vec<bool> = (0..w * h).map(|_| rng.below(2) == 1).collect();
    BinaryMask::from_bits(&bits, w, h).unwrap()
}

fn taxonomy(k: usize) -> ClassTaxonomy {
    ClassTaxonomy::new((0..k).map(|i| format!("class_{i}"))).unwrap()
}

/// Labels cluster into a few classes so ties and absent classes occur.
fn random_pair(rng: &mut SplitMix64, id: &str, max_side: u64, max_k: u64) -> MaskPair {
    let w = 1 + rng.below(max_side) as usize;
    let h = 1 + rng.below(max_side) as usize;
    let k = 2 + rng.below(max_k - 1) as usize;
    let used = 1 + rng.below(k as u64);
    let t1: Vec<u8> = (0..w * h).map(|_| rng.below(used) as u8).collect();
    let flip = rng.next_f64();
    let t2: Vec<u8> = t1
        .iter()
        .map(|&l| {
            if rng.next_f64() < flip {
                rng.below(k as u64) as u8
            } else {
                l
            }
        })
        .collect();
    MaskPair::new(
        id,
        SemanticMask::new(w, h, k, t1).unwrap(),
        SemanticMask::new(w, h, k, t2).unwrap(),
    )
    .unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(1);
    let (mut checked, mut mismatches) = (0usize, 0usize);
    for i in 0..ORACLE_PAIRS {
        let pair = random_pair(&mut rng, &format!("p{i}"), 32, 6);
        let tax = taxonomy(pair.num_classes());
        let rules =
            SceneRules::new(&pair, &tax, ChangeMeasure::Gross).map_err(|e| e.to_string())?;
        for q in QuestionType::ALL {
            let subjects: Vec<Option<usize>> = if q.has_subject() {
                (0..tax.len()).map(Some).collect()
            } else {
                vec![None]
            };
            for s in subjects {
                let got = rules.answer(q, s).map_err(|e| e.to_string())?;
                let want =
                    oracle::answer(pair.t1.labels(), pair.t2.labels(), tax.names(), q.code(), s);
                if got.token.as_str() != want.token || got.mask.to_bits() != want.bits {
                    mismatches += 1;
                }
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(mismatches == 0, || {
        format!("{mismatches} of {checked} answers differ from the oracle")
    })?;
    check(elapsed < ORACLE_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{ORACLE_PAIRS} pairs, {checked} answers, 0 mismatches, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let golden =
        fs::read(fixtures().join("mini_corpus.golden.jsonl")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for workers in ["1", "8"] {
        let out = dir.path().join(format!("w{workers}.jsonl"));
        let status = Command::new(env!("CARGO_BIN_EXE_cdqag-forge"))
            .args(["--seed", "42", "--workers", workers, "generate"])
            .arg(fixtures().join("mini_corpus"))
            .arg("-o")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), || {
            format!("generate exited with {}", status.status)
        })?;
        let bytes = fs::read(&out).map_err(|e| e.to_string())?;
        check(bytes == golden, || {
            format!("workers={workers} output differs from golden")
        })?;
    }
    Ok(format!(
        "{} golden bytes reproduced at workers 1 and 8",
        golden.len()
    ))
}

fn criterion_3() -> Outcome {
    let gts: Vec<Triplet> =
        read_jsonl(fixtures().join("aa_oa_gt.jsonl")).map_err(|e| e.to_string())?;
    let preds =
        load_predictions(fixtures().join("aa_oa_pred.jsonl"), &gts).map_err(|e| e.to_string())?;
    let r = evaluate(&preds, &gts, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let (aa, oa) = (format!("{:.6}", r.aa), format!("{:.6}", r.oa));
    check(aa == "0.500000" && oa == "0.250000", || {
        format!("AA={aa} OA={oa}")
    })?;

    let empty = BinaryMask::empty(5, 3);
    let e = iou(&empty, &empty).map_err(|e| e.to_string())?;
    check(e == 1.0, || format!("empty/empty IoU = {e}"))?;

    let mut rng = SplitMix64::new(3);
    let (w, h) = (9, 7);
    let gts: Vec<Triplet> = (0..200)
        .map(|i| {
            let spec = QuestionSpec::new(QuestionType::ChangeOrNot, 1, Some(1), 0).unwrap();
            Triplet {
                id: format!("t{i}"),
                pair_id: format!("p{}", i / 10),
                question: "Has any building changed in the pre-change image?".into(),
                spec,
                answer: cdqag_core::triplet::AnswerToken::yes(),
                mask: random_mask(&mut rng, w, h),
            }
        })
        .collect();
    let preds: Vec<Prediction> = gts
        .iter()
        .map(|t| Prediction {
            triplet_id: t.id.clone(),
            answer: if rng.below(3) == 0 { "no" } else { "yes" }.into(),
            mask: PredictedMask::Binary(random_mask(&mut rng, w, h)),
        })
        .collect();
    let opts = EvalOptions::default();
    let base = evaluate_sharded(&preds, &gts, &opts, 1).map_err(|e| e.to_string())?;
    for shards in 2..=16 {
        let r = evaluate_sharded(&preds, &gts, &opts, shards).map_err(|e| e.to_string())?;
        check(r.oiou.to_bits() == base.oiou.to_bits(), || {
            format!("oIoU differs at {shards} shards")
        })?;
    }

    check(DEFAULT_THRESHOLD == 0.35 && opts.threshold == 0.35, || {
        format!("default threshold {}", opts.threshold)
    })?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = dir.path().join("r.json");
    let out = Command::new(env!("CARGO_BIN_EXE_cdqag-forge"))
        .arg("eval")
        .arg(fixtures().join("aa_oa_gt.jsonl"))
        .arg(fixtures().join("aa_oa_pred.jsonl"))
        .arg("-o")
        .arg(&report)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || "eval command failed".into())?;
    let written: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    check(written["threshold"] == 0.35, || {
        format!("CLI threshold {}", written["threshold"])
    })?;
    Ok(format!(
        "AA={aa} OA={oa}, empty IoU=1, oIoU identical over 1..16 shards, threshold 0.35"
    ))
}

fn criterion_4() -> Outcome {
    let mut rng = SplitMix64::new(4);
    let mut worst_sum = 0.0f64;
    let mut worst_equal = 0.0f64;
    for _ in 0..SELECTOR_DRAWS {
        let c = 1 + rng.below(32) as usize;
        let n = 1 + rng.below(16) as usize;
        let l = 1 + rng.below(15) as usize;
        let scale = [0.1, 1.0, 10.0, 100.0][rng.below(4) as usize];
        let f_vl = random(&mut rng, &[n, c], scale);
        let f_w = random(&mut rng, &[l, c], scale);
        let s = qa_select(&f_vl, &f_w).map_err(|e| e.to_string())?;
        for (a, b) in s.alpha.data().iter().zip(s.beta.data()) {
            worst_sum = worst_sum.max((a + b - 1.0).abs());
        }

        // Shift F_w rows so both pooled vectors coincide.
        let v = f_vl.mean_rows().unwrap();
        let w = f_w.mean_rows().unwrap();
        let mut shifted = f_w.clone();
        for row in shifted.data_mut().chunks_mut(c) {
            for (x, (vv, ww)) in row.iter_mut().zip(v.data().iter().zip(w.data())) {
                *x += vv - ww;
            }
        }
        let s = qa_select(&f_vl, &shifted).map_err(|e| e.to_string())?;
        worst_equal = worst_equal.max(s.f_sel.max_abs_diff(&v));
    }
    check(worst_sum <= SELECTOR_TOL, || {
        format!("|α+β−1| reached {worst_sum:e}")
    })?;
    check(worst_equal <= SELECTOR_TOL, || {
        format!("|F_sel − v| reached {worst_equal:e}")
    })?;
    Ok(format!(
        "{SELECTOR_DRAWS} draws, max |α+β−1| {worst_sum:.1e}, max |F_sel−v| {worst_equal:.1e}"
    ))
}

fn small_model(seed: u64, size: usize) -> Vista {
    Vista::new(ModelConfig {
        height: size,
        width: size,
        channels: 16,
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn images(rng: &mut SplitMix64, size: usize) -> (Tensor, Tensor) {
    let a = random(rng, &[3, size, size], 0.5)
        .map("shift", |v| v + 0.5)
        .unwrap();
    let b = random(rng, &[3, size, size], 0.5)
        .map("shift", |v| v + 0.5)
        .unwrap();
    (a, b)
}

fn criterion_5() -> Outcome {
    let mut rng = SplitMix64::new(5);
    let (mut rows, mut worst, mut min_w) = (0usize, 0.0f64, f64::INFINITY);
    for i in 0..ATTENTION_FORWARDS {
        let model = small_model(i as u64 / 10, 32);
        let (a, b) = images(&mut rng, 32);
        let n_tokens = 1 + rng.below(13) as usize;
        let tokens: Vec<usize> = (0..n_tokens).map(|_| 3 + rng.below(509) as usize).collect();
        let out = model.forward(&a, &b, &tokens).map_err(|e| e.to_string())?;
        check(out.diagnostics.attention.len() == 11, || {
            format!("{} attention records", out.diagnostics.attention.len())
        })?;
        for st in &out.diagnostics.attention {
            rows += st.heads * st.queries;
            worst = worst.max(st.max_row_error);
            min_w = min_w.min(st.min_weight);
        }
    }
    check(worst <= ATTENTION_TOL, || {
        format!("row sum error {worst:e}")
    })?;
    check(min_w >= 0.0, || format!("negative weight {min_w:e}"))?;
    Ok(format!(
        "{ATTENTION_FORWARDS} forwards, {rows} rows, max |Σ−1| {worst:.1e}, min weight {min_w:.1e}"
    ))
}

fn expected_shapes(
    size: usize,
    c: usize,
    tokens: usize,
    answers: usize,
) -> Vec<(&'static str, Vec<usize>)> {
    let g = size / 16;
    vec![
        ("input.t1", vec![3, size, size]),
        ("input.t2", vec![3, size, size]),
        ("text.f_w", vec![tokens + 2, c]),
        ("text.f_s_sent", vec![c]),
        ("vision.f_c3", vec![c, size / 8, size / 8]),
        ("vision.f_c4", vec![c, g, g]),
        ("vision.f_c5", vec![c, size / 32, size / 32]),
        ("lgfa.f_m5", vec![c, size / 32, size / 32]),
        ("lgfa.f_m4", vec![c, g, g]),
        ("lgfa.f_m3", vec![c, size / 8, size / 8]),
        ("lgfa.f_v", vec![g * g, c]),
        ("vl.f_vl", vec![g * g, c]),
        ("selector.f_sel", vec![c]),
        ("coarse.m_c", vec![1, g, g]),
        ("mask.f_m", vec![c / 2, size / 4, size / 4]),
        ("head.mask_logits", vec![1, size, size]),
        ("head.answer_probs", vec![answers]),
    ]
}

fn criterion_6() -> Outcome {
    let mut errors = Vec::new();
    let mut checked = 0;
    for size in [64, 32] {
        let model = Vista::new(ModelConfig {
            height: size,
            width: size,
            ..ModelConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let c = model.config.channels;
        let answers = model.config.answers.len();
        let mut rng = SplitMix64::new(6);
        let (a, b) = images(&mut rng, size);
        let tokens = [10, 20, 30, 40, 50, 60];
        match model.forward(&a, &b, &tokens) {
            Err(e) => errors.push(format!("{size}: {e}")),
            Ok(out) => {
                for (name, shape) in expected_shapes(size, c, tokens.len(), answers) {
                    checked += 1;
                    let got = out.diagnostics.shape_of(name);
                    if got != Some(&shape[..]) {
                        errors.push(format!("{name} at {size}: {got:?} vs {shape:?}"));
                    }
                }
                if out.mask_logits.shape() != [1, size, size] {
                    errors.push(format!("mask at {size}: {:?}", out.mask_logits.shape()));
                }
            }
        }
    }
    check(errors.is_empty(), || errors.join("; "))?;
    Ok(format!(
        "{checked} intermediate shapes at 64 and 32, full-resolution masks, 0 errors"
    ))
}

fn criterion_7() -> Outcome {
    let opts = GradCheckOptions {
        h: GRAD_H,
        tol: GRAD_TOL,
        ..GradCheckOptions::default()
    };
    let report = loss_gradient_suite(GRAD_INSTANCES, LossWeights::default(), &opts)
        .map_err(|e| e.to_string())?;
    let worst = report
        .blocks
        .iter()
        .map(|b| b.max_rel_error)
        .fold(0.0, f64::max);
    check(report.pass, || {
        let failed: Vec<_> = report
            .blocks
            .iter()
            .filter(|b| !b.pass)
            .map(|b| b.name.as_str())
            .collect();
        format!("failing blocks {failed:?}")
    })?;

    // Negative control: the same checker must reject slightly wrong gradients.
    let mut rng = SplitMix64::new(7);
    let mut rejected = 0;
    for _ in 0..GRAD_INSTANCES {
        let v = 2 + rng.below(23) as usize;
        let target = rng.below(v as u64) as usize;
        let logits = random(&mut rng, &[v], 2.0);
        let (_, grad) = ce_loss(&softmax(&logits, 0).unwrap(), target).unwrap();
        let bad: Vec<f64> = grad.data().iter().map(|g| g * 1.01).collect();
        let mut f = |z: &[f64]| Ok(ce_loss(&softmax(&Tensor::vector(z.to_vec())?, 0)?, target)?.0);
        let ce_bad = !check_block("ce", &mut f, logits.data(), &bad, &opts)
            .unwrap()
            .pass;

        let (w, h) = (1 + rng.below(8) as usize, 1 + rng.below(8) as usize);
        let gt = random_mask(&mut rng, w, h);
        let z = random(&mut rng, &[1, h, w], 3.0);
        let (_, grad) = bce_loss(&z, &gt).unwrap();
        let mut bad = grad.data().to_vec();
        let at = rng.below(bad.len() as u64) as usize;
        bad[at] += 1e-3;
        let mut f = |x: &[f64]| Ok(bce_loss(&Tensor::new(vec![1, h, w], x.to_vec())?, &gt)?.0);
        let bce_bad = !check_block("bce", &mut f, z.data(), &bad, &opts)
            .unwrap()
            .pass;

        let c = 1 + rng.below(6) as usize;
        let gt = random_mask(&mut rng, 4, 2);
        let ta = random(&mut rng, &[c], 1.0);
        let va = random(&mut rng, &[c, 2, 4], 1.0);
        let out = contrastive_loss(&ta, &va, &gt).unwrap();
        let bad: Vec<f64> = out.grad_text.data().iter().map(|g| -g).collect();
        let mut f = |x: &[f64]| Ok(contrastive_loss(&Tensor::vector(x.to_vec())?, &va, &gt)?.loss);
        let con_bad = !check_block("con", &mut f, ta.data(), &bad, &opts)
            .unwrap()
            .pass;

        if ce_bad && bce_bad && con_bad {
            rejected += 1;
        }
    }
    check(rejected == GRAD_INSTANCES, || {
        format!("negative control rejected only {rejected}/{GRAD_INSTANCES}")
    })?;
    Ok(format!(
        "{GRAD_INSTANCES} instances per block, max rel err {worst:.1e} ≤ {GRAD_TOL:e}, corrupted gradients rejected"
    ))
}

fn criterion_8() -> Outcome {
    let mut rng = SplitMix64::new(8);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (c, h, w) = (
            1 + rng.below(16) as usize,
            1 + rng.below(8) as usize,
            1 + rng.below(8) as usize,
        );
        let gt = random_mask(&mut rng, w, h);
        let ta = random(&mut rng, &[c], 2.0);
        let va = random(&mut rng, &[c, h, w], 2.0);
        let dots: Vec<f64> = (0..h * w)
            .map(|i| {
                (0..c)
                    .map(|ch| ta.data()[ch] * va.data()[ch * h * w + i])
                    .sum()
            })
            .collect();
        let bce = bce_loss(&Tensor::new(vec![1, h, w], dots).unwrap(), &gt)
            .unwrap()
            .0;
        let con = contrastive_loss(&ta, &va, &gt)
            .map_err(|e| e.to_string())?
            .loss;
        worst = worst.max((bce - con).abs());
    }
    check(worst <= EQUIVALENCE_TOL, || {
        format!("max difference {worst:e}")
    })?;
    Ok(format!(
        "200 instances, max |contrastive − BCE| {worst:.1e}"
    ))
}

fn criterion_9() -> Outcome {
    let d = LossWeights::default();
    check((d.txt, d.mask, d.con) == (0.2, 1.0, 1.0), || {
        format!("defaults {d:?}")
    })?;
    let only_txt = LossWeights {
        mask: 0.0,
        con: 0.0,
        ..d
    };
    let mut rng = SplitMix64::new(9);
    for _ in 0..1000 {
        let (t, m, c) = (
            rng.uniform(0.0, 10.0),
            rng.uniform(0.0, 10.0),
            rng.uniform(0.0, 10.0),
        );
        let b = composite_loss(t, m, c, only_txt);
        check(b.total == 0.2 * t, || {
            format!("total {} vs {}", b.total, 0.2 * t)
        })?;
    }
    Ok("defaults (0.2, 1, 1); λ2=λ3=0 gives exactly 0.2·l_txt over 1000 draws".into())
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let run = || {
        let sample = synthetic_sample(0, 64, 64)?;
        let model = Vista::new(ModelConfig {
            seed: 0,
            ..ModelConfig::for_taxonomy(&sample.taxonomy)
        })?;
        let prepared = prepare_sample(
            &model,
            &sample.pair,
            &sample.question,
            &sample.answer,
            &sample.mask,
        )?;
        let opts = MicroFitOptions {
            steps: MICROFIT_STEPS,
            ..MicroFitOptions::default()
        };
        micro_fit(HeadParams::from_model(&model), &prepared, &opts)
    };
    let a = run().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let b = run().map_err(|e| e.to_string())?;
    let first = a.trace[0].total;
    let last = a.trace[a.trace.len() - 1].total;
    check(last <= MICROFIT_RATIO * first, || {
        format!("loss {first} -> {last}")
    })?;
    let same = a.trace.len() == b.trace.len()
        && a.trace
            .iter()
            .zip(&b.trace)
            .all(|(x, y)| x.total.to_bits() == y.total.to_bits());
    check(same, || "trace differs between runs".into())?;
    check(elapsed < MICROFIT_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "loss {first:.4} -> {last:.4} ({:.1}%) in {MICROFIT_STEPS} steps, bit-identical rerun, {:.2}s",
        100.0 * last / first,
        elapsed.as_secs_f64()
    ))
}

fn criterion_11() -> Outcome {
    let mut rng = SplitMix64::new(11);
    let tax = ClassTaxonomy::default_ten();
    let pairs: Vec<MaskPair> = (0..60)
        .map(|i| {
            let p = random_pair(&mut rng, &format!("scene_{i:03}"), 24, 10);
            let k = tax.len();
            MaskPair::new(
                p.pair_id.clone(),
                SemanticMask::new(p.width(), p.height(), k, p.t1.labels().to_vec()).unwrap(),
                SemanticMask::new(p.width(), p.height(), k, p.t2.labels().to_vec()).unwrap(),
            )
            .unwrap()
        })
        .collect();
    let data = generate_dataset(&pairs, &tax, &GenerationConfig::default(), 11)
        .map_err(|e| e.to_string())?;
    let split = split_dataset(&data, [0.7, 0.1, 0.2], 11).map_err(|e| e.to_string())?;

    let mut home: BTreeMap<&str, &str> = BTreeMap::new();
    for (name, part) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        for t in part.iter() {
            if let Some(prev) = home.insert(t.pair_id.as_str(), name) {
                check(prev == name, || {
                    format!("pair {} in {prev} and {name}", t.pair_id)
                })?;
            }
        }
    }
    let m = &split.manifest;
    let listed: BTreeSet<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
    check(
        listed.len() == pairs.len() && m.train.len() + m.val.len() + m.test.len() == pairs.len(),
        || "manifests overlap or miss pairs".into(),
    )?;
    check(
        split.train.len() + split.val.len() + split.test.len() == data.len(),
        || "triplets lost in split".into(),
    )?;

    // Every template, class and date, plus every generated question.
    let bank = TemplateBank::builtin();
    let mut rendered = 0;
    let (mut lo, mut hi) = (usize::MAX, 0);
    let mut note = |text: &str| {
        let n = word_count(text);
        lo = lo.min(n);
        hi = hi.max(n);
    };
    for q in QuestionType::ALL {
        let subjects: Vec<Option<usize>> = if q.has_subject() {
            (0..tax.len()).map(Some).collect()
        } else {
            vec![None]
        };
        for id in 0..TEMPLATES_PER_TYPE {
            for time in [1u8, 2] {
                for &s in &subjects {
                    let spec = QuestionSpec::new(q, time, s, id).unwrap();
                    note(&bank.render(&spec, &tax).map_err(|e| e.to_string())?);
                    rendered += 1;
                }
            }
        }
    }
    for t in &data {
        note(&t.question);
    }
    check((4..=15).contains(&lo) && (4..=15).contains(&hi), || {
        format!("word counts span {lo}..{hi}")
    })?;
    Ok(format!(
        "{} pairs split {}/{}/{} with no pair crossing splits; {} questions have {lo}–{hi} words",
        pairs.len(),
        m.train.len(),
        m.val.len(),
        m.test.len(),
        rendered + data.len()
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("triplet-engine oracle equivalence", criterion_1),
        ("golden-file determinism", criterion_2),
        ("metrics correctness", criterion_3),
        ("selector invariants", criterion_4),
        ("attention sanity", criterion_5),
        ("shape contract", criterion_6),
        ("gradient checks", criterion_7),
        ("contrastive equals BCE", criterion_8),
        ("composite loss weights", criterion_9),
        ("micro-fit", criterion_10),
        ("dataset hygiene", criterion_11),
    ];
    // Criterion 1 is timed single-threaded.
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build_global()
        .ok();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
