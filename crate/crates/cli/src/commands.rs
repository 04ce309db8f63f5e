use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cdqag_core::metrics::{load_predictions, EvalOptions};
use cdqag_core::raster::{load_mask, rle_encode, ClassTaxonomy, MaskPair};
use cdqag_core::triplet::{
    dataset_stats, generate_dataset, read_jsonl, split_dataset, write_jsonl, GenerationConfig,
    TemplateBank, Triplet,
};
use cdqag_vista::checkpoint;
use cdqag_vista::losses::{
    loss_gradient_suite, micro_fit, prepare_sample, synthetic_sample, GradCheckOptions, HeadParams,
    LossWeights, MicroFitOptions,
};
use cdqag_vista::model::{Diagnostics, ModelConfig, Vista};
use cdqag_vista::ops::sigmoid_scalar;
use log::info;
use serde::Serialize;

use crate::{Cli, Command, LambdaArgs, Outcome};

pub fn run(cli: Cli) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers as usize)
        .build()
        .context("starting worker pool")?;
    let seed = cli.seed;
    pool.install(|| match cli.command {
        Command::Generate {
            pairs,
            out,
            taxonomy,
            change_measure,
            templates,
            include_absent,
        } => {
            let taxonomy = taxonomy.unwrap_or_else(|| pairs.join("taxonomy.json"));
            let config = GenerationConfig {
                include_absent,
                change_measure: change_measure.into(),
                templates: match templates {
                    Some(p) => TemplateBank::load(&p)?,
                    None => TemplateBank::builtin(),
                },
            };
            generate(&pairs, &taxonomy, &out, &config, seed)
        }
        Command::Stats { dataset, out } => {
            let triplets: Vec<Triplet> = read_jsonl(&dataset)?;
            let report = dataset_stats(&triplets)?;
            emit(out.as_deref(), &to_json(&report)?)?;
            Ok(Outcome::Ok)
        }
        Command::Split {
            dataset,
            out_dir,
            ratios,
        } => split(&dataset, &out_dir, &ratios, seed),
        Command::Eval {
            gt,
            pred,
            threshold,
            logits,
            out,
        } => {
            let gts: Vec<Triplet> = read_jsonl(&gt)?;
            let preds = load_predictions(&pred, &gts)?;
            let opts = EvalOptions {
                threshold,
                scores_are_logits: logits,
                ..EvalOptions::default()
            };
            let report = cdqag_core::metrics::evaluate(&preds, &gts, &opts)?;
            print!("{}", report.to_table());
            if let Some(out) = out {
                emit(Some(&out), &to_json(&report)?)?;
            }
            Ok(Outcome::Ok)
        }
        Command::Forward {
            t1,
            t2,
            question,
            taxonomy,
            checkpoint,
            scores,
            threshold,
            diagnostics,
        } => forward(ForwardArgs {
            t1,
            t2,
            question,
            taxonomy,
            checkpoint,
            scores,
            threshold,
            diagnostics,
            seed,
        }),
        Command::Checkpoint {
            out,
            taxonomy,
            size,
            channels,
        } => {
            let taxonomy = load_taxonomy(taxonomy.as_deref())?;
            let config = ModelConfig {
                height: size,
                width: size,
                channels,
                seed,
                ..ModelConfig::for_taxonomy(&taxonomy)
            };
            checkpoint::save(&Vista::new(config)?, &out)?;
            eprintln!("wrote checkpoint to {}", out.display());
            Ok(Outcome::Ok)
        }
        Command::Gradcheck {
            instances,
            tol,
            lambdas,
            out,
        } => {
            let opts = GradCheckOptions {
                tol,
                seed,
                ..GradCheckOptions::default()
            };
            let report = loss_gradient_suite(instances, weights(lambdas), &opts)?;
            emit(out.as_deref(), &to_json(&report)?)?;
            for b in &report.blocks {
                eprintln!(
                    "{:<20} {:>6} coords  max rel err {:.3e}  {}",
                    b.name,
                    b.coords_checked,
                    b.max_rel_error,
                    if b.pass { "pass" } else { "FAIL" }
                );
            }
            Ok(if report.pass {
                Outcome::Ok
            } else {
                Outcome::ChecksFailed
            })
        }
        Command::Microfit {
            steps,
            lr,
            lambdas,
            out,
        } => microfit(steps, lr, weights(lambdas), out.as_deref(), seed),
    })
}

fn weights(l: LambdaArgs) -> LossWeights {
    LossWeights {
        txt: l.lambda_txt,
        mask: l.lambda_mask,
        con: l.lambda_con,
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Writes `text` to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_taxonomy(path: Option<&Path>) -> Result<ClassTaxonomy> {
    Ok(match path {
        Some(p) => ClassTaxonomy::load(p)?,
        None => ClassTaxonomy::default_ten(),
    })
}

/// Pair ids with a `<id>_t1.pgm` file in `dir`, sorted.
fn find_pairs(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut ids = Vec::new();
    for entry in entries {
        let name = entry?.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix("_t1.pgm")) {
            ensure!(
                dir.join(format!("{id}_t2.pgm")).is_file(),
                "pair {id} has no {id}_t2.pgm"
            );
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

fn generate(
    dir: &Path,
    taxonomy: &Path,
    out: &Path,
    config: &GenerationConfig,
    seed: u64,
) -> Result<Outcome> {
    let ids = find_pairs(dir)?;
    if ids.is_empty() {
        bail!("no pairs found in {}", dir.display());
    }
    let taxonomy = ClassTaxonomy::load(taxonomy)?;
    let pairs = ids
        .iter()
        .map(|id| MaskPair::load(dir, id, &taxonomy))
        .collect::<Result<Vec<_>, _>>()?;
    info!("loaded {} pairs, {} classes", pairs.len(), taxonomy.len());
    let triplets = generate_dataset(&pairs, &taxonomy, config, seed)?;
    write_jsonl(out, &triplets)?;
    eprintln!(
        "generated {} triplets from {} pairs -> {}",
        triplets.len(),
        pairs.len(),
        out.display()
    );
    Ok(Outcome::Ok)
}

fn split(dataset: &Path, out_dir: &Path, ratios: &[f64], seed: u64) -> Result<Outcome> {
    let triplets: Vec<Triplet> = read_jsonl(dataset)?;
    let ratios: [f64; 3] = ratios
        .try_into()
        .map_err(|_| anyhow::anyhow!("--ratios takes exactly three values"))?;
    let split = split_dataset(&triplets, ratios, seed)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_jsonl(out_dir.join("train.jsonl"), &split.train)?;
    write_jsonl(out_dir.join("val.jsonl"), &split.val)?;
    write_jsonl(out_dir.join("test.jsonl"), &split.test)?;
    emit(
        Some(&out_dir.join("manifest.json")),
        &to_json(&split.manifest)?,
    )?;
    eprintln!(
        "split {} triplets: train {}, val {}, test {}",
        triplets.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(Outcome::Ok)
}

struct ForwardArgs {
    t1: PathBuf,
    t2: PathBuf,
    question: String,
    taxonomy: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    scores: Option<PathBuf>,
    threshold: f64,
    diagnostics: bool,
    seed: u64,
}

#[derive(Serialize)]
struct RankedAnswer {
    answer: String,
    probability: f64,
}

#[derive(Serialize)]
struct ForwardReport {
    question: String,
    tokens: Vec<usize>,
    answer: String,
    probability: f64,
    top: Vec<RankedAnswer>,
    threshold: f64,
    mask: cdqag_core::raster::BinaryMask,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<Diagnostics>,
}

fn forward(args: ForwardArgs) -> Result<Outcome> {
    ensure!(
        args.threshold > 0.0 && args.threshold < 1.0,
        "threshold must lie in (0, 1), got {}",
        args.threshold
    );
    let taxonomy = load_taxonomy(args.taxonomy.as_deref())?;
    let t1 = load_mask(&args.t1, &taxonomy)?;
    let t2 = load_mask(&args.t2, &taxonomy)?;
    let model = match &args.checkpoint {
        Some(dir) => checkpoint::load(dir)?,
        None => Vista::new(ModelConfig {
            height: t1.height(),
            width: t1.width(),
            seed: args.seed,
            ..ModelConfig::for_taxonomy(&taxonomy)
        })?,
    };
    let out = model.forward_masks(&t1, &t2, &args.question)?;

    let probs: Vec<f64> = out
        .mask_logits
        .data()
        .iter()
        .map(|&z| sigmoid_scalar(z))
        .collect();
    let bits: Vec<bool> = probs.iter().map(|&p| p >= args.threshold).collect();
    let mask = rle_encode(&bits, t1.width(), t1.height())?;
    if let Some(path) = &args.scores {
        let bytes: Vec<u8> = probs
            .iter()
            .flat_map(|&p| (p as f32).to_le_bytes())
            .collect();
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }

    let dist = out.answer.probs.data();
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let name = |i: usize| {
        model
            .answer_token(i)
            .map_or_else(String::new, |t| t.to_string())
    };
    let best = out.answer.argmax();
    let report = ForwardReport {
        question: args.question.clone(),
        tokens: model.tokenize(&args.question),
        answer: name(best),
        probability: dist[best],
        top: order
            .iter()
            .take(5)
            .map(|&i| RankedAnswer {
                answer: name(i),
                probability: dist[i],
            })
            .collect(),
        threshold: args.threshold,
        mask,
        scores_path: args.scores.as_ref().map(|p| p.display().to_string()),
        diagnostics: args.diagnostics.then_some(out.diagnostics),
    };
    emit(None, &to_json(&report)?)?;
    Ok(Outcome::Ok)
}

fn microfit(
    steps: usize,
    lr: f64,
    weights: LossWeights,
    out: Option<&Path>,
    seed: u64,
) -> Result<Outcome> {
    let sample = synthetic_sample(seed, 64, 64)?;
    let model = Vista::new(ModelConfig {
        seed,
        ..ModelConfig::for_taxonomy(&sample.taxonomy)
    })?;
    let prepared = prepare_sample(
        &model,
        &sample.pair,
        &sample.question,
        &sample.answer,
        &sample.mask,
    )?;
    info!("question {:?}, answer {}", sample.question, sample.answer);
    let opts = MicroFitOptions {
        steps,
        lr,
        weights,
        ..MicroFitOptions::default()
    };
    let result = micro_fit(HeadParams::from_model(&model), &prepared, &opts)?;

    let mut csv = String::from("step,l_txt,l_mask,l_con,total\n");
    for (step, b) in result.trace.iter().enumerate() {
        csv.push_str(&format!(
            "{step},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            b.l_txt, b.l_mask, b.l_con, b.total
        ));
    }
    emit(out, &csv)?;

    let first = result.trace[0].total;
    let last = result.trace[result.trace.len() - 1].total;
    let ratio = if first > 0.0 { last / first } else { 0.0 };
    eprintln!(
        "loss {first:.6} -> {last:.6} ({:.1}% of initial)",
        100.0 * ratio
    );
    Ok(if last <= 0.5 * first {
        Outcome::Ok
    } else {
        Outcome::ChecksFailed
    })
}
