use cdqag_core::rng::{fnv1a64, SplitMix64};
use serde::{Deserialize, Serialize};

use cdqag_core::raster::BinaryMask;

use super::{
    bce_loss, ce_loss, contrastive_loss, head_loss, HeadParams, LossWeights, MicroFitSample,
};
use crate::error::{Error, Result};
use crate::model::ClassifierParams;
use crate::nn::{assign_params, flatten_params, Init};
use crate::ops::softmax;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Blocks larger than this are checked on a seeded sample of coordinates.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tol: 1e-5,
            max_coords: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub blocks: Vec<BlockReport>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn new(opts: &GradCheckOptions, blocks: Vec<BlockReport>) -> Self {
        let pass = blocks.iter().all(|b| b.pass);
        GradCheckReport {
            h: opts.h,
            tol: opts.tol,
            blocks,
            pass,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn check_block(
    name: &str,
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    opts: &GradCheckOptions,
) -> Result<BlockReport> {
    assert_eq!(x.len(), analytic.len(), "gradient length for block {name}");
    let mut coords: Vec<usize> = (0..x.len()).collect();
    if coords.len() > opts.max_coords {
        let mut rng = SplitMix64::new(opts.seed ^ fnv1a64(name.as_bytes()));
        rng.shuffle(&mut coords);
        coords.truncate(opts.max_coords);
        coords.sort_unstable();
    }
    let mut probe = x.to_vec();
    let mut max_rel_error: f64 = 0.0;
    for &i in &coords {
        probe[i] = x[i] + opts.h;
        let plus = f(&probe)?;
        probe[i] = x[i] - opts.h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        let numeric = (plus - minus) / (2.0 * opts.h);
        if !numeric.is_finite() {
            return Err(Error::NonFinite("grad_check"));
        }
        max_rel_error = max_rel_error.max(relative_error(analytic[i], numeric));
    }
    Ok(BlockReport {
        name: name.to_string(),
        coords_checked: coords.len(),
        max_rel_error,
        pass: max_rel_error <= opts.tol,
    })
}

fn random_tensor(rng: &mut SplitMix64, shape: &[usize], scale: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform(-scale, scale)).collect(),
    )
}

fn random_mask(rng: &mut SplitMix64, w: usize, h: usize) -> Result<BinaryMask> {
    let bits: Vec<bool> = (0..w * h).map(|_| rng.below(2) == 1).collect();
    Ok(BinaryMask::from_bits(&bits, w, h)?)
}

/// Folds per-instance reports into one block entry.
fn merge(name: &str, reports: &[BlockReport], tol: f64) -> BlockReport {
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    BlockReport {
        name: name.to_string(),
        coords_checked: reports.iter().map(|r| r.coords_checked).sum(),
        max_rel_error,
        pass: max_rel_error <= tol,
    }
}

/// Checks every analytic gradient on `instances` seeded random problems:
/// cross-entropy logits, BCE logits, both contrastive inputs, and the
/// composite head gradient used by the micro-fit.
pub fn loss_gradient_suite(
    instances: usize,
    weights: LossWeights,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = SplitMix64::new(opts.seed);
    let mut ce = Vec::new();
    let mut bce = Vec::new();
    let mut con_text = Vec::new();
    let mut con_pixels = Vec::new();
    let mut heads = Vec::new();
    for _ in 0..instances {
        let v = 2 + rng.below(23) as usize;
        let target = rng.below(v as u64) as usize;
        let logits = random_tensor(&mut rng, &[v], 2.0)?;
        let (_, grad) = ce_loss(&softmax(&logits, 0)?, target)?;
        let mut f = |z: &[f64]| Ok(ce_loss(&softmax(&Tensor::vector(z.to_vec())?, 0)?, target)?.0);
        ce.push(check_block("ce", &mut f, logits.data(), grad.data(), opts)?);

        let (w, h) = (1 + rng.below(8) as usize, 1 + rng.below(8) as usize);
        let gt = random_mask(&mut rng, w, h)?;
        let z = random_tensor(&mut rng, &[1, h, w], 3.0)?;
        let (_, grad) = bce_loss(&z, &gt)?;
        let mut f = |x: &[f64]| Ok(bce_loss(&Tensor::new(vec![1, h, w], x.to_vec())?, &gt)?.0);
        bce.push(check_block("bce", &mut f, z.data(), grad.data(), opts)?);

        let c = 1 + rng.below(6) as usize;
        let gt = random_mask(&mut rng, 4, 2)?;
        let ta = random_tensor(&mut rng, &[c], 1.0)?;
        let va = random_tensor(&mut rng, &[c, 2, 4], 1.0)?;
        let out = contrastive_loss(&ta, &va, &gt)?;
        let mut f = |x: &[f64]| Ok(contrastive_loss(&Tensor::vector(x.to_vec())?, &va, &gt)?.loss);
        con_text.push(check_block(
            "contrastive.text",
            &mut f,
            ta.data(),
            out.grad_text.data(),
            opts,
        )?);
        let mut f = |x: &[f64]| {
            Ok(contrastive_loss(&ta, &Tensor::new(vec![c, 2, 4], x.to_vec())?, &gt)?.loss)
        };
        con_pixels.push(check_block(
            "contrastive.pixels",
            &mut f,
            va.data(),
            out.grad_pixels.data(),
            opts,
        )?);

        let mut init = Init::new(rng.next_u64());
        let params = HeadParams {
            head: init.linear(8, 5),
            classifier: ClassifierParams::init(&mut init, 8, 6),
        };
        let sample = MicroFitSample::new(
            random_tensor(&mut rng, &[8], 1.0)?,
            random_tensor(&mut rng, &[4, 2, 2], 1.0)?,
            rng.below(6) as usize,
            random_mask(&mut rng, 8, 8)?,
        )?;
        let (_, grad) = head_loss(&params, &sample, weights, 1)?;
        let mut probe = params.clone();
        let mut f = |x: &[f64]| {
            assign_params(&mut probe, x);
            Ok(head_loss(&probe, &sample, weights, 1)?.0.total)
        };
        heads.push(check_block(
            "heads",
            &mut f,
            &flatten_params(&params),
            &flatten_params(&grad),
            opts,
        )?);
    }
    let blocks = vec![
        merge("ce", &ce, opts.tol),
        merge("bce", &bce, opts.tol),
        merge("contrastive.text", &con_text, opts.tol),
        merge("contrastive.pixels", &con_pixels, opts.tol),
        merge("heads", &heads, opts.tol),
    ];
    Ok(GradCheckReport::new(opts, blocks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_corruption_fails() {
        let x: Vec<f64> = (0..20).map(|i| f64::from(i) * 0.37 - 3.0).collect();
        let mut f = |v: &[f64]| Ok(0.5 * v.iter().map(|a| a * a).sum::<f64>());
        let opts = GradCheckOptions::default();
        let good = check_block("q", &mut f, &x, &x, &opts).unwrap();
        assert!(good.pass);
        assert!(good.max_rel_error < 1e-8);
        let bad: Vec<f64> = x.iter().map(|v| v * 1.1).collect();
        assert!(!check_block("q", &mut f, &x, &bad, &opts).unwrap().pass);
    }

    #[test]
    fn samples_large_blocks() {
        let x = vec![1.0; 1000];
        let mut f = |v: &[f64]| Ok(v.iter().sum::<f64>());
        let opts = GradCheckOptions::default();
        let r = check_block("big", &mut f, &x, &vec![1.0; 1000], &opts).unwrap();
        assert_eq!(r.coords_checked, 256);
        assert!(r.pass);
    }

    #[test]
    fn suite_passes() {
        let r =
            loss_gradient_suite(3, LossWeights::default(), &GradCheckOptions::default()).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.blocks.len(), 5);
    }

    #[test]
    fn non_finite_closure_is_an_error() {
        let mut f = |v: &[f64]| Ok(if v[0] > 1.0 { f64::INFINITY } else { 0.0 });
        let r = check_block("inf", &mut f, &[1.0], &[0.0], &GradCheckOptions::default());
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
