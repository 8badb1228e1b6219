//! Evaluation metrics and the dataset evaluation protocol.
//!
//! Dice and IoU binarize the prediction at a threshold (default 0.5); MAE
//! compares the raw probability map. All three are averaged per image, not
//! pooled over pixels. Empty-prediction/empty-target pairs score 1.0.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{no_grad, ops, Element, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn check_shapes<E: Element>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn confusion<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>, threshold: f64) -> (f64, f64, f64) {
    let thr = E::from_f64(threshold);
    let mut inter = 0.0;
    let mut p_count = 0.0;
    let mut g_count = 0.0;
    for (&p, &g) in pred.data().iter().zip(gt.data().iter()) {
        let pb = p >= thr;
        let gb = g >= thr;
        if pb {
            p_count += 1.0;
        }
        if gb {
            g_count += 1.0;
        }
        if pb && gb {
            inter += 1.0;
        }
    }
    (inter, p_count, g_count)
}

/// Dice coefficient `2|P∩G| / (|P|+|G|)` of the thresholded prediction.
pub fn dice_score<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>, threshold: f64) -> Result<f64> {
    check_shapes("dice_score", pred, gt)?;
    let (inter, p, g) = confusion(pred, gt, threshold);
    Ok(if p + g == 0.0 { 1.0 } else { 2.0 * inter / (p + g) })
}

/// Jaccard index `|P∩G| / |P∪G|` of the thresholded prediction.
pub fn iou_score<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>, threshold: f64) -> Result<f64> {
    check_shapes("iou_score", pred, gt)?;
    let (inter, p, g) = confusion(pred, gt, threshold);
    let union = p + g - inter;
    Ok(if union == 0.0 { 1.0 } else { inter / union })
}

/// Mean absolute error of the raw probability map, no thresholding.
pub fn mae<E: Element>(pred: &Tensor<E>, gt: &Tensor<E>) -> Result<f64> {
    check_shapes("mae", pred, gt)?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(gt.data().iter())
        .map(|(&p, &g)| (p.to_f64() - g.to_f64()).abs())
        .sum();
    Ok(total / pred.numel() as f64)
}

/// Scores for one evaluated image.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageEval {
    pub path: String,
    pub dice: f64,
    pub iou: f64,
    pub mae: f64,
}

/// Dataset-level evaluation report: per-image scores and their means.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub mdice: f64,
    pub miou: f64,
    pub mae: f64,
    pub count: usize,
    pub skipped: usize,
    pub per_image: Vec<ImageEval>,
}

impl EvalReport {
    fn from_scores(per_image: Vec<ImageEval>, skipped: usize) -> Self {
        let n = per_image.len() as f64;
        EvalReport {
            mdice: per_image.iter().map(|s| s.dice).sum::<f64>() / n,
            miou: per_image.iter().map(|s| s.iou).sum::<f64>() / n,
            mae: per_image.iter().map(|s| s.mae).sum::<f64>() / n,
            count: per_image.len(),
            skipped,
            per_image,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidArg(format!("report serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "path,dice,iou,mae")?;
        for row in &self.per_image {
            writeln!(out, "{},{},{},{}", row.path, row.dice, row.iou, row.mae)?;
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Runs one image through the model at the configured side length and
/// resizes the probability map back to the native resolution.
pub fn predict_sample(model: &Model<f32>, sample: &Sample) -> Result<Tensor<f32>> {
    let (h, w) = sample.size();
    let side = model.config.side;
    no_grad(|| {
        let batched = ops::reshape(&sample.image, &[1, 3, h, w])?;
        let resized = ops::bilinear_resize(&batched, side, side)?;
        let out = model.forward(&resized)?;
        let prob = out.probability();
        let native = ops::bilinear_resize(&prob, h, w)?;
        ops::reshape(&native, &[1, h, w])
    })
}

/// Evaluates every sample: resize to the model side, forward, resize the
/// final sigmoid map back to the source resolution, and score against the
/// untouched mask. `skipped` counts samples the caller failed to load.
pub fn evaluate_dataset(
    model: &Model<f32>,
    samples: &[Sample],
    skipped: usize,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for sample in samples {
        let prob = predict_sample(model, sample)?;
        rows.push(ImageEval {
            path: sample.id.clone(),
            dice: dice_score(&prob, &sample.mask, DEFAULT_THRESHOLD)?,
            iou: iou_score(&prob, &sample.mask, DEFAULT_THRESHOLD)?,
            mae: mae(&prob, &sample.mask)?,
        });
    }
    Ok(EvalReport::from_scores(rows, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn perfect_binary_prediction_scores_perfectly() {
        let g = t(&[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(dice_score(&g, &g, 0.5).unwrap(), 1.0);
        assert_eq!(iou_score(&g, &g, 0.5).unwrap(), 1.0);
        assert_eq!(mae(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap_gives_dice_half_iou_third() {
        // |P| = |G| = 2, intersection 1
        let p = t(&[1.0, 1.0, 0.0, 0.0]);
        let g = t(&[0.0, 1.0, 1.0, 0.0]);
        assert!((dice_score(&p, &g, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!((iou_score(&p, &g, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction_and_target_score_one() {
        let z = t(&[0.0; 5]);
        assert_eq!(dice_score(&z, &z, 0.5).unwrap(), 1.0);
        assert_eq!(iou_score(&z, &z, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn dice_dominates_iou() {
        let p = t(&[1.0, 1.0, 0.0, 1.0, 0.0]);
        let g = t(&[0.0, 1.0, 1.0, 1.0, 0.0]);
        let d = dice_score(&p, &g, 0.5).unwrap();
        let i = iou_score(&p, &g, 0.5).unwrap();
        assert!(d >= i);
    }

    #[test]
    fn mae_is_mean_of_absolute_differences() {
        let p = t(&[0.25, 0.75]);
        let g = t(&[0.0, 1.0]);
        assert!((mae(&p, &g).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = t(&[0.0, 1.0]);
        let g = t(&[0.0, 1.0, 1.0]);
        assert!(dice_score(&p, &g, 0.5).is_err());
        assert!(mae(&p, &g).is_err());
    }
}
