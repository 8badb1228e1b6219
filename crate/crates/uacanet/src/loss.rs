//! Training objective: binary cross entropy plus soft IoU, applied to all
//! four predicted saliency maps (deep supervision) with equal weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ops, Element, Tensor};

const CLAMP_EPS: f64 = 1e-7;

/// Reduction for the BCE term. `Mean` keeps the term on the same scale as
/// the bounded IoU term regardless of resolution; `Sum` is the literal
/// per-pixel sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BceReduction {
    #[default]
    Mean,
    Sum,
}

/// Binary cross entropy between a probability map and a `{0,1}` target,
/// with predictions clamped to `[ε, 1−ε]`, ε = 1e-7.
pub fn bce_loss<E: Element>(pred_prob: &Tensor<E>, gt: &Tensor<E>) -> Result<Tensor<E>> {
    bce_loss_with(pred_prob, gt, BceReduction::Mean)
}

pub fn bce_loss_with<E: Element>(
    pred_prob: &Tensor<E>,
    gt: &Tensor<E>,
    reduction: BceReduction,
) -> Result<Tensor<E>> {
    if pred_prob.shape() != gt.shape() {
        return Err(Error::shape(
            "bce_loss",
            format!("{:?} vs {:?}", pred_prob.shape(), gt.shape()),
        ));
    }
    let eps = E::from_f64(CLAMP_EPS);
    let p = ops::clamp(pred_prob, eps, E::one() - eps);
    // −[y·ln p + (1−y)·ln(1−p)]
    let pos = ops::mul(gt, &ops::ln(&p))?;
    let one_minus_y = ops::add_scalar(&ops::neg(gt), E::one());
    let one_minus_p = ops::add_scalar(&ops::neg(&p), E::one());
    let neg_term = ops::mul(&one_minus_y, &ops::ln(&one_minus_p))?;
    let pointwise = ops::neg(&ops::add(&pos, &neg_term)?);
    Ok(match reduction {
        BceReduction::Mean => ops::mean_all(&pointwise),
        BceReduction::Sum => ops::sum_all(&pointwise),
    })
}

/// Soft IoU loss `1 − Σ yŷ / (Σ (y + ŷ − yŷ) + 1e-7)`.
pub fn iou_loss<E: Element>(pred_prob: &Tensor<E>, gt: &Tensor<E>) -> Result<Tensor<E>> {
    if pred_prob.shape() != gt.shape() {
        return Err(Error::shape(
            "iou_loss",
            format!("{:?} vs {:?}", pred_prob.shape(), gt.shape()),
        ));
    }
    let inter = ops::sum_all(&ops::mul(pred_prob, gt)?);
    let union = ops::sub(&ops::add(&ops::sum_all(gt), &ops::sum_all(pred_prob))?, &inter)?;
    let guarded = ops::add_scalar(&union, E::from_f64(1e-7));
    let ratio = ops::div(&inter, &guarded)?;
    Ok(ops::add_scalar(&ops::neg(&ratio), E::one()))
}

/// Combined loss over the four supervised logit maps: each contributes
/// `bce(sigmoid(logit), gt) + iou(sigmoid(logit), gt)` with equal weight.
/// Returns the scalar loss tensor plus the per-map values for logging.
pub fn total_loss<E: Element>(
    logits: &[&Tensor<E>; 4],
    gt: &Tensor<E>,
    reduction: BceReduction,
) -> Result<(Tensor<E>, [f64; 4])> {
    let mut per_map = [0.0f64; 4];
    let mut total: Option<Tensor<E>> = None;
    for (i, logit) in logits.iter().enumerate() {
        let prob = ops::sigmoid(logit);
        let term = ops::add(
            &bce_loss_with(&prob, gt, reduction)?,
            &iou_loss(&prob, gt)?,
        )?;
        per_map[i] = term.item().to_f64();
        total = Some(match total {
            Some(t) => ops::add(&t, &term)?,
            None => term,
        });
    }
    Ok((total.unwrap(), per_map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn bce_is_tiny_for_exact_prediction() {
        let y = t(&[1.0, 0.0, 1.0, 0.0]);
        let loss = bce_loss(&y, &y).unwrap().item();
        assert!(loss >= 0.0 && loss <= 1e-6, "{loss}");
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let y = t(&[1.0; 8]);
        let p = t(&[0.5; 8]);
        let loss = bce_loss(&p, &y).unwrap().item();
        assert!((loss - 2.0f64.ln()).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn bce_clamp_keeps_confident_miss_finite() {
        let y = t(&[1.0; 4]);
        let p = t(&[0.0; 4]);
        let loss = bce_loss(&p, &y).unwrap().item();
        assert!(loss.is_finite() && loss > 10.0);
    }

    #[test]
    fn bce_sum_reduction_scales_by_count() {
        let y = t(&[1.0; 8]);
        let p = t(&[0.5; 8]);
        let sum = bce_loss_with(&p, &y, BceReduction::Sum).unwrap().item();
        assert!((sum - 8.0 * 2.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn iou_loss_reference_points() {
        let ones = t(&[1.0; 6]);
        assert!(iou_loss(&ones, &ones).unwrap().item() < 1e-6);
        let zeros = t(&[0.0; 6]);
        assert!((iou_loss(&zeros, &ones).unwrap().item() - 1.0).abs() < 1e-6);
        // y = [1,0], p = [0.5,0.5]: 1 − 0.5/1.5 = 2/3
        let loss = iou_loss(&t(&[0.5, 0.5]), &t(&[1.0, 0.0])).unwrap().item();
        assert!((loss - 2.0 / 3.0).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn perfect_logits_give_near_zero_total() {
        let gt = t(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let logits = Tensor::from_vec(
            gt.to_vec().iter().map(|&v| if v > 0.5 { 50.0 } else { -50.0 }).collect(),
            &[6],
        )
        .unwrap();
        let (loss, _) = total_loss(
            &[&logits, &logits, &logits, &logits],
            &gt,
            BceReduction::Mean,
        )
        .unwrap();
        assert!(loss.item() < 1e-3, "{}", loss.item());
    }

    #[test]
    fn four_identical_maps_quadruple_the_single_loss() {
        let gt = t(&[1.0, 0.0, 1.0]);
        let logit = t(&[0.3, -0.8, 1.4]);
        let (loss, per_map) = total_loss(&[&logit, &logit, &logit, &logit], &gt, BceReduction::Mean).unwrap();
        let single = bce_loss(&ops::sigmoid(&logit), &gt).unwrap().item()
            + iou_loss(&ops::sigmoid(&logit), &gt).unwrap().item();
        assert!((loss.item() - 4.0 * single).abs() < 1e-9);
        for pm in per_map {
            assert!((pm - single).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_matches_hand_composition() {
        let gt = t(&[1.0, 0.0, 0.0, 1.0]);
        let maps: Vec<Tensor<f64>> = (0..4)
            .map(|k| {
                Tensor::from_vec(
                    (0..4).map(|i| ((i + k) as f64 * 0.71).sin()).collect(),
                    &[4],
                )
                .unwrap()
            })
            .collect();
        let (loss, _) = total_loss(
            &[&maps[0], &maps[1], &maps[2], &maps[3]],
            &gt,
            BceReduction::Mean,
        )
        .unwrap();
        let mut expect = 0.0;
        for m in &maps {
            let p = ops::sigmoid(m);
            expect += bce_loss(&p, &gt).unwrap().item() + iou_loss(&p, &gt).unwrap().item();
        }
        assert!((loss.item() - expect).abs() < 1e-9);
    }

    #[test]
    fn losses_are_differentiable_away_from_clamps() {
        use crate::tensor::gradcheck::grad_check;
        let gt = t(&[1.0, 0.0, 1.0, 0.0]);
        let x = t(&[0.3, -0.4, 1.2, -2.0]);
        let err = grad_check(
            |logit| {
                let p = ops::sigmoid(logit);
                ops::add(&bce_loss(&p, &gt)?, &iou_loss(&p, &gt)?)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err:.2e}");
    }
}
