//! Adam optimization with polynomial learning-rate decay, the training loop,
//! and checkpointing.

pub mod checkpoint;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::augment::{augment, AugmentConfig};
use crate::data::{synth::sample_rng, Sample};
use crate::error::{Error, Result};
use crate::loss::{total_loss, BceReduction};
use crate::model::Model;
use crate::tensor::{Element, Tensor};

/// Which polynomial decay formula to use. `Literal` is
/// `lr · (1 − (iter/iter_max)^0.9)`; `Conventional` is the more common
/// `lr · (1 − iter/iter_max)^0.9`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Literal,
    Conventional,
}

/// Polynomial learning-rate schedule.
#[derive(Clone, Debug)]
pub struct PolySchedule {
    pub base_lr: f64,
    pub iter_max: u64,
    pub exponent: f64,
    pub kind: ScheduleKind,
}

impl PolySchedule {
    pub fn new(base_lr: f64, iter_max: u64, kind: ScheduleKind) -> Self {
        assert!(iter_max > 0, "iter_max must be positive");
        PolySchedule {
            base_lr,
            iter_max,
            exponent: 0.9,
            kind,
        }
    }
}

/// Learning rate at `iter`; past `iter_max` the rate clamps to zero with a
/// warning.
pub fn poly_lr(iter: u64, sched: &PolySchedule) -> f64 {
    if iter > sched.iter_max {
        log::warn!(
            "poly_lr: iter {iter} beyond iter_max {}; learning rate clamped to 0",
            sched.iter_max
        );
        return 0.0;
    }
    let t = iter as f64 / sched.iter_max as f64;
    match sched.kind {
        ScheduleKind::Literal => sched.base_lr * (1.0 - t.powf(sched.exponent)),
        ScheduleKind::Conventional => sched.base_lr * (1.0 - t).powf(sched.exponent),
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter name and
/// created lazily with the parameter's shape.
pub struct Adam<E: Element> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<E>, Vec<E>)>,
}

impl<E: Element> Default for Adam<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Adam<E> {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn moments(&self) -> &BTreeMap<String, (Vec<E>, Vec<E>)> {
        &self.moments
    }

    pub(crate) fn restore_moments(&mut self, moments: BTreeMap<String, (Vec<E>, Vec<E>)>) {
        self.moments = moments;
    }

    /// Applies one bias-corrected update in place and zeroes the gradients.
    /// Every parameter must carry a gradient; a missing one is an error
    /// naming the parameter.
    pub fn step(&mut self, params: &[(String, Tensor<E>)], lr: f64) -> Result<()> {
        for (name, p) in params {
            if p.grad().is_none() {
                return Err(Error::MissingGrad(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = E::from_f64(self.beta1);
        let b2 = E::from_f64(self.beta2);
        let eps = E::from_f64(self.eps);
        let corr1 = E::from_f64(1.0 - self.beta1.powi(t));
        let corr2 = E::from_f64(1.0 - self.beta2.powi(t));
        let lr = E::from_f64(lr);
        for (name, p) in params {
            let grad = p.grad().unwrap();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![E::zero(); grad.len()], vec![E::zero(); grad.len()]));
            let mut data = p.to_vec();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (E::one() - b1) * g;
                v[i] = b2 * v[i] + (E::one() - b2) * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.set_data(data);
            p.zero_grad();
        }
        Ok(())
    }
}

/// Options for a training run.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub base_lr: f64,
    pub schedule: ScheduleKind,
    pub bce: BceReduction,
    /// `None` disables augmentation entirely.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 240,
            batch: 8,
            seed: 42,
            base_lr: 1e-4,
            schedule: ScheduleKind::Literal,
            bce: BceReduction::Mean,
            augment: Some(AugmentConfig::standard()),
        }
    }
}

/// Per-step diagnostics handed to the trainer callback and the CLI log.
#[derive(Clone, Debug, Serialize)]
pub struct StepStats {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
    pub loss_maps: [f64; 4],
}

/// Stacks samples at the model side into `[B,3,S,S]` / `[B,1,S,S]` batch
/// tensors, resizing bilinearly (image) and nearest (mask) when needed.
pub fn make_batch(samples: &[&Sample], side: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArg("make_batch: empty batch".into()));
    }
    let b = samples.len();
    let mut images = Vec::with_capacity(b * 3 * side * side);
    let mut masks = Vec::with_capacity(b * side * side);
    for s in samples {
        let fitted = crate::data::augment::resized(s, side, side);
        images.extend_from_slice(&fitted.image.to_vec());
        masks.extend_from_slice(&fitted.mask.to_vec());
    }
    Ok((
        Tensor::from_vec(images, &[b, 3, side, side])?,
        Tensor::from_vec(masks, &[b, 1, side, side])?,
    ))
}

/// One optimization step: forward, four-map loss, backward, Adam update at
/// the scheduled rate. Aborts with diagnostics if the loss goes non-finite.
pub fn train_step(
    model: &Model<f32>,
    params: &[(String, Tensor<f32>)],
    images: &Tensor<f32>,
    masks: &Tensor<f32>,
    adam: &mut Adam<f32>,
    sched: &PolySchedule,
    iter: u64,
    bce: BceReduction,
) -> Result<StepStats> {
    let out = model.forward(images)?;
    let (loss, loss_maps) = total_loss(&out.supervised(), masks, bce)?;
    let loss_val = loss.item() as f64;
    let lr = poly_lr(iter, sched);
    if !loss_val.is_finite() {
        return Err(Error::NanLoss {
            iter,
            lr,
            per_map: loss_maps.to_vec(),
        });
    }
    loss.backward()?;
    adam.step(params, lr)?;
    Ok(StepStats {
        iter,
        lr,
        loss: loss_val,
        loss_maps,
    })
}

/// Epoch-based training driver. Shuffling and per-sample augmentation RNGs
/// derive from `(seed, epoch, index)`, so a run is bit-reproducible.
pub struct Trainer {
    pub adam: Adam<f32>,
    pub sched: PolySchedule,
    pub opts: TrainOptions,
    iter: u64,
}

impl Trainer {
    pub fn new(opts: TrainOptions, steps_per_epoch: usize) -> Self {
        let iter_max = (opts.epochs * steps_per_epoch).max(1) as u64;
        Trainer {
            adam: Adam::new(),
            sched: PolySchedule::new(opts.base_lr, iter_max, opts.schedule),
            opts,
            iter: 0,
        }
    }

    pub fn steps_per_epoch(n_samples: usize, batch: usize) -> usize {
        n_samples.div_ceil(batch)
    }

    pub fn iter(&self) -> u64 {
        self.iter
    }

    /// Fast-forwards the iteration counter (checkpoint resume).
    pub fn resume_at(&mut self, iter: u64) {
        self.iter = iter;
        self.adam.set_step(iter);
    }

    /// Runs until `iter_max`, invoking `on_step` after every update with the
    /// step diagnostics and the optimizer state (for checkpoint hooks).
    pub fn run(
        &mut self,
        model: &Model<f32>,
        samples: &[Sample],
        mut on_step: impl FnMut(&StepStats, &Adam<f32>) -> Result<()>,
    ) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        let params = model.parameters();
        let side = model.config.side;
        let spe = Self::steps_per_epoch(samples.len(), self.opts.batch);
        let mut epoch = (self.iter / spe as u64) as usize;
        while self.iter < self.sched.iter_max {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut shuffle_rng = sample_rng(self.opts.seed, 0x5155_u64 ^ epoch as u64);
            order.shuffle(&mut shuffle_rng);
            for (bi, chunk) in order.chunks(self.opts.batch).enumerate() {
                if self.iter >= self.sched.iter_max {
                    break;
                }
                let prepared: Vec<Sample> = match &self.opts.augment {
                    Some(cfg) => chunk
                        .iter()
                        .map(|&i| {
                            let mut rng = sample_rng(
                                self.opts.seed,
                                ((epoch as u64) << 32) ^ (i as u64),
                            );
                            augment(&samples[i], cfg, &mut rng)
                        })
                        .collect::<Result<_>>()?,
                    None => chunk
                        .iter()
                        .map(|&i| Ok(Sample {
                            image: samples[i].image.clone(),
                            mask: samples[i].mask.clone(),
                            id: samples[i].id.clone(),
                        }))
                        .collect::<Result<_>>()?,
                };
                let refs: Vec<&Sample> = prepared.iter().collect();
                let (images, masks) = make_batch(&refs, side)?;
                let stats = train_step(
                    model,
                    &params,
                    &images,
                    &masks,
                    &mut self.adam,
                    &self.sched,
                    self.iter,
                    self.opts.bce,
                )?;
                self.iter += 1;
                let _ = bi;
                on_step(&stats, &self.adam)?;
            }
            epoch += 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_blobs;
    use crate::model::ModelConfig;

    #[test]
    fn poly_lr_reference_values() {
        let sched = PolySchedule::new(1e-4, 1000, ScheduleKind::Literal);
        assert_eq!(poly_lr(0, &sched), 1e-4);
        assert_eq!(poly_lr(1000, &sched), 0.0);
        let half = poly_lr(500, &sched);
        assert!((half - 4.6411e-5).abs() < 1e-8, "{half:.6e}");
    }

    #[test]
    fn poly_lr_clamps_past_iter_max() {
        let sched = PolySchedule::new(1e-4, 100, ScheduleKind::Literal);
        assert_eq!(poly_lr(101, &sched), 0.0);
    }

    #[test]
    fn poly_lr_is_monotone_nonincreasing() {
        for kind in [ScheduleKind::Literal, ScheduleKind::Conventional] {
            let sched = PolySchedule::new(3e-4, 250, kind);
            let mut prev = f64::INFINITY;
            for it in 0..=250 {
                let lr = poly_lr(it, &sched);
                assert!(lr <= prev + 1e-15, "{kind:?} at {it}");
                prev = lr;
            }
        }
    }

    #[test]
    fn conventional_schedule_differs_from_literal() {
        let lit = PolySchedule::new(1e-4, 100, ScheduleKind::Literal);
        let conv = PolySchedule::new(1e-4, 100, ScheduleKind::Conventional);
        assert!((poly_lr(50, &lit) - poly_lr(50, &conv)).abs() > 1e-6);
    }

    #[test]
    fn adam_zero_gradient_leaves_parameter_unchanged() {
        let p = Tensor::param(vec![1.5f32, -2.0], &[2]).unwrap();
        p.accum_grad(&[0.0, 0.0]);
        let mut adam = Adam::new();
        adam.step(&[("p".into(), p.clone())], 0.1).unwrap();
        assert_eq!(p.to_vec(), vec![1.5, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let p = Tensor::param(vec![1.0f64], &[1]).unwrap();
        p.accum_grad(&[0.5]);
        let mut adam = Adam::new();
        adam.step(&[("p".into(), p.clone())], 0.01).unwrap();
        // bias-corrected first step: −lr·g/(|g|+ε') ≈ −lr·sign(g)
        let delta = p.to_vec()[0] - 1.0;
        assert!((delta + 0.01).abs() < 1e-6, "{delta}");
    }

    #[test]
    fn adam_updates_parameters_independently() {
        let a = Tensor::param(vec![0.0f64], &[1]).unwrap();
        let b = Tensor::param(vec![0.0f64], &[1]).unwrap();
        a.accum_grad(&[1.0]);
        b.accum_grad(&[-2.0]);
        let mut adam = Adam::new();
        adam.step(&[("a".into(), a.clone()), ("b".into(), b.clone())], 0.1)
            .unwrap();
        // the normalized first step moves each parameter by ≈ −lr·sign(g)
        assert!((a.to_vec()[0] + 0.1).abs() < 1e-6);
        assert!((b.to_vec()[0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn adam_missing_gradient_names_the_parameter() {
        let p = Tensor::param(vec![1.0f32], &[1]).unwrap();
        let mut adam = Adam::new();
        let err = adam.step(&[("layer.weight".into(), p)], 0.1).unwrap_err();
        assert!(err.to_string().contains("layer.weight"));
    }

    #[test]
    fn train_step_loss_is_finite_and_positive() {
        let model = Model::<f32>::new(&ModelConfig::desk(8, 32), 1).unwrap();
        let params = model.parameters();
        let samples = synth_blobs(2, 32, 5).unwrap();
        let refs: Vec<&Sample> = samples.iter().collect();
        let (im, mk) = make_batch(&refs, 32).unwrap();
        let mut adam = Adam::new();
        let sched = PolySchedule::new(1e-4, 10, ScheduleKind::Literal);
        let stats =
            train_step(&model, &params, &im, &mk, &mut adam, &sched, 0, BceReduction::Mean)
                .unwrap();
        assert!(stats.loss.is_finite() && stats.loss > 0.0);
    }

    #[test]
    fn fixed_seed_trajectories_are_identical() {
        let samples = synth_blobs(4, 32, 11).unwrap();
        let mut losses = Vec::new();
        for _ in 0..2 {
            let model = Model::<f32>::new(&ModelConfig::desk(8, 32), 7).unwrap();
            let opts = TrainOptions {
                epochs: 3,
                batch: 2,
                seed: 13,
                base_lr: 1e-3,
                augment: Some(AugmentConfig::standard()),
                ..Default::default()
            };
            let mut trainer = Trainer::new(opts, Trainer::steps_per_epoch(4, 2));
            let mut trace = Vec::new();
            trainer
                .run(&model, &samples, |s, _| {
                    trace.push(s.loss);
                    Ok(())
                })
                .unwrap();
            losses.push(trace);
        }
        assert_eq!(losses[0], losses[1]);
        assert_eq!(losses[0].len(), 6);
    }

    /// Mask with one filled disk; representable at every supervision scale,
    /// unlike small blobs which the stride-16 logit map cannot express.
    fn disk_sample(side: usize, cx: f64, cy: f64, r: f64) -> Sample {
        let mask: Vec<f32> = (0..side * side)
            .map(|i| {
                let (y, x) = ((i / side) as f64, (i % side) as f64);
                if (y - cy).powi(2) + (x - cx).powi(2) <= r * r {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let image: Vec<f32> = (0..3 * side * side)
            .map(|i| if mask[i % (side * side)] > 0.5 { 0.7 } else { 0.3 })
            .collect();
        Sample {
            image: Tensor::from_vec(image, &[3, side, side]).unwrap(),
            mask: Tensor::from_vec(mask, &[1, side, side]).unwrap(),
            id: "disk".into(),
        }
    }

    #[test]
    fn overfitting_one_batch_cuts_loss_by_10x() {
        let side = 64;
        let samples = vec![
            disk_sample(side, 30.0, 34.0, 17.0),
            disk_sample(side, 36.0, 28.0, 20.0),
        ];
        let model = Model::<f32>::new(&ModelConfig::desk(16, side), 3).unwrap();
        let params = model.parameters();
        let refs: Vec<&Sample> = samples.iter().collect();
        let (im, mk) = make_batch(&refs, side).unwrap();
        let mut adam = Adam::new();
        let sched = PolySchedule::new(1e-3, 200, ScheduleKind::Literal);
        let mut first = None;
        let mut last = 0.0;
        for it in 0..200 {
            let stats = train_step(
                &model,
                &params,
                &im,
                &mk,
                &mut adam,
                &sched,
                it,
                BceReduction::Mean,
            )
            .unwrap();
            first.get_or_insert(stats.loss);
            last = stats.loss;
        }
        let first = first.unwrap();
        assert!(
            last < 0.1 * first,
            "initial {first:.4}, final {last:.4}"
        );
    }
}
