//! Trains a small model to overfit a handful of synthetic samples, then
//! scores it on its own training set and saves a checkpoint.
//!
//! ```bash
//! cargo run --release --example train_overfit
//! ```
//!
//! Takes a couple of minutes on CPU.

use uacanet::data::synth::synth_blobs;
use uacanet::loss::BceReduction;
use uacanet::metrics::evaluate_dataset;
use uacanet::model::{Model, ModelConfig};
use uacanet::train::{checkpoint, ScheduleKind, Trainer, TrainOptions};

fn main() -> uacanet::Result<()> {
    let samples = synth_blobs(8, 64, 42)?;
    let config = ModelConfig::desk(16, 64);
    let model = Model::<f32>::new(&config, 42)?;

    let opts = TrainOptions {
        epochs: 300,
        batch: 8,
        seed: 42,
        base_lr: 1e-3,
        schedule: ScheduleKind::Literal,
        bce: BceReduction::Sum,
        augment: None, // pure memorization
    };
    let mut trainer = Trainer::new(opts, Trainer::steps_per_epoch(samples.len(), 8));
    println!("training {} iterations...", trainer.sched.iter_max);
    trainer.run(&model, &samples, |stats, _| {
        if (stats.iter + 1) % 50 == 0 {
            println!(
                "iter {:>4}  lr {:.2e}  loss {:.4}",
                stats.iter + 1,
                stats.lr,
                stats.loss
            );
        }
        Ok(())
    })?;

    let report = evaluate_dataset(&model, &samples, 0)?;
    println!(
        "train-set scores: mDice {:.4}  mIoU {:.4}  MAE {:.4}",
        report.mdice, report.miou, report.mae
    );

    let out = std::path::Path::new("target/overfit_demo.uack");
    checkpoint::save_checkpoint(out, &model.parameters(), &trainer.adam, trainer.iter(), &config)?;
    println!("checkpoint saved to {}", out.display());
    Ok(())
}
