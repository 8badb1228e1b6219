//! Trains briefly on synthetic data, evaluates on a held-out synthetic set,
//! and writes the evaluation report (JSON) plus the per-image CSV.
//!
//! ```bash
//! cargo run --release --example evaluate_model
//! ```

use uacanet::data::synth::synth_blobs;
use uacanet::loss::BceReduction;
use uacanet::metrics::evaluate_dataset;
use uacanet::model::{Model, ModelConfig};
use uacanet::train::{ScheduleKind, Trainer, TrainOptions};

fn main() -> uacanet::Result<()> {
    let train_set = synth_blobs(16, 64, 100)?;
    let eval_set = synth_blobs(8, 64, 200)?; // disjoint seed: held out

    let config = ModelConfig::desk(16, 64);
    let model = Model::<f32>::new(&config, 1)?;
    let opts = TrainOptions {
        epochs: 150,
        batch: 8,
        seed: 1,
        base_lr: 1e-3,
        schedule: ScheduleKind::Literal,
        bce: BceReduction::Sum,
        augment: Some(Default::default()),
    };
    let mut trainer = Trainer::new(opts, Trainer::steps_per_epoch(train_set.len(), 8));
    println!("training {} iterations on 16 samples...", trainer.sched.iter_max);
    trainer.run(&model, &train_set, |stats, _| {
        if (stats.iter + 1) % 60 == 0 {
            println!("iter {:>4}  loss {:.4}", stats.iter + 1, stats.loss);
        }
        Ok(())
    })?;

    let report = evaluate_dataset(&model, &eval_set, 0)?;
    println!(
        "held-out: mDice {:.4}  mIoU {:.4}  MAE {:.4} over {} images",
        report.mdice, report.miou, report.mae, report.count
    );
    for row in &report.per_image {
        println!("  {}: dice {:.3}  iou {:.3}  mae {:.4}", row.path, row.dice, row.iou, row.mae);
    }

    std::fs::create_dir_all("target/eval_demo")?;
    report.write_json(std::path::Path::new("target/eval_demo/report.json"))?;
    report.write_csv(std::path::Path::new("target/eval_demo/per_image.csv"))?;
    println!("report written to target/eval_demo/");
    Ok(())
}
