use std::time::Instant;
use uacanet::data::synth::synth_blobs;
use uacanet::data::Sample;
use uacanet::metrics::evaluate_dataset;
use uacanet::model::{Model, ModelConfig};
use uacanet::train::{Trainer, TrainOptions, ScheduleKind};
use uacanet::loss::BceReduction;

fn main() {
    for (lr, sum_bce, mseed) in [(1.5e-3f64, false, 3u64), (1.5e-3, false, 7), (1.5e-3, false, 11)] {
        run_one(lr, sum_bce, mseed);
    }
}

fn run_one(lr: f64, sum_bce: bool, mseed: u64) {
    let t0 = Instant::now();
    let samples = synth_blobs(8, 64, 42).unwrap();
    let cfg = ModelConfig::desk(16, 64);
    let model = Model::<f32>::new(&cfg, mseed).unwrap();
    let opts = TrainOptions {
        epochs: 500, batch: 8, seed: 42, base_lr: lr,
        schedule: ScheduleKind::Literal, bce: if sum_bce { BceReduction::Sum } else { BceReduction::Mean }, augment: None,
    };
    let mut trainer = Trainer::new(opts, Trainer::steps_per_epoch(8, 8));
    
    println!("=== lr {lr:.1e}, sum_bce {sum_bce}, model seed {mseed}");
    let mut last = 0.0;
    let mut count = 0u64;
    trainer.run(&model, &samples, |s, _| { last = s.loss; count += 1; if (s.iter+1) % 250 == 0 { println!("iter {}: loss {:.4}", s.iter+1, s.loss); } if count >= 500 { Err(uacanet::Error::InvalidArg("stop".into())) } else { Ok(()) } }).unwrap_or(());
    let report = evaluate_dataset(&model, &samples, 0).unwrap();
    println!("final loss {last:.4}; train mDice {:.4} mIoU {:.4} MAE {:.4}", report.mdice, report.miou, report.mae);

    println!("elapsed: {:.1} min", t0.elapsed().as_secs_f64() / 60.0);
    let _ = samples;
}
