//! End-to-end prediction: train a quick model, run one image through it at
//! the model resolution, resize the probability map back to the native
//! resolution, and write it as a PGM together with the per-stage area maps
//! (foreground / background / uncertainty).
//!
//! ```bash
//! cargo run --release --example predict_image
//! ```

use uacanet::data::synth::synth_blobs;
use uacanet::data::{netpbm, write_dataset};
use uacanet::loss::BceReduction;
use uacanet::model::{Model, ModelConfig};
use uacanet::tensor::{no_grad, ops};
use uacanet::train::{ScheduleKind, Trainer, TrainOptions};
use uacanet::uaca::write_area_map_images;

fn main() -> uacanet::Result<()> {
    let out = std::path::Path::new("target/predict_demo");
    std::fs::create_dir_all(out)?;

    let train_set = synth_blobs(8, 64, 5)?;
    let config = ModelConfig::desk(16, 64);
    let model = Model::<f32>::new(&config, 5)?;
    let opts = TrainOptions {
        epochs: 200,
        batch: 8,
        seed: 5,
        base_lr: 1e-3,
        schedule: ScheduleKind::Literal,
        bce: BceReduction::Sum,
        augment: None,
    };
    let mut trainer = Trainer::new(opts, 1);
    println!("training {} iterations...", trainer.sched.iter_max);
    trainer.run(&model, &train_set, |_, _| Ok(()))?;

    // a fresh image at a different native resolution
    let sample = synth_blobs(1, 96, 77)?.remove(0);
    write_dataset(&out.join("input"), &[sample])?;
    let image = netpbm::read_ppm(&out.join("input/images").join(format!(
        "{}.ppm",
        synth_blobs(1, 96, 77)?[0].id
    )))?;
    let (h, w) = (image.shape()[1], image.shape()[2]);

    let (prob, stage_maps) = no_grad(|| -> uacanet::Result<_> {
        let batched = ops::reshape(&image, &[1, 3, h, w])?;
        let resized = ops::bilinear_resize(&batched, config.side, config.side)?;
        let fwd = model.forward_full(&resized, true)?;
        let native = ops::bilinear_resize(&fwd.probability(), h, w)?;
        Ok((ops::reshape(&native, &[1, h, w])?, fwd.stage_maps.unwrap()))
    })?;

    netpbm::write_pgm(&out.join("probability.pgm"), &prob)?;
    println!("probability map ({h}x{w}) -> {}", out.join("probability.pgm").display());

    for (i, sm) in stage_maps.iter().enumerate() {
        let written = write_area_map_images(out, i + 1, Some(&sm.m), &sm.maps)?;
        println!("stage {}: {} map images", i + 1, written.len());
    }
    println!("inspect the m_u maps: uncertainty concentrates along mask boundaries");
    Ok(())
}
