use std::time::Instant;
use uacanet::data::synth::synth_blobs;
use uacanet::loss::BceReduction;
use uacanet::metrics::{dice_score, evaluate_dataset};
use uacanet::model::{Model, ModelConfig};
use uacanet::tensor::{no_grad, ops, Tensor};
use uacanet::train::{ScheduleKind, Trainer, TrainOptions};

/// pixels within `radius` (Euclidean) of any mask boundary pixel
fn boundary_band(mask: &[f32], side: usize, radius: i64) -> Vec<bool> {
    let mut boundary = vec![false; side * side];
    for y in 0..side {
        for x in 0..side {
            let v = mask[y * side + x] > 0.5;
            if x + 1 < side && (mask[y * side + x + 1] > 0.5) != v {
                boundary[y * side + x] = true;
                boundary[y * side + x + 1] = true;
            }
            if y + 1 < side && (mask[(y + 1) * side + x] > 0.5) != v {
                boundary[y * side + x] = true;
                boundary[(y + 1) * side + x] = true;
            }
        }
    }
    let mut band = vec![false; side * side];
    for y in 0..side as i64 {
        for x in 0..side as i64 {
            'scan: for dy in -radius..=radius {
                for dx in -radius..=radius {
                    if dy * dy + dx * dx > radius * radius { continue; }
                    let (ny, nx) = (y + dy, x + dx);
                    if ny >= 0 && nx >= 0 && (ny as usize) < side && (nx as usize) < side
                        && boundary[ny as usize * side + nx as usize] {
                        band[y as usize * side + x as usize] = true;
                        break 'scan;
                    }
                }
            }
        }
    }
    band
}

fn main() {
    let t0 = Instant::now();
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(150);
    let lr: f64 = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(1.5e-3);
    let aug: bool = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(true);

    let side = 64usize;
    let train_set = synth_blobs(64, side, 42).unwrap();
    let eval_set = synth_blobs(32, side, 4242).unwrap();
    let config = ModelConfig::desk(16, side);
    let model = Model::<f32>::new(&config, 42).unwrap();
    let opts = TrainOptions {
        epochs, batch: 8, seed: 42, base_lr: lr,
        schedule: ScheduleKind::Literal, bce: BceReduction::Mean,
        augment: if aug { Some(Default::default()) } else { None },
    };
    let mut trainer = Trainer::new(opts, Trainer::steps_per_epoch(64, 8));
    println!("epochs {epochs} lr {lr} aug {aug}: {} iters", trainer.sched.iter_max);
    trainer.run(&model, &train_set, |s, _| {
        if (s.iter + 1) % 200 == 0 { println!("iter {}: loss {:.4}", s.iter + 1, s.loss); }
        Ok(())
    }).unwrap();

    let report = evaluate_dataset(&model, &eval_set, 0).unwrap();
    println!("held-out mDice {:.4} mIoU {:.4} MAE {:.4}", report.mdice, report.miou, report.mae);

    // m_u concentration: final stage's uncertainty map upsampled to image res
    let mut band_sum = 0f64; let mut band_n = 0f64;
    let mut rest_sum = 0f64; let mut rest_n = 0f64;
    let mut worst_dice: f64 = 1.0;
    for s in &eval_set {
        let out = no_grad(|| {
            let b = ops::reshape(&s.image, &[1, 3, side, side]).unwrap();
            model.forward_full(&b, true)
        }).unwrap();
        let mu = out.stage_maps.as_ref().unwrap()[2].maps.m_u.clone();
        let mu_up = ops::bilinear_resize(&mu, side, side).unwrap();
        let mu_v = mu_up.to_vec();
        let band = boundary_band(&s.mask.to_vec(), side, 2);
        for i in 0..side * side {
            if band[i] { band_sum += mu_v[i] as f64; band_n += 1.0; }
            else { rest_sum += mu_v[i] as f64; rest_n += 1.0; }
        }
        let prob = ops::reshape(&ops::bilinear_resize(&out.probability(), side, side).unwrap(), &[1, side, side]).unwrap();
        worst_dice = worst_dice.min(dice_score(&prob, &s.mask, 0.5).unwrap());
    }
    let band_mean = band_sum / band_n;
    let rest_mean = rest_sum / rest_n;
    println!("m_u band mean {:.4} vs elsewhere {:.4}: ratio {:.2}x (need >= 2)", band_mean, rest_mean, band_mean / rest_mean);
    println!("worst per-image dice {worst_dice:.4}");
    println!("elapsed {:.1} min", t0.elapsed().as_secs_f64() / 60.0);
}
