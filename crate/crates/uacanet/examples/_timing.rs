use std::time::Instant;
use uacanet::data::synth::synth_blobs;
use uacanet::data::Sample;
use uacanet::loss::BceReduction;
use uacanet::model::{Model, ModelConfig};
use uacanet::train::{make_batch, train_step, Adam, PolySchedule, ScheduleKind};

fn main() {
    let samples = synth_blobs(8, 64, 42).unwrap();
    let refs: Vec<&Sample> = samples.iter().collect();
    let (im, mk) = make_batch(&refs, 64).unwrap();
    let model = Model::<f32>::new(&ModelConfig::desk(16, 64), 3).unwrap();
    let params = model.parameters();
    let mut adam = Adam::new();
    let sched = PolySchedule::new(1e-3, 500, ScheduleKind::Literal);
    // warmup
    for it in 0..3 {
        train_step(&model, &params, &im, &mk, &mut adam, &sched, it, BceReduction::Mean).unwrap();
    }
    let t0 = Instant::now();
    for it in 3..13 {
        train_step(&model, &params, &im, &mk, &mut adam, &sched, it, BceReduction::Mean).unwrap();
    }
    let per_iter = t0.elapsed().as_secs_f64() / 10.0;
    println!("train_step: {:.0} ms/iter -> 500 iters = {:.1} min", per_iter * 1e3, per_iter * 500.0 / 60.0);

    let t0 = Instant::now();
    for _ in 0..10 {
        let _ = uacanet::no_grad(|| model.forward(&im)).unwrap();
    }
    println!("forward only (no_grad): {:.0} ms", t0.elapsed().as_secs_f64() / 10.0 * 1e3);
}
