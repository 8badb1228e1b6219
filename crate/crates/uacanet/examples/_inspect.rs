use uacanet::data::synth::synth_blobs;
use uacanet::data::Sample;
use uacanet::loss::BceReduction;
use uacanet::metrics::dice_score;
use uacanet::model::{Model, ModelConfig};
use uacanet::tensor::{no_grad, ops, Tensor};
use uacanet::train::{make_batch, train_step, Adam, PolySchedule, ScheduleKind};

fn blob_stats(s: &Sample) {
    // connected components (4-neighbor) of the mask
    let side = s.mask.shape()[1];
    let m = s.mask.to_vec();
    let mut seen = vec![false; side * side];
    let mut sizes = Vec::new();
    for start in 0..side * side {
        if m[start] < 0.5 || seen[start] { continue; }
        let mut stack = vec![start];
        seen[start] = true;
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            let (y, x) = (p / side, p % side);
            for (dy, dx) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < side && (nx as usize) < side {
                    let np = ny as usize * side + nx as usize;
                    if m[np] > 0.5 && !seen[np] { seen[np] = true; stack.push(np); }
                }
            }
        }
        sizes.push(size);
    }
    println!("  {}: {} blobs, sizes {:?}", s.id, sizes.len(), sizes);
}

fn main() {
    let samples = synth_blobs(8, 64, 42).unwrap();
    for s in &samples { blob_stats(s); }

    let refs: Vec<&Sample> = samples.iter().collect();
    let (im, mk) = make_batch(&refs, 64).unwrap();
    let model = Model::<f32>::new(&ModelConfig::desk(16, 64), 42).unwrap();
    let params = model.parameters();
    let mut adam = Adam::new();
    let sched = PolySchedule::new(1e-3, 500, ScheduleKind::Literal);
    for it in 0..500 {
        train_step(&model, &params, &im, &mk, &mut adam, &sched, it, BceReduction::Sum).unwrap();
    }
    let out = no_grad(|| model.forward(&im)).unwrap();
    let d_prob = ops::sigmoid(&out.d_up);
    let u3_prob = out.probability();
    for (i, s) in samples.iter().enumerate() {
        let pick = |t: &Tensor<f32>| {
            let v = t.to_vec();
            Tensor::from_vec(v[i * 64 * 64..(i + 1) * 64 * 64].to_vec(), &[1, 64, 64]).unwrap()
        };
        let dd = dice_score(&pick(&d_prob), &s.mask, 0.5).unwrap();
        let du = dice_score(&pick(&u3_prob), &s.mask, 0.5).unwrap();
        println!("sample {i}: dice(d) {:.4} dice(u3) {:.4}", dd, du);
    }
}
