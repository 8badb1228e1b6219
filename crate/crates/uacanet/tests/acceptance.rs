//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured evidence. Run with `cargo test --test acceptance --
//! --nocapture` to see the lines.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uacanet::attention::{AttentionAxis, AxialAttention, PaaBlock};
use uacanet::data::synth::synth_blobs;
use uacanet::data::Sample;
use uacanet::loss::{total_loss, BceReduction};
use uacanet::metrics::{dice_score, evaluate_dataset, iou_score, mae};
use uacanet::model::{Model, ModelConfig};
use uacanet::reference;
use uacanet::tensor::gradcheck::{grad_check, grad_check_params};
use uacanet::tensor::{no_grad, ops, Tensor};
use uacanet::train::{checkpoint, poly_lr, Adam, PolySchedule, ScheduleKind, Trainer, TrainOptions};
use uacanet::uaca::{area_maps, context_vectors, Uaca};

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / f64::max(1e-8, x.abs() + y.abs()))
        .fold(0.0, f64::max)
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape).unwrap()
}

#[test]
fn criterion_1_area_map_identities() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let vals: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let m = Tensor::from_vec(vals.clone(), &[1, 1, 100, 100]).unwrap();
    let maps = area_maps(&m).unwrap();
    let (f, b, u) = (maps.m_f.to_vec(), maps.m_b.to_vec(), maps.m_u.to_vec());
    let mut worst = 0.0f64;
    for i in 0..vals.len() {
        worst = worst.max((f[i] + b[i] + u[i] - 0.5).abs());
        worst = worst.max((0.5 + f[i] - b[i] - vals[i]).abs());
        assert_eq!(f[i] * b[i], 0.0, "foreground/background overlap at {i}");
    }
    assert!(worst < 1e-6, "worst identity residual {worst:.2e}");
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}, budget 1 s");
    println!(
        "PASS criterion 1: area-map identities on 10k samples, worst residual {worst:.2e}, {dt:?}"
    );
}

#[test]
fn criterion_2_score_partition() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let c = 2 * rng.gen_range(1..=4usize); // even so the embedding is c/2
        let h = rng.gen_range(2..=6);
        let w = rng.gen_range(2..=6);
        let uaca = Uaca::<f64>::new(&mut rng, c, 8, case % 4 != 3, 1.0);
        let x = randn(&mut rng, &[1, c, h, w], -2.0, 2.0);
        let m = randn(&mut rng, &[1, 1, h, w], 0.0, 1.0);
        let maps = area_maps(&m).unwrap();
        let vectors = context_vectors(&x, &maps).unwrap();
        let s = uaca.similarity_scores(&x, &vectors).unwrap();
        let (sf, sb, su) = (s.s_f.to_vec(), s.s_b.to_vec(), s.s_u.to_vec());
        for i in 0..h * w {
            worst = worst.max((sf[i] + sb[i] + su[i] - 1.0).abs());
        }
    }
    assert!(worst < 1e-6, "worst |sum − 1| = {worst:.2e}");
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 5.0, "took {dt:?}, budget 5 s");
    println!("PASS criterion 2: score partition over 100 random inputs, worst {worst:.2e}, {dt:?}");
}

#[test]
fn criterion_3_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_attention = 0.0f64;
    // axial attention, both axes, two reduction settings, 10 instances each
    for reduction in [8usize, 2] {
        for _ in 0..10 {
            for axis in [AttentionAxis::Horizontal, AttentionAxis::Vertical] {
                let c = 8;
                let h = rng.gen_range(2..=8);
                let w = rng.gen_range(2..=8);
                let attn = AxialAttention::<f64>::new(&mut rng, c, reduction, axis).unwrap();
                let x = randn(&mut rng, &[1, c, h, w], -1.0, 1.0);
                let got = attn.forward(&x).unwrap().to_vec();
                let want = reference::axial_attention(&attn, &x);
                worst_attention = worst_attention.max(max_rel(&got, &want));
            }
        }
    }
    // parallel block
    for _ in 0..10 {
        let paa = PaaBlock::<f64>::new(&mut rng, 8, 8).unwrap();
        let x = randn(&mut rng, &[1, 8, 5, 7], -1.0, 1.0);
        let got = paa.forward(&x).unwrap().to_vec();
        let h = reference::axial_attention(&paa.horizontal, &x);
        let v = reference::axial_attention(&paa.vertical, &x);
        let want: Vec<f64> = h.iter().zip(&v).map(|(&a, &b)| a + b).collect();
        worst_attention = worst_attention.max(max_rel(&got, &want));
    }
    // context attention: vectors, scores, aggregation
    let mut worst_context = 0.0f64;
    for i in 0..10 {
        let c = 2 * rng.gen_range(2..=4usize);
        let h = rng.gen_range(2..=8);
        let w = rng.gen_range(2..=8);
        let uaca = Uaca::<f64>::new(&mut rng, c, 8, i % 5 != 4, 1.0);
        let x = randn(&mut rng, &[1, c, h, w], -1.0, 1.0);
        let m = randn(&mut rng, &[1, 1, h, w], 0.0, 1.0);
        let maps = area_maps(&m).unwrap();
        let vectors = context_vectors(&x, &maps).unwrap();
        let vref = reference::context_vectors(&x, [&maps.m_f, &maps.m_b, &maps.m_u]);
        worst_context = worst_context.max(max_rel(&vectors.v_f.to_vec(), &vref[0]));
        worst_context = worst_context.max(max_rel(&vectors.v_b.to_vec(), &vref[1]));
        worst_context = worst_context.max(max_rel(&vectors.v_u.to_vec(), &vref[2]));
        let scores = uaca.similarity_scores(&x, &vectors).unwrap();
        let sref = reference::similarity_scores(&uaca, &x, [&vref[0], &vref[1], &vref[2]]);
        worst_context = worst_context.max(max_rel(&scores.s_f.to_vec(), &sref[0]));
        worst_context = worst_context.max(max_rel(&scores.s_b.to_vec(), &sref[1]));
        let t = uaca.context_aggregate(&scores, &vectors).unwrap().to_vec();
        let tref = reference::context_aggregate(
            &uaca,
            [&sref[0], &sref[1], &sref[2]],
            [&vref[0], &vref[1], &vref[2]],
            1,
            c,
            h * w,
        );
        worst_context = worst_context.max(max_rel(&t, &tref));
    }
    assert!(worst_attention < 1e-5, "attention deviation {worst_attention:.2e}");
    assert!(worst_context < 1e-5, "context deviation {worst_context:.2e}");
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 30.0, "took {dt:?}, budget 30 s");
    println!(
        "PASS criterion 3: oracle equivalence, attention {worst_attention:.2e}, context {worst_context:.2e}, {dt:?}"
    );
}

#[test]
fn criterion_4_gradient_checks() {
    let t0 = Instant::now();
    // per-op checks: 20 seeds each, strict module threshold 1e-5
    let mut worst_op = 0.0f64;
    let mut check = |name: &str, f: &dyn Fn(&mut ChaCha8Rng) -> f64| {
        let mut local_worst = 0.0f64;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0x4000 + seed);
            local_worst = local_worst.max(f(&mut rng));
        }
        assert!(local_worst < 1e-5, "{name}: rel error {local_worst:.2e}");
        worst_op = worst_op.max(local_worst);
    };

    check("conv2d", &|rng| {
        let x = randn(rng, &[1, 2, 5, 4], -1.0, 1.0);
        let w = randn(rng, &[3, 2, 3, 3], -0.7, 0.7);
        let b = randn(rng, &[3], -0.3, 0.3);
        let stride = rng.gen_range(1..=2);
        grad_check(
            |t| {
                let y = ops::conv2d(t, &w, &b, stride, 1, 1)?;
                Ok(ops::sum_all(&ops::mul(&y, &y)?))
            },
            &x,
            1e-5,
        )
        .unwrap()
    });
    check("conv2d weight+bias", &|rng| {
        let x = randn(rng, &[1, 2, 4, 4], -1.0, 1.0);
        let w = randn(rng, &[2, 2, 3, 3], -0.7, 0.7);
        let b = randn(rng, &[2], -0.3, 0.3);
        let packed = Tensor::from_vec(
            w.to_vec().into_iter().chain(b.to_vec()).collect(),
            &[2 * 2 * 9 + 2],
        )
        .unwrap();
        grad_check(
            |p| {
                let wt = ops::reshape(&slice_front(p, 36)?, &[2, 2, 3, 3])?;
                let bt = slice_back(p, 2)?;
                let y = ops::conv2d(&x, &wt, &bt, 1, 1, 1)?;
                Ok(ops::sum_all(&ops::mul(&y, &y)?))
            },
            &packed,
            1e-5,
        )
        .unwrap()
    });
    check("conv1x1", &|rng| {
        let x = randn(rng, &[2, 3, 3, 3], -1.0, 1.0);
        let w = randn(rng, &[4, 3, 1, 1], -0.7, 0.7);
        let b = randn(rng, &[4], -0.3, 0.3);
        grad_check(
            |t| {
                let y = ops::conv2d(t, &w, &b, 1, 0, 1)?;
                Ok(ops::sum_all(&ops::mul(&y, &y)?))
            },
            &x,
            1e-5,
        )
        .unwrap()
    });
    check("matmul", &|rng| {
        let a = randn(rng, &[2, 3, 4], -1.0, 1.0);
        let b = randn(rng, &[2, 4, 2], -1.0, 1.0);
        let e1 = grad_check(
            |t| Ok(ops::sum_all(&ops::mul(&ops::matmul(t, &b)?, &ops::matmul(t, &b)?)?)),
            &a,
            1e-5,
        )
        .unwrap();
        let e2 = grad_check(
            |t| Ok(ops::sum_all(&ops::mul(&ops::matmul(&a, t)?, &ops::matmul(&a, t)?)?)),
            &b,
            1e-5,
        )
        .unwrap();
        e1.max(e2)
    });
    check("softmax_over", &|rng| {
        let x = randn(rng, &[2, 5], -2.0, 2.0);
        let w = randn(rng, &[2, 5], -1.0, 1.0);
        grad_check(
            |t| {
                let parts = ops::softmax_over(&[t, &ops::mul_scalar(t, -0.7), &ops::abs(t)])?;
                let mixed = ops::add(&ops::mul(&parts[0], &w)?, &ops::mul(&parts[2], t)?)?;
                Ok(ops::sum_all(&mixed))
            },
            &x,
            1e-5,
        )
        .unwrap()
    });
    check("softmax_last_axis", &|rng| {
        let x = randn(rng, &[3, 4], -2.0, 2.0);
        let w = randn(rng, &[3, 4], -1.0, 1.0);
        grad_check(
            |t| Ok(ops::sum_all(&ops::mul(&ops::softmax_last_axis(t)?, &w)?)),
            &x,
            1e-5,
        )
        .unwrap()
    });
    check("sigmoid", &|rng| {
        let x = randn(rng, &[2, 7], -3.0, 3.0);
        grad_check(|t| Ok(ops::sum_all(&ops::sigmoid(&ops::sigmoid(t)))), &x, 1e-5).unwrap()
    });
    check("elementwise add/sub/mul/div", &|rng| {
        let x = randn(rng, &[2, 6], 0.5, 2.0);
        let y = randn(rng, &[2, 6], 0.5, 2.0);
        grad_check(
            |t| {
                let s = ops::add(&ops::mul(t, &y)?, &ops::sub(t, &y)?)?;
                Ok(ops::sum_all(&ops::div(&s, &ops::add_scalar(&ops::mul(t, t)?, 1.0))?))
            },
            &x,
            1e-5,
        )
        .unwrap()
    });
    check("scalar_max/abs/relu away from kinks", &|rng| {
        // inputs bounded away from the kinks so central differences are valid
        let n = 12;
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let v = rng.gen_range(0.2..1.5);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let x = Tensor::from_vec(data, &[n]).unwrap();
        grad_check(
            |t| {
                let a = ops::scalar_max(t, 0.0);
                let b = ops::abs(t);
                let c = ops::relu(&ops::add_scalar(t, 0.05));
                Ok(ops::sum_all(&ops::add(&ops::mul(&a, &b)?, &c)?))
            },
            &x,
            1e-5,
        )
        .unwrap()
    });
    check("clamp/ln/exp", &|rng| {
        let x = randn(rng, &[8], 0.3, 0.7);
        grad_check(
            |t| {
                let c = ops::clamp(t, 0.1, 0.9);
                Ok(ops::sum_all(&ops::add(&ops::ln(&c), &ops::exp(&ops::neg(&c)))?))
            },
            &x,
            1e-5,
        )
        .unwrap()
    });
    check("mean_all", &|rng| {
        let x = randn(rng, &[3, 5], -1.0, 1.0);
        grad_check(|t| Ok(ops::mean_all(&ops::mul(t, t)?)), &x, 1e-5).unwrap()
    });
    check("bilinear_resize", &|rng| {
        let x = randn(rng, &[1, 2, 3, 4], -1.0, 1.0);
        grad_check(
            |t| {
                let up = ops::bilinear_resize(t, 7, 5)?;
                Ok(ops::sum_all(&ops::mul(&up, &up)?))
            },
            &x,
            1e-5,
        )
        .unwrap()
    });
    check("concat_channels", &|rng| {
        let x = randn(rng, &[1, 2, 3, 3], -1.0, 1.0);
        let y = randn(rng, &[1, 1, 3, 3], -1.0, 1.0);
        grad_check(
            |t| {
                let c = ops::concat_channels(&[t, &y, t])?;
                Ok(ops::sum_all(&ops::mul(&c, &c)?))
            },
            &x,
            1e-5,
        )
        .unwrap()
    });
    check("permute/reshape", &|rng| {
        let x = randn(rng, &[2, 3, 4], -1.0, 1.0);
        grad_check(
            |t| {
                let p = ops::permute(t, &[2, 0, 1])?;
                let r = ops::reshape(&p, &[4, 6])?;
                Ok(ops::sum_all(&ops::mul(&r, &r)?))
            },
            &x,
            1e-5,
        )
        .unwrap()
    });
    check("group_norm", &|rng| {
        let x = randn(rng, &[2, 4, 3, 3], -1.0, 1.0);
        let gamma = randn(rng, &[4], 0.5, 1.5);
        let beta = randn(rng, &[4], -0.5, 0.5);
        let e1 = grad_check(
            |t| {
                let y = ops::group_norm(t, &gamma, &beta, 2, 1e-5)?;
                Ok(ops::sum_all(&ops::mul(&y, &y)?))
            },
            &x,
            1e-5,
        )
        .unwrap();
        let e2 = grad_check(
            |g| {
                let y = ops::group_norm(&x, g, &beta, 2, 1e-5)?;
                Ok(ops::sum_all(&ops::mul(&y, &y)?))
            },
            &gamma,
            1e-5,
        )
        .unwrap();
        e1.max(e2)
    });

    // end-to-end: tiny model, 20 sampled parameter coordinates
    let mut rng = ChaCha8Rng::seed_from_u64(0x40E2);
    let model = Model::<f64>::new(&ModelConfig::desk(8, 32), 12).unwrap();
    let x = randn(&mut rng, &[1, 3, 32, 32], 0.0, 1.0);
    let gt = Tensor::from_vec(
        (0..32 * 32)
            .map(|_| if rng.gen_bool(0.25) { 1.0 } else { 0.0 })
            .collect(),
        &[1, 1, 32, 32],
    )
    .unwrap();
    let params = model.parameters();
    let e2e = grad_check_params(
        || {
            let out = model.forward(&x)?;
            let (loss, _) = total_loss(&out.supervised(), &gt, BceReduction::Mean)?;
            Ok(loss)
        },
        &params,
        20,
        1e-5,
        &mut rng,
    )
    .unwrap();
    assert!(e2e < 1e-3, "end-to-end rel error {e2e:.2e}");
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 120.0, "took {dt:?}, budget 2 min");
    println!(
        "PASS criterion 4: op gradients worst {worst_op:.2e} (<1e-5), end-to-end {e2e:.2e} (<1e-3), {dt:?}"
    );
}

// helpers for the packed weight+bias check
fn slice_front(t: &Tensor<f64>, n: usize) -> uacanet::Result<Tensor<f64>> {
    let total = t.numel();
    let picked = ops::matmul(
        &ops::reshape(t, &[1, total])?,
        &selection(total, 0, n),
    )?;
    ops::reshape(&picked, &[n])
}

fn slice_back(t: &Tensor<f64>, n: usize) -> uacanet::Result<Tensor<f64>> {
    let total = t.numel();
    let picked = ops::matmul(
        &ops::reshape(t, &[1, total])?,
        &selection(total, total - n, n),
    )?;
    ops::reshape(&picked, &[n])
}

fn selection(rows: usize, offset: usize, cols: usize) -> Tensor<f64> {
    let mut m = vec![0.0; rows * cols];
    for j in 0..cols {
        m[(offset + j) * cols + j] = 1.0;
    }
    Tensor::from_vec(m, &[rows, cols]).unwrap()
}

#[test]
fn criterion_5_residual_identity() {
    let model = Model::<f32>::new(&ModelConfig::desk(16, 64), 55).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let x = Tensor::from_vec(
        (0..3 * 64 * 64).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
        &[1, 3, 64, 64],
    )
    .unwrap();
    let out = no_grad(|| model.forward(&x)).unwrap();
    // with zero-initialized stage heads every stage logit must equal its
    // resampled guidance bit for bit
    let r1 = ops::bilinear_resize(&out.d_logit, 4, 4).unwrap();
    assert_eq!(out.u_logits[0].to_vec(), r1.to_vec(), "stage 1");
    let r2 = ops::bilinear_resize(&out.u_logits[0], 8, 8).unwrap();
    assert_eq!(out.u_logits[1].to_vec(), r2.to_vec(), "stage 2");
    let r3 = ops::bilinear_resize(&out.u_logits[1], 16, 16).unwrap();
    assert_eq!(out.u_logits[2].to_vec(), r3.to_vec(), "stage 3");
    println!("PASS criterion 5: zero-init stage logits equal resampled guidance bit-exactly");
}

#[test]
fn criterion_8_schedule_metric_checkpoint_oracles() {
    // schedule values
    let sched = PolySchedule::new(1e-4, 1000, ScheduleKind::Literal);
    assert_eq!(poly_lr(0, &sched), 1e-4);
    assert_eq!(poly_lr(1000, &sched), 0.0);
    let half = poly_lr(500, &sched);
    assert!((half - 4.6411e-5).abs() < 1e-8, "{half:.6e}");

    // metric hand values
    let p = Tensor::from_vec(vec![1.0f32, 1.0, 0.0, 0.0], &[4]).unwrap();
    let g = Tensor::from_vec(vec![0.0f32, 1.0, 1.0, 0.0], &[4]).unwrap();
    assert!((dice_score(&p, &g, 0.5).unwrap() - 0.5).abs() < 1e-12);
    assert!((iou_score(&p, &g, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let q = Tensor::from_vec(vec![0.25f32, 0.75], &[2]).unwrap();
    let h = Tensor::from_vec(vec![0.0f32, 1.0], &[2]).unwrap();
    assert!((mae(&q, &h).unwrap() - 0.25).abs() < 1e-12);
    let empty = Tensor::from_vec(vec![0.0f32; 4], &[4]).unwrap();
    assert_eq!(dice_score(&empty, &empty, 0.5).unwrap(), 1.0);
    assert_eq!(iou_score(&empty, &empty, 0.5).unwrap(), 1.0);

    // checkpoint bit-exact roundtrip
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acc.uack");
    let config = ModelConfig::desk(8, 32);
    let model = Model::<f32>::new(&config, 88).unwrap();
    let probe = Tensor::from_vec(
        (0..3 * 32 * 32).map(|i| ((i % 31) as f32) / 31.0).collect(),
        &[1, 3, 32, 32],
    )
    .unwrap();
    let before = no_grad(|| model.forward(&probe)).unwrap().u_up[2].to_vec();
    checkpoint::save_checkpoint(&path, &model.parameters(), &Adam::new(), 3, &config).unwrap();
    let fresh = Model::<f32>::new(&config, 89).unwrap();
    let ckpt = checkpoint::load_checkpoint(&path).unwrap();
    checkpoint::apply_checkpoint(&ckpt, &fresh, &mut Adam::new()).unwrap();
    let after = no_grad(|| fresh.forward(&probe)).unwrap().u_up[2].to_vec();
    assert_eq!(before, after);
    println!("PASS criterion 8: schedule values, metric hand-values, checkpoint round-trip");
}
