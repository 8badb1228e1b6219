//! Built-in verification suite behind `uacanet selftest`.
//!
//! Re-runs the core correctness arguments at runtime: the area-map algebraic
//! identities, softmax partitions, equivalence of the matrix implementations
//! against naive loop oracles, finite-difference gradient checks, and a
//! checkpoint round-trip.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionAxis, AxialAttention, PaaBlock};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::reference;
use crate::tensor::gradcheck::grad_check;
use crate::tensor::{ops, Tensor};
use crate::train::{checkpoint, Adam};
use crate::uaca::{area_maps, context_vectors, AreaMaps, Uaca};

/// Outcome of one check.
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn check(
    name: &str,
    out: &mut Vec<CheckResult>,
    f: impl FnOnce() -> Result<(bool, String)>,
) {
    let t0 = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    out.push(CheckResult {
        name: name.to_string(),
        passed,
        detail,
        seconds: t0.elapsed().as_secs_f64(),
    });
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / f64::max(1e-8, x.abs() + y.abs()))
        .fold(0.0, f64::max)
}

/// Verifies the three area-map identities on `n` uniform samples, using the
/// provided map constructor (the production one, or a corrupted one in
/// mutation tests).
pub fn area_map_identity_check(
    split: impl Fn(&Tensor<f64>) -> Result<AreaMaps<f64>>,
    n: usize,
    seed: u64,
) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let m = Tensor::from_vec(vals.clone(), &[1, 1, 1, n])?;
    let maps = split(&m)?;
    let f = maps.m_f.to_vec();
    let b = maps.m_b.to_vec();
    let u = maps.m_u.to_vec();
    let mut worst = 0.0f64;
    let mut disjoint = true;
    for i in 0..n {
        worst = worst.max((f[i] + b[i] + u[i] - 0.5).abs());
        worst = worst.max((0.5 + f[i] - b[i] - vals[i]).abs());
        if f[i] * b[i] != 0.0 {
            disjoint = false;
        }
        if f[i] < 0.0 || b[i] < 0.0 || u[i] < 0.0 {
            disjoint = false;
        }
    }
    Ok((
        worst < 1e-6 && disjoint,
        format!("{n} samples, worst identity residual {worst:.2e}, disjoint: {disjoint}"),
    ))
}

/// Runs every check; `seed` drives all randomness.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    check("area-map identities (10k uniform)", &mut results, || {
        area_map_identity_check(|m| area_maps(m), 10_000, seed)
    });

    check("score softmax partition of unity", &mut results, || {
        let mut worst = 0.0f32;
        for k in 1..=4usize {
            let items: Vec<Tensor<f32>> = (0..k)
                .map(|_| {
                    Tensor::from_vec(
                        (0..60).map(|_| rng.gen_range(-30.0..30.0)).collect(),
                        &[3, 4, 5],
                    )
                    .unwrap()
                })
                .collect();
            let refs: Vec<&Tensor<f32>> = items.iter().collect();
            let parts = ops::softmax_over(&refs)?;
            for i in 0..60 {
                let s: f32 = parts.iter().map(|p| p.data()[i]).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        Ok((worst < 1e-6, format!("K=1..4, worst |sum-1| = {worst:.2e}")))
    });

    check("axial attention vs loop oracle", &mut results, || {
        let mut worst = 0.0f64;
        for _ in 0..4 {
            for axis in [AttentionAxis::Horizontal, AttentionAxis::Vertical] {
                let attn = AxialAttention::<f64>::new(&mut rng, 8, 8, axis)?;
                let x = Tensor::from_vec(
                    (0..8 * 30).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    &[1, 8, 5, 6],
                )?;
                let got = attn.forward(&x)?.to_vec();
                let want = reference::axial_attention(&attn, &x);
                worst = worst.max(max_rel(&got, &want));
            }
        }
        Ok((worst < 1e-5, format!("max rel deviation {worst:.2e}")))
    });

    check("parallel block vs summed oracles", &mut results, || {
        let paa = PaaBlock::<f64>::new(&mut rng, 8, 8)?;
        let x = Tensor::from_vec(
            (0..8 * 24).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[1, 8, 4, 6],
        )?;
        let got = paa.forward(&x)?.to_vec();
        let h = reference::axial_attention(&paa.horizontal, &x);
        let v = reference::axial_attention(&paa.vertical, &x);
        let want: Vec<f64> = h.iter().zip(&v).map(|(&a, &b)| a + b).collect();
        let worst = max_rel(&got, &want);
        Ok((worst < 1e-5, format!("max rel deviation {worst:.2e}")))
    });

    check("context attention vs loop oracles", &mut results, || {
        let mut worst = 0.0f64;
        for _ in 0..4 {
            let uaca = Uaca::<f64>::new(&mut rng, 6, 4, true, 1.0);
            let x = Tensor::from_vec(
                (0..6 * 20).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                &[1, 6, 4, 5],
            )?;
            let m = Tensor::from_vec(
                (0..20).map(|_| rng.gen_range(0.0..1.0)).collect(),
                &[1, 1, 4, 5],
            )?;
            let maps = area_maps(&m)?;
            let vectors = context_vectors(&x, &maps)?;
            let vref =
                reference::context_vectors(&x, [&maps.m_f, &maps.m_b, &maps.m_u]);
            worst = worst.max(max_rel(&vectors.v_f.to_vec(), &vref[0]));
            worst = worst.max(max_rel(&vectors.v_b.to_vec(), &vref[1]));
            worst = worst.max(max_rel(&vectors.v_u.to_vec(), &vref[2]));
            let scores = uaca.similarity_scores(&x, &vectors)?;
            let sref = reference::similarity_scores(
                &uaca,
                &x,
                [&vref[0], &vref[1], &vref[2]],
            );
            worst = worst.max(max_rel(&scores.s_f.to_vec(), &sref[0]));
            worst = worst.max(max_rel(&scores.s_b.to_vec(), &sref[1]));
            worst = worst.max(max_rel(&scores.s_u.to_vec(), &sref[2]));
            let t = uaca.context_aggregate(&scores, &vectors)?.to_vec();
            let tref = reference::context_aggregate(
                &uaca,
                [&sref[0], &sref[1], &sref[2]],
                [&vref[0], &vref[1], &vref[2]],
                1,
                6,
                20,
            );
            worst = worst.max(max_rel(&t, &tref));
        }
        Ok((worst < 1e-5, format!("max rel deviation {worst:.2e}")))
    });

    check("gradient checks (64-bit)", &mut results, || {
        let mut worst = 0.0f64;
        let x = Tensor::from_vec(
            (0..2 * 3 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[2, 3, 4, 4],
        )?;
        worst = worst.max(grad_check(
            |t| Ok(ops::sum_all(&ops::sigmoid(t))),
            &x,
            1e-5,
        )?);
        let w = Tensor::from_vec(
            (0..4 * 3 * 9).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            &[4, 3, 3, 3],
        )?;
        let bias = Tensor::from_vec(vec![0.1, -0.2, 0.3, 0.0], &[4])?;
        worst = worst.max(grad_check(
            |t| {
                let y = ops::conv2d(t, &w, &bias, 1, 1, 1)?;
                let parts = ops::softmax_over(&[&y, &ops::mul_scalar(&y, 0.5)])?;
                Ok(ops::sum_all(&ops::mul(&parts[0], &y)?))
            },
            &x,
            1e-5,
        )?);
        worst = worst.max(grad_check(
            |t| Ok(ops::sum_all(&ops::mul(&ops::bilinear_resize(t, 7, 3)?, &ops::bilinear_resize(t, 7, 3)?)?)),
            &x,
            1e-5,
        )?);
        Ok((worst < 1e-5, format!("worst rel error {worst:.2e}")))
    });

    check("checkpoint round-trip", &mut results, || {
        let config = ModelConfig::desk(8, 32);
        let model = Model::<f32>::new(&config, seed)?;
        let probe = Tensor::from_vec(
            (0..3 * 32 * 32).map(|i| ((i % 23) as f32) / 23.0).collect(),
            &[1, 3, 32, 32],
        )?;
        let before = crate::no_grad(|| model.forward(&probe))?.u_up[2].to_vec();
        let dir = std::env::temp_dir().join(format!("uacanet-selftest-{}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("roundtrip.uack");
        checkpoint::save_checkpoint(&path, &model.parameters(), &Adam::new(), 7, &config)?;
        let fresh = Model::<f32>::new(&config, seed.wrapping_add(1))?;
        let ckpt = checkpoint::load_checkpoint(&path)?;
        checkpoint::apply_checkpoint(&ckpt, &fresh, &mut Adam::new())?;
        let after = crate::no_grad(|| fresh.forward(&probe))?.u_up[2].to_vec();
        let _ = std::fs::remove_dir_all(&dir);
        let exact = before == after;
        Ok((exact, format!("forward outputs bit-identical: {exact}")))
    });

    check("stage residual identity at zero init", &mut results, || {
        let model = Model::<f32>::new(&ModelConfig::desk(8, 32), seed)?;
        let x = Tensor::from_vec(
            (0..3 * 32 * 32).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
            &[1, 3, 32, 32],
        )?;
        let out = crate::no_grad(|| model.forward(&x))?;
        let r1 = ops::bilinear_resize(&out.d_logit, 2, 2)?;
        let r2 = ops::bilinear_resize(&out.u_logits[0], 4, 4)?;
        let r3 = ops::bilinear_resize(&out.u_logits[1], 8, 8)?;
        let ok = out.u_logits[0].to_vec() == r1.to_vec()
            && out.u_logits[1].to_vec() == r2.to_vec()
            && out.u_logits[2].to_vec() == r3.to_vec();
        Ok((ok, format!("stage logits equal resampled guidance: {ok}")))
    });

    results
}

/// Formats results as an aligned pass/fail table.
pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{} {:w$}  [{:>6.2}s]  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail,
            w = width
        ));
    }
    out
}
