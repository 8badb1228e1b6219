//! Walkthrough of the uncertainty-augmented context attention stage: area
//! maps, context vectors, similarity partition, and the residual identity of
//! a zero-initialized head.
//!
//! ```bash
//! cargo run --release --example uncertainty_attention
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uacanet::tensor::{ops, Tensor};
use uacanet::uaca::{area_maps, context_vectors, Uaca};

fn main() -> uacanet::Result<()> {
    // a saliency map ramping from background to foreground
    let m = Tensor::from_vec(vec![0.05f64, 0.3, 0.5, 0.7, 0.95, 0.5, 0.2, 0.8], &[1, 1, 2, 4])?;
    let maps = area_maps(&m)?;
    println!("m   = {:?}", m.to_vec());
    println!("m_f = {:?}", maps.m_f.to_vec());
    println!("m_b = {:?}", maps.m_b.to_vec());
    println!("m_u = {:?}", maps.m_u.to_vec());
    for i in 0..8 {
        let sum = maps.m_f.data()[i] + maps.m_b.data()[i] + maps.m_u.data()[i];
        assert!((sum - 0.5).abs() < 1e-12, "the three areas always sum to 0.5");
        assert_eq!(maps.m_f.data()[i] * maps.m_b.data()[i], 0.0);
    }
    println!("identities hold: m_f+m_b+m_u = 0.5, m_f·m_b = 0");

    // one full stage on random features
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_vec(
        (0..8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        &[1, 8, 2, 4],
    )?;
    let uaca = Uaca::<f64>::new(&mut rng, 8, 8, true, 1.0);
    let vectors = context_vectors(&x, &maps)?;
    let scores = uaca.similarity_scores(&x, &vectors)?;
    let partition_ok = (0..8).all(|i| {
        (scores.s_f.data()[i] + scores.s_b.data()[i] + scores.s_u.data()[i] - 1.0).abs() < 1e-9
    });
    println!("similarity scores partition to 1 at every pixel: {partition_ok}");

    // zero-initialized residual head: the stage forwards its guidance exactly
    let guidance = Tensor::from_vec(vec![-2.0, 0.5], &[1, 1, 1, 2])?;
    let out = uaca.forward(&x, &guidance)?;
    let resized = ops::bilinear_resize(&guidance, 2, 4)?;
    assert_eq!(out.out_logit.to_vec(), resized.to_vec());
    println!("zero-initialized stage is an exact identity on its guidance logit");
    Ok(())
}
