//! Parallel axial attention on a random feature map, checked against the
//! naive per-row/per-column loop oracle.
//!
//! ```bash
//! cargo run --release --example axial_attention
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uacanet::attention::{AttentionAxis, AxialAttention, PaaBlock};
use uacanet::reference;
use uacanet::tensor::Tensor;

fn main() -> uacanet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::from_vec(
        (0..8 * 6 * 10).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        &[1, 8, 6, 10],
    )?;

    for axis in [AttentionAxis::Horizontal, AttentionAxis::Vertical] {
        let attn = AxialAttention::<f64>::new(&mut rng, 8, 8, axis)?;
        let fast = attn.forward(&x)?.to_vec();
        let naive = reference::axial_attention(&attn, &x);
        let worst = fast
            .iter()
            .zip(&naive)
            .map(|(&a, &b)| (a - b).abs() / f64::max(1e-8, a.abs() + b.abs()))
            .fold(0.0f64, f64::max);
        println!("{axis:?}: matmul vs loop oracle, max rel deviation {worst:.2e}");
        assert!(worst < 1e-5);
    }

    // the parallel block sums both axes element-wise
    let paa = PaaBlock::<f64>::new(&mut rng, 8, 8)?;
    let out = paa.forward(&x)?;
    let h = paa.horizontal.forward(&x)?;
    let v = paa.vertical.forward(&x)?;
    let residual_check = out
        .to_vec()
        .iter()
        .zip(h.to_vec().iter().zip(v.to_vec()))
        .all(|(&o, (&a, b))| (o - (a + b)).abs() < 1e-12);
    println!("parallel block = horizontal + vertical: {residual_check}");
    Ok(())
}
