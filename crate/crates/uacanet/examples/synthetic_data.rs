//! Generates a synthetic blob dataset, materializes it in the standard
//! on-disk layout, and demonstrates the augmentation pipeline.
//!
//! ```bash
//! cargo run --release --example synthetic_data -- [out_dir]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uacanet::data::augment::{augment, AugmentConfig};
use uacanet::data::{load_dataset, synth::synth_blobs, write_dataset};

fn main() -> uacanet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/synthetic_demo".into());
    let root = std::path::Path::new(&out);

    let samples = synth_blobs(12, 64, 2024)?;
    write_dataset(root, &samples)?;
    let entries = load_dataset(root)?;
    println!("wrote {} image/mask pairs under {}", entries.len(), root.display());

    for s in samples.iter().take(3) {
        let fg: f32 = s.mask.data().iter().sum();
        println!(
            "  {}: foreground fraction {:.3}",
            s.id,
            fg / s.mask.numel() as f32
        );
    }

    // augmentation: flips, scale jitter, rotation, mask morphology
    let cfg = AugmentConfig::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let aug = augment(&samples[0], &cfg, &mut rng)?;
    let before: f32 = samples[0].mask.data().iter().sum();
    let after: f32 = aug.mask.data().iter().sum();
    println!(
        "augmented '{}': mask area {} -> {} px (still binary: {})",
        aug.id,
        before,
        after,
        aug.mask.data().iter().all(|&v| v == 0.0 || v == 1.0)
    );

    let aug_dir = root.join("augmented");
    write_dataset(&aug_dir, &[aug])?;
    println!("augmented sample written under {}", aug_dir.display());
    Ok(())
}
