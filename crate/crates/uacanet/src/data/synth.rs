//! Synthetic blob benchmark: soft-edged elliptical "polyps" on a textured
//! background, deterministic per `(seed, index)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample RNG derived from the dataset seed and the sample index, so
/// generation order (or parallel generation) cannot change a sample.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ra: f64,
    rb: f64,
    cos_t: f64,
    sin_t: f64,
    color: [f64; 3],
}

impl Ellipse {
    /// Normalized quadratic form; interior is `u <= 1`.
    fn u(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let a = (dx * self.cos_t + dy * self.sin_t) / self.ra;
        let b = (-dx * self.sin_t + dy * self.cos_t) / self.rb;
        a * a + b * b
    }
}

/// Generates `n` samples at `side × side`. Each carries 1–3 elliptical blobs
/// whose union is the mask; radii are bounded so foreground covers between
/// 1% and 50% of the frame. Identical `(n, side, seed)` always reproduces
/// identical samples.
pub fn synth_blobs(n: usize, side: usize, seed: u64) -> Result<Vec<Sample>> {
    if side < 32 {
        return Err(Error::InvalidArg(format!(
            "synth_blobs: side {side} < 32"
        )));
    }
    (0..n).map(|i| generate_one(side, seed, i as u64)).collect()
}

fn generate_one(side: usize, seed: u64, index: u64) -> Result<Sample> {
    let mut rng = sample_rng(seed, index);
    let s = side as f64;

    // Low-frequency background texture shared across channels.
    let base = [
        rng.gen_range(0.25..0.55),
        rng.gen_range(0.25..0.55),
        rng.gen_range(0.25..0.55),
    ];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.02..0.06),
            )
        })
        .collect();
    let gains = [
        rng.gen_range(0.6..1.4),
        rng.gen_range(0.6..1.4),
        rng.gen_range(0.6..1.4),
    ];

    let count = rng.gen_range(1..=3usize);
    let blobs: Vec<Ellipse> = (0..count)
        .map(|_| {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            Ellipse {
                cx: rng.gen_range(0.3..0.7) * s,
                cy: rng.gen_range(0.3..0.7) * s,
                ra: rng.gen_range(0.08..0.20) * s,
                rb: rng.gen_range(0.08..0.20) * s,
                cos_t: theta.cos(),
                sin_t: theta.sin(),
                color: [
                    rng.gen_range(0.55..0.85),
                    rng.gen_range(0.30..0.50),
                    rng.gen_range(0.30..0.50),
                ],
            }
        })
        .collect();

    let mut image = vec![0.0f32; 3 * side * side];
    let mut mask = vec![0.0f32; side * side];
    for y in 0..side {
        for x in 0..side {
            let idx = y * side + x;
            let field: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| {
                    amp * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / s + ph).sin()
                })
                .sum();
            let noise = rng.gen_range(-0.02..0.02);
            let mut px = [0.0f64; 3];
            for c in 0..3 {
                px[c] = base[c] + gains[c] * field + noise;
            }
            for blob in &blobs {
                let u = blob.u(x as f64 + 0.5, y as f64 + 0.5);
                if u <= 1.0 {
                    mask[idx] = 1.0;
                }
                // Soft edge: fully opaque inside, ramping to transparent just
                // past the boundary so the transition band is ambiguous.
                let alpha = ((1.3 - u) / 0.6).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    let shade = 1.0 - 0.15 * u.min(1.0);
                    for c in 0..3 {
                        px[c] = alpha * blob.color[c] * shade + (1.0 - alpha) * px[c];
                    }
                }
            }
            for c in 0..3 {
                image[c * side * side + idx] = px[c].clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(Sample {
        image: Tensor::from_vec(image, &[3, side, side])?,
        mask: Tensor::from_vec(mask, &[1, side, side])?,
        id: format!("synth_{seed:08x}_{index:04}"),
    })
}
