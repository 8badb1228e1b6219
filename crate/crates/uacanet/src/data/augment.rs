//! Training-time augmentation: flips, scale jitter, rotation, and random
//! morphology on the ground-truth mask.
//!
//! Images resample bilinearly with edge replication; masks resample nearest
//! with zero fill and are re-binarized afterwards. Morphology applies to the
//! training target only — evaluation masks are never touched.

use rand::Rng;

use super::Sample;
use crate::error::Result;
use crate::tensor::Tensor;

/// Augmentation ranges. `standard()` follows the usual segmentation recipe;
/// `identity()` disables everything.
#[derive(Clone, Debug)]
pub struct AugmentConfig {
    pub flip_h: f64,
    pub flip_v: f64,
    pub scale: (f64, f64),
    pub rotation_deg: (f64, f64),
    pub morph_radius: (u32, u32),
}

impl AugmentConfig {
    pub fn standard() -> Self {
        AugmentConfig {
            flip_h: 0.5,
            flip_v: 0.5,
            scale: (0.75, 1.25),
            rotation_deg: (0.0, 359.0),
            morph_radius: (0, 3),
        }
    }

    pub fn identity() -> Self {
        AugmentConfig {
            flip_h: 0.0,
            flip_v: 0.0,
            scale: (1.0, 1.0),
            rotation_deg: (0.0, 0.0),
            morph_radius: (0, 0),
        }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::standard()
    }
}

struct Plane {
    data: Vec<f32>,
    h: usize,
    w: usize,
}

fn planes_of(t: &Tensor<f32>) -> Vec<Plane> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = t.data();
    (0..c)
        .map(|ci| Plane {
            data: d[ci * h * w..(ci + 1) * h * w].to_vec(),
            h,
            w,
        })
        .collect()
}

fn tensor_of(planes: &[Plane]) -> Tensor<f32> {
    let (h, w) = (planes[0].h, planes[0].w);
    let mut data = Vec::with_capacity(planes.len() * h * w);
    for p in planes {
        data.extend_from_slice(&p.data);
    }
    Tensor::from_vec(data, &[planes.len(), h, w]).unwrap()
}

fn flip_h(p: &mut Plane) {
    for y in 0..p.h {
        p.data[y * p.w..(y + 1) * p.w].reverse();
    }
}

fn flip_v(p: &mut Plane) {
    for y in 0..p.h / 2 {
        for x in 0..p.w {
            p.data.swap(y * p.w + x, (p.h - 1 - y) * p.w + x);
        }
    }
}

/// Bilinear sample with edge replication.
fn sample_bilinear(p: &Plane, y: f64, x: f64) -> f32 {
    let cl = |v: f64, hi: usize| (v.floor() as isize).clamp(0, hi as isize - 1) as usize;
    let y0 = cl(y, p.h);
    let x0 = cl(x, p.w);
    let y1 = (y0 + 1).min(p.h - 1);
    let x1 = (x0 + 1).min(p.w - 1);
    let fy = (y - y.floor()).clamp(0.0, 1.0) as f32;
    let fx = (x - x.floor()).clamp(0.0, 1.0) as f32;
    let at = |yy: usize, xx: usize| p.data[yy * p.w + xx];
    let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x1);
    let bot = (1.0 - fx) * at(y1, x0) + fx * at(y1, x1);
    (1.0 - fy) * top + fy * bot
}

/// Nearest sample; out-of-frame reads as `fill`.
fn sample_nearest(p: &Plane, y: f64, x: f64, fill: f32) -> f32 {
    let yi = y.round() as isize;
    let xi = x.round() as isize;
    if yi < 0 || xi < 0 || yi >= p.h as isize || xi >= p.w as isize {
        fill
    } else {
        p.data[yi as usize * p.w + xi as usize]
    }
}

fn resize(p: &Plane, oh: usize, ow: usize, nearest: bool) -> Plane {
    let sy = p.h as f64 / oh as f64;
    let sx = p.w as f64 / ow as f64;
    let mut data = vec![0.0f32; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            data[y * ow + x] = if nearest {
                sample_nearest(p, src_y, src_x, 0.0)
            } else {
                sample_bilinear(p, src_y, src_x)
            };
        }
    }
    Plane { data, h: oh, w: ow }
}

/// Center-crop or center-pad back to `(h, w)`. Padding replicates edges for
/// images and fills zero for masks.
fn center_fit(p: &Plane, h: usize, w: usize, mask: bool) -> Plane {
    let oy = p.h as isize - h as isize; // positive: crop, negative: pad
    let ox = p.w as isize - w as isize;
    let mut data = vec![0.0f32; h * w];
    for y in 0..h {
        let sy = y as isize + oy.div_euclid(2);
        for x in 0..w {
            let sx = x as isize + ox.div_euclid(2);
            data[y * w + x] = if sy < 0 || sx < 0 || sy >= p.h as isize || sx >= p.w as isize {
                if mask {
                    0.0
                } else {
                    let cy = sy.clamp(0, p.h as isize - 1) as usize;
                    let cx = sx.clamp(0, p.w as isize - 1) as usize;
                    p.data[cy * p.w + cx]
                }
            } else {
                p.data[sy as usize * p.w + sx as usize]
            };
        }
    }
    Plane { data, h, w }
}

fn rotate(p: &Plane, degrees: f64, mask: bool) -> Plane {
    let rad = degrees.to_radians();
    let (sin, cos) = rad.sin_cos();
    let cy = (p.h as f64 - 1.0) / 2.0;
    let cx = (p.w as f64 - 1.0) / 2.0;
    let mut data = vec![0.0f32; p.h * p.w];
    for y in 0..p.h {
        for x in 0..p.w {
            // inverse map: rotate the output grid backwards into the source
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let src_y = cy + dy * cos - dx * sin;
            let src_x = cx + dy * sin + dx * cos;
            data[y * p.w + x] = if mask {
                sample_nearest(p, src_y, src_x, 0.0)
            } else {
                sample_bilinear(p, src_y, src_x)
            };
        }
    }
    Plane {
        data,
        h: p.h,
        w: p.w,
    }
}

fn disk_offsets(radius: u32) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

fn morph(p: &Plane, radius: u32, dilate: bool) -> Plane {
    let offsets = disk_offsets(radius);
    let mut data = vec![0.0f32; p.h * p.w];
    for y in 0..p.h as isize {
        for x in 0..p.w as isize {
            let mut hit = !dilate;
            for &(dy, dx) in &offsets {
                let (sy, sx) = (y + dy, x + dx);
                let v = if sy < 0 || sx < 0 || sy >= p.h as isize || sx >= p.w as isize {
                    0.0
                } else {
                    p.data[sy as usize * p.w + sx as usize]
                };
                if dilate && v > 0.5 {
                    hit = true;
                    break;
                }
                if !dilate && v <= 0.5 {
                    hit = false;
                    break;
                }
            }
            data[y as usize * p.w + x as usize] = if hit { 1.0 } else { 0.0 };
        }
    }
    Plane {
        data,
        h: p.h,
        w: p.w,
    }
}

/// Resizes a sample to `(h, w)`: bilinear for the image, nearest for the
/// mask (which therefore stays binary). A no-op when the size already fits.
pub fn resized(sample: &Sample, h: usize, w: usize) -> Sample {
    if sample.size() == (h, w) {
        return Sample {
            image: sample.image.clone(),
            mask: sample.mask.clone(),
            id: sample.id.clone(),
        };
    }
    let image: Vec<Plane> = planes_of(&sample.image)
        .iter()
        .map(|p| resize(p, h, w, false))
        .collect();
    let mask: Vec<Plane> = planes_of(&sample.mask)
        .iter()
        .map(|p| resize(p, h, w, true))
        .collect();
    Sample {
        image: tensor_of(&image),
        mask: tensor_of(&mask),
        id: sample.id.clone(),
    }
}

/// Applies the configured augmentations in a fixed draw order: flips, scale
/// jitter (with center crop/pad back to the original extent), rotation, then
/// mask dilation or erosion. Image and mask extents are preserved.
pub fn augment<R: Rng>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Result<Sample> {
    let (h, w) = sample.size();
    let mut image = planes_of(&sample.image);
    let mut mask = planes_of(&sample.mask);

    let do_h = cfg.flip_h > 0.0 && rng.gen_bool(cfg.flip_h);
    let do_v = cfg.flip_v > 0.0 && rng.gen_bool(cfg.flip_v);
    if do_h {
        image.iter_mut().for_each(flip_h);
        mask.iter_mut().for_each(flip_h);
    }
    if do_v {
        image.iter_mut().for_each(flip_v);
        mask.iter_mut().for_each(flip_v);
    }

    let scale = if cfg.scale.0 == cfg.scale.1 {
        cfg.scale.0
    } else {
        rng.gen_range(cfg.scale.0..=cfg.scale.1)
    };
    if scale != 1.0 {
        let nh = ((h as f64 * scale).round() as usize).max(1);
        let nw = ((w as f64 * scale).round() as usize).max(1);
        image = image
            .iter()
            .map(|p| center_fit(&resize(p, nh, nw, false), h, w, false))
            .collect();
        mask = mask
            .iter()
            .map(|p| center_fit(&resize(p, nh, nw, true), h, w, true))
            .collect();
    }

    let angle = if cfg.rotation_deg.0 == cfg.rotation_deg.1 {
        cfg.rotation_deg.0
    } else {
        rng.gen_range(cfg.rotation_deg.0..=cfg.rotation_deg.1)
    };
    if angle != 0.0 {
        image = image.iter().map(|p| rotate(p, angle, false)).collect();
        mask = mask.iter().map(|p| rotate(p, angle, true)).collect();
    }

    let radius = if cfg.morph_radius.0 == cfg.morph_radius.1 {
        cfg.morph_radius.0
    } else {
        rng.gen_range(cfg.morph_radius.0..=cfg.morph_radius.1)
    };
    let dilate = rng.gen_bool(0.5);
    if radius > 0 {
        mask = mask.iter().map(|p| morph(p, radius, dilate)).collect();
    }

    // nearest resampling keeps masks binary, but enforce it regardless
    for p in &mut mask {
        for v in &mut p.data {
            *v = if *v >= 0.5 { 1.0 } else { 0.0 };
        }
    }

    Ok(Sample {
        image: tensor_of(&image),
        mask: tensor_of(&mask),
        id: sample.id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_blobs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn disk_sample(side: usize, r: f64) -> Sample {
        let c = (side as f64 - 1.0) / 2.0;
        let mask: Vec<f32> = (0..side * side)
            .map(|i| {
                let (y, x) = ((i / side) as f64, (i % side) as f64);
                if (y - c).powi(2) + (x - c).powi(2) <= r * r {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Sample {
            image: Tensor::full(&[3, side, side], 0.5),
            mask: Tensor::from_vec(mask, &[1, side, side]).unwrap(),
            id: "disk".into(),
        }
    }

    #[test]
    fn disabled_config_is_identity() {
        let s = synth_blobs(1, 48, 1).unwrap().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&s, &AugmentConfig::identity(), &mut rng).unwrap();
        assert_eq!(out.image.to_vec(), s.image.to_vec());
        assert_eq!(out.mask.to_vec(), s.mask.to_vec());
    }

    #[test]
    fn horizontal_flip_twice_is_identity() {
        let s = synth_blobs(1, 48, 2).unwrap().remove(0);
        let cfg = AugmentConfig {
            flip_h: 1.0,
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let once = augment(&s, &cfg, &mut rng).unwrap();
        let twice = augment(&once, &cfg, &mut rng).unwrap();
        assert_eq!(twice.image.to_vec(), s.image.to_vec());
        assert_eq!(twice.mask.to_vec(), s.mask.to_vec());
    }

    #[test]
    fn radius_one_dilation_makes_plus_shape() {
        let mut mask = vec![0.0f32; 25];
        mask[12] = 1.0; // center of 5×5
        let p = Plane {
            data: mask,
            h: 5,
            w: 5,
        };
        let out = morph(&p, 1, true);
        let on: Vec<usize> = (0..25).filter(|&i| out.data[i] == 1.0).collect();
        assert_eq!(on, vec![7, 11, 12, 13, 17]);
    }

    #[test]
    fn dilation_contains_and_erosion_is_contained() {
        let s = synth_blobs(1, 64, 3).unwrap().remove(0);
        let planes = planes_of(&s.mask);
        for r in 1..=3u32 {
            let d = morph(&planes[0], r, true);
            let e = morph(&planes[0], r, false);
            for i in 0..planes[0].data.len() {
                assert!(d.data[i] >= planes[0].data[i]);
                assert!(e.data[i] <= planes[0].data[i]);
            }
        }
    }

    #[test]
    fn rotating_a_centered_disk_roughly_preserves_area() {
        let s = disk_sample(65, 20.0);
        let base: f32 = s.mask.data().iter().sum();
        for angle in [13.0, 45.0, 90.0, 217.0, 359.0] {
            let cfg = AugmentConfig {
                rotation_deg: (angle, angle),
                ..AugmentConfig::identity()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = augment(&s, &cfg, &mut rng).unwrap();
            let area: f32 = out.mask.data().iter().sum();
            assert!(
                (area - base).abs() / base < 0.05,
                "angle {angle}: {area} vs {base}"
            );
        }
    }

    #[test]
    fn augmented_masks_stay_binary_and_images_in_range() {
        let s = synth_blobs(1, 64, 9).unwrap().remove(0);
        let cfg = AugmentConfig::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..8 {
            let out = augment(&s, &cfg, &mut rng).unwrap();
            assert!(out.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(out.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(out.size(), s.size());
        }
    }
}
