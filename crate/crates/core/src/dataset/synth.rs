//! Procedural VOC-layout dataset: smooth dim backgrounds with a few bright,
//! colour-coded objects per image. Used for desk-scale runs and tests.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{class_index, write_index_png, CLASS_DIR, IMAGE_DIR, OBJECT_DIR};
use crate::error::Result;
use crate::image::ImageSample;

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse,
    Rect,
    Triangle,
    Diamond,
}

struct Kind {
    label: &'static str,
    shape: Shape,
    rgb: [f64; 3],
}

const KINDS: [Kind; 4] = [
    Kind { label: "person", shape: Shape::Ellipse, rgb: [0.88, 0.22, 0.20] },
    Kind { label: "car", shape: Shape::Rect, rgb: [0.20, 0.35, 0.90] },
    Kind { label: "dog", shape: Shape::Triangle, rgb: [0.22, 0.82, 0.25] },
    Kind { label: "cat", shape: Shape::Diamond, rgb: [0.90, 0.85, 0.20] },
];

/// Labels that every generated image contains at least one of.
pub const DEFAULT_INTEREST: [&str; 2] = ["person", "car"];

pub struct SynthSample {
    pub image: ImageSample,
    pub objects: Array2<u8>,
    pub classes: Array2<u8>,
}

/// Generates one sample deterministically from `seed`.
pub fn generate_sample(height: usize, width: usize, seed: u64, stem: &str) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Array3::zeros((height, width, 3));

    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.35));
    let grad: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.12..0.12));
    let freq = rng.random_range(0.2..0.6);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    for y in 0..height {
        for x in 0..width {
            let u = x as f64 / width as f64;
            let v = y as f64 / height as f64;
            let tex = 0.04 * ((x as f64 * freq + phase).sin() * (y as f64 * freq * 0.7).cos());
            for c in 0..3 {
                pixels[[y, x, c]] = (base[c] + grad[c] * (u + v) + tex).clamp(0.0, 0.5);
            }
        }
    }

    let mut objects = Array2::<u8>::zeros((height, width));
    let mut classes = Array2::<u8>::zeros((height, width));
    let n_obj = rng.random_range(1..=3usize);
    let side = height.min(width) as f64;
    let mut placed = 0u8;
    for i in 0..n_obj {
        // The topmost object is always of an interest class.
        let kind = if i + 1 == n_obj { &KINDS[rng.random_range(0..2)] } else { &KINDS[rng.random_range(0..4)] };
        let r = rng.random_range(0.14..0.28) * side;
        let cy = rng.random_range(r * 0.8..(height as f64 - r * 0.8));
        let cx = rng.random_range(r * 0.8..(width as f64 - r * 0.8));
        let jitter: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.06..0.06));
        let id = placed + 1;
        let cls = class_index(kind.label).expect("known class");
        for y in 0..height {
            for x in 0..width {
                let dy = (y as f64 + 0.5 - cy) / r;
                let dx = (x as f64 + 0.5 - cx) / r;
                let inside = match kind.shape {
                    Shape::Ellipse => dx * dx * 1.6 + dy * dy * 0.7 <= 1.0,
                    Shape::Rect => dx.abs() <= 1.0 && dy.abs() <= 0.6,
                    Shape::Triangle => dy <= 0.8 && dy >= -0.9 && dx.abs() <= (dy + 0.9) * 0.6,
                    Shape::Diamond => dx.abs() + dy.abs() <= 1.0,
                };
                if inside {
                    let shade = 0.06 * (dx - dy);
                    for c in 0..3 {
                        pixels[[y, x, c]] = (kind.rgb[c] + jitter[c] + shade).clamp(0.0, 1.0);
                    }
                    objects[[y, x]] = id;
                    classes[[y, x]] = cls;
                }
            }
        }
        placed += 1;
    }

    // Drop instances that were mostly occluded, then renumber 1..n.
    let min_area = (height * width / 64).max(4);
    let mut remap = [0u8; 256];
    let mut next = 0u8;
    for id in 1..=placed {
        let area = objects.iter().filter(|&&v| v == id).count();
        if area >= min_area {
            next += 1;
            remap[id as usize] = next;
        }
    }
    for (o, c) in objects.iter_mut().zip(classes.iter_mut()) {
        if *o != 0 {
            let m = remap[*o as usize];
            if m == 0 {
                *c = 0;
            }
            *o = m;
        }
    }
    // Pixels of dropped instances keep their colour but become background.

    let image = ImageSample::new(pixels, stem).expect("generator emits valid images");
    SynthSample { image, objects, classes }
}

/// Writes `count` samples under `root` in the VOC layout. Returns the stems.
pub fn write_dataset(
    root: &Path,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<String>> {
    for dir in [IMAGE_DIR, OBJECT_DIR, CLASS_DIR] {
        std::fs::create_dir_all(root.join(dir))?;
    }
    let mut stems = Vec::with_capacity(count);
    for i in 0..count {
        let stem = format!("synth_{i:05}");
        let s = generate_sample(height, width, seed.wrapping_mul(1_000_003).wrapping_add(i as u64), &stem);
        s.image.save_png(&root.join(IMAGE_DIR).join(format!("{stem}.png")))?;
        write_index_png(&root.join(OBJECT_DIR).join(format!("{stem}.png")), &s.objects)?;
        write_index_png(&root.join(CLASS_DIR).join(format!("{stem}.png")), &s.classes)?;
        stems.push(stem);
    }
    let sets = root.join("ImageSets").join("Segmentation");
    std::fs::create_dir_all(&sets)?;
    std::fs::write(sets.join("all.txt"), stems.join("\n") + "\n")?;
    Ok(stems)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_has_an_interest_object() {
        for seed in 0..20 {
            let a = generate_sample(32, 32, seed, "s");
            let b = generate_sample(32, 32, seed, "s");
            assert_eq!(a.image, b.image);
            assert_eq!(a.objects, b.objects);
            let interest: Vec<u8> =
                DEFAULT_INTEREST.iter().map(|l| class_index(l).unwrap()).collect();
            assert!(a.classes.iter().any(|c| interest.contains(c)), "seed {seed}");
        }
    }
}
