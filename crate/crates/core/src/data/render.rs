//! Rasterization of concept specs into 16×16 RGB images in `[-1, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::caption::{caption_for, Caption};
use super::concept::{ConceptSpec, Shape};
use crate::numerics::{derive_seed, RngState, Tensor};

pub const IMAGE_SIZE: usize = 16;
pub const CHANNELS: usize = 3;
pub const PIXELS: usize = IMAGE_SIZE * IMAGE_SIZE;
/// Position jitter applied by [`render_concept`], in pixels per axis.
pub const MAX_JITTER: i32 = 2;

/// One rendered training or evaluation image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSample {
    #[serde(skip, default = "blank_image")]
    pub pixels: Tensor,
    pub spec: ConceptSpec,
    pub caption: Caption,
    pub seed: u64,
}

fn blank_image() -> Tensor {
    Tensor::zeros(&[IMAGE_SIZE, IMAGE_SIZE, CHANNELS])
}

/// Whether the offset `(u, v)` from the shape center lies inside `shape` of radius `r`.
pub fn shape_contains(shape: Shape, r: f64, u: f64, v: f64) -> bool {
    let d2 = u * u + v * v;
    match shape {
        Shape::Circle => d2 <= r * r,
        Shape::Square => u.abs() <= 0.85 * r && v.abs() <= 0.85 * r,
        Shape::Triangle => v >= -r && v <= 0.8 * r && u.abs() <= (v + r) / 1.8,
        Shape::Cross => {
            let w = r / 3.0;
            (u.abs() <= w && v.abs() <= r) || (v.abs() <= w && u.abs() <= r)
        }
        Shape::Ring => d2 <= r * r && d2 >= 0.25 * r * r,
    }
}

/// Foreground mask (row-major, `y * 16 + x`) of a shape at a scale and offset.
pub fn shape_mask(shape: Shape, scale: f64, dx: i32, dy: i32) -> [bool; PIXELS] {
    let r = scale * IMAGE_SIZE as f64 / 2.0;
    let mut mask = [false; PIXELS];
    let center = IMAGE_SIZE as f64 / 2.0;
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let u = x as f64 + 0.5 - (center + dx as f64);
            let v = y as f64 + 0.5 - (center + dy as f64);
            mask[y * IMAGE_SIZE + x] = shape_contains(shape, r, u, v);
        }
    }
    mask
}

/// Deterministic rendering of `spec` translated by `(dx, dy)`.
pub fn rasterize(spec: &ConceptSpec, dx: i32, dy: i32) -> Tensor {
    let mask = shape_mask(spec.shape, spec.scale, dx, dy);
    let bg = spec.background_color.pixel();
    let fill = spec.fill_color.pixel();
    let shade = spec.fill_color.shade_pixel();
    let mut data = Vec::with_capacity(PIXELS * CHANNELS);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let px = if !mask[y * IMAGE_SIZE + x] {
                bg
            } else if spec.texture.shaded(x as i32 - dx, y as i32 - dy) {
                shade
            } else {
                fill
            };
            data.extend_from_slice(&px);
        }
    }
    Tensor::new(&[IMAGE_SIZE, IMAGE_SIZE, CHANNELS], data).expect("image shape")
}

/// Translation drawn for `(spec, jitter_seed)`.
pub fn jitter_for(spec: &ConceptSpec, jitter_seed: u64) -> (i32, i32) {
    let mut rng = RngState::new(derive_seed(jitter_seed, &[spec.id() as u64, 0x717])).rng();
    (
        rng.gen_range(-MAX_JITTER..=MAX_JITTER),
        rng.gen_range(-MAX_JITTER..=MAX_JITTER),
    )
}

pub fn render_concept(spec: &ConceptSpec, jitter_seed: u64) -> ImageSample {
    let (dx, dy) = jitter_for(spec, jitter_seed);
    ImageSample {
        pixels: rasterize(spec, dx, dy),
        spec: *spec,
        caption: caption_for(spec, jitter_seed, None).expect("plain caption is always valid"),
        seed: jitter_seed,
    }
}

/// Pixel `(x, y)` of an image tensor as an RGB triple.
pub fn pixel(image: &Tensor, x: usize, y: usize) -> [f64; 3] {
    let base = (y * IMAGE_SIZE + x) * CHANNELS;
    let d = image.data();
    [d[base], d[base + 1], d[base + 2]]
}

/// Mirror left to right.
pub fn mirror_horizontal(image: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(image.len());
    for y in 0..IMAGE_SIZE {
        for x in (0..IMAGE_SIZE).rev() {
            data.extend_from_slice(&pixel(image, x, y));
        }
    }
    Tensor::new(image.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::concept::{Color, Texture};

    fn red_circle() -> ConceptSpec {
        ConceptSpec::new(Shape::Circle, Color::Red, Texture::Solid, Color::Blue).unwrap()
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_concept(&red_circle(), 0);
        let b = render_concept(&red_circle(), 0);
        assert_eq!(a.pixels.to_le_bytes(), b.pixels.to_le_bytes());
    }

    #[test]
    fn values_are_clamped() {
        for spec in crate::data::concept::all_specs().iter().step_by(37) {
            let img = render_concept(spec, 5);
            assert!(img.pixels.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn large_circle_covers_fill_color() {
        let spec = ConceptSpec::with_scale(Shape::Circle, Color::Red, Texture::Solid, Color::Blue, 0.8).unwrap();
        let fill = Color::Red.pixel();
        for seed in 0..10 {
            let img = render_concept(&spec, seed);
            let hits = (0..PIXELS)
                .filter(|&i| {
                    let p = pixel(&img.pixels, i % IMAGE_SIZE, i / IMAGE_SIZE);
                    (0..3).all(|c| (p[c] - fill[c]).abs() <= 0.1)
                })
                .count();
            assert!(hits as f64 >= 0.3 * PIXELS as f64, "seed {seed}: {hits}");
        }
    }

    #[test]
    fn jitter_stays_in_range() {
        for seed in 0..50 {
            let (dx, dy) = jitter_for(&red_circle(), seed);
            assert!(dx.abs() <= MAX_JITTER && dy.abs() <= MAX_JITTER);
        }
    }
}
