//! Corpus export.
//!
//! Each image is written as `NNNNNN.img`: a 32-byte header followed by the
//! pixels as little-endian `f64` in `(y, x, channel)` order.
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 8    | magic `CNSIMG01`               |
//! | 8      | 4    | height (u32 LE)                |
//! | 12     | 4    | width (u32 LE)                 |
//! | 16     | 4    | channels (u32 LE)              |
//! | 20     | 4    | spec id (u32 LE)               |
//! | 24     | 8    | jitter seed (u64 LE)           |
//!
//! `index.json` maps each file to its spec and caption tokens.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::caption::Caption;
use super::concept::ConceptSpec;
use super::render::{ImageSample, CHANNELS, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IMAGE_MAGIC: &[u8; 8] = b"CNSIMG01";
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub spec_id: usize,
    pub spec: ConceptSpec,
    pub seed: u64,
    pub caption: Caption,
    pub caption_text: String,
}

pub fn encode_image(sample: &ImageSample) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + sample.pixels.len() * 8);
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&(IMAGE_SIZE as u32).to_le_bytes());
    out.extend_from_slice(&(IMAGE_SIZE as u32).to_le_bytes());
    out.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
    out.extend_from_slice(&(sample.spec.id() as u32).to_le_bytes());
    out.extend_from_slice(&sample.seed.to_le_bytes());
    out.extend_from_slice(&sample.pixels.to_le_bytes());
    out
}

/// Decodes pixels and the `(spec id, seed)` header fields.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<(Tensor, usize, u64)> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != IMAGE_MAGIC {
        return Err(Error::integrity(path, "missing image header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (u32_at(8), u32_at(12), u32_at(16));
    let spec_id = u32_at(20);
    let seed = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if body.len() != h * w * c * 8 {
        return Err(Error::integrity(path, format!("expected {} pixel bytes, found {}", h * w * c * 8, body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((Tensor::new(&[h, w, c], data)?, spec_id, seed))
}

pub fn export_corpus(samples: &[ImageSample], dir: &Path) -> Result<Vec<IndexEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let file = format!("{i:06}.img");
        let path = dir.join(&file);
        fs::write(&path, encode_image(sample)).map_err(|e| Error::io(&path, e))?;
        index.push(IndexEntry {
            file,
            spec_id: sample.spec.id(),
            spec: sample.spec,
            seed: sample.seed,
            caption: sample.caption.clone(),
            caption_text: sample.caption.text(),
        });
    }
    let index_path = dir.join("index.json");
    fs::write(&index_path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&index_path, e))?;
    Ok(index)
}

pub fn load_corpus(dir: &Path) -> Result<Vec<ImageSample>> {
    let index_path = dir.join("index.json");
    let bytes = fs::read(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: Vec<IndexEntry> = serde_json::from_slice(&bytes)?;
    index
        .into_iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let (pixels, spec_id, seed) = decode_image(&raw, &path)?;
            if spec_id != entry.spec_id || seed != entry.seed {
                return Err(Error::integrity(&path, "header disagrees with index.json"));
            }
            Ok(ImageSample {
                pixels,
                spec: entry.spec,
                caption: entry.caption,
                seed,
            })
        })
        .collect()
}

/// Binary PPM (P6) with 8 bits per channel.
pub fn ppm_bytes(image: &Tensor) -> Vec<u8> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| to_byte(v)));
    out
}

fn to_byte(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

/// Tiles images into a grid (row-major) with a 1-pixel gray gutter and
/// upscales by `zoom`.
pub fn ppm_grid(images: &[Tensor], columns: usize, zoom: usize) -> Vec<u8> {
    let columns = columns.max(1);
    let rows = images.len().div_ceil(columns).max(1);
    let cell = IMAGE_SIZE * zoom + 1;
    let (w, h) = (columns * cell + 1, rows * cell + 1);
    let mut canvas = vec![128u8; w * h * 3];
    for (k, img) in images.iter().enumerate() {
        let (ox, oy) = ((k % columns) * cell + 1, (k / columns) * cell + 1);
        for y in 0..IMAGE_SIZE * zoom {
            for x in 0..IMAGE_SIZE * zoom {
                let src = ((y / zoom) * IMAGE_SIZE + x / zoom) * CHANNELS;
                let dst = ((oy + y) * w + ox + x) * 3;
                for c in 0..3 {
                    canvas[dst + c] = to_byte(img.data()[src + c]);
                }
            }
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(canvas);
    out
}

pub fn write_ppm(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::concept::held_in_specs;
    use crate::data::render::render_concept;

    #[test]
    fn corpus_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<_> = held_in_specs().iter().take(3).map(|s| render_concept(s, 7)).collect();
        export_corpus(&samples, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back, samples);

        let victim = dir.path().join("000001.img");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn ppm_header_and_size() {
        let img = render_concept(&held_in_specs()[0], 0).pixels;
        let bytes = ppm_bytes(&img);
        assert!(bytes.starts_with(b"P6\n16 16\n255\n"));
        assert_eq!(bytes.len(), b"P6\n16 16\n255\n".len() + 16 * 16 * 3);
    }
}
