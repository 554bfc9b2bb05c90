use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{checkpoint::sha256_hex, key_value_paths, ModelConfig};
use crate::error::{Error, Result};

pub const MASKS_JSON: &str = "masks.json";
pub const MASKS_BIN: &str = "masks.bin";
const MASK_FORMAT_VERSION: u32 = 1;

/// Bit matrix over the entries of one key or value weight matrix.
///
/// Bit `(r, c)` lives at flat index `r * cols + c`, stored LSB-first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NeuronMask {
    pub layer_path: String,
    rows: usize,
    cols: usize,
    words: Vec<u64>,
}

impl NeuronMask {
    pub fn zeros(layer_path: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            layer_path: layer_path.into(),
            rows,
            cols,
            words: vec![0; (rows * cols).div_ceil(64)],
        }
    }

    pub fn ones(layer_path: impl Into<String>, rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(layer_path, rows, cols);
        for i in 0..rows * cols {
            m.set_flat(i, true);
        }
        m
    }

    pub fn from_fn(layer_path: impl Into<String>, rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(layer_path, rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if f(r, c) {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.popcount() == 0
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.get_flat(r * self.cols + c)
    }

    pub fn get_flat(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        assert!(r < self.rows && c < self.cols, "mask index out of range");
        self.set_flat(r * self.cols + c, on);
    }

    pub fn set_flat(&mut self, i: usize, on: bool) {
        if on {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Flat indices of set bits, ascending.
    pub fn ones_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.get_flat(i)).collect()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.layer_path != other.layer_path {
            return Err(Error::Coverage(format!(
                "cannot combine masks for `{}` and `{}`",
                self.layer_path, other.layer_path
            )));
        }
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Dimension {
                op: "mask algebra",
                left: vec![self.rows, self.cols],
                right: vec![other.rows, other.cols],
            });
        }
        Ok(())
    }

    fn zip(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            layer_path: self.layer_path.clone(),
            rows: self.rows,
            cols: self.cols,
            words: self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a | b)
    }

    /// `self AND NOT other`.
    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a & !b)
    }

    pub fn not(&self) -> Self {
        let mut out = self.clone();
        out.words.iter_mut().for_each(|w| *w = !*w);
        out.clear_tail();
        out
    }

    fn clear_tail(&mut self) {
        let rem = self.len() % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> Result<bool> {
        Ok(self.and_not(other)?.is_empty())
    }

    pub fn is_disjoint_from(&self, other: &Self) -> Result<bool> {
        Ok(self.and(other)?.is_empty())
    }

    /// Packed bytes: `ceil(rows * cols / 8)` bytes, LSB-first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len().div_ceil(8);
        self.words.iter().flat_map(|w| w.to_le_bytes()).take(n).collect()
    }

    pub fn from_bytes(layer_path: impl Into<String>, rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        let mut m = Self::zeros(layer_path, rows, cols);
        if bytes.len() != m.len().div_ceil(8) {
            return Err(Error::Usage(format!(
                "mask `{}` needs {} bytes, got {}",
                m.layer_path,
                m.len().div_ceil(8),
                bytes.len()
            )));
        }
        for (k, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            m.words[k] = u64::from_le_bytes(buf);
        }
        let before = m.words.clone();
        m.clear_tail();
        if m.words != before {
            return Err(Error::Usage(format!("mask `{}` has bits past its last entry", m.layer_path)));
        }
        Ok(m)
    }
}

/// One mask per key/value matrix, in the model's stable layer order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskSet {
    pub masks: Vec<NeuronMask>,
}

impl MaskSet {
    fn filled(config: &ModelConfig, fill: bool) -> Self {
        let masks = key_value_paths(config)
            .into_iter()
            .enumerate()
            .map(|(i, path)| {
                let cols = if i % 2 == 0 { config.key_dim } else { config.value_dim };
                if fill {
                    NeuronMask::ones(path, config.text_dim, cols)
                } else {
                    NeuronMask::zeros(path, config.text_dim, cols)
                }
            })
            .collect();
        Self { masks }
    }

    pub fn empty(config: &ModelConfig) -> Self {
        Self::filled(config, false)
    }

    pub fn full(config: &ModelConfig) -> Self {
        Self::filled(config, true)
    }

    pub fn paths(&self) -> Vec<&str> {
        self.masks.iter().map(|m| m.layer_path.as_str()).collect()
    }

    pub fn get(&self, layer_path: &str) -> Option<&NeuronMask> {
        self.masks.iter().find(|m| m.layer_path == layer_path)
    }

    pub fn popcount(&self) -> usize {
        self.masks.iter().map(NeuronMask::popcount).sum()
    }

    pub fn total_bits(&self) -> usize {
        self.masks.iter().map(NeuronMask::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.popcount() == 0
    }

    /// Errors unless both sets cover the same layers in the same order.
    pub fn check_coverage(&self, other: &Self) -> Result<()> {
        let mine = self.paths();
        let theirs = other.paths();
        if mine == theirs {
            return Ok(());
        }
        let missing: Vec<&str> = mine
            .iter()
            .filter(|p| !theirs.contains(p))
            .chain(theirs.iter().filter(|p| !mine.contains(p)))
            .copied()
            .collect();
        Err(Error::Coverage(if missing.is_empty() {
            "mask sets list the same layers in different orders".to_string()
        } else {
            format!("mask sets differ in layers: {}", missing.join(", "))
        }))
    }

    /// Errors unless the set covers exactly the key/value layers of `config`.
    pub fn check_model(&self, config: &ModelConfig) -> Result<()> {
        let reference = Self::empty(config);
        self.check_coverage(&reference)?;
        for (m, r) in self.masks.iter().zip(&reference.masks) {
            m.check_compatible(r)?;
        }
        Ok(())
    }

    fn zip(&self, other: &Self, f: impl Fn(&NeuronMask, &NeuronMask) -> Result<NeuronMask>) -> Result<Self> {
        self.check_coverage(other)?;
        let masks = self.masks.iter().zip(&other.masks).map(|(a, b)| f(a, b)).collect::<Result<_>>()?;
        Ok(Self { masks })
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip(other, NeuronMask::and)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip(other, NeuronMask::or)
    }

    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.zip(other, NeuronMask::and_not)
    }

    pub fn not(&self) -> Self {
        Self {
            masks: self.masks.iter().map(NeuronMask::not).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> Result<bool> {
        Ok(self.and_not(other)?.is_empty())
    }

    pub fn is_disjoint_from(&self, other: &Self) -> Result<bool> {
        Ok(self.and(other)?.is_empty())
    }

    /// Per-layer packed bytes concatenated in layer order.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.masks.iter().flat_map(NeuronMask::to_bytes).collect()
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn manifest(&self) -> MaskManifest {
        let mut offset = 0;
        let layers = self
            .masks
            .iter()
            .map(|m| {
                let bytes = m.to_bytes();
                let entry = MaskEntry {
                    layer_path: m.layer_path.clone(),
                    rows: m.rows,
                    cols: m.cols,
                    popcount: m.popcount(),
                    offset,
                    nbytes: bytes.len(),
                    sha256: sha256_hex(&bytes),
                };
                offset += bytes.len();
                entry
            })
            .collect();
        MaskManifest {
            version: MASK_FORMAT_VERSION,
            bit_order: "row-major, lsb-first".into(),
            layers,
            content_hash: self.content_hash(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub layer_path: String,
    pub rows: usize,
    pub cols: usize,
    pub popcount: usize,
    pub offset: usize,
    pub nbytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskManifest {
    pub version: u32,
    pub bit_order: String,
    pub layers: Vec<MaskEntry>,
    pub content_hash: String,
}

/// Writes `masks.json` and `masks.bin` into `dir`; returns the content hash.
pub fn save_mask_set(dir: &Path, set: &MaskSet) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = set.manifest();
    let bin = dir.join(MASKS_BIN);
    fs::write(&bin, set.to_bytes()).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(MASKS_JSON);
    fs::write(&json, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&json, e))?;
    Ok(manifest.content_hash)
}

/// Reads and verifies a mask set; any mismatch is an integrity error.
pub fn load_mask_set(dir: &Path) -> Result<MaskSet> {
    let json = dir.join(MASKS_JSON);
    let bin = dir.join(MASKS_BIN);
    let bytes = fs::read(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: MaskManifest = serde_json::from_slice(&bytes).map_err(|e| Error::integrity(&json, e.to_string()))?;
    if manifest.version != MASK_FORMAT_VERSION {
        return Err(Error::integrity(&json, format!("unsupported mask format v{}", manifest.version)));
    }
    let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if sha256_hex(&blob) != manifest.content_hash {
        return Err(Error::integrity(&bin, "content hash mismatch"));
    }
    let mut expected = 0;
    let mut masks = Vec::with_capacity(manifest.layers.len());
    for e in &manifest.layers {
        if e.offset != expected || e.offset + e.nbytes > blob.len() {
            return Err(Error::integrity(&bin, format!("bad table entry for {}", e.layer_path)));
        }
        let chunk = &blob[e.offset..e.offset + e.nbytes];
        let mask = NeuronMask::from_bytes(e.layer_path.clone(), e.rows, e.cols, chunk)
            .map_err(|err| Error::integrity(&bin, err.to_string()))?;
        if mask.popcount() != e.popcount || sha256_hex(chunk) != e.sha256 {
            return Err(Error::integrity(&bin, format!("layer {} does not match its record", e.layer_path)));
        }
        masks.push(mask);
        expected += e.nbytes;
    }
    if expected != blob.len() {
        return Err(Error::integrity(&bin, "trailing bytes after last layer"));
    }
    Ok(MaskSet { masks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(bits: &[[u8; 2]; 2]) -> NeuronMask {
        NeuronMask::from_fn("l", 2, 2, |r, c| bits[r][c] == 1)
    }

    #[test]
    fn boolean_examples() {
        let base = m(&[[1, 0], [0, 1]]);
        let general = m(&[[1, 0], [0, 0]]);
        assert_eq!(base.and_not(&general).unwrap(), m(&[[0, 0], [0, 1]]));
        let m1 = m(&[[1, 1], [0, 1]]);
        let m2 = m(&[[1, 0], [0, 1]]);
        assert_eq!(m1.and(&m2).unwrap(), m(&[[1, 0], [0, 1]]));
        assert_eq!(m1.not(), m(&[[0, 0], [1, 0]]));
    }

    #[test]
    fn byte_layout_is_row_major_lsb_first() {
        let mut mask = NeuronMask::zeros("l", 3, 5);
        mask.set(0, 1, true);
        mask.set(1, 4, true);
        mask.set(2, 4, true);
        // flat indices 1, 9, 14
        assert_eq!(mask.to_bytes(), vec![0b0000_0010, 0b0100_0010]);
        let back = NeuronMask::from_bytes("l", 3, 5, &mask.to_bytes()).unwrap();
        assert_eq!(back, mask);
        assert!(NeuronMask::from_bytes("l", 3, 5, &[0, 0x80]).is_err());
    }

    #[test]
    fn not_keeps_padding_clear() {
        let mask = NeuronMask::zeros("l", 3, 5).not();
        assert_eq!(mask.popcount(), 15);
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let a = NeuronMask::zeros("a", 2, 2);
        let b = NeuronMask::zeros("b", 2, 2);
        assert!(matches!(a.and(&b), Err(Error::Coverage(_))));
        let c = NeuronMask::zeros("a", 2, 3);
        assert!(matches!(a.or(&c), Err(Error::Dimension { .. })));
    }

    #[test]
    fn files_round_trip_and_detect_truncation() {
        let cfg = ModelConfig::default();
        let mut set = MaskSet::empty(&cfg);
        set.masks[3].set(4, 5, true);
        set.masks[7].set(31, 31, true);
        let dir = tempfile::tempdir().unwrap();
        let h = save_mask_set(dir.path(), &set).unwrap();
        assert_eq!(h, set.content_hash());
        assert_eq!(load_mask_set(dir.path()).unwrap(), set);
        let bin = dir.path().join(MASKS_BIN);
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_mask_set(dir.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn coverage_error_lists_missing_paths() {
        let cfg = ModelConfig::default();
        let a = MaskSet::empty(&cfg);
        let mut b = a.clone();
        b.masks.pop();
        let err = a.and(&b).unwrap_err().to_string();
        assert!(err.contains("block3.cross_attn.value"), "{err}");
    }
}
