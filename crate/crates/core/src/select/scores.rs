use serde::{Deserialize, Serialize};

use super::mask::NeuronMask;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Importance of each entry of one key/value matrix for one caption.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    pub layer_path: String,
    pub scores: Tensor,
}

fn matrix_dims(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Dimension {
            op: "importance_scores (expected a matrix)",
            left: other.to_vec(),
            right: vec![],
        }),
    }
}

/// ℓ₂ norm of each column of `c` (`s × d`), summing over tokens in order.
pub fn column_norms(c: &Tensor) -> Result<Vec<f64>> {
    let (s, d) = matrix_dims(c)?;
    let data = c.data();
    Ok((0..d)
        .map(|i| {
            let mut acc = 0.0;
            for t in 0..s {
                let v = data[t * d + i];
                acc += v * v;
            }
            acc.sqrt()
        })
        .collect())
}

/// `S[i, j] = |W[i, j]| · ‖c[:, i]‖₂` for `W: d × d_k` and `c: s × d`.
pub fn importance_scores(layer_path: &str, w: &Tensor, c: &Tensor) -> Result<ImportanceScores> {
    let (d, dk) = matrix_dims(w)?;
    let (_, cd) = matrix_dims(c)?;
    if cd != d {
        return Err(Error::Dimension {
            op: "importance_scores (weight rows d vs text width)",
            left: vec![d, dk],
            right: c.shape().to_vec(),
        });
    }
    let norms = column_norms(c)?;
    let wd = w.data();
    let mut out = vec![0.0; d * dk];
    for i in 0..d {
        for j in 0..dk {
            out[i * dk + j] = wd[i * dk + j].abs() * norms[i];
        }
    }
    Ok(ImportanceScores {
        layer_path: layer_path.to_string(),
        scores: Tensor::new(&[d, dk], out)?,
    })
}

/// Axis along which the top-k selection runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionAxis {
    /// Top-k input entries for each output unit (each column).
    #[default]
    Column,
    /// Top-k entries within each row.
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub fraction: f64,
    pub axis: SelectionAxis,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            fraction: 0.30,
            axis: SelectionAxis::Column,
        }
    }
}

/// `k = max(1, floor(fraction · n))`.
pub fn top_k_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).floor() as usize).clamp(1, n.max(1))
}

/// Indices of the `k` largest values, ties toward the smaller index.
fn top_k(values: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(i, _)| i).collect()
}

pub fn select_mask(scores: &ImportanceScores, config: &SelectionConfig) -> Result<NeuronMask> {
    if !(config.fraction > 0.0 && config.fraction <= 1.0) {
        return Err(Error::Usage(format!("selection fraction {} outside (0, 1]", config.fraction)));
    }
    let (rows, cols) = matrix_dims(&scores.scores)?;
    let s = scores.scores.data();
    let mut mask = NeuronMask::zeros(scores.layer_path.clone(), rows, cols);
    match config.axis {
        SelectionAxis::Column => {
            let k = top_k_count(config.fraction, rows);
            for j in 0..cols {
                let column: Vec<(usize, f64)> = (0..rows).map(|i| (i, s[i * cols + j])).collect();
                for i in top_k(&column, k) {
                    mask.set(i, j, true);
                }
            }
        }
        SelectionAxis::Row => {
            let k = top_k_count(config.fraction, cols);
            for i in 0..rows {
                let row: Vec<(usize, f64)> = (0..cols).map(|j| (j, s[i * cols + j])).collect();
                for j in top_k(&row, k) {
                    mask.set(i, j, true);
                }
            }
        }
    }
    Ok(mask)
}
