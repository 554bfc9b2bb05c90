use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::vocab::{token_id, WORDS};
use crate::data::{caption_with_context, held_in_specs, Caption};
use crate::diffusion::ModelWeights;
use crate::error::{Error, Result};
use crate::numerics::RngState;
use crate::select::{caption_mask, mask_miou, SelectionConfig};

/// Pairwise mask mIoU of the selection masks of each query.
pub fn prompt_similarity_matrix(
    queries: &[Caption],
    weights: &ModelWeights,
    config: &SelectionConfig,
) -> Result<Vec<Vec<f64>>> {
    if queries.len() < 2 {
        return Err(Error::Usage("similarity needs at least two queries".into()));
    }
    let masks = queries
        .par_iter()
        .map(|q| caption_mask(q, weights, config))
        .collect::<Result<Vec<_>>>()?;
    let n = masks.len();
    let mut m = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a..n {
            let v = mask_miou(&masks[a], &masks[b])?;
            m[a][b] = v;
            m[b][a] = v;
        }
    }
    Ok(m)
}

/// Square matrix as CSV with a `query,q0,q1,...` header.
pub fn matrix_csv(labels: &[String], m: &[Vec<f64>]) -> String {
    let mut out = String::from("query");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(m) {
        out.push_str(l);
        for v in row {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Eleven queries where query `i` differs from query 0 in exactly `i` words.
///
/// Starts from a held-in caption and replaces its words, one more per query,
/// with distinct free-form vocabulary words in a seeded order. Short
/// captions continue into their padding slots.
pub fn edit_chain(seed: u64) -> Result<Vec<Caption>> {
    let mut rng = RngState::at(seed, 0xED17).rng();
    let specs = held_in_specs();
    let spec = specs.choose(&mut rng).copied().expect("held-in specs");
    let start = caption_with_context(&spec, (seed % 8) as usize, None)?;
    let base: Vec<usize> = start.tokens().to_vec();
    let first_free = token_id("rainy").expect("vocabulary word");
    let mut pool: Vec<usize> = (first_free..WORDS.len()).filter(|t| !base.contains(t)).collect();
    pool.shuffle(&mut rng);
    // Words first in shuffled order, then padding slots left to right.
    let words = base.iter().filter(|&&t| t != 0).count();
    let mut order: Vec<usize> = (0..words).collect();
    order.shuffle(&mut rng);
    order.extend(words..base.len());
    let mut chain = vec![start];
    let mut tokens = base.clone();
    for (k, &pos) in order.iter().take(10).enumerate() {
        tokens[pos] = pool[k];
        chain.push(Caption::from_tokens(&tokens)?);
    }
    Ok(chain)
}

/// Average ranks, ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// One-sided 5% critical value of Spearman's rho for n = 11.
pub const SPEARMAN_CRITICAL_N11: f64 = 0.536;

/// Similarity to the chain's first query against edit distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrend {
    pub similarity: Vec<f64>,
    pub rho: f64,
}

pub fn chain_trend(weights: &ModelWeights, config: &SelectionConfig, seed: u64) -> Result<ChainTrend> {
    let chain = edit_chain(seed)?;
    let m = prompt_similarity_matrix(&chain, weights, config)?;
    let similarity = m[0].clone();
    let distance: Vec<f64> = (0..similarity.len()).map(|i| i as f64).collect();
    Ok(ChainTrend {
        rho: spearman(&distance, &similarity),
        similarity,
    })
}
