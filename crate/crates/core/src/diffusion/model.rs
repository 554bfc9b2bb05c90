//! Forward and backward passes of the denoiser.
//!
//! Layout per sample: patch tokens `f` are `P × l`, the text embedding `c`
//! is `s × d`. Each block is a single-head patch self-attention
//! `h += SA(LN(h))`, then cross-attention
//! `h += Wout(softmax(LN(h)Wq (cWk)ᵀ / √d') cWv)`, then `h += MLP(LN(h))`. The network predicts the clean image directly.

use super::config::{ModelConfig, LN_EPS};
use super::weights::ModelWeights;
use crate::data::Caption;
use crate::error::{Error, Result};
use crate::numerics::ops::{
    gelu_grad_scalar, gelu_scalar, gemm, layer_norm_backward_slice, layer_norm_slice, softmax_rows_backward_slice,
    softmax_rows_slice, LayerNormCache,
};
use crate::numerics::Tensor;

/// Text conditioning `c` with one row per caption position.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub c: Tensor,
    pub tokens: Vec<usize>,
}

pub fn encode_text(caption: &Caption, weights: &ModelWeights) -> Result<TextEmbedding> {
    encode_tokens(caption.tokens(), weights)
}

pub fn encode_tokens(tokens: &[usize], weights: &ModelWeights) -> Result<TextEmbedding> {
    let cfg = &weights.config;
    if tokens.len() != cfg.text_len {
        return Err(Error::Dimension {
            op: "encode_text",
            left: vec![cfg.text_len],
            right: vec![tokens.len()],
        });
    }
    let emb = weights.value(weights.index.token_embedding);
    let pos = weights.value(weights.index.positional_embedding);
    let d = cfg.text_dim;
    let mut c = Vec::with_capacity(cfg.text_len * d);
    for (i, &tok) in tokens.iter().enumerate() {
        if tok >= cfg.vocab {
            return Err(Error::Vocabulary {
                token: tok,
                vocab: cfg.vocab,
            });
        }
        c.extend(emb.row(tok).iter().zip(pos.row(i)).map(|(a, b)| a + b));
    }
    Ok(TextEmbedding {
        c: Tensor::new(&[cfg.text_len, d], c)?,
        tokens: tokens.to_vec(),
    })
}

/// Image `[H, W, C]` to patch rows `[P, p·p·C]`.
pub fn patchify(cfg: &ModelConfig, image: &[f64]) -> Vec<f64> {
    let (ps, side, ch) = (cfg.patch_size, cfg.image_size / cfg.patch_size, cfg.channels);
    let pd = cfg.patch_dim();
    let mut out = vec![0.0; cfg.patches() * pd];
    for py in 0..side {
        for px in 0..side {
            let p = py * side + px;
            for iy in 0..ps {
                for ix in 0..ps {
                    let src = ((py * ps + iy) * cfg.image_size + px * ps + ix) * ch;
                    let dst = p * pd + (iy * ps + ix) * ch;
                    out[dst..dst + ch].copy_from_slice(&image[src..src + ch]);
                }
            }
        }
    }
    out
}

pub fn unpatchify(cfg: &ModelConfig, patches: &[f64]) -> Vec<f64> {
    let (ps, side, ch) = (cfg.patch_size, cfg.image_size / cfg.patch_size, cfg.channels);
    let pd = cfg.patch_dim();
    let mut out = vec![0.0; cfg.image_len()];
    for py in 0..side {
        for px in 0..side {
            let p = py * side + px;
            for iy in 0..ps {
                for ix in 0..ps {
                    let dst = ((py * ps + iy) * cfg.image_size + px * ps + ix) * ch;
                    let src = p * pd + (iy * ps + ix) * ch;
                    out[dst..dst + ch].copy_from_slice(&patches[src..src + ch]);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
struct BlockCache {
    norm0: LayerNormCache,
    a0: Vec<f64>,
    sq: Vec<f64>,
    sk: Vec<f64>,
    sv: Vec<f64>,
    sattn: Vec<f64>,
    so: Vec<f64>,
    norm1: LayerNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    o: Vec<f64>,
    norm2: LayerNormCache,
    u: Vec<f64>,
    z: Vec<f64>,
    g: Vec<f64>,
}

/// Activations kept for the backward pass of one sample.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    t: usize,
    x: Vec<f64>,
    c: Vec<f64>,
    tokens: Vec<usize>,
    blocks: Vec<BlockCache>,
    final_norm: LayerNormCache,
    f: Vec<f64>,
}

fn add_row_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(a, b)| *a += b);
    }
}

fn col_sums_into(x: &[f64], cols: usize, out: &mut [f64]) {
    for row in x.chunks(cols) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
}

/// Attention weights softmax(QKᵀ/√d') of every block for one input; used by
/// tests of row-stochasticity.
pub fn attention_maps(x_patches: &[f64], t: usize, text: &TextEmbedding, weights: &ModelWeights) -> Vec<Vec<f64>> {
    let (_, cache) = forward_patches(x_patches, t, text, weights);
    cache.blocks.into_iter().map(|b| b.attn).collect()
}

/// Forward pass on patch rows; returns predicted clean patches and the cache.
pub fn forward_patches(
    x_patches: &[f64],
    t: usize,
    text: &TextEmbedding,
    weights: &ModelWeights,
) -> (Vec<f64>, ForwardCache) {
    let cfg = &weights.config;
    let idx = &weights.index;
    let (p, l, pd) = (cfg.patches(), cfg.width, cfg.patch_dim());
    let (s, d, dk, dv, hid) = (cfg.text_len, cfg.text_dim, cfg.key_dim, cfg.value_dim, cfg.mlp_hidden);
    let scale = 1.0 / (dk as f64).sqrt();
    let self_scale = 1.0 / (l as f64).sqrt();
    let c = text.c.data();

    let mut h = vec![0.0; p * l];
    gemm(p, pd, l, x_patches, false, weights.value(idx.patch_weight).data(), false, &mut h, 0.0);
    add_row_bias(&mut h, weights.value(idx.patch_bias).data());
    h.iter_mut()
        .zip(weights.value(idx.patch_position).data())
        .for_each(|(a, b)| *a += b);
    add_row_bias(&mut h, weights.value(idx.time_embedding).row(t));

    let mut blocks = Vec::with_capacity(cfg.blocks);
    for bi in &idx.blocks {
        let mut bc = BlockCache {
            a0: vec![0.0; p * l],
            sq: vec![0.0; p * l],
            sk: vec![0.0; p * l],
            sv: vec![0.0; p * l],
            sattn: vec![0.0; p * p],
            so: vec![0.0; p * l],
            a: vec![0.0; p * l],
            q: vec![0.0; p * dk],
            k: vec![0.0; s * dk],
            v: vec![0.0; s * dv],
            attn: vec![0.0; p * s],
            o: vec![0.0; p * dv],
            u: vec![0.0; p * l],
            z: vec![0.0; p * hid],
            ..Default::default()
        };
        bc.norm0 = layer_norm_slice(
            &h,
            l,
            weights.value(bi.norm0_gain).data(),
            weights.value(bi.norm0_bias).data(),
            LN_EPS,
            &mut bc.a0,
        );
        gemm(p, l, l, &bc.a0, false, weights.value(bi.self_query).data(), false, &mut bc.sq, 0.0);
        gemm(p, l, l, &bc.a0, false, weights.value(bi.self_key).data(), false, &mut bc.sk, 0.0);
        gemm(p, l, l, &bc.a0, false, weights.value(bi.self_value).data(), false, &mut bc.sv, 0.0);
        gemm(p, l, p, &bc.sq, false, &bc.sk, true, &mut bc.sattn, 0.0);
        softmax_rows_slice(&mut bc.sattn, p, self_scale);
        gemm(p, p, l, &bc.sattn, false, &bc.sv, false, &mut bc.so, 0.0);
        gemm(p, l, l, &bc.so, false, weights.value(bi.self_out).data(), false, &mut h, 1.0);

        bc.norm1 = layer_norm_slice(
            &h,
            l,
            weights.value(bi.norm1_gain).data(),
            weights.value(bi.norm1_bias).data(),
            LN_EPS,
            &mut bc.a,
        );
        gemm(p, l, dk, &bc.a, false, weights.value(bi.query).data(), false, &mut bc.q, 0.0);
        gemm(s, d, dk, c, false, weights.value(bi.key).data(), false, &mut bc.k, 0.0);
        gemm(s, d, dv, c, false, weights.value(bi.value).data(), false, &mut bc.v, 0.0);
        gemm(p, dk, s, &bc.q, false, &bc.k, true, &mut bc.attn, 0.0);
        softmax_rows_slice(&mut bc.attn, s, scale);
        gemm(p, s, dv, &bc.attn, false, &bc.v, false, &mut bc.o, 0.0);
        gemm(p, dv, l, &bc.o, false, weights.value(bi.out).data(), false, &mut h, 1.0);

        bc.norm2 = layer_norm_slice(
            &h,
            l,
            weights.value(bi.norm2_gain).data(),
            weights.value(bi.norm2_bias).data(),
            LN_EPS,
            &mut bc.u,
        );
        gemm(p, l, hid, &bc.u, false, weights.value(bi.fc1_weight).data(), false, &mut bc.z, 0.0);
        add_row_bias(&mut bc.z, weights.value(bi.fc1_bias).data());
        bc.g = bc.z.iter().map(|&v| gelu_scalar(v)).collect();
        gemm(p, hid, l, &bc.g, false, weights.value(bi.fc2_weight).data(), false, &mut h, 1.0);
        add_row_bias(&mut h, weights.value(bi.fc2_bias).data());
        blocks.push(bc);
    }

    let mut f = vec![0.0; p * l];
    let final_norm = layer_norm_slice(
        &h,
        l,
        weights.value(idx.final_gain).data(),
        weights.value(idx.final_bias).data(),
        LN_EPS,
        &mut f,
    );
    let mut y = vec![0.0; p * pd];
    gemm(p, l, pd, &f, false, weights.value(idx.unpatch_weight).data(), false, &mut y, 0.0);
    add_row_bias(&mut y, weights.value(idx.unpatch_bias).data());

    let cache = ForwardCache {
        t,
        x: x_patches.to_vec(),
        c: c.to_vec(),
        tokens: text.tokens.clone(),
        blocks,
        final_norm,
        f,
    };
    (y, cache)
}

/// Accumulates `∂L/∂θ` into the `grad` of every trainable parameter, given
/// `dy = ∂L/∂(predicted patches)`. Frozen parameters are skipped, but
/// gradients still flow through them to earlier trainable ones.
pub fn backward_patches(cache: &ForwardCache, dy: &[f64], weights: &mut ModelWeights) {
    let cfg = weights.config;
    let idx = weights.index.clone();
    let (p, l, pd) = (cfg.patches(), cfg.width, cfg.patch_dim());
    let (s, d, dk, dv, hid) = (cfg.text_len, cfg.text_dim, cfg.key_dim, cfg.value_dim, cfg.mlp_hidden);
    let scale = 1.0 / (dk as f64).sqrt();
    let self_scale = 1.0 / (l as f64).sqrt();
    let trainable: Vec<bool> = weights.params.iter().map(|q| q.trainable).collect();

    macro_rules! grad {
        ($i:expr) => {
            weights.params[$i].grad.data_mut()
        };
    }
    macro_rules! val {
        ($i:expr) => {
            weights.params[$i].value.data()
        };
    }

    // Output head.
    if trainable[idx.unpatch_weight] {
        let mut g = vec![0.0; l * pd];
        gemm(l, p, pd, &cache.f, true, dy, false, &mut g, 0.0);
        add_into(grad!(idx.unpatch_weight), &g);
    }
    if trainable[idx.unpatch_bias] {
        col_sums_into(dy, pd, grad!(idx.unpatch_bias));
    }
    let mut df = vec![0.0; p * l];
    gemm(p, pd, l, dy, false, val!(idx.unpatch_weight), true, &mut df, 0.0);
    let mut dh = vec![0.0; p * l];
    {
        let gain = val!(idx.final_gain).to_vec();
        let mut dg = vec![0.0; l];
        let mut db = vec![0.0; l];
        layer_norm_backward_slice(&cache.final_norm, l, &gain, &df, &mut dh, Some(&mut dg), Some(&mut db));
        if trainable[idx.final_gain] {
            add_into(grad!(idx.final_gain), &dg);
        }
        if trainable[idx.final_bias] {
            add_into(grad!(idx.final_bias), &db);
        }
    }

    let mut dc = vec![0.0; s * d];
    let text_trainable = trainable[idx.token_embedding] || trainable[idx.positional_embedding];

    for (bi, bc) in idx.blocks.iter().zip(&cache.blocks).rev() {
        // MLP branch.
        if trainable[bi.fc2_bias] {
            col_sums_into(&dh, l, grad!(bi.fc2_bias));
        }
        if trainable[bi.fc2_weight] {
            let mut g = vec![0.0; hid * l];
            gemm(hid, p, l, &bc.g, true, &dh, false, &mut g, 0.0);
            add_into(grad!(bi.fc2_weight), &g);
        }
        let mut dz = vec![0.0; p * hid];
        gemm(p, l, hid, &dh, false, val!(bi.fc2_weight), true, &mut dz, 0.0);
        dz.iter_mut().zip(&bc.z).for_each(|(g, &z)| *g *= gelu_grad_scalar(z));
        if trainable[bi.fc1_bias] {
            col_sums_into(&dz, hid, grad!(bi.fc1_bias));
        }
        if trainable[bi.fc1_weight] {
            let mut g = vec![0.0; l * hid];
            gemm(l, p, hid, &bc.u, true, &dz, false, &mut g, 0.0);
            add_into(grad!(bi.fc1_weight), &g);
        }
        let mut du = vec![0.0; p * l];
        gemm(p, hid, l, &dz, false, val!(bi.fc1_weight), true, &mut du, 0.0);
        layer_norm_into(
            &bc.norm2,
            l,
            weights,
            (bi.norm2_gain, bi.norm2_bias),
            &trainable,
            &du,
            &mut dh,
        );

        // Cross-attention branch.
        if trainable[bi.out] {
            let mut g = vec![0.0; dv * l];
            gemm(dv, p, l, &bc.o, true, &dh, false, &mut g, 0.0);
            add_into(grad!(bi.out), &g);
        }
        let mut d_o = vec![0.0; p * dv];
        gemm(p, l, dv, &dh, false, val!(bi.out), true, &mut d_o, 0.0);
        let mut d_attn = vec![0.0; p * s];
        gemm(p, dv, s, &d_o, false, &bc.v, true, &mut d_attn, 0.0);
        let mut d_v = vec![0.0; s * dv];
        gemm(s, p, dv, &bc.attn, true, &d_o, false, &mut d_v, 0.0);
        softmax_rows_backward_slice(&bc.attn, &mut d_attn, s, scale);
        let mut d_q = vec![0.0; p * dk];
        gemm(p, s, dk, &d_attn, false, &bc.k, false, &mut d_q, 0.0);
        let mut d_k = vec![0.0; s * dk];
        gemm(s, p, dk, &d_attn, true, &bc.q, false, &mut d_k, 0.0);

        if trainable[bi.key] {
            let mut g = vec![0.0; d * dk];
            gemm(d, s, dk, &cache.c, true, &d_k, false, &mut g, 0.0);
            add_into(grad!(bi.key), &g);
        }
        if trainable[bi.value] {
            let mut g = vec![0.0; d * dv];
            gemm(d, s, dv, &cache.c, true, &d_v, false, &mut g, 0.0);
            add_into(grad!(bi.value), &g);
        }
        if text_trainable {
            gemm(s, dk, d, &d_k, false, val!(bi.key), true, &mut dc, 1.0);
            gemm(s, dv, d, &d_v, false, val!(bi.value), true, &mut dc, 1.0);
        }
        if trainable[bi.query] {
            let mut g = vec![0.0; l * dk];
            gemm(l, p, dk, &bc.a, true, &d_q, false, &mut g, 0.0);
            add_into(grad!(bi.query), &g);
        }
        let mut da = vec![0.0; p * l];
        gemm(p, dk, l, &d_q, false, val!(bi.query), true, &mut da, 0.0);
        layer_norm_into(
            &bc.norm1,
            l,
            weights,
            (bi.norm1_gain, bi.norm1_bias),
            &trainable,
            &da,
            &mut dh,
        );

        // Self-attention branch.
        if trainable[bi.self_out] {
            let mut g = vec![0.0; l * l];
            gemm(l, p, l, &bc.so, true, &dh, false, &mut g, 0.0);
            add_into(grad!(bi.self_out), &g);
        }
        let mut d_so = vec![0.0; p * l];
        gemm(p, l, l, &dh, false, val!(bi.self_out), true, &mut d_so, 0.0);
        let mut d_sattn = vec![0.0; p * p];
        gemm(p, l, p, &d_so, false, &bc.sv, true, &mut d_sattn, 0.0);
        let mut d_sv = vec![0.0; p * l];
        gemm(p, p, l, &bc.sattn, true, &d_so, false, &mut d_sv, 0.0);
        softmax_rows_backward_slice(&bc.sattn, &mut d_sattn, p, self_scale);
        let mut d_sq = vec![0.0; p * l];
        gemm(p, p, l, &d_sattn, false, &bc.sk, false, &mut d_sq, 0.0);
        let mut d_sk = vec![0.0; p * l];
        gemm(p, p, l, &d_sattn, true, &bc.sq, false, &mut d_sk, 0.0);
        let mut da0 = vec![0.0; p * l];
        for (w, dproj) in [(bi.self_query, &d_sq), (bi.self_key, &d_sk), (bi.self_value, &d_sv)] {
            if trainable[w] {
                let mut g = vec![0.0; l * l];
                gemm(l, p, l, &bc.a0, true, dproj, false, &mut g, 0.0);
                add_into(grad!(w), &g);
            }
            gemm(p, l, l, dproj, false, val!(w), true, &mut da0, 1.0);
        }
        layer_norm_into(
            &bc.norm0,
            l,
            weights,
            (bi.norm0_gain, bi.norm0_bias),
            &trainable,
            &da0,
            &mut dh,
        );
    }

    // Input embedding.
    if trainable[idx.patch_weight] {
        let mut g = vec![0.0; pd * l];
        gemm(pd, p, l, &cache.x, true, &dh, false, &mut g, 0.0);
        add_into(grad!(idx.patch_weight), &g);
    }
    if trainable[idx.patch_bias] {
        col_sums_into(&dh, l, grad!(idx.patch_bias));
    }
    if trainable[idx.patch_position] {
        add_into(grad!(idx.patch_position), &dh);
    }
    if trainable[idx.time_embedding] {
        let row = &mut grad!(idx.time_embedding)[cache.t * l..(cache.t + 1) * l];
        col_sums_into(&dh, l, row);
    }
    if trainable[idx.token_embedding] {
        let g = grad!(idx.token_embedding);
        for (i, &tok) in cache.tokens.iter().enumerate() {
            g[tok * d..(tok + 1) * d]
                .iter_mut()
                .zip(&dc[i * d..(i + 1) * d])
                .for_each(|(a, b)| *a += b);
        }
    }
    if trainable[idx.positional_embedding] {
        add_into(grad!(idx.positional_embedding), &dc);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

/// Backward through a layer norm whose output fed a residual branch; adds
/// the input gradient into `dh`.
fn layer_norm_into(
    cache: &LayerNormCache,
    cols: usize,
    weights: &mut ModelWeights,
    (gain_idx, bias_idx): (usize, usize),
    trainable: &[bool],
    dy: &[f64],
    dh: &mut [f64],
) {
    let gain = weights.params[gain_idx].value.data().to_vec();
    let mut dx = vec![0.0; dy.len()];
    let mut dg = vec![0.0; cols];
    let mut db = vec![0.0; cols];
    layer_norm_backward_slice(cache, cols, &gain, dy, &mut dx, Some(&mut dg), Some(&mut db));
    add_into(dh, &dx);
    if trainable[gain_idx] {
        add_into(weights.params[gain_idx].grad.data_mut(), &dg);
    }
    if trainable[bias_idx] {
        add_into(weights.params[bias_idx].grad.data_mut(), &db);
    }
}

/// Predicted clean image `x̂_θ(x_noisy, t, c)`.
pub fn denoise_forward(x_noisy: &Tensor, t: usize, text: &TextEmbedding, weights: &ModelWeights) -> Result<Tensor> {
    let cfg = &weights.config;
    if t >= cfg.steps {
        return Err(Error::Schedule { t, steps: cfg.steps });
    }
    if x_noisy.len() != cfg.image_len() {
        return Err(Error::Dimension {
            op: "denoise_forward",
            left: cfg.image_shape().to_vec(),
            right: x_noisy.shape().to_vec(),
        });
    }
    if text.c.shape() != [cfg.text_len, cfg.text_dim] {
        return Err(Error::Dimension {
            op: "denoise_forward text",
            left: vec![cfg.text_len, cfg.text_dim],
            right: text.c.shape().to_vec(),
        });
    }
    let (y, _) = forward_patches(&patchify(cfg, x_noisy.data()), t, text, weights);
    Tensor::new(x_noisy.shape(), unpatchify(cfg, &y))
}

/// Single-block cross-attention `softmax(QKᵀ/√d')V·Wout` on explicit
/// matrices, without residual or normalization.
pub fn cross_attention(
    f: &Tensor,
    text: &Tensor,
    query: &Tensor,
    key: &Tensor,
    value: &Tensor,
    out: &Tensor,
) -> Result<Tensor> {
    use crate::numerics::{matmul, softmax_rows};
    let q = matmul(f, query)?;
    let k = matmul(text, key)?;
    let v = matmul(text, value)?;
    if q.shape()[1] != k.shape()[1] {
        return Err(Error::Dimension {
            op: "cross_attention",
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    let kt = transpose(&k);
    let scale = 1.0 / (k.shape()[1] as f64).sqrt();
    let attn = softmax_rows(&matmul(&q, &kt)?, scale)?;
    matmul(&matmul(&attn, &v)?, out)
}

pub fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = t.dims2();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(&[c, r], data).expect("transpose shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocab::PAD;

    #[test]
    fn patchify_round_trips() {
        let cfg = ModelConfig::default();
        let img: Vec<f64> = (0..cfg.image_len()).map(|i| i as f64).collect();
        let patches = patchify(&cfg, &img);
        assert_eq!(unpatchify(&cfg, &patches), img);
        // Top-left pixel of patch 1 is pixel (x=4, y=0).
        assert_eq!(patches[cfg.patch_dim()], (4 * 3) as f64);
    }

    #[test]
    fn all_padding_caption_is_lookup_plus_position() {
        let w = ModelWeights::init(ModelConfig::default(), 2).unwrap();
        let caption = Caption::from_tokens(&[]).unwrap();
        let text = encode_text(&caption, &w).unwrap();
        let emb = w.value(w.index.token_embedding);
        let pos = w.value(w.index.positional_embedding);
        for i in 0..w.config.text_len {
            for j in 0..w.config.text_dim {
                assert_eq!(text.c.get2(i, j), emb.get2(PAD, j) + pos.get2(i, j));
            }
        }
    }

    #[test]
    fn caption_change_is_local_to_its_row() {
        let w = ModelWeights::init(ModelConfig::default(), 2).unwrap();
        let a = encode_text(&Caption::parse("a red circle on blue background").unwrap(), &w).unwrap();
        let b = encode_text(&Caption::parse("a red square on blue background").unwrap(), &w).unwrap();
        for i in 0..w.config.text_len {
            let same = a.c.row(i) == b.c.row(i);
            assert_eq!(same, i != 2, "row {i}");
        }
    }

    #[test]
    fn out_of_range_token_and_step_are_rejected() {
        let w = ModelWeights::init(ModelConfig::default(), 2).unwrap();
        let mut toks = vec![0; 12];
        toks[3] = 500;
        assert!(matches!(encode_tokens(&toks, &w), Err(Error::Vocabulary { token: 500, .. })));
        let text = encode_tokens(&[0; 12], &w).unwrap();
        let x = Tensor::zeros(&[16, 16, 3]);
        assert!(matches!(denoise_forward(&x, 100, &text, &w), Err(Error::Schedule { .. })));
        let y = denoise_forward(&x, 99, &text, &w).unwrap();
        assert_eq!(y.shape(), x.shape());
        let y2 = denoise_forward(&x, 99, &text, &w).unwrap();
        assert_eq!(y.to_le_bytes(), y2.to_le_bytes());
    }
}
