use rand::Rng;

use super::ModelParams;
use crate::tensor::{
    dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear_rows, linear_rows_backward,
    softmax, softmax_backward, LayerNormCache,
};
use crate::textprep::{TokenSequence, PAD_ID};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Per head, row-major `n × n` attention weights.
    probs: Vec<Vec<T>>,
    ctx: Vec<T>,
    mask1: Option<Vec<T>>,
    ln1: LayerNormCache<T>,
    y1: Vec<T>,
    ff_pre: Vec<T>,
    ff_act: Vec<T>,
    mask2: Option<Vec<T>>,
    ln2: LayerNormCache<T>,
}

/// Intermediates of one encoder pass over the non-pad positions.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    ids: Vec<usize>,
    positions: Vec<usize>,
    layers: Vec<LayerCache<T>>,
}

impl<T> EncoderCache<T> {
    /// Number of non-pad positions that were encoded.
    pub fn n_tokens(&self) -> usize {
        self.ids.len()
    }
}

fn dropout_mask<T: Scalar, R: Rng>(len: usize, rate: f64, rng: Option<&mut R>) -> Option<Vec<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - rate));
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }
}

pub(super) fn forward<T: Scalar, R: Rng>(
    params: &ModelParams<T>,
    seq: &TokenSequence,
    mut rng: Option<&mut R>,
) -> Result<(Vec<T>, EncoderCache<T>)> {
    let cfg = &params.config;
    let d = cfg.encoder.d_model;
    let heads = cfg.encoder.n_heads;
    let dh = cfg.head_dim();
    if seq.ids.len() > cfg.encoder.capacity {
        return Err(Error::Shape(format!(
            "sequence of {} positions exceeds capacity {}",
            seq.ids.len(),
            cfg.encoder.capacity
        )));
    }
    let mut ids = Vec::new();
    let mut positions = Vec::new();
    for (pos, &id) in seq.ids.iter().enumerate() {
        if id == PAD_ID {
            continue;
        }
        if id as usize >= cfg.vocab_size {
            return Err(Error::Shape(format!("token id {id} outside vocabulary of {}", cfg.vocab_size)));
        }
        ids.push(id as usize);
        positions.push(pos);
    }
    let n = ids.len();
    let mut cache = EncoderCache {
        ids,
        positions,
        layers: Vec::with_capacity(params.layers.len()),
    };
    if n == 0 {
        return Ok((vec![T::zero(); d], cache));
    }

    let mut h = Vec::with_capacity(n * d);
    for (&id, &pos) in cache.ids.iter().zip(&cache.positions) {
        h.extend(
            params
                .token_emb
                .row(id)
                .iter()
                .zip(params.pos_emb.row(pos))
                .map(|(&a, &b)| a + b),
        );
    }

    let scale = T::one() / T::of_usize(dh).sqrt();
    let rate = cfg.encoder.dropout;
    for layer in &params.layers {
        let q = linear_rows(&h, n, &layer.wq, &layer.bq);
        let k = linear_rows(&h, n, &layer.wk, &layer.bk);
        let v = linear_rows(&h, n, &layer.wv, &layer.bv);
        let mut ctx = vec![T::zero(); n * d];
        let mut probs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let off = hd * dh;
            let mut p_head = Vec::with_capacity(n * n);
            for i in 0..n {
                let qi = &q[i * d + off..i * d + off + dh];
                let scores: Vec<T> = (0..n)
                    .map(|j| dot(qi, &k[j * d + off..j * d + off + dh]) * scale)
                    .collect();
                let p = softmax(&scores);
                let out = &mut ctx[i * d + off..i * d + off + dh];
                for (j, &pij) in p.iter().enumerate() {
                    for (o, &vj) in out.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                        *o += pij * vj;
                    }
                }
                p_head.extend(p);
            }
            probs.push(p_head);
        }
        let mut attn_out = linear_rows(&ctx, n, &layer.wo, &layer.bo);
        let mask1 = dropout_mask(n * d, rate, rng.as_deref_mut());
        apply_mask(&mut attn_out, &mask1);
        let res1: Vec<T> = h.iter().zip(&attn_out).map(|(&a, &b)| a + b).collect();
        let (y1, ln1) = layer_norm(&res1, n, &layer.ln1_gain, &layer.ln1_bias);

        let ff_pre = linear_rows(&y1, n, &layer.ff1_w, &layer.ff1_b);
        let ff_act: Vec<T> = ff_pre.iter().map(|&z| gelu(z)).collect();
        let mut ff_out = linear_rows(&ff_act, n, &layer.ff2_w, &layer.ff2_b);
        let mask2 = dropout_mask(n * d, rate, rng.as_deref_mut());
        apply_mask(&mut ff_out, &mask2);
        let res2: Vec<T> = y1.iter().zip(&ff_out).map(|(&a, &b)| a + b).collect();
        let (out, ln2) = layer_norm(&res2, n, &layer.ln2_gain, &layer.ln2_bias);

        cache.layers.push(LayerCache {
            input: std::mem::replace(&mut h, out),
            q,
            k,
            v,
            probs,
            ctx,
            mask1,
            ln1,
            y1,
            ff_pre,
            ff_act,
            mask2,
            ln2,
        });
    }

    let inv_n = T::one() / T::of_usize(n);
    let mut x = vec![T::zero(); d];
    for r in 0..n {
        for (xi, &hv) in x.iter_mut().zip(&h[r * d..(r + 1) * d]) {
            *xi += hv;
        }
    }
    x.iter_mut().for_each(|v| *v *= inv_n);
    Ok((x, cache))
}

pub(super) fn backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: &EncoderCache<T>,
    dx: &[T],
    grads: &mut ModelParams<T>,
) {
    let n = cache.n_tokens();
    if n == 0 {
        return;
    }
    let cfg = &params.config;
    let d = cfg.encoder.d_model;
    let dh = cfg.head_dim();
    let scale = T::one() / T::of_usize(dh).sqrt();
    let inv_n = T::one() / T::of_usize(n);

    let mut dout: Vec<T> = (0..n).flat_map(|_| dx.iter().map(|&g| g * inv_n)).collect();
    for (li, lc) in cache.layers.iter().enumerate().rev() {
        let layer = &params.layers[li];
        let g = &mut grads.layers[li];

        let dres2 = layer_norm_backward(&lc.ln2, &layer.ln2_gain, &dout, &mut g.ln2_gain, &mut g.ln2_bias);
        let mut dy1 = dres2.clone();
        let mut dff_out = dres2;
        apply_mask(&mut dff_out, &lc.mask2);
        let dff_act = linear_rows_backward(&lc.ff_act, n, &layer.ff2_w, &dff_out, &mut g.ff2_w, &mut g.ff2_b);
        let dff_pre: Vec<T> = dff_act
            .iter()
            .zip(&lc.ff_pre)
            .map(|(&gd, &z)| gd * gelu_grad(z))
            .collect();
        let dy1_ff = linear_rows_backward(&lc.y1, n, &layer.ff1_w, &dff_pre, &mut g.ff1_w, &mut g.ff1_b);
        dy1.iter_mut().zip(&dy1_ff).for_each(|(a, &b)| *a += b);

        let dres1 = layer_norm_backward(&lc.ln1, &layer.ln1_gain, &dy1, &mut g.ln1_gain, &mut g.ln1_bias);
        let mut dh_total = dres1.clone();
        let mut dattn = dres1;
        apply_mask(&mut dattn, &lc.mask1);
        let dctx = linear_rows_backward(&lc.ctx, n, &layer.wo, &dattn, &mut g.wo, &mut g.bo);

        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        for (hd, p_head) in lc.probs.iter().enumerate() {
            let off = hd * dh;
            for i in 0..n {
                let p = &p_head[i * n..(i + 1) * n];
                let dci = &dctx[i * d + off..i * d + off + dh];
                let dp: Vec<T> = (0..n).map(|j| dot(dci, &lc.v[j * d + off..j * d + off + dh])).collect();
                for (j, &pij) in p.iter().enumerate() {
                    for (dvj, &g) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                        *dvj += pij * g;
                    }
                }
                let ds = softmax_backward(p, &dp);
                for (j, &dsij) in ds.iter().enumerate() {
                    let s = dsij * scale;
                    for t in 0..dh {
                        dq[i * d + off + t] += s * lc.k[j * d + off + t];
                        dk[j * d + off + t] += s * lc.q[i * d + off + t];
                    }
                }
            }
        }
        for (dproj, w, gw, gb) in [
            (&dq, &layer.wq, &mut g.wq, &mut g.bq),
            (&dk, &layer.wk, &mut g.wk, &mut g.bk),
            (&dv, &layer.wv, &mut g.wv, &mut g.bv),
        ] {
            let di = linear_rows_backward(&lc.input, n, w, dproj, gw, gb);
            dh_total.iter_mut().zip(&di).for_each(|(a, &b)| *a += b);
        }
        dout = dh_total;
    }

    for (r, (&id, &pos)) in cache.ids.iter().zip(&cache.positions).enumerate() {
        let gr = &dout[r * d..(r + 1) * d];
        for (a, &b) in grads.token_emb.row_mut(id).iter_mut().zip(gr) {
            *a += b;
        }
        for (a, &b) in grads.pos_emb.row_mut(pos).iter_mut().zip(gr) {
            *a += b;
        }
    }
}
