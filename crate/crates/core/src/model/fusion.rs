use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FusionMode, ModelParams};
use crate::tabular::TabularVector;
use crate::tensor::{dot, matvec, matvec_backward, softmax, softmax_backward, Tensor};
use crate::{Error, Result, Scalar};

/// Attention coefficients over the text, categorical and numerical branches
/// (in that order), their pre-softmax scores, and the fused vector `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTrace<T> {
    pub coefficients: [T; 3],
    pub scores: [T; 3],
    pub m: Vec<T>,
}

#[derive(Debug, Clone)]
struct EmbedCache<T> {
    input: Vec<T>,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
    mask: Option<Vec<T>>,
    out_pre: Vec<T>,
    out: Vec<T>,
}

/// Intermediates of the fusion and head for one example.
#[derive(Debug, Clone)]
pub struct FusionCache<T> {
    mode: FusionMode,
    x: Vec<T>,
    cat: Option<EmbedCache<T>>,
    num: Option<EmbedCache<T>>,
    /// Projected branches `W_x x`, `W_c c̃`, `W_n ñ`.
    proj: [Vec<T>; 3],
    /// Raw `aᵀ[W_x x ‖ W_k u_k]` before the LeakyReLU.
    pre_scores: [T; 3],
    m: Vec<T>,
    pub trace: Option<FusionTrace<T>>,
}

fn relu<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&z| z.max(T::zero())).collect()
}

fn leaky<T: Scalar>(z: T, slope: T) -> T {
    if z > T::zero() {
        z
    } else {
        slope * z
    }
}

fn embed_one<T: Scalar, R: Rng>(
    u: &[T],
    w1: &Tensor<T>,
    b1: &Tensor<T>,
    w2: &Tensor<T>,
    b2: &Tensor<T>,
    rate: f64,
    rng: Option<&mut R>,
) -> EmbedCache<T> {
    let hidden_pre = matvec(w1, u, Some(b1));
    let mut hidden = relu(&hidden_pre);
    let mask = match rng {
        Some(rng) if rate > 0.0 => {
            let keep = T::of(1.0 / (1.0 - rate));
            Some(
                (0..hidden.len())
                    .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
                    .collect::<Vec<T>>(),
            )
        }
        _ => None,
    };
    if let Some(m) = &mask {
        hidden.iter_mut().zip(m).for_each(|(h, &k)| *h *= k);
    }
    let out_pre = matvec(w2, &hidden, Some(b2));
    let out = relu(&out_pre);
    EmbedCache {
        input: u.to_vec(),
        hidden_pre,
        hidden,
        mask,
        out_pre,
        out,
    }
}

fn embed_backward<T: Scalar>(
    c: &EmbedCache<T>,
    w1: &Tensor<T>,
    w2: &Tensor<T>,
    dout: &[T],
    g: [&mut Tensor<T>; 4],
) {
    let [gw1, gb1, gw2, gb2] = g;
    let dpre: Vec<T> = dout
        .iter()
        .zip(&c.out_pre)
        .map(|(&gd, &z)| if z > T::zero() { gd } else { T::zero() })
        .collect();
    let mut dh = matvec_backward(w2, &c.hidden, &dpre, gw2, Some(gb2));
    if let Some(m) = &c.mask {
        dh.iter_mut().zip(m).for_each(|(g, &k)| *g *= k);
    }
    let dhp: Vec<T> = dh
        .iter()
        .zip(&c.hidden_pre)
        .map(|(&gd, &z)| if z > T::zero() { gd } else { T::zero() })
        .collect();
    matvec_backward(w1, &c.input, &dhp, gw1, Some(gb1));
}

fn check_tab<T: Scalar>(params: &ModelParams<T>, tab: &TabularVector<T>) -> Result<()> {
    let cfg = &params.config;
    if tab.c.len() != cfg.c_dim || tab.n.len() != cfg.n_dim {
        return Err(Error::Shape(format!(
            "tabular vector has c={}, n={}; model expects c={}, n={}",
            tab.c.len(),
            tab.n.len(),
            cfg.c_dim,
            cfg.n_dim
        )));
    }
    Ok(())
}

/// Dense embeddings `(c̃, ñ)`: two affine layers with ReLU for each
/// modality, dropout disabled.
pub fn embed_tabular<T: Scalar>(c: &[T], n: &[T], params: &ModelParams<T>) -> Result<(Vec<T>, Vec<T>)> {
    let tab = TabularVector { c: c.to_vec(), n: n.to_vec() };
    check_tab(params, &tab)?;
    let p = params;
    let no_rng = || None::<&mut rand_chacha::ChaCha8Rng>;
    let ce = embed_one(c, &p.cat_w1, &p.cat_b1, &p.cat_w2, &p.cat_b2, 0.0, no_rng());
    let ne = embed_one(n, &p.num_w1, &p.num_b1, &p.num_w2, &p.num_b2, 0.0, no_rng());
    Ok((ce.out, ne.out))
}

fn combine<T: Scalar>(proj: &[Vec<T>; 3], attn: &[T], slope: T) -> ([T; 3], [T; 3], [T; 3], Vec<T>) {
    let f = proj[0].len();
    let (a_q, a_k) = attn.split_at(f);
    let base = dot(a_q, &proj[0]);
    let pre = [0, 1, 2].map(|k| base + dot(a_k, &proj[k]));
    let scores = pre.map(|z| leaky(z, slope));
    let alpha = softmax(&scores);
    let alpha = [alpha[0], alpha[1], alpha[2]];
    let mut m = vec![T::zero(); f];
    for (k, p) in proj.iter().enumerate() {
        for (mi, &pi) in m.iter_mut().zip(p) {
            *mi += alpha[k] * pi;
        }
    }
    (pre, scores, alpha, m)
}

/// Query-anchored attention over the three branches with the text branch as
/// the query: `s_k = LeakyReLU(aᵀ[W_x x ‖ W_k u_k])`, coefficients are the
/// softmax of the scores and `m = Σ_k α_k W_k u_k`.
pub fn attention_combine<T: Scalar>(
    x: &[T],
    c_emb: &[T],
    n_emb: &[T],
    params: &ModelParams<T>,
) -> Result<(Vec<T>, FusionTrace<T>)> {
    let f = params.config.fusion_dim;
    if x.len() != params.config.encoder.d_model || c_emb.len() != f || n_emb.len() != f {
        return Err(Error::Shape("fusion inputs do not match the configured dimensions".into()));
    }
    let proj = [
        matvec(&params.w_x, x, None),
        matvec(&params.w_c, c_emb, None),
        matvec(&params.w_n, n_emb, None),
    ];
    let slope = T::of(params.config.leaky_slope);
    let (_, scores, coefficients, m) = combine(&proj, params.attn.data(), slope);
    if !(scores.iter().chain(&coefficients).chain(&m).all(|v| v.is_finite())) {
        return Err(Error::NonFinite("attention fusion".into()));
    }
    Ok((m.clone(), FusionTrace { coefficients, scores, m }))
}

/// Softmax over the two head logits.
pub fn classify<T: Scalar>(m: &[T], params: &ModelParams<T>) -> Vec<T> {
    softmax(&matvec(&params.head_w, m, Some(&params.head_b)))
}

pub(super) fn forward<T: Scalar, R: Rng>(
    params: &ModelParams<T>,
    x: &[T],
    tab: &TabularVector<T>,
    mode: FusionMode,
    mut rng: Option<&mut R>,
) -> Result<(Vec<T>, FusionCache<T>)> {
    let cfg = &params.config;
    if x.len() != cfg.encoder.d_model {
        return Err(Error::Shape(format!("text vector of {} for d_model {}", x.len(), cfg.encoder.d_model)));
    }
    let px = matvec(&params.w_x, x, None);
    let f = cfg.fusion_dim;
    let mut cache = FusionCache {
        mode,
        x: x.to_vec(),
        cat: None,
        num: None,
        proj: [px, Vec::new(), Vec::new()],
        pre_scores: [T::zero(); 3],
        m: Vec::new(),
        trace: None,
    };
    match mode {
        FusionMode::TextOnly => cache.m = cache.proj[0].clone(),
        FusionMode::AttentionFusion => {
            check_tab(params, tab)?;
            let p = params;
            let rate = cfg.mlp_dropout;
            let ce = embed_one(&tab.c, &p.cat_w1, &p.cat_b1, &p.cat_w2, &p.cat_b2, rate, rng.as_deref_mut());
            let ne = embed_one(&tab.n, &p.num_w1, &p.num_b1, &p.num_w2, &p.num_b2, rate, rng.as_deref_mut());
            cache.proj[1] = matvec(&p.w_c, &ce.out, None);
            cache.proj[2] = matvec(&p.w_n, &ne.out, None);
            debug_assert_eq!(cache.proj[1].len(), f);
            let (pre, scores, coefficients, m) = combine(&cache.proj, p.attn.data(), T::of(cfg.leaky_slope));
            cache.pre_scores = pre;
            cache.m = m.clone();
            cache.trace = Some(FusionTrace { coefficients, scores, m });
            cache.cat = Some(ce);
            cache.num = Some(ne);
        }
    }
    let probs = classify(&cache.m, params);
    if !probs.iter().chain(&cache.m).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("forward pass".into()));
    }
    Ok((probs, cache))
}

/// Accumulates parameter gradients of the fusion and head given the logit
/// gradient and returns the gradient with respect to `x`.
pub(super) fn backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: &FusionCache<T>,
    dlogits: &[T],
    grads: &mut ModelParams<T>,
) -> Vec<T> {
    let dm = matvec_backward(&params.head_w, &cache.m, dlogits, &mut grads.head_w, Some(&mut grads.head_b));
    let f = params.config.fusion_dim;
    let mut dproj = [dm.clone(), vec![T::zero(); f], vec![T::zero(); f]];
    if let (FusionMode::AttentionFusion, Some(trace)) = (cache.mode, &cache.trace) {
        let alpha = trace.coefficients;
        dproj[0].iter_mut().for_each(|v| *v = T::zero());
        let dalpha: Vec<T> = cache.proj.iter().map(|p| dot(&dm, p)).collect();
        for k in 0..3 {
            for (d, &g) in dproj[k].iter_mut().zip(&dm) {
                *d += alpha[k] * g;
            }
        }
        let dscores = softmax_backward(&alpha, &dalpha);
        let slope = T::of(params.config.leaky_slope);
        let a = params.attn.data();
        let (a_q, a_k) = a.split_at(f);
        for k in 0..3 {
            let z = cache.pre_scores[k];
            let dz = dscores[k] * if z > T::zero() { T::one() } else { slope };
            let ga = grads.attn.data_mut();
            for t in 0..f {
                ga[t] += dz * cache.proj[0][t];
                ga[f + t] += dz * cache.proj[k][t];
            }
            for t in 0..f {
                dproj[0][t] += dz * a_q[t];
                dproj[k][t] += dz * a_k[t];
            }
        }
        let cat = cache.cat.as_ref().expect("fusion cache holds embeddings");
        let num = cache.num.as_ref().expect("fusion cache holds embeddings");
        let dc = matvec_backward(&params.w_c, &cat.out, &dproj[1], &mut grads.w_c, None);
        let dn = matvec_backward(&params.w_n, &num.out, &dproj[2], &mut grads.w_n, None);
        let g = &mut *grads;
        embed_backward(
            cat,
            &params.cat_w1,
            &params.cat_w2,
            &dc,
            [&mut g.cat_w1, &mut g.cat_b1, &mut g.cat_w2, &mut g.cat_b2],
        );
        embed_backward(
            num,
            &params.num_w1,
            &params.num_w2,
            &dn,
            [&mut g.num_w1, &mut g.num_b1, &mut g.num_w2, &mut g.num_b2],
        );
    }
    matvec_backward(&params.w_x, &cache.x, &dproj[0], &mut grads.w_x, None)
}
