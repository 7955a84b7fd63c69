//! Hybrid classifier: a small transformer text encoder producing `x`, dense
//! embeddings of the categorical and numerical vectors, the query-anchored
//! attention combiner producing `m`, and a two-class softmax head.

mod checkpoint;
mod encoder;
mod fusion;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use encoder::EncoderCache;
pub use fusion::{attention_combine, classify, embed_tabular, FusionCache, FusionTrace};

use crate::tabular::TabularVector;
use crate::tensor::Tensor;
use crate::textprep::TokenSequence;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_multiplier: usize,
    pub dropout: f64,
    /// Maximum sequence length (positional table size).
    pub capacity: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            ffn_multiplier: 2,
            dropout: 0.1,
            capacity: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub vocab_size: usize,
    pub c_dim: usize,
    pub n_dim: usize,
    /// Common fusion dimension `d_f`.
    pub fusion_dim: usize,
    pub leaky_slope: f64,
    /// Dropout on the hidden layer of the tabular embedder.
    pub mlp_dropout: f64,
    /// Hidden width of the tabular embedder is `fusion_dim / mlp_division`.
    pub mlp_division: usize,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, vocab_size: usize, c_dim: usize, n_dim: usize) -> Self {
        Self {
            encoder,
            vocab_size,
            c_dim,
            n_dim,
            fusion_dim: 64,
            leaky_slope: 0.01,
            mlp_dropout: 0.1,
            mlp_division: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if e.d_model == 0 || e.n_heads == 0 || e.d_model % e.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", e.d_model, e.n_heads));
        }
        if !(0.0..1.0).contains(&e.dropout) || !(0.0..1.0).contains(&self.mlp_dropout) {
            return bad("dropout rates must lie in [0, 1)".into());
        }
        if e.ffn_multiplier == 0 || e.capacity == 0 || self.fusion_dim == 0 || self.mlp_division == 0 {
            return bad("ffn_multiplier, capacity, fusion_dim and mlp_division must be positive".into());
        }
        if self.vocab_size < 2 {
            return bad("vocabulary needs the two reserved tokens".into());
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.encoder.d_model / self.encoder.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.encoder.d_model * self.encoder.ffn_multiplier
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.fusion_dim / self.mlp_division).max(1)
    }
}

/// How `m` is formed from the branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `m = W_x x`; tabular inputs are bypassed.
    TextOnly,
    /// Attention-weighted sum over the text, categorical and numerical branches.
    AttentionFusion,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::TextOnly => "text_only",
            FusionMode::AttentionFusion => "attention_fusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub ff1_w: Tensor<T>,
    pub ff1_b: Tensor<T>,
    pub ff2_w: Tensor<T>,
    pub ff2_b: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
}

/// Every learnable tensor. Weight matrices are stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub token_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    /// Tabular embedder for `c`: `c_dim → hidden → d_f`, ReLU after each layer.
    pub cat_w1: Tensor<T>,
    pub cat_b1: Tensor<T>,
    pub cat_w2: Tensor<T>,
    pub cat_b2: Tensor<T>,
    /// Tabular embedder for `n`, same layout.
    pub num_w1: Tensor<T>,
    pub num_b1: Tensor<T>,
    pub num_w2: Tensor<T>,
    pub num_b2: Tensor<T>,
    /// Fusion projections `W_x` (`d_f × d_model`), `W_c`, `W_n` (`d_f × d_f`).
    pub w_x: Tensor<T>,
    pub w_c: Tensor<T>,
    pub w_n: Tensor<T>,
    /// Attention vector `a` of length `2·d_f`.
    pub attn: Tensor<T>,
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
}

fn layer_shapes(cfg: &ModelConfig) -> [(&'static str, Vec<usize>); 16] {
    let d = cfg.encoder.d_model;
    let h = cfg.ffn_dim();
    [
        ("wq", vec![d, d]),
        ("bq", vec![d]),
        ("wk", vec![d, d]),
        ("bk", vec![d]),
        ("wv", vec![d, d]),
        ("bv", vec![d]),
        ("wo", vec![d, d]),
        ("bo", vec![d]),
        ("ln1_gain", vec![d]),
        ("ln1_bias", vec![d]),
        ("ff1_w", vec![h, d]),
        ("ff1_b", vec![h]),
        ("ff2_w", vec![d, h]),
        ("ff2_b", vec![d]),
        ("ln2_gain", vec![d]),
        ("ln2_bias", vec![d]),
    ]
}

impl<T: Scalar> LayerParams<T> {
    fn tensors(&self) -> [&Tensor<T>; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
            &self.ln1_gain, &self.ln1_bias, &self.ff1_w, &self.ff1_b, &self.ff2_w, &self.ff2_b,
            &self.ln2_gain, &self.ln2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 16] {
        [
            &mut self.wq, &mut self.bq, &mut self.wk, &mut self.bk, &mut self.wv, &mut self.bv,
            &mut self.wo, &mut self.bo, &mut self.ln1_gain, &mut self.ln1_bias, &mut self.ff1_w,
            &mut self.ff1_b, &mut self.ff2_w, &mut self.ff2_b, &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }

    fn zeros(cfg: &ModelConfig) -> Self {
        let s = layer_shapes(cfg);
        let z = |i: usize| Tensor::zeros(&s[i].1);
        Self {
            wq: z(0),
            bq: z(1),
            wk: z(2),
            bk: z(3),
            wv: z(4),
            bv: z(5),
            wo: z(6),
            bo: z(7),
            ln1_gain: z(8),
            ln1_bias: z(9),
            ff1_w: z(10),
            ff1_b: z(11),
            ff2_w: z(12),
            ff2_b: z(13),
            ln2_gain: z(14),
            ln2_bias: z(15),
        }
    }
}

const TAIL: [&str; 14] = [
    "cat_w1", "cat_b1", "cat_w2", "cat_b2", "num_w1", "num_b1", "num_w2", "num_b2", "w_x", "w_c",
    "w_n", "attn", "head_w", "head_b",
];

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters (also the gradient accumulator layout).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let d = c.encoder.d_model;
        let f = c.fusion_dim;
        let h = c.mlp_hidden();
        Ok(Self {
            config: c.clone(),
            token_emb: Tensor::zeros(&[c.vocab_size, d]),
            pos_emb: Tensor::zeros(&[c.encoder.capacity, d]),
            layers: (0..c.encoder.n_layers).map(|_| LayerParams::zeros(c)).collect(),
            cat_w1: Tensor::zeros(&[h, c.c_dim]),
            cat_b1: Tensor::zeros(&[h]),
            cat_w2: Tensor::zeros(&[f, h]),
            cat_b2: Tensor::zeros(&[f]),
            num_w1: Tensor::zeros(&[h, c.n_dim]),
            num_b1: Tensor::zeros(&[h]),
            num_w2: Tensor::zeros(&[f, h]),
            num_b2: Tensor::zeros(&[f]),
            w_x: Tensor::zeros(&[f, d]),
            w_c: Tensor::zeros(&[f, f]),
            w_n: Tensor::zeros(&[f, f]),
            attn: Tensor::zeros(&[2 * f]),
            head_w: Tensor::zeros(&[2, f]),
            head_b: Tensor::zeros(&[2]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Glorot-uniform weights, small uniform embeddings, unit layer-norm gains
    /// and zero biases.
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let glorot = |t: &mut Tensor<T>, rng: &mut R| {
            let (o, i) = (t.rows(), t.cols());
            let lim = (6.0 / (o + i).max(1) as f64).sqrt();
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = T::of(rng.gen_range(-lim..=lim)));
        };
        let small = |t: &mut Tensor<T>, rng: &mut R| {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = T::of(rng.gen_range(-0.1..=0.1)));
        };
        small(&mut p.token_emb, rng);
        small(&mut p.pos_emb, rng);
        for l in &mut p.layers {
            for w in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.ff1_w, &mut l.ff2_w] {
                glorot(w, rng);
            }
            l.ln1_gain.map_inplace(|_| T::one());
            l.ln2_gain.map_inplace(|_| T::one());
        }
        for w in [&mut p.cat_w1, &mut p.cat_w2, &mut p.num_w1, &mut p.num_w2, &mut p.w_x, &mut p.w_c, &mut p.w_n, &mut p.head_w] {
            glorot(w, rng);
        }
        let lim = (6.0 / (2 * config.fusion_dim + 1) as f64).sqrt();
        p.attn
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = T::of(rng.gen_range(-lim..=lim)));
        Ok(p)
    }

    /// `(name, tensor)` pairs in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("token_emb".into(), &self.token_emb),
            ("pos_emb".into(), &self.pos_emb),
        ];
        let shapes = layer_shapes(&self.config);
        for (i, l) in self.layers.iter().enumerate() {
            for (t, (n, _)) in l.tensors().into_iter().zip(shapes.iter()) {
                out.push((format!("layers.{i}.{n}"), t));
            }
        }
        let rest = [
            &self.cat_w1, &self.cat_b1, &self.cat_w2, &self.cat_b2, &self.num_w1, &self.num_b1,
            &self.num_w2, &self.num_b2, &self.w_x, &self.w_c, &self.w_n, &self.attn, &self.head_w,
            &self.head_b,
        ];
        for (n, t) in TAIL.iter().zip(rest) {
            out.push((n.to_string(), t));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = vec![&mut self.token_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.extend([
            &mut self.cat_w1, &mut self.cat_b1, &mut self.cat_w2, &mut self.cat_b2,
            &mut self.num_w1, &mut self.num_b1, &mut self.num_w2, &mut self.num_b2,
            &mut self.w_x, &mut self.w_c, &mut self.w_n, &mut self.attn, &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams<T>, scale: T) {
        let others: Vec<&Tensor<T>> = other.named_tensors().into_iter().map(|(_, t)| t).collect();
        for (a, b) in self.tensors_mut().into_iter().zip(others) {
            a.add_scaled(b, scale);
        }
    }

    pub fn global_norm(&self) -> T {
        self.named_tensors()
            .iter()
            .map(|(_, t)| t.sum_squares())
            .sum::<T>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.all_finite())
    }

    /// Runs the encoder on one sequence: embeddings plus positions, the
    /// encoder layers with pad masking, then the mean over non-pad
    /// positions. An all-pad sequence encodes to the zero vector.
    pub fn encode_text(&self, seq: &TokenSequence) -> Result<Vec<T>> {
        encoder::forward(self, seq, None::<&mut rand_chacha::ChaCha8Rng>).map(|(x, _)| x)
    }

    /// Full inference pass with dropout disabled.
    pub fn forward(&self, seq: &TokenSequence, tab: &TabularVector<T>, mode: FusionMode) -> Result<Prediction<T>> {
        let x = self.encode_text(seq)?;
        self.forward_encoded(&x, tab, mode)
    }

    /// Inference from an already encoded text vector `x`.
    pub fn forward_encoded(&self, x: &[T], tab: &TabularVector<T>, mode: FusionMode) -> Result<Prediction<T>> {
        let (probs, cache) = fusion::forward(self, x, tab, mode, None::<&mut rand_chacha::ChaCha8Rng>)?;
        Ok(Prediction {
            probs,
            trace: cache.trace,
        })
    }
}

/// Class probabilities `[negative, positive]` plus the fusion trace (absent
/// in text-only mode).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub probs: Vec<T>,
    pub trace: Option<FusionTrace<T>>,
}

impl<T: Scalar> Prediction<T> {
    pub fn positive(&self) -> T {
        self.probs[1]
    }

    /// Argmax; ties go to the negative class.
    pub fn class(&self) -> crate::corpus::Label {
        if self.probs[1] > self.probs[0] {
            crate::corpus::Label::Positive
        } else {
            crate::corpus::Label::Negative
        }
    }
}

/// Everything the backward pass needs from one training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub encoder: EncoderCache<T>,
    pub fusion: FusionCache<T>,
    pub probs: Vec<T>,
}

/// Forward pass recording intermediates. Dropout is applied only when an
/// RNG is supplied.
pub fn forward_train<T: Scalar, R: Rng>(
    params: &ModelParams<T>,
    seq: &TokenSequence,
    tab: &TabularVector<T>,
    mode: FusionMode,
    mut rng: Option<&mut R>,
) -> Result<ForwardCache<T>> {
    let (x, encoder) = encoder::forward(params, seq, rng.as_deref_mut())?;
    let (probs, fusion) = fusion::forward(params, &x, tab, mode, rng)?;
    Ok(ForwardCache {
        encoder,
        fusion,
        probs,
    })
}

/// Accumulates `∂(−ln p[label]) / ∂θ · weight` into `grads`.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    label: crate::corpus::Label,
    weight: T,
    grads: &mut ModelParams<T>,
) {
    let mut dlogits = cache.probs.clone();
    dlogits[label.index()] -= T::one();
    dlogits.iter_mut().for_each(|g| *g *= weight);
    let dx = fusion::backward(params, &cache.fusion, &dlogits, grads);
    encoder::backward(params, &cache.encoder, &dx, grads);
}
