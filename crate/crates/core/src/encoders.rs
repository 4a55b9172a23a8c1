//! Sentence encoders mapping an [`EncodedExample`] to the representation
//! consumed by the heads: a pooled embedding mean, a CNN with parallel kernel
//! widths, or a bidirectional GRU.
//!
//! Unless strict parity is requested, encoders only see the first
//! `real_length` positions; pad rows of the output are implicitly zero and
//! never enter attention.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdResult, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::corpus::{EncodedExample, Vocabulary, PAD_ID};
use crate::error::{Error, Result};

pub use crate::embeddings::PretrainedEmbeddings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mean,
    Caml,
    Bigru,
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(EncoderKind::Mean),
            "caml" | "cnn" => Ok(EncoderKind::Caml),
            "bigru" => Ok(EncoderKind::Bigru),
            other => Err(Error::InvalidArgument(format!("unknown model kind `{other}`"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Mean => "mean",
            EncoderKind::Caml => "caml",
            EncoderKind::Bigru => "bigru",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Bi-GRU output width `h` (each direction has `h / 2`).
    pub hidden: usize,
    pub cnn_maps: usize,
    pub cnn_widths: Vec<usize>,
    pub n_tok: usize,
    /// Run encoders and attention over pad positions too.
    pub strict_parity: bool,
}

impl EncoderConfig {
    /// Width of the encoder output rows.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::Mean => self.embed_dim,
            EncoderKind::Caml => self.cnn_maps * self.cnn_widths.len(),
            EncoderKind::Bigru => self.hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.embed_dim == 0 || self.n_tok == 0 || self.vocab_size < 2 {
            return bad("embedding size, n_tok and vocabulary must be positive".into());
        }
        match self.kind {
            EncoderKind::Bigru if self.hidden == 0 || self.hidden % 2 != 0 => {
                bad(format!("Bi-GRU hidden size must be even and positive, got {}", self.hidden))
            }
            EncoderKind::Caml if self.cnn_maps == 0 || self.cnn_widths.is_empty() => {
                bad("CNN needs at least one kernel width and one map".into())
            }
            EncoderKind::Caml => match self.cnn_widths.iter().find(|&&w| w == 0 || w > self.n_tok) {
                Some(w) => bad(format!("kernel width {w} exceeds n_tok {}", self.n_tok)),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

/// Weights of one GRU direction. Gate blocks are stored side by side:
/// `w_x = [W_z | W_g | W_n]` (`e × 3d`), `u_zg = [U_z | U_g]` (`d × 2d`),
/// `u_n` (`d × d`) and `b = [b_z | b_g | b_n]` (`1 × 3d`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruWeights {
    pub w_x: ParamId,
    pub u_zg: ParamId,
    pub u_n: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGroup {
    pub width: usize,
    pub kernel: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncoderWeights {
    Mean,
    Caml(Vec<ConvGroup>),
    Bigru { forward: GruWeights, backward: GruWeights },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub weights: EncoderWeights,
    pub strict_parity: bool,
}

/// Encoder output `r`: one row per encoded position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiddenSequence {
    pub r: Var,
    /// Rows of `r` (the real length, or `n_tok` under strict parity).
    pub rows: usize,
    pub real_length: usize,
    pub n_tok: usize,
}

fn uniform<T: Real, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

pub const EMBEDDING_INIT_BOUND: f64 = 0.05;

/// Embedding table `|V| × e`: pretrained rows where available, otherwise
/// uniform(−0.05, 0.05); the pad row is zero.
pub fn init_embedding_table<T: Real, R: Rng>(
    rng: &mut R,
    vocab_size: usize,
    dim: usize,
    pretrained: Option<(&PretrainedEmbeddings, &Vocabulary)>,
) -> Result<Tensor<T>> {
    let mut table = uniform::<T, R>(rng, &[vocab_size, dim], EMBEDDING_INIT_BOUND);
    if let Some((emb, vocab)) = pretrained {
        if emb.dim() != dim {
            return Err(Error::InvalidArgument(format!(
                "pretrained embeddings have dimension {}, model expects {dim}",
                emb.dim()
            )));
        }
        for (id, token) in vocab.real_tokens().iter().enumerate().map(|(i, t)| (i + 2, t)) {
            if id >= vocab_size {
                break;
            }
            if let Some(v) = emb.lookup(token) {
                for (dst, &src) in table.data_mut()[id * dim..(id + 1) * dim].iter_mut().zip(v) {
                    *dst = T::lit(src);
                }
            }
        }
    }
    table.data_mut()[PAD_ID * dim..(PAD_ID + 1) * dim]
        .iter_mut()
        .for_each(|v| *v = T::zero());
    Ok(table)
}

fn register_gru<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    prefix: &str,
    input: usize,
    d: usize,
) -> AdResult<GruWeights> {
    let bound = 1.0 / (d as f64).sqrt();
    Ok(GruWeights {
        w_x: store.add(format!("{prefix}.w_x"), uniform(rng, &[input, 3 * d], bound))?,
        u_zg: store.add(format!("{prefix}.u_zg"), uniform(rng, &[d, 2 * d], bound))?,
        u_n: store.add(format!("{prefix}.u_n"), uniform(rng, &[d, d], bound))?,
        b: store.add(format!("{prefix}.b"), Tensor::zeros(&[1, 3 * d]))?,
        hidden: d,
    })
}

impl EncoderParams {
    /// Registers the embedding table and encoder weights in `store`.
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        config: &EncoderConfig,
        rng: &mut R,
        pretrained: Option<(&PretrainedEmbeddings, &Vocabulary)>,
    ) -> Result<Self> {
        config.validate()?;
        let table = init_embedding_table(rng, config.vocab_size, config.embed_dim, pretrained)?;
        let embedding = store.add("embedding", table)?;
        store.freeze_row(embedding, PAD_ID);
        let e = config.embed_dim;
        let weights = match config.kind {
            EncoderKind::Mean => EncoderWeights::Mean,
            EncoderKind::Caml => {
                let mut groups = Vec::new();
                for &width in &config.cnn_widths {
                    let bound = 1.0 / ((width * e) as f64).sqrt();
                    let kernel = store.add(
                        format!("cnn.k{width}.kernel"),
                        uniform(rng, &[width, e, config.cnn_maps], bound),
                    )?;
                    let bias = store.add(format!("cnn.k{width}.bias"), Tensor::zeros(&[1, config.cnn_maps]))?;
                    groups.push(ConvGroup { width, kernel, bias });
                }
                EncoderWeights::Caml(groups)
            }
            EncoderKind::Bigru => {
                let d = config.hidden / 2;
                EncoderWeights::Bigru {
                    forward: register_gru(store, rng, "gru.fwd", e, d)?,
                    backward: register_gru(store, rng, "gru.bwd", e, d)?,
                }
            }
        };
        Ok(EncoderParams {
            embedding,
            weights,
            strict_parity: config.strict_parity,
        })
    }

    fn encoded_ids<'x>(&self, x: &'x EncodedExample) -> Result<&'x [usize]> {
        if x.real_length == 0 {
            return Err(Error::EmptyInput("sentence has no tokens".into()));
        }
        Ok(if self.strict_parity {
            &x.token_ids
        } else {
            x.real_ids()
        })
    }
}

/// Mean of the embeddings of the real tokens, `[1 × e]`.
pub fn mean_encoder_forward<T: Real>(
    g: &mut Graph<'_, T>,
    x: &EncodedExample,
    p: &EncoderParams,
) -> Result<Var> {
    if x.real_length == 0 {
        return Err(Error::EmptyInput("sentence has no tokens".into()));
    }
    let table = g.param(p.embedding);
    let emb = g.embedding_lookup(table, x.real_ids())?;
    Ok(g.mean_over_rows(emb)?)
}

/// One GRU step given the precomputed input projection `x_t·W_x + b`
/// (`1 × 3d`).
fn gru_step<T: Real>(
    g: &mut Graph<'_, T>,
    x_proj: Var,
    h_prev: Var,
    w: &GruWeights,
) -> AdResult<Var> {
    let d = w.hidden;
    let u_zg = g.param(w.u_zg);
    let u_n = g.param(w.u_n);
    let hu = g.matmul(h_prev, u_zg)?;
    let xzg = g.slice_cols(x_proj, 0, 2 * d)?;
    let pre = g.add(xzg, hu)?;
    let gates = g.sigmoid(pre)?;
    let z = g.slice_cols(gates, 0, d)?;
    let reset = g.slice_cols(gates, d, 2 * d)?;
    let gated = g.mul(reset, h_prev)?;
    let hn = g.matmul(gated, u_n)?;
    let xn = g.slice_cols(x_proj, 2 * d, 3 * d)?;
    let npre = g.add(xn, hn)?;
    let cand = g.tanh(npre)?;
    // h' = (1 − z) ⊙ h + z ⊙ ñ, written as h + z ⊙ (ñ − h)
    let diff = g.sub(cand, h_prev)?;
    let step = g.mul(z, diff)?;
    g.add(h_prev, step)
}

/// Single GRU update: `z = σ(W_z x + U_z h + b_z)`, `g = σ(W_g x + U_g h + b_g)`,
/// `ñ = tanh(W_n x + U_n (g ⊙ h) + b_n)`, `h' = (1 − z) ⊙ h + z ⊙ ñ`.
/// `x_t` is `[1 × e]` and `h_prev` is `[1 × d]`.
pub fn gru_cell<T: Real>(
    g: &mut Graph<'_, T>,
    x_t: Var,
    h_prev: Var,
    w: &GruWeights,
) -> Result<Var> {
    let w_x = g.param(w.w_x);
    let b = g.param(w.b);
    let xw = g.matmul(x_t, w_x)?;
    let x_proj = g.add(xw, b)?;
    Ok(gru_step(g, x_proj, h_prev, w)?)
}

fn run_direction<T: Real>(
    g: &mut Graph<'_, T>,
    inputs: Var,
    rows: usize,
    w: &GruWeights,
    reverse: bool,
) -> AdResult<Vec<Var>> {
    let w_x = g.param(w.w_x);
    let b = g.param(w.b);
    let xw = g.matmul(inputs, w_x)?;
    let proj = g.add(xw, b)?;
    let mut h = g.constant(Tensor::zeros(&[1, w.hidden]))?;
    let mut states = vec![h; rows];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..rows).rev())
    } else {
        Box::new(0..rows)
    };
    for t in order {
        let x_t = g.slice_rows(proj, t, t + 1)?;
        h = gru_step(g, x_t, h, w)?;
        states[t] = h;
    }
    Ok(states)
}

/// Bidirectional GRU; row `t` of `r` is `[forward_t | backward_t]`.
pub fn bigru_forward<T: Real>(
    g: &mut Graph<'_, T>,
    x: &EncodedExample,
    p: &EncoderParams,
) -> Result<HiddenSequence> {
    let EncoderWeights::Bigru { forward, backward } = &p.weights else {
        return Err(Error::InvalidArgument("encoder is not a Bi-GRU".into()));
    };
    let ids = p.encoded_ids(x)?;
    let table = g.param(p.embedding);
    let emb = g.embedding_lookup(table, ids)?;
    let rows = ids.len();
    let f = run_direction(g, emb, rows, forward, false)?;
    let b = run_direction(g, emb, rows, backward, true)?;
    let fwd = g.stack_rows(&f)?;
    let bwd = g.stack_rows(&b)?;
    let r = g.concat(&[fwd, bwd])?;
    Ok(HiddenSequence {
        r,
        rows,
        real_length: x.real_length,
        n_tok: x.n_tok(),
    })
}

/// Parallel same-padded convolutions with tanh, concatenated per position.
pub fn cnn_encoder_forward<T: Real>(
    g: &mut Graph<'_, T>,
    x: &EncodedExample,
    p: &EncoderParams,
) -> Result<HiddenSequence> {
    let EncoderWeights::Caml(groups) = &p.weights else {
        return Err(Error::InvalidArgument("encoder is not a CNN".into()));
    };
    let ids = p.encoded_ids(x)?;
    if let Some(gr) = groups.iter().find(|gr| gr.width > x.n_tok()) {
        return Err(Error::InvalidArgument(format!(
            "kernel width {} exceeds n_tok {}",
            gr.width,
            x.n_tok()
        )));
    }
    let table = g.param(p.embedding);
    let emb = g.embedding_lookup(table, ids)?;
    let rows = ids.len();
    let mut outs = Vec::with_capacity(groups.len());
    for gr in groups {
        let kernel = g.param(gr.kernel);
        let bias = g.param(gr.bias);
        // Kernels wider than the real length still see the zero padding.
        let conv = if gr.width <= rows {
            g.conv1d_same(emb, kernel)?
        } else {
            let pad = g.constant(Tensor::zeros(&[gr.width - rows, g.shape(emb)[1]]))?;
            let padded = g.stack_rows(&[emb, pad])?;
            let full = g.conv1d_same(padded, kernel)?;
            g.slice_rows(full, 0, rows)?
        };
        let pre = g.add(conv, bias)?;
        outs.push(g.tanh(pre)?);
    }
    let r = if outs.len() == 1 { outs[0] } else { g.concat(&outs)? };
    Ok(HiddenSequence {
        r,
        rows,
        real_length: x.real_length,
        n_tok: x.n_tok(),
    })
}

/// Dispatches to the sequence encoder named by `p`.
pub fn sequence_forward<T: Real>(
    g: &mut Graph<'_, T>,
    x: &EncodedExample,
    p: &EncoderParams,
) -> Result<HiddenSequence> {
    match p.weights {
        EncoderWeights::Mean => Err(Error::InvalidArgument(
            "the mean encoder produces a pooled vector, not a sequence".into(),
        )),
        EncoderWeights::Caml(_) => cnn_encoder_forward(g, x, p),
        EncoderWeights::Bigru { .. } => bigru_forward(g, x, p),
    }
}
