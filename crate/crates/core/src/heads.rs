//! Output heads mapping an encoder representation to `n_L × n_C` logits.
//!
//! Attention heads compute `u = tanh(r·W0 + b0)` once, then either one
//! context vector per label (`α_l = softmax(v_l·uᵀ)`, `s_l = α_l·r`) or a
//! single shared one. `W0` is stored input-major (`h_in × h`).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdResult, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::schema::N_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Pooled,
    Single,
    PerLabel,
}

impl HeadKind {
    pub fn has_attention(self) -> bool {
        !matches!(self, HeadKind::Pooled)
    }
}

impl FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(HeadKind::Pooled),
            "single" | "single-attention" => Ok(HeadKind::Single),
            "per-label" | "per-label-attention" => Ok(HeadKind::PerLabel),
            other => Err(Error::InvalidArgument(format!("unknown head kind `{other}`"))),
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Pooled => "pooled",
            HeadKind::Single => "single",
            HeadKind::PerLabel => "per-label",
        })
    }
}

/// One fully connected layer, `x·w + b` with `w` input-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
    ) -> AdResult<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let data = (0..input * output).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
        Ok(Dense {
            w: store.add(format!("{name}.w"), Tensor::new(vec![input, output], data)?)?,
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, output]))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> AdResult<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

/// A per-label classifier: one linear layer, or a stack of layers with
/// rectified-linear activations between them and none on the output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classifier {
    pub layers: Vec<Dense>,
}

impl Classifier {
    fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: &[usize],
    ) -> AdResult<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(N_CLASSES);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(store, rng, &format!("{name}.l{i}"), w[0], w[1]))
            .collect::<AdResult<_>>()?;
        Ok(Classifier { layers })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> AdResult<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Per-label deep classifier applied to `s_l` (`[1 × h]`), giving `[1 × n_C]`.
pub fn deep_per_label_classifier<T: Real>(
    g: &mut Graph<'_, T>,
    s_l: Var,
    classifier: &Classifier,
) -> Result<Var> {
    Ok(classifier.forward(g, s_l)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionHeadParams {
    pub w0: ParamId,
    pub b0: ParamId,
    /// `n_L × h` for per-label attention, `1 × h` for single attention.
    pub v: ParamId,
    pub classifiers: Vec<Classifier>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PooledHeadParams {
    pub out: Dense,
    pub n_labels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadParams {
    Pooled(PooledHeadParams),
    Attention { kind: HeadKind, params: AttentionHeadParams },
}

impl HeadParams {
    /// `deep` lists hidden widths of the per-label classifiers (empty for a
    /// single linear layer); pooled heads only support the linear form.
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        kind: HeadKind,
        input: usize,
        n_labels: usize,
        deep: &[usize],
    ) -> Result<Self> {
        if n_labels == 0 || input == 0 {
            return Err(Error::InvalidArgument("head needs labels and a positive input width".into()));
        }
        if kind == HeadKind::Pooled {
            if !deep.is_empty() {
                return Err(Error::InvalidArgument(
                    "the deep classifier requires an attention head".into(),
                ));
            }
            let out = Dense::init(store, rng, "pooled", input, n_labels * N_CLASSES)?;
            return Ok(HeadParams::Pooled(PooledHeadParams { out, n_labels }));
        }
        let bound = 1.0 / (input as f64).sqrt();
        let mut uniform = |rows: usize| -> AdResult<Tensor<T>> {
            let data = (0..rows * input).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
            Tensor::new(vec![rows, input], data)
        };
        let w0 = store.add("attn.w0", uniform(input)?)?;
        let b0 = store.add("attn.b0", Tensor::zeros(&[1, input]))?;
        let n_v = if kind == HeadKind::PerLabel { n_labels } else { 1 };
        let v = store.add("attn.v", uniform(n_v)?)?;
        let classifiers = (0..n_labels)
            .map(|l| Classifier::init(store, rng, &format!("cls{l}"), input, deep))
            .collect::<AdResult<_>>()?;
        Ok(HeadParams::Attention {
            kind,
            params: AttentionHeadParams { w0, b0, v, classifiers },
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            HeadParams::Pooled(_) => HeadKind::Pooled,
            HeadParams::Attention { kind, .. } => *kind,
        }
    }
}

/// Graph handles for a head's outputs: `logits` is `n_L × n_C`; `attention`
/// covers the encoded rows only (pads are re-added by the caller).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadOutput {
    pub logits: Var,
    pub attention: Option<Var>,
}

fn attend<T: Real>(g: &mut Graph<'_, T>, r: Var, p: &AttentionHeadParams) -> Result<(Var, Var)> {
    let w0 = g.param(p.w0);
    let b0 = g.param(p.b0);
    if g.shape(r).len() != 2 || g.shape(r)[1] != g.shape(w0)[0] {
        return Err(Error::InvalidArgument(format!(
            "representation of shape {:?} does not match attention width {}",
            g.shape(r),
            g.shape(w0)[0]
        )));
    }
    if g.shape(r)[0] == 0 {
        return Err(Error::EmptyInput("no positions to attend over".into()));
    }
    let rw = g.matmul(r, w0)?;
    let pre = g.add(rw, b0)?;
    let u = g.tanh(pre)?;
    let ut = g.transpose(u)?;
    let v = g.param(p.v);
    let scores = g.matmul(v, ut)?;
    let alpha = g.softmax_rows(scores)?;
    let s = g.matmul(alpha, r)?;
    Ok((alpha, s))
}

/// Per-label attention: one context vector and attended representation per
/// label, each fed to that label's classifier.
pub fn per_label_attention_forward<T: Real>(
    g: &mut Graph<'_, T>,
    r: Var,
    p: &AttentionHeadParams,
) -> Result<HeadOutput> {
    let (alpha, s) = attend(g, r, p)?;
    if g.shape(s)[0] != p.classifiers.len() {
        return Err(Error::InvalidArgument(format!(
            "{} context vectors for {} classifiers",
            g.shape(s)[0],
            p.classifiers.len()
        )));
    }
    let mut rows = Vec::with_capacity(p.classifiers.len());
    for (l, c) in p.classifiers.iter().enumerate() {
        let s_l = g.slice_rows(s, l, l + 1)?;
        rows.push(c.forward(g, s_l)?);
    }
    let logits = g.stack_rows(&rows)?;
    Ok(HeadOutput {
        logits,
        attention: Some(alpha),
    })
}

/// Single attention: one shared attended vector feeds every label's classifier.
pub fn single_attention_forward<T: Real>(
    g: &mut Graph<'_, T>,
    r: Var,
    p: &AttentionHeadParams,
) -> Result<HeadOutput> {
    let (alpha, s) = attend(g, r, p)?;
    if g.shape(s)[0] != 1 {
        return Err(Error::InvalidArgument("single attention needs exactly one context vector".into()));
    }
    let mut rows = Vec::with_capacity(p.classifiers.len());
    for c in &p.classifiers {
        rows.push(c.forward(g, s)?);
    }
    let logits = g.stack_rows(&rows)?;
    Ok(HeadOutput {
        logits,
        attention: Some(alpha),
    })
}

/// One linear map from a pooled vector to `n_L · n_C` outputs, reshaped to rows.
pub fn pooled_softmax_forward<T: Real>(
    g: &mut Graph<'_, T>,
    pooled: Var,
    p: &PooledHeadParams,
) -> Result<HeadOutput> {
    let expected = g.store().get(p.out.w).shape()[0];
    if g.shape(pooled) != [1, expected] {
        return Err(Error::InvalidArgument(format!(
            "pooled vector of shape {:?}, head expects [1, {expected}]",
            g.shape(pooled)
        )));
    }
    let flat = p.out.forward(g, pooled)?;
    let logits = g.reshape(flat, &[p.n_labels, N_CLASSES])?;
    Ok(HeadOutput { logits, attention: None })
}

/// Row-wise softmax of a logits tensor.
pub fn probabilities<T: Real>(logits: &Tensor<T>) -> Tensor<f64> {
    let c = logits.cols();
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(c) {
        let max = row.iter().map(|v| v.to_f64_lossless()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossless() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Argmax per row; the first maximum wins.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    logits
        .data()
        .chunks(logits.cols())
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(store: &mut ParamStore<f64>, id: ParamId, values: &[f64]) {
        store.get_mut(id).data_mut().copy_from_slice(values);
    }

    fn worked_example(kind: HeadKind, n_labels: usize) -> (ParamStore<f64>, AttentionHeadParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let HeadParams::Attention { params, .. } = HeadParams::init(&mut store, &mut rng, kind, 2, n_labels, &[]).unwrap() else {
            unreachable!()
        };
        set(&mut store, params.w0, &[1.0, 0.0, 0.0, 1.0]);
        let v: Vec<f64> = (0..store.get(params.v).rows()).flat_map(|_| [1.0, 0.0]).collect();
        set(&mut store, params.v, &v);
        (store, params)
    }

    #[test]
    fn hand_evaluated_attention() {
        let (store, p) = worked_example(HeadKind::PerLabel, 3);
        let mut g = Graph::new(&store);
        let r = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
        let out = per_label_attention_forward(&mut g, r, &p).unwrap();
        let alpha = g.value(out.attention.unwrap());
        let e = 1f64.tanh().exp();
        let a0 = e / (e + 1.0);
        assert_abs_diff_eq!(alpha.at(0, 0), a0, epsilon = 1e-15);
        assert_abs_diff_eq!(alpha.at(0, 0), 0.6817, epsilon = 1e-4);
        assert_abs_diff_eq!(alpha.at(0, 1), 0.3183, epsilon = 1e-4);
        assert_eq!(g.shape(out.logits), &[3, 4]);

        let (store, p) = worked_example(HeadKind::Single, 3);
        let mut g = Graph::new(&store);
        let r = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
        let (alpha, s) = attend(&mut g, r, &p).unwrap();
        assert_eq!(g.shape(alpha), &[1, 2]);
        assert_abs_diff_eq!(g.value(s).at(0, 0), a0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.value(s).at(0, 1), 1.0 - a0, epsilon = 1e-15);
    }

    #[test]
    fn zero_context_is_uniform() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let HeadParams::Attention { params, .. } = HeadParams::init(&mut store, &mut rng, HeadKind::PerLabel, 3, 2, &[]).unwrap() else {
            unreachable!()
        };
        store.get_mut(params.v).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut g = Graph::new(&store);
        let r = g.constant(Tensor::from_f64(&[5, 3], &(0..15).map(|i| i as f64 * 0.1).collect::<Vec<_>>()).unwrap()).unwrap();
        let out = per_label_attention_forward(&mut g, r, &params).unwrap();
        assert!(g.value(out.attention.unwrap()).data().iter().all(|&a| (a - 0.2).abs() < 1e-15));
    }

    #[test]
    fn pooled_bias_slices() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let HeadParams::Pooled(p) = HeadParams::init(&mut store, &mut rng, HeadKind::Pooled, 3, 31, &[]).unwrap() else {
            unreachable!()
        };
        assert_eq!(store.get(p.out.w).shape(), &[3, 124]);
        store.get_mut(p.out.w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let bias: Vec<f64> = (0..124).map(|i| i as f64).collect();
        set(&mut store, p.out.b, &bias);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row(&[1.0, 2.0, 3.0])).unwrap();
        let out = pooled_softmax_forward(&mut g, x, &p).unwrap();
        let logits = g.value(out.logits);
        assert_eq!(logits.shape(), &[31, 4]);
        assert_eq!(logits.row_slice(7), &[28.0, 29.0, 30.0, 31.0]);
        let probs = probabilities(logits);
        for r in 0..31 {
            assert_abs_diff_eq!(probs.row_slice(r).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let bad = g.constant(Tensor::row(&[1.0, 2.0])).unwrap();
        assert!(pooled_softmax_forward(&mut g, bad, &p).is_err());
    }

    #[test]
    fn deep_classifier_matches_layerwise_reference() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = Classifier::init(&mut store, &mut rng, "c", 3, &[5, 4]).unwrap();
        for layer in &c.layers {
            let n = store.get(layer.b).len();
            let b: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.2).collect();
            set(&mut store, layer.b, &b);
        }
        let x = [0.3, -0.7, 1.1];
        let mut h = x.to_vec();
        for (i, layer) in c.layers.iter().enumerate() {
            let w = store.get(layer.w);
            let b = store.get(layer.b);
            let mut next = Vec::new();
            for j in 0..w.cols() {
                let mut s = b.data()[j];
                for (k, hk) in h.iter().enumerate() {
                    s += hk * w.at(k, j);
                }
                next.push(if i + 1 < c.layers.len() { s.max(0.0) } else { s });
            }
            h = next;
        }
        let mut g = Graph::new(&store);
        let xv = g.constant(Tensor::row(&x)).unwrap();
        let out = deep_per_label_classifier(&mut g, xv, &c).unwrap();
        for (a, b) in g.value(out).data().iter().zip(&h) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }

        let mut zero = store.clone();
        for layer in &c.layers {
            zero.get_mut(layer.w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new(&zero);
        let xv = g.constant(Tensor::row(&x)).unwrap();
        let out = deep_per_label_classifier(&mut g, xv, &c).unwrap();
        assert_eq!(g.value(out).data(), zero.get(c.layers[2].b).data());
    }

    #[test]
    fn argmax_is_shift_invariant() {
        let t = Tensor::from_rows(&[vec![0.1, 0.5, 0.5, -1.0], vec![3.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
        assert_eq!(argmax_rows(&t.map(|v| v + 100.0)), vec![1, 0]);
    }
}
