//! Label-weighted cross entropy, Adam, mini-batching and early stopping.

use num_rational::Ratio;
use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Gradients, Graph, ParamStore, Real, Tensor, Var};
use crate::corpus::{build_vocab, tokenize, AnnotatedSentence, EncodedExample, DEFAULT_N_TOK};
use crate::encoders::{EncoderConfig, EncoderKind, PretrainedEmbeddings};
use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::metrics::{accumulate_confusion, f1_macro, f1_micro};
use crate::model::{Model, ModelConfig, DEEP_WIDTHS};
use crate::schema::{CertaintyClass, LabelSchema};

/// Per-label loss weights `w_nm = (n / o_l)^β` and `w_m = (n / (n − o_l))^β`,
/// where `o_l` counts training sentences in which label `l` is not mentioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub n: u64,
    /// `o_l` after clamping into `[1, n − 1]`.
    pub not_mentioned: Vec<u64>,
    pub w_not_mentioned: Vec<f64>,
    pub w_mentioned: Vec<f64>,
}

impl LossWeights {
    /// All weights 1.
    pub fn uniform(n_labels: usize) -> Self {
        LossWeights {
            beta: 0.0,
            n: 0,
            not_mentioned: vec![0; n_labels],
            w_not_mentioned: vec![1.0; n_labels],
            w_mentioned: vec![1.0; n_labels],
        }
    }

    pub fn from_counts(n: u64, not_mentioned: &[u64], beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::InvalidArgument(format!("β must be finite and non-negative, got {beta}")));
        }
        if beta == 0.0 {
            let mut w = Self::uniform(not_mentioned.len());
            w.n = n;
            w.not_mentioned = not_mentioned.to_vec();
            return Ok(w);
        }
        if n < 2 {
            return Err(Error::EmptyInput("label weighting needs at least two training sentences".into()));
        }
        let mut clamped = Vec::with_capacity(not_mentioned.len());
        for (l, &o) in not_mentioned.iter().enumerate() {
            let c = o.clamp(1, n - 1);
            if c != o {
                log::warn!("label {l}: not-mentioned count {o} of {n} clamped to {c}");
            }
            clamped.push(c);
        }
        let mut w = LossWeights {
            beta,
            n,
            not_mentioned: clamped,
            w_not_mentioned: Vec::new(),
            w_mentioned: Vec::new(),
        };
        for l in 0..w.not_mentioned.len() {
            w.w_not_mentioned.push(Self::power(w.ratio_not_mentioned(l), beta));
            w.w_mentioned.push(Self::power(w.ratio_mentioned(l), beta));
        }
        Ok(w)
    }

    fn power(base: Ratio<u64>, beta: f64) -> f64 {
        let b = base.to_f64().expect("ratio of u64 is finite");
        if beta == 1.0 {
            b
        } else {
            b.powf(beta)
        }
    }

    /// `n / o_l` as an exact fraction.
    pub fn ratio_not_mentioned(&self, label: usize) -> Ratio<u64> {
        Ratio::new(self.n, self.not_mentioned[label])
    }

    /// `n / (n − o_l)` as an exact fraction.
    pub fn ratio_mentioned(&self, label: usize) -> Ratio<u64> {
        Ratio::new(self.n, self.n - self.not_mentioned[label])
    }

    pub fn n_labels(&self) -> usize {
        self.w_not_mentioned.len()
    }

    pub fn weight(&self, label: usize, gold: CertaintyClass) -> f64 {
        if gold.is_mentioned() {
            self.w_mentioned[label]
        } else {
            self.w_not_mentioned[label]
        }
    }
}

/// Weights from the training split: `n` sentences, `o_l` of them without label `l`.
pub fn compute_label_weights(train: &[AnnotatedSentence], schema: &LabelSchema, beta: f64) -> Result<LossWeights> {
    let mut counts = vec![0u64; schema.len()];
    for s in train {
        for (l, c) in s.gold(schema).iter().enumerate() {
            if !c.is_mentioned() {
                counts[l] += 1;
            }
        }
    }
    LossWeights::from_counts(train.len() as u64, &counts, beta)
}

/// `(1/n_L) Σ_l w(l, gold_l) · (−log softmax(logits_l)[gold_l])`.
pub fn weighted_loss<T: Real>(
    g: &mut Graph<'_, T>,
    logits: Var,
    gold: &[CertaintyClass],
    w: &LossWeights,
) -> Result<Var> {
    let n_l = g.shape(logits)[0];
    if gold.len() != n_l || w.n_labels() != n_l {
        return Err(Error::InvalidArgument(format!(
            "{} gold classes and {} weights for {n_l} logit rows",
            gold.len(),
            w.n_labels()
        )));
    }
    let logp = g.log_softmax_rows(logits)?;
    let idx: Vec<usize> = gold.iter().map(|c| c.index()).collect();
    let picked = g.pick(logp, &idx)?;
    let coef: Vec<T> = gold
        .iter()
        .enumerate()
        .map(|(l, &c)| T::lit(-w.weight(l, c) / n_l as f64))
        .collect();
    Ok(g.weighted_sum(picked, &coef)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Frozen rows receive no update.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Real = f64> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        if !grads.all_finite() {
            return Err(AutodiffError::NonFinite { op: "adam_step" }.into());
        }
        self.t += 1;
        self.m.resize(store.len(), None);
        self.v.resize(store.len(), None);
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one, eps, lr) = (T::one(), T::lit(c.eps), T::lit(c.lr));
        let bc1 = one - T::lit(c.beta1.powi(self.t as i32));
        let bc2 = one - T::lit(c.beta2.powi(self.t as i32));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let entry = store.entry(id);
            if !entry.trainable {
                continue;
            }
            let Some(g) = grads.get(id) else {
                if self.m[id.index()].is_none() {
                    continue;
                }
                // moments keep decaying when a parameter gets no gradient
                let zero = Tensor::zeros(entry.value.shape());
                self.update(store, id, &zero, b1, b2, bc1, bc2, eps, lr);
                continue;
            };
            let mut g = g.clone();
            if !entry.frozen_rows.is_empty() {
                let cols = g.cols();
                for &r in &entry.frozen_rows {
                    g.data_mut()[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v = T::zero());
                }
            }
            self.update(store, id, &g, b1, b2, bc1, bc2, eps, lr);
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn update(
        &mut self,
        store: &mut ParamStore<T>,
        id: crate::autodiff::ParamId,
        g: &Tensor<T>,
        b1: T,
        b2: T,
        bc1: T,
        bc2: T,
        eps: T,
        lr: T,
    ) {
        let one = T::one();
        let m = self.m[id.index()].get_or_insert_with(|| Tensor::zeros(g.shape()));
        let v = self.v[id.index()].get_or_insert_with(|| Tensor::zeros(g.shape()));
        let p = store.get_mut(id).data_mut();
        for (((p, m), v), &g) in p.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience-based stopping on a score where larger is better. Ties are not
/// improvements.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|b| b.0)
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.map(|b| b.1)
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if score <= best => {}
            _ => {
                self.best = Some((epoch, score));
                return StopDecision::Improved;
            }
        }
        let (best_epoch, _) = self.best.expect("set above");
        if epoch - best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::NoImprovement
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: EncoderKind,
    pub head: HeadKind,
    pub deep_classifier: bool,
    pub deep_widths: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta: f64,
    pub seed: u64,
    pub n_tok: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub cnn_maps: usize,
    pub cnn_widths: Vec<usize>,
    pub strict_parity: bool,
    /// Minimum training-set frequency for a token to enter the vocabulary.
    pub min_count: usize,
    /// Stop as soon as validation micro F1 reaches this value.
    pub target_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_model(EncoderKind::Bigru)
    }
}

impl TrainConfig {
    /// Documented defaults per encoder.
    pub fn for_model(model: EncoderKind) -> Self {
        let (lr, head) = match model {
            EncoderKind::Mean => (0.001, HeadKind::Pooled),
            EncoderKind::Caml => (0.0005, HeadKind::PerLabel),
            EncoderKind::Bigru => (0.0005, HeadKind::PerLabel),
        };
        TrainConfig {
            model,
            head,
            deep_classifier: false,
            deep_widths: DEEP_WIDTHS.to_vec(),
            lr,
            batch_size: 16,
            max_epochs: 200,
            patience: 25,
            beta: 1.0,
            seed: 0,
            n_tok: DEFAULT_N_TOK,
            hidden: 1024,
            embed_dim: 200,
            cnn_maps: 512,
            cnn_widths: vec![2, 4],
            strict_parity: false,
            min_count: 1,
            target_f1: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch limit must be positive");
        }
        if self.min_count == 0 {
            return bad("min count must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, n_labels: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                kind: self.model,
                vocab_size: 0,
                embed_dim: self.embed_dim,
                hidden: self.hidden,
                cnn_maps: self.cnn_maps,
                cnn_widths: self.cnn_widths.clone(),
                n_tok: self.n_tok,
                strict_parity: self.strict_parity,
            },
            head: self.head,
            classifier_hidden: if self.deep_classifier { self.deep_widths.clone() } else { Vec::new() },
            n_labels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_micro_f1: f64,
    pub val_macro_f1: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r).map_err(crate::metrics::csv_err)?;
    }
    crate::metrics::into_string(w)
}

fn par_map<A: Sync, B: Send>(xs: &[A], f: impl Fn(&A) -> B + Sync + Send) -> Vec<B> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        xs.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        xs.iter().map(f).collect()
    }
}

/// Loss and parameter gradients for one labelled example.
pub fn example_gradients<T: Real>(
    model: &Model<T>,
    x: &EncodedExample,
    w: &LossWeights,
) -> Result<(f64, Gradients<T>)> {
    let mut g = Graph::new(&model.store);
    let out = model.forward(&mut g, x)?;
    let loss = weighted_loss(&mut g, out.logits, &x.gold, w)?;
    let value = g.value(loss).item().to_f64_lossless();
    Ok((value, g.backward(loss)?))
}

/// Class predictions for each example, in input order.
pub fn predict_all<T: Real>(model: &Model<T>, xs: &[EncodedExample]) -> Result<Vec<Vec<CertaintyClass>>> {
    par_map(xs, |x| model.predict_classes(x)).into_iter().collect()
}

/// Micro and macro F1 over the mentioned classes.
pub fn score<T: Real>(model: &Model<T>, xs: &[EncodedExample]) -> Result<(f64, f64)> {
    let preds = predict_all(model, xs)?;
    let golds: Vec<_> = xs.iter().map(|x| x.gold.clone()).collect();
    let conf = accumulate_confusion(&preds, &golds, model.config.n_labels)?;
    let classes = CertaintyClass::MENTIONED;
    Ok((f1_micro(&conf, &classes), f1_macro(&conf, &classes)))
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real = f64> {
    /// Parameters from the best validation epoch.
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_micro_f1: f64,
    pub weights: LossWeights,
}

/// Epoch-at-a-time training state; [`Trainer::fit`] runs to completion.
pub struct Trainer<T: Real = f64> {
    pub config: TrainConfig,
    pub model: Model<T>,
    pub weights: LossWeights,
    pub train: Vec<EncodedExample>,
    pub val: Vec<EncodedExample>,
    pub history: Vec<EpochRecord>,
    adam: Adam<T>,
    shuffle_rng: ChaCha8Rng,
    stopper: EarlyStopping,
    best: Option<ParamStore<T>>,
    finished: bool,
}

impl<T: Real> Trainer<T> {
    pub fn new(
        config: TrainConfig,
        schema: &LabelSchema,
        train: &[AnnotatedSentence],
        val: &[AnnotatedSentence],
        pretrained: Option<&PretrainedEmbeddings>,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyInput("training and validation splits must be non-empty".into()));
        }
        let weights = compute_label_weights(train, schema, config.beta)?;
        let tokens: Vec<Vec<String>> = train.iter().map(|s| tokenize(&s.text)).collect();
        let vocab = build_vocab(&tokens, config.min_count);
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(config.model_config(schema.len()), vocab, &mut init_rng, pretrained)?;
        let encode = |data: &[AnnotatedSentence]| -> Vec<EncodedExample> {
            data.iter()
                .map(|s| model.encode_text(&s.text).with_gold(s.gold(schema)))
                .collect()
        };
        let train = encode(train);
        let val = encode(val);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(1);
        Ok(Trainer {
            adam: Adam::new(AdamConfig::with_lr(config.lr)),
            stopper: EarlyStopping::new(config.patience),
            config,
            model,
            weights,
            train,
            val,
            history: Vec::new(),
            shuffle_rng,
            best: None,
            finished: false,
        })
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// One pass over the shuffled training set followed by validation.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.history.len() + 1;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let numeric = |e: Error| match e {
                Error::Autodiff(ref a) if a.is_numerical() => Error::NonFiniteLoss { epoch, batch: b + 1 },
                other => other,
            };
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &self.train[i]).collect();
            let model = &self.model;
            let weights = &self.weights;
            let results = par_map(&batch, |x| example_gradients(model, x, weights));
            let mut grads = Gradients::empty(self.model.store.len());
            for r in results {
                let (loss, g) = r.map_err(numeric)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
                }
                total += loss;
                grads.accumulate(&g);
            }
            grads.scale(T::lit(1.0 / chunk.len() as f64));
            self.adam.step(&mut self.model.store, &grads).map_err(numeric)?;
        }
        let (micro, macro_) = score(&self.model, &self.val)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / self.train.len() as f64,
            val_micro_f1: micro,
            val_macro_f1: macro_,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} val micro F1 {micro:.4} macro F1 {macro_:.4}",
            record.train_loss
        );
        self.history.push(record);
        let decision = self.stopper.observe(epoch, micro);
        if decision == StopDecision::Improved {
            self.best = Some(self.model.store.clone());
        }
        let target_hit = self.config.target_f1.is_some_and(|t| micro >= t);
        if decision == StopDecision::Stop || target_hit || epoch >= self.config.max_epochs {
            self.finished = true;
        }
        Ok(record)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.stopper.best_epoch()
    }

    /// Trains until stopping and returns the best-epoch model.
    pub fn fit(mut self) -> Result<TrainOutcome<T>> {
        while !self.finished {
            self.run_epoch()?;
        }
        Ok(self.into_outcome())
    }

    /// Current state with the best parameters restored.
    pub fn into_outcome(mut self) -> TrainOutcome<T> {
        if let Some(best) = self.best.take() {
            self.model.store = best;
        }
        TrainOutcome {
            best_epoch: self.stopper.best_epoch().unwrap_or(0),
            best_val_micro_f1: self.stopper.best_score().unwrap_or(0.0),
            model: self.model,
            history: self.history,
            weights: self.weights,
        }
    }
}

/// Trains a model from scratch on `train`, early stopping on `val`.
pub fn train(
    config: &TrainConfig,
    schema: &LabelSchema,
    train: &[AnnotatedSentence],
    val: &[AnnotatedSentence],
    pretrained: Option<&PretrainedEmbeddings>,
) -> Result<TrainOutcome> {
    Trainer::<f64>::new(config.clone(), schema, train, val, pretrained)?.fit()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weight_examples() {
        let w = LossWeights::from_counts(100, &[50, 80], 1.0).unwrap();
        assert_eq!((w.w_not_mentioned[0], w.w_mentioned[0]), (2.0, 2.0));
        assert_eq!((w.w_not_mentioned[1], w.w_mentioned[1]), (1.25, 5.0));
        let w = LossWeights::from_counts(100, &[80], 0.5).unwrap();
        assert_abs_diff_eq!(w.w_not_mentioned[0], 1.118034, epsilon = 1e-6);
        assert_abs_diff_eq!(w.w_mentioned[0], 2.236068, epsilon = 1e-6);
        let w = LossWeights::from_counts(100, &[0, 100, 3], 0.0).unwrap();
        assert!(w.w_not_mentioned.iter().chain(&w.w_mentioned).all(|&v| v == 1.0));
    }

    #[test]
    fn degenerate_counts_clamped() {
        let w = LossWeights::from_counts(10, &[0, 10], 1.0).unwrap();
        assert_eq!(w.not_mentioned, vec![1, 9]);
        assert_eq!(w.w_not_mentioned[0], 10.0);
        assert_eq!(w.w_mentioned[1], 10.0);
        assert!(LossWeights::from_counts(1, &[1], 1.0).is_err());
    }

    fn loss_of(logits: &[f64], gold: &[CertaintyClass], w: &LossWeights) -> f64 {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let n = gold.len();
        let l = g.constant(Tensor::from_f64(&[n, 4], logits).unwrap()).unwrap();
        let loss = weighted_loss(&mut g, l, gold, w).unwrap();
        g.value(loss).item()
    }

    #[test]
    fn loss_examples() {
        let gold = [CertaintyClass::Positive, CertaintyClass::NotMentioned];
        let uniform = loss_of(&[0.0; 8], &gold, &LossWeights::uniform(2));
        assert_abs_diff_eq!(uniform, 4f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(uniform, 1.386294, epsilon = 1e-6);
        let confident = [-1e3, -1e3, -1e3, 0.0, 0.0, -1e3, -1e3, -1e3];
        assert_eq!(loss_of(&confident, &gold, &LossWeights::uniform(2)), 0.0);

        let w = LossWeights::from_counts(100, &[50, 80], 1.0).unwrap();
        let logits = [0.2, -0.1, 0.4, 1.0, 0.3, 0.0, -0.5, 0.1];
        let ce = |row: &[f64], k: usize| {
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - row[k]
        };
        let want = (2.0 * ce(&logits[..4], 3) + 1.25 * ce(&logits[4..], 0)) / 2.0;
        assert_abs_diff_eq!(loss_of(&logits, &gold, &w), want, epsilon = 1e-14);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::row(&[1.0, -2.0, 0.5])).unwrap();
        let mut grads = Gradients::empty(1);
        grads.set(id, Tensor::row(&[0.3, -7.0, 0.0]));
        let mut adam = Adam::new(AdamConfig::with_lr(0.01));
        adam.step(&mut store, &grads).unwrap();
        let w = store.get(id).data();
        assert_abs_diff_eq!(w[0], 1.0 - 0.01, epsilon = 1e-9);
        assert_abs_diff_eq!(w[1], -2.0 + 0.01, epsilon = 1e-9);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn adam_two_steps_on_square() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::row(&[1.0])).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 2.0 * store.get(id).data()[0];
            let mut grads = Gradients::empty(1);
            grads.set(id, Tensor::row(&[g]));
            adam.step(&mut store, &grads).unwrap();

            let gr = 2.0 * w;
            m = b1 * m + (1.0 - b1) * gr;
            v = b2 * v + (1.0 - b2) * gr * gr;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
            assert_abs_diff_eq!(store.get(id).data()[0], w, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(w, 0.800412228, epsilon = 1e-9);
    }

    #[test]
    fn adam_respects_frozen_rows_and_zero_grads() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("e", Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap()).unwrap();
        store.freeze_row(id, 0);
        let mut grads = Gradients::empty(1);
        grads.set(id, Tensor::from_rows(&[vec![5.0, 5.0], vec![0.0, 0.0]]).unwrap());
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get(id).data(), &[0.0, 0.0, 1.0, 1.0]);
        grads.set(id, Tensor::from_rows(&[vec![f64::NAN, 0.0], vec![0.0, 0.0]]).unwrap());
        assert!(adam.step(&mut store, &grads).unwrap_err().is_numerical());
    }

    #[test]
    fn patience_arithmetic() {
        let mut es = EarlyStopping::new(25);
        let scores = [0.1, 0.2, 0.3];
        let mut stopped_at = None;
        for epoch in 1..=200 {
            let s = scores.get(epoch - 1).copied().unwrap_or(0.3);
            if es.observe(epoch, s) == StopDecision::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(28));
        assert_eq!(es.best_epoch(), Some(3));
    }

    #[test]
    fn history_csv_header() {
        let csv = history_csv(&[EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_micro_f1: 0.25,
            val_macro_f1: 0.125,
        }])
        .unwrap();
        assert_eq!(csv, "epoch,train_loss,val_micro_f1,val_macro_f1\n1,0.5,0.25,0.125\n");
    }
}
