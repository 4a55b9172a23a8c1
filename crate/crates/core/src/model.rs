//! An encoder and a head sharing one parameter registry, plus the vocabulary
//! needed to encode raw text.

use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint, Graph, ParamStore, Real, Tensor};
use crate::corpus::{encode, tokenize, EncodedExample, Vocabulary, UNK_ID};
use crate::encoders::{
    mean_encoder_forward, sequence_forward, EncoderConfig, EncoderKind, EncoderParams, PretrainedEmbeddings,
};
use crate::error::{Error, Result};
use crate::heads::{
    argmax_rows, per_label_attention_forward, pooled_softmax_forward, probabilities, single_attention_forward,
    HeadKind, HeadOutput, HeadParams,
};
use crate::schema::CertaintyClass;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "model.json";

/// Hidden widths of the deep per-label classifier.
pub const DEEP_WIDTHS: [usize; 2] = [512, 256];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadKind,
    /// Hidden layer widths of each per-label classifier; empty for linear.
    #[serde(default)]
    pub classifier_hidden: Vec<usize>,
    pub n_labels: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.encoder.kind == EncoderKind::Mean && self.head != HeadKind::Pooled {
            return Err(Error::InvalidArgument(
                "the mean encoder has no token axis to attend over; use the pooled head".into(),
            ));
        }
        if self.head == HeadKind::Pooled && !self.classifier_hidden.is_empty() {
            return Err(Error::InvalidArgument("the deep classifier requires an attention head".into()));
        }
        if self.n_labels == 0 {
            return Err(Error::InvalidArgument("model needs at least one label".into()));
        }
        Ok(())
    }
}

/// Outputs for one sentence, converted to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Tensor<f64>,
    pub probabilities: Tensor<f64>,
    pub classes: Vec<CertaintyClass>,
    /// `rows × n_tok`, zero on pad positions; absent for pooled heads.
    pub attention: Option<Tensor<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f64> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore<T>,
    pub encoder: EncoderParams,
    pub head: HeadParams,
}

impl<T: Real> Model<T> {
    pub fn new<R: Rng>(
        config: ModelConfig,
        vocab: Vocabulary,
        rng: &mut R,
        pretrained: Option<&PretrainedEmbeddings>,
    ) -> Result<Self> {
        let mut config = config;
        config.encoder.vocab_size = vocab.len();
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = EncoderParams::init(&mut store, &config.encoder, rng, pretrained.map(|p| (p, &vocab)))?;
        let head = HeadParams::init(
            &mut store,
            rng,
            config.head,
            config.encoder.output_dim(),
            config.n_labels,
            &config.classifier_hidden,
        )?;
        Ok(Model {
            config,
            vocab,
            store,
            encoder,
            head,
        })
    }

    /// Tokenizes and encodes raw text. A sentence with no tokens is encoded
    /// as a single unknown token so every input has a real position.
    pub fn encode_text(&self, text: &str) -> EncodedExample {
        self.encode_tokens(&tokenize(text))
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> EncodedExample {
        let mut x = encode(tokens, &self.vocab, self.config.encoder.n_tok);
        if x.real_length == 0 {
            x.token_ids[0] = UNK_ID;
            x.real_length = 1;
        }
        x
    }

    /// Records the forward pass for `x` on `g`, which must borrow `self.store`.
    pub fn forward(&self, g: &mut Graph<'_, T>, x: &EncodedExample) -> Result<HeadOutput> {
        match &self.head {
            HeadParams::Pooled(p) => {
                let pooled = if self.config.encoder.kind == EncoderKind::Mean {
                    mean_encoder_forward(g, x, &self.encoder)?
                } else {
                    let h = sequence_forward(g, x, &self.encoder)?;
                    g.max_over_time(h.r)?
                };
                pooled_softmax_forward(g, pooled, p)
            }
            HeadParams::Attention { kind, params } => {
                let h = sequence_forward(g, x, &self.encoder)?;
                match kind {
                    HeadKind::PerLabel => per_label_attention_forward(g, h.r, params),
                    _ => single_attention_forward(g, h.r, params),
                }
            }
        }
    }

    pub fn predict(&self, x: &EncodedExample) -> Result<Prediction> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, x)?;
        Ok(self.read_prediction(&g, &out, x))
    }

    pub fn predict_classes(&self, x: &EncodedExample) -> Result<Vec<CertaintyClass>> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, x)?;
        Ok(classes_of(g.value(out.logits)))
    }

    pub(crate) fn read_prediction(&self, g: &Graph<'_, T>, out: &HeadOutput, x: &EncodedExample) -> Prediction {
        let logits_t = g.value(out.logits);
        let attention = out.attention.map(|a| pad_attention(g.value(a), x.n_tok()));
        Prediction {
            logits: logits_t.cast(),
            probabilities: probabilities(logits_t),
            classes: classes_of(logits_t),
            attention,
        }
    }

    /// Writes checkpoint, vocabulary and configuration into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        save_checkpoint(&self.store, dir.join(CHECKPOINT_FILE))?;
        self.vocab.save(dir.join(VOCAB_FILE))?;
        let path = dir.join(CONFIG_FILE);
        let json = serde_json::to_string_pretty(&self.config)?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        let vocab = Vocabulary::load(dir.join(VOCAB_FILE))?;
        if vocab.len() != config.encoder.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, configuration expects {}",
                vocab.len(),
                config.encoder.vocab_size
            )));
        }
        let values = load_checkpoint(dir.join(CHECKPOINT_FILE))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(config, vocab, &mut rng, None)?;
        model
            .store
            .assign_from(values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(model)
    }
}

pub fn classes_of<T: Real>(logits: &Tensor<T>) -> Vec<CertaintyClass> {
    argmax_rows(logits)
        .into_iter()
        .map(|i| CertaintyClass::from_index(i).expect("logit rows have n_C columns"))
        .collect()
}

/// Widens attention over the encoded rows to `n_tok` columns with zeros.
pub fn pad_attention<T: Real>(alpha: &Tensor<T>, n_tok: usize) -> Tensor<f64> {
    let (rows, cols) = (alpha.rows(), alpha.cols());
    let mut out = vec![0.0; rows * n_tok];
    for r in 0..rows {
        for (c, v) in alpha.row_slice(r).iter().enumerate().take(n_tok.min(cols)) {
            out[r * n_tok + c] = v.to_f64_lossless();
        }
    }
    Tensor::new(vec![rows, n_tok], out).expect("shape matches")
}
