//! WebAssembly bindings for the browser demo. Every export returns JSON text;
//! the plain-Rust functions underneath are what the native tests call.

use relabel::encoders::EncoderKind;
use relabel::heads::HeadKind;
use relabel::schema::{CertaintyClass, Category, Label, LabelSchema};
use relabel::synth::generate_synthetic;
use relabel::toy::{generate_toy_corpus, toy_schema, ToyCorpusConfig};
use relabel::training::{LossWeights, TrainConfig, Trainer};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Synthetic sentences for one label whose surface forms are comma separated.
pub fn synthetic_sentences(name: &str, variants: &str) -> relabel::Result<String> {
    let forms: Vec<String> = variants
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    let label = Label::new(name.trim(), name.trim(), Category::Finding, Some(forms));
    let schema = LabelSchema::new(vec![label])?;
    let rows: Vec<_> = generate_synthetic(&schema)
        .into_iter()
        .map(|s| {
            let class = s.annotations.values().next().copied().unwrap_or(CertaintyClass::NotMentioned);
            json!({ "text": s.text, "certainty": class.as_str() })
        })
        .collect();
    Ok(serde_json::Value::from(rows).to_string())
}

/// Both label weights for every not-mentioned count `o` in `1..n`.
pub fn weight_curve(n: u32, beta: f64) -> relabel::Result<String> {
    let n = u64::from(n);
    let counts: Vec<u64> = (1..n).collect();
    let w = LossWeights::from_counts(n, &counts, beta)?;
    Ok(json!({
        "o": counts,
        "not_mentioned": w.w_not_mentioned,
        "mentioned": w.w_mentioned,
    })
    .to_string())
}

/// A small Bi-GRU trained one epoch at a time on the toy corpus.
pub struct DemoSession {
    schema: LabelSchema,
    trainer: Trainer,
}

impl DemoSession {
    pub fn new(seed: u64, head: &str, n_train: usize) -> relabel::Result<Self> {
        let schema = toy_schema();
        let corpus = generate_toy_corpus(
            &schema,
            &ToyCorpusConfig {
                n_train,
                n_val: (n_train / 4).max(20),
                rare_labels: Vec::new(),
                seed,
                ..ToyCorpusConfig::default()
            },
        );
        let config = TrainConfig {
            head: head.parse::<HeadKind>()?,
            hidden: 32,
            embed_dim: 16,
            lr: 0.005,
            max_epochs: 30,
            patience: 30,
            seed,
            ..TrainConfig::for_model(EncoderKind::Bigru)
        };
        let trainer = Trainer::new(config, &schema, &corpus.train, &corpus.val, None)?;
        Ok(DemoSession { schema, trainer })
    }

    pub fn step(&mut self) -> relabel::Result<String> {
        let r = self.trainer.run_epoch()?;
        Ok(json!({
            "epoch": r.epoch,
            "train_loss": r.train_loss,
            "val_micro_f1": r.val_micro_f1,
            "val_macro_f1": r.val_macro_f1,
            "finished": self.trainer.is_finished(),
        })
        .to_string())
    }

    pub fn is_finished(&self) -> bool {
        self.trainer.is_finished()
    }

    /// Tokens, then one entry per mentioned label with its class and the
    /// attention row it read from.
    pub fn analyze(&self, text: &str) -> relabel::Result<String> {
        let model = &self.trainer.model;
        let mut tokens = relabel::corpus::tokenize(text);
        if tokens.is_empty() {
            tokens.push(relabel::corpus::UNK_TOKEN.to_string());
        }
        let x = model.encode_tokens(&tokens);
        tokens.truncate(x.real_length);
        let p = model.predict(&x)?;
        let alpha = p.attention.expect("demo heads attend");
        let shared = alpha.rows() == 1;
        let labels: Vec<_> = p
            .classes
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != CertaintyClass::NotMentioned)
            .map(|(l, c)| {
                let row = if shared { 0 } else { l };
                json!({
                    "id": self.schema.label(l).id,
                    "class": c.as_str(),
                    "confidence": p.probabilities.at(l, c.index()),
                    "weights": &alpha.row_slice(row)[..x.real_length],
                })
            })
            .collect();
        Ok(json!({ "tokens": tokens, "shared": shared, "labels": labels }).to_string())
    }
}

fn js(e: relabel::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn synthesize(name: &str, variants: &str) -> Result<String, JsError> {
    synthetic_sentences(name, variants).map_err(js)
}

#[wasm_bindgen(js_name = weightCurve)]
pub fn weight_curve_js(n: u32, beta: f64) -> Result<String, JsError> {
    weight_curve(n, beta).map_err(js)
}

#[wasm_bindgen]
pub struct Demo(DemoSession);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, head: &str, n_train: u32) -> Result<Demo, JsError> {
        DemoSession::new(u64::from(seed), head, n_train as usize).map(Demo).map_err(js)
    }

    pub fn step(&mut self) -> Result<String, JsError> {
        self.0.step().map_err(js)
    }

    #[wasm_bindgen(js_name = isFinished)]
    pub fn is_finished(&self) -> bool {
        self.0.is_finished()
    }

    pub fn analyze(&self, text: &str) -> Result<String, JsError> {
        self.0.analyze(text).map_err(js)
    }
}
