use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use relabel::corpus::{
    load_dataset, save_dataset, split_by_report, split_sentences, tokenize, AnnotatedSentence, UNK_TOKEN,
};
use relabel::embed_pretrain::{skipgram_train, PretrainConfig};
use relabel::embeddings::PretrainedEmbeddings;
use relabel::encoders::EncoderKind;
use relabel::heads::HeadKind;
use relabel::manifest::RunManifest;
use relabel::metrics::{evaluate, EvalReport, F1Options, SCORE_COLUMNS};
use relabel::model::{Model, CHECKPOINT_FILE, CONFIG_FILE, VOCAB_FILE};
use relabel::schema::{load_schema, save_schema, CertaintyClass, LabelSchema};
use relabel::synth::generate_synthetic;
use relabel::toy::{generate_toy_corpus, toy_schema, ToyCorpusConfig};
use relabel::training::{history_csv, predict_all, train, TrainConfig};
use thiserror::Error;

use crate::args::*;

pub const SCHEMA_FILE: &str = "schema.json";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] relabel::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Toy(a) => toy(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Label(a) => label(a),
        Command::Attention(a) => attention(a),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("config serializes")
}

fn schema_or_reference(path: Option<&Path>) -> Result<LabelSchema> {
    Ok(match path {
        Some(p) => load_schema(p)?,
        None => LabelSchema::reference(),
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let schema = schema_or_reference(a.schema.as_deref())?;
    let data = generate_synthetic(&schema);
    create_out(&a.out)?;
    save_dataset(&data, a.out.join("synthetic.jsonl"))?;
    let mut m = RunManifest::new("synth", serde_json::json!({ "sentences": data.len() }));
    m.schema_hash = Some(schema.content_hash());
    if let Some(p) = &a.schema {
        m.add_input(p)?;
    }
    m.add_output(&a.out, "synthetic.jsonl")?;
    m.save(&a.out)?;
    println!("wrote {} synthetic sentences", data.len());
    Ok(())
}

fn toy(a: ToyArgs) -> Result<()> {
    let schema = toy_schema();
    let cfg = ToyCorpusConfig {
        n_train: a.n_train,
        n_val: a.n_val,
        rare_labels: if a.keep_rare { Vec::new() } else { ToyCorpusConfig::default().rare_labels },
        seed: a.seed,
        ..ToyCorpusConfig::default()
    };
    let corpus = generate_toy_corpus(&schema, &cfg);
    create_out(&a.out)?;
    save_dataset(&corpus.train, a.out.join("train.jsonl"))?;
    save_dataset(&corpus.val, a.out.join("val.jsonl"))?;
    save_schema(&schema, a.out.join(SCHEMA_FILE))?;
    let mut m = RunManifest::new("toy", to_json(&cfg));
    m.seed = Some(a.seed);
    m.schema_hash = Some(schema.content_hash());
    for f in ["train.jsonl", "val.jsonl", SCHEMA_FILE] {
        m.add_output(&a.out, f)?;
    }
    m.save(&a.out)?;
    println!("wrote {} train and {} validation sentences", corpus.train.len(), corpus.val.len());
    Ok(())
}

/// Token lists from plain text (one document per line) or dataset JSONL.
fn read_documents(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = read_text(path)?;
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let body = if jsonl {
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
            v.get("text")
                .and_then(|t| t.as_str())
                .ok_or_else(|| CliError::Data(format!("{} line {}: no text field", path.display(), i + 1)))?
                .to_string()
        } else {
            line.to_string()
        };
        docs.push(tokenize(&body));
    }
    Ok(docs)
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let d = PretrainConfig::default();
    let cfg = PretrainConfig {
        dim: a.dim.unwrap_or(d.dim),
        epochs: a.epochs.unwrap_or(d.epochs),
        window: a.window.unwrap_or(d.window),
        negatives: a.negatives.unwrap_or(d.negatives),
        lr: a.lr.unwrap_or(d.lr),
        min_count: a.min_count.unwrap_or(d.min_count),
        seed: a.seed,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut docs = Vec::new();
    for p in &a.input {
        docs.extend(read_documents(p)?);
    }
    let start = Instant::now();
    let emb = skipgram_train(&docs, &cfg)?;
    let secs = start.elapsed().as_secs_f64();
    create_out(&a.out)?;
    emb.save(a.out.join("embeddings.txt"))?;
    let mut m = RunManifest::new("pretrain", to_json(&cfg));
    m.seed = Some(a.seed);
    for p in &a.input {
        m.add_input(p)?;
    }
    m.add_output(&a.out, "embeddings.txt")?;
    m.timings.insert("train".into(), secs);
    m.save(&a.out)?;
    println!("wrote {} vectors of dimension {}", emb.len(), emb.dim());
    Ok(())
}

/// File settings first, then explicit flags.
fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => toml::from_str::<TrainConfig>(&read_text(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => TrainConfig::for_model(a.model.unwrap_or(EncoderKind::Bigru)),
    };
    if let Some(m) = a.model {
        c.model = m;
        if a.config.is_none() && a.head.is_none() {
            c.head = TrainConfig::for_model(m).head;
        }
    }
    if let Some(h) = a.head {
        c.head = h;
    }
    c.deep_classifier |= a.deep_classifier;
    c.strict_parity |= a.strict_paper_parity;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = a.$flag.clone() { c.$field = v; })*};
    }
    set!(lr => lr, batch => batch_size, beta => beta, epochs => max_epochs, patience => patience,
         ntok => n_tok, hidden => hidden, embed_dim => embed_dim, cnn_maps => cnn_maps,
         min_count => min_count, seed => seed);
    if a.target_f1.is_some() {
        c.target_f1 = a.target_f1;
    }
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut config = train_config(&a)?;
    let embeddings = match &a.embeddings {
        Some(p) => Some(PretrainedEmbeddings::load(p)?),
        None => None,
    };
    if let Some(e) = &embeddings {
        match a.embed_dim {
            Some(d) if d != e.dim() => {
                return Err(CliError::Usage(format!(
                    "--embed-dim {d} does not match the {}-dimensional embeddings",
                    e.dim()
                )))
            }
            _ => config.embed_dim = e.dim(),
        }
    }
    let schema = schema_or_reference(a.schema.as_deref())?;
    // vocabulary size is unknown until the training split is read
    let mut shape = config.model_config(schema.len());
    shape.encoder.vocab_size = 2;
    shape.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if a.synth != SynthMode::Only && a.data.is_none() {
        return Err(CliError::Usage("--data is required unless --synth only".into()));
    }
    let data = match &a.data {
        Some(p) => Some(load_dataset(p, &schema)?),
        None => None,
    };
    let val_file = match &a.val {
        Some(p) => Some(load_dataset(p, &schema)?),
        None => None,
    };
    let synthetic = generate_synthetic(&schema);
    let seeds = match &a.seeds {
        Some(Seeds(s)) => s.clone(),
        None => vec![config.seed],
    };

    let mut runs = Vec::new();
    for &seed in &seeds {
        let (mut train_set, val_set) = match (a.synth, &data, &val_file) {
            (SynthMode::Only, _, Some(v)) => (Vec::new(), v.clone()),
            (SynthMode::Only, Some(d), None) => (Vec::new(), d.clone()),
            (SynthMode::Only, None, None) => (Vec::new(), synthetic.clone()),
            (_, Some(d), Some(v)) => (d.clone(), v.clone()),
            (_, Some(d), None) => split_by_report(d, 1.0 - a.val_fraction, seed)?,
            (_, None, _) => unreachable!("checked above"),
        };
        if a.synth != SynthMode::Off {
            train_set.extend(synthetic.iter().cloned());
        }
        let run_config = TrainConfig { seed, ..config.clone() };
        let start = Instant::now();
        let outcome = train(&run_config, &schema, &train_set, &val_set, embeddings.as_ref())?;
        log::info!(
            "seed {seed}: best epoch {} with validation micro F1 {:.4}",
            outcome.best_epoch,
            outcome.best_val_micro_f1
        );
        runs.push((run_config, outcome, start.elapsed().as_secs_f64()));
    }

    for (run_config, outcome, secs) in &runs {
        let dir = if a.seeds.is_some() {
            a.out.join(format!("seed-{}", run_config.seed))
        } else {
            a.out.clone()
        };
        create_out(&dir)?;
        outcome.model.save(&dir)?;
        write(&dir, HISTORY_FILE, &history_csv(&outcome.history)?)?;
        save_schema(&schema, dir.join(SCHEMA_FILE))?;
        let mut m = RunManifest::new("train", to_json(run_config));
        m.seed = Some(run_config.seed);
        m.schema_hash = Some(schema.content_hash());
        for p in [&a.data, &a.val, &a.schema, &a.embeddings, &a.config].into_iter().flatten() {
            m.add_input(p)?;
        }
        for f in [CHECKPOINT_FILE, VOCAB_FILE, CONFIG_FILE, HISTORY_FILE, SCHEMA_FILE] {
            m.add_output(&dir, f)?;
        }
        m.timings.insert("train".into(), *secs);
        m.save(&dir)?;
        println!(
            "seed {}: best epoch {}, validation micro F1 {:.4} -> {}",
            run_config.seed,
            outcome.best_epoch,
            outcome.best_val_micro_f1,
            dir.display()
        );
    }
    Ok(())
}

/// Schema from the flag, else the one saved next to the checkpoint, else the reference.
fn checkpoint_schema(flag: Option<&Path>, checkpoint: &Path) -> Result<LabelSchema> {
    let saved = checkpoint.join(SCHEMA_FILE);
    match flag {
        Some(p) => schema_or_reference(Some(p)),
        None if saved.exists() => schema_or_reference(Some(&saved)),
        None => schema_or_reference(None),
    }
}

fn load_model(dir: &Path, schema: &LabelSchema) -> Result<Model> {
    let model = Model::load(dir)?;
    if model.config.n_labels != schema.len() {
        return Err(CliError::Data(format!(
            "checkpoint {} predicts {} labels but the schema has {}",
            dir.display(),
            model.config.n_labels,
            schema.len()
        )));
    }
    Ok(model)
}

fn evaluate_dir(dir: &Path, schema: &LabelSchema, data: &[AnnotatedSentence]) -> Result<EvalReport> {
    let model = load_model(dir, schema)?;
    let xs: Vec<_> = data
        .iter()
        .map(|s| model.encode_text(&s.text).with_gold(s.gold(schema)))
        .collect();
    let preds = predict_all(&model, &xs)?;
    let golds: Vec<_> = xs.into_iter().map(|x| x.gold).collect();
    Ok(evaluate(&preds, &golds, schema, &F1Options::default())?)
}

fn write_report(dir: &Path, r: &EvalReport) -> Result<()> {
    write(dir, "summary.txt", &r.summary_text())?;
    write(dir, "per_label.csv", &r.per_label_csv()?)?;
    write(dir, "errors.csv", &r.errors_csv()?)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn aggregate(dir: &Path, seeds: &[u64], reports: &[EvalReport]) -> Result<()> {
    let col = |f: &dyn Fn(&EvalReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let mut s = String::new();
    let seed_list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    writeln!(s, "runs: {} (seeds {})", reports.len(), seed_list.join(", ")).unwrap();
    write!(s, "{:<8}", "").unwrap();
    for c in SCORE_COLUMNS {
        write!(s, "{c:>18}").unwrap();
    }
    s.push('\n');
    for (name, micro) in [("micro", true), ("macro", false)] {
        write!(s, "{name:<8}").unwrap();
        for i in 0..SCORE_COLUMNS.len() {
            let (m, sd) = col(&|r| if micro { r.micro[i] } else { r.macro_[i] });
            write!(s, "{:>18}", format!("{m:.4} ({sd:.4})")).unwrap();
        }
        s.push('\n');
    }
    write(dir, "summary.txt", &s)?;

    let mut header = vec!["label".to_string()];
    for c in SCORE_COLUMNS {
        header.push(format!("f1_{c}_mean"));
        header.push(format!("f1_{c}_std"));
    }
    header.push("support".into());
    let mut rows = vec![header];
    for (l, first) in reports[0].per_label.iter().enumerate() {
        let mut row = vec![first.label.clone()];
        for i in 0..SCORE_COLUMNS.len() {
            let (m, sd) = col(&|r| r.per_label[l].f1[i]);
            row.push(format!("{m:.6}"));
            row.push(format!("{sd:.6}"));
        }
        row.push(first.support.to_string());
        rows.push(row);
    }
    write(dir, "per_label.csv", &csv_string(rows)?)?;

    let mut rows = vec![vec!["category", "count_mean", "count_std", "proportion_mean", "proportion_std"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()];
    let kinds: [(&str, fn(&EvalReport) -> (u64, f64)); 3] = [
        ("missed", |r| (r.errors.missed, r.errors.proportions().0)),
        ("false", |r| (r.errors.false_positive, r.errors.proportions().1)),
        ("confusion", |r| (r.errors.confusion, r.errors.proportions().2)),
    ];
    for (name, f) in kinds {
        let (cm, cs) = col(&|r| f(r).0 as f64);
        let (pm, ps) = col(&|r| f(r).1);
        rows.push(vec![name.into(), format!("{cm:.2}"), format!("{cs:.2}"), format!("{pm:.6}"), format!("{ps:.6}")]);
    }
    write(dir, "errors.csv", &csv_string(rows)?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let dirs: Vec<(Option<u64>, PathBuf)> = match &a.seeds {
        Some(Seeds(s)) => s.iter().map(|&n| (Some(n), a.checkpoint.join(format!("seed-{n}")))).collect(),
        None => vec![(None, a.checkpoint.clone())],
    };
    let schema = checkpoint_schema(a.schema.as_deref(), &dirs[0].1)?;
    let data = load_dataset(&a.data, &schema)?;
    let reports = dirs
        .iter()
        .map(|(_, d)| evaluate_dir(d, &schema, &data))
        .collect::<Result<Vec<_>>>()?;

    create_out(&a.out)?;
    let mut m = RunManifest::new("eval", serde_json::json!({ "seeds": a.seeds.as_ref().map(|s| s.0.clone()) }));
    m.schema_hash = Some(schema.content_hash());
    m.add_input(&a.data)?;
    for (_, d) in &dirs {
        m.add_input(d.join(CHECKPOINT_FILE))?;
    }
    if let Some(Seeds(seeds)) = &a.seeds {
        for ((_, _), (r, seed)) in dirs.iter().zip(reports.iter().zip(seeds)) {
            let sub = format!("seed-{seed}");
            create_out(&a.out.join(&sub))?;
            write_report(&a.out.join(&sub), r)?;
            for f in ["summary.txt", "per_label.csv", "errors.csv"] {
                m.add_output(&a.out, &format!("{sub}/{f}"))?;
            }
        }
        aggregate(&a.out, seeds, &reports)?;
    } else {
        write_report(&a.out, &reports[0])?;
    }
    for f in ["summary.txt", "per_label.csv", "errors.csv"] {
        m.add_output(&a.out, f)?;
    }
    m.save(&a.out)?;
    print!("{}", read_text(&a.out.join("summary.txt"))?);
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    Ok(read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn label(a: LabelArgs) -> Result<()> {
    let schema = checkpoint_schema(a.schema.as_deref(), &a.checkpoint)?;
    let model = load_model(&a.checkpoint, &schema)?;
    let reports = read_lines(&a.input)?;
    let mut out = Vec::new();
    for (line, report) in reports {
        for sentence in split_sentences(&report) {
            let classes = model.predict_classes(&model.encode_text(&sentence))?;
            let mut s = AnnotatedSentence::new(format!("report-{line}"), sentence);
            for (l, c) in classes.into_iter().enumerate() {
                if c != CertaintyClass::NotMentioned {
                    s.annotate(schema.label(l).id.clone(), c);
                }
            }
            out.push(s);
        }
    }
    create_out(&a.out)?;
    save_dataset(&out, a.out.join("labels.jsonl"))?;
    let mut m = RunManifest::new("label", serde_json::json!({}));
    m.schema_hash = Some(schema.content_hash());
    m.add_input(&a.input)?;
    m.add_input(a.checkpoint.join(CHECKPOINT_FILE))?;
    m.add_output(&a.out, "labels.jsonl")?;
    m.save(&a.out)?;
    println!("labelled {} sentences", out.len());
    Ok(())
}

/// Label id written for the shared row of a single-attention head.
pub const SHARED_ROW: &str = "*";

fn attention(a: AttentionArgs) -> Result<()> {
    let schema = checkpoint_schema(a.schema.as_deref(), &a.checkpoint)?;
    let model = load_model(&a.checkpoint, &schema)?;
    if model.config.head == HeadKind::Pooled {
        return Err(CliError::Data(
            "this checkpoint uses the pooled head, which has no attention weights; train with --head single or --head per-label"
                .into(),
        ));
    }
    let sentences = read_lines(&a.input)?;
    let mut rows = vec![["sentence_id", "label_id", "token_index", "token", "weight"]
        .map(String::from)
        .to_vec()];
    let mut shown = String::new();
    for (id, text) in &sentences {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(UNK_TOKEN.to_string());
        }
        let x = model.encode_tokens(&tokens);
        let p = model.predict(&x)?;
        let alpha = p.attention.expect("attention head");
        let width = if model.config.encoder.strict_parity { x.n_tok() } else { x.real_length };
        let token_at = |t: usize| tokens.get(t).filter(|_| t < x.real_length).map_or("<pad>", |s| s.as_str());
        writeln!(shown, "[{id}] {text}").unwrap();
        for r in 0..alpha.rows() {
            let label_id = if alpha.rows() == 1 { SHARED_ROW } else { schema.label(r).id.as_str() };
            for t in 0..width {
                rows.push(vec![
                    id.to_string(),
                    label_id.to_string(),
                    t.to_string(),
                    token_at(t).to_string(),
                    alpha.at(r, t).to_string(),
                ]);
            }
            let predicted: Vec<usize> = if alpha.rows() == 1 {
                (0..schema.len()).filter(|&l| p.classes[l] != CertaintyClass::NotMentioned).collect()
            } else if p.classes[r] != CertaintyClass::NotMentioned {
                vec![r]
            } else {
                Vec::new()
            };
            if predicted.is_empty() {
                continue;
            }
            let names: Vec<String> = predicted
                .iter()
                .map(|&l| format!("{} ({})", schema.label(l).id, p.classes[l].as_str()))
                .collect();
            let weights: Vec<String> = (0..width).map(|t| format!("{}:{:.2}", token_at(t), alpha.at(r, t))).collect();
            writeln!(shown, "  {:<28} {}", names.join(", "), weights.join(" ")).unwrap();
        }
    }
    create_out(&a.out)?;
    write(&a.out, "attention.csv", &csv_string(rows)?)?;
    let mut m = RunManifest::new("attention", serde_json::json!({}));
    m.schema_hash = Some(schema.content_hash());
    m.add_input(&a.input)?;
    m.add_input(a.checkpoint.join(CHECKPOINT_FILE))?;
    m.add_output(&a.out, "attention.csv")?;
    m.save(&a.out)?;
    if a.show {
        print!("{shown}");
    }
    Ok(())
}
