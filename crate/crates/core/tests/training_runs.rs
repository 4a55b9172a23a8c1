use relabel::corpus::tokenize;
use relabel::embed_pretrain::{skipgram_train, PretrainConfig};
use relabel::encoders::EncoderKind;
use relabel::heads::HeadKind;
use relabel::schema::LabelSchema;
use relabel::synth::generate_synthetic;
use relabel::toy::{generate_toy_corpus, toy_schema, ToyCorpusConfig};
use relabel::training::{score, train, TrainConfig, Trainer};

fn small(model: EncoderKind) -> TrainConfig {
    TrainConfig {
        hidden: 16,
        embed_dim: 16,
        cnn_maps: 16,
        max_epochs: 5,
        seed: 3,
        ..TrainConfig::for_model(model)
    }
}

#[test]
fn loss_falls_over_five_epochs() {
    let schema = LabelSchema::reference();
    let synth = generate_synthetic(&schema);
    for model in [EncoderKind::Mean, EncoderKind::Caml, EncoderKind::Bigru] {
        let out = train(&small(model), &schema, &synth, &synth, None).unwrap();
        let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
        assert_eq!(losses.len(), 5);
        assert!(losses[4] < losses[0], "{model}: {losses:?}");
    }
}

#[test]
fn best_epoch_parameters_are_returned() {
    let schema = toy_schema();
    let corpus = generate_toy_corpus(&schema, &ToyCorpusConfig { n_train: 150, n_val: 60, ..Default::default() });
    let config = TrainConfig {
        max_epochs: 12,
        patience: 3,
        lr: 0.01,
        ..small(EncoderKind::Bigru)
    };
    let out = train(&config, &schema, &corpus.train, &corpus.val, None).unwrap();
    assert!(out.best_epoch >= 1);
    assert!(out.history.len() <= out.best_epoch + config.patience);
    let best = out.history[out.best_epoch - 1];
    assert_eq!(best.val_micro_f1, out.best_val_micro_f1);
    assert!(out.history.iter().all(|r| r.val_micro_f1 <= best.val_micro_f1));
    let val: Vec<_> = corpus
        .val
        .iter()
        .map(|s| out.model.encode_text(&s.text).with_gold(s.gold(&schema)))
        .collect();
    assert_eq!(score(&out.model, &val).unwrap().0, best.val_micro_f1);
}

#[test]
fn stepping_matches_fit() {
    let schema = toy_schema();
    let corpus = generate_toy_corpus(&schema, &ToyCorpusConfig { n_train: 80, n_val: 30, ..Default::default() });
    let config = TrainConfig {
        max_epochs: 3,
        ..small(EncoderKind::Caml)
    };
    let fitted = train(&config, &schema, &corpus.train, &corpus.val, None).unwrap();
    let mut t = Trainer::<f64>::new(config, &schema, &corpus.train, &corpus.val, None).unwrap();
    while !t.is_finished() {
        t.run_epoch().unwrap();
    }
    let stepped = t.into_outcome();
    assert_eq!(stepped.history, fitted.history);
    assert_eq!(stepped.model.store, fitted.model.store);
}

#[test]
fn pretrained_rows_seed_the_embedding_table() {
    let schema = toy_schema();
    let corpus = generate_toy_corpus(&schema, &ToyCorpusConfig { n_train: 60, n_val: 20, ..Default::default() });
    let docs: Vec<Vec<String>> = corpus.train.iter().map(|s| tokenize(&s.text)).collect();
    let emb = skipgram_train(&docs, &PretrainConfig { dim: 16, epochs: 1, min_count: 1, ..Default::default() }).unwrap();
    let config = TrainConfig {
        max_epochs: 1,
        lr: 1e-12,
        head: HeadKind::Single,
        ..small(EncoderKind::Bigru)
    };
    let out = train(&config, &schema, &corpus.train, &corpus.val, Some(&emb)).unwrap();
    let table = out.model.store.get(out.model.store.id("embedding").unwrap());
    let token = &emb.tokens()[0];
    let id = out.model.vocab.get(token).unwrap();
    for (a, b) in table.row_slice(id).iter().zip(emb.vector(0)) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(table.row_slice(0).iter().all(|&v| v == 0.0));
}

#[test]
fn rejects_empty_splits() {
    let schema = toy_schema();
    let corpus = generate_toy_corpus(&schema, &ToyCorpusConfig { n_train: 10, n_val: 5, ..Default::default() });
    assert!(train(&small(EncoderKind::Mean), &schema, &[], &corpus.val, None).is_err());
    assert!(train(&small(EncoderKind::Mean), &schema, &corpus.train, &[], None).is_err());
}
