#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relabel::autodiff::{grad_check, AdResult, GradCheckReport, Graph, ParamStore, Tensor, Var};
use relabel::corpus::{build_vocab, EncodedExample, Vocabulary};
use relabel::encoders::{EncoderConfig, EncoderKind};
use relabel::heads::HeadKind;
use relabel::model::{Model, ModelConfig};
use relabel::schema::CertaintyClass;
use relabel::training::{weighted_loss, LossWeights};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values on a coarse grid, so no small perturbation changes an argmax.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 0.3).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

type Builder = Box<dyn for<'g> Fn(&mut Graph<'g, f64>) -> AdResult<Var> + Sync>;

/// Reduces an op's output to a scalar with fixed random weights.
fn readout(g: &mut Graph<'_, f64>, v: Var, w: &[f64]) -> AdResult<Var> {
    g.weighted_sum(v, w)
}

fn weights_for(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Names of the operations covered by [`op_case`].
pub const OPS: [&str; 23] = [
    "matmul",
    "add",
    "add_broadcast",
    "sub",
    "mul",
    "scale",
    "tanh",
    "sigmoid",
    "relu",
    "log",
    "concat",
    "stack_rows",
    "slice_rows",
    "slice_cols",
    "transpose",
    "reshape",
    "embedding_lookup",
    "conv1d_same",
    "max_over_time",
    "mean_over_rows",
    "softmax_rows",
    "log_softmax_rows",
    "pick",
];

/// A random instance of one op, reduced to a scalar.
pub fn op_case(op: &str, seed: u64) -> (ParamStore<f64>, Builder) {
    let mut r = rng(seed.wrapping_mul(7919) ^ op.len() as u64);
    let m = r.gen_range(1..4);
    let k = r.gen_range(1..4);
    let n = r.gen_range(1..4);
    let mut s = ParamStore::new();
    let out_len: usize;
    macro_rules! p {
        ($name:expr, $t:expr) => {
            s.add($name, $t).unwrap()
        };
    }
    let f: Box<dyn Fn(&mut Graph<'_, f64>) -> AdResult<Var> + Sync> = match op {
        "matmul" => {
            p!("a", uniform(&mut r, &[m, k], -1.0, 1.0));
            p!("b", uniform(&mut r, &[k, n], -1.0, 1.0));
            out_len = m * n;
            Box::new(|g| {
                let (a, b) = (g.param_named("a")?, g.param_named("b")?);
                g.matmul(a, b)
            })
        }
        "add" | "sub" | "mul" => {
            p!("a", uniform(&mut r, &[m, n], -1.0, 1.0));
            p!("b", uniform(&mut r, &[m, n], -1.0, 1.0));
            out_len = m * n;
            let op = op.to_string();
            Box::new(move |g| {
                let (a, b) = (g.param_named("a")?, g.param_named("b")?);
                match op.as_str() {
                    "add" => g.add(a, b),
                    "sub" => g.sub(a, b),
                    _ => g.mul(a, b),
                }
            })
        }
        "add_broadcast" => {
            p!("a", uniform(&mut r, &[m, n], -1.0, 1.0));
            p!("b", uniform(&mut r, &[1, n], -1.0, 1.0));
            out_len = m * n;
            Box::new(|g| {
                let (a, b) = (g.param_named("a")?, g.param_named("b")?);
                g.add(a, b)
            })
        }
        "scale" | "tanh" | "sigmoid" | "transpose" | "mean_over_rows" | "softmax_rows" | "log_softmax_rows" => {
            p!("a", uniform(&mut r, &[m, n], -2.0, 2.0));
            out_len = if op == "mean_over_rows" { n } else { m * n };
            let op = op.to_string();
            let c: f64 = r.gen_range(-2.0..2.0);
            Box::new(move |g| {
                let a = g.param_named("a")?;
                match op.as_str() {
                    "scale" => g.scale(a, c),
                    "tanh" => g.tanh(a),
                    "sigmoid" => g.sigmoid(a),
                    "transpose" => g.transpose(a),
                    "mean_over_rows" => g.mean_over_rows(a),
                    "softmax_rows" => g.softmax_rows(a),
                    _ => g.log_softmax_rows(a),
                }
            })
        }
        "relu" => {
            p!("a", away_from_zero(&mut r, &[m, n]));
            out_len = m * n;
            Box::new(|g| {
                let a = g.param_named("a")?;
                g.relu(a)
            })
        }
        "log" => {
            p!("a", uniform(&mut r, &[m, n], 0.5, 2.0));
            out_len = m * n;
            Box::new(|g| {
                let a = g.param_named("a")?;
                g.log(a)
            })
        }
        "concat" | "stack_rows" => {
            p!("a", uniform(&mut r, &[m, n], -1.0, 1.0));
            let other = if op == "concat" { [m, k] } else { [k, n] };
            p!("b", uniform(&mut r, &other, -1.0, 1.0));
            out_len = m * n + k * if op == "concat" { m } else { n };
            let op = op.to_string();
            Box::new(move |g| {
                let (a, b) = (g.param_named("a")?, g.param_named("b")?);
                if op == "concat" {
                    g.concat(&[a, b])
                } else {
                    g.stack_rows(&[a, b])
                }
            })
        }
        "slice_rows" | "slice_cols" => {
            let (rows, cols) = (m + 2, n + 2);
            p!("a", uniform(&mut r, &[rows, cols], -1.0, 1.0));
            let lo = r.gen_range(0..2);
            let hi = lo + r.gen_range(1..3);
            out_len = if op == "slice_rows" { (hi - lo) * cols } else { (hi - lo) * rows };
            let op = op.to_string();
            Box::new(move |g| {
                let a = g.param_named("a")?;
                if op == "slice_rows" {
                    g.slice_rows(a, lo, hi)
                } else {
                    g.slice_cols(a, lo, hi)
                }
            })
        }
        "reshape" => {
            p!("a", uniform(&mut r, &[m, n * 2], -1.0, 1.0));
            out_len = m * n * 2;
            Box::new(move |g| {
                let a = g.param_named("a")?;
                g.reshape(a, &[m * 2, n])
            })
        }
        "embedding_lookup" => {
            p!("table", uniform(&mut r, &[5, n], -1.0, 1.0));
            let ids: Vec<usize> = (0..m + 2).map(|_| r.gen_range(0..5)).collect();
            out_len = (m + 2) * n;
            Box::new(move |g| {
                let t = g.param_named("table")?;
                g.embedding_lookup(t, &ids)
            })
        }
        "conv1d_same" => {
            let len = m + 3;
            let width = r.gen_range(1..=4);
            p!("x", uniform(&mut r, &[len, k], -1.0, 1.0));
            p!("kernel", uniform(&mut r, &[width, k, n], -1.0, 1.0));
            out_len = len * n;
            Box::new(|g| {
                let (x, w) = (g.param_named("x")?, g.param_named("kernel")?);
                g.conv1d_same(x, w)
            })
        }
        "max_over_time" => {
            p!("a", distinct(&mut r, &[m + 1, n]));
            out_len = n;
            Box::new(|g| {
                let a = g.param_named("a")?;
                g.max_over_time(a)
            })
        }
        "pick" => {
            p!("a", uniform(&mut r, &[m, n + 1], -1.0, 1.0));
            let cols: Vec<usize> = (0..m).map(|_| r.gen_range(0..=n)).collect();
            out_len = m;
            Box::new(move |g| {
                let a = g.param_named("a")?;
                g.pick(a, &cols)
            })
        }
        other => panic!("unknown op {other}"),
    };
    let w = weights_for(&mut r, out_len);
    let builder: Builder = Box::new(move |g| {
        let v = f(g)?;
        readout(g, v, &w)
    });
    (s, builder)
}

pub fn check_op(op: &str, seed: u64) -> GradCheckReport {
    let (store, f) = op_case(op, seed);
    grad_check(&store, |g| f(g), EPS, TOL).unwrap()
}

pub fn tiny_model_config(kind: EncoderKind, head: HeadKind, deep: bool, n_labels: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            kind,
            vocab_size: 0,
            embed_dim: 4,
            hidden: 6,
            cnn_maps: 3,
            cnn_widths: vec![2, 3],
            n_tok: 7,
            strict_parity: false,
        },
        head,
        classifier_hidden: if deep { vec![5, 4] } else { vec![] },
        n_labels,
    }
}

pub fn tiny_vocab() -> Vocabulary {
    let words = "no acute haemorrhage infarct there is possible mass effect or midline shift";
    build_vocab(&[words.split(' ').map(String::from).collect()], 1)
}

pub fn random_example(r: &mut ChaCha8Rng, vocab_size: usize, n_tok: usize, n_labels: usize) -> EncodedExample {
    let len = r.gen_range(1..=n_tok);
    let mut ids: Vec<usize> = (0..len).map(|_| r.gen_range(1..vocab_size)).collect();
    ids.resize(n_tok, 0);
    EncodedExample {
        token_ids: ids,
        real_length: len,
        gold: (0..n_labels)
            .map(|_| CertaintyClass::from_index(r.gen_range(0..4)).unwrap())
            .collect(),
    }
}

/// Random model with every parameter drawn from uniform(-1, 1) (pad row
/// kept at zero). At the default init scale many gradient coordinates sit
/// near 1e-8, where the central-difference roundoff alone exceeds the
/// relative tolerance.
pub fn random_model(cfg: ModelConfig, seed: u64) -> Model {
    let mut r = rng(seed);
    let mut model: Model = Model::new(cfg, tiny_vocab(), &mut r, None).unwrap();
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let is_embedding = model.store.entry(id).name == "embedding";
        let cols = model.store.get(id).cols();
        for (i, v) in model.store.get_mut(id).data_mut().iter_mut().enumerate() {
            *v = if is_embedding && i < cols { 0.0 } else { r.gen_range(-1.0..1.0) };
        }
    }
    model
}

/// Gradient check of the weighted loss of `model` on one random example.
pub fn check_model_loss(model: &Model, seed: u64) -> GradCheckReport {
    let mut r = rng(seed ^ 0x5eed);
    let n_labels = model.config.n_labels;
    let x = random_example(&mut r, model.vocab.len(), model.config.encoder.n_tok, n_labels);
    let counts: Vec<u64> = (0..n_labels).map(|_| r.gen_range(1..20)).collect();
    let w = LossWeights::from_counts(20, &counts, 1.0).unwrap();
    grad_check(
        &model.store,
        |g| {
            let out = model.forward(g, &x).expect("forward");
            Ok(weighted_loss(g, out.logits, &x.gold, &w).expect("loss"))
        },
        EPS,
        TOL,
    )
    .unwrap()
}
