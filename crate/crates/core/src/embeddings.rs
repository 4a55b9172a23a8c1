//! Pretrained word vectors in the plain-text exchange format: a header line
//! `<count> <dim>` followed by one `token v1 .. v_dim` line per token.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedEmbeddings {
    dim: usize,
    tokens: Vec<String>,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
}

impl PretrainedEmbeddings {
    pub fn new(dim: usize, tokens: Vec<String>, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || vectors.len() != tokens.len() * dim {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} tokens of dimension {dim}",
                vectors.len(),
                tokens.len()
            )));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(PretrainedEmbeddings {
            dim,
            tokens,
            vectors,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vector(i))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.tokens.len(), self.dim);
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(t);
            for v in self.vector(i) {
                write!(s, " {v}").expect("write to string");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Embeddings { line, message };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let mut parts = header.split_whitespace();
        let mut field = |what: &str| -> Result<usize> {
            parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| bad(1, format!("header needs `<count> <dim>`, missing {what}")))
        };
        let count = field("count")?;
        let dim = field("dim")?;
        let mut tokens = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count * dim);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line");
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>().map_err(|e| bad(line_no, format!("`{p}`: {e}"))))
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(bad(line_no, format!("expected {dim} values, found {}", values.len())));
            }
            tokens.push(token.to_string());
            vectors.extend(values);
        }
        if tokens.len() != count {
            return Err(bad(1, format!("header declares {count} tokens, found {}", tokens.len())));
        }
        Self::new(dim, tokens, vectors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
