//! Token input vectors: trainable word embeddings plus optional binary
//! POS/chunk/dependency blocks, and the windowed local-context vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};

/// Word inventory with a dedicated UNK slot at index 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Words in index order; `words[0]` is the UNK pseudo-token.
    pub words: Vec<String>,
    /// Training-corpus frequency per index (UNK slot holds 0).
    pub counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

pub const UNK: usize = 0;
const UNK_TOKEN: &str = "<unk>";

impl Vocabulary {
    /// Collect the vocabulary of a training corpus. Word order is first
    /// occurrence, which is deterministic for a fixed corpus.
    pub fn fit(sentences: &[Sentence]) -> Vocabulary {
        let mut words = vec![UNK_TOKEN.to_string()];
        let mut counts = vec![0u64];
        let mut index = HashMap::new();
        index.insert(UNK_TOKEN.to_string(), 0);
        for s in sentences {
            for tok in &s.tokens {
                match index.get(tok) {
                    Some(&i) => counts[i] += 1,
                    None => {
                        index.insert(tok.clone(), words.len());
                        words.push(tok.clone());
                        counts.push(1);
                    }
                }
            }
        }
        Vocabulary { words, counts, index }
    }

    /// Rebuild the lookup map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn lookup(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    /// Training-time lookup: singleton words drop to UNK with probability
    /// `rare_unk_prob` so the UNK embedding receives gradient.
    pub fn lookup_train(&self, word: &str, rare_unk_prob: f64, rng: &mut impl Rng) -> usize {
        let idx = self.lookup(word);
        if idx != UNK
            && self.counts[idx] == 1
            && rare_unk_prob > 0.0
            && rng.gen::<f64>() < rare_unk_prob
        {
            UNK
        } else {
            idx
        }
    }
}

/// Initial values for the `|V| x dim` trainable embedding table. The rows are
/// registered as individual parameters by the model so updates stay sparse.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    /// Rows drawn uniformly from [-0.25, 0.25].
    pub fn random(vocab: &Vocabulary, dim: usize, rng: &mut impl Rng) -> EmbeddingTable {
        let rows = (0..vocab.len()).map(|_| random_row(dim, rng)).collect();
        EmbeddingTable { dim, rows }
    }
}

fn random_row(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-0.25..=0.25)).collect()
}

/// Read a plain-text embedding file (`word v1 .. v_dim` per line) and build
/// the table for `vocab`. Words missing from the file get random rows.
pub fn load_pretrained(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut pretrained: HashMap<String, Vec<f64>> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap().to_string();
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::parse(path, lineno, format!("bad float {p:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("embedding has {} values, expected {dim}", values.len()),
            ));
        }
        pretrained.insert(word, values);
    }
    // Fixed iteration over vocab indices keeps the random draws deterministic.
    let rows = vocab
        .words
        .iter()
        .map(|w| pretrained.get(w).cloned().unwrap_or_else(|| random_row(dim, rng)))
        .collect();
    Ok(EmbeddingTable { dim, rows })
}

/// One-hot index maps for POS tags, chunk tags and dependency relation
/// labels, fitted on the training corpus. Unseen tags at test time encode as
/// all-zeros. When disabled the binary block has width 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinaryFeatureEncoder {
    pub enabled: bool,
    pub pos_tags: Vec<String>,
    pub chunk_tags: Vec<String>,
    pub dep_relations: Vec<String>,
}

impl BinaryFeatureEncoder {
    pub fn disabled() -> Self {
        BinaryFeatureEncoder {
            enabled: false,
            pos_tags: Vec::new(),
            chunk_tags: Vec::new(),
            dep_relations: Vec::new(),
        }
    }

    /// Collect tag inventories from the training corpus, sorted for stable
    /// indices.
    pub fn fit(sentences: &[Sentence]) -> Self {
        let mut pos_tags: Vec<String> = Vec::new();
        let mut chunk_tags: Vec<String> = Vec::new();
        let mut dep_relations: Vec<String> = Vec::new();
        let insert = |set: &mut Vec<String>, label: &str| {
            if !set.iter().any(|x| x == label) {
                set.push(label.to_string());
            }
        };
        for s in sentences {
            if let Some(pos) = &s.pos {
                pos.iter().for_each(|t| insert(&mut pos_tags, t));
            }
            if let Some(chunk) = &s.chunk {
                chunk.iter().for_each(|t| insert(&mut chunk_tags, t));
            }
            if let Some(deps) = &s.deps {
                deps.iter().for_each(|d| insert(&mut dep_relations, &d.rel));
            }
        }
        pos_tags.sort();
        chunk_tags.sort();
        dep_relations.sort();
        BinaryFeatureEncoder { enabled: true, pos_tags, chunk_tags, dep_relations }
    }

    pub fn width(&self) -> usize {
        if self.enabled {
            self.pos_tags.len() + self.chunk_tags.len() + self.dep_relations.len()
        } else {
            0
        }
    }

    /// Binary block for token `i`: POS one-hot, chunk one-hot, then an
    /// indicator per dependency relation that touches the token (as
    /// dependent or as head).
    pub fn encode(&self, sentence: &Sentence, i: usize) -> Vec<f64> {
        if !self.enabled {
            return Vec::new();
        }
        let mut block = vec![0.0; self.width()];
        if let Some(pos) = &sentence.pos {
            if let Some(k) = self.pos_tags.iter().position(|t| t == &pos[i]) {
                block[k] = 1.0;
            }
        }
        let chunk_base = self.pos_tags.len();
        if let Some(chunk) = &sentence.chunk {
            if let Some(k) = self.chunk_tags.iter().position(|t| t == &chunk[i]) {
                block[chunk_base + k] = 1.0;
            }
        }
        let dep_base = chunk_base + self.chunk_tags.len();
        if let Some(deps) = &sentence.deps {
            let mut mark = |rel: &str| {
                if let Some(k) = self.dep_relations.iter().position(|t| t == rel) {
                    block[dep_base + k] = 1.0;
                }
            };
            if deps[i].head != i {
                mark(&deps[i].rel);
            }
            for (child, d) in deps.iter().enumerate() {
                if d.head == i && child != i {
                    mark(&d.rel);
                }
            }
        }
        block
    }
}

/// Full input vector for token `i`: embedding row then binary block. The
/// model's tape path concatenates the same pieces; this plain version exists
/// for inspection and tests.
pub fn encode_token(
    sentence: &Sentence,
    i: usize,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    binary: &BinaryFeatureEncoder,
) -> Vec<f64> {
    let mut x = table.rows[vocab.lookup(&sentence.tokens[i])].clone();
    x.extend(binary.encode(sentence, i));
    x
}

/// Local context `D_i`: embeddings of tokens within window `u` of `i`,
/// zero-padded outside the sentence. Length `(2u + 1) * dim`.
pub fn local_context(embeddings: &[Vec<f64>], i: usize, u: usize, dim: usize) -> Vec<f64> {
    let n = embeddings.len() as isize;
    let mut out = Vec::with_capacity((2 * u + 1) * dim);
    for offset in -(u as isize)..=(u as isize) {
        let j = i as isize + offset;
        if j < 0 || j >= n {
            out.extend(std::iter::repeat(0.0).take(dim));
        } else {
            debug_assert_eq!(embeddings[j as usize].len(), dim);
            out.extend_from_slice(&embeddings[j as usize]);
        }
    }
    out
}
