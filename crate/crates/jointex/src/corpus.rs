//! Sentence data model, gold label construction and corpus I/O.
//!
//! A corpus is line-delimited JSON, one record per sentence:
//!
//! ```json
//! {"tokens": ["Another", "a-10", "warthog", "was", "hit", "today"],
//!  "entities": [{"start": 1, "end": 2, "type": "VEH"}],
//!  "events": [{"trigger": 4, "type": "Attack",
//!              "args": [{"entity": 0, "role": "Target"}]}],
//!  "pos": [...], "chunk": [...], "deps": [{"head": 4, "rel": "nsubj"}, ...]}
//! ```
//!
//! `pos`, `chunk` and `deps` are optional; mention spans are inclusive and
//! must not overlap. A dependency edge's `head` pointing at the token itself
//! marks the root.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{BioTag, LabelSchema};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    /// Inclusive end token index.
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    /// Index into the sentence's mention list.
    #[serde(rename = "entity")]
    pub mention: usize,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Token index of the single-word trigger.
    pub trigger: usize,
    #[serde(rename = "type")]
    pub event_type: String,
    #[serde(default)]
    pub args: Vec<Argument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepEdge {
    /// Head token index; a self-loop marks the root.
    pub head: usize,
    pub rel: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    #[serde(rename = "entities", default)]
    pub mentions: Vec<Mention>,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deps: Option<Vec<DepEdge>>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Check structural invariants and normalize the annotation:
    /// events sharing a trigger token keep only the first, and arguments
    /// whose mention begins at their own trigger token are dropped (the
    /// label matrix cannot represent either). Returns the warnings issued.
    pub fn validate_and_normalize(&mut self) -> Result<Vec<String>> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::Annotation("sentence has no tokens".into()));
        }
        for m in &self.mentions {
            if m.end < m.start {
                return Err(Error::Annotation(format!(
                    "mention span [{}, {}] has end < start",
                    m.start, m.end
                )));
            }
            if m.end >= n {
                return Err(Error::Annotation(format!(
                    "mention span [{}, {}] out of bounds for {n} tokens",
                    m.start, m.end
                )));
            }
        }
        let mut order: Vec<usize> = (0..self.mentions.len()).collect();
        order.sort_by_key(|&i| self.mentions[i].start);
        for pair in order.windows(2) {
            let (a, b) = (&self.mentions[pair[0]], &self.mentions[pair[1]]);
            if b.start <= a.end {
                return Err(Error::Annotation(format!(
                    "overlapping mentions [{}, {}] and [{}, {}]",
                    a.start, a.end, b.start, b.end
                )));
            }
        }
        for (k, l) in [("pos", self.pos.as_ref().map(Vec::len)),
                       ("chunk", self.chunk.as_ref().map(Vec::len))]
        {
            if let Some(len) = l {
                if len != n {
                    return Err(Error::Annotation(format!(
                        "{k} has {len} entries for {n} tokens"
                    )));
                }
            }
        }
        if let Some(deps) = &self.deps {
            if deps.len() != n {
                return Err(Error::Annotation(format!(
                    "deps has {} entries for {n} tokens",
                    deps.len()
                )));
            }
            for (i, d) in deps.iter().enumerate() {
                if d.head >= n {
                    return Err(Error::Annotation(format!(
                        "dependency head {} of token {i} out of bounds",
                        d.head
                    )));
                }
            }
        }

        let mut warnings = Vec::new();
        let mut seen_triggers = Vec::new();
        let mut kept = Vec::new();
        for mut ev in std::mem::take(&mut self.events) {
            if ev.trigger >= n {
                return Err(Error::Annotation(format!(
                    "event trigger index {} out of bounds for {n} tokens",
                    ev.trigger
                )));
            }
            if seen_triggers.contains(&ev.trigger) {
                warnings.push(format!(
                    "token {} triggers more than one event; keeping the first",
                    ev.trigger
                ));
                continue;
            }
            seen_triggers.push(ev.trigger);
            let mut args = Vec::new();
            for arg in std::mem::take(&mut ev.args) {
                let Some(mention) = self.mentions.get(arg.mention) else {
                    return Err(Error::Annotation(format!(
                        "argument references mention {} but only {} exist",
                        arg.mention,
                        self.mentions.len()
                    )));
                };
                if mention.start == ev.trigger {
                    warnings.push(format!(
                        "argument mention at token {} coincides with its trigger; dropped",
                        ev.trigger
                    ));
                    continue;
                }
                args.push(arg);
            }
            ev.args = args;
            kept.push(ev);
        }
        self.events = kept;
        Ok(warnings)
    }

    /// All labels must exist in `schema`.
    pub fn check_schema(&self, schema: &LabelSchema) -> Result<()> {
        for m in &self.mentions {
            if schema.entity_type_index(&m.entity_type).is_none() {
                return Err(Error::SchemaMismatch(format!(
                    "entity type {:?} not in schema",
                    m.entity_type
                )));
            }
        }
        for ev in &self.events {
            if schema.event_type_index(&ev.event_type).is_none() {
                return Err(Error::SchemaMismatch(format!(
                    "event type {:?} not in schema",
                    ev.event_type
                )));
            }
            for arg in &ev.args {
                if schema.role_index(&arg.role).is_none() {
                    return Err(Error::SchemaMismatch(format!("role {:?} not in schema", arg.role)));
                }
            }
        }
        Ok(())
    }
}

/// The n-by-n argument role label matrix. Cell `(i, j)` holds the role the
/// mention beginning at token `j` plays in the event triggered at token `i`,
/// or `Other`. The diagonal, non-trigger rows and non-mention-begin columns
/// are always `Other`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgumentMatrix {
    n: usize,
    roles: Vec<usize>,
}

impl ArgumentMatrix {
    pub fn all_other(n: usize) -> Self {
        ArgumentMatrix { n, roles: vec![LabelSchema::OTHER; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.roles[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, role: usize) {
        self.roles[i * self.n + j] = role;
    }

    /// Row `i`: the role of every column under trigger `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.roles[i * self.n..(i + 1) * self.n]
    }
}

/// Per-token gold label structures for one sentence.
#[derive(Debug, Clone)]
pub struct GoldLabels {
    /// BIO tag per token.
    pub bio: Vec<BioTag>,
    /// Event type per token (`Other` off triggers).
    pub trigger: Vec<usize>,
    pub args: ArgumentMatrix,
}

/// BIO-encode the sentence's entity mentions.
pub fn encode_bio(sentence: &Sentence, schema: &LabelSchema) -> Result<Vec<BioTag>> {
    let n = sentence.len();
    let mut tags = vec![LabelSchema::OUTSIDE; n];
    for m in &sentence.mentions {
        let ty = schema.entity_type_index(&m.entity_type).ok_or_else(|| {
            Error::SchemaMismatch(format!("entity type {:?} not in schema", m.entity_type))
        })?;
        if m.end < m.start || m.end >= n {
            return Err(Error::Annotation(format!(
                "mention span [{}, {}] invalid for {n} tokens",
                m.start, m.end
            )));
        }
        for i in m.start..=m.end {
            if tags[i] != LabelSchema::OUTSIDE {
                return Err(Error::Annotation(format!(
                    "overlapping mentions at token {i} (span [{}, {}])",
                    m.start, m.end
                )));
            }
            tags[i] = if i == m.start { schema.begin_tag(ty) } else { schema.inside_tag(ty) };
        }
    }
    Ok(tags)
}

/// Build the argument role matrix from gold events.
pub fn build_argument_matrix(sentence: &Sentence, schema: &LabelSchema) -> Result<ArgumentMatrix> {
    let n = sentence.len();
    let mut matrix = ArgumentMatrix::all_other(n);
    for ev in &sentence.events {
        for arg in &ev.args {
            let mention = &sentence.mentions[arg.mention];
            let role = schema
                .role_index(&arg.role)
                .ok_or_else(|| Error::SchemaMismatch(format!("role {:?} not in schema", arg.role)))?;
            let (i, j) = (ev.trigger, mention.start);
            if i == j {
                // Unrepresentable; validate_and_normalize warns and drops these.
                continue;
            }
            let existing = matrix.get(i, j);
            if existing != LabelSchema::OTHER && existing != role {
                return Err(Error::Annotation(format!(
                    "conflicting roles {:?} and {:?} for trigger {i} and mention at {j}",
                    schema.roles[existing], arg.role
                )));
            }
            matrix.set(i, j, role);
        }
    }
    Ok(matrix)
}

impl GoldLabels {
    pub fn build(sentence: &Sentence, schema: &LabelSchema) -> Result<GoldLabels> {
        let bio = encode_bio(sentence, schema)?;
        let mut trigger = vec![LabelSchema::OTHER; sentence.len()];
        for ev in &sentence.events {
            let ty = schema.event_type_index(&ev.event_type).ok_or_else(|| {
                Error::SchemaMismatch(format!("event type {:?} not in schema", ev.event_type))
            })?;
            trigger[ev.trigger] = ty;
        }
        let args = build_argument_matrix(sentence, schema)?;
        Ok(GoldLabels { bio, trigger, args })
    }
}

/// A corpus plus any normalization warnings issued while loading it.
#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub sentences: Vec<Sentence>,
    pub warnings: Vec<String>,
}

/// Load and validate a line-delimited corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<LoadedCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut corpus = LoadedCorpus::default();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut sentence: Sentence = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let warnings = sentence
            .validate_and_normalize()
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        corpus
            .warnings
            .extend(warnings.into_iter().map(|w| format!("{}:{lineno}: {w}", path.display())));
        corpus.sentences.push(sentence);
    }
    Ok(corpus)
}

/// Write sentences as line-delimited JSON.
pub fn save_corpus(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for s in sentences {
        let line = serde_json::to_string(s).expect("sentence serialization cannot fail");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Derive a schema from the labels present in a corpus, in sorted order.
pub fn fit_schema(sentences: &[Sentence]) -> Result<LabelSchema> {
    let mut entity_types: Vec<String> = Vec::new();
    let mut event_types: Vec<String> = Vec::new();
    let mut roles: Vec<String> = Vec::new();
    let insert = |set: &mut Vec<String>, label: &str| {
        if !set.iter().any(|x| x == label) {
            set.push(label.to_string());
        }
    };
    for s in sentences {
        for m in &s.mentions {
            insert(&mut entity_types, &m.entity_type);
        }
        for ev in &s.events {
            insert(&mut event_types, &ev.event_type);
            for arg in &ev.args {
                insert(&mut roles, &arg.role);
            }
        }
    }
    entity_types.sort();
    event_types.sort();
    roles.sort();
    LabelSchema::new(&entity_types, &event_types, &roles)
}
