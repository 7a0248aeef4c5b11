//! The joint model: shared encoder plus the three task heads, and the
//! end-to-end prediction pipeline.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Mention, Sentence};
use crate::encoder::BiGru;
use crate::entity::{self, TransitionMatrix};
use crate::error::Result;
use crate::event::{self, PredictedEvent};
use crate::features::{BinaryFeatureEncoder, EmbeddingTable, Vocabulary};
use crate::schema::{BioTag, LabelSchema};
use crate::tensor::{Graph, ParamId, ParamSet, Tensor};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Word embedding dimension.
    pub embed_dim: usize,
    /// Hidden units per GRU direction.
    pub hidden_dim: usize,
    /// Hidden layer width of the three feed-forward heads.
    pub ff_hidden: usize,
    /// Local context window radius.
    pub u: usize,
    /// Binary POS/chunk/dependency blocks and pairwise discrete features.
    /// Disabled gives the end-to-end configuration (word embeddings only).
    pub use_external_features: bool,
    /// Width of the hashed pairwise feature vector.
    pub bij_width: usize,
    /// Feed the label slots of the pairwise features as printed
    /// (entity label of the trigger token, event type of the argument token)
    /// instead of the default coherent reading.
    pub eq1_literal_indexing: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 300,
            hidden_dim: 300,
            ff_hidden: 600,
            u: 2,
            use_external_features: true,
            bij_width: 1000,
            eq1_literal_indexing: false,
        }
    }
}

/// One-hidden-layer feed-forward net with tanh activation; the output layer
/// produces logits for a softmax.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
    pub output: usize,
}

impl FeedForward {
    pub fn register(
        params: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> FeedForward {
        let mut mat = |name: &str, rows: usize, cols: usize, params: &mut ParamSet| {
            let values = (0..rows * cols).map(|_| rng.gen_range(-0.08..=0.08)).collect();
            params.add(format!("{prefix}.{name}"), vec![rows, cols], values)
        };
        let w1 = mat("w1", hidden, input_dim, params);
        let w2 = mat("w2", output, hidden, params);
        let b1 = params.add(format!("{prefix}.b1"), vec![hidden], vec![0.0; hidden]);
        let b2 = params.add(format!("{prefix}.b2"), vec![output], vec![0.0; output]);
        FeedForward { w1, b1, w2, b2, input_dim, hidden, output }
    }

    /// Logits over the output labels. During training a dropout mask is
    /// applied to the hidden activations.
    pub fn logits(&self, g: &mut Graph, x: Tensor, dropout: Option<&mut Dropout>) -> Result<Tensor> {
        let w1 = g.param(self.w1);
        let b1 = g.param(self.b1);
        let pre = g.affine(w1, x, b1)?;
        let mut hidden = g.tanh(pre);
        if let Some(ctx) = dropout {
            let mask = ctx.mask(g, self.hidden);
            hidden = g.mul(hidden, mask);
        }
        let w2 = g.param(self.w2);
        let b2 = g.param(self.b2);
        g.affine(w2, hidden, b2)
    }
}

/// Inverted-scaling dropout: kept coordinates are divided by the keep
/// probability during training so inference needs no rescaling. Masks are
/// sampled outside the tape and applied as an elementwise product.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask(&mut self, g: &mut Graph, n: usize) -> Tensor {
        let keep = 1.0 - self.rate;
        let values: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        g.vector(values)
    }
}

/// Index of the maximum value; ties break to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// The tape tensors shared by all three heads for one sentence.
pub struct SentenceStates {
    /// Shared hidden vectors `h_i` (both GRU directions).
    pub hidden: Vec<Tensor>,
    /// Local context vectors `D_i`.
    pub context: Vec<Tensor>,
}

/// Joint extractor: embeddings, bidirectional GRU and the three heads over
/// the shared representation.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub config: ModelConfig,
    pub schema: LabelSchema,
    pub vocab: Vocabulary,
    pub binary: BinaryFeatureEncoder,
    pub params: ParamSet,
    pub embed_rows: Vec<ParamId>,
    pub bigru: BiGru,
    pub emd_head: FeedForward,
    pub ed_head: FeedForward,
    pub arp_head: FeedForward,
}

impl JointModel {
    /// Register all parameters. The registration order (embeddings, forward
    /// GRU, backward GRU, EMD, ED, ARP heads) is part of the checkpoint
    /// contract.
    pub fn new(
        config: ModelConfig,
        schema: LabelSchema,
        vocab: Vocabulary,
        binary: BinaryFeatureEncoder,
        embeddings: EmbeddingTable,
        rng: &mut ChaCha8Rng,
    ) -> JointModel {
        assert_eq!(embeddings.dim, config.embed_dim);
        assert_eq!(embeddings.rows.len(), vocab.len());
        let binary = if config.use_external_features { binary } else { BinaryFeatureEncoder::disabled() };

        let mut params = ParamSet::new();
        let embed_rows: Vec<ParamId> = embeddings
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| params.add(format!("embed[{i}]"), vec![config.embed_dim], row.clone()))
            .collect();

        let input_dim = config.embed_dim + binary.width();
        let bigru = BiGru::register(&mut params, input_dim, config.hidden_dim, rng);

        let h_dim = bigru.output_dim();
        let ctx_dim = (2 * config.u + 1) * config.embed_dim;
        let emd_head = FeedForward::register(
            &mut params,
            "emd",
            h_dim + ctx_dim,
            config.ff_hidden,
            schema.num_bio_tags(),
            rng,
        );
        let ed_head = FeedForward::register(
            &mut params,
            "ed",
            h_dim + ctx_dim,
            config.ff_hidden,
            schema.event_types.len(),
            rng,
        );
        let arp_input = 2 * h_dim
            + 2 * ctx_dim
            + schema.num_bio_tags()
            + schema.event_types.len()
            + (schema.event_types.len() + schema.roles.len())
            + if config.use_external_features { config.bij_width } else { 0 };
        let arp_head = FeedForward::register(
            &mut params,
            "arp",
            arp_input,
            config.ff_hidden,
            schema.roles.len(),
            rng,
        );

        JointModel {
            config,
            schema,
            vocab,
            binary,
            params,
            embed_rows,
            bigru,
            emd_head,
            ed_head,
            arp_head,
        }
    }

    /// Width of the per-token encoder input `x_i`.
    pub fn token_input_width(&self) -> usize {
        self.config.embed_dim + self.binary.width()
    }

    /// Width of the local context vector `D_i`.
    pub fn context_width(&self) -> usize {
        (2 * self.config.u + 1) * self.config.embed_dim
    }

    /// Width of the EMD/ED head input `[h_i, D_i]`.
    pub fn head_input_width(&self) -> usize {
        self.bigru.output_dim() + self.context_width()
    }

    /// Width of the pairwise role head input.
    pub fn arp_input_width(&self) -> usize {
        self.arp_head.input_dim
    }

    pub fn memory_width(&self) -> usize {
        self.schema.event_types.len() + self.schema.roles.len()
    }

    /// Width of the hashed pairwise block (zero when external features are
    /// disabled).
    pub fn bij_width(&self) -> usize {
        if self.config.use_external_features {
            self.config.bij_width
        } else {
            0
        }
    }

    /// Inference-time token indices (no UNK noise).
    pub fn token_indices(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.tokens.iter().map(|t| self.vocab.lookup(t)).collect()
    }

    /// Run the shared encoding: embeddings (optionally dropped out), binary
    /// blocks, bidirectional GRU and local contexts.
    pub fn encode_sentence(
        &self,
        g: &mut Graph,
        sentence: &Sentence,
        token_indices: &[usize],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<SentenceStates> {
        let n = sentence.len();
        assert!(n >= 1, "encoder requires n >= 1 tokens");
        assert_eq!(token_indices.len(), n);

        let embeds: Vec<Tensor> =
            token_indices.iter().map(|&idx| g.param(self.embed_rows[idx])).collect();

        let mut inputs = Vec::with_capacity(n);
        for i in 0..n {
            let mut d = embeds[i];
            if let Some(ctx) = dropout.as_deref_mut() {
                if ctx.rate > 0.0 {
                    let mask = ctx.mask(g, self.config.embed_dim);
                    d = g.mul(d, mask);
                }
            }
            let binary_block = self.binary.encode(sentence, i);
            if binary_block.is_empty() {
                inputs.push(d);
            } else {
                let block = g.vector(binary_block);
                inputs.push(g.concat(&[d, block]));
            }
        }
        let hidden = self.bigru.encode(g, &inputs)?;

        // Local contexts reuse the clean embedding tensors; zero padding at
        // the boundaries.
        let u = self.config.u as isize;
        let mut context = Vec::with_capacity(n);
        for i in 0..n {
            let mut parts = Vec::with_capacity(2 * self.config.u + 1);
            for offset in -u..=u {
                let j = i as isize + offset;
                if j < 0 || j >= n as isize {
                    parts.push(g.zeros(self.config.embed_dim));
                } else {
                    parts.push(embeds[j as usize]);
                }
            }
            context.push(g.concat(&parts));
        }
        Ok(SentenceStates { hidden, context })
    }

    /// Entity head distribution for token `i`.
    pub fn emd_distribution(
        &self,
        g: &mut Graph,
        states: &SentenceStates,
        i: usize,
        dropout: Option<&mut Dropout>,
    ) -> Result<Tensor> {
        let input = g.concat(&[states.hidden[i], states.context[i]]);
        let logits = self.emd_head.logits(g, input, dropout)?;
        Ok(g.softmax(logits))
    }

    pub fn emd_logits(
        &self,
        g: &mut Graph,
        states: &SentenceStates,
        i: usize,
        dropout: Option<&mut Dropout>,
    ) -> Result<Tensor> {
        let input = g.concat(&[states.hidden[i], states.context[i]]);
        self.emd_head.logits(g, input, dropout)
    }

    /// Trigger head: distribution over event types and the greedy choice.
    pub fn trigger_predict(
        &self,
        g: &mut Graph,
        states: &SentenceStates,
        i: usize,
    ) -> Result<(Vec<f64>, usize)> {
        let input = g.concat(&[states.hidden[i], states.context[i]]);
        let logits = self.ed_head.logits(g, input, None)?;
        let probs = g.softmax(logits);
        let values = g.values(probs).to_vec();
        let choice = argmax(&values);
        Ok((values, choice))
    }

    pub fn ed_logits(
        &self,
        g: &mut Graph,
        states: &SentenceStates,
        i: usize,
        dropout: Option<&mut Dropout>,
    ) -> Result<Tensor> {
        let input = g.concat(&[states.hidden[i], states.context[i]]);
        self.ed_head.logits(g, input, dropout)
    }

    /// Assemble the pairwise feature vector for (trigger `i`, argument
    /// begin `j`) and the fixed label/memory/discrete conditioning blocks.
    pub fn arp_input(
        &self,
        g: &mut Graph,
        states: &SentenceStates,
        i: usize,
        j: usize,
        cond: &event::ArpCondition,
    ) -> Tensor {
        debug_assert_ne!(i, j);
        let mut label_block = vec![0.0; self.schema.num_bio_tags() + self.schema.event_types.len()];
        label_block[cond.entity_label] = 1.0;
        label_block[self.schema.num_bio_tags() + cond.trigger_label] = 1.0;
        debug_assert_eq!(cond.memory.len(), self.memory_width());
        debug_assert_eq!(cond.bij.len(), self.bij_width());

        let labels = g.vector(label_block);
        let memory = g.vector(cond.memory.clone());
        if cond.bij.is_empty() {
            g.concat(&[states.hidden[i], states.context[i], states.hidden[j], states.context[j], labels, memory])
        } else {
            let bij = g.vector(cond.bij.clone());
            g.concat(&[states.hidden[i], states.context[i], states.hidden[j], states.context[j], labels, memory, bij])
        }
    }

    pub fn arp_logits(
        &self,
        g: &mut Graph,
        states: &SentenceStates,
        i: usize,
        j: usize,
        cond: &event::ArpCondition,
        dropout: Option<&mut Dropout>,
    ) -> Result<Tensor> {
        let input = self.arp_input(g, states, i, j, cond);
        self.arp_head.logits(g, input, dropout)
    }

    /// Role head: distribution over roles and the greedy choice.
    pub fn argument_predict(
        &self,
        g: &mut Graph,
        states: &SentenceStates,
        i: usize,
        j: usize,
        cond: &event::ArpCondition,
    ) -> Result<(Vec<f64>, usize)> {
        let logits = self.arp_logits(g, states, i, j, cond, None)?;
        let probs = g.softmax(logits);
        let values = g.values(probs).to_vec();
        let choice = argmax(&values);
        Ok((values, choice))
    }

    /// Decode the BIO tag sequence for a sentence with transition-constrained
    /// Viterbi over the entity head's log-probabilities.
    pub fn predict_tags(&self, sentence: &Sentence) -> Result<Vec<BioTag>> {
        let mut g = Graph::new(&self.params);
        let token_indices = self.token_indices(sentence);
        let states = self.encode_sentence(&mut g, sentence, &token_indices, None)?;
        let mut log_probs = Vec::with_capacity(sentence.len());
        for i in 0..sentence.len() {
            let dist = self.emd_distribution(&mut g, &states, i, None)?;
            log_probs.push(g.values(dist).iter().map(|&p| p.ln()).collect::<Vec<f64>>());
        }
        let transitions = TransitionMatrix::for_schema(&self.schema);
        Ok(entity::viterbi_decode(&log_probs, &transitions))
    }

    /// Full pipeline: entity tags, then left-to-right event decoding against
    /// the predicted mentions.
    pub fn predict(&self, sentence: &Sentence) -> Result<SentencePrediction> {
        let tags = self.predict_tags(sentence)?;
        self.predict_with_tags(sentence, &tags)
    }

    /// Event decoding on top of an externally supplied tag sequence (the
    /// pipelined setting, or gold tags for diagnostics).
    pub fn predict_with_tags(&self, sentence: &Sentence, tags: &[BioTag]) -> Result<SentencePrediction> {
        let mentions = entity::tags_to_mentions(tags, &self.schema);
        let mut g = Graph::new(&self.params);
        let token_indices = self.token_indices(sentence);
        let states = self.encode_sentence(&mut g, sentence, &token_indices, None)?;
        let events = event::decode_events(self, &mut g, &states, sentence, tags)?;
        Ok(SentencePrediction { tags: tags.to_vec(), mentions, events })
    }
}

/// Everything the model extracts from one sentence.
#[derive(Debug, Clone)]
pub struct SentencePrediction {
    pub tags: Vec<BioTag>,
    pub mentions: Vec<Mention>,
    pub events: Vec<PredictedEvent>,
}

impl SentencePrediction {
    /// Render as a corpus sentence so predictions round-trip through the
    /// corpus loader.
    pub fn to_sentence(&self, source: &Sentence, schema: &LabelSchema) -> Sentence {
        let events = self
            .events
            .iter()
            .map(|ev| crate::corpus::Event {
                trigger: ev.trigger,
                event_type: schema.event_types[ev.event_type].clone(),
                args: ev
                    .args
                    .iter()
                    .map(|&(begin, role)| {
                        let mention = self
                            .mentions
                            .iter()
                            .position(|m| m.start == begin)
                            .expect("argument anchors a decoded mention");
                        crate::corpus::Argument {
                            mention,
                            role: schema.roles[role].clone(),
                        }
                    })
                    .collect(),
            })
            .collect();
        Sentence {
            tokens: source.tokens.clone(),
            mentions: self.mentions.clone(),
            events,
            pos: source.pos.clone(),
            chunk: source.chunk.clone(),
            deps: source.deps.clone(),
        }
    }
}
