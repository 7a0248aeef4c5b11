//! Joint training: the weighted negative log-likelihood, Adadelta updates,
//! Frobenius-norm rescaling, the mini-batch loop and checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{GoldLabels, Sentence};
use crate::error::{Error, Result};
use crate::event::{bij_features, ArpCondition, MemoryVector};
use crate::features::{BinaryFeatureEncoder, EmbeddingTable, Vocabulary};
use crate::model::{Dropout, JointModel, ModelConfig};
use crate::schema::LabelSchema;
use crate::tensor::{check_gradients, GradAccum, GradCheckReport, Graph, ParamSet, Tensor};

/// Loss term weights: entity, trigger and role components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.5, beta: 1.0, gamma: 0.5 }
    }
}

/// Optimization hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub frobenius_cap: f64,
    pub dropout: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Probability of mapping a frequency-1 word to UNK during training.
    pub rare_unk_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            beta: 1.0,
            gamma: 0.5,
            batch_size: 50,
            frobenius_cap: 3.0,
            dropout: 0.5,
            rho: 0.95,
            epsilon: 1e-6,
            epochs: 50,
            seed: 42,
            rare_unk_prob: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.frobenius_cap <= 0.0 || self.rho <= 0.0 || self.rho >= 1.0 || self.epsilon <= 0.0 {
            return Err(Error::Config("invalid optimizer constants".into()));
        }
        if !(0.0..=1.0).contains(&self.rare_unk_prob) {
            return Err(Error::Config("rare_unk_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Model plus optimization settings, loadable from one TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// The three unweighted loss sums as graph tensors.
pub struct LossTerms {
    pub total: Tensor,
    pub entity: Tensor,
    pub trigger: Tensor,
    pub role: Tensor,
}

/// Scalar view of one sentence's loss.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: f64,
    pub entity: f64,
    pub trigger: f64,
    pub role: f64,
}

fn sum_terms(g: &mut Graph, terms: &[Tensor]) -> Tensor {
    match terms.split_first() {
        None => g.vector(vec![0.0]),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = g.add(acc, t);
            }
            acc
        }
    }
}

/// Build the weighted joint loss for one sentence on the graph, with gold
/// labels feeding every conditioning feature (teacher forcing).
///
/// The entity and trigger terms sum over all tokens; the role term sums only
/// over (gold trigger, gold mention-begin) pairs, everything else is skipped.
/// Terms with a zero weight are skipped entirely.
pub fn joint_loss_graph(
    model: &JointModel,
    g: &mut Graph,
    sentence: &Sentence,
    gold: &GoldLabels,
    weights: &LossWeights,
    token_indices: &[usize],
    mut dropout: Option<&mut Dropout>,
) -> Result<LossTerms> {
    let n = sentence.len();
    let states = model.encode_sentence(g, sentence, token_indices, dropout.as_deref_mut())?;

    let mut entity_terms = Vec::new();
    if weights.alpha != 0.0 {
        for i in 0..n {
            let logits = model.emd_logits(g, &states, i, dropout.as_deref_mut())?;
            entity_terms.push(g.nll(logits, gold.bio[i]));
        }
    }
    let mut trigger_terms = Vec::new();
    if weights.beta != 0.0 {
        for i in 0..n {
            let logits = model.ed_logits(g, &states, i, dropout.as_deref_mut())?;
            trigger_terms.push(g.nll(logits, gold.trigger[i]));
        }
    }
    let mut role_terms = Vec::new();
    if weights.gamma != 0.0 {
        let begins: Vec<usize> =
            (0..n).filter(|&j| model.schema.is_begin(gold.bio[j])).collect();
        let mut memory = MemoryVector::new(&model.schema);
        for i in 0..n {
            if gold.trigger[i] == LabelSchema::OTHER {
                continue;
            }
            for &j in &begins {
                if j == i {
                    continue;
                }
                let bij = bij_features(sentence, i, j, model.config.u, model.bij_width());
                let cond = ArpCondition::new(
                    model,
                    gold.bio[i],
                    gold.bio[j],
                    gold.trigger[i],
                    gold.trigger[j],
                    memory.bits(),
                    bij,
                );
                let logits = model.arp_logits(g, &states, i, j, &cond, dropout.as_deref_mut())?;
                role_terms.push(g.nll(logits, gold.args.get(i, j)));
            }
            memory.observe_event(gold.trigger[i]);
            for &j in &begins {
                if j != i {
                    memory.observe_role(gold.args.get(i, j));
                }
            }
        }
    }

    let entity = sum_terms(g, &entity_terms);
    let trigger = sum_terms(g, &trigger_terms);
    let role = sum_terms(g, &role_terms);
    let we = g.scale(entity, weights.alpha);
    let wt = g.scale(trigger, weights.beta);
    let wr = g.scale(role, weights.gamma);
    let et = g.add(we, wt);
    let total = g.add(et, wr);
    Ok(LossTerms { total, entity, trigger, role })
}

/// Evaluate the loss of one sentence without dropout.
pub fn joint_loss(
    model: &JointModel,
    sentence: &Sentence,
    gold: &GoldLabels,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(&model.params);
    let token_indices = model.token_indices(sentence);
    let terms = joint_loss_graph(model, &mut g, sentence, gold, weights, &token_indices, None)?;
    Ok(LossBreakdown {
        total: g.scalar_value(terms.total),
        entity: g.scalar_value(terms.entity),
        trigger: g.scalar_value(terms.trigger),
        role: g.scalar_value(terms.role),
    })
}

/// One Adadelta step on a flat parameter:
///
/// ```text
/// Eg <- rho Eg + (1 - rho) g^2
/// dx  = -sqrt(Ex + eps) / sqrt(Eg + eps) * g
/// Ex <- rho Ex + (1 - rho) dx^2
/// p  += dx
/// ```
pub fn adadelta_update(
    param: &mut [f64],
    grad: &[f64],
    avg_sq_grad: &mut [f64],
    avg_sq_update: &mut [f64],
    rho: f64,
    epsilon: f64,
) {
    debug_assert_eq!(param.len(), grad.len());
    for k in 0..param.len() {
        let g = grad[k];
        avg_sq_grad[k] = rho * avg_sq_grad[k] + (1.0 - rho) * g * g;
        let step = -((avg_sq_update[k] + epsilon).sqrt() / (avg_sq_grad[k] + epsilon).sqrt()) * g;
        avg_sq_update[k] = rho * avg_sq_update[k] + (1.0 - rho) * step * step;
        param[k] += step;
    }
}

/// Per-parameter running averages of squared gradients and updates.
#[derive(Debug, Clone)]
pub struct AdadeltaState {
    avg_sq_grad: Vec<Vec<f64>>,
    avg_sq_update: Vec<Vec<f64>>,
}

impl AdadeltaState {
    pub fn new(params: &ParamSet) -> AdadeltaState {
        AdadeltaState {
            avg_sq_grad: params.iter().map(|(_, p)| vec![0.0; p.len()]).collect(),
            avg_sq_update: params.iter().map(|(_, p)| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradAccum, rho: f64, epsilon: f64) {
        for id in params.ids().collect::<Vec<_>>() {
            adadelta_update(
                &mut params.get_mut(id).values,
                grads.get(id),
                &mut self.avg_sq_grad[id.0],
                &mut self.avg_sq_update[id.0],
                rho,
                epsilon,
            );
        }
    }
}

/// Project a weight matrix back onto the Frobenius ball of radius `cap`.
/// Returns true when a rescale happened.
pub fn rescale_frobenius(values: &mut [f64], cap: f64) -> bool {
    debug_assert!(cap > 0.0);
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > cap {
        let scale = cap / norm;
        values.iter_mut().for_each(|v| *v *= scale);
        true
    } else {
        false
    }
}

/// Rescale every 2-D parameter (weight matrices; embedding rows and biases
/// are vectors and stay untouched). Returns the maximum matrix norm after
/// rescaling.
fn rescale_all_matrices(params: &mut ParamSet, cap: f64) -> f64 {
    let mut max_norm: f64 = 0.0;
    for id in params.ids().collect::<Vec<_>>() {
        let p = params.get_mut(id);
        if p.shape.len() == 2 {
            rescale_frobenius(&mut p.values, cap);
            max_norm = max_norm.max(p.frobenius_norm());
        }
    }
    max_norm
}

/// Dev-set scores tracked for model selection.
#[derive(Debug, Clone, Copy)]
pub struct DevScores {
    pub entity_f1: f64,
    pub trigger_f1: f64,
    pub role_f1: f64,
}

impl DevScores {
    pub fn composite(&self) -> f64 {
        self.entity_f1 + self.trigger_f1 + self.role_f1
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean C* over the corpus, as optimized (dropout included).
    pub mean_loss: f64,
    /// Largest weight-matrix Frobenius norm seen after any batch update.
    pub max_matrix_norm: f64,
    pub dev: Option<DevScores>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters the model ended up with, when a dev set drove
    /// selection.
    pub best_epoch: Option<usize>,
}

/// Mini-batch training with Adadelta and per-batch Frobenius rescaling.
///
/// Deterministic for a fixed seed: shuffling, dropout masks and UNK noise
/// all derive from `config.seed`. `on_epoch` sees each epoch's log entry and
/// can stop training early by returning false. With a dev set, the model is
/// left holding the parameters of the best dev epoch.
pub fn train(
    model: &mut JointModel,
    corpus: &[Sentence],
    dev: Option<&[Sentence]>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> bool,
) -> Result<TrainReport> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let golds: Vec<GoldLabels> =
        corpus.iter().map(|s| GoldLabels::build(s, &model.schema)).collect::<Result<_>>()?;
    let weights = config.weights();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);
    let mut unk_rng = ChaCha8Rng::seed_from_u64(config.seed);
    unk_rng.set_stream(3);

    let mut state = AdadeltaState::new(&model.params);
    let mut accum = GradAccum::zeros_like(&model.params);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, usize, ParamSet)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut max_matrix_norm: f64 = 0.0;
        for batch in order.chunks(config.batch_size) {
            accum.reset();
            for &si in batch {
                let sentence = &corpus[si];
                let token_indices: Vec<usize> = sentence
                    .tokens
                    .iter()
                    .map(|t| model.vocab.lookup_train(t, config.rare_unk_prob, &mut unk_rng))
                    .collect();
                let mut g = Graph::new(&model.params);
                let mut dropout = Dropout { rate: config.dropout, rng: &mut dropout_rng };
                let terms = joint_loss_graph(
                    model,
                    &mut g,
                    sentence,
                    &golds[si],
                    &weights,
                    &token_indices,
                    if config.dropout > 0.0 { Some(&mut dropout) } else { None },
                )?;
                loss_sum += g.scalar_value(terms.total);
                g.backward(terms.total)?;
                for (id, grad) in g.take_param_grads() {
                    accum.add(id, &grad);
                }
            }
            accum.scale(1.0 / batch.len() as f64);
            state.step(&mut model.params, &accum, config.rho, config.epsilon);
            let batch_max = rescale_all_matrices(&mut model.params, config.frobenius_cap);
            max_matrix_norm = max_matrix_norm.max(batch_max);
        }

        let dev_scores = match dev {
            Some(sentences) if !sentences.is_empty() => {
                let report = crate::eval::evaluate_corpus(model, sentences)?;
                Some(DevScores {
                    entity_f1: report.entity.f1,
                    trigger_f1: report.trigger_classification.f1,
                    role_f1: report.role_classification.f1,
                })
            }
            _ => None,
        };
        if let Some(scores) = &dev_scores {
            let better = best.as_ref().map_or(true, |(c, _, _)| scores.composite() > *c);
            if better {
                best = Some((scores.composite(), epoch, model.params.clone()));
            }
        }

        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / corpus.len() as f64,
            max_matrix_norm,
            dev: dev_scores,
        };
        let keep_going = on_epoch(&log);
        report.epochs.push(log);
        if !keep_going {
            break;
        }
    }

    if let Some((_, epoch, params)) = best {
        model.params = params;
        report.best_epoch = Some(epoch);
    }
    Ok(report)
}

/// Finite-difference check of the full joint loss against the analytic
/// gradients, over every parameter group of the model.
pub fn gradient_check_model(
    model: &mut JointModel,
    sentence: &Sentence,
    gold: &GoldLabels,
    weights: &LossWeights,
    h: f64,
    max_coords_per_param: Option<usize>,
) -> GradCheckReport {
    let token_indices = model.token_indices(sentence);
    let mut params = std::mem::take(&mut model.params);
    let report = check_gradients(
        &mut params,
        |g| {
            joint_loss_graph(model, g, sentence, gold, weights, &token_indices, None)
                .expect("loss graph construction")
                .total
        },
        h,
        max_coords_per_param,
    );
    model.params = params;
    report
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamBlob {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Versioned container for everything needed to restore a trained model.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    version: u32,
    pub config: ModelConfig,
    pub train_config: TrainConfig,
    pub schema: LabelSchema,
    pub vocab: Vocabulary,
    pub binary: BinaryFeatureEncoder,
    params: Vec<ParamBlob>,
}

impl Checkpoint {
    pub fn from_model(model: &JointModel, train_config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            train_config: train_config.clone(),
            schema: model.schema.clone(),
            vocab: model.vocab.clone(),
            binary: model.binary.clone(),
            params: model
                .params
                .iter()
                .map(|(_, p)| ParamBlob {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: p.values.clone(),
                })
                .collect(),
        }
    }

    pub fn into_model(mut self) -> Result<(JointModel, TrainConfig)> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        self.vocab.rebuild_index();
        // Rebuild the architecture, then overwrite every parameter.
        let table = EmbeddingTable {
            dim: self.config.embed_dim,
            rows: vec![vec![0.0; self.config.embed_dim]; self.vocab.len()],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = JointModel::new(
            self.config,
            self.schema,
            self.vocab,
            self.binary,
            table,
            &mut rng,
        );
        if model.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: checkpoint has {}, architecture expects {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for (id, blob) in model.params.ids().collect::<Vec<_>>().into_iter().zip(self.params) {
            let p = model.params.get_mut(id);
            if p.name != blob.name || p.shape != blob.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    p.name, p.shape, blob.name, blob.shape
                )));
            }
            p.values = blob.values;
        }
        Ok((model, self.train_config))
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &JointModel,
    train_config: &TrainConfig,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let checkpoint = Checkpoint::from_model(model, train_config);
    serde_json::to_writer(BufWriter::new(file), &checkpoint)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(JointModel, TrainConfig)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    checkpoint.into_model()
}

/// Assemble a fresh model for a training corpus: vocabulary and feature
/// encoders fitted on the corpus, schema from its labels, embeddings random
/// or from a pretrained file.
pub fn build_model(
    corpus: &[Sentence],
    run: &RunConfig,
    pretrained: Option<&Path>,
) -> Result<JointModel> {
    let schema = crate::corpus::fit_schema(corpus)?;
    let vocab = Vocabulary::fit(corpus);
    let binary = if run.model.use_external_features {
        BinaryFeatureEncoder::fit(corpus)
    } else {
        BinaryFeatureEncoder::disabled()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(run.train.seed);
    let table = match pretrained {
        Some(path) => crate::features::load_pretrained(path, &vocab, run.model.embed_dim, &mut rng)?,
        None => EmbeddingTable::random(&vocab, run.model.embed_dim, &mut rng),
    };
    Ok(JointModel::new(run.model.clone(), schema, vocab, binary, table, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Event, Mention};
    use crate::diag::{diagnostic_run_config, diagnostic_sentence};

    fn tiny_model() -> (JointModel, Sentence, GoldLabels) {
        let sentence = diagnostic_sentence();
        let run = diagnostic_run_config();
        let model = build_model(std::slice::from_ref(&sentence), &run, None).unwrap();
        let gold = GoldLabels::build(&sentence, &model.schema).unwrap();
        (model, sentence, gold)
    }

    fn zero_params(model: &mut JointModel) {
        for id in model.params.ids().collect::<Vec<_>>() {
            model.params.get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn uniform_model_loss_matches_hand_computation() {
        // Two tokens, no events, one entity type (|BIO| = 3) and one event
        // type (|events| = 2). A zero-parameter model is uniform, so
        // C* = 0.5 * 2 ln 3 + 1.0 * 2 ln 2.
        let sentence = Sentence {
            tokens: vec!["calm".into(), "night".into()],
            mentions: vec![Mention { start: 0, end: 0, entity_type: "PER".into() }],
            events: vec![Event {
                trigger: 1,
                event_type: "Attack".into(),
                args: vec![],
            }],
            pos: None,
            chunk: None,
            deps: None,
        };
        let run = diagnostic_run_config();
        let mut model = build_model(std::slice::from_ref(&sentence), &run, None).unwrap();
        zero_params(&mut model);
        let quiet = Sentence {
            tokens: vec!["calm".into(), "night".into()],
            mentions: vec![],
            events: vec![],
            pos: None,
            chunk: None,
            deps: None,
        };
        let gold = GoldLabels::build(&quiet, &model.schema).unwrap();
        let loss =
            joint_loss(&model, &quiet, &gold, &LossWeights::default()).unwrap();
        let expect = 0.5 * 2.0 * 3.0f64.ln() + 1.0 * 2.0 * 2.0f64.ln();
        assert!((loss.total - expect).abs() < 1e-12, "{} vs {expect}", loss.total);
        assert_eq!(loss.role, 0.0);
    }

    #[test]
    fn doubling_gamma_doubles_the_role_term() {
        let (model, sentence, gold) = tiny_model();
        let only_role = |gamma| LossWeights { alpha: 0.0, beta: 0.0, gamma };
        let single = joint_loss(&model, &sentence, &gold, &only_role(0.5)).unwrap();
        let double = joint_loss(&model, &sentence, &gold, &only_role(1.0)).unwrap();
        assert!(single.total > 0.0);
        assert!((double.total - 2.0 * single.total).abs() < 1e-12);
    }

    #[test]
    fn loss_decomposes_into_weighted_components() {
        let (model, sentence, gold) = tiny_model();
        let unit = joint_loss(
            &model,
            &sentence,
            &gold,
            &LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 },
        )
        .unwrap();
        let weights = LossWeights { alpha: 0.3, beta: 1.7, gamma: 0.9 };
        let weighted = joint_loss(&model, &sentence, &gold, &weights).unwrap();
        let expect = weights.alpha * unit.entity + weights.beta * unit.trigger
            + weights.gamma * unit.role;
        assert!((weighted.total - expect).abs() < 1e-12);
        assert!(unit.entity > 0.0 && unit.trigger > 0.0 && unit.role > 0.0);
    }

    #[test]
    fn role_only_loss_reaches_the_encoder() {
        // The shared-representation contract: gradients flow into the GRU
        // even when only the role term is active.
        let (mut model, sentence, gold) = tiny_model();
        let token_indices = model.token_indices(&sentence);
        let mut g = Graph::new(&model.params);
        let terms = joint_loss_graph(
            &model,
            &mut g,
            &sentence,
            &gold,
            &LossWeights { alpha: 0.0, beta: 0.0, gamma: 1.0 },
            &token_indices,
            None,
        )
        .unwrap();
        g.backward(terms.total).unwrap();
        let grads = g.take_param_grads();
        let gru_ids = [
            model.bigru.forward.w_update,
            model.bigru.forward.u_cand,
            model.bigru.backward.w_reset,
        ];
        for wanted in gru_ids {
            let grad = grads.iter().find(|(id, _)| *id == wanted);
            let nonzero = grad.is_some_and(|(_, g)| g.iter().any(|&v| v != 0.0));
            assert!(nonzero, "no gradient reached {}", model.params.get(wanted).name);
        }
        // Keep the model mutable binding honest.
        zero_params(&mut model);
    }

    #[test]
    fn teacher_forced_features_are_independent_of_head_weights() {
        let (mut model, sentence, gold) = tiny_model();
        let collect_features = |model: &JointModel| -> Vec<Vec<f64>> {
            let token_indices = model.token_indices(&sentence);
            let mut g = Graph::new(&model.params);
            let states = model.encode_sentence(&mut g, &sentence, &token_indices, None).unwrap();
            let begins: Vec<usize> =
                (0..sentence.len()).filter(|&j| model.schema.is_begin(gold.bio[j])).collect();
            let mut memory = MemoryVector::new(&model.schema);
            let mut out = Vec::new();
            for i in 0..sentence.len() {
                if gold.trigger[i] == LabelSchema::OTHER {
                    continue;
                }
                for &j in &begins {
                    if j == i {
                        continue;
                    }
                    let bij =
                        bij_features(&sentence, i, j, model.config.u, model.bij_width());
                    let cond = ArpCondition::new(
                        model,
                        gold.bio[i],
                        gold.bio[j],
                        gold.trigger[i],
                        gold.trigger[j],
                        memory.bits(),
                        bij,
                    );
                    let input = model.arp_input(&mut g, &states, i, j, &cond);
                    out.push(g.values(input).to_vec());
                }
                memory.observe_event(gold.trigger[i]);
            }
            out
        };
        let before = collect_features(&model);
        assert!(!before.is_empty());
        // Scramble all three heads; the teacher-forced features must not move.
        for head in
            [&model.emd_head.w1, &model.emd_head.w2, &model.ed_head.w1, &model.arp_head.w2]
        {
            let id = *head;
            model.params.get_mut(id).values.iter_mut().for_each(|v| *v = -*v + 0.31);
        }
        let after = collect_features(&model);
        assert_eq!(before, after);
    }

    #[test]
    fn logit_shift_leaves_greedy_choices_unchanged() {
        let (mut model, sentence, _) = tiny_model();
        let choices = |model: &JointModel| -> Vec<usize> {
            let token_indices = model.token_indices(&sentence);
            let mut g = Graph::new(&model.params);
            let states = model.encode_sentence(&mut g, &sentence, &token_indices, None).unwrap();
            (0..sentence.len())
                .map(|i| model.trigger_predict(&mut g, &states, i).unwrap().1)
                .collect()
        };
        let before = choices(&model);
        // Adding a constant to every output logit via the bias.
        let b2 = model.ed_head.b2;
        model.params.get_mut(b2).values.iter_mut().for_each(|v| *v += 7.5);
        let after = choices(&model);
        assert_eq!(before, after);
    }

    #[test]
    fn adadelta_zero_gradient_decays_states_only() {
        let mut param = vec![1.5, -2.0];
        let grad = vec![0.0, 0.0];
        let mut eg = vec![0.4, 0.1];
        let mut ex = vec![0.2, 0.3];
        adadelta_update(&mut param, &grad, &mut eg, &mut ex, 0.95, 1e-6);
        assert_eq!(param, vec![1.5, -2.0]);
        assert!((eg[0] - 0.38).abs() < 1e-15 && (eg[1] - 0.095).abs() < 1e-15);
        assert!((ex[0] - 0.19).abs() < 1e-15 && (ex[1] - 0.285).abs() < 1e-15);
    }

    #[test]
    fn adadelta_first_step_matches_hand_derivation() {
        // rho = 0.95, eps = 1e-6, g = 1:
        // Eg = 0.05, step = -sqrt(1e-6) / sqrt(0.05 + 1e-6) ~ -0.004472.
        let mut param = vec![0.0];
        let mut eg = vec![0.0];
        let mut ex = vec![0.0];
        adadelta_update(&mut param, &[1.0], &mut eg, &mut ex, 0.95, 1e-6);
        assert!((param[0] - (-0.004472)).abs() < 1e-6, "step {}", param[0]);
    }

    #[test]
    fn adadelta_first_step_is_scale_invariant() {
        // With eps pushed toward zero the first step magnitude no longer
        // depends on the gradient scale.
        let step = |g: f64| {
            let mut param = vec![0.0];
            let mut eg = vec![0.0];
            let mut ex = vec![0.0];
            adadelta_update(&mut param, &[g], &mut eg, &mut ex, 0.95, 1e-12);
            param[0].abs()
        };
        let small = step(1.0);
        let large = step(1000.0);
        assert!((small - large).abs() / small < 1e-3, "{small} vs {large}");
    }

    #[test]
    fn frobenius_rescale_three_four_five() {
        let mut w = vec![4.0, 0.0, 0.0, 3.0];
        assert!(rescale_frobenius(&mut w, 3.0));
        for (got, want) in w.iter().zip(&[2.4, 0.0, 0.0, 1.8]) {
            assert!((got - want).abs() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn frobenius_at_cap_unchanged() {
        let mut w = vec![3.0, 0.0, 0.0, 0.0];
        assert!(!rescale_frobenius(&mut w, 3.0));
        assert_eq!(w, vec![3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn frobenius_postcondition_norm_equals_cap() {
        let mut w: Vec<f64> = (1..=6).map(|i| i as f64 * 0.9).collect();
        rescale_frobenius(&mut w, 3.0);
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 3.0).abs() < 1e-12);
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let (mut model, sentence, gold) = tiny_model();
        let report = gradient_check_model(
            &mut model,
            &sentence,
            &gold,
            &LossWeights::default(),
            1e-5,
            None,
        );
        assert!(report.coords_checked > 1000, "checked {}", report.coords_checked);
        assert!(
            report.max_rel_error < 1e-4,
            "max relative error {} at {:?}",
            report.max_rel_error,
            report.worst_param
        );
    }

    #[test]
    fn single_sentence_overfits_within_two_hundred_epochs() {
        let sentence = diagnostic_sentence();
        let mut run = diagnostic_run_config();
        run.model.embed_dim = 16;
        run.model.hidden_dim = 12;
        run.model.ff_hidden = 24;
        run.train.epochs = 200;
        let mut model = build_model(std::slice::from_ref(&sentence), &run, None).unwrap();
        let report =
            train(&mut model, std::slice::from_ref(&sentence), None, &run.train, |_| true)
                .unwrap();
        let final_loss = report.epochs.last().unwrap().mean_loss;
        assert!(final_loss < 0.01, "loss stuck at {final_loss}");

        // All three heads reproduce the gold labels.
        let gold = GoldLabels::build(&sentence, &model.schema).unwrap();
        let tags = model.predict_tags(&sentence).unwrap();
        assert_eq!(tags, gold.bio);
        let prediction = model.predict(&sentence).unwrap();
        assert_eq!(prediction.mentions, sentence.mentions);
        assert_eq!(prediction.events.len(), 1);
        let ev = &prediction.events[0];
        assert_eq!(ev.trigger, 1);
        assert_eq!(model.schema.event_types[ev.event_type], "Attack");
        let mut args: Vec<(usize, String)> = ev
            .args
            .iter()
            .map(|&(j, r)| (j, model.schema.roles[r].clone()))
            .collect();
        args.sort();
        assert_eq!(args, vec![(0, "Attacker".to_string()), (2, "Target".to_string())]);
    }

    #[test]
    fn training_is_deterministic_under_a_seed() {
        let corpus = crate::synthetic::generate_synthetic_corpus(
            &crate::synthetic::SyntheticSpec::new(12, 3),
        );
        let mut run = diagnostic_run_config();
        run.train.epochs = 3;
        run.train.dropout = 0.5;
        run.train.rare_unk_prob = 0.5;
        let run_once = || {
            let mut model = build_model(&corpus, &run, None).unwrap();
            let report = train(&mut model, &corpus, None, &run.train, |_| true).unwrap();
            let losses: Vec<u64> =
                report.epochs.iter().map(|e| e.mean_loss.to_bits()).collect();
            let checkpoint =
                serde_json::to_vec(&Checkpoint::from_model(&model, &run.train)).unwrap();
            (losses, checkpoint)
        };
        let (losses_a, ckpt_a) = run_once();
        let (losses_b, ckpt_b) = run_once();
        assert_eq!(losses_a, losses_b);
        assert_eq!(ckpt_a, ckpt_b);
    }

    #[test]
    fn batch_size_larger_than_corpus_trains_one_batch_per_epoch() {
        let corpus = crate::synthetic::generate_synthetic_corpus(
            &crate::synthetic::SyntheticSpec::new(5, 9),
        );
        let mut run = diagnostic_run_config();
        run.train.batch_size = 50;
        run.train.epochs = 2;
        let mut model = build_model(&corpus, &run, None).unwrap();
        let report = train(&mut model, &corpus, None, &run.train, |_| true).unwrap();
        assert_eq!(report.epochs.len(), 2);
    }

    #[test]
    fn matrix_norms_capped_after_every_batch() {
        let corpus = crate::synthetic::generate_synthetic_corpus(
            &crate::synthetic::SyntheticSpec::new(10, 21),
        );
        let mut run = diagnostic_run_config();
        run.train.epochs = 4;
        run.train.batch_size = 3;
        run.train.frobenius_cap = 1.5;
        let mut model = build_model(&corpus, &run, None).unwrap();
        let report = train(&mut model, &corpus, None, &run.train, |_| true).unwrap();
        for epoch in &report.epochs {
            assert!(
                epoch.max_matrix_norm <= run.train.frobenius_cap + 1e-12,
                "epoch {} norm {}",
                epoch.epoch,
                epoch.max_matrix_norm
            );
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let (model, sentence, _) = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model, &TrainConfig::default()).unwrap();
        let (restored, _) = load_checkpoint(&path).unwrap();
        assert_eq!(model.params.len(), restored.params.len());
        for (a, b) in model.params.iter().zip(restored.params.iter()) {
            assert_eq!(a.1.name, b.1.name);
            assert_eq!(a.1.shape, b.1.shape);
            let bits_a: Vec<u64> = a.1.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.1.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{}", a.1.name);
        }
        // Same predictions after the round trip.
        let before = model.predict(&sentence).unwrap();
        let after = restored.predict(&sentence).unwrap();
        assert_eq!(before.tags, after.tags);
        assert_eq!(before.events, after.events);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let (mut model, _, _) = tiny_model();
        let err = train(&mut model, &[], None, &TrainConfig::default(), |_| true);
        assert!(err.is_err());
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut config = TrainConfig::default();
        config.dropout = 1.0;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.batch_size = 0;
        assert!(config.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn run_config_parses_from_toml() {
        let text = r#"
[model]
embed_dim = 32
hidden_dim = 16
use_external_features = false

[train]
epochs = 7
alpha = 0.25
seed = 99
"#;
        let run = RunConfig::from_toml(text).unwrap();
        assert_eq!(run.model.embed_dim, 32);
        assert_eq!(run.model.hidden_dim, 16);
        assert!(!run.model.use_external_features);
        assert_eq!(run.model.ff_hidden, ModelConfig::default().ff_hidden);
        assert_eq!(run.train.epochs, 7);
        assert_eq!(run.train.alpha, 0.25);
        assert_eq!(run.train.seed, 99);
        assert_eq!(run.train.beta, TrainConfig::default().beta);
        assert!(RunConfig::from_toml("model = 3").is_err());
    }
}
