//! Self-contained diagnostic suites: the finite-difference gradient check of
//! the full joint loss and the brute-force Viterbi oracle. Both back the
//! `diag` CLI command and the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Argument, DepEdge, Event, GoldLabels, Mention, Sentence};
use crate::entity::{enumerate_best_score, sequence_score, viterbi_decode, TransitionMatrix};
use crate::error::Result;
use crate::model::ModelConfig;
use crate::schema::LabelSchema;
use crate::tensor::GradCheckReport;
use crate::train::{build_model, gradient_check_model, LossWeights, RunConfig, TrainConfig};

/// Fixed three-token sentence exercising every feature path: entity
/// mentions, an event with two arguments, POS/chunk/dependency annotations.
pub fn diagnostic_sentence() -> Sentence {
    Sentence {
        tokens: vec!["rebel".into(), "hit".into(), "warthog".into()],
        mentions: vec![
            Mention { start: 0, end: 0, entity_type: "PER".into() },
            Mention { start: 2, end: 2, entity_type: "VEH".into() },
        ],
        events: vec![Event {
            trigger: 1,
            event_type: "Attack".into(),
            args: vec![
                Argument { mention: 0, role: "Attacker".into() },
                Argument { mention: 1, role: "Target".into() },
            ],
        }],
        pos: Some(vec!["NN".into(), "VBD".into(), "NN".into()]),
        chunk: Some(vec!["B-NP".into(), "B-VP".into(), "B-NP".into()]),
        deps: Some(vec![
            DepEdge { head: 1, rel: "nsubj".into() },
            DepEdge { head: 1, rel: "root".into() },
            DepEdge { head: 1, rel: "dobj".into() },
        ]),
    }
}

/// Reduced dimensions keeping the full gradient check under a few seconds.
pub fn diagnostic_run_config() -> RunConfig {
    RunConfig {
        model: ModelConfig {
            embed_dim: 8,
            hidden_dim: 6,
            ff_hidden: 10,
            u: 2,
            use_external_features: true,
            bij_width: 24,
            eq1_literal_indexing: false,
        },
        train: TrainConfig {
            dropout: 0.0,
            rare_unk_prob: 0.0,
            batch_size: 4,
            epochs: 10,
            seed: 7,
            ..TrainConfig::default()
        },
    }
}

#[derive(Debug)]
pub struct GradcheckOutcome {
    pub report: GradCheckReport,
    pub tolerance: f64,
    pub passed: bool,
}

/// Finite-difference check of the joint loss over every parameter group at
/// reduced dimensions. `corrupt` is a negative-control hook: it makes the
/// loss evaluation inconsistent between calls, which a working checker must
/// flag.
pub fn gradcheck(corrupt: bool) -> Result<GradcheckOutcome> {
    let sentence = diagnostic_sentence();
    let run = diagnostic_run_config();
    let mut model = build_model(std::slice::from_ref(&sentence), &run, None)?;
    let gold = GoldLabels::build(&sentence, &model.schema)?;
    let tolerance = 1e-4;

    let report = if corrupt {
        use std::cell::Cell;
        let calls = Cell::new(0usize);
        let token_indices = model.token_indices(&sentence);
        let mut params = std::mem::take(&mut model.params);
        let report = crate::tensor::check_gradients(
            &mut params,
            |g| {
                let terms = crate::train::joint_loss_graph(
                    &model,
                    g,
                    &sentence,
                    &gold,
                    &LossWeights::default(),
                    &token_indices,
                    None,
                )
                .expect("loss graph construction");
                // Drift the loss a little more on every call; analytic and
                // numeric passes then disagree.
                let drift = g.vector(vec![0.01 * calls.get() as f64]);
                calls.set(calls.get() + 1);
                g.add(terms.total, drift)
            },
            1e-5,
            None,
        );
        model.params = params;
        report
    } else {
        gradient_check_model(&mut model, &sentence, &gold, &LossWeights::default(), 1e-5, None)
    };

    let passed = report.max_rel_error < tolerance;
    Ok(GradcheckOutcome { report, tolerance, passed })
}

#[derive(Debug, Default)]
pub struct ViterbiOracleOutcome {
    pub exact_trials: usize,
    pub validity_trials: usize,
    /// Human-readable description of each failing instance.
    pub failures: Vec<String>,
}

impl ViterbiOracleOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Random-instance decoder oracle.
///
/// `exact_trials` instances (n <= 6, up to 3 entity types so at most 7 BIO
/// tags) are decoded and compared with exhaustive enumeration for exact
/// score equality; `validity_trials` further instances check that no decoded
/// sequence ever uses a forbidden transition.
pub fn viterbi_oracle(exact_trials: usize, validity_trials: usize, seed: u64) -> ViterbiOracleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outcome = ViterbiOracleOutcome {
        exact_trials,
        validity_trials,
        ..Default::default()
    };

    for trial in 0..exact_trials {
        let num_types = rng.gen_range(0..=3);
        let entity_types: Vec<String> = (0..num_types).map(|k| format!("T{k}")).collect();
        let schema =
            LabelSchema::new(&entity_types, &["E".to_string()], &["R".to_string()]).unwrap();
        let tm = TransitionMatrix::for_schema(&schema);
        let n = rng.gen_range(1..=6);
        let emissions: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..tm.num_tags()).map(|_| rng.gen_range(-6.0..1.0)).collect())
            .collect();
        let decoded = viterbi_decode(&emissions, &tm);
        let decoded_score = sequence_score(&emissions, &tm, &decoded);
        let best = enumerate_best_score(&emissions, &tm);
        if decoded_score != best {
            outcome.failures.push(format!(
                "exact trial {trial}: decoded score {decoded_score} != enumerated {best} \
                 (n={n}, tags={})",
                tm.num_tags()
            ));
        }
    }

    for trial in 0..validity_trials {
        let num_types = rng.gen_range(0..=4);
        let entity_types: Vec<String> = (0..num_types).map(|k| format!("T{k}")).collect();
        let schema =
            LabelSchema::new(&entity_types, &["E".to_string()], &["R".to_string()]).unwrap();
        let tm = TransitionMatrix::for_schema(&schema);
        let n = rng.gen_range(1..=12);
        let emissions: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..tm.num_tags()).map(|_| rng.gen_range(-40.0..40.0)).collect())
            .collect();
        let decoded = viterbi_decode(&emissions, &tm);
        let mut bad = tm.is_forbidden_start(decoded[0]);
        for w in decoded.windows(2) {
            bad |= tm.is_forbidden(w[0], w[1]);
        }
        if bad {
            outcome
                .failures
                .push(format!("validity trial {trial}: forbidden transition in {decoded:?}"));
        }
    }
    outcome
}
