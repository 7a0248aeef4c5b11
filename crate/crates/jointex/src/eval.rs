//! Micro-averaged precision/recall/F1 over the extraction tasks plus the
//! trigger error taxonomy and role confusion counts.
//!
//! Correctness criteria: an entity mention is correct iff span and type
//! match gold; a trigger is identified iff its token offset matches a gold
//! trigger and classified iff the event type also matches; an argument is
//! identified iff its event type is correct and its begin-token anchor
//! matches a gold argument of that event type, and classified iff the role
//! also matches.

use std::collections::BTreeMap;
use std::fmt;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::model::SentencePrediction;
use crate::schema::LabelSchema;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfScores {
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScores {
    fn from_counts(predicted: usize, gold: usize, correct: usize) -> PrfScores {
        let (precision, recall) = if predicted == 0 && gold == 0 {
            (1.0, 1.0)
        } else {
            (
                if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 },
                if gold == 0 { 0.0 } else { correct as f64 / gold as f64 },
            )
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PrfScores { predicted, gold, correct, precision, recall, f1 }
    }
}

/// The five metric families.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub entity: PrfScores,
    pub trigger_identification: PrfScores,
    pub trigger_classification: PrfScores,
    pub argument_identification: PrfScores,
    pub role_classification: PrfScores,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<34} {:>7} {:>7} {:>7}", "", "P", "R", "F1")?;
        for (name, s) in [
            ("Entity Mention Detection", &self.entity),
            ("Event Trigger Identification", &self.trigger_identification),
            ("Event Trigger Classification", &self.trigger_classification),
            ("Event Argument Identification", &self.argument_identification),
            ("Argument Role Classification", &self.role_classification),
        ] {
            writeln!(
                f,
                "{name:<34} {:>7.1} {:>7.1} {:>7.1}",
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1
            )?;
        }
        Ok(())
    }
}

fn multiset<K: Ord>(items: impl Iterator<Item = K>) -> BTreeMap<K, usize> {
    let mut counts = BTreeMap::new();
    for k in items {
        *counts.entry(k).or_insert(0) += 1;
    }
    counts
}

fn overlap<K: Ord>(a: &BTreeMap<K, usize>, b: &BTreeMap<K, usize>) -> usize {
    a.iter().map(|(k, &c)| c.min(b.get(k).copied().unwrap_or(0))).sum()
}

fn prf<K: Ord>(pred: BTreeMap<K, usize>, gold: BTreeMap<K, usize>) -> PrfScores {
    let correct = overlap(&pred, &gold);
    PrfScores::from_counts(pred.values().sum(), gold.values().sum(), correct)
}

/// Gold argument flattened to (event type, begin anchor, role).
fn gold_arguments(s: &Sentence, schema: &LabelSchema) -> Result<Vec<(usize, usize, usize)>> {
    let mut out = Vec::new();
    for ev in &s.events {
        let ty = ev_type(schema, &ev.event_type)?;
        for arg in &ev.args {
            let role = schema
                .role_index(&arg.role)
                .ok_or_else(|| Error::SchemaMismatch(format!("role {:?}", arg.role)))?;
            out.push((ty, s.mentions[arg.mention].start, role));
        }
    }
    Ok(out)
}

fn ev_type(schema: &LabelSchema, name: &str) -> Result<usize> {
    schema
        .event_type_index(name)
        .ok_or_else(|| Error::SchemaMismatch(format!("event type {name:?}")))
}

/// Run the model over a corpus and score against its gold annotations.
pub fn evaluate_corpus(
    model: &crate::model::JointModel,
    sentences: &[Sentence],
) -> Result<EvalReport> {
    let predictions: Vec<SentencePrediction> =
        sentences.iter().map(|s| model.predict(s)).collect::<Result<_>>()?;
    score(&predictions, sentences, &model.schema)
}

/// Score predictions against gold over a corpus.
pub fn score(
    predictions: &[SentencePrediction],
    gold: &[Sentence],
    schema: &LabelSchema,
) -> Result<EvalReport> {
    if predictions.len() != gold.len() {
        return Err(Error::Annotation(format!(
            "prediction/gold sentence count mismatch: {} vs {}",
            predictions.len(),
            gold.len()
        )));
    }

    let mut pred_entities = Vec::new();
    let mut gold_entities = Vec::new();
    let mut pred_trig_id = Vec::new();
    let mut gold_trig_id = Vec::new();
    let mut pred_trig_cls = Vec::new();
    let mut gold_trig_cls = Vec::new();
    let mut pred_arg_id = Vec::new();
    let mut gold_arg_id = Vec::new();
    let mut pred_arg_cls = Vec::new();
    let mut gold_arg_cls = Vec::new();

    for (sid, (pred, sent)) in predictions.iter().zip(gold).enumerate() {
        for m in &pred.mentions {
            pred_entities.push((sid, m.start, m.end, m.entity_type.clone()));
        }
        for m in &sent.mentions {
            gold_entities.push((sid, m.start, m.end, m.entity_type.clone()));
        }
        for ev in &pred.events {
            pred_trig_id.push((sid, ev.trigger));
            pred_trig_cls.push((sid, ev.trigger, ev.event_type));
            for &(anchor, role) in &ev.args {
                pred_arg_id.push((sid, ev.event_type, anchor));
                pred_arg_cls.push((sid, ev.event_type, anchor, role));
            }
        }
        for ev in &sent.events {
            let ty = ev_type(schema, &ev.event_type)?;
            gold_trig_id.push((sid, ev.trigger));
            gold_trig_cls.push((sid, ev.trigger, ty));
        }
        for (ty, anchor, role) in gold_arguments(sent, schema)? {
            gold_arg_id.push((sid, ty, anchor));
            gold_arg_cls.push((sid, ty, anchor, role));
        }
    }

    Ok(EvalReport {
        entity: prf(multiset(pred_entities.into_iter()), multiset(gold_entities.into_iter())),
        trigger_identification: prf(
            multiset(pred_trig_id.into_iter()),
            multiset(gold_trig_id.into_iter()),
        ),
        trigger_classification: prf(
            multiset(pred_trig_cls.into_iter()),
            multiset(gold_trig_cls.into_iter()),
        ),
        argument_identification: prf(
            multiset(pred_arg_id.into_iter()),
            multiset(gold_arg_id.into_iter()),
        ),
        role_classification: prf(
            multiset(pred_arg_cls.into_iter()),
            multiset(gold_arg_cls.into_iter()),
        ),
    })
}

/// Trigger error taxonomy and role confusions.
#[derive(Debug, Clone, Default)]
pub struct ErrorReport {
    /// Gold triggers with no prediction at their offset: (event type, count,
    /// percent of all missed).
    pub missed: Vec<(String, usize, f64)>,
    /// Predicted triggers with no gold at their offset, keyed by predicted
    /// type.
    pub incorrect: Vec<(String, usize, f64)>,
    /// (gold role, predicted role, count) for arguments identified correctly
    /// but classified wrongly, most frequent first.
    pub confusions: Vec<(String, String, usize)>,
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MISSED triggers by gold event type:")?;
        for (ty, count, pct) in &self.missed {
            writeln!(f, "  {ty:<20} {count:>5}  {pct:>5.1}%")?;
        }
        writeln!(f, "INCORRECT triggers by predicted event type:")?;
        for (ty, count, pct) in &self.incorrect {
            writeln!(f, "  {ty:<20} {count:>5}  {pct:>5.1}%")?;
        }
        writeln!(f, "Role confusions (gold -> predicted):")?;
        for (gold, pred, count) in &self.confusions {
            writeln!(f, "  {gold} -> {pred}: {count}")?;
        }
        Ok(())
    }
}

pub fn error_report(
    predictions: &[SentencePrediction],
    gold: &[Sentence],
    schema: &LabelSchema,
) -> Result<ErrorReport> {
    if predictions.len() != gold.len() {
        return Err(Error::Annotation("prediction/gold sentence count mismatch".into()));
    }
    let mut missed: BTreeMap<String, usize> = BTreeMap::new();
    let mut incorrect: BTreeMap<String, usize> = BTreeMap::new();
    let mut confusions: BTreeMap<(String, String), usize> = BTreeMap::new();

    for (pred, sent) in predictions.iter().zip(gold) {
        let pred_offsets: Vec<usize> = pred.events.iter().map(|e| e.trigger).collect();
        let gold_offsets: Vec<usize> = sent.events.iter().map(|e| e.trigger).collect();
        for ev in &sent.events {
            if !pred_offsets.contains(&ev.trigger) {
                *missed.entry(ev.event_type.clone()).or_insert(0) += 1;
            }
        }
        for ev in &pred.events {
            if !gold_offsets.contains(&ev.trigger) {
                *incorrect.entry(schema.event_types[ev.event_type].clone()).or_insert(0) += 1;
            }
        }

        // Arguments identified (event type + anchor) but with the wrong role.
        let mut gold_by_key: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (ty, anchor, role) in gold_arguments(sent, schema)? {
            gold_by_key.entry((ty, anchor)).or_default().push(role);
        }
        for ev in &pred.events {
            for &(anchor, role) in &ev.args {
                if let Some(roles) = gold_by_key.get_mut(&(ev.event_type, anchor)) {
                    if let Some(pos) = roles.iter().position(|&r| r == role) {
                        roles.remove(pos);
                    } else if let Some(&gold_role) = roles.first() {
                        *confusions
                            .entry((
                                schema.roles[gold_role].clone(),
                                schema.roles[role].clone(),
                            ))
                            .or_insert(0) += 1;
                    }
                }
            }
        }
    }

    let percentify = |counts: BTreeMap<String, usize>| -> Vec<(String, usize, f64)> {
        let total: usize = counts.values().sum();
        let mut rows: Vec<(String, usize, f64)> = counts
            .into_iter()
            .map(|(ty, c)| (ty, c, if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 }))
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        rows
    };
    let mut confusions: Vec<(String, String, usize)> =
        confusions.into_iter().map(|((g, p), c)| (g, p, c)).collect();
    confusions.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    Ok(ErrorReport {
        missed: percentify(missed),
        incorrect: percentify(incorrect),
        confusions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::{running_schema, running_sentence};
    use crate::event::PredictedEvent;

    /// Prediction that mirrors the gold annotation of a sentence.
    fn perfect_prediction(s: &Sentence, schema: &LabelSchema) -> SentencePrediction {
        let tags = crate::corpus::encode_bio(s, schema).unwrap();
        let events = s
            .events
            .iter()
            .map(|ev| PredictedEvent {
                trigger: ev.trigger,
                event_type: schema.event_type_index(&ev.event_type).unwrap(),
                args: ev
                    .args
                    .iter()
                    .map(|a| {
                        (s.mentions[a.mention].start, schema.role_index(&a.role).unwrap())
                    })
                    .collect(),
            })
            .collect();
        SentencePrediction { tags, mentions: s.mentions.clone(), events }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let schema = running_schema();
        let gold = vec![running_sentence()];
        let preds = vec![perfect_prediction(&gold[0], &schema)];
        let report = score(&preds, &gold, &schema).unwrap();
        for s in [
            report.entity,
            report.trigger_identification,
            report.trigger_classification,
            report.argument_identification,
            report.role_classification,
        ] {
            assert_eq!(s.f1, 1.0, "{report}");
        }
        let errors = error_report(&preds, &gold, &schema).unwrap();
        assert!(errors.missed.is_empty());
        assert!(errors.incorrect.is_empty());
        assert!(errors.confusions.is_empty());
    }

    #[test]
    fn half_matching_triggers_give_half_prf() {
        let schema = running_schema();
        // Gold: triggers at 4 and 0. Predictions: triggers at 4 and 2.
        let mut sentence = running_sentence();
        sentence.events.push(crate::corpus::Event {
            trigger: 0,
            event_type: "Attack".into(),
            args: vec![],
        });
        let mut pred = perfect_prediction(&sentence, &schema);
        pred.events[1].trigger = 2;
        pred.events[1].args.clear();
        let report = score(&[pred], &[sentence], &schema).unwrap();
        assert_eq!(report.trigger_identification.precision, 0.5);
        assert_eq!(report.trigger_identification.recall, 0.5);
        assert_eq!(report.trigger_identification.f1, 0.5);
    }

    #[test]
    fn wrong_type_counts_for_identification_only() {
        let schema =
            LabelSchema::new(&["VEH", "TIME"], &["Attack", "Meet"], &["Target", "Time"]).unwrap();
        let gold = vec![running_sentence()];
        let mut pred = perfect_prediction(&gold[0], &schema);
        pred.events[0].event_type = schema.event_type_index("Meet").unwrap();
        pred.events[0].args.clear();
        let report = score(&[pred], &gold, &schema).unwrap();
        assert_eq!(report.trigger_identification.f1, 1.0);
        assert_eq!(report.trigger_classification.f1, 0.0);
        assert!(report.trigger_identification.f1 > report.trigger_classification.f1);
    }

    #[test]
    fn missed_and_incorrect_breakdown() {
        let schema = running_schema();
        let gold = vec![running_sentence()];
        // No predictions at all: the gold Attack trigger is missed.
        let empty = SentencePrediction { tags: vec![0; 6], mentions: vec![], events: vec![] };
        let errors = error_report(&[empty], &gold, &schema).unwrap();
        assert_eq!(errors.missed, vec![("Attack".to_string(), 1, 100.0)]);
        assert!(errors.incorrect.is_empty());
    }

    #[test]
    fn percentages_sum_to_hundred() {
        let schema =
            LabelSchema::new(&["VEH", "TIME"], &["Attack", "Meet"], &["Target", "Time"]).unwrap();
        let mut gold1 = running_sentence();
        gold1.events[0].event_type = "Attack".into();
        let mut gold2 = running_sentence();
        gold2.events[0].event_type = "Meet".into();
        let empty = || SentencePrediction { tags: vec![0; 6], mentions: vec![], events: vec![] };
        let errors = error_report(&[empty(), empty()], &[gold1, gold2], &schema).unwrap();
        let total: f64 = errors.missed.iter().map(|(_, _, pct)| pct).sum();
        assert!((total - 100.0).abs() < 0.1);
    }

    #[test]
    fn role_confusions_counted() {
        let schema = running_schema();
        let gold = vec![running_sentence()];
        let mut pred = perfect_prediction(&gold[0], &schema);
        // Swap the Target argument's role to Time.
        let time = schema.role_index("Time").unwrap();
        pred.events[0].args[0].1 = time;
        let errors = error_report(&[pred], &gold, &schema).unwrap();
        assert_eq!(errors.confusions, vec![("Target".to_string(), "Time".to_string(), 1)]);
    }

    #[test]
    fn swapping_prediction_and_gold_swaps_p_and_r() {
        let schema = running_schema();
        let mut gold = running_sentence();
        gold.events.push(crate::corpus::Event {
            trigger: 0,
            event_type: "Attack".into(),
            args: vec![],
        });
        let mut smaller = running_sentence();
        smaller.events[0].args.clear();
        let pred_small = perfect_prediction(&smaller, &schema);

        let fwd = score(&[pred_small], &[gold.clone()], &schema).unwrap();
        // Reverse direction: prediction mirroring `gold`, gold being `smaller`.
        let pred_big = perfect_prediction(&gold, &schema);
        let rev = score(&[pred_big], &[smaller], &schema).unwrap();
        assert!((fwd.trigger_identification.precision - rev.trigger_identification.recall).abs() < 1e-12);
        assert!((fwd.trigger_identification.recall - rev.trigger_identification.precision).abs() < 1e-12);
    }

    #[test]
    fn sentence_count_mismatch_is_an_error() {
        let schema = running_schema();
        assert!(score(&[], &[running_sentence()], &schema).is_err());
    }
}
