//! Deterministic synthetic corpora for desk-scale experiments.
//!
//! Sentences follow a small grammar in which the entity type of every noun
//! and the event type of every trigger verb are fixed properties of the
//! word, so the mapping is learnable. An ambiguity rate controls how often a
//! trigger verb is drawn from a pool whose words belong to two event types,
//! with the actual type decided by a seeded coin flip. Roles are determined
//! by the event type and the argument's position relative to the trigger.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Argument, DepEdge, Event, Mention, Sentence};

const DETERMINERS: &[&str] = &["the", "a", "another", "this"];
const TIME_WORDS: &[&str] = &["today", "yesterday", "monday", "friday", "overnight", "saturday"];
const NEUTRAL_VERBS: &[&str] = &["remained", "waited", "rested", "stood"];

const ENTITY_TYPES: &[&str] = &["PER", "ORG", "VEH", "FAC"];
const NOUNS: &[&[&str]] = &[
    &["soldier", "commander", "pilot", "spokesman", "governor", "rebel"],
    &["battalion", "ministry", "agency", "coalition", "militia", "patrol"],
    &["warthog", "tank", "convoy", "helicopter", "jeep", "frigate"],
    &["bridge", "airport", "barracks", "depot", "embassy", "outpost"],
];
const ADJECTIVES: &[&[&str]] = &[
    &["veteran", "senior"],
    &["armored", "regional"],
    &["a-10", "light"],
    &["fortified", "coastal"],
];

const EVENT_TYPES: &[&str] = &["Attack", "Meet", "Transport"];
const TRIGGERS: &[&[&str]] = &[
    &["hit", "bombed", "shelled", "ambushed"],
    &["met", "visited", "hosted", "greeted"],
    &["moved", "ferried", "convoyed", "airlifted"],
];
/// Verbs that belong to two event types; drawn at the ambiguity rate.
const AMBIGUOUS_TRIGGERS: &[(&str, [usize; 2])] = &[
    ("engaged", [0, 1]),
    ("rushed", [0, 2]),
    ("received", [1, 2]),
];

/// Role of the pre-trigger and post-trigger argument per event type, the
/// role of a facility phrase, and its preposition.
const SUBJECT_ROLE: &[&str] = &["Attacker", "Entity", "Agent"];
const OBJECT_ROLE: &[&str] = &["Target", "Entity", "Artifact"];
const PHRASE_ROLE: &[&str] = &["Place", "Place", "Destination"];
const PHRASE_PREP: &[&str] = &["at", "at", "to"];

const PER: usize = 0;
const ORG: usize = 1;
const VEH: usize = 2;
const FAC: usize = 3;

/// Entity type pools for the pre- and post-trigger slots per event type.
const SUBJECT_POOL: &[&[usize]] = &[&[PER, ORG, VEH], &[PER, ORG], &[VEH, ORG]];
const OBJECT_POOL: &[&[usize]] = &[&[PER, ORG, VEH], &[PER, ORG], &[PER, ORG, VEH]];

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub sentences: usize,
    pub seed: u64,
    /// Probability that a trigger is drawn from the two-type pool.
    pub ambiguity: f64,
    /// Emit POS/chunk/dependency annotations.
    pub linguistic: bool,
}

impl SyntheticSpec {
    pub fn new(sentences: usize, seed: u64) -> Self {
        SyntheticSpec { sentences, seed, ambiguity: 0.0, linguistic: true }
    }

    pub fn with_ambiguity(mut self, ambiguity: f64) -> Self {
        self.ambiguity = ambiguity;
        self
    }

    pub fn with_linguistic(mut self, linguistic: bool) -> Self {
        self.linguistic = linguistic;
        self
    }
}

/// Token roles while assembling a sentence; turned into POS/chunk/deps at
/// the end.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Det { noun: usize },
    Adj { noun: usize },
    Noun { verb: usize, relation: &'static str },
    Verb,
    SecondVerb { first: usize },
    Conj { verb: usize },
    Prep { verb: usize },
    PrepNoun { prep: usize },
    Time { verb: usize },
}

struct Builder {
    tokens: Vec<String>,
    slots: Vec<Slot>,
    mentions: Vec<Mention>,
    events: Vec<Event>,
}

impl Builder {
    fn new() -> Self {
        Builder { tokens: Vec::new(), slots: Vec::new(), mentions: Vec::new(), events: Vec::new() }
    }

    fn push(&mut self, token: &str, slot: Slot) -> usize {
        self.tokens.push(token.to_string());
        self.slots.push(slot);
        self.tokens.len() - 1
    }

    /// Emit `det [adj] noun` as a mention of the noun's entity type.
    /// Returns (mention index, noun position). The verb position is patched
    /// into the slots later if the verb comes after the phrase.
    fn noun_phrase(
        &mut self,
        rng: &mut ChaCha8Rng,
        ty: usize,
        verb: usize,
        relation: &'static str,
    ) -> (usize, usize) {
        let det = *DETERMINERS.choose(rng).unwrap();
        let noun_word = *NOUNS[ty].choose(rng).unwrap();
        let start = self.tokens.len();
        // The det/adj head is the noun; its position depends on the adjective.
        let with_adj = rng.gen::<f64>() < 0.4;
        let noun_pos = start + 1 + usize::from(with_adj);
        self.push(det, Slot::Det { noun: noun_pos });
        if with_adj {
            let adj = *ADJECTIVES[ty].choose(rng).unwrap();
            self.push(adj, Slot::Adj { noun: noun_pos });
        }
        let noun_at = self.push(noun_word, Slot::Noun { verb, relation });
        debug_assert_eq!(noun_at, noun_pos);
        self.mentions.push(Mention {
            start,
            end: noun_at,
            entity_type: ENTITY_TYPES[ty].to_string(),
        });
        (self.mentions.len() - 1, noun_at)
    }

    fn finish(self, linguistic: bool) -> Sentence {
        let n = self.tokens.len();
        let (pos, chunk, deps) = if linguistic {
            let mut pos = Vec::with_capacity(n);
            let mut chunk = Vec::with_capacity(n);
            let mut deps = Vec::with_capacity(n);
            for (i, slot) in self.slots.iter().enumerate() {
                let (p, c, head, rel): (&str, &str, usize, &str) = match *slot {
                    Slot::Det { noun } => ("DT", "B-NP", noun, "det"),
                    Slot::Adj { noun } => ("JJ", "I-NP", noun, "amod"),
                    Slot::Noun { verb, relation } => ("NN", "I-NP", verb, relation),
                    Slot::Verb => ("VBD", "B-VP", i, "root"),
                    Slot::SecondVerb { first } => ("VBD", "B-VP", first, "conj"),
                    Slot::Conj { verb } => ("CC", "O", verb, "cc"),
                    Slot::Prep { verb } => ("IN", "B-PP", verb, "prep"),
                    Slot::PrepNoun { prep } => ("NN", "B-NP", prep, "pobj"),
                    Slot::Time { verb } => ("NN", "B-NP", verb, "tmod"),
                };
                pos.push(p.to_string());
                chunk.push(c.to_string());
                deps.push(DepEdge { head, rel: rel.to_string() });
            }
            (Some(pos), Some(chunk), Some(deps))
        } else {
            (None, None, None)
        };
        let mut sentence = Sentence {
            tokens: self.tokens,
            mentions: self.mentions,
            events: self.events,
            pos,
            chunk,
            deps,
        };
        let warnings = sentence.validate_and_normalize().expect("generated sentence is valid");
        debug_assert!(warnings.is_empty(), "generator produced warnings: {warnings:?}");
        sentence
    }
}

fn pick_trigger(rng: &mut ChaCha8Rng, ambiguity: f64) -> (String, usize) {
    if rng.gen::<f64>() < ambiguity {
        let (word, types) = AMBIGUOUS_TRIGGERS.choose(rng).unwrap();
        let ty = types[rng.gen_range(0..2)];
        (word.to_string(), ty)
    } else {
        let ty = rng.gen_range(0..EVENT_TYPES.len());
        ((*TRIGGERS[ty].choose(rng).unwrap()).to_string(), ty)
    }
}

/// Append one event clause: trigger, object phrase, optional facility
/// phrase, optional time. `subject` is the already-emitted subject mention.
fn event_clause(
    b: &mut Builder,
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    subject: usize,
    verb_at: usize,
    event_ty: usize,
) {
    let mut args = vec![Argument { mention: subject, role: SUBJECT_ROLE[event_ty].to_string() }];

    let obj_ty = *OBJECT_POOL[event_ty].choose(rng).unwrap();
    let (obj_mention, _) = b.noun_phrase(rng, obj_ty, verb_at, "dobj");
    args.push(Argument { mention: obj_mention, role: OBJECT_ROLE[event_ty].to_string() });

    if rng.gen::<f64>() < 0.4 {
        let prep_at = b.push(PHRASE_PREP[event_ty], Slot::Prep { verb: verb_at });
        let fac_word = *NOUNS[FAC].choose(rng).unwrap();
        let fac_at = b.push(fac_word, Slot::PrepNoun { prep: prep_at });
        b.mentions.push(Mention {
            start: fac_at,
            end: fac_at,
            entity_type: ENTITY_TYPES[FAC].to_string(),
        });
        args.push(Argument {
            mention: b.mentions.len() - 1,
            role: PHRASE_ROLE[event_ty].to_string(),
        });
    }
    if rng.gen::<f64>() < 0.5 {
        let time_word = *TIME_WORDS.choose(rng).unwrap();
        let time_at = b.push(time_word, Slot::Time { verb: verb_at });
        b.mentions.push(Mention { start: time_at, end: time_at, entity_type: "TIME".to_string() });
        args.push(Argument { mention: b.mentions.len() - 1, role: "Time".to_string() });
    }
    let _ = spec;
    b.events.push(Event {
        trigger: verb_at,
        event_type: EVENT_TYPES[event_ty].to_string(),
        args,
    });
}

fn generate_sentence(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Sentence {
    let mut b = Builder::new();
    if rng.gen::<f64>() < 0.2 {
        // Event-free sentence; any time word is a mention without a role.
        let ty = rng.gen_range(0..NOUNS.len());
        // Slot verb position: determiner/adjective decide where the noun
        // lands, and the verb follows the phrase.
        let (_, noun_at) = b.noun_phrase(rng, ty, usize::MAX, "nsubj");
        let verb_at = b.push(*NEUTRAL_VERBS.choose(rng).unwrap(), Slot::Verb);
        patch_subject_verb(&mut b, noun_at, verb_at);
        if rng.gen::<f64>() < 0.5 {
            let time_word = *TIME_WORDS.choose(rng).unwrap();
            let time_at = b.push(time_word, Slot::Time { verb: verb_at });
            b.mentions.push(Mention {
                start: time_at,
                end: time_at,
                entity_type: "TIME".to_string(),
            });
        }
        return b.finish(spec.linguistic);
    }

    let (verb_word, event_ty) = pick_trigger(rng, spec.ambiguity);
    let subj_ty = *SUBJECT_POOL[event_ty].choose(rng).unwrap();
    let (subj_mention, noun_at) = b.noun_phrase(rng, subj_ty, usize::MAX, "nsubj");
    let verb_at = b.push(&verb_word, Slot::Verb);
    patch_subject_verb(&mut b, noun_at, verb_at);
    event_clause(&mut b, rng, spec, subj_mention, verb_at, event_ty);

    if rng.gen::<f64>() < 0.15 {
        // Second coordinated event sharing the subject.
        let conj_at = b.push("and", Slot::Conj { verb: 0 });
        let (verb2_word, event2_ty) = pick_trigger(rng, spec.ambiguity);
        let verb2_at = b.push(&verb2_word, Slot::SecondVerb { first: verb_at });
        b.slots[conj_at] = Slot::Conj { verb: verb2_at };
        event_clause(&mut b, rng, spec, subj_mention, verb2_at, event2_ty);
    }
    b.finish(spec.linguistic)
}

/// The subject phrase is emitted before the verb exists; point its noun (and
/// the phrase-internal heads already do) at the verb once known.
fn patch_subject_verb(b: &mut Builder, noun_at: usize, verb_at: usize) {
    if let Slot::Noun { verb, .. } = &mut b.slots[noun_at] {
        *verb = verb_at;
    }
}

/// Generate a deterministic corpus.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.sentences).map(|_| generate_sentence(&mut rng, spec)).collect()
}
