//! Left-to-right joint decoding of event triggers and argument roles.
//!
//! At each token the trigger head picks an event type; for a non-`Other`
//! choice the role head scores every entity-begin position. A memory vector
//! records which event types and roles appeared earlier in the scan, and a
//! hashed binary vector captures discrete structures (dependency path,
//! context words, token distance) between the trigger and the candidate
//! argument.

use crate::corpus::Sentence;
use crate::error::Result;
use crate::model::{JointModel, SentenceStates};
use crate::schema::{BioTag, LabelSchema};
use crate::tensor::Graph;

/// Binary record of the event types and argument roles assigned before the
/// current step. Bits only ever turn on; reset per sentence.
#[derive(Debug, Clone)]
pub struct MemoryVector {
    num_events: usize,
    bits: Vec<f64>,
}

impl MemoryVector {
    pub fn new(schema: &LabelSchema) -> MemoryVector {
        MemoryVector {
            num_events: schema.event_types.len(),
            bits: vec![0.0; schema.event_types.len() + schema.roles.len()],
        }
    }

    pub fn observe_event(&mut self, event_type: usize) {
        if event_type != LabelSchema::OTHER {
            self.bits[event_type] = 1.0;
        }
    }

    pub fn observe_role(&mut self, role: usize) {
        if role != LabelSchema::OTHER {
            self.bits[self.num_events + role] = 1.0;
        }
    }

    pub fn bits(&self) -> Vec<f64> {
        self.bits.clone()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b > 0.0).count()
    }
}

/// 64-bit FNV-1a with a fixed basis; stable across runs and platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Bucket index for the signed token distance `j - i` (never zero).
fn distance_bucket(d: isize) -> usize {
    match d {
        d if d <= -5 => 0,
        -4..=-2 => 1,
        -1 => 2,
        1 => 3,
        2..=4 => 4,
        _ => 5,
    }
}

/// Shortest path between two tokens in the dependency tree, rendered as a
/// label sequence with arc directions. `None` without dependency annotations
/// or when no path exists.
fn dependency_path(sentence: &Sentence, i: usize, j: usize) -> Option<String> {
    let deps = sentence.deps.as_ref()?;
    let n = sentence.len();
    // Breadth-first search over the undirected tree; parent[k] remembers how
    // we reached k.
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    visited[i] = true;
    queue.push_back(i);
    while let Some(cur) = queue.pop_front() {
        if cur == j {
            break;
        }
        let mut neighbors = Vec::new();
        if deps[cur].head != cur {
            neighbors.push(deps[cur].head);
        }
        for (child, d) in deps.iter().enumerate() {
            if d.head == cur && child != cur {
                neighbors.push(child);
            }
        }
        for nb in neighbors {
            if !visited[nb] {
                visited[nb] = true;
                parent[nb] = Some(cur);
                queue.push_back(nb);
            }
        }
    }
    if !visited[j] {
        return None;
    }
    let mut nodes = vec![j];
    let mut cur = j;
    while let Some(p) = parent[cur] {
        nodes.push(p);
        cur = p;
    }
    nodes.reverse();
    debug_assert_eq!(nodes[0], i);
    let mut path = String::new();
    for pair in nodes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if deps[a].head == b {
            // Walking up to a's head.
            path.push('^');
            path.push_str(&deps[a].rel);
        } else {
            // Walking down to a child.
            debug_assert_eq!(deps[b].head, a);
            path.push('v');
            path.push_str(&deps[b].rel);
        }
    }
    Some(path)
}

/// Hashed binary features between tokens `i` and `j`: dependency path label
/// sequence, context words within the window, and the bucketed signed
/// distance. Empty when `width` is zero. Entity types never contribute.
pub fn bij_features(sentence: &Sentence, i: usize, j: usize, u: usize, width: usize) -> Vec<f64> {
    if width == 0 {
        return Vec::new();
    }
    let mut bits = vec![0.0; width];
    let mut set = |feature: &str| {
        bits[(fnv1a(feature.as_bytes()) % width as u64) as usize] = 1.0;
    };

    set(&format!("dist={}", distance_bucket(j as isize - i as isize)));
    let window = |center: usize, tag: &str, set: &mut dyn FnMut(&str)| {
        let lo = center.saturating_sub(u);
        let hi = (center + u).min(sentence.len() - 1);
        for k in lo..=hi {
            set(&format!("{tag}[{}]={}", k as isize - center as isize, sentence.tokens[k]));
        }
    };
    window(i, "cwi", &mut set);
    window(j, "cwj", &mut set);
    if let Some(path) = dependency_path(sentence, i, j) {
        set(&format!("path={path}"));
    }
    bits
}

/// Conditioning blocks of the pairwise role features: the two one-hot label
/// slots, the memory bits and the hashed discrete vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ArpCondition {
    /// BIO label fed to the entity slot.
    pub entity_label: BioTag,
    /// Event type fed to the trigger slot.
    pub trigger_label: usize,
    pub memory: Vec<f64>,
    pub bij: Vec<f64>,
}

impl ArpCondition {
    /// Pick the label slots for pair `(i, j)`.
    ///
    /// The default reading feeds the trigger token's event type and the
    /// argument token's entity label. The literal-indexing switch feeds the
    /// trigger token's entity label and the argument token's event type
    /// instead.
    pub fn new(
        model: &JointModel,
        bio_i: BioTag,
        bio_j: BioTag,
        trigger_i: usize,
        trigger_j: usize,
        memory: Vec<f64>,
        bij: Vec<f64>,
    ) -> ArpCondition {
        let (entity_label, trigger_label) = if model.config.eq1_literal_indexing {
            (bio_i, trigger_j)
        } else {
            (bio_j, trigger_i)
        };
        ArpCondition { entity_label, trigger_label, memory, bij }
    }
}

/// One extracted event: trigger token, event type, and `(argument begin
/// token, role)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictedEvent {
    pub trigger: usize,
    pub event_type: usize,
    pub args: Vec<(usize, usize)>,
}

/// Scan the sentence left to right: greedy trigger choice per token, then a
/// role prediction against every entity-begin position of `tags` whenever the
/// trigger is not `Other`. The memory vector updates only after a row
/// completes.
pub fn decode_events(
    model: &JointModel,
    g: &mut Graph,
    states: &SentenceStates,
    sentence: &Sentence,
    tags: &[BioTag],
) -> Result<Vec<PredictedEvent>> {
    let n = sentence.len();
    debug_assert_eq!(tags.len(), n);
    let schema = &model.schema;
    let begin_positions: Vec<usize> = (0..n).filter(|&j| schema.is_begin(tags[j])).collect();

    let mut memory = MemoryVector::new(schema);
    let mut trigger_labels = vec![LabelSchema::OTHER; n];
    let mut events = Vec::new();
    let mut role_evaluations = 0usize;

    for i in 0..n {
        let (_, event_type) = model.trigger_predict(g, states, i)?;
        trigger_labels[i] = event_type;
        if event_type == LabelSchema::OTHER {
            // Skip rule: no role computations, no memory update.
            continue;
        }
        let memory_before = memory.ones();
        let mut args = Vec::new();
        for &j in &begin_positions {
            if j == i {
                continue;
            }
            let bij = bij_features(sentence, i, j, model.config.u, model.bij_width());
            let cond = ArpCondition::new(
                model,
                tags[i],
                tags[j],
                event_type,
                trigger_labels[j],
                memory.bits(),
                bij,
            );
            let (_, role) = model.argument_predict(g, states, i, j, &cond)?;
            role_evaluations += 1;
            if role != LabelSchema::OTHER {
                args.push((j, role));
            }
        }
        memory.observe_event(event_type);
        for &(_, role) in &args {
            memory.observe_role(role);
        }
        debug_assert!(memory.ones() >= memory_before, "memory bits must be monotone");
        events.push(PredictedEvent { trigger: i, event_type, args });
    }

    // Skip-rule bookkeeping: one role evaluation per (non-Other trigger,
    // begin position) pair minus diagonal collisions.
    let triggers: Vec<usize> =
        (0..n).filter(|&i| trigger_labels[i] != LabelSchema::OTHER).collect();
    let collisions =
        triggers.iter().filter(|i| begin_positions.contains(i)).count();
    debug_assert_eq!(
        role_evaluations,
        triggers.len() * begin_positions.len() - collisions
    );
    let _ = role_evaluations;

    Ok(events)
}
