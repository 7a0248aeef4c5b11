//! BIO sequence decoding: transition constraints, Viterbi search and span
//! recovery.
//!
//! The per-token distributions come from the entity head of the model; this
//! module turns them into a consistent tag sequence. The transition matrix is
//! generated, not learned: every transition into `I-X` from anything other
//! than `B-X`/`I-X` (including from the sequence start) carries a large
//! negative penalty, everything else scores zero.

use crate::corpus::Mention;
use crate::schema::{BioTag, LabelSchema};

/// Penalty standing in for minus infinity in log space; keeps the dynamic
/// program free of special cases.
pub const FORBIDDEN: f64 = -1e9;

/// Start-row plus square transition scores over the BIO tag set.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    num_tags: usize,
    start: Vec<f64>,
    scores: Vec<f64>,
}

impl TransitionMatrix {
    pub fn for_schema(schema: &LabelSchema) -> TransitionMatrix {
        let num_tags = schema.num_bio_tags();
        let mut start = vec![0.0; num_tags];
        let mut scores = vec![0.0; num_tags * num_tags];
        for next in 0..num_tags {
            if !schema.is_inside(next) {
                continue;
            }
            let ty = schema.tag_entity_type(next);
            start[next] = FORBIDDEN;
            for prev in 0..num_tags {
                if schema.tag_entity_type(prev) != ty {
                    scores[prev * num_tags + next] = FORBIDDEN;
                }
            }
        }
        TransitionMatrix { num_tags, start, scores }
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn start_score(&self, tag: BioTag) -> f64 {
        self.start[tag]
    }

    pub fn score(&self, prev: BioTag, next: BioTag) -> f64 {
        self.scores[prev * self.num_tags + next]
    }

    pub fn is_forbidden_start(&self, tag: BioTag) -> bool {
        self.start[tag] <= FORBIDDEN
    }

    pub fn is_forbidden(&self, prev: BioTag, next: BioTag) -> bool {
        self.score(prev, next) <= FORBIDDEN
    }
}

/// Total path score: start transition, then emission + transition per step.
pub fn sequence_score(emissions: &[Vec<f64>], transitions: &TransitionMatrix, tags: &[BioTag]) -> f64 {
    debug_assert_eq!(emissions.len(), tags.len());
    let mut score = transitions.start_score(tags[0]) + emissions[0][tags[0]];
    for i in 1..tags.len() {
        score += transitions.score(tags[i - 1], tags[i]);
        score += emissions[i][tags[i]];
    }
    score
}

/// Highest-scoring tag sequence under per-token scores plus transitions.
/// Ties break toward the lowest tag index, so decoding is deterministic.
pub fn viterbi_decode(emissions: &[Vec<f64>], transitions: &TransitionMatrix) -> Vec<BioTag> {
    let n = emissions.len();
    assert!(n >= 1, "viterbi requires at least one token");
    let t = transitions.num_tags;
    debug_assert!(emissions.iter().all(|e| e.len() == t));

    let mut best: Vec<f64> = (0..t).map(|tag| transitions.start_score(tag) + emissions[0][tag]).collect();
    let mut backptr = vec![vec![0usize; t]; n];

    for i in 1..n {
        let mut next = vec![f64::NEG_INFINITY; t];
        for tag in 0..t {
            let mut best_prev = 0;
            let mut best_score = f64::NEG_INFINITY;
            for prev in 0..t {
                let s = best[prev] + transitions.score(prev, tag);
                if s > best_score {
                    best_score = s;
                    best_prev = prev;
                }
            }
            next[tag] = best_score + emissions[i][tag];
            backptr[i][tag] = best_prev;
        }
        best = next;
    }

    let mut last = 0;
    let mut last_score = f64::NEG_INFINITY;
    for (tag, &s) in best.iter().enumerate() {
        if s > last_score {
            last_score = s;
            last = tag;
        }
    }

    let mut tags = vec![0; n];
    tags[n - 1] = last;
    for i in (0..n - 1).rev() {
        tags[i] = backptr[i + 1][tags[i + 1]];
    }
    tags
}

/// Best achievable score by exhaustive enumeration of all `tags^n`
/// sequences. Exponential; diagnostic oracle for [`viterbi_decode`] on
/// small instances only.
pub fn enumerate_best_score(emissions: &[Vec<f64>], transitions: &TransitionMatrix) -> f64 {
    let n = emissions.len();
    let t = transitions.num_tags();
    assert!(n >= 1 && t >= 1);
    let mut best = f64::NEG_INFINITY;
    let mut seq = vec![0usize; n];
    loop {
        let score = sequence_score(emissions, transitions, &seq);
        if score > best {
            best = score;
        }
        // Odometer increment over the tag space.
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            seq[pos] += 1;
            if seq[pos] < t {
                break;
            }
            seq[pos] = 0;
            pos += 1;
        }
    }
}

/// Recover mention spans from a valid BIO sequence: every maximal
/// `B-X (I-X)*` run becomes one mention.
///
/// Panics on an orphan `I` tag; the transition matrix makes those impossible
/// after Viterbi decoding.
pub fn tags_to_mentions(tags: &[BioTag], schema: &LabelSchema) -> Vec<Mention> {
    let mut mentions = Vec::new();
    let mut open: Option<(usize, usize)> = None; // (start, entity type)
    for (i, &tag) in tags.iter().enumerate() {
        if schema.is_inside(tag) {
            let ty = schema.tag_entity_type(tag).unwrap();
            match open {
                Some((_, open_ty)) if open_ty == ty => continue,
                _ => panic!("orphan {} at token {i}", schema.bio_tag_name(tag)),
            }
        }
        if let Some((start, ty)) = open.take() {
            mentions.push(Mention { start, end: i - 1, entity_type: schema.entity_types[ty].clone() });
        }
        if schema.is_begin(tag) {
            open = Some((i, schema.tag_entity_type(tag).unwrap()));
        }
    }
    if let Some((start, ty)) = open {
        mentions.push(Mention {
            start,
            end: tags.len() - 1,
            entity_type: schema.entity_types[ty].clone(),
        });
    }
    mentions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use rand::Rng as _;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema3() -> LabelSchema {
        LabelSchema::new(&["PER", "TIME", "VEH"], &["Attack"], &["Target"]).unwrap()
    }

    #[test]
    fn forbidden_transitions_exact_set() {
        let schema = schema3();
        let tm = TransitionMatrix::for_schema(&schema);
        let names = schema.bio_tags();
        for next in 0..tm.num_tags() {
            let inside = schema.is_inside(next);
            assert_eq!(tm.is_forbidden_start(next), inside, "start -> {}", names[next]);
            for prev in 0..tm.num_tags() {
                let want = inside && schema.tag_entity_type(prev) != schema.tag_entity_type(next);
                assert_eq!(tm.is_forbidden(prev, next), want, "{} -> {}", names[prev], names[next]);
                if !want {
                    assert_eq!(tm.score(prev, next), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_token_picks_best_tag() {
        let schema = schema3();
        let tm = TransitionMatrix::for_schema(&schema);
        let b_per = schema.begin_tag(0);
        let mut em = vec![-5.0; schema.num_bio_tags()];
        em[b_per] = -0.1;
        let tags = viterbi_decode(&[em], &tm);
        assert_eq!(tags, vec![b_per]);
    }

    #[test]
    fn never_starts_with_inside_tag() {
        let schema = schema3();
        let tm = TransitionMatrix::for_schema(&schema);
        let i_veh = schema.inside_tag(2);
        let mut em0 = vec![-3.0; schema.num_bio_tags()];
        em0[i_veh] = 0.0; // strongly prefers I-VEH
        let em1 = vec![-1.0; schema.num_bio_tags()];
        let tags = viterbi_decode(&[em0, em1], &tm);
        assert_ne!(tags[0], i_veh);
        assert!(!tm.is_forbidden_start(tags[0]));
    }

    #[test]
    fn ties_break_to_lowest_tag_index() {
        let schema = schema3();
        let tm = TransitionMatrix::for_schema(&schema);
        let em = vec![vec![0.0; schema.num_bio_tags()]; 3];
        let tags = viterbi_decode(&em, &tm);
        assert_eq!(tags, vec![0, 0, 0]);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..100 {
            let entity_types: Vec<String> =
                (0..rng.gen_range(0..=3)).map(|k| format!("T{k}")).collect();
            let schema =
                LabelSchema::new(&entity_types, &["Attack".to_string()], &["Arg".to_string()])
                    .unwrap();
            let tm = TransitionMatrix::for_schema(&schema);
            let n = rng.gen_range(1..=6);
            let emissions: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..tm.num_tags()).map(|_| rng.gen_range(-6.0..1.0)).collect())
                .collect();
            let decoded = viterbi_decode(&emissions, &tm);
            let decoded_score = sequence_score(&emissions, &tm, &decoded);
            let brute = enumerate_best_score(&emissions, &tm);
            assert_eq!(decoded_score, brute, "trial {trial}: {decoded_score} != {brute}");
        }
    }

    #[test]
    fn running_sentence_tags_decode_to_gold_mentions() {
        let schema = corpus::tests::running_schema();
        let sentence = corpus::tests::running_sentence();
        let tags = corpus::encode_bio(&sentence, &schema).unwrap();
        let mentions = tags_to_mentions(&tags, &schema);
        assert_eq!(mentions, sentence.mentions);
    }

    #[test]
    fn all_outside_yields_no_mentions() {
        let schema = schema3();
        assert!(tags_to_mentions(&[0, 0, 0], &schema).is_empty());
    }

    #[test]
    fn adjacent_begins_are_separate_mentions() {
        let schema = schema3();
        let b_per = schema.begin_tag(0);
        let mentions = tags_to_mentions(&[b_per, b_per], &schema);
        assert_eq!(mentions.len(), 2);
        assert_eq!((mentions[0].start, mentions[0].end), (0, 0));
        assert_eq!((mentions[1].start, mentions[1].end), (1, 1));
    }

    #[test]
    #[should_panic(expected = "orphan")]
    fn orphan_inside_tag_panics() {
        let schema = schema3();
        let i_per = schema.inside_tag(0);
        tags_to_mentions(&[0, i_per], &schema);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Decoded sequences never contain a forbidden transition,
            /// whatever the emission scores.
            #[test]
            fn decoded_sequences_are_always_valid(
                n in 1usize..10,
                num_types in 0usize..4,
                seed in proptest::num::u64::ANY,
            ) {
                let entity_types: Vec<String> = (0..num_types).map(|k| format!("T{k}")).collect();
                let schema = LabelSchema::new(
                    &entity_types,
                    &["E".to_string()],
                    &["R".to_string()],
                ).unwrap();
                let tm = TransitionMatrix::for_schema(&schema);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let emissions: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..tm.num_tags()).map(|_| rng.gen_range(-50.0..50.0)).collect())
                    .collect();
                let tags = viterbi_decode(&emissions, &tm);
                prop_assert!(!tm.is_forbidden_start(tags[0]));
                for w in tags.windows(2) {
                    prop_assert!(!tm.is_forbidden(w[0], w[1]));
                }
                // Valid sequences always round-trip through span recovery.
                tags_to_mentions(&tags, &schema);
            }

            /// Span recovery inverts BIO encoding on valid annotations.
            #[test]
            fn mention_round_trip(s in corpus::tests::properties::arb_sentence()) {
                let schema = LabelSchema::new(
                    &["PER", "TIME", "VEH"],
                    &["Attack", "Meet"],
                    &["Target", "Time"],
                ).unwrap();
                let tags = corpus::encode_bio(&s, &schema).unwrap();
                let mut mentions = tags_to_mentions(&tags, &schema);
                let mut gold = s.mentions.clone();
                mentions.sort_by_key(|m| m.start);
                gold.sort_by_key(|m| m.start);
                prop_assert_eq!(mentions, gold);
            }
        }
    }
}
