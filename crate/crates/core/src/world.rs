//! Seeded synthetic multi-hop QA worlds.
//!
//! A world is a union of entity-disjoint relation chains. Every chain edge
//! (a subject/relation/object triple) is verbalized into exactly one
//! single-sentence document from a fixed template, alongside standalone
//! plausible-but-false distractor documents that reuse real entities and
//! relations. Questions ask for the entity at the end of the last `h` hops
//! of a chain, so answering requires following the chain hop by hop.
//!
//! Because every fact has exactly one verbalization, sufficiency is
//! decidable by string containment: a reasoning trace covers a hop iff some
//! `<information>` segment contains that hop's fact sentence. That makes
//! [`oracle_sufficient`] and [`sufficiency_point`] exact rather than
//! heuristic.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::words;
use crate::trace::{SegmentKind, Trajectory};

/// Relation vocabulary shared by all worlds. Questions read as nested
/// genitives ("the capital of the mentor of ..."), so every relation is a
/// noun.
pub const RELATIONS: [&str; 10] = [
    "mentor", "successor", "founder", "capital", "spouse", "rival", "patron", "birthplace",
    "ally", "heir",
];

/// Chains always have this many hops; questions take a suffix of a chain.
pub const CHAIN_HOPS: usize = 4;

/// One directed fact: `relation(subject) = object`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

/// One retrievable document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: u32,
    pub text: String,
}

/// A generated world: entities, chain-ordered triples, and their documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    /// All facts, grouped as consecutive runs of [`CHAIN_HOPS`] per chain.
    pub triples: Vec<Triple>,
    pub documents: Vec<Document>,
    pub distractor_count: usize,
}

/// A sampled question: follow `hops` in order from the first subject to the
/// gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub text: String,
    /// The gold reasoning chain, first hop first.
    pub hops: Vec<Triple>,
    pub gold_answer: String,
}

/// One ranked retrieval hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub doc_id: u32,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorldError {
    #[error("{needed} entities needed for {chains} disjoint {CHAIN_HOPS}-hop chains, got {got}")]
    NotEnoughEntities { needed: usize, got: usize, chains: usize },
    #[error("world needs at least one chain")]
    NoChains,
    #[error("question hops must be in 1..={CHAIN_HOPS}, got {0}")]
    BadHopCount(usize),
}

/// The unique verbalization of a fact. Sufficiency oracles test containment
/// of exactly this string, so it must stay injective in the triple.
pub fn fact_sentence(t: &Triple) -> String {
    format!("The {} of {} is {}.", t.relation, t.subject, t.object)
}

/// The canonical search query for one hop: enough tokens to rank that
/// hop's document first under token-overlap retrieval.
pub fn hop_query(t: &Triple) -> String {
    format!("{} of {}", t.relation, t.subject)
}

fn distractor_sentence(subject: &str, relation: &str, object: &str) -> String {
    // A different template from `fact_sentence`, so a distractor can never
    // collide with a fact verbalization byte-for-byte.
    format!("Some claim the {relation} of {subject} is {object}.")
}

const SYLLABLES: [&str; 10] = ["ka", "ri", "to", "ve", "lu", "mi", "so", "ba", "ne", "du"];

/// Entity names are all the same length (three syllables plus a fixed-width
/// index), so no name is a substring of another and token matching is
/// unambiguous.
fn entity_name(rng: &mut ChaCha8Rng, index: usize, width: usize) -> String {
    let mut name = String::new();
    for i in 0..3 {
        let syl = SYLLABLES[rng.gen_range(0..SYLLABLES.len())];
        if i == 0 {
            let mut chars = syl.chars();
            let head = chars.next().expect("syllable is non-empty");
            name.push(head.to_ascii_uppercase());
            name.push_str(chars.as_str());
        } else {
            name.push_str(syl);
        }
    }
    name.push_str(&format!("{index:0width$}"));
    name
}

/// Builds a world with `n_chains` entity-disjoint chains of [`CHAIN_HOPS`]
/// hops — one single-sentence document per fact — plus `distractor_count`
/// standalone distractor documents. Deterministic in `seed`.
pub fn generate_world(
    seed: u64,
    n_entities: usize,
    n_chains: usize,
    distractor_count: usize,
) -> Result<WorldSpec, WorldError> {
    if n_chains == 0 {
        return Err(WorldError::NoChains);
    }
    let needed = n_chains * (CHAIN_HOPS + 1);
    if n_entities < needed {
        return Err(WorldError::NotEnoughEntities { needed, got: n_entities, chains: n_chains });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n_entities.to_string().len();
    let entities: Vec<String> =
        (0..n_entities).map(|i| entity_name(&mut rng, i, width)).collect();

    let mut order: Vec<usize> = (0..n_entities).collect();
    order.shuffle(&mut rng);

    let mut triples = Vec::with_capacity(n_chains * CHAIN_HOPS);
    for c in 0..n_chains {
        let members = &order[c * (CHAIN_HOPS + 1)..(c + 1) * (CHAIN_HOPS + 1)];
        // Relations are distinct within a chain, so the only fact sentence
        // containing both a hop's relation and its subject is that hop's
        // own (the subject also appears in the previous hop, but under a
        // different relation).
        let mut rels: Vec<usize> = (0..RELATIONS.len()).collect();
        rels.shuffle(&mut rng);
        for hop in 0..CHAIN_HOPS {
            triples.push(Triple {
                subject: entities[members[hop]].clone(),
                relation: RELATIONS[rels[hop]].to_owned(),
                object: entities[members[hop + 1]].clone(),
            });
        }
    }

    // (entity, relation) slots occupied by real facts. A distractor may not
    // reuse one in either of its entity slots: combined with one sentence
    // per document, no document except hop j's own fact ever contains hop
    // j's full query token set, so its document always ranks first.
    let pair_taken: HashSet<(&str, &str)> =
        triples.iter().map(|t| (t.subject.as_str(), t.relation.as_str())).collect();

    let mut documents: Vec<Document> = triples
        .iter()
        .enumerate()
        .map(|(i, t)| Document { id: i as u32, text: fact_sentence(t) })
        .collect();
    let mut emitted = 0;
    while emitted < distractor_count {
        let s = &entities[rng.gen_range(0..n_entities)];
        let o = &entities[rng.gen_range(0..n_entities)];
        let r = RELATIONS[rng.gen_range(0..RELATIONS.len())];
        if s == o
            || pair_taken.contains(&(s.as_str(), r))
            || pair_taken.contains(&(o.as_str(), r))
        {
            continue;
        }
        documents.push(Document {
            id: (triples.len() + emitted) as u32,
            text: distractor_sentence(s, r, o),
        });
        emitted += 1;
    }

    Ok(WorldSpec {
        seed,
        entities,
        relations: RELATIONS.iter().map(|r| (*r).to_owned()).collect(),
        triples,
        documents,
        distractor_count,
    })
}

impl WorldSpec {
    /// Chains as slices of [`CHAIN_HOPS`] consecutive triples.
    pub fn chains(&self) -> impl Iterator<Item = &[Triple]> {
        self.triples.chunks(CHAIN_HOPS)
    }

    pub fn chain_count(&self) -> usize {
        self.triples.len() / CHAIN_HOPS
    }
}

/// Samples an `hops`-hop question: a uniform chain, its last `hops` edges.
///
/// Taking a chain suffix keeps the gold answer at a chain end, where it is
/// the object of exactly one fact — so the gold string appears in exactly
/// one document's fact sentence.
pub fn sample_question(
    world: &WorldSpec,
    hops: usize,
    rng_seed: u64,
) -> Result<Question, WorldError> {
    if hops == 0 || hops > CHAIN_HOPS {
        return Err(WorldError::BadHopCount(hops));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let chain_idx = rng.gen_range(0..world.chain_count());
    let chain = &world.triples[chain_idx * CHAIN_HOPS..(chain_idx + 1) * CHAIN_HOPS];
    let sub = chain[CHAIN_HOPS - hops..].to_vec();

    let mut text = String::from("What is");
    for (i, t) in sub.iter().enumerate().rev() {
        text.push_str(&format!(" the {} of", t.relation));
        if i == 0 {
            text.push_str(&format!(" {}?", t.subject));
        }
    }
    let gold_answer = sub.last().expect("hops >= 1").object.clone();
    Ok(Question {
        question_id: format!("q{rng_seed:016x}-c{chain_idx}-h{hops}"),
        text,
        hops: sub,
        gold_answer,
    })
}

/// Ranks documents by `|distinct query tokens found in doc| / |distinct
/// query tokens|`, descending, ties by ascending doc id; keeps the top `k`.
/// Documents sharing no token are omitted, so an empty query returns
/// nothing.
pub fn retrieve(world: &WorldSpec, query: &str, k: usize) -> Vec<RetrievedDoc> {
    let q_tokens: HashSet<String> = words(query).into_iter().collect();
    if q_tokens.is_empty() || k == 0 {
        return Vec::new();
    }
    let mut hits = Vec::new();
    for doc in &world.documents {
        let d_tokens: HashSet<String> = words(&doc.text).into_iter().collect();
        let shared = q_tokens.iter().filter(|t| d_tokens.contains(*t)).count();
        if shared > 0 {
            hits.push(RetrievedDoc {
                doc_id: doc.id,
                score: shared as f64 / q_tokens.len() as f64,
                text: doc.text.clone(),
            });
        }
    }
    hits.sort_by(|a, b| {
        b.score.partial_cmp(&a.score).expect("scores are finite").then(a.doc_id.cmp(&b.doc_id))
    });
    hits.truncate(k);
    hits
}

/// Exact sufficiency: 1 iff every hop's fact sentence appears in some
/// `<information>` segment of the reasoning trace. Answer segments are
/// ignored, so callers may pass either a full trajectory or a stripped one.
pub fn oracle_sufficient(q: &Question, rd: &Trajectory) -> bool {
    q.hops.iter().all(|hop| {
        let sentence = fact_sentence(hop);
        rd.segments
            .iter()
            .any(|s| s.kind == SegmentKind::Information && s.text.contains(&sentence))
    })
}

/// Earliest retrieval index (1-based) at which the trajectory prefix
/// becomes sufficient, or `None` if it never does.
pub fn sufficiency_point(q: &Question, t: &Trajectory) -> Option<usize> {
    (1..=t.retrieval_count()).find(|&i| {
        let prefix = t.prefix_upto_retrieval(i).expect("index is within retrieval count");
        oracle_sufficient(q, &prefix)
    })
}

/// A search query that deliberately targets no hop of `q`: a real entity
/// and relation pair that never forms one of the question's hops.
pub fn noise_query(world: &WorldSpec, q: &Question, rng: &mut ChaCha8Rng) -> String {
    loop {
        let ent = &world.entities[rng.gen_range(0..world.entities.len())];
        let rel = RELATIONS[rng.gen_range(0..RELATIONS.len())];
        let collides =
            q.hops.iter().any(|h| h.subject == *ent && h.relation == rel);
        if !collides {
            return format!("{rel} of {ent}");
        }
    }
}
