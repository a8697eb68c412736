//! Synthetic fact world: a tiny closed universe of entities linked by
//! relations, rendered as a retrievable corpus plus single-hop and two-hop
//! questions whose answers never appear in the question itself. Includes a
//! brute-force oracle and a scripted expert used to prove every question is
//! answerable through the real rollout engine.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::Document;
use crate::rollout::{PASSAGE_SEPARATOR, PROMPT_TEMPLATE, RETHINK_TEXT};
use crate::vocab::Vocab;

/// One (head, relation, tail) triple. Exactly one tail exists per
/// (head, relation) pair, so chains resolve uniquely.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub head: String,
    pub rel: String,
    pub tail: String,
}

/// One question with its accepted answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub question: String,
    #[serde(rename = "golden_answers")]
    pub golds: Vec<String>,
    pub hops: u8,
}

/// A complete generated world: entities, relations, the fact table, one
/// document per fact, and the question set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactWorld {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub facts: Vec<Fact>,
    pub docs: Vec<Document>,
    pub qa: Vec<QAItem>,
}

const CONSONANTS: [char; 14] = ['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

/// Relation vocabulary; hyphenated so each relation is a single token.
const RELATION_POOL: [&str; 8] = [
    "capital-of",
    "located-in",
    "works-for",
    "friend-of",
    "part-of",
    "leader-of",
    "made-in",
    "next-to",
];

/// Question words; assigned per relation, alternating.
const WH_WORDS: [&str; 2] = ["what", "who"];

/// Tail-pool size per relation and the weights of each pool slot. A skewed
/// pool keeps the answer distribution concentrated enough that partial
/// knowledge (guessing a relation's most common tail) earns intermediate
/// reward, while staying far below a ceiling that would make retrieval
/// unnecessary.
const TAIL_POOL: usize = 4;
const TAIL_WEIGHTS: [u32; TAIL_POOL] = [6, 4, 3, 2];

/// Words the generator must never use as entity names: everything that
/// already has a meaning to the prompt, the rethink text, questions, or
/// passage rendering.
fn reserved_words() -> HashSet<String> {
    let mut set: HashSet<String> = HashSet::new();
    for src in [PROMPT_TEMPLATE, RETHINK_TEXT, PASSAGE_SEPARATOR, ":"] {
        for w in src.split_whitespace() {
            set.insert(w.to_string());
        }
    }
    for w in WH_WORDS {
        set.insert(w.to_string());
    }
    for r in RELATION_POOL {
        set.insert(r.to_string());
    }
    set
}

fn gen_entity_name<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut name = String::new();
    for _ in 0..syllables {
        name.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
        name.push(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    name
}

/// Weighted draw from a relation's tail pool.
fn draw_tail<R: Rng>(pool: &[String], rng: &mut R) -> String {
    let total: u32 = TAIL_WEIGHTS[..pool.len()].iter().sum();
    let mut roll = rng.gen_range(0..total);
    for (tail, &w) in pool.iter().zip(&TAIL_WEIGHTS) {
        if roll < w {
            return tail.clone();
        }
        roll -= w;
    }
    pool.last().expect("pool is never empty").clone()
}

/// Generates a world deterministically from a seed.
///
/// Every (entity, relation) pair gets exactly one fact, rendered as one
/// document "head rel tail" titled by its head entity. Single-hop questions
/// read "wh rel head" and are answered by that fact's tail; two-hop
/// questions read "wh rel2 rel1 head" and require composing two facts whose
/// answer never shares a document with the question's head entity.
pub fn gen_world(
    seed: u64,
    n_entities: usize,
    n_relations: usize,
    n_single: usize,
    n_multi: usize,
) -> Result<FactWorld> {
    if n_entities < 2 || n_relations == 0 || n_single == 0 {
        return Err(Error::World("need at least 2 entities, 1 relation and 1 single-hop item".into()));
    }
    if n_relations > RELATION_POOL.len() {
        return Err(Error::World(format!(
            "at most {} relations available, {n_relations} requested",
            RELATION_POOL.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let reserved = reserved_words();

    let mut entities: Vec<String> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut attempts = 0;
    while entities.len() < n_entities {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::World("entity name space exhausted".into()));
        }
        let name = gen_entity_name(&mut rng);
        if reserved.contains(&name) || !seen.insert(name.clone()) {
            continue;
        }
        entities.push(name);
    }
    let relations: Vec<String> = RELATION_POOL[..n_relations].iter().map(|s| s.to_string()).collect();

    // Per-relation tail pools: a small, skewed set of candidate tails.
    let mut pools: Vec<Vec<String>> = Vec::new();
    for _ in &relations {
        let mut pool = entities.clone();
        pool.shuffle(&mut rng);
        pool.truncate(TAIL_POOL.min(entities.len()));
        pools.push(pool);
    }

    let mut facts = Vec::new();
    let mut fact_map: HashMap<(String, String), String> = HashMap::new();
    let mut linked: HashSet<(String, String)> = HashSet::new();
    for head in &entities {
        for (ri, rel) in relations.iter().enumerate() {
            let mut tail = draw_tail(&pools[ri], &mut rng);
            if tail == *head {
                // A self-loop would put the answer inside the question; rotate
                // to the next pool entry instead.
                let at = pools[ri].iter().position(|t| t == &tail).expect("tail from pool");
                tail = pools[ri][(at + 1) % pools[ri].len()].clone();
                if tail == *head {
                    return Err(Error::World("tail pool too small to avoid self-loops".into()));
                }
            }
            fact_map.insert((head.clone(), rel.clone()), tail.clone());
            linked.insert((head.clone(), tail.clone()));
            facts.push(Fact { head: head.clone(), rel: rel.clone(), tail });
        }
    }

    let docs: Vec<Document> = facts
        .iter()
        .enumerate()
        .map(|(i, f)| Document {
            id: format!("f{i:04}"),
            title: f.head.clone(),
            text: format!("{} {} {}", f.head, f.rel, f.tail),
        })
        .collect();

    let wh_for = |ri: usize| WH_WORDS[ri % WH_WORDS.len()];

    // Single-hop questions: one per sampled fact.
    let mut single_candidates: Vec<usize> = (0..facts.len()).collect();
    single_candidates.shuffle(&mut rng);
    if single_candidates.len() < n_single {
        return Err(Error::World(format!(
            "only {} single-hop candidates for {n_single} requested",
            single_candidates.len()
        )));
    }
    let mut qa = Vec::new();
    for &fi in single_candidates.iter().take(n_single) {
        let f = &facts[fi];
        let ri = relations.iter().position(|r| r == &f.rel).expect("relation exists");
        qa.push(QAItem {
            question: format!("{} {} {}", wh_for(ri), f.rel, f.head),
            golds: vec![f.tail.clone()],
            hops: 1,
        });
    }

    // Two-hop questions: compose two facts; reject any chain whose final
    // answer shares a document with the question's head entity, so a single
    // retrieval can never surface the answer.
    let mut two_candidates = Vec::new();
    for head in &entities {
        for r1 in &relations {
            let mid = &fact_map[&(head.clone(), r1.clone())];
            for r2 in &relations {
                let ans = &fact_map[&(mid.clone(), r2.clone())];
                if ans == head || linked.contains(&(head.clone(), ans.clone())) || linked.contains(&(ans.clone(), head.clone())) {
                    continue;
                }
                two_candidates.push((head.clone(), r1.clone(), r2.clone(), ans.clone()));
            }
        }
    }
    two_candidates.shuffle(&mut rng);
    if two_candidates.len() < n_multi {
        return Err(Error::World(format!(
            "only {} two-hop candidates for {n_multi} requested",
            two_candidates.len()
        )));
    }
    for (head, r1, r2, ans) in two_candidates.into_iter().take(n_multi) {
        let r2i = relations.iter().position(|r| r == &r2).expect("relation exists");
        qa.push(QAItem {
            question: format!("{} {} {} {}", wh_for(r2i), r2, r1, head),
            golds: vec![ans],
            hops: 2,
        });
    }

    Ok(FactWorld { entities, relations, facts, docs, qa })
}

/// Brute-force ground truth: resolves the question's fact chain by scanning
/// the fact table, one scan per hop.
pub fn oracle_solve(world: &FactWorld, qa: &QAItem) -> Result<String> {
    let words: Vec<&str> = qa.question.split_whitespace().collect();
    let lookup = |head: &str, rel: &str| -> Result<String> {
        world
            .facts
            .iter()
            .find(|f| f.head == head && f.rel == rel)
            .map(|f| f.tail.clone())
            .ok_or_else(|| Error::World(format!("no fact ({head}, {rel}) — foreign question?")))
    };
    match (qa.hops, words.as_slice()) {
        (1, [_wh, rel, head]) => lookup(head, rel),
        (2, [_wh, r2, r1, head]) => {
            let mid = lookup(head, r1)?;
            lookup(&mid, r2)
        }
        _ => Err(Error::World(format!("malformed question '{}' for hops={}", qa.question, qa.hops))),
    }
}

/// Ideal trajectory text for a question: think, search once per hop with a
/// "head relation" query, then answer the oracle result. Feeding this to the
/// rollout engine via a scripted policy must terminate by answer with
/// reward 1.
pub fn scripted_expert(world: &FactWorld, qa: &QAItem) -> Result<String> {
    let words: Vec<&str> = qa.question.split_whitespace().collect();
    let mut out = String::from("<think> let me search </think> ");
    match (qa.hops, words.as_slice()) {
        (1, [_wh, rel, head]) => {
            out.push_str(&format!("<search> {head} {rel} </search> "));
        }
        (2, [_wh, r2, r1, head]) => {
            let mid = oracle_solve(
                world,
                &QAItem { question: format!("x {r1} {head}"), golds: vec![], hops: 1 },
            )?;
            out.push_str(&format!("<search> {head} {r1} </search> "));
            out.push_str(&format!("<search> {mid} {r2} </search> "));
        }
        _ => return Err(Error::World(format!("malformed question '{}'", qa.question))),
    }
    let answer = oracle_solve(world, qa)?;
    out.push_str(&format!("<answer> {answer} </answer>"));
    Ok(out)
}

/// Writes the world's artifacts into `dir`: `corpus.jsonl` (one document per
/// line), `qa.jsonl` (question / golden_answers / hops per line),
/// `vocab.json`, and a full `world.json` dump.
pub fn write_world<P: AsRef<Path>>(dir: P, world: &FactWorld) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut corpus = String::new();
    for d in &world.docs {
        corpus.push_str(&serde_json::to_string(d)?);
        corpus.push('\n');
    }
    fs::write(dir.join("corpus.jsonl"), corpus)?;
    let mut qa = String::new();
    for q in &world.qa {
        qa.push_str(&serde_json::to_string(q)?);
        qa.push('\n');
    }
    fs::write(dir.join("qa.jsonl"), qa)?;
    fs::write(dir.join("vocab.json"), serde_json::to_string_pretty(&world_vocab(world))?)?;
    fs::write(dir.join("world.json"), serde_json::to_string_pretty(world)?)?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {what} file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("{what} line {}: {e}", i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn load_corpus<P: AsRef<Path>>(path: P) -> Result<Vec<Document>> {
    read_jsonl(path.as_ref(), "corpus")
}

pub fn load_qa<P: AsRef<Path>>(path: P) -> Result<Vec<QAItem>> {
    read_jsonl(path.as_ref(), "qa")
}

pub fn load_vocab<P: AsRef<Path>>(path: P) -> Result<Vocab> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read vocab file {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// The full token vocabulary a world needs: prompt and rethink words,
/// passage-rendering punctuation, question words, entities and relations.
pub fn world_vocab(world: &FactWorld) -> Vocab {
    let mut words: Vec<String> = Vec::new();
    for src in [PROMPT_TEMPLATE, RETHINK_TEXT, PASSAGE_SEPARATOR, ":"] {
        words.extend(src.split_whitespace().map(|w| w.to_string()));
    }
    words.extend(WH_WORDS.iter().map(|w| w.to_string()));
    words.extend(world.entities.iter().cloned());
    words.extend(world.relations.iter().cloned());
    Vocab::from_words(words.iter().map(|s| s.as_str()))
}
