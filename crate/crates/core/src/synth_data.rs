//! Synthetic corpora with a knowledge base and two labeling processes.
//!
//! Each document is a sequence of short clauses, one per placed entity pair:
//! `[filler*] head [template | filler] tail [filler*]`. A relation is
//! expressed by writing its template tokens between the two mentions. Human
//! annotation labels exactly the expressed relations; distant supervision
//! labels every KB relation of a placed pair, expressed or not.
//!
//! For relation `r` a clause slot draws one of three outcomes:
//! with probability `kb_dropout[r]` an expressed pair that is absent from the
//! KB (an HA label with no DS label), otherwise a KB pair that is expressed
//! with probability `expression_prob[r]`, or, when unexpressed, is still
//! placed with probability `cooccur_extra_prob[r]` (a DS-only label). The
//! expected inflation is then
//! `(1 - d) (e + (1 - e) c) / (d + (1 - d) e)`.
//!
//! Entity pairs that carry more than one KB relation are not placed.
//!
//! Slot outcomes come from shuffled decks of 100 cards per relation so the
//! realized rates track the configured ones closely even in small pools.
//!
//! Token ids: `[0, n_filler)` filler words, then one token per entity, then
//! `template_len` tokens per relation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{self, BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DocId, EntityId, EntityMentions, ExampleLabels, RelationId, Source, Target, Task};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_triples: usize,
    pub n_train_ha: usize,
    pub n_train_ds: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub expression_prob: Vec<f64>,
    pub cooccur_extra_prob: Vec<f64>,
    pub kb_dropout: Vec<f64>,
    /// Probability that a clause holds a pair with no KB relation.
    pub negative_prob: f64,
    pub min_pairs: usize,
    pub max_pairs: usize,
    pub n_filler: usize,
    pub template_len: usize,
    pub seed: u64,
}

impl GenConfig {
    /// Every relation expressed whenever placed and never placed
    /// unexpressed: inflation 1 everywhere.
    pub fn unbiased(n_entities: usize, n_relations: usize, n_triples: usize, seed: u64) -> Self {
        Self {
            n_entities,
            n_relations,
            n_triples,
            n_train_ha: 300,
            n_train_ds: 3000,
            n_dev: 200,
            n_test: 400,
            expression_prob: vec![1.0; n_relations],
            cooccur_extra_prob: vec![0.0; n_relations],
            kb_dropout: vec![0.0; n_relations],
            negative_prob: 0.25,
            min_pairs: 2,
            max_pairs: 6,
            n_filler: 20,
            template_len: 2,
            seed,
        }
    }

    /// Relation targets spaced geometrically over `[lo, hi]`, assigned to
    /// relations in a seeded random order.
    pub fn with_inflation_range(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(DataError::Config(format!("bad inflation range [{lo}, {hi}]")));
        }
        let n = self.n_relations;
        let mut targets: Vec<f64> = (0..n)
            .map(|i| {
                let f = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                lo * (hi / lo).powf(f)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_1f1a);
        targets.shuffle(&mut rng);
        self.set_targets(&targets);
        Ok(self)
    }

    /// Sets the per-relation knobs so that the expected inflation equals the
    /// given targets. Targets below 1 use KB dropout; above 1 the expression
    /// probability is lowered as far as needed to keep the co-occurrence
    /// probability at most 1.
    pub fn set_targets(&mut self, targets: &[f64]) {
        let base_e = 0.5;
        self.expression_prob.clear();
        self.cooccur_extra_prob.clear();
        self.kb_dropout.clear();
        for &t in targets {
            let (e, c, d) = if t < 1.0 {
                (1.0, 0.0, 1.0 - t)
            } else {
                let e = f64::min(base_e, 1.0 / t);
                let c = if e >= 1.0 { 0.0 } else { ((t - 1.0) * e / (1.0 - e)).min(1.0) };
                (e, c, 0.0)
            };
            self.expression_prob.push(e);
            self.cooccur_extra_prob.push(c);
            self.kb_dropout.push(d);
        }
    }

    pub fn target_inflation(&self, r: RelationId) -> f64 {
        let i = r.index();
        let (e, c, d) = (self.expression_prob[i], self.cooccur_extra_prob[i], self.kb_dropout[i]);
        (1.0 - d) * (e + (1.0 - e) * c) / (d + (1.0 - d) * e)
    }

    pub fn vocab_size(&self) -> usize {
        self.n_filler + self.n_entities + self.n_relations * self.template_len
    }

    pub fn entity_token(&self, e: EntityId) -> u32 {
        (self.n_filler + e.0 as usize) as u32
    }

    pub fn template(&self, r: RelationId) -> Vec<u32> {
        let start = self.n_filler + self.n_entities + r.index() * self.template_len;
        (start..start + self.template_len).map(|t| t as u32).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.n_entities < 2 || self.n_relations == 0 {
            return bad("need at least 2 entities and 1 relation".into());
        }
        let cap = self.n_entities * (self.n_entities - 1) * self.n_relations;
        if self.n_triples == 0 || self.n_triples > cap {
            return bad(format!("n_triples {} must be in 1..={cap}", self.n_triples));
        }
        for (name, v) in [
            ("expression_prob", &self.expression_prob),
            ("cooccur_extra_prob", &self.cooccur_extra_prob),
            ("kb_dropout", &self.kb_dropout),
        ] {
            if v.len() != self.n_relations {
                return bad(format!("{name} has {} entries for {} relations", v.len(), self.n_relations));
            }
            if let Some(p) = v.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return bad(format!("{name} entry {p} outside [0, 1]"));
            }
        }
        if self.expression_prob.iter().zip(&self.kb_dropout).any(|(e, d)| *e == 0.0 && *d == 0.0) {
            return bad("a relation with expression_prob 0 and kb_dropout 0 is never expressed".into());
        }
        if !(0.0..1.0).contains(&self.negative_prob) {
            return bad(format!("negative_prob {} outside [0, 1)", self.negative_prob));
        }
        if self.min_pairs == 0 || self.min_pairs > self.max_pairs {
            return bad(format!("pair range {}..={} invalid", self.min_pairs, self.max_pairs));
        }
        if self.n_filler == 0 || self.template_len == 0 {
            return bad("n_filler and template_len must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    triples: BTreeSet<Triple>,
    by_pair: BTreeMap<(EntityId, EntityId), BTreeSet<RelationId>>,
    by_relation: BTreeMap<RelationId, Vec<Triple>>,
}

impl KnowledgeBase {
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut kb = Self::default();
        for t in triples {
            if kb.triples.insert(t) {
                kb.by_pair.entry((t.head, t.tail)).or_default().insert(t.relation);
                kb.by_relation.entry(t.relation).or_default().push(t);
            }
        }
        kb
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    /// KB relations of an ordered entity pair.
    pub fn relations(&self, head: EntityId, tail: EntityId) -> Vec<RelationId> {
        self.by_pair
            .get(&(head, tail))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn has_pair(&self, head: EntityId, tail: EntityId) -> bool {
        self.by_pair.contains_key(&(head, tail))
    }

    fn of_relation(&self, r: RelationId) -> &[Triple] {
        self.by_relation.get(&r).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Triples of `r` whose entity pair carries no other KB relation.
    fn single_relation_triples(&self, r: RelationId) -> Vec<Triple> {
        self.of_relation(r)
            .iter()
            .filter(|t| self.by_pair[&(t.head, t.tail)].len() == 1)
            .copied()
            .collect()
    }
}

/// Uniform sample of `n_triples` distinct triples without self-loops.
/// Every relation receives at least one triple when `n_triples >= |R|`.
pub fn generate_kb(cfg: &GenConfig) -> Result<KnowledgeBase> {
    cfg.validate()?;
    let (ne, nr) = (cfg.n_entities as u64, cfg.n_relations as u64);
    let cap = ne * (ne - 1) * nr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6b62_6b62);
    let decode = |k: u64| {
        let r = k % nr;
        let pair = k / nr;
        let h = pair / (ne - 1);
        let mut t = pair % (ne - 1);
        if t >= h {
            t += 1;
        }
        Triple {
            head: EntityId(h as u32),
            relation: RelationId(r as u32),
            tail: EntityId(t as u32),
        }
    };
    let mut keys: BTreeSet<u64> = BTreeSet::new();
    if cfg.n_triples as u64 * 2 > cap {
        let mut all: Vec<u64> = (0..cap).collect();
        all.shuffle(&mut rng);
        keys.extend(all.into_iter().take(cfg.n_triples));
    } else {
        // Seed one triple per relation first so no relation is empty.
        for r in 0..nr.min(cfg.n_triples as u64) {
            let pair = rng.random_range(0..ne * (ne - 1));
            keys.insert(pair * nr + r);
        }
        while keys.len() < cfg.n_triples {
            keys.insert(rng.random_range(0..cap));
        }
    }
    Ok(KnowledgeBase::from_triples(keys.into_iter().map(decode)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthDocument {
    pub id: DocId,
    pub tokens: Vec<u32>,
    pub entities: Vec<EntityMentions>,
    /// Ordered entity pairs placed together in a clause.
    pub pairs: Vec<(EntityId, EntityId)>,
    pub expressed: BTreeSet<Triple>,
}

impl SynthDocument {
    pub fn mentions(&self, e: EntityId) -> Option<&EntityMentions> {
        self.entities.iter().find(|m| m.entity == e)
    }

    fn expressed_for(&self, h: EntityId, t: EntityId) -> BTreeSet<RelationId> {
        self.expressed
            .iter()
            .filter(|x| x.head == h && x.tail == t)
            .map(|x| x.relation)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub doc: DocId,
    pub head: EntityId,
    pub tail: EntityId,
    pub source: Source,
    pub target: Target,
}

impl LabeledExample {
    pub fn labels(&self) -> ExampleLabels {
        ExampleLabels {
            source: self.source,
            target: self.target.clone(),
        }
    }
}

/// Shuffled deck of 100 Bernoulli outcomes with the configured rate; the
/// fractional part of `100 p` is resolved by a coin per refill.
struct Deck {
    p: f64,
    cards: Vec<bool>,
}

impl Deck {
    const SIZE: usize = 100;

    fn new(p: f64) -> Self {
        Self { p, cards: Vec::new() }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> bool {
        if self.p <= 0.0 {
            return false;
        }
        if self.p >= 1.0 {
            return true;
        }
        if self.cards.is_empty() {
            let x = self.p * Self::SIZE as f64;
            let mut k = x.floor() as usize;
            if rng.random_bool(x - x.floor()) {
                k += 1;
            }
            self.cards = (0..Self::SIZE).map(|i| i < k).collect();
            self.cards.shuffle(rng);
        }
        self.cards.pop().expect("refilled")
    }
}

struct RelationDeck {
    n: usize,
    cards: Vec<usize>,
}

impl RelationDeck {
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> RelationId {
        if self.cards.is_empty() {
            self.cards = (0..self.n).collect();
            self.cards.shuffle(rng);
        }
        RelationId(self.cards.pop().expect("refilled") as u32)
    }
}

struct Decks {
    relation: RelationDeck,
    negative: Deck,
    dropout: Vec<Deck>,
    express: Vec<Deck>,
    extra: Vec<Deck>,
}

impl Decks {
    fn new(cfg: &GenConfig) -> Self {
        let per = |v: &[f64]| v.iter().map(|p| Deck::new(*p)).collect();
        Self {
            relation: RelationDeck {
                n: cfg.n_relations,
                cards: Vec::new(),
            },
            negative: Deck::new(cfg.negative_prob),
            dropout: per(&cfg.kb_dropout),
            express: per(&cfg.expression_prob),
            extra: per(&cfg.cooccur_extra_prob),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub kb: KnowledgeBase,
    pub train_ha: Vec<SynthDocument>,
    pub train_ds: Vec<SynthDocument>,
    pub dev: Vec<SynthDocument>,
    pub test: Vec<SynthDocument>,
}

impl Corpus {
    pub fn all_documents(&self) -> impl Iterator<Item = &SynthDocument> {
        self.train_ha.iter().chain(&self.train_ds).chain(&self.dev).chain(&self.test)
    }
}

struct Clause {
    head: EntityId,
    tail: EntityId,
    expressed: Option<RelationId>,
}

fn random_pair(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> (EntityId, EntityId) {
    let h = rng.random_range(0..cfg.n_entities as u32);
    let mut t = rng.random_range(0..cfg.n_entities as u32 - 1);
    if t >= h {
        t += 1;
    }
    (EntityId(h), EntityId(t))
}

/// `pools[r]` lists the triples a clause of relation `r` may place.
fn draw_clause(
    cfg: &GenConfig,
    kb: &KnowledgeBase,
    pools: &[Vec<Triple>],
    decks: &mut Decks,
    rng: &mut ChaCha8Rng,
) -> Clause {
    const TRIES: usize = 1000;
    let negative = |rng: &mut ChaCha8Rng| {
        for _ in 0..TRIES {
            let (h, t) = random_pair(cfg, rng);
            if !kb.has_pair(h, t) {
                return Some(Clause {
                    head: h,
                    tail: t,
                    expressed: None,
                });
            }
        }
        None
    };
    if decks.negative.draw(rng) {
        if let Some(c) = negative(rng) {
            return c;
        }
    }
    let r = decks.relation.draw(rng);
    let i = r.index();
    if decks.dropout[i].draw(rng) {
        for _ in 0..TRIES {
            let (h, t) = random_pair(cfg, rng);
            if !kb.has_pair(h, t) {
                return Clause {
                    head: h,
                    tail: t,
                    expressed: Some(r),
                };
            }
        }
    }
    let pool = &pools[i];
    if !pool.is_empty() {
        let x = pool[rng.random_range(0..pool.len())];
        if decks.express[i].draw(rng) {
            return Clause {
                head: x.head,
                tail: x.tail,
                expressed: Some(r),
            };
        }
        if decks.extra[i].draw(rng) {
            return Clause {
                head: x.head,
                tail: x.tail,
                expressed: None,
            };
        }
    }
    negative(rng).unwrap_or_else(|| {
        let (h, t) = random_pair(cfg, rng);
        Clause {
            head: h,
            tail: t,
            expressed: None,
        }
    })
}

fn generate_document(
    id: DocId,
    cfg: &GenConfig,
    kb: &KnowledgeBase,
    pools: &[Vec<Triple>],
    decks: &mut Decks,
    rng: &mut ChaCha8Rng,
) -> SynthDocument {
    let n_pairs = rng.random_range(cfg.min_pairs..=cfg.max_pairs);
    let mut tokens = Vec::new();
    let mut mentions: BTreeMap<EntityId, Vec<(usize, usize)>> = BTreeMap::new();
    let mut pairs = Vec::new();
    let mut placed = HashSet::new();
    let mut expressed = BTreeSet::new();
    let filler = |rng: &mut ChaCha8Rng| rng.random_range(0..cfg.n_filler as u32);

    while pairs.len() < n_pairs {
        let mut clause = draw_clause(cfg, kb, pools, decks, rng);
        // A pair appears in at most one clause per document.
        for _ in 0..100 {
            if !placed.contains(&(clause.head, clause.tail)) {
                break;
            }
            clause = draw_clause(cfg, kb, pools, decks, rng);
        }
        if !placed.insert((clause.head, clause.tail)) {
            break;
        }
        for _ in 0..rng.random_range(0..=2) {
            tokens.push(filler(rng));
        }
        mentions.entry(clause.head).or_default().push((tokens.len(), tokens.len()));
        tokens.push(cfg.entity_token(clause.head));
        match clause.expressed {
            Some(r) => {
                tokens.extend(cfg.template(r));
                expressed.insert(Triple {
                    head: clause.head,
                    relation: r,
                    tail: clause.tail,
                });
            }
            None => {
                for _ in 0..cfg.template_len {
                    tokens.push(filler(rng));
                }
            }
        }
        mentions.entry(clause.tail).or_default().push((tokens.len(), tokens.len()));
        tokens.push(cfg.entity_token(clause.tail));
        for _ in 0..rng.random_range(0..=2) {
            tokens.push(filler(rng));
        }
        pairs.push((clause.head, clause.tail));
    }
    SynthDocument {
        id,
        tokens,
        entities: mentions
            .into_iter()
            .map(|(e, m)| EntityMentions::new(e, m))
            .collect(),
        pairs,
        expressed,
    }
}

/// Documents for all four splits; ids are consecutive across splits.
pub fn generate_corpus(kb: &KnowledgeBase, cfg: &GenConfig) -> Result<Corpus> {
    cfg.validate()?;
    if kb.is_empty() {
        return Err(DataError::Config("knowledge base is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00d0_c5d0_c5);
    let mut decks = Decks::new(cfg);
    // Pairs with several KB relations are left out of the text so that each
    // placed KB pair contributes exactly one DS label.
    let pools: Vec<Vec<Triple>> = (0..cfg.n_relations as u32)
        .map(|r| {
            let clean = kb.single_relation_triples(RelationId(r));
            if clean.is_empty() {
                kb.of_relation(RelationId(r)).to_vec()
            } else {
                clean
            }
        })
        .collect();
    let mut next = 0u32;
    let mut split = |n: usize, decks: &mut Decks, rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|_| {
                let id = DocId(next);
                next += 1;
                generate_document(id, cfg, kb, &pools, decks, rng)
            })
            .collect::<Vec<_>>()
    };
    let train_ha = split(cfg.n_train_ha, &mut decks, &mut rng);
    let train_ds = split(cfg.n_train_ds, &mut decks, &mut rng);
    let dev = split(cfg.n_dev, &mut decks, &mut rng);
    let test = split(cfg.n_test, &mut decks, &mut rng);
    Ok(Corpus {
        kb: kb.clone(),
        train_ha,
        train_ds,
        dev,
        test,
    })
}

pub fn generate(cfg: &GenConfig) -> Result<Corpus> {
    let kb = generate_kb(cfg)?;
    generate_corpus(&kb, cfg)
}

/// Noise-free labels: the expressed relations of each placed pair. The
/// sentence task emits one example per expressed relation, or an NA example
/// when a pair expresses none.
pub fn ha_label(doc: &SynthDocument, task: Task) -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for &(h, t) in &doc.pairs {
        push_labels(&mut out, doc.id, h, t, Source::Human, doc.expressed_for(h, t), task);
    }
    out
}

/// Every KB relation of each placed pair, regardless of expression.
pub fn ds_label(doc: &SynthDocument, kb: &KnowledgeBase, task: Task) -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for &(h, t) in &doc.pairs {
        let rels = kb.relations(h, t).into_iter().collect();
        push_labels(&mut out, doc.id, h, t, Source::Distant, rels, task);
    }
    out
}

fn push_labels(
    out: &mut Vec<LabeledExample>,
    doc: DocId,
    head: EntityId,
    tail: EntityId,
    source: Source,
    rels: BTreeSet<RelationId>,
    task: Task,
) {
    let mk = |target| LabeledExample {
        doc,
        head,
        tail,
        source,
        target,
    };
    match task {
        Task::Document => out.push(mk(Target::Document { relations: rels })),
        Task::Sentence if rels.is_empty() => out.push(mk(Target::Sentence { relation: None })),
        Task::Sentence => out.extend(rels.into_iter().map(|r| mk(Target::Sentence { relation: Some(r) }))),
    }
}

/// Per-relation label counts of a labeled document set, for `bias_stats`.
pub fn label_counts(
    n_texts: usize,
    examples: &[LabeledExample],
    n_relations: usize,
) -> crate::bias_stats::LabelCounts {
    crate::bias_stats::LabelCounts::tally(n_texts, examples.iter().flat_map(|e| e.target.relations()))
        .with_relations((0..n_relations as u32).map(RelationId))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub documents: Vec<SynthDocument>,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn document(&self, id: DocId) -> Option<&SynthDocument> {
        self.documents
            .binary_search_by_key(&id, |d| d.id)
            .ok()
            .map(|i| &self.documents[i])
            .or_else(|| self.documents.iter().find(|d| d.id == id))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record {
    Document(SynthDocument),
    Example(LabeledExample),
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum RecordRef<'a> {
    Document(&'a SynthDocument),
    Example(&'a LabeledExample),
}

#[derive(Serialize, Deserialize)]
struct TripleRecord {
    head: EntityId,
    relation: RelationId,
    tail: EntityId,
}

/// JSON Lines: all documents, then all examples.
pub fn write_records<W: Write>(mut w: W, data: &Dataset) -> io::Result<()> {
    let line = |w: &mut W, r: RecordRef| -> io::Result<()> {
        serde_json::to_writer(&mut *w, &r)?;
        w.write_all(b"\n")
    };
    for d in &data.documents {
        line(&mut w, RecordRef::Document(d))?;
    }
    for e in &data.examples {
        line(&mut w, RecordRef::Example(e))?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Dataset> {
    let mut data = Dataset::default();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| DataError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        match rec {
            Record::Document(d) => data.documents.push(d),
            Record::Example(e) => data.examples.push(e),
        }
    }
    Ok(data)
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(f);
    write_records(&mut w, data).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    read_records(io::BufReader::new(f))
}

pub fn write_kb(path: &Path, kb: &KnowledgeBase) -> Result<()> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(f);
    for t in kb.triples() {
        let rec = TripleRecord {
            head: t.head,
            relation: t.relation,
            tail: t.tail,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_kb(path: &Path) -> Result<KnowledgeBase> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let mut triples = Vec::new();
    for (i, line) in io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TripleRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        triples.push(Triple {
            head: r.head,
            relation: r.relation,
            tail: r.tail,
        });
    }
    Ok(KnowledgeBase::from_triples(triples))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchMode {
    /// Every batch is half HA, half DS.
    #[default]
    Mixed,
    /// Pure HA and pure DS batches, strictly alternating.
    Alternate,
}

impl std::str::FromStr for BatchMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mixed" => Ok(BatchMode::Mixed),
            "alternate" => Ok(BatchMode::Alternate),
            other => Err(format!("unknown batch mode '{other}' (expected mixed|alternate)")),
        }
    }
}

/// One batch: `(source, index into that source's pool)`.
pub type Batch = Vec<(Source, usize)>;

/// Endless shuffled stream over `0..n`, reshuffled on every pass.
struct Stream {
    n: usize,
    order: Vec<usize>,
    passes: usize,
}

impl Stream {
    fn new(n: usize) -> Self {
        Self {
            n,
            order: Vec::new(),
            passes: 0,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.order.is_empty() {
            self.order = (0..self.n).rev().collect();
            self.order.shuffle(rng);
            self.passes += 1;
        }
        self.order.pop().expect("non-empty pool")
    }
}

/// Stateful batch builder. An epoch is one pass over the larger pool; the
/// smaller pool is recycled with a fresh shuffle whenever it runs out.
pub struct BatchSampler {
    rng: ChaCha8Rng,
    ha: Option<Stream>,
    ds: Option<Stream>,
    batch_size: usize,
    mode: BatchMode,
}

impl BatchSampler {
    pub fn new(n_ha: usize, n_ds: usize, batch_size: usize, mode: BatchMode, seed: u64) -> Result<Self> {
        if n_ha == 0 || n_ds == 0 {
            return Err(DataError::Config("both HA and DS pools must be non-empty".into()));
        }
        if batch_size == 0 || (mode == BatchMode::Mixed && batch_size % 2 == 1) {
            return Err(DataError::Config(format!(
                "batch_size {batch_size} must be a positive even number in mixed mode"
            )));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            ha: Some(Stream::new(n_ha)),
            ds: Some(Stream::new(n_ds)),
            batch_size,
            mode,
        })
    }

    /// Batches from a single pool.
    pub fn single(source: Source, n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(DataError::Config(format!("empty {source} pool or zero batch size")));
        }
        let stream = Some(Stream::new(n));
        let (ha, ds) = match source {
            Source::Human => (stream, None),
            Source::Distant => (None, stream),
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            ha,
            ds,
            batch_size,
            mode: BatchMode::Alternate,
        })
    }

    fn take(&mut self, source: Source, k: usize) -> Batch {
        let stream = match source {
            Source::Human => self.ha.as_mut(),
            Source::Distant => self.ds.as_mut(),
        }
        .expect("pool present");
        (0..k).map(|_| (source, stream.next(&mut self.rng))).collect()
    }

    pub fn next_epoch(&mut self) -> Vec<Batch> {
        let n_ha = self.ha.as_ref().map_or(0, |s| s.n);
        let n_ds = self.ds.as_ref().map_or(0, |s| s.n);
        let bs = self.batch_size;
        match (n_ha > 0, n_ds > 0) {
            (true, false) => (0..n_ha.div_ceil(bs)).map(|_| self.take(Source::Human, bs)).collect(),
            (false, true) => (0..n_ds.div_ceil(bs)).map(|_| self.take(Source::Distant, bs)).collect(),
            _ => match self.mode {
                BatchMode::Mixed => {
                    let half = bs / 2;
                    (0..n_ha.max(n_ds).div_ceil(half))
                        .map(|_| {
                            let mut b = self.take(Source::Human, half);
                            b.extend(self.take(Source::Distant, half));
                            b
                        })
                        .collect()
                }
                BatchMode::Alternate => {
                    let rounds = n_ha.max(n_ds).div_ceil(bs);
                    let mut out = Vec::with_capacity(2 * rounds);
                    for _ in 0..rounds {
                        out.push(self.take(Source::Human, bs));
                        out.push(self.take(Source::Distant, bs));
                    }
                    out
                }
            },
        }
    }
}

/// First epoch of batches over two pools of the given sizes.
pub fn build_batches(n_ha: usize, n_ds: usize, batch_size: usize, mode: BatchMode, seed: u64) -> Result<Vec<Batch>> {
    Ok(BatchSampler::new(n_ha, n_ds, batch_size, mode, seed)?.next_epoch())
}
