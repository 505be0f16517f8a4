//! Identifiers and label types shared across the crate.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub u32);

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Which labeling process produced an example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "HA")]
    Human,
    #[serde(rename = "DS")]
    Distant,
}

impl Source {
    /// The `I_HA` indicator.
    pub fn indicator(self) -> f64 {
        match self {
            Source::Human => 1.0,
            Source::Distant => 0.0,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Human => "HA",
            Source::Distant => "DS",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// One relation per entity pair, softmax over the relations plus NA.
    Sentence,
    /// A set of relations per entity pair, independent sigmoids.
    #[default]
    Document,
}

impl Task {
    /// Width of the prediction vectors for `n_relations` relation types.
    /// Sentence-level outputs reserve class 0 for NA.
    pub fn output_width(self, n_relations: usize) -> usize {
        match self {
            Task::Sentence => n_relations + 1,
            Task::Document => n_relations,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sentence" => Ok(Task::Sentence),
            "document" => Ok(Task::Document),
            other => Err(format!("unknown task '{other}' (expected sentence|document)")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Sentence => "sentence",
            Task::Document => "document",
        })
    }
}

/// Relation target of one example.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Target {
    /// `None` is the NA class.
    Sentence { relation: Option<RelationId> },
    Document { relations: BTreeSet<RelationId> },
}

impl Target {
    pub fn task(&self) -> Task {
        match self {
            Target::Sentence { .. } => Task::Sentence,
            Target::Document { .. } => Task::Document,
        }
    }

    /// Output indices of the positive labels (NA maps to index 0 in the
    /// sentence task).
    pub fn positive_indices(&self) -> Vec<usize> {
        match self {
            Target::Sentence { relation } => vec![relation.map_or(0, |r| r.index() + 1)],
            Target::Document { relations } => relations.iter().map(|r| r.index()).collect(),
        }
    }

    /// Real relations carried by the target (NA excluded).
    pub fn relations(&self) -> Vec<RelationId> {
        match self {
            Target::Sentence { relation } => relation.iter().copied().collect(),
            Target::Document { relations } => relations.iter().copied().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExampleLabels {
    pub source: Source,
    pub target: Target,
}

/// Mentions of one entity in a document, as inclusive token ranges.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMentions {
    pub entity: EntityId,
    pub mentions: Vec<(usize, usize)>,
}

impl EntityMentions {
    pub fn new(entity: EntityId, mentions: Vec<(usize, usize)>) -> Self {
        Self { entity, mentions }
    }

    /// Sorted, deduplicated word indices covered by the mentions.
    pub fn word_indices(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.mentions.iter().flat_map(|&(s, e)| s..=e).collect();
        set.into_iter().collect()
    }

    pub fn validate(&self, doc_len: usize) -> Result<(), String> {
        if self.mentions.is_empty() {
            return Err(format!("entity {} has no mentions", self.entity.0));
        }
        for &(s, e) in &self.mentions {
            if s > e || e >= doc_len {
                return Err(format!(
                    "entity {} mention ({s}, {e}) invalid for document of length {doc_len}",
                    self.entity.0
                ));
            }
        }
        Ok(())
    }
}
