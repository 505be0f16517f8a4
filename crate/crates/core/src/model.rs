//! Encoder plus output layer as one parameter set, with scoring helpers and
//! checkpoint metadata.
//!
//! Checkpoints use the [`crate::params`] format. Besides the learned tensors
//! they hold scalar `meta.*` entries describing the architecture and the
//! tuned decision threshold, so a checkpoint is self-describing.

use std::collections::BTreeMap;
use std::path::Path;

use crate::encoder::{encode_pair, EncoderConfig, EncoderError, EncoderVars, EntityEncoderKind};
use crate::ndgrad::{Graph, Tensor};
use crate::output_layer::{forward, Net, OutputConfig, OutputVars, PredictionVars};
use crate::params::{Bound, CheckpointError, ParamStore};
use crate::synth_data::{Dataset, SynthDocument};
use crate::types::{DocId, EntityId, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub nets: Vec<Net>,
    pub params: ParamStore,
    /// Decision threshold on `p_ha` for the document task.
    pub threshold: f64,
}

/// Candidate entity pair of a document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey {
    pub doc: DocId,
    pub head: EntityId,
    pub tail: EntityId,
}

impl Model {
    pub fn init(config: ModelConfig, nets: &[Net], seed: u64) -> Self {
        let mut params = ParamStore::new();
        config.encoder.init_params(&mut params, seed);
        config.output.init_params(&mut params, nets, seed);
        Self {
            config,
            nets: nets.to_vec(),
            params,
            threshold: 0.5,
        }
    }

    pub fn prefixes(&self) -> Vec<&'static str> {
        let mut p = vec!["enc."];
        p.extend(self.nets.iter().map(|n| n.prefix()));
        p
    }

    /// Forward pass for one entity pair on an existing graph.
    pub fn forward_pair(
        &self,
        g: &mut Graph,
        enc: &EncoderVars,
        out: &OutputVars,
        doc: &SynthDocument,
        head: EntityId,
        tail: EntityId,
    ) -> Result<PredictionVars, EncoderError> {
        let (hm, tm) = match (doc.mentions(head), doc.mentions(tail)) {
            (Some(h), Some(t)) => (h, t),
            _ => {
                return Err(EncoderError::InvalidMentions(format!(
                    "document {} lacks entity {} or {}",
                    doc.id.0, head.0, tail.0
                )))
            }
        };
        let e = encode_pair(g, enc, &self.config.encoder, &doc.tokens, hm, tm)?;
        Ok(forward(g, e.head, e.tail, out, &self.config.output)?)
    }

    /// Binds all parameters as constants for inference.
    pub fn bind_frozen(&self, g: &mut Graph) -> Result<(Bound, EncoderVars, OutputVars), EncoderError> {
        let bound = self.params.bind_constants(g, &self.prefixes());
        let enc = EncoderVars::from_bound(g, &bound)?;
        let out = OutputVars::from_bound(&bound);
        Ok((bound, enc, out))
    }

    /// `p_ha` for one pair.
    pub fn score(&self, doc: &SynthDocument, head: EntityId, tail: EntityId) -> Result<Vec<f64>, EncoderError> {
        let mut g = Graph::new();
        let (_, enc, out) = self.bind_frozen(&mut g)?;
        let pred = self.forward_pair(&mut g, &enc, &out, doc, head, tail)?;
        Ok(g.value(pred.p_ha.expect("HA-Net bound")).data().to_vec())
    }

    /// Scores every distinct `(doc, head, tail)` among the dataset's
    /// examples, in first-appearance order. Work is split across threads;
    /// the result does not depend on the thread count.
    pub fn score_dataset(&self, data: &Dataset) -> Result<Vec<(PairKey, Vec<f64>)>, EncoderError> {
        let docs: BTreeMap<DocId, &SynthDocument> = data.documents.iter().map(|d| (d.id, d)).collect();
        let mut seen = std::collections::HashSet::new();
        let keys: Vec<PairKey> = data
            .examples
            .iter()
            .map(|e| PairKey {
                doc: e.doc,
                head: e.head,
                tail: e.tail,
            })
            .filter(|k| seen.insert(*k))
            .collect();
        if let Some(k) = keys.iter().find(|k| !docs.contains_key(&k.doc)) {
            return Err(EncoderError::InvalidMentions(format!("example refers to unknown document {}", k.doc.0)));
        }
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
        let chunk = keys.len().div_ceil(threads.max(1)).max(1);
        let results: Vec<Result<Vec<Vec<f64>>, EncoderError>> = std::thread::scope(|s| {
            let handles: Vec<_> = keys
                .chunks(chunk)
                .map(|part| {
                    let docs = &docs;
                    s.spawn(move || {
                        let mut g = Graph::new();
                        let (_, enc, out) = self.bind_frozen(&mut g)?;
                        let base = g.len();
                        let mut scores = Vec::with_capacity(part.len());
                        for k in part {
                            let pred = self.forward_pair(&mut g, &enc, &out, docs[&k.doc], k.head, k.tail)?;
                            scores.push(g.value(pred.p_ha.expect("HA-Net bound")).data().to_vec());
                            g.truncate(base);
                        }
                        Ok(scores)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("scoring thread panicked")).collect()
        });
        let mut out = Vec::with_capacity(keys.len());
        let mut it = keys.into_iter();
        for part in results {
            for scores in part? {
                out.push((it.next().expect("one score per key"), scores));
            }
        }
        Ok(out)
    }

    fn meta(&self) -> Vec<(&'static str, f64)> {
        let e = &self.config.encoder;
        let o = &self.config.output;
        let net_mask = self.nets.iter().map(|n| 1u32 << (*n as u32)).sum::<u32>();
        vec![
            ("meta.vocab_size", e.vocab_size as f64),
            ("meta.hidden", e.hidden as f64),
            ("meta.attention_width", e.attention_width as f64),
            ("meta.context_window", e.context_window as f64),
            ("meta.cross_attention", f64::from(u8::from(e.kind == EntityEncoderKind::CrossAttention))),
            ("meta.score_with_projected", f64::from(u8::from(e.score_with_projected))),
            ("meta.n_relations", o.n_relations as f64),
            ("meta.document_task", f64::from(u8::from(o.task == Task::Document))),
            ("meta.sanity_bound", o.sanity_bound),
            ("meta.nets", net_mask as f64),
            ("meta.threshold", self.threshold),
        ]
    }

    pub fn to_store(&self) -> ParamStore {
        let mut s = self.params.clone();
        for (k, v) in self.meta() {
            s.insert(k, Tensor::scalar(v));
        }
        s
    }

    pub fn from_store(mut store: ParamStore) -> Result<Self, CheckpointError> {
        let mut take = |k: &str| -> Result<f64, CheckpointError> {
            let v = store
                .get(k)
                .filter(|t| t.len() == 1)
                .map(|t| t.data()[0])
                .ok_or_else(|| CheckpointError::Malformed(format!("missing scalar '{k}'")))?;
            store.remove(k);
            Ok(v)
        };
        let vocab_size = take("meta.vocab_size")? as usize;
        let hidden = take("meta.hidden")? as usize;
        let attention_width = take("meta.attention_width")? as usize;
        let context_window = take("meta.context_window")? as usize;
        let cross = take("meta.cross_attention")? != 0.0;
        let score_with_projected = take("meta.score_with_projected")? != 0.0;
        let n_relations = take("meta.n_relations")? as usize;
        let doc_task = take("meta.document_task")? != 0.0;
        let sanity_bound = take("meta.sanity_bound")?;
        let mask = take("meta.nets")? as u32;
        let threshold = take("meta.threshold")?;
        let config = ModelConfig {
            encoder: EncoderConfig {
                vocab_size,
                hidden,
                attention_width,
                context_window,
                kind: if cross {
                    EntityEncoderKind::CrossAttention
                } else {
                    EntityEncoderKind::Average
                },
                score_with_projected,
            },
            output: OutputConfig {
                hidden,
                n_relations,
                task: if doc_task { Task::Document } else { Task::Sentence },
                sanity_bound,
            },
        };
        let nets: Vec<Net> = Net::ALL.into_iter().filter(|n| mask & (1 << (*n as u32)) != 0).collect();
        for n in &nets {
            for suffix in ["w", "b"] {
                let name = format!("{}{suffix}", n.prefix());
                if !store.contains(&name) {
                    return Err(CheckpointError::Malformed(format!("missing tensor '{name}'")));
                }
            }
        }
        if !store.contains("enc.embed") {
            return Err(CheckpointError::Malformed("missing tensor 'enc.embed'".into()));
        }
        Ok(Self {
            config,
            nets,
            params: store,
            threshold,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        self.to_store().save(path)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_store(ParamStore::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth_data::{generate, ha_label, GenConfig};

    fn tiny() -> (GenConfig, ModelConfig) {
        let mut g = GenConfig::unbiased(20, 3, 30, 1);
        g.n_train_ha = 5;
        g.n_train_ds = 5;
        g.n_dev = 5;
        g.n_test = 5;
        let mut enc = EncoderConfig::new(g.vocab_size(), 4);
        enc.context_window = 1;
        let out = OutputConfig::new(4, 3, Task::Document);
        (g, ModelConfig { encoder: enc, output: out })
    }

    #[test]
    fn checkpoint_round_trip_keeps_config_and_scores() {
        let (g, mc) = tiny();
        let corpus = generate(&g).unwrap();
        let mut m = Model::init(mc, &Net::ALL, 3);
        m.threshold = 0.37;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back, m);
        let d = &corpus.test[0];
        let (h, t) = d.pairs[0];
        assert_eq!(back.score(d, h, t).unwrap(), m.score(d, h, t).unwrap());
    }

    #[test]
    fn dataset_scores_match_single_scores() {
        let (g, mc) = tiny();
        let corpus = generate(&g).unwrap();
        let m = Model::init(mc, &[Net::Ha], 4);
        let data = Dataset {
            documents: corpus.dev.clone(),
            examples: corpus.dev.iter().flat_map(|d| ha_label(d, Task::Document)).collect(),
        };
        let scored = m.score_dataset(&data).unwrap();
        assert_eq!(scored.len(), data.examples.len());
        for (k, s) in &scored {
            let d = data.documents.iter().find(|d| d.id == k.doc).unwrap();
            assert_eq!(&m.score(d, k.head, k.tail).unwrap(), s);
        }
    }
}
