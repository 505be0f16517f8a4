//! Toy text encoder and the two entity encoders.
//!
//! The text encoder averages token embeddings over a symmetric context window
//! (`x_i`) and applies an affine projection (`x̂_i = W x_i + b`). Entity
//! encoders then turn mention spans into head and tail vectors:
//!
//! * the average encoder returns the intermediate representations `h0`, `t0`
//!   (mean over mentions of the mean over each mention span);
//! * the cross-attention encoder attends over the head's mention words with a
//!   query built from `t0` (and symmetrically for the tail), then takes the
//!   attention-weighted sum of the projected word vectors.
//!
//! Attention scores use the pre-projection `x_i` by default while the weighted
//! sum uses `x̂_i`; [`EncoderConfig::score_with_projected`] switches the
//! scores to `x̂_i`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndgrad::{GradError, Graph, Tensor, Var};
use crate::params::{Bound, ParamStore};
use crate::types::EntityMentions;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("token id {token} out of vocabulary (size {vocab})")]
    OutOfVocabulary { token: u32, vocab: usize },
    #[error("invalid mentions: {0}")]
    InvalidMentions(String),
    #[error(transparent)]
    Grad(#[from] GradError),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityEncoderKind {
    #[default]
    CrossAttention,
    Average,
}

impl std::str::FromStr for EntityEncoderKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cross_attention" | "cross-attention" => Ok(EntityEncoderKind::CrossAttention),
            "average" => Ok(EntityEncoderKind::Average),
            other => Err(format!("unknown entity encoder '{other}' (expected cross_attention|average)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    /// Width `a` of the attention networks.
    pub attention_width: usize,
    pub context_window: usize,
    pub kind: EntityEncoderKind,
    pub score_with_projected: bool,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, hidden: usize) -> Self {
        Self {
            vocab_size,
            hidden,
            attention_width: hidden,
            context_window: 1,
            kind: EntityEncoderKind::CrossAttention,
            score_with_projected: false,
        }
    }

    /// Uniform(-1/sqrt(d), 1/sqrt(d)) initialization of every encoder tensor.
    pub fn init_params(&self, store: &mut ParamStore, seed: u64) {
        let (d, a) = (self.hidden, self.attention_width);
        let bound = 1.0 / (d as f64).sqrt();
        let mut put = |name: &str, shape: &[usize]| store.init_uniform(name, name, shape, bound, seed);
        put("enc.embed", &[self.vocab_size, d]);
        put("enc.proj.w", &[d, d]);
        put("enc.proj.b", &[d]);
        if self.kind == EntityEncoderKind::CrossAttention {
            for side in ["head", "tail"] {
                put(&format!("enc.{side}.u"), &[a, d]);
                put(&format!("enc.{side}.v"), &[a, d]);
                put(&format!("enc.{side}.b"), &[a]);
                put(&format!("enc.{side}.score"), &[a]);
            }
        }
    }
}

/// Attention network of one side: `score_i = w^T tanh(U x_i + V q + b)`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    /// `U^T`, shape `[d, a]`.
    pub u_t: Var,
    pub v: Var,
    pub b: Var,
    pub score: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub embed: Var,
    /// `W^T`, shape `[d, d]`.
    pub proj_w_t: Var,
    /// Bias as a `[1, d]` row.
    pub proj_b_row: Var,
    pub head: Option<AttentionVars>,
    pub tail: Option<AttentionVars>,
}

impl EncoderVars {
    pub fn from_bound(g: &mut Graph, bound: &Bound) -> Result<Self> {
        let proj_w_t = g.transpose(bound.var("enc.proj.w"))?;
        let b = bound.var("enc.proj.b");
        let d = g.value(b).len();
        let proj_b_row = g.reshape(b, &[1, d])?;
        let mut side = |name: &str| -> Result<Option<AttentionVars>> {
            let Some(u) = bound.get(&format!("enc.{name}.u")) else {
                return Ok(None);
            };
            Ok(Some(AttentionVars {
                u_t: g.transpose(u)?,
                v: bound.var(&format!("enc.{name}.v")),
                b: bound.var(&format!("enc.{name}.b")),
                score: bound.var(&format!("enc.{name}.score")),
            }))
        };
        let head = side("head")?;
        let tail = side("tail")?;
        Ok(Self {
            embed: bound.var("enc.embed"),
            proj_w_t,
            proj_b_row,
            head,
            tail,
        })
    }
}

/// Word vectors for a subset of document positions. Row `k` of `raw` and
/// `projected` belongs to `positions[k]`.
#[derive(Clone, Debug)]
pub struct WordVectors {
    pub positions: Vec<usize>,
    /// `x_i`, shape `[n, d]`.
    pub raw: Var,
    /// `x̂_i`, shape `[n, d]`.
    pub projected: Var,
}

impl WordVectors {
    fn row(&self, pos: usize) -> Result<usize> {
        self.positions
            .binary_search(&pos)
            .map_err(|_| EncoderError::InvalidMentions(format!("position {pos} was not encoded")))
    }
}

/// Encodes the given (sorted, unique) positions of a token sequence.
pub fn encode_text(
    g: &mut Graph,
    vars: &EncoderVars,
    cfg: &EncoderConfig,
    tokens: &[u32],
    positions: &[usize],
) -> Result<WordVectors> {
    if let Some(&bad) = tokens.iter().find(|t| **t as usize >= cfg.vocab_size) {
        return Err(EncoderError::OutOfVocabulary {
            token: bad,
            vocab: cfg.vocab_size,
        });
    }
    let len = tokens.len();
    let w = cfg.context_window;
    let window = |p: usize| p.saturating_sub(w)..=(p + w).min(len - 1);

    // Distinct source positions feeding the requested windows.
    let mut sources: Vec<usize> = positions.iter().flat_map(|&p| window(p)).collect();
    sources.sort_unstable();
    sources.dedup();
    let token_rows: Vec<usize> = sources.iter().map(|&j| tokens[j] as usize).collect();
    let looked_up = g.index_select(vars.embed, &token_rows)?;

    let mut avg = vec![0.0; positions.len() * sources.len()];
    for (k, &p) in positions.iter().enumerate() {
        let win = window(p);
        let share = 1.0 / (win.end() - win.start() + 1) as f64;
        for j in win {
            let col = sources.binary_search(&j).expect("window source collected");
            avg[k * sources.len() + col] = share;
        }
    }
    let avg = g.constant(Tensor::matrix(positions.len(), sources.len(), avg)?);
    let raw = g.matmul(avg, looked_up)?;

    let lin = g.matmul(raw, vars.proj_w_t)?;
    let ones = g.constant(Tensor::filled(&[positions.len(), 1], 1.0));
    let bias = g.matmul(ones, vars.proj_b_row)?;
    let projected = g.add(lin, bias)?;
    Ok(WordVectors {
        positions: positions.to_vec(),
        raw,
        projected,
    })
}

/// Mean over mentions of the mean projected vector of each mention span.
pub fn intermediate_entity(g: &mut Graph, words: &WordVectors, mentions: &EntityMentions) -> Result<Var> {
    if mentions.mentions.is_empty() {
        return Err(EncoderError::InvalidMentions(format!(
            "entity {} has no mentions",
            mentions.entity.0
        )));
    }
    let mut weights = vec![0.0; words.positions.len()];
    let per_mention = 1.0 / mentions.mentions.len() as f64;
    for &(s, e) in &mentions.mentions {
        if s > e {
            return Err(EncoderError::InvalidMentions(format!("span ({s}, {e}) is reversed")));
        }
        let share = per_mention / (e - s + 1) as f64;
        for i in s..=e {
            weights[words.row(i)?] += share;
        }
    }
    let w = g.constant(Tensor::vector(weights));
    Ok(g.matmul(w, words.projected)?)
}

/// Head and tail vectors with the attention weights that produced them.
#[derive(Clone, Debug)]
pub struct EntityEncoding {
    pub head: Var,
    pub tail: Var,
    pub head_attention: Option<Var>,
    pub tail_attention: Option<Var>,
}

pub fn average_entity_encode(
    g: &mut Graph,
    words: &WordVectors,
    head: &EntityMentions,
    tail: &EntityMentions,
) -> Result<(Var, Var)> {
    Ok((intermediate_entity(g, words, head)?, intermediate_entity(g, words, tail)?))
}

fn attend(
    g: &mut Graph,
    words: &WordVectors,
    own: &EntityMentions,
    query: Var,
    net: &AttentionVars,
    score_with_projected: bool,
) -> Result<(Var, Var)> {
    let rows = own
        .word_indices()
        .into_iter()
        .map(|p| words.row(p))
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len();
    let score_src = if score_with_projected { words.projected } else { words.raw };
    let xs = g.index_select(score_src, &rows)?;
    let xs_hat = g.index_select(words.projected, &rows)?;

    let ux = g.matmul(xs, net.u_t)?;
    let vq = g.matmul(net.v, query)?;
    let vq = g.add(vq, net.b)?;
    let a = g.value(vq).len();
    let vq_row = g.reshape(vq, &[1, a])?;
    let ones = g.constant(Tensor::filled(&[n, 1], 1.0));
    let tiled = g.matmul(ones, vq_row)?;
    let pre = g.add(ux, tiled)?;
    let act = g.tanh(pre);
    let scores = g.matmul(act, net.score)?;
    let alpha = g.softmax(scores)?;
    let out = g.matmul(alpha, xs_hat)?;
    Ok((out, alpha))
}

pub fn cross_attention_encode(
    g: &mut Graph,
    words: &WordVectors,
    head: &EntityMentions,
    tail: &EntityMentions,
    vars: &EncoderVars,
    cfg: &EncoderConfig,
) -> Result<EntityEncoding> {
    let (h0, t0) = average_entity_encode(g, words, head, tail)?;
    let (Some(head_net), Some(tail_net)) = (vars.head, vars.tail) else {
        return Err(EncoderError::InvalidMentions(
            "cross-attention parameters are not bound".into(),
        ));
    };
    let (h, alpha_h) = attend(g, words, head, t0, &head_net, cfg.score_with_projected)?;
    let (t, alpha_t) = attend(g, words, tail, h0, &tail_net, cfg.score_with_projected)?;
    Ok(EntityEncoding {
        head: h,
        tail: t,
        head_attention: Some(alpha_h),
        tail_attention: Some(alpha_t),
    })
}

/// Encodes only the words needed for one entity pair and applies the
/// configured entity encoder.
pub fn encode_pair(
    g: &mut Graph,
    vars: &EncoderVars,
    cfg: &EncoderConfig,
    tokens: &[u32],
    head: &EntityMentions,
    tail: &EntityMentions,
) -> Result<EntityEncoding> {
    head.validate(tokens.len()).map_err(EncoderError::InvalidMentions)?;
    tail.validate(tokens.len()).map_err(EncoderError::InvalidMentions)?;
    let mut positions = head.word_indices();
    positions.extend(tail.word_indices());
    positions.sort_unstable();
    positions.dedup();
    let words = encode_text(g, vars, cfg, tokens, &positions)?;
    match cfg.kind {
        EntityEncoderKind::CrossAttention => cross_attention_encode(g, &words, head, tail, vars, cfg),
        EntityEncoderKind::Average => {
            let (h, t) = average_entity_encode(g, &words, head, tail)?;
            Ok(EntityEncoding {
                head: h,
                tail: t,
                head_attention: None,
                tail_attention: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgrad::grad_check;
    use crate::types::EntityId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &EncoderConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        cfg.init_params(&mut store, seed);
        store
    }

    fn mentions(id: u32, spans: &[(usize, usize)]) -> EntityMentions {
        EntityMentions::new(EntityId(id), spans.to_vec())
    }

    fn rows(g: &Graph, v: Var) -> Vec<Vec<f64>> {
        let t = g.value(v);
        let d = *t.shape().last().unwrap();
        t.data().chunks(d).map(|c| c.to_vec()).collect()
    }

    /// Words of a constant-valued 1-d encoder: embeddings hold the scalar
    /// values directly, identity projection.
    fn scalar_words(g: &mut Graph, values: &[f64]) -> WordVectors {
        let n = values.len();
        let x = g.constant(Tensor::matrix(n, 1, values.to_vec()).unwrap());
        WordVectors {
            positions: (0..n).collect(),
            raw: x,
            projected: x,
        }
    }

    #[test]
    fn window_zero_identity_projection_returns_embeddings() {
        let mut cfg = EncoderConfig::new(5, 3);
        cfg.context_window = 0;
        let mut store = setup(&cfg, 1);
        store.insert("enc.proj.w", Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
        store.insert("enc.proj.b", Tensor::zeros(&[3]));
        let mut g = Graph::new();
        let bound = store.bind(&mut g, &["enc."]);
        let vars = EncoderVars::from_bound(&mut g, &bound).unwrap();
        let tokens = [4u32, 0, 2, 2];
        let words = encode_text(&mut g, &vars, &cfg, &tokens, &[0, 1, 2, 3]).unwrap();
        let embed = store.get("enc.embed").unwrap().data();
        for (k, row) in rows(&g, words.projected).iter().enumerate() {
            let t = tokens[k] as usize;
            assert_eq!(row.as_slice(), &embed[t * 3..t * 3 + 3]);
        }
    }

    #[test]
    fn constant_embeddings_give_constant_words() {
        let mut cfg = EncoderConfig::new(4, 2);
        cfg.context_window = 1;
        let mut store = setup(&cfg, 2);
        store.insert("enc.embed", Tensor::filled(&[4, 2], 0.7));
        let mut g = Graph::new();
        let bound = store.bind(&mut g, &["enc."]);
        let vars = EncoderVars::from_bound(&mut g, &bound).unwrap();
        let words = encode_text(&mut g, &vars, &cfg, &[0, 1, 2, 3, 1], &[0, 1, 2, 3, 4]).unwrap();
        let r = rows(&g, words.projected);
        for row in &r[1..] {
            for (a, b) in row.iter().zip(&r[0]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn windowed_projection_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for window in [0usize, 1, 2, 5] {
            let mut cfg = EncoderConfig::new(9, 4);
            cfg.context_window = window;
            let store = setup(&cfg, 10 + window as u64);
            let tokens: Vec<u32> = (0..11).map(|_| rng.random_range(0..9)).collect();
            let mut g = Graph::new();
            let bound = store.bind(&mut g, &["enc."]);
            let vars = EncoderVars::from_bound(&mut g, &bound).unwrap();
            let positions = [0usize, 3, 4, 10];
            let words = encode_text(&mut g, &vars, &cfg, &tokens, &positions).unwrap();

            let e = store.get("enc.embed").unwrap().data();
            let w = store.get("enc.proj.w").unwrap().data();
            let b = store.get("enc.proj.b").unwrap().data();
            let got = rows(&g, words.projected);
            for (k, &p) in positions.iter().enumerate() {
                let lo = p.saturating_sub(window);
                let hi = (p + window).min(tokens.len() - 1);
                let mut x = [0.0; 4];
                for j in lo..=hi {
                    for c in 0..4 {
                        x[c] += e[tokens[j] as usize * 4 + c] / (hi - lo + 1) as f64;
                    }
                }
                for r in 0..4 {
                    let mut y = b[r];
                    for c in 0..4 {
                        y += w[r * 4 + c] * x[c];
                    }
                    assert!((got[k][r] - y).abs() < 1e-14, "window {window} pos {p}");
                }
            }
        }
    }

    #[test]
    fn out_of_vocabulary_is_rejected() {
        let cfg = EncoderConfig::new(3, 2);
        let store = setup(&cfg, 0);
        let mut g = Graph::new();
        let bound = store.bind(&mut g, &["enc."]);
        let vars = EncoderVars::from_bound(&mut g, &bound).unwrap();
        assert!(matches!(
            encode_text(&mut g, &vars, &cfg, &[0, 3], &[0]),
            Err(EncoderError::OutOfVocabulary { token: 3, vocab: 3 })
        ));
    }

    #[test]
    fn intermediate_span_and_mention_means() {
        let mut g = Graph::new();
        let words = scalar_words(&mut g, &[1.0, 3.0, 5.0, 3.0]);
        let one = intermediate_entity(&mut g, &words, &mentions(0, &[(0, 1)])).unwrap();
        assert_eq!(g.value(one).data(), &[2.0]);
        // means 2.0 and 4.0
        let two = intermediate_entity(&mut g, &words, &mentions(0, &[(0, 1), (2, 3)])).unwrap();
        assert_eq!(g.value(two).data(), &[3.0]);
        assert!(intermediate_entity(&mut g, &words, &mentions(0, &[])).is_err());
    }

    #[test]
    fn intermediate_unequal_spans_match_two_level_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vals: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let spans = [(0usize, 0usize), (2, 6), (8, 9)];
        let mut g = Graph::new();
        let words = scalar_words(&mut g, &vals);
        let got = intermediate_entity(&mut g, &words, &mentions(1, &spans)).unwrap();
        let span_means: Vec<f64> = spans
            .iter()
            .map(|&(s, e)| vals[s..=e].iter().sum::<f64>() / (e - s + 1) as f64)
            .collect();
        let expect = span_means.iter().sum::<f64>() / span_means.len() as f64;
        assert!((g.value(got).item() - expect).abs() < 1e-14);
    }

    fn cross_setup(
        d: usize,
        seed: u64,
    ) -> (EncoderConfig, ParamStore) {
        let mut cfg = EncoderConfig::new(12, d);
        cfg.context_window = 1;
        let store = setup(&cfg, seed);
        (cfg, store)
    }

    fn run_cross(
        cfg: &EncoderConfig,
        store: &ParamStore,
        tokens: &[u32],
        head: &EntityMentions,
        tail: &EntityMentions,
    ) -> (Graph, EntityEncoding, WordVectors) {
        let mut g = Graph::new();
        let bound = store.bind(&mut g, &["enc."]);
        let vars = EncoderVars::from_bound(&mut g, &bound).unwrap();
        let all: Vec<usize> = (0..tokens.len()).collect();
        let words = encode_text(&mut g, &vars, cfg, tokens, &all).unwrap();
        let enc = cross_attention_encode(&mut g, &words, head, tail, &vars, cfg).unwrap();
        (g, enc, words)
    }

    #[test]
    fn single_candidate_attention_is_one() {
        let (cfg, store) = cross_setup(3, 4);
        let tokens = [1u32, 2, 3, 4, 5];
        let (g, enc, words) = run_cross(&cfg, &store, &tokens, &mentions(0, &[(1, 1)]), &mentions(1, &[(3, 4)]));
        assert_eq!(g.value(enc.head_attention.unwrap()).data(), &[1.0]);
        let r = rows(&g, words.projected);
        for (a, b) in g.value(enc.head).data().iter().zip(&r[1]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_candidates_split_evenly() {
        let (mut cfg, store) = cross_setup(3, 5);
        cfg.context_window = 0;
        // Head mentions are two occurrences of the same token.
        let tokens = [7u32, 1, 7, 2, 3];
        let (g, enc, _) = run_cross(&cfg, &store, &tokens, &mentions(0, &[(0, 0), (2, 2)]), &mentions(1, &[(4, 4)]));
        let alpha = g.value(enc.head_attention.unwrap()).data();
        assert!((alpha[0] - 0.5).abs() < 1e-15 && (alpha[1] - 0.5).abs() < 1e-15);
    }

    /// Recomputes the head side of cross attention with plain loops.
    #[test]
    fn cross_attention_matches_from_scratch_recomputation() {
        let (cfg, store) = cross_setup(4, 6);
        let tokens = [3u32, 1, 4, 1, 5, 9, 2, 6, 5, 3];
        let head = mentions(0, &[(1, 2), (6, 6)]);
        let tail = mentions(1, &[(4, 5)]);
        let (g, enc, words) = run_cross(&cfg, &store, &tokens, &head, &tail);
        let xs = rows(&g, words.raw);
        let xh = rows(&g, words.projected);
        let d = 4;
        let t0: Vec<f64> = (0..d).map(|c| (xh[4][c] + xh[5][c]) / 2.0).collect();
        let u = store.get("enc.head.u").unwrap().data();
        let v = store.get("enc.head.v").unwrap().data();
        let b = store.get("enc.head.b").unwrap().data();
        let w = store.get("enc.head.score").unwrap().data();
        let idx = [1usize, 2, 6];
        let scores: Vec<f64> = idx
            .iter()
            .map(|&i| {
                (0..d)
                    .map(|r| {
                        let mut z = b[r];
                        for c in 0..d {
                            z += u[r * d + c] * xs[i][c] + v[r * d + c] * t0[c];
                        }
                        w[r] * z.tanh()
                    })
                    .sum()
            })
            .collect();
        let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
        let alpha: Vec<f64> = scores.iter().map(|s| (s - mx).exp() / z).collect();
        let got_alpha = g.value(enc.head_attention.unwrap()).data();
        for (a, b) in got_alpha.iter().zip(&alpha) {
            assert!((a - b).abs() < 1e-14);
        }
        for c in 0..d {
            let h: f64 = idx.iter().zip(&alpha).map(|(&i, a)| a * xh[i][c]).sum();
            assert!((g.value(enc.head).data()[c] - h).abs() < 1e-14);
        }
    }

    #[test]
    fn attention_is_a_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let (cfg, store) = cross_setup(3, 100 + trial);
            let tokens: Vec<u32> = (0..10).map(|_| rng.random_range(0..12)).collect();
            let head = mentions(0, &[(0, 1), (5, 7)]);
            let tail = mentions(1, &[(3, 3), (9, 9)]);
            let (g, enc, words) = run_cross(&cfg, &store, &tokens, &head, &tail);
            let alpha = g.value(enc.head_attention.unwrap()).data().to_vec();
            assert!(alpha.iter().all(|a| *a > 0.0));
            assert!((alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            // Barycentric reconstruction of h from the candidate vectors.
            let xh = rows(&g, words.projected);
            let cands = head.word_indices();
            for c in 0..3 {
                let rebuilt: f64 = cands.iter().zip(&alpha).map(|(&i, a)| a * xh[i][c]).sum();
                let h = g.value(enc.head).data()[c];
                assert!((rebuilt - h).abs() <= 1e-8);
                let lo = cands.iter().map(|&i| xh[i][c]).fold(f64::MAX, f64::min);
                let hi = cands.iter().map(|&i| xh[i][c]).fold(f64::MIN, f64::max);
                assert!(h >= lo - 1e-12 && h <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn mention_order_does_not_matter() {
        let (cfg, store) = cross_setup(3, 21);
        let tokens = [1u32, 2, 3, 4, 5, 6, 7, 8, 9, 10];
        let tail = mentions(1, &[(8, 9)]);
        let a = mentions(0, &[(0, 1), (4, 4), (6, 7)]);
        let b = mentions(0, &[(6, 7), (0, 1), (4, 4)]);
        let (g1, e1, _) = run_cross(&cfg, &store, &tokens, &a, &tail);
        let (g2, e2, _) = run_cross(&cfg, &store, &tokens, &b, &tail);
        for (x, y) in g1.value(e1.head).data().iter().zip(g2.value(e2.head).data()) {
            assert!((x - y).abs() < 1e-14);
        }
        let mut g = Graph::new();
        let words = scalar_words(&mut g, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let ha = intermediate_entity(&mut g, &words, &a).unwrap();
        let hb = intermediate_entity(&mut g, &words, &b).unwrap();
        assert!((g.value(ha).item() - g.value(hb).item()).abs() < 1e-14);
    }

    #[test]
    fn average_head_ignores_the_tail() {
        let (mut cfg, store) = cross_setup(3, 30);
        cfg.kind = EntityEncoderKind::Average;
        let tokens = [1u32, 2, 3, 4, 5, 6, 7, 8, 9, 10];
        let head = mentions(0, &[(0, 1), (6, 6)]);
        let mut heads = Vec::new();
        for tail in [mentions(1, &[(3, 3)]), mentions(2, &[(9, 9)])] {
            let mut g = Graph::new();
            let bound = store.bind(&mut g, &["enc."]);
            let vars = EncoderVars::from_bound(&mut g, &bound).unwrap();
            let enc = encode_pair(&mut g, &vars, &cfg, &tokens, &head, &tail).unwrap();
            heads.push(g.value(enc.head).data().to_vec());
        }
        assert_eq!(heads[0], heads[1]);
    }

    #[test]
    fn cross_attention_is_differentiable() {
        let (cfg, store) = cross_setup(3, 40);
        let tokens = [1u32, 2, 3, 4, 5, 6, 7, 8];
        let head = mentions(0, &[(0, 1), (5, 5)]);
        let tail = mentions(1, &[(3, 3), (7, 7)]);
        let names: Vec<String> = store.names().map(String::from).collect();
        let inputs: Vec<Tensor> = names.iter().map(|n| store.get(n).unwrap().clone()).collect();
        let err = grad_check(
            |g, vars| {
                let find = |n: &str| vars[names.iter().position(|x| x == n).unwrap()];
                let proj_w_t = g.transpose(find("enc.proj.w"))?;
                let proj_b_row = g.reshape(find("enc.proj.b"), &[1, 3])?;
                let mut side = |name: &str| -> crate::ndgrad::Result<AttentionVars> {
                    Ok(AttentionVars {
                        u_t: g.transpose(find(&format!("enc.{name}.u")))?,
                        v: find(&format!("enc.{name}.v")),
                        b: find(&format!("enc.{name}.b")),
                        score: find(&format!("enc.{name}.score")),
                    })
                };
                let (hn, tn) = (side("head")?, side("tail")?);
                let ev = EncoderVars {
                    embed: find("enc.embed"),
                    proj_w_t,
                    proj_b_row,
                    head: Some(hn),
                    tail: Some(tn),
                };
                let enc = encode_pair(g, &ev, &cfg, &tokens, &head, &tail).map_err(|e| match e {
                    EncoderError::Grad(g) => g,
                    other => panic!("{other}"),
                })?;
                let prod = g.mul(enc.head, enc.tail)?;
                let s = g.sum(prod);
                Ok(g.tanh(s))
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
