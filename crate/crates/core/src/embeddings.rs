//! Skip-gram negative-sampling embeddings in two modes: window pairs drawn
//! from token streams, and explicit (target, context) pair lists. Training is
//! byte-identical across runs in single-threaded mode; with `jobs > 1` pairs
//! are sharded across threads that update shared parameters concurrently, so
//! results are only statistically reproducible.

use crate::artifact::{ArtifactReader, ArtifactWriter};
use crate::corpus::Document;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

/// Dense vectors keyed by token, in a stable vocabulary order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_rows(vocab: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != vocab.len() * dim {
            return Err(Error::invalid(format!(
                "embedding data length {} does not match {} tokens x dim {}",
                data.len(),
                vocab.len(),
                dim
            )));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, token) in vocab.iter().enumerate() {
            if index.insert(token.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate token `{token}` in vocabulary")));
            }
        }
        Ok(EmbeddingTable { dim, vocab, index, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.vocab[i]
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.position(token).map(|i| self.vector(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        (0..self.len()).map(move |i| (self.token(i), self.vector(i)))
    }

    /// New table containing only the tokens accepted by `keep`, preserving
    /// this table's order.
    pub fn subset(&self, mut keep: impl FnMut(&str) -> bool) -> EmbeddingTable {
        let mut vocab = Vec::new();
        let mut data = Vec::new();
        for (token, vec) in self.iter() {
            if keep(token) {
                vocab.push(token.to_string());
                data.extend_from_slice(vec);
            }
        }
        EmbeddingTable::from_rows(vocab, self.dim, data).expect("subset preserves invariants")
    }

    /// Text format: `vocab_size dim` then one `token v1 .. vdim` row per
    /// token with six fixed decimals.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ArtifactWriter::create(path, "embeddings")?;
        w.line(format_args!("{} {}", self.len(), self.dim))?;
        let mut row = String::new();
        for (token, vec) in self.iter() {
            if token.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!(
                    "token `{token}` contains whitespace and cannot be serialized"
                )));
            }
            row.clear();
            row.push_str(token);
            for v in vec {
                row.push_str(&format!(" {v:.6}"));
            }
            w.line(&row)?;
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = ArtifactReader::open(path, "embeddings", false)?;
        let (no, header) = reader
            .next_line()?
            .ok_or_else(|| reader.err(0, "empty embeddings file"))?;
        let mut parts = header.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| reader.err(no, "expected `vocab_size dim` header"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| reader.err(no, "expected `vocab_size dim` header"))?;
        let mut vocab = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        while let Some((no, line)) = reader.next_line()? {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap();
            vocab.push(token.to_string());
            let before = data.len();
            for p in parts {
                let v: f64 = p
                    .parse()
                    .map_err(|_| reader.err(no, format!("invalid vector component `{p}`")))?;
                data.push(v);
            }
            if data.len() - before != dim {
                return Err(reader.err(
                    no,
                    format!("expected {dim} components, found {}", data.len() - before),
                ));
            }
        }
        if vocab.len() != count {
            return Err(reader.err(
                0,
                format!("header declares {count} tokens, file contains {}", vocab.len()),
            ));
        }
        EmbeddingTable::from_rows(vocab, dim, data)
    }
}

/// Cosine similarity; either vector having zero norm yields 0.0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine of vectors with different dimensions");
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Parameter matrix shared between training shards. Values are f64 bits in
/// relaxed atomics: single-threaded access is exact program order, concurrent
/// shards interleave at update granularity.
struct ParamMatrix {
    dim: usize,
    data: Vec<AtomicU64>,
}

impl ParamMatrix {
    fn new(rows: usize, dim: usize) -> Self {
        let mut data = Vec::with_capacity(rows * dim);
        data.resize_with(rows * dim, || AtomicU64::new(0f64.to_bits()));
        ParamMatrix { dim, data }
    }

    fn read_row(&self, row: usize, out: &mut [f64]) {
        let base = row * self.dim;
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = f64::from_bits(self.data[base + j].load(Ordering::Relaxed));
        }
    }

    fn add_row(&self, row: usize, delta: &[f64], scale: f64) {
        let base = row * self.dim;
        for (j, d) in delta.iter().enumerate() {
            let cell = &self.data[base + j];
            let cur = f64::from_bits(cell.load(Ordering::Relaxed));
            cell.store((cur + scale * d).to_bits(), Ordering::Relaxed);
        }
    }

    fn set(&self, row: usize, col: usize, value: f64) {
        self.data[row * self.dim + col].store(value.to_bits(), Ordering::Relaxed);
    }

    fn to_vec(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|c| f64::from_bits(c.load(Ordering::Relaxed)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SgnsConfig {
    pub dim: usize,
    /// Symmetric window radius; window mode only.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Tokens (window mode) or pair endpoints (pair mode) seen fewer times
    /// are pruned before pair generation.
    pub min_count: u64,
    pub seed: u64,
    /// 1 = deterministic single-threaded; more shards train concurrently.
    pub jobs: usize,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 300,
            window: 3,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 1,
            seed: 1,
            jobs: 1,
        }
    }
}

impl SgnsConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("embedding dim must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.jobs == 0 {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Loss and analytic gradients of one negative-sampling step, evaluated at
/// the current parameters:
/// `L = -ln s(t.c) - sum_n ln s(-t.n)` with `s` the logistic function.
/// `grad_target`, `grad_context`, and `grad_negatives[i]` receive dL/d(vector).
pub fn sgns_step(
    target: &[f64],
    context: &[f64],
    negatives: &[&[f64]],
    grad_target: &mut [f64],
    grad_context: &mut [f64],
    grad_negatives: &mut [Vec<f64>],
) -> f64 {
    let dim = target.len();
    debug_assert_eq!(context.len(), dim);
    debug_assert_eq!(grad_target.len(), dim);
    debug_assert_eq!(grad_context.len(), dim);
    debug_assert_eq!(grad_negatives.len(), negatives.len());

    let dot_pos: f64 = target.iter().zip(context).map(|(a, b)| a * b).sum();
    let mut loss = softplus(-dot_pos);
    // d/d(dot) of -ln s(dot) is s(dot) - 1.
    let coeff_pos = sigmoid(dot_pos) - 1.0;
    for j in 0..dim {
        grad_target[j] = coeff_pos * context[j];
        grad_context[j] = coeff_pos * target[j];
    }
    for (neg, grad_neg) in negatives.iter().zip(grad_negatives.iter_mut()) {
        debug_assert_eq!(neg.len(), dim);
        let dot_neg: f64 = target.iter().zip(*neg).map(|(a, b)| a * b).sum();
        loss += softplus(dot_neg);
        let coeff = sigmoid(dot_neg);
        for j in 0..dim {
            grad_target[j] += coeff * neg[j];
            grad_neg[j] = coeff * target[j];
        }
    }
    loss
}

/// Noise distribution over context tokens: unigram counts raised to 0.75.
struct NoiseTable {
    cumulative: Vec<f64>,
    total: f64,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut total = 0.0;
        for &c in counts {
            total += (c as f64).powf(0.75);
            cumulative.push(total);
        }
        NoiseTable { cumulative, total }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let r = rng.gen_range(0.0..self.total);
        self.cumulative.partition_point(|&c| c <= r)
    }
}

/// A vocabulary in first-occurrence order with counts.
struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Vocab {
    fn build<'a>(tokens: impl Iterator<Item = &'a str>, min_count: u64) -> Self {
        let mut index = HashMap::new();
        let mut order = Vec::new();
        let mut counts: Vec<u64> = Vec::new();
        for token in tokens {
            match index.get(token) {
                Some(&i) => counts[i] += 1,
                None => {
                    index.insert(token.to_string(), order.len());
                    order.push(token.to_string());
                    counts.push(1);
                }
            }
        }
        if min_count > 1 {
            let mut kept_index = HashMap::new();
            let mut kept = Vec::new();
            let mut kept_counts = Vec::new();
            for (i, token) in order.iter().enumerate() {
                if counts[i] >= min_count {
                    kept_index.insert(token.clone(), kept.len());
                    kept.push(token.clone());
                    kept_counts.push(counts[i]);
                }
            }
            return Vocab { tokens: kept, index: kept_index, counts: kept_counts };
        }
        Vocab { tokens: order, index, counts }
    }

    fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    fn len(&self) -> usize {
        self.tokens.len()
    }
}

/// Shared training state for one run.
struct Trainer<'a> {
    config: &'a SgnsConfig,
    input: ParamMatrix,
    output: ParamMatrix,
    noise: NoiseTable,
    context_vocab_len: usize,
    total_updates: usize,
    processed: AtomicUsize,
}

struct StepBuffers {
    target: Vec<f64>,
    context: Vec<f64>,
    negatives: Vec<Vec<f64>>,
    neg_ids: Vec<usize>,
    grad_target: Vec<f64>,
    grad_context: Vec<f64>,
    grad_negatives: Vec<Vec<f64>>,
}

impl StepBuffers {
    fn new(dim: usize, negatives: usize) -> Self {
        StepBuffers {
            target: vec![0.0; dim],
            context: vec![0.0; dim],
            negatives: vec![vec![0.0; dim]; negatives],
            neg_ids: Vec::with_capacity(negatives),
            grad_target: vec![0.0; dim],
            grad_context: vec![0.0; dim],
            grad_negatives: vec![vec![0.0; dim]; negatives],
        }
    }
}

impl<'a> Trainer<'a> {
    fn new(config: &'a SgnsConfig, target_vocab: &Vocab, context_vocab: &Vocab, total_pairs: usize) -> Self {
        let input = ParamMatrix::new(target_vocab.len(), config.dim);
        // word2vec-style init: inputs uniform in [-0.5, 0.5] / dim, outputs zero.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for i in 0..target_vocab.len() {
            for j in 0..config.dim {
                let v: f64 = rng.gen::<f64>() - 0.5;
                input.set(i, j, v / config.dim as f64);
            }
        }
        let output = ParamMatrix::new(context_vocab.len(), config.dim);
        Trainer {
            config,
            input,
            output,
            noise: NoiseTable::new(&context_vocab.counts),
            context_vocab_len: context_vocab.len(),
            total_updates: total_pairs * config.epochs,
            processed: AtomicUsize::new(0),
        }
    }

    fn learning_rate(&self) -> f64 {
        let done = self.processed.fetch_add(1, Ordering::Relaxed);
        let progress = if self.total_updates == 0 {
            0.0
        } else {
            done as f64 / self.total_updates as f64
        };
        let lr = self.config.learning_rate * (1.0 - progress);
        lr.max(self.config.learning_rate * 1e-4)
    }

    /// One positive pair: draw negatives, compute the full gradient at the
    /// current parameters, apply it scaled by the decayed learning rate.
    fn train_pair(&self, target: usize, context: usize, rng: &mut ChaCha8Rng, buf: &mut StepBuffers) {
        buf.neg_ids.clear();
        if self.context_vocab_len > 1 {
            for _ in 0..self.config.negatives {
                let n = self.noise.sample(rng);
                // Accidental hit on the positive context: skip, as in word2vec.
                if n != context {
                    buf.neg_ids.push(n);
                }
            }
        }
        let lr = self.learning_rate();
        self.input.read_row(target, &mut buf.target);
        self.output.read_row(context, &mut buf.context);
        for (slot, &n) in buf.negatives.iter_mut().zip(&buf.neg_ids) {
            self.output.read_row(n, slot);
        }
        let n_neg = buf.neg_ids.len();
        let neg_views: Vec<&[f64]> = buf.negatives[..n_neg].iter().map(|v| v.as_slice()).collect();
        sgns_step(
            &buf.target,
            &buf.context,
            &neg_views,
            &mut buf.grad_target,
            &mut buf.grad_context,
            &mut buf.grad_negatives[..n_neg],
        );
        self.input.add_row(target, &buf.grad_target, -lr);
        self.output.add_row(context, &buf.grad_context, -lr);
        for (i, &n) in buf.neg_ids.iter().enumerate() {
            self.output.add_row(n, &buf.grad_negatives[i], -lr);
        }
    }

    fn shard_rng(&self, epoch: usize, shard: usize) -> ChaCha8Rng {
        // Distinct stream per (run, epoch, shard); single-threaded runs use
        // shard 0 only, so the sequence is fixed by the seed.
        ChaCha8Rng::seed_from_u64(
            self.config
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(epoch as u64)
                .wrapping_mul(0x85EB_CA6B)
                .wrapping_add(shard as u64 + 1),
        )
    }

    fn finish(self, target_vocab: Vocab) -> EmbeddingTable {
        EmbeddingTable::from_rows(target_vocab.tokens, self.config.dim, self.input.to_vec())
            .expect("trainer matrices are consistent")
    }
}

fn run_sharded(trainer: &Trainer<'_>, pairs: &[(usize, usize)]) {
    let jobs = trainer.config.jobs;
    for epoch in 0..trainer.config.epochs {
        if jobs <= 1 || pairs.len() < 2 {
            let mut rng = trainer.shard_rng(epoch, 0);
            let mut buf = StepBuffers::new(trainer.config.dim, trainer.config.negatives);
            for &(t, c) in pairs {
                trainer.train_pair(t, c, &mut rng, &mut buf);
            }
        } else {
            let shard_size = pairs.len().div_ceil(jobs);
            rayon::scope(|scope| {
                for (shard, chunk) in pairs.chunks(shard_size).enumerate() {
                    scope.spawn(move |_| {
                        let mut rng = trainer.shard_rng(epoch, shard);
                        let mut buf = StepBuffers::new(trainer.config.dim, trainer.config.negatives);
                        for &(t, c) in chunk {
                            trainer.train_pair(t, c, &mut rng, &mut buf);
                        }
                    });
                }
            });
        }
    }
}

/// Skip-gram pairs of a token stream: every position pairs with its
/// neighbours up to `window` steps away on both sides, never crossing
/// document boundaries. The window is fixed, not sampled.
fn window_pairs(doc_ids: &[Vec<usize>], window: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for ids in doc_ids {
        for (i, &center) in ids.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(ids.len());
            for (j, &ctx) in ids[lo..hi].iter().enumerate() {
                if lo + j != i {
                    pairs.push((center, ctx));
                }
            }
        }
    }
    pairs
}

/// Trains embeddings over token streams (one stream per document).
pub fn train_window_sgns(streams: &[Vec<String>], config: &SgnsConfig) -> Result<EmbeddingTable> {
    config.validate()?;
    if config.window == 0 {
        return Err(Error::invalid("window must be positive in window mode"));
    }
    let vocab = Vocab::build(
        streams.iter().flat_map(|d| d.iter().map(String::as_str)),
        config.min_count,
    );
    if vocab.len() == 0 {
        return Err(Error::invalid("no tokens survive min_count pruning"));
    }
    // Pruned tokens are removed from the stream before windowing, so
    // surviving tokens move closer together, as in word2vec.
    let doc_ids: Vec<Vec<usize>> = streams
        .iter()
        .map(|doc| doc.iter().filter_map(|t| vocab.id(t)).collect())
        .collect();
    let pairs = window_pairs(&doc_ids, config.window);
    let trainer = Trainer::new(config, &vocab, &vocab, pairs.len());
    run_sharded(&trainer, &pairs);
    Ok(trainer.finish(vocab))
}

/// Trains embeddings over explicit (target, context) pairs. The returned
/// table holds the target vectors.
pub fn train_pair_sgns(pairs: &[(String, String)], config: &SgnsConfig) -> Result<EmbeddingTable> {
    config.validate()?;
    let target_vocab = Vocab::build(pairs.iter().map(|(t, _)| t.as_str()), config.min_count);
    let context_vocab = Vocab::build(pairs.iter().map(|(_, c)| c.as_str()), config.min_count);
    if target_vocab.len() == 0 || context_vocab.len() == 0 {
        return Err(Error::invalid("no tokens survive min_count pruning"));
    }
    let id_pairs: Vec<(usize, usize)> = pairs
        .iter()
        .filter_map(|(t, c)| Some((target_vocab.id(t)?, context_vocab.id(c)?)))
        .collect();
    if id_pairs.is_empty() {
        return Err(Error::invalid("no training pairs survive min_count pruning"));
    }
    let trainer = Trainer::new(config, &target_vocab, &context_vocab, id_pairs.len());
    run_sharded(&trainer, &id_pairs);
    Ok(trainer.finish(target_vocab))
}

/// Inverse document frequencies with add-one smoothing:
/// `idf(w) = ln((N + 1) / (df(w) + 1)) + 1`. Unseen words get the df = 0 value.
#[derive(Debug, Clone)]
pub struct IdfWeights {
    n_docs: usize,
    doc_freq: HashMap<String, usize>,
}

impl IdfWeights {
    pub fn from_documents(docs: &[Document]) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            let mut seen: std::collections::HashSet<&str> = std::collections::HashSet::new();
            for sentence in &doc.sentences {
                for token in sentence {
                    if seen.insert(token) {
                        *doc_freq.entry(token.clone()).or_insert(0) += 1;
                    }
                }
            }
        }
        IdfWeights { n_docs: docs.len(), doc_freq }
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.doc_freq.get(token).copied().unwrap_or(0);
        ((self.n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
    }
}

/// A document representation: idf-weighted mean of in-vocabulary word
/// vectors, L2-normalized. `all_oov` flags the degenerate zero vector
/// produced when no token is in the table.
#[derive(Debug, Clone, PartialEq)]
pub struct DocVector {
    pub vector: Vec<f64>,
    pub all_oov: bool,
}

pub fn doc_embedding<'a>(
    tokens: impl Iterator<Item = &'a str>,
    table: &EmbeddingTable,
    idf: &IdfWeights,
) -> DocVector {
    let mut sum = vec![0.0; table.dim()];
    let mut weight_total = 0.0;
    for token in tokens {
        if let Some(vec) = table.get(token) {
            let w = idf.idf(token);
            for (s, v) in sum.iter_mut().zip(vec) {
                *s += w * v;
            }
            weight_total += w;
        }
    }
    if weight_total == 0.0 {
        return DocVector { vector: sum, all_oov: true };
    }
    for s in sum.iter_mut() {
        *s /= weight_total;
    }
    let norm: f64 = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for s in sum.iter_mut() {
            *s /= norm;
        }
    }
    DocVector { vector: sum, all_oov: false }
}

/// Pseudo-document vectors per entity: all sentences containing a gold
/// mention of the entity, embedded with `doc_embedding`. Entities whose
/// every context word is out of vocabulary are omitted.
pub fn entity_doc_vectors(
    docs: &[Document],
    table: &EmbeddingTable,
    idf: &IdfWeights,
) -> BTreeMap<String, DocVector> {
    let mut contexts: BTreeMap<String, Vec<&[String]>> = BTreeMap::new();
    for doc in docs {
        for mention in &doc.mentions {
            if let Some(gold) = &mention.gold {
                contexts
                    .entry(gold.clone())
                    .or_default()
                    .push(&doc.sentences[mention.sentence]);
            }
        }
    }
    let mut out = BTreeMap::new();
    for (entity, sentences) in contexts {
        let vec = doc_embedding(
            sentences.iter().flat_map(|s| s.iter().map(String::as_str)),
            table,
            idf,
        );
        if !vec.all_oov {
            out.insert(entity, vec);
        }
    }
    out
}

/// Writes entity document vectors as a regular embedding table.
pub fn save_doc_vectors(vectors: &BTreeMap<String, DocVector>, dim: usize, path: &Path) -> Result<()> {
    let mut vocab = Vec::with_capacity(vectors.len());
    let mut data = Vec::with_capacity(vectors.len() * dim);
    for (token, vec) in vectors {
        vocab.push(token.clone());
        data.extend_from_slice(&vec.vector);
    }
    EmbeddingTable::from_rows(vocab, dim, data)?.save(path)
}
