//! Replaced-token-detection pretraining: a small masked-language-model generator
//! proposes tokens for masked positions and a larger discriminator labels every
//! position as original or replaced. The discriminator body is later reused as a
//! contextual embedder.

mod encoder;

pub use encoder::{dense, ContextEncoder, EncoderConfig, LAYER_NORM_EPS};

use crate::data::batches;
use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::numerics::{init, Adam, AdamConfig, Graph, ParamId, ParamStore, Rng, Tensor, Var};
use crate::tokenizer::{TokenSeq, MASK};

pub const GENERATOR_PREFIX: &str = "gen.";
pub const DISCRIMINATOR_PREFIX: &str = "disc.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectraConfig {
    pub gen_width: usize,
    pub gen_layers: usize,
    pub gen_heads: usize,
    pub disc_width: usize,
    pub disc_layers: usize,
    pub disc_heads: usize,
    /// Feed-forward width as a multiple of the model width.
    pub ff_mult: usize,
    pub max_positions: usize,
    pub mask_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the discriminator loss in the joint objective.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for ElectraConfig {
    fn default() -> Self {
        ElectraConfig {
            gen_width: 32,
            gen_layers: 1,
            gen_heads: 2,
            disc_width: 64,
            disc_layers: 2,
            disc_heads: 4,
            ff_mult: 4,
            max_positions: 64,
            mask_rate: 0.15,
            epochs: 3,
            batch_size: 32,
            lr: 1e-3,
            lambda: 50.0,
            seed: 0,
        }
    }
}

impl ElectraConfig {
    pub fn generator_encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            width: self.gen_width,
            heads: self.gen_heads,
            layers: self.gen_layers,
            ff_width: self.ff_mult * self.gen_width,
            max_positions: self.max_positions,
        }
    }

    pub fn discriminator_encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            width: self.disc_width,
            heads: self.disc_heads,
            layers: self.disc_layers,
            ff_width: self.ff_mult * self.disc_width,
            max_positions: self.max_positions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.disc_width < self.gen_width {
            return Err(Error::Config(format!(
                "discriminator width {} is smaller than generator width {}",
                self.disc_width, self.gen_width
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::Config(format!(
                "mask rate {} outside [0, 1]",
                self.mask_rate
            )));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config(
                "batch size, learning rate and lambda must be positive".into(),
            ));
        }
        self.generator_encoder(1).validate()?;
        self.discriminator_encoder(1).validate()
    }
}

/// Encoder plus a vocabulary softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    encoder: ContextEncoder,
    head_w: ParamId,
    head_b: ParamId,
}

impl Generator {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let encoder = ContextEncoder::new(store, prefix, cfg, rng)?;
        let head_w = store.add(
            format!("{prefix}head_w"),
            init::glorot(cfg.width, cfg.vocab_size, rng),
        )?;
        let head_b = store.add(format!("{prefix}head_b"), init::zeros(cfg.vocab_size))?;
        Ok(Generator {
            encoder,
            head_w,
            head_b,
        })
    }

    pub fn bind(store: &ParamStore, prefix: &str, cfg: EncoderConfig) -> Result<Self> {
        let encoder = ContextEncoder::bind(store, prefix, cfg)?;
        let head_w = bind_shaped(
            store,
            &format!("{prefix}head_w"),
            &[cfg.width, cfg.vocab_size],
        )?;
        let head_b = bind_shaped(store, &format!("{prefix}head_b"), &[cfg.vocab_size])?;
        Ok(Generator {
            encoder,
            head_w,
            head_b,
        })
    }

    pub fn encoder(&self) -> &ContextEncoder {
        &self.encoder
    }

    /// Vocabulary distributions `[M x V]` at `positions[s]` of each sequence, in
    /// sequence order then position order.
    pub fn probs(&self, g: &mut Graph, seqs: &[&[usize]], positions: &[Vec<usize>]) -> Result<Var> {
        let rows = packed_rows(seqs, positions)?;
        let v = self.encoder.config().vocab_size;
        if rows.is_empty() {
            return Ok(g.zeros(0, v));
        }
        let hidden = self.encoder.forward(g, seqs)?;
        let picked = g.gather_rows(hidden, &rows)?;
        let logits = dense(g, picked, self.head_w, self.head_b)?;
        g.softmax_rows(logits)
    }
}

/// Encoder plus a per-token sigmoid head giving the probability that a token is original.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    encoder: ContextEncoder,
    head_w: ParamId,
    head_b: ParamId,
}

impl Discriminator {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let encoder = ContextEncoder::new(store, prefix, cfg, rng)?;
        let head_w = store.add(format!("{prefix}head_w"), init::glorot(cfg.width, 1, rng))?;
        let head_b = store.add(format!("{prefix}head_b"), init::zeros(1))?;
        Ok(Discriminator {
            encoder,
            head_w,
            head_b,
        })
    }

    pub fn bind(store: &ParamStore, prefix: &str, cfg: EncoderConfig) -> Result<Self> {
        let encoder = ContextEncoder::bind(store, prefix, cfg)?;
        let head_w = bind_shaped(store, &format!("{prefix}head_w"), &[cfg.width, 1])?;
        let head_b = bind_shaped(store, &format!("{prefix}head_b"), &[1])?;
        Ok(Discriminator {
            encoder,
            head_w,
            head_b,
        })
    }

    pub fn encoder(&self) -> &ContextEncoder {
        &self.encoder
    }

    pub fn head(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    /// Real-token probabilities `[N x 1]` for the packed sequences.
    pub fn scores(&self, g: &mut Graph, seqs: &[&[usize]]) -> Result<Var> {
        let hidden = self.encoder.forward(g, seqs)?;
        self.apply_head(g, hidden)
    }

    fn apply_head(&self, g: &mut Graph, hidden: Var) -> Result<Var> {
        let logits = dense(g, hidden, self.head_w, self.head_b)?;
        Ok(g.sigmoid(logits))
    }
}

fn bind_shaped(store: &ParamStore, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store.require(name)?;
    if store.get(id).shape() != shape {
        return Err(Error::Integrity(format!(
            "parameter {name} has shape {:?}, expected {shape:?}",
            store.get(id).shape()
        )));
    }
    Ok(id)
}

fn packed_rows(seqs: &[&[usize]], positions: &[Vec<usize>]) -> Result<Vec<usize>> {
    if seqs.len() != positions.len() {
        return Err(Error::Usage(format!(
            "{} sequences for {} position lists",
            seqs.len(),
            positions.len()
        )));
    }
    let mut rows = Vec::new();
    let mut off = 0;
    for (s, ps) in seqs.iter().zip(positions) {
        for &p in ps {
            if p >= s.len() {
                return Err(Error::Index(format!(
                    "position {p} past sequence length {}",
                    s.len()
                )));
            }
            rows.push(off + p);
        }
        off += s.len();
    }
    Ok(rows)
}

/// Mean negative log-probability of `targets` under the rows of `probs`; 0 when empty.
pub fn mlm_loss(g: &mut Graph, probs: Var, targets: &[usize]) -> Result<Var> {
    if targets.is_empty() && g.dims(probs).0 == 0 {
        return g.constant_matrix(1, 1, vec![0.0]);
    }
    g.cross_entropy(probs, targets)
}

/// Mean of `-ln s` over original tokens and `-ln(1 - s)` over replaced ones; 0 when empty.
pub fn rtd_loss(g: &mut Graph, scores: Var, replaced: &[bool]) -> Result<Var> {
    if replaced.is_empty() && g.dims(scores).0 == 0 {
        return g.constant_matrix(1, 1, vec![0.0]);
    }
    g.binary_nll(scores, replaced)
}

/// Selects each non-padding position with probability `rate` and replaces it with
/// MASK. If `rate > 0` and nothing was drawn, one position is forced.
pub fn mask_tokens(seq: &TokenSeq, rate: f64, rng: &mut Rng) -> (TokenSeq, Vec<usize>) {
    let n = seq.true_length();
    let mut positions: Vec<usize> = if rate <= 0.0 {
        Vec::new()
    } else {
        (0..n).filter(|_| rng.bernoulli(rate)).collect()
    };
    if rate > 0.0 && positions.is_empty() && n > 0 {
        positions.push(rng.below(n));
    }
    let mut ids = seq.ids().to_vec();
    for &p in &positions {
        ids[p] = MASK;
    }
    let masked = TokenSeq::new(ids, n).expect("masking keeps the padding layout");
    (masked, positions)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptionRecord {
    pub original: Vec<usize>,
    pub corrupted: Vec<usize>,
    pub is_replaced: Vec<bool>,
    pub masked_positions: Vec<usize>,
    pub true_length: usize,
}

impl CorruptionRecord {
    pub fn unchanged(seq: &TokenSeq) -> Self {
        CorruptionRecord {
            original: seq.ids().to_vec(),
            corrupted: seq.ids().to_vec(),
            is_replaced: vec![false; seq.max_len()],
            masked_positions: Vec::new(),
            true_length: seq.true_length(),
        }
    }

    pub fn corrupted_tokens(&self) -> &[usize] {
        &self.corrupted[..self.true_length]
    }

    /// Replacement flags over the non-padding prefix.
    pub fn replaced_tokens(&self) -> &[bool] {
        &self.is_replaced[..self.true_length]
    }
}

/// Draws one token per row of `probs` (row-major, `vocab` columns) and writes the
/// samples into records built from `originals`, in order.
fn apply_samples(
    probs: &[f64],
    vocab: usize,
    originals: &[&TokenSeq],
    positions: &[Vec<usize>],
    rng: &mut Rng,
) -> Vec<CorruptionRecord> {
    let mut rows = probs.chunks(vocab.max(1));
    originals
        .iter()
        .zip(positions)
        .map(|(orig, ps)| {
            let mut rec = CorruptionRecord::unchanged(orig);
            rec.masked_positions = ps.clone();
            for &p in ps {
                let row = rows
                    .next()
                    .expect("one probability row per masked position");
                let tok = rng.categorical(row);
                rec.corrupted[p] = tok;
                rec.is_replaced[p] = tok != rec.original[p];
            }
            rec
        })
        .collect()
}

/// Samples replacements for `positions` of `masked` from the generator. A sample
/// equal to the original token counts as not replaced.
pub fn generator_sample(
    store: &ParamStore,
    gen: &Generator,
    original: &TokenSeq,
    masked: &TokenSeq,
    positions: &[usize],
    rng: &mut Rng,
) -> Result<CorruptionRecord> {
    if original.true_length() != masked.true_length() || original.max_len() != masked.max_len() {
        return Err(Error::Alignment(
            "masked sequence does not match its original".into(),
        ));
    }
    let positions = vec![positions.to_vec()];
    let mut g = Graph::new(store);
    let probs = gen.probs(&mut g, &[masked.tokens()], &positions)?;
    let v = gen.encoder.config().vocab_size;
    Ok(apply_samples(g.value(probs), v, &[original], &positions, rng).remove(0))
}

/// Per-position discriminator output over the full padded length.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorOutput {
    /// Real-token probability per position. Positions at or past `true_length` are padding
    /// and carry the head's response to a zero hidden state.
    pub scores: Vec<f64>,
    /// `[max_len x width]`, zero rows for padding.
    pub hidden: Tensor,
    pub true_length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectraPair {
    config: ElectraConfig,
    vocab_size: usize,
    store: ParamStore,
    generator: Generator,
    discriminator: Discriminator,
}

impl ElectraPair {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(vocab_size: usize, config: ElectraConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed).derive(1);
        let mut store = ParamStore::new();
        let generator = Generator::new(
            &mut store,
            GENERATOR_PREFIX,
            config.generator_encoder(vocab_size),
            &mut rng,
        )?;
        let discriminator = Discriminator::new(
            &mut store,
            DISCRIMINATOR_PREFIX,
            config.discriminator_encoder(vocab_size),
            &mut rng,
        )?;
        Ok(ElectraPair {
            config,
            vocab_size,
            store,
            generator,
            discriminator,
        })
    }

    /// Wraps an existing parameter store, e.g. one read from a checkpoint.
    pub fn from_store(store: ParamStore, vocab_size: usize, config: ElectraConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::bind(
            &store,
            GENERATOR_PREFIX,
            config.generator_encoder(vocab_size),
        )?;
        let discriminator = Discriminator::bind(
            &store,
            DISCRIMINATOR_PREFIX,
            config.discriminator_encoder(vocab_size),
        )?;
        Ok(ElectraPair {
            config,
            vocab_size,
            store,
            generator,
            discriminator,
        })
    }

    pub fn config(&self) -> &ElectraConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    /// Masks `seq` at `rate` and lets the generator fill the masked positions.
    pub fn corrupt(&self, seq: &TokenSeq, rate: f64, rng: &mut Rng) -> Result<CorruptionRecord> {
        let (masked, positions) = mask_tokens(seq, rate, rng);
        generator_sample(&self.store, &self.generator, seq, &masked, &positions, rng)
    }

    pub fn discriminator_scores(
        &self,
        ids: &[usize],
        true_length: usize,
    ) -> Result<DiscriminatorOutput> {
        if true_length > ids.len() {
            return Err(Error::Usage(format!(
                "true length {true_length} exceeds {}",
                ids.len()
            )));
        }
        let width = self.config.disc_width;
        let mut g = Graph::new(&self.store);
        let hidden = self
            .discriminator
            .encoder
            .forward(&mut g, &[&ids[..true_length]])?;
        let pad = g.zeros(ids.len() - true_length, width);
        let full = g.concat_rows(&[hidden, pad])?;
        let scores = self.discriminator.apply_head(&mut g, full)?;
        Ok(DiscriminatorOutput {
            scores: g.value(scores).to_vec(),
            hidden: g.to_tensor(full),
            true_length,
        })
    }

    /// Final discriminator hidden states `[max_len x width]`; rows past the true length are zero.
    pub fn contextual_embed(&self, seq: &TokenSeq) -> Result<Tensor> {
        Ok(self
            .discriminator_scores(seq.ids(), seq.true_length())?
            .hidden)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElectraTrace {
    /// Per-epoch means over batches.
    pub mlm: Vec<f64>,
    pub rtd: Vec<f64>,
    pub total: Vec<f64>,
}

/// Joint loss `mlm + lambda * rtd` for one batch. Returns the three loss nodes and
/// the corruption records; the sampled tokens enter the discriminator as plain ids
/// so no gradient reaches the generator through them.
pub fn electra_batch_loss(
    g: &mut Graph,
    pair: &ElectraPair,
    batch: &[&TokenSeq],
    rng: &mut Rng,
) -> Result<(Var, Var, Var, Vec<CorruptionRecord>)> {
    let masked: Vec<(TokenSeq, Vec<usize>)> = batch
        .iter()
        .map(|s| mask_tokens(s, pair.config.mask_rate, rng))
        .collect();
    let mseqs: Vec<&[usize]> = masked.iter().map(|(m, _)| m.tokens()).collect();
    let positions: Vec<Vec<usize>> = masked.iter().map(|(_, p)| p.clone()).collect();
    let probs = pair.generator.probs(g, &mseqs, &positions)?;
    let records = apply_samples(g.value(probs), pair.vocab_size, batch, &positions, rng);
    let (mlm, rtd) = record_losses(g, pair, &records)?;
    let weighted = g.scale(rtd, pair.config.lambda);
    let total = g.add(mlm, weighted)?;
    Ok((mlm, rtd, total, records))
}

/// MLM and RTD losses for fixed corruption records.
pub fn record_losses(
    g: &mut Graph,
    pair: &ElectraPair,
    records: &[CorruptionRecord],
) -> Result<(Var, Var)> {
    let mut mseqs = Vec::with_capacity(records.len());
    for r in records {
        let mut ids = r.original[..r.true_length].to_vec();
        for &p in &r.masked_positions {
            ids[p] = MASK;
        }
        mseqs.push(ids);
    }
    let mrefs: Vec<&[usize]> = mseqs.iter().map(Vec::as_slice).collect();
    let positions: Vec<Vec<usize>> = records.iter().map(|r| r.masked_positions.clone()).collect();
    let targets: Vec<usize> = records
        .iter()
        .flat_map(|r| r.masked_positions.iter().map(|&p| r.original[p]))
        .collect();
    let probs = pair.generator.probs(g, &mrefs, &positions)?;
    let mlm = mlm_loss(g, probs, &targets)?;

    let crefs: Vec<&[usize]> = records
        .iter()
        .map(CorruptionRecord::corrupted_tokens)
        .collect();
    let replaced: Vec<bool> = records
        .iter()
        .flat_map(|r| r.replaced_tokens().iter().copied())
        .collect();
    let scores = pair.discriminator.scores(g, &crefs)?;
    let rtd = rtd_loss(g, scores, &replaced)?;
    Ok((mlm, rtd))
}

/// Joint generator/discriminator training from `config.seed`.
pub fn pretrain_electra(
    corpus: &[TokenSeq],
    vocab_size: usize,
    config: ElectraConfig,
) -> Result<(ElectraPair, ElectraTrace)> {
    if corpus.iter().all(|s| s.true_length() == 0) {
        return Err(Error::Config("pretraining corpus is empty".into()));
    }
    let mut pair = ElectraPair::new(vocab_size, config)?;
    let mut adam = Adam::new(&pair.store, AdamConfig::with_lr(config.lr));
    let mut rng = Rng::new(config.seed).derive(2);
    let mut trace = ElectraTrace::default();
    for epoch in 0..config.epochs {
        let (mut sm, mut sr, mut st) = (0.0, 0.0, 0.0);
        let order = batches(corpus.len(), config.batch_size, &mut rng)?;
        for idx in &order {
            let batch: Vec<&TokenSeq> = idx.iter().map(|&i| &corpus[i]).collect();
            let grads = {
                let mut g = Graph::new(&pair.store);
                let (mlm, rtd, total, _) = electra_batch_loss(&mut g, &pair, &batch, &mut rng)?;
                sm += g.scalar(mlm);
                sr += g.scalar(rtd);
                st += g.scalar(total);
                g.backward(total)?
            };
            grads.accumulate_into(&mut pair.store);
            adam.step(&mut pair.store)?;
        }
        let nb = order.len().max(1) as f64;
        trace.mlm.push(sm / nb);
        trace.rtd.push(sr / nb);
        trace.total.push(st / nb);
        log::info!(
            "electra epoch {}: mlm {:.4} rtd {:.4} total {:.4}",
            epoch + 1,
            sm / nb,
            sr / nb,
            st / nb
        );
    }
    Ok((pair, trace))
}

/// ROC-AUC of the discriminator at telling replaced tokens from originals over
/// every non-padding position of freshly corrupted `seqs`. Higher scores mean
/// "replaced", i.e. `1 - D(x)`.
pub fn replaced_token_auc(pair: &ElectraPair, seqs: &[TokenSeq], rng: &mut Rng) -> Result<f64> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for chunk in seqs.chunks(64) {
        let refs: Vec<&TokenSeq> = chunk.iter().collect();
        let mut g = Graph::new(&pair.store);
        let masked: Vec<(TokenSeq, Vec<usize>)> = refs
            .iter()
            .map(|s| mask_tokens(s, pair.config.mask_rate, rng))
            .collect();
        let mseqs: Vec<&[usize]> = masked.iter().map(|(m, _)| m.tokens()).collect();
        let positions: Vec<Vec<usize>> = masked.iter().map(|(_, p)| p.clone()).collect();
        let probs = pair.generator.probs(&mut g, &mseqs, &positions)?;
        let records = apply_samples(g.value(probs), pair.vocab_size, &refs, &positions, rng);
        let crefs: Vec<&[usize]> = records
            .iter()
            .map(CorruptionRecord::corrupted_tokens)
            .collect();
        let s = pair.discriminator.scores(&mut g, &crefs)?;
        scores.extend(g.value(s).iter().map(|&p| 1.0 - p));
        labels.extend(
            records
                .iter()
                .flat_map(|r| r.replaced_tokens().iter().copied()),
        );
    }
    roc_auc(&scores, &labels)
}
