use crate::data::{Dataset, NUM_CLASSES};
use crate::electra::{dense, ContextEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::glove::GloveModel;
use crate::numerics::{init, Graph, ParamId, ParamStore, Rng, Tensor, Var};
use crate::tokenizer::{encode, preprocess, TokenSeq, Vocab};

use super::lstm::{lstm_packed, LstmCell, PackPlan};

pub const ELECTRA_PREFIX: &str = "electra.";
pub const GLOVE_TABLE: &str = "glove.table";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleConfig {
    pub lstm1_units: usize,
    pub lstm2_units: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            lstm1_units: 256,
            lstm2_units: 128,
        }
    }
}

/// Contextual and static token features, concatenated per position, read by two
/// stacked LSTMs whose final hidden state feeds a softmax over the six classes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleClassifier {
    store: ParamStore,
    encoder: ContextEncoder,
    glove_table: ParamId,
    lstm1: LstmCell,
    lstm2: LstmCell,
    head_w: ParamId,
    head_b: ParamId,
}

impl EnsembleClassifier {
    /// Copies the encoder out of `source` and the summed GloVe vectors out of
    /// `glove`; the recurrent layers and head are freshly initialized.
    pub fn new(
        source: &ParamStore,
        encoder: &ContextEncoder,
        glove: &GloveModel,
        cfg: EnsembleConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = encoder.copy_to(source, &mut store, ELECTRA_PREFIX)?;
        let glove_table = store.add(GLOVE_TABLE, glove.summed_table())?;
        let d_in = encoder.config().width + glove.dim();
        let lstm1 = LstmCell::new(&mut store, "lstm1.", d_in, cfg.lstm1_units, rng)?;
        let lstm2 = LstmCell::new(&mut store, "lstm2.", cfg.lstm1_units, cfg.lstm2_units, rng)?;
        let head_w = store.add("head.w", init::glorot(cfg.lstm2_units, NUM_CLASSES, rng))?;
        let head_b = store.add("head.b", init::zeros(NUM_CLASSES))?;
        Ok(EnsembleClassifier {
            store,
            encoder,
            glove_table,
            lstm1,
            lstm2,
            head_w,
            head_b,
        })
    }

    /// Binds to a complete parameter store, e.g. one read from a checkpoint.
    pub fn from_store(
        store: ParamStore,
        encoder: EncoderConfig,
        cfg: EnsembleConfig,
    ) -> Result<Self> {
        let enc = ContextEncoder::bind(&store, ELECTRA_PREFIX, encoder)?;
        let glove_table = store.require(GLOVE_TABLE)?;
        let table = store.get(glove_table);
        if table.shape().len() != 2 {
            return Err(Error::Integrity(format!(
                "{GLOVE_TABLE} has shape {:?}",
                table.shape()
            )));
        }
        let d_in = encoder.width + table.shape()[1];
        let lstm1 = LstmCell::bind(&store, "lstm1.", d_in, cfg.lstm1_units)?;
        let lstm2 = LstmCell::bind(&store, "lstm2.", cfg.lstm1_units, cfg.lstm2_units)?;
        let head_w = store.require("head.w")?;
        let head_b = store.require("head.b")?;
        if store.get(head_w).shape() != [cfg.lstm2_units, NUM_CLASSES]
            || store.get(head_b).shape() != [NUM_CLASSES]
        {
            return Err(Error::Integrity(
                "classification head has the wrong shape".into(),
            ));
        }
        Ok(EnsembleClassifier {
            store,
            encoder: enc,
            glove_table,
            lstm1,
            lstm2,
            head_w,
            head_b,
        })
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

    pub fn encoder(&self) -> &ContextEncoder {
        &self.encoder
    }

    pub fn glove_table(&self) -> ParamId {
        self.glove_table
    }

    pub fn lstm1(&self) -> &LstmCell {
        &self.lstm1
    }

    pub fn lstm2(&self) -> &LstmCell {
        &self.lstm2
    }

    pub fn head(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    pub fn config(&self) -> EnsembleConfig {
        EnsembleConfig {
            lstm1_units: self.lstm1.units(),
            lstm2_units: self.lstm2.units(),
        }
    }

    pub fn glove_dim(&self) -> usize {
        self.store.get(self.glove_table).shape()[1]
    }

    pub fn set_frozen(&mut self, electra: bool, glove: bool) {
        for id in self.encoder.param_ids() {
            self.store.set_frozen(id, electra);
        }
        self.store.set_frozen(self.glove_table, glove);
    }

    /// Class probabilities `[B x 6]` for a batch given as the non-padding token
    /// ids of each question under the two branch vocabularies.
    pub fn forward(&self, g: &mut Graph, electra: &[&[usize]], glove: &[&[usize]]) -> Result<Var> {
        if electra.len() != glove.len() {
            return Err(Error::Alignment(format!(
                "{} electra sequences for {} glove sequences",
                electra.len(),
                glove.len()
            )));
        }
        for (k, (e, w)) in electra.iter().zip(glove).enumerate() {
            if e.len() != w.len() {
                return Err(Error::Alignment(format!(
                    "question {k} has {} electra tokens but {} glove tokens",
                    e.len(),
                    w.len()
                )));
            }
        }
        let lengths: Vec<usize> = electra.iter().map(|s| s.len()).collect();
        let plan = PackPlan::new(&lengths);
        let features = if plan.total() == 0 {
            g.zeros(0, self.lstm1.input_dim())
        } else {
            let ctx = self.encoder.forward(g, electra)?;
            let table = g.param(self.glove_table);
            let ids: Vec<usize> = glove.iter().flat_map(|s| s.iter().copied()).collect();
            let stat = g.gather_rows(table, &ids)?;
            let x = g.concat_cols(&[ctx, stat])?;
            g.gather_rows(x, &plan.time_major_rows())?
        };
        let h1 = lstm_packed(g, &self.lstm1, features, &plan)?;
        let h2 = lstm_packed(g, &self.lstm2, h1.hidden, &plan)?;
        let logits = dense(g, h2.final_h, self.head_w, self.head_b)?;
        g.softmax_rows(logits)
    }
}

/// Class probabilities for one question encoded under both vocabularies.
pub fn ensemble_forward(
    model: &EnsembleClassifier,
    seq_e: &TokenSeq,
    seq_g: &TokenSeq,
) -> Result<[f64; NUM_CLASSES]> {
    if seq_e.true_length() != seq_g.true_length() {
        return Err(Error::Alignment(format!(
            "true lengths differ: electra {} vs glove {}",
            seq_e.true_length(),
            seq_g.true_length()
        )));
    }
    let mut g = Graph::new(model.store());
    let p = model.forward(&mut g, &[seq_e.tokens()], &[seq_g.tokens()])?;
    Ok(g.value(p).try_into().expect("six probabilities"))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = k;
        }
    }
    best
}

/// A question encoded under both branch vocabularies, with its gold class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub electra: TokenSeq,
    pub glove: TokenSeq,
    pub label: usize,
}

pub const EVAL_CHUNK: usize = 64;

/// Probabilities for many examples, computed in fixed-size chunks in input order.
pub fn predict_batch(
    model: &EnsembleClassifier,
    examples: &[EncodedExample],
) -> Result<Vec<[f64; NUM_CLASSES]>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_CHUNK) {
        let e: Vec<&[usize]> = chunk.iter().map(|x| x.electra.tokens()).collect();
        let w: Vec<&[usize]> = chunk.iter().map(|x| x.glove.tokens()).collect();
        let mut g = Graph::new(model.store());
        let p = model.forward(&mut g, &e, &w)?;
        out.extend(
            g.value(p)
                .chunks(NUM_CLASSES)
                .map(|r| <[f64; NUM_CLASSES]>::try_from(r).expect("six")),
        );
    }
    Ok(out)
}

/// A trained model bundled with the vocabularies and sequence length it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionClassifier {
    pub model: EnsembleClassifier,
    pub electra_vocab: Vocab,
    pub glove_vocab: Vocab,
    pub max_len: usize,
}

impl QuestionClassifier {
    pub fn encode(&self, text: &str) -> (TokenSeq, TokenSeq) {
        let tokens = preprocess(text);
        (
            encode(&tokens, &self.electra_vocab, self.max_len),
            encode(&tokens, &self.glove_vocab, self.max_len),
        )
    }

    pub fn encode_dataset(&self, ds: &Dataset) -> Vec<EncodedExample> {
        encode_dataset(ds, &self.electra_vocab, &self.glove_vocab, self.max_len)
    }

    /// Predicted class index and the full distribution.
    pub fn predict(&self, text: &str) -> Result<(usize, [f64; NUM_CLASSES])> {
        let (e, w) = self.encode(text);
        let probs = ensemble_forward(&self.model, &e, &w)?;
        Ok((argmax(&probs), probs))
    }
}

pub fn encode_dataset(
    ds: &Dataset,
    electra: &Vocab,
    glove: &Vocab,
    max_len: usize,
) -> Vec<EncodedExample> {
    ds.examples()
        .iter()
        .map(|ex| {
            let tokens = preprocess(&ex.text);
            EncodedExample {
                electra: encode(&tokens, electra, max_len),
                glove: encode(&tokens, glove, max_len),
                label: ex.coarse,
            }
        })
        .collect()
}

/// Stacked per-position features `[max_len x (D_m + D_glove)]` for one question,
/// zero past the true length. Exposed for inspection and tests.
pub fn concat_features(
    model: &EnsembleClassifier,
    seq_e: &TokenSeq,
    seq_g: &TokenSeq,
) -> Result<Tensor> {
    if seq_e.true_length() != seq_g.true_length() {
        return Err(Error::Alignment("true lengths differ".into()));
    }
    let mut g = Graph::new(model.store());
    let d = model.lstm1.input_dim();
    let n = seq_e.true_length();
    let mut data = if n == 0 {
        Vec::new()
    } else {
        let ctx = model.encoder.forward(&mut g, &[seq_e.tokens()])?;
        let table = g.param(model.glove_table);
        let stat = g.gather_rows(table, seq_g.tokens())?;
        let x = g.concat_cols(&[ctx, stat])?;
        g.value(x).to_vec()
    };
    data.resize(seq_e.max_len() * d, 0.0);
    Tensor::new(vec![seq_e.max_len(), d], data)
}
