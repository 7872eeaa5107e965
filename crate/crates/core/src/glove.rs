//! GloVe: a harmonically weighted co-occurrence matrix and word vectors fitted
//! by weighted least squares so that `w_i . w~_j + b_i + b~_j ~ ln X_ij`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{init, Adam, AdamConfig, Gradients, ParamId, ParamStore, Rng, Tensor};
use crate::tokenizer::{TokenSeq, Vocab, RESERVED};

/// Sparse symmetric co-occurrence counts. Reserved ids never appear.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    vocab_size: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl CooccurrenceMatrix {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &x)| (i, j, x))
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Debug dump, one `i j X_ij` triplet per line.
    pub fn to_triplets(&self) -> String {
        self.iter()
            .map(|(i, j, x)| format!("{i} {j} {x}\n"))
            .collect()
    }
}

/// Adds `1/d` to `X_ij` and `X_ji` for every pair at distance `d <= window` within a
/// sentence. Reserved ids are skipped but still occupy their positions.
pub fn build_cooccurrence(
    corpus: &[Vec<usize>],
    vocab_size: usize,
    window: usize,
) -> Result<CooccurrenceMatrix> {
    if window == 0 {
        return Err(Error::Config(
            "co-occurrence window must be at least 1".into(),
        ));
    }
    let reserved = RESERVED.len();
    let mut entries = BTreeMap::new();
    for sentence in corpus {
        for (p, &i) in sentence.iter().enumerate() {
            if i < reserved {
                continue;
            }
            if i >= vocab_size {
                return Err(Error::Index(format!(
                    "token id {i} outside vocabulary of {vocab_size}"
                )));
            }
            for d in 1..=window {
                let Some(&j) = sentence.get(p + d) else { break };
                if j < reserved {
                    continue;
                }
                if j >= vocab_size {
                    return Err(Error::Index(format!(
                        "token id {j} outside vocabulary of {vocab_size}"
                    )));
                }
                let w = 1.0 / d as f64;
                *entries.entry((i, j)).or_insert(0.0) += w;
                *entries.entry((j, i)).or_insert(0.0) += w;
            }
        }
    }
    Ok(CooccurrenceMatrix {
        vocab_size,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GloveConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    pub x_max: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for GloveConfig {
    fn default() -> Self {
        GloveConfig {
            dim: 50,
            window: 5,
            epochs: 300,
            lr: 0.05,
            x_max: 100.0,
            alpha: 0.75,
            seed: 0,
        }
    }
}

/// Target vectors `w`, context vectors `w~`, and their biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveModel {
    store: ParamStore,
    w: ParamId,
    w_ctx: ParamId,
    b: ParamId,
    b_ctx: ParamId,
}

impl GloveModel {
    pub fn from_parts(w: Tensor, w_ctx: Tensor, b: Tensor, b_ctx: Tensor) -> Result<Self> {
        let (v, d) = w.matrix_dims();
        if w.shape().len() != 2
            || w_ctx.shape() != w.shape()
            || b.shape() != [v]
            || b_ctx.shape() != [v]
            || d == 0
        {
            return Err(Error::Dimension(
                "inconsistent GloVe parameter shapes".into(),
            ));
        }
        let mut store = ParamStore::new();
        let w = store.add("glove.w", w)?;
        let w_ctx = store.add("glove.w_ctx", w_ctx)?;
        let b = store.add("glove.b", b)?;
        let b_ctx = store.add("glove.b_ctx", b_ctx)?;
        Ok(GloveModel {
            store,
            w,
            w_ctx,
            b,
            b_ctx,
        })
    }

    /// Small uniform vectors, zero biases, zero rows for reserved ids.
    pub fn init(vocab_size: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let scale = 0.5 / dim as f64;
        let mut w = init::uniform(vocab_size, dim, scale, rng);
        let mut w_ctx = init::uniform(vocab_size, dim, scale, rng);
        for r in 0..RESERVED.len().min(vocab_size) {
            w.row_mut(r).fill(0.0);
            w_ctx.row_mut(r).fill(0.0);
        }
        Self::from_parts(w, w_ctx, init::zeros(vocab_size), init::zeros(vocab_size))
    }

    pub fn vocab_size(&self) -> usize {
        self.store.get(self.w).matrix_dims().0
    }

    pub fn dim(&self) -> usize {
        self.store.get(self.w).matrix_dims().1
    }

    pub fn w(&self) -> &Tensor {
        self.store.get(self.w)
    }

    pub fn w_ctx(&self) -> &Tensor {
        self.store.get(self.w_ctx)
    }

    pub fn b(&self) -> &Tensor {
        self.store.get(self.b)
    }

    pub fn b_ctx(&self) -> &Tensor {
        self.store.get(self.b_ctx)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// `w_i . w~_j + b_i + b~_j`.
    pub fn score(&self, i: usize, j: usize) -> f64 {
        let (wi, cj) = (self.w().row(i), self.w_ctx().row(j));
        dot(wi, cj) + self.b().data()[i] + self.b_ctx().data()[j]
    }

    /// Word vector used downstream: `w + w~`.
    pub fn vector(&self, id: usize) -> Vec<f64> {
        self.w()
            .row(id)
            .iter()
            .zip(self.w_ctx().row(id))
            .map(|(a, b)| a + b)
            .collect()
    }

    /// `[V x D]` table of `w + w~`.
    pub fn summed_table(&self) -> Tensor {
        let (v, d) = self.w().matrix_dims();
        let data = self
            .w()
            .data()
            .iter()
            .zip(self.w_ctx().data())
            .map(|(a, b)| a + b)
            .collect();
        Tensor::new(vec![v, d], data).expect("shape matches")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(x / x_max)^alpha`, capped at 1.
pub fn weight(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x < x_max {
        (x / x_max).powf(alpha)
    } else {
        1.0
    }
}

/// `J = sum f(X_ij) (w_i . w~_j + b_i + b~_j - ln X_ij)^2` over stored entries.
pub fn glove_loss(model: &GloveModel, cooc: &CooccurrenceMatrix, x_max: f64, alpha: f64) -> f64 {
    cooc.iter()
        .map(|(i, j, x)| {
            let r = model.score(i, j) - x.ln();
            weight(x, x_max, alpha) * r * r
        })
        .sum()
}

/// Loss together with its analytic gradient for every GloVe parameter.
pub fn glove_loss_grad(
    model: &GloveModel,
    cooc: &CooccurrenceMatrix,
    x_max: f64,
    alpha: f64,
) -> (f64, Gradients) {
    let (v, d) = model.w().matrix_dims();
    let mut gw = vec![0.0; v * d];
    let mut gc = vec![0.0; v * d];
    let mut gb = vec![0.0; v];
    let mut gbc = vec![0.0; v];
    let mut loss = 0.0;
    for (i, j, x) in cooc.iter() {
        let f = weight(x, x_max, alpha);
        let r = model.score(i, j) - x.ln();
        loss += f * r * r;
        let k = 2.0 * f * r;
        let (wi, cj) = (model.w().row(i), model.w_ctx().row(j));
        for t in 0..d {
            gw[i * d + t] += k * cj[t];
            gc[j * d + t] += k * wi[t];
        }
        gb[i] += k;
        gbc[j] += k;
    }
    let mut grads = Gradients::for_store(&model.store);
    grads.set(model.w, gw);
    grads.set(model.w_ctx, gc);
    grads.set(model.b, gb);
    grads.set(model.b_ctx, gbc);
    (loss, grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GloveTrace {
    /// Loss at the start of every epoch.
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

/// `f`-weighted mean of `ln X_ij` over stored entries.
fn mean_log_count(cooc: &CooccurrenceMatrix, x_max: f64, alpha: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (_, _, x) in cooc.iter() {
        let f = weight(x, x_max, alpha);
        num += f * x.ln();
        den += f;
    }
    num / den
}

/// Full-batch Adam on the weighted least-squares objective. Both bias vectors start
/// at half the weighted mean log count.
pub fn train_glove(
    corpus: &[Vec<usize>],
    vocab_size: usize,
    cfg: &GloveConfig,
) -> Result<(GloveModel, GloveTrace)> {
    let cooc = build_cooccurrence(corpus, vocab_size, cfg.window)?;
    train_glove_on(&cooc, cfg)
}

pub fn train_glove_on(
    cooc: &CooccurrenceMatrix,
    cfg: &GloveConfig,
) -> Result<(GloveModel, GloveTrace)> {
    if cooc.is_empty() {
        return Err(Error::Config(
            "co-occurrence matrix is empty; nothing to train".into(),
        ));
    }
    if cfg.dim == 0 {
        return Err(Error::Config("GloVe dimension must be at least 1".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut model = GloveModel::init(cooc.vocab_size(), cfg.dim, &mut rng)?;
    let offset = mean_log_count(cooc, cfg.x_max, cfg.alpha) / 2.0;
    for id in [model.b, model.b_ctx] {
        model.store.get_mut(id).data_mut()[RESERVED.len().min(cooc.vocab_size())..].fill(offset);
    }
    let mut adam = Adam::new(&model.store, AdamConfig::with_lr(cfg.lr));
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grads) = glove_loss_grad(&model, cooc, cfg.x_max, cfg.alpha);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "GloVe loss became {loss} at epoch {epoch}"
            )));
        }
        losses.push(loss);
        grads.accumulate_into(&mut model.store);
        adam.step(&mut model.store)?;
    }
    let final_loss = glove_loss(&model, cooc, cfg.x_max, cfg.alpha);
    Ok((model, GloveTrace { losses, final_loss }))
}

/// `[max_len x D]`: row `t` is `w + w~` of token `t`; padding rows are zero.
pub fn embed_sequence(model: &GloveModel, seq: &TokenSeq) -> Result<Tensor> {
    let d = model.dim();
    let v = model.vocab_size();
    let mut out = Tensor::zeros(&[seq.max_len(), d]);
    for (t, &id) in seq.tokens().iter().enumerate() {
        if id >= v {
            return Err(Error::Index(format!(
                "token id {id} outside vocabulary of {v}"
            )));
        }
        out.row_mut(t).copy_from_slice(&model.vector(id));
    }
    Ok(out)
}

/// Standard GloVe text format: `token v1 ... vD` per line, one line per non-reserved
/// vocabulary entry, vectors are `w + w~`.
pub fn export_text(model: &GloveModel, vocab: &Vocab) -> Result<String> {
    if vocab.len() != model.vocab_size() {
        return Err(Error::Dimension(format!(
            "vocabulary of {} for model of {}",
            vocab.len(),
            model.vocab_size()
        )));
    }
    let mut out = String::new();
    for (id, token) in vocab.tokens().iter().enumerate().skip(RESERVED.len()) {
        out.push_str(token);
        for v in model.vector(id) {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads GloVe text vectors from any producer. The result has `w` set to the file's
/// vectors and `w~`, biases and reserved rows zero, so `embed_sequence` returns the
/// file's vectors. Repeated tokens keep their first vector.
pub fn import_text(text: &str) -> Result<(Vocab, GloveModel)> {
    let mut tokens: Vec<String> = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut dim = None;
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            return Err(Error::parse(line_no, "blank line"));
        };
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("not a number: {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if values.is_empty() => return Err(Error::parse(line_no, "no vector values")),
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    line_no,
                    format!("expected {d} values, found {}", values.len()),
                ))
            }
            _ => {}
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(line_no, "non-finite vector value"));
        }
        if RESERVED.contains(&token) || !seen.insert(token.to_string()) {
            log::warn!("skipping repeated or reserved token {token:?} on line {line_no}");
            continue;
        }
        tokens.push(token.to_string());
        rows.extend(values);
    }
    let dim = dim.ok_or_else(|| Error::parse(0, "empty vectors file"))?;
    let vocab = Vocab::from_tokens(tokens);
    let v = vocab.len();
    let mut w = vec![0.0; RESERVED.len() * dim];
    w.extend(rows);
    let model = GloveModel::from_parts(
        Tensor::new(vec![v, dim], w)?,
        Tensor::zeros(&[v, dim]),
        init::zeros(v),
        init::zeros(v),
    )?;
    Ok((vocab, model))
}

pub fn save_vectors(path: &Path, model: &GloveModel, vocab: &Vocab) -> Result<()> {
    fs::write(path, export_text(model, vocab)?).map_err(|e| Error::io(path, e))
}

pub fn load_vectors(path: &Path) -> Result<(Vocab, GloveModel)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    import_text(&text)
}
