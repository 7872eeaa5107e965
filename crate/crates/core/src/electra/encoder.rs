//! BERT-style encoder over packed sequences.
//!
//! Sequences are passed as their non-padding prefixes and stacked row-wise, so
//! padding never enters an attention row: each query attends only to the keys
//! of its own sequence.

use crate::error::{Error, Result};
use crate::numerics::{init, Graph, ParamId, ParamStore, Rng, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_width: usize,
    pub max_positions: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "encoder width {} must be a positive multiple of the head count {}",
                self.width, self.heads
            )));
        }
        if self.vocab_size == 0 || self.max_positions == 0 || self.ff_width == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

const BLOCK_PARAMS: [&str; 15] = [
    "wq", "bq", "wk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g",
    "ln2_b",
];

/// Token and learned position embeddings followed by post-norm transformer blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoder {
    cfg: EncoderConfig,
    prefix: String,
    tok: ParamId,
    pos: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    blocks: Vec<Block>,
}

impl ContextEncoder {
    /// Registers freshly initialized parameters under `prefix` in `store`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let (d, f) = (cfg.width, cfg.ff_width);
        let name = |s: &str| format!("{prefix}{s}");
        let tok = store.add(name("tok_emb"), init::glorot(cfg.vocab_size, d, rng))?;
        let pos = store.add(name("pos_emb"), init::glorot(cfg.max_positions, d, rng))?;
        let emb_ln_g = store.add(name("emb_ln_g"), init::filled(d, 1.0))?;
        let emb_ln_b = store.add(name("emb_ln_b"), init::zeros(d))?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let n = |s: &str| format!("{prefix}block{l}.{s}");
            blocks.push(Block {
                wq: store.add(n("wq"), init::glorot(d, d, rng))?,
                bq: store.add(n("bq"), init::zeros(d))?,
                wk: store.add(n("wk"), init::glorot(d, d, rng))?,
                wv: store.add(n("wv"), init::glorot(d, d, rng))?,
                bv: store.add(n("bv"), init::zeros(d))?,
                wo: store.add(n("wo"), init::glorot(d, d, rng))?,
                bo: store.add(n("bo"), init::zeros(d))?,
                ln1_g: store.add(n("ln1_g"), init::filled(d, 1.0))?,
                ln1_b: store.add(n("ln1_b"), init::zeros(d))?,
                w1: store.add(n("w1"), init::glorot(d, f, rng))?,
                b1: store.add(n("b1"), init::zeros(f))?,
                w2: store.add(n("w2"), init::glorot(f, d, rng))?,
                b2: store.add(n("b2"), init::zeros(d))?,
                ln2_g: store.add(n("ln2_g"), init::filled(d, 1.0))?,
                ln2_b: store.add(n("ln2_b"), init::zeros(d))?,
            });
        }
        Ok(ContextEncoder {
            cfg,
            prefix: prefix.to_string(),
            tok,
            pos,
            emb_ln_g,
            emb_ln_b,
            blocks,
        })
    }

    fn param_names(prefix: &str, layers: usize) -> Vec<String> {
        let mut names: Vec<String> = ["tok_emb", "pos_emb", "emb_ln_g", "emb_ln_b"]
            .iter()
            .map(|s| format!("{prefix}{s}"))
            .collect();
        for l in 0..layers {
            names.extend(BLOCK_PARAMS.iter().map(|s| format!("{prefix}block{l}.{s}")));
        }
        names
    }

    /// Binds to parameters already present in `store` (e.g. loaded from a checkpoint),
    /// checking every shape against `cfg`.
    pub fn bind(store: &ParamStore, prefix: &str, cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let (v, d, f, p) = (cfg.vocab_size, cfg.width, cfg.ff_width, cfg.max_positions);
        let get = |name: String, shape: &[usize]| -> Result<ParamId> {
            let id = store.require(&name)?;
            if store.get(id).shape() != shape {
                return Err(Error::Integrity(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    store.get(id).shape()
                )));
            }
            Ok(id)
        };
        let name = |s: &str| format!("{prefix}{s}");
        let tok = get(name("tok_emb"), &[v, d])?;
        let pos = get(name("pos_emb"), &[p, d])?;
        let emb_ln_g = get(name("emb_ln_g"), &[d])?;
        let emb_ln_b = get(name("emb_ln_b"), &[d])?;
        let mut blocks = Vec::new();
        for l in 0..cfg.layers {
            let n = |s: &str| format!("{prefix}block{l}.{s}");
            blocks.push(Block {
                wq: get(n("wq"), &[d, d])?,
                bq: get(n("bq"), &[d])?,
                wk: get(n("wk"), &[d, d])?,
                wv: get(n("wv"), &[d, d])?,
                bv: get(n("bv"), &[d])?,
                wo: get(n("wo"), &[d, d])?,
                bo: get(n("bo"), &[d])?,
                ln1_g: get(n("ln1_g"), &[d])?,
                ln1_b: get(n("ln1_b"), &[d])?,
                w1: get(n("w1"), &[d, f])?,
                b1: get(n("b1"), &[f])?,
                w2: get(n("w2"), &[f, d])?,
                b2: get(n("b2"), &[d])?,
                ln2_g: get(n("ln2_g"), &[d])?,
                ln2_b: get(n("ln2_b"), &[d])?,
            });
        }
        Ok(ContextEncoder {
            cfg,
            prefix: prefix.to_string(),
            tok,
            pos,
            emb_ln_g,
            emb_ln_b,
            blocks,
        })
    }

    /// Copies this encoder's parameters from `src` into `dst` under `new_prefix`.
    pub fn copy_to(
        &self,
        src: &ParamStore,
        dst: &mut ParamStore,
        new_prefix: &str,
    ) -> Result<ContextEncoder> {
        let old = Self::param_names(&self.prefix, self.cfg.layers);
        let new = Self::param_names(new_prefix, self.cfg.layers);
        for (o, n) in old.iter().zip(new) {
            dst.add(n, src.get(src.require(o)?).clone())?;
        }
        Self::bind(dst, new_prefix, self.cfg)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn token_embedding(&self) -> ParamId {
        self.tok
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.tok, self.pos, self.emb_ln_g, self.emb_ln_b];
        for b in &self.blocks {
            ids.extend([
                b.wq, b.bq, b.wk, b.wv, b.bv, b.wo, b.bo, b.ln1_g, b.ln1_b, b.w1, b.b1, b.w2, b.b2,
                b.ln2_g, b.ln2_b,
            ]);
        }
        ids
    }

    /// Final hidden states for every sequence, stacked: `[sum(len) x width]`.
    pub fn forward(&self, g: &mut Graph, seqs: &[&[usize]]) -> Result<Var> {
        self.forward_traced(g, seqs, None)
    }

    /// Like [`forward`](Self::forward); when `attn` is given, every attention
    /// probability matrix is appended to it (layer-major, then sequence, then head).
    pub fn forward_traced(
        &self,
        g: &mut Graph,
        seqs: &[&[usize]],
        mut attn: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        for s in seqs {
            if s.len() > cfg.max_positions {
                return Err(Error::Index(format!(
                    "sequence of {} tokens exceeds {} positions",
                    s.len(),
                    cfg.max_positions
                )));
            }
            if let Some(&bad) = s.iter().find(|&&i| i >= cfg.vocab_size) {
                return Err(Error::Index(format!(
                    "token id {bad} outside vocabulary of {}",
                    cfg.vocab_size
                )));
            }
            ids.extend_from_slice(s);
            positions.extend(0..s.len());
        }
        if ids.is_empty() {
            return Ok(g.zeros(0, cfg.width));
        }

        let tok = g.param(self.tok);
        let pos = g.param(self.pos);
        let te = g.gather_rows(tok, &ids)?;
        let pe = g.gather_rows(pos, &positions)?;
        let x = g.add(te, pe)?;
        let (lg, lb) = (g.param(self.emb_ln_g), g.param(self.emb_ln_b));
        let mut x = g.layer_norm(x, lg, lb, LAYER_NORM_EPS)?;

        let dh = cfg.head_width();
        let scale = 1.0 / (dh as f64).sqrt();
        for b in &self.blocks {
            let q = dense(g, x, b.wq, b.bq)?;
            let wk = g.param(b.wk);
            let k = g.matmul(x, wk)?;
            let v = dense(g, x, b.wv, b.bv)?;
            let mut seq_out = Vec::with_capacity(seqs.len());
            let mut off = 0;
            for s in seqs {
                let n = s.len();
                if n == 0 {
                    continue;
                }
                let mut heads = Vec::with_capacity(cfg.heads);
                for h in 0..cfg.heads {
                    let qh = g.slice(q, off, n, h * dh, dh)?;
                    let kh = g.slice(k, off, n, h * dh, dh)?;
                    let vh = g.slice(v, off, n, h * dh, dh)?;
                    let scores = g.matmul_nt(qh, kh)?;
                    let scores = g.scale(scores, scale);
                    let p = g.softmax_rows(scores)?;
                    if let Some(a) = attn.as_deref_mut() {
                        a.push(p);
                    }
                    heads.push(g.matmul(p, vh)?);
                }
                seq_out.push(g.concat_cols(&heads)?);
                off += n;
            }
            let ctx = g.concat_rows(&seq_out)?;
            let attn_out = dense(g, ctx, b.wo, b.bo)?;
            let res = g.add(x, attn_out)?;
            let (g1, b1) = (g.param(b.ln1_g), g.param(b.ln1_b));
            x = g.layer_norm(res, g1, b1, LAYER_NORM_EPS)?;

            let hid = dense(g, x, b.w1, b.b1)?;
            let hid = g.gelu(hid);
            let ff = dense(g, hid, b.w2, b.b2)?;
            let res = g.add(x, ff)?;
            let (g2, b2) = (g.param(b.ln2_g), g.param(b.ln2_b));
            x = g.layer_norm(res, g2, b2, LAYER_NORM_EPS)?;
        }
        Ok(x)
    }
}

/// `x . W + b`.
pub fn dense(g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let wv = g.param(w);
    let bv = g.param(b);
    let y = g.matmul(x, wv)?;
    g.add_row(y, bv)
}
