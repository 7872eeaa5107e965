//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use trec_qc::data::{synthetic_dataset, Dataset, Split};
use trec_qc::electra::{ElectraConfig, ElectraPair};
use trec_qc::ensemble::{EncodedExample, EnsembleClassifier, EnsembleConfig, QuestionClassifier};
use trec_qc::glove::GloveModel;
use trec_qc::numerics::{check_gradient, Graph, ParamId, ParamStore, Rng, Tensor, Var};
use trec_qc::tokenizer::{build_vocab, preprocess};

pub const K: usize = 6;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain gate weights for the scalar oracle: `w[k]` is `[D_in][U]`, `v[k]` is `[U][U]`.
pub struct ScalarLstm {
    pub w: [Vec<Vec<f64>>; 4],
    pub v: [Vec<Vec<f64>>; 4],
    pub bx: [Vec<f64>; 4],
    pub bh: [Vec<f64>; 4],
}

impl ScalarLstm {
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let u = h.len();
        let mut pre = [vec![0.0; u], vec![0.0; u], vec![0.0; u], vec![0.0; u]];
        for k in 0..4 {
            for j in 0..u {
                let mut s = self.bx[k][j] + self.bh[k][j];
                for (d, xd) in x.iter().enumerate() {
                    s += xd * self.w[k][d][j];
                }
                for (m, hm) in h.iter().enumerate() {
                    s += hm * self.v[k][m][j];
                }
                pre[k][j] = s;
            }
        }
        let mut hn = vec![0.0; u];
        let mut cn = vec![0.0; u];
        for j in 0..u {
            let i = sigmoid(pre[0][j]);
            let f = sigmoid(pre[1][j]);
            let g = pre[2][j].tanh();
            let o = sigmoid(pre[3][j]);
            cn[j] = f * c[j] + i * g;
            hn[j] = o * cn[j].tanh();
        }
        (hn, cn)
    }
}

pub fn confusion_oracle(p: &[usize], g: &[usize]) -> [[f64; K]; K] {
    let mut m = [[0.0; K]; K];
    for (&a, &b) in p.iter().zip(g) {
        m[b][a] += 1.0;
    }
    m
}

/// (accuracy, macro precision, macro recall, macro F1, label MSE) by nested loops.
pub fn metrics_oracle(p: &[usize], g: &[usize]) -> (f64, f64, f64, f64, f64) {
    let m = confusion_oracle(p, g);
    let n = p.len() as f64;
    let mut correct = 0.0;
    for k in 0..K {
        correct += m[k][k];
    }
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for k in 0..K {
        let tp = m[k][k];
        let mut col = 0.0;
        let mut row = 0.0;
        for j in 0..K {
            col += m[j][k];
            row += m[k][j];
        }
        let pr = if col > 0.0 { tp / col } else { 0.0 };
        let rc = if row > 0.0 { tp / row } else { 0.0 };
        let f = if pr + rc > 0.0 {
            2.0 * pr * rc / (pr + rc)
        } else {
            0.0
        };
        ps += pr;
        rs += rc;
        fs += f;
    }
    let mut se = 0.0;
    for (&a, &b) in p.iter().zip(g) {
        let d = a as f64 - b as f64;
        se += d * d;
    }
    (
        correct / n,
        ps / K as f64,
        rs / K as f64,
        fs / K as f64,
        se / n,
    )
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    num / (da * db).sqrt()
}

/// Two disjoint topic vocabularies of 25 words; each sentence draws from one topic.
pub fn two_topic_corpus(tokens: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = Rng::new(seed);
    let mut corpus = Vec::new();
    let mut total = 0;
    while total < tokens {
        let topic = rng.below(2);
        let len = 8 + rng.below(8);
        let s: Vec<usize> = (0..len).map(|_| 3 + topic * 25 + rng.below(25)).collect();
        total += s.len();
        corpus.push(s);
    }
    corpus
}

pub fn tiny_electra() -> ElectraConfig {
    ElectraConfig {
        gen_width: 8,
        gen_heads: 2,
        disc_width: 8,
        disc_layers: 1,
        disc_heads: 2,
        ff_mult: 2,
        max_positions: 16,
        ..ElectraConfig::default()
    }
}

/// A randomly initialised classifier (D_m = 8, GloVe 4, U1 = 5, U2 = 3) over synthetic questions.
pub fn tiny_classifier(seed: u64, n: usize) -> (QuestionClassifier, Dataset, Vec<EncodedExample>) {
    let ds = synthetic_dataset(n, Split::Train, seed);
    let toks: Vec<Vec<String>> = ds.examples().iter().map(|e| preprocess(&e.text)).collect();
    let vocab = build_vocab(&toks, 1, 1000);
    let pair = ElectraPair::new(
        vocab.len(),
        ElectraConfig {
            seed,
            ..tiny_electra()
        },
    )
    .unwrap();
    let glove = GloveModel::init(vocab.len(), 4, &mut Rng::new(seed + 1)).unwrap();
    let model = EnsembleClassifier::new(
        pair.store(),
        pair.discriminator().encoder(),
        &glove,
        EnsembleConfig {
            lstm1_units: 5,
            lstm2_units: 3,
        },
        &mut Rng::new(seed + 2),
    )
    .unwrap();
    let qc = QuestionClassifier {
        model,
        electra_vocab: vocab.clone(),
        glove_vocab: vocab,
        max_len: 16,
    };
    let ex = qc.encode_dataset(&ds);
    (qc, ds, ex)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.uniform_range(-2.0, 2.0))
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

type OpBuilder = Box<dyn Fn(&mut Graph, &[ParamId]) -> trec_qc::Result<Var>>;

/// Every differentiable graph op, each as (name, input shapes, builder of its output).
fn op_cases() -> Vec<(&'static str, Vec<(usize, usize)>, OpBuilder)> {
    vec![
        (
            "matmul",
            vec![(3, 4), (4, 2)],
            Box::new(|g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                g.matmul(a, b)
            }),
        ),
        (
            "matmul_nt",
            vec![(3, 4), (5, 4)],
            Box::new(|g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                g.matmul_nt(a, b)
            }),
        ),
        (
            "add",
            vec![(3, 4), (3, 4)],
            Box::new(|g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                g.add(a, b)
            }),
        ),
        (
            "add_row",
            vec![(3, 4), (1, 4)],
            Box::new(|g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                g.add_row(a, b)
            }),
        ),
        (
            "mul",
            vec![(3, 4), (3, 4)],
            Box::new(|g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                g.mul(a, b)
            }),
        ),
        (
            "scale",
            vec![(3, 4)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                Ok(g.scale(a, -1.7))
            }),
        ),
        (
            "sigmoid",
            vec![(3, 4)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                Ok(g.sigmoid(a))
            }),
        ),
        (
            "tanh",
            vec![(3, 4)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                Ok(g.tanh(a))
            }),
        ),
        (
            "gelu",
            vec![(3, 4)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                Ok(g.gelu(a))
            }),
        ),
        (
            "softmax_rows",
            vec![(3, 5)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                g.softmax_rows(a)
            }),
        ),
        (
            "layer_norm",
            vec![(3, 5), (1, 5), (1, 5)],
            Box::new(|g, p| {
                let (x, gm, bt) = (g.param(p[0]), g.param(p[1]), g.param(p[2]));
                g.layer_norm(x, gm, bt, 1e-5)
            }),
        ),
        (
            "concat_cols",
            vec![(3, 2), (3, 4)],
            Box::new(|g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                g.concat_cols(&[a, b, a])
            }),
        ),
        (
            "concat_rows",
            vec![(2, 3), (4, 3)],
            Box::new(|g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                g.concat_rows(&[b, a, b])
            }),
        ),
        (
            "slice",
            vec![(4, 5)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                g.slice(a, 1, 2, 1, 3)
            }),
        ),
        (
            "slice_rows",
            vec![(4, 3)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                g.slice_rows(a, 1, 3)
            }),
        ),
        (
            "gather_rows",
            vec![(4, 3)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                g.gather_rows(a, &[3, 0, 3, 2])
            }),
        ),
        (
            "sum",
            vec![(3, 4)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                let s = g.sum(a);
                let sq = g.mul(s, s)?;
                Ok(sq)
            }),
        ),
        (
            "mean",
            vec![(3, 4)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                let m = g.mean(a)?;
                g.mul(m, m)
            }),
        ),
        (
            "cross_entropy",
            vec![(4, 6)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                let probs = g.softmax_rows(a)?;
                g.cross_entropy(probs, &[0, 5, 2, 2])
            }),
        ),
        (
            "binary_nll",
            vec![(5, 1)],
            Box::new(|g, p| {
                let a = g.param(p[0]);
                let s = g.sigmoid(a);
                g.binary_nll(s, &[true, false, false, true, false])
            }),
        ),
    ]
}

/// Max relative gradient error of every op on random inputs in [-2, 2], with the
/// output contracted against a fixed random matrix so upstream gradients vary.
pub fn op_gradchecks(seed: u64, h: f64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    for (name, shapes, build) in op_cases() {
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(k, &(r, c))| {
                store
                    .add(format!("{name}.{k}"), random_matrix(r, c, &mut rng))
                    .unwrap()
            })
            .collect();
        let (r, c) = {
            let mut g = Graph::new(&store);
            let v = build(&mut g, &ids).unwrap();
            g.dims(v)
        };
        let weights = random_matrix(r, c, &mut rng);
        let report = check_gradient(&mut store, h, |g| {
            let v = build(g, &ids)?;
            let w = g.constant(&weights);
            let prod = g.mul(v, w)?;
            Ok(g.sum(prod))
        })
        .unwrap();
        out.push((name, report.max_rel_error));
    }
    out
}

pub struct GloveBehavior {
    pub spearman: f64,
    /// Largest epoch-over-epoch relative loss increase.
    pub worst_rise: f64,
    pub first_loss: f64,
    pub final_loss: f64,
}

/// Fits GloVe to a two-topic corpus (50 content words, 10k tokens) and measures
/// how well fitted scores rank the observed log co-occurrences.
pub fn glove_two_topic(seed: u64) -> GloveBehavior {
    use trec_qc::glove::{build_cooccurrence, train_glove_on, GloveConfig};
    let corpus = two_topic_corpus(10_000, seed);
    let cooc = build_cooccurrence(&corpus, 53, 5).unwrap();
    let cfg = GloveConfig {
        dim: 10,
        epochs: 300,
        seed,
        ..GloveConfig::default()
    };
    let (model, trace) = train_glove_on(&cooc, &cfg).unwrap();
    let (fitted, logs): (Vec<f64>, Vec<f64>) = cooc
        .iter()
        .map(|(i, j, x)| (model.score(i, j), x.ln()))
        .unzip();
    let mut losses = trace.losses.clone();
    losses.push(trace.final_loss);
    let worst_rise = losses
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    GloveBehavior {
        spearman: spearman(&fitted, &logs),
        worst_rise,
        first_loss: losses[0],
        final_loss: trace.final_loss,
    }
}

/// Relative gradient error of the GloVe loss on a small two-topic co-occurrence matrix.
pub fn glove_gradcheck(seed: u64, h: f64) -> f64 {
    use trec_qc::glove::{build_cooccurrence, glove_loss, glove_loss_grad, GloveModel};
    use trec_qc::numerics::check_gradient_with;
    let corpus = two_topic_corpus(400, seed);
    let x = build_cooccurrence(&corpus, 53, 4).unwrap();
    let mut model = GloveModel::init(53, 3, &mut Rng::new(seed).derive(1)).unwrap();
    let (_, grads) = glove_loss_grad(&model, &x, 10.0, 0.75);
    let names: Vec<String> = model
        .store()
        .iter()
        .map(|(_, n, _)| n.to_string())
        .collect();
    let report = check_gradient_with(model.store_mut(), &grads, h, |s| {
        let part = |i: usize| s.require(&names[i]).map(|id| s.get(id).clone());
        let m = GloveModel::from_parts(part(0)?, part(1)?, part(2)?, part(3)?)?;
        Ok(glove_loss(&m, &x, 10.0, 0.75))
    })
    .unwrap();
    report.max_rel_error
}

use trec_qc::ensemble::LstmCell;

/// Copies a cell's parameters into plain nested vectors.
pub fn scalar_lstm_from(store: &ParamStore, cell: &LstmCell) -> ScalarLstm {
    let (d, u) = (cell.input_dim(), cell.units());
    let mat = |name: &str, rows: usize| -> Vec<Vec<f64>> {
        store
            .get(cell.weight(name).unwrap())
            .data()
            .chunks(u)
            .take(rows)
            .map(<[f64]>::to_vec)
            .collect()
    };
    let vec = |name: &str| store.get(cell.bias(name).unwrap()).data().to_vec();
    ScalarLstm {
        w: [
            mat("w_ii", d),
            mat("w_if", d),
            mat("w_ig", d),
            mat("w_io", d),
        ],
        v: [
            mat("w_hi", u),
            mat("w_hf", u),
            mat("w_hg", u),
            mat("w_ho", u),
        ],
        bx: [vec("b_ii"), vec("b_if"), vec("b_ig"), vec("b_io")],
        bh: [vec("b_hi"), vec("b_hf"), vec("b_hg"), vec("b_ho")],
    }
}

/// Max |difference| between `lstm_cell_step` and the scalar oracle over `cases`
/// random cells, inputs and states with U in {1, 4} and D_in in {1, 3}.
pub fn lstm_oracle_max_diff(cases: usize, seed: u64) -> f64 {
    use trec_qc::ensemble::{lstm_cell_step, LstmState};
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for k in 0..cases {
        let u = [1, 4][k % 2];
        let d = [1, 3][(k / 2) % 2];
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c.", d, u, &mut rng).unwrap();
        for id in cell.param_ids() {
            for v in store.get_mut(id).data_mut() {
                *v = rng.uniform_range(-2.0, 2.0);
            }
        }
        let x: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let h: Vec<f64> = (0..u).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let c: Vec<f64> = (0..u).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let got = lstm_cell_step(
            &store,
            &cell,
            &x,
            &LstmState {
                h: h.clone(),
                c: c.clone(),
            },
        )
        .unwrap();
        let (oh, oc) = scalar_lstm_from(&store, &cell).step(&x, &h, &c);
        for (a, b) in got.h.iter().zip(&oh).chain(got.c.iter().zip(&oc)) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Relative gradient error of the joint generator/discriminator loss on a width-8 pair.
pub fn electra_gradcheck(seed: u64, h: f64) -> f64 {
    use trec_qc::electra::record_losses;
    use trec_qc::tokenizer::TokenSeq;
    let cfg = ElectraConfig {
        gen_width: 8,
        gen_heads: 2,
        disc_width: 8,
        disc_heads: 2,
        disc_layers: 1,
        ff_mult: 2,
        max_positions: 8,
        mask_rate: 0.3,
        seed,
        ..ElectraConfig::default()
    };
    let pair = ElectraPair::new(12, cfg).unwrap();
    let mut rng = Rng::new(seed).derive(11);
    let seqs = [
        vec![3, 4, 5, 6, 7, 0, 0, 0],
        vec![8, 9, 10, 11, 0, 0, 0, 0],
        vec![5, 5, 3, 0, 0, 0, 0, 0],
    ];
    let records: Vec<_> = seqs
        .iter()
        .map(|ids| {
            let n = ids.iter().take_while(|&&i| i != 0).count();
            pair.corrupt(
                &TokenSeq::new(ids.clone(), n).unwrap(),
                cfg.mask_rate,
                &mut rng,
            )
            .unwrap()
        })
        .collect();
    let mut store = pair.store().clone();
    let report = check_gradient(&mut store, h, |g| {
        let (mlm, rtd) = record_losses(g, &pair, &records)?;
        g.add(mlm, rtd)
    })
    .unwrap();
    report.max_rel_error
}

/// Relative gradient error of the mean cross-entropy of the tiny ensemble over a
/// four-question batch, every parameter (including both embedding tables) trainable.
pub fn ensemble_gradcheck(seed: u64, h: f64) -> trec_qc::numerics::GradCheckReport {
    let (mut qc, _, ex) = tiny_classifier(seed, 12);
    qc.model.set_frozen(false, false);
    let batch = &ex[..4];
    let e: Vec<&[usize]> = batch.iter().map(|x| x.electra.tokens()).collect();
    let w: Vec<&[usize]> = batch.iter().map(|x| x.glove.tokens()).collect();
    let labels: Vec<usize> = batch.iter().map(|x| x.label).collect();
    let model = qc.model.clone();
    let mut store = qc.model.store().clone();
    check_gradient(&mut store, h, |g| {
        let p = model.forward(g, &e, &w)?;
        g.cross_entropy(p, &labels)
    })
    .unwrap()
}
