//! Pipeline stages and the command implementations behind the `trec-qc` binary.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::data::{load_checkpoint, load_dataset, Checkpoint, Dataset, Split, CLASS_LABELS};
use crate::electra::{pretrain_electra, replaced_token_auc, ElectraPair, ElectraTrace};
use crate::ensemble::{
    evaluate, train_ensemble, EnsembleClassifier, EpochMetrics, Evaluation, QuestionClassifier,
    TrainTrace,
};
use crate::error::{Error, Result};
use crate::glove::{export_text, load_vectors, train_glove, GloveModel, GloveTrace};
use crate::numerics::Rng;
use crate::tokenizer::{build_vocab, encode, preprocess, TokenSeq, Vocab};

pub const CSV_HEADER: &str = "epoch,split,loss,accuracy,precision,recall,f1,mse";

pub const ELECTRA_VOCAB: &str = "electra";
pub const GLOVE_VOCAB: &str = "glove";

/// A missing input file is a usage error rather than an I/O failure.
pub fn require_input(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

pub fn load_split(path: &Path, split: Split) -> Result<Dataset> {
    require_input(path)?;
    load_dataset(path, split)
}

pub fn tokenize_dataset(ds: &Dataset) -> Vec<Vec<String>> {
    ds.examples().iter().map(|e| preprocess(&e.text)).collect()
}

pub fn branch_vocab(cfg: &RunConfig, train: &Dataset) -> Vocab {
    build_vocab(
        &tokenize_dataset(train),
        cfg.vocab_min_freq,
        cfg.vocab_max_size,
    )
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct GloveRun {
    pub vocab: Vocab,
    pub model: GloveModel,
    pub trace: GloveTrace,
}

pub fn pretrain_glove_stage(cfg: &RunConfig, train: &Dataset) -> Result<GloveRun> {
    let vocab = branch_vocab(cfg, train);
    let corpus: Vec<Vec<usize>> = tokenize_dataset(train)
        .iter()
        .map(|t| t.iter().map(|w| vocab.id(w)).collect())
        .collect();
    let (model, trace) = train_glove(&corpus, vocab.len(), &cfg.glove)?;
    Ok(GloveRun {
        vocab,
        model,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct ElectraRun {
    pub vocab: Vocab,
    pub pair: ElectraPair,
    pub trace: ElectraTrace,
    /// Replaced-token ROC-AUC on the held-out questions, when any were held out.
    pub heldout_auc: Option<f64>,
}

/// Splits `n` question indices into (pretraining, held-out) with a seeded shuffle.
pub fn heldout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).derive(5).shuffle(&mut order);
    let k = ((n as f64) * fraction).round() as usize;
    let held = order[..k].to_vec();
    let mut rest = order[k..].to_vec();
    rest.sort_unstable();
    (rest, held)
}

pub fn pretrain_electra_stage(cfg: &RunConfig, train: &Dataset) -> Result<ElectraRun> {
    let seed = cfg.require_seed()?;
    let vocab = branch_vocab(cfg, train);
    let seqs: Vec<TokenSeq> = tokenize_dataset(train)
        .iter()
        .map(|t| encode(t, &vocab, cfg.max_len))
        .collect();
    let (fit, held) = heldout_split(seqs.len(), cfg.electra_heldout, seed);
    let fit_seqs: Vec<TokenSeq> = fit.iter().map(|&i| seqs[i].clone()).collect();
    let held_seqs: Vec<TokenSeq> = held.iter().map(|&i| seqs[i].clone()).collect();
    let (pair, trace) = pretrain_electra(&fit_seqs, vocab.len(), cfg.electra)?;
    let heldout_auc = if held_seqs.is_empty() {
        None
    } else {
        Some(replaced_token_auc(
            &pair,
            &held_seqs,
            &mut Rng::new(seed).derive(6),
        )?)
    };
    Ok(ElectraRun {
        vocab,
        pair,
        trace,
        heldout_auc,
    })
}

pub fn electra_checkpoint(cfg: &RunConfig, vocab: &Vocab, pair: &ElectraPair) -> Checkpoint {
    Checkpoint {
        config: cfg.snapshot(),
        vocabs: vec![(ELECTRA_VOCAB.to_string(), vocab.clone())],
        params: pair.store().clone(),
    }
}

pub fn pair_from_checkpoint(ckpt: &Checkpoint) -> Result<(Vocab, ElectraPair)> {
    let cfg = RunConfig::from_text(&ckpt.config)?;
    let vocab = ckpt.vocab(ELECTRA_VOCAB)?.clone();
    let pair = ElectraPair::from_store(ckpt.params.clone(), vocab.len(), cfg.electra)?;
    Ok((vocab, pair))
}

/// Builds the ensemble from the two branches and trains it.
pub fn train_stage(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    glove: (Vocab, GloveModel),
    electra: (Vocab, ElectraPair),
) -> Result<(QuestionClassifier, TrainTrace)> {
    let seed = cfg.require_seed()?;
    train.check_trainable()?;
    let (glove_vocab, glove_model) = glove;
    let (electra_vocab, pair) = electra;
    let model = EnsembleClassifier::new(
        pair.store(),
        pair.discriminator().encoder(),
        &glove_model,
        cfg.ensemble,
        &mut Rng::new(seed).derive(4),
    )?;
    let mut qc = QuestionClassifier {
        model,
        electra_vocab,
        glove_vocab,
        max_len: cfg.max_len,
    };
    let train_ex = qc.encode_dataset(train);
    let test_ex = qc.encode_dataset(test);
    let trace = train_ensemble(&mut qc.model, &train_ex, &test_ex, &cfg.train)?;
    Ok((qc, trace))
}

/// Freshly initialized branches over the training vocabulary.
pub fn fresh_branches(
    cfg: &RunConfig,
    train: &Dataset,
) -> Result<((Vocab, GloveModel), (Vocab, ElectraPair))> {
    let seed = cfg.require_seed()?;
    let vocab = branch_vocab(cfg, train);
    let glove = GloveModel::init(vocab.len(), cfg.glove.dim, &mut Rng::new(seed).derive(7))?;
    let pair = ElectraPair::new(vocab.len(), cfg.electra)?;
    Ok(((vocab.clone(), glove), (vocab, pair)))
}

pub fn classifier_checkpoint(cfg: &RunConfig, qc: &QuestionClassifier) -> Checkpoint {
    let mut params = qc.model.store().clone();
    for id in params.ids().collect::<Vec<_>>() {
        params.set_frozen(id, false);
    }
    Checkpoint {
        config: cfg.snapshot(),
        vocabs: vec![
            (ELECTRA_VOCAB.to_string(), qc.electra_vocab.clone()),
            (GLOVE_VOCAB.to_string(), qc.glove_vocab.clone()),
        ],
        params,
    }
}

/// Restores the classifier and the configuration it was trained with.
pub fn classifier_from_checkpoint(ckpt: &Checkpoint) -> Result<(RunConfig, QuestionClassifier)> {
    let cfg = RunConfig::from_text(&ckpt.config)?;
    let electra_vocab = ckpt.vocab(ELECTRA_VOCAB)?.clone();
    let glove_vocab = ckpt.vocab(GLOVE_VOCAB)?.clone();
    let enc = cfg.electra.discriminator_encoder(electra_vocab.len());
    let model = EnsembleClassifier::from_store(ckpt.params.clone(), enc, cfg.ensemble)?;
    let max_len = cfg.max_len;
    Ok((
        cfg,
        QuestionClassifier {
            model,
            electra_vocab,
            glove_vocab,
            max_len,
        },
    ))
}

pub fn load_classifier(path: &Path) -> Result<(RunConfig, QuestionClassifier)> {
    require_input(path)?;
    classifier_from_checkpoint(&load_checkpoint(path)?)
}

pub fn csv_row(m: &EpochMetrics) -> String {
    let s = &m.summary;
    format!(
        "{},{},{},{},{},{},{},{}",
        m.epoch,
        m.split.as_str(),
        m.loss,
        s.accuracy,
        s.precision,
        s.recall,
        s.f1,
        s.mse
    )
}

pub fn trace_csv(trace: &TrainTrace) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for row in &trace.rows {
        out.push_str(&csv_row(row));
        out.push('\n');
    }
    out
}

fn training_config(cfg: &RunConfig) -> Result<()> {
    cfg.require_seed()?;
    cfg.validate()
}

/// Trains GloVe on the training file and writes the vectors file.
pub fn cmd_pretrain_glove(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    training_config(cfg)?;
    let train = load_split(&cfg.paths.train, Split::Train)?;
    let run = pretrain_glove_stage(cfg, &train)?;
    write_file(
        &cfg.paths.vectors,
        export_text(&run.model, &run.vocab)?.as_bytes(),
    )?;
    let n = run.trace.losses.len();
    for (e, loss) in run.trace.losses.iter().enumerate() {
        if e == 0 || (e + 1) % 25 == 0 || e + 1 == n {
            wln(out, format_args!("glove epoch {} loss {}", e + 1, loss))?;
        }
    }
    wln(
        out,
        format_args!("glove final loss {}", run.trace.final_loss),
    )?;
    wln(
        out,
        format_args!(
            "wrote {} vectors to {}",
            run.vocab.len() - 3,
            cfg.paths.vectors.display()
        ),
    )
}

/// Pretrains the generator/discriminator pair and writes its checkpoint.
pub fn cmd_pretrain_electra(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    training_config(cfg)?;
    let train = load_split(&cfg.paths.train, Split::Train)?;
    let run = pretrain_electra_stage(cfg, &train)?;
    write_file(
        &cfg.paths.electra_checkpoint,
        &electra_checkpoint(cfg, &run.vocab, &run.pair).to_bytes(),
    )?;
    for e in 0..run.trace.total.len() {
        wln(
            out,
            format_args!(
                "electra epoch {} mlm {} rtd {} total {}",
                e + 1,
                run.trace.mlm[e],
                run.trace.rtd[e],
                run.trace.total[e]
            ),
        )?;
    }
    match run.heldout_auc {
        Some(auc) => wln(out, format_args!("heldout replaced-token auc {auc:.4}"))?,
        None => wln(out, format_args!("heldout replaced-token auc n/a"))?,
    }
    wln(
        out,
        format_args!("wrote {}", cfg.paths.electra_checkpoint.display()),
    )
}

/// Trains the ensemble and writes the checkpoint and per-epoch metrics CSV.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainTrace> {
    training_config(cfg)?;
    let train = load_split(&cfg.paths.train, Split::Train)?;
    let test = load_split(&cfg.paths.test, Split::Test)?;
    let (glove, electra) = if cfg.fresh_init {
        fresh_branches(cfg, &train)?
    } else {
        require_input(&cfg.paths.vectors)?;
        require_input(&cfg.paths.electra_checkpoint)?;
        let glove = load_vectors(&cfg.paths.vectors)?;
        let electra = pair_from_checkpoint(&load_checkpoint(&cfg.paths.electra_checkpoint)?)?;
        (glove, electra)
    };
    let (qc, trace) = train_stage(cfg, &train, &test, glove, electra)?;
    write_file(
        &cfg.paths.checkpoint,
        &classifier_checkpoint(cfg, &qc).to_bytes(),
    )?;
    write_file(&cfg.paths.metrics, trace_csv(&trace).as_bytes())?;
    for row in &trace.rows {
        wln(out, format_args!("{}", csv_row(row)))?;
    }
    if let Some(last) = trace.last(Split::Test) {
        wln(
            out,
            format_args!("final test accuracy {}", last.summary.accuracy),
        )?;
    }
    Ok(trace)
}

/// Evaluates the checkpoint on the test file.
pub fn cmd_evaluate(cfg: &RunConfig, out: &mut dyn Write) -> Result<Evaluation> {
    let (trained, qc) = load_classifier(&cfg.paths.checkpoint)?;
    let test = load_split(&cfg.paths.test, Split::Test)?;
    if test.is_empty() {
        return Err(Error::Config("test dataset is empty".into()));
    }
    let ev = evaluate(&qc.model, &qc.encode_dataset(&test))?;
    let s = &ev.summary;
    wln(out, format_args!("accuracy  {:.4}", s.accuracy))?;
    wln(out, format_args!("precision {:.4}", s.precision))?;
    wln(out, format_args!("recall    {:.4}", s.recall))?;
    wln(out, format_args!("f1        {:.4}", s.f1))?;
    wln(out, format_args!("mse       {:.4}", s.mse))?;
    let row = EpochMetrics {
        epoch: trained.train.epochs,
        split: Split::Test,
        loss: ev.loss,
        summary: ev.summary,
    };
    write_file(
        &cfg.paths.eval_metrics,
        format!("{CSV_HEADER}\n{}\n", csv_row(&row)).as_bytes(),
    )?;
    Ok(ev)
}

/// `LABEL<TAB>p0,...,p5` for one question.
pub fn prediction_line(qc: &QuestionClassifier, text: &str) -> Result<String> {
    let (k, probs) = qc.predict(text)?;
    let ps: Vec<String> = probs.iter().map(|p| format!("{p:.6}")).collect();
    Ok(format!("{}\t{}", CLASS_LABELS[k], ps.join(",")))
}

/// Classifies each of `texts`, or every line of `input` when `texts` is empty.
pub fn cmd_predict(
    cfg: &RunConfig,
    texts: &[String],
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<usize> {
    let (_, qc) = load_classifier(&cfg.paths.checkpoint)?;
    let mut n = 0;
    if texts.is_empty() {
        for line in input.lines() {
            let line = line.map_err(|e| Error::io("<stdin>", e))?;
            wln(out, format_args!("{}", prediction_line(&qc, &line)?))?;
            n += 1;
        }
    } else {
        for t in texts {
            wln(out, format_args!("{}", prediction_line(&qc, t)?))?;
            n += 1;
        }
    }
    Ok(n)
}

fn wln(out: &mut dyn Write, args: std::fmt::Arguments) -> Result<()> {
    writeln!(out, "{args}").map_err(|e| Error::io("<stdout>", e))
}
