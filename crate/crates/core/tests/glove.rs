mod common;

use proptest::prelude::*;
use trec_qc::glove::{
    build_cooccurrence, embed_sequence, export_text, glove_loss, glove_loss_grad, import_text,
    load_vectors, save_vectors, train_glove, weight, GloveConfig, GloveModel,
};
use trec_qc::numerics::Rng;
use trec_qc::tokenizer::{encode, Vocab};
use trec_qc::Error;

use common::{glove_gradcheck, glove_two_topic, two_topic_corpus};

#[test]
fn cooccurrence_matches_window_oracle() {
    let corpus = vec![vec![3, 4, 5, 3, 0, 6], vec![6, 6, 4]];
    let x = build_cooccurrence(&corpus, 7, 3).unwrap();
    let mut want = [[0.0f64; 7]; 7];
    for s in &corpus {
        for a in 0..s.len() {
            for b in a + 1..s.len().min(a + 4) {
                if s[a] >= 3 && s[b] >= 3 {
                    let w = 1.0 / (b - a) as f64;
                    want[s[a]][s[b]] += w;
                    want[s[b]][s[a]] += w;
                }
            }
        }
    }
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            assert!((x.get(i, j) - w).abs() < 1e-15, "X[{i}][{j}]");
        }
    }
    assert!(matches!(
        build_cooccurrence(&[vec![9]], 7, 2),
        Err(Error::Index(_))
    ));
    assert!(matches!(
        build_cooccurrence(&corpus, 7, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn weighting_function() {
    assert_eq!(weight(100.0, 100.0, 0.75), 1.0);
    assert_eq!(weight(500.0, 100.0, 0.75), 1.0);
    assert!((weight(10.0, 100.0, 0.75) - 0.1f64.powf(0.75)).abs() < 1e-15);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    for seed in [3, 4] {
        let err = glove_gradcheck(seed, 1e-5);
        assert!(err <= 1e-4, "seed {seed}: {err:e}");
    }
    let corpus = two_topic_corpus(400, 3);
    let x = build_cooccurrence(&corpus, 53, 4).unwrap();
    let model = GloveModel::init(53, 3, &mut Rng::new(8)).unwrap();
    let (loss, _) = glove_loss_grad(&model, &x, 10.0, 0.75);
    assert!((loss - glove_loss(&model, &x, 10.0, 0.75)).abs() < 1e-9 * loss);
}

#[test]
fn two_topic_behavior() {
    let b = glove_two_topic(1);
    assert!(b.spearman >= 0.9, "spearman {}", b.spearman);
    assert!(
        b.worst_rise <= 0.01,
        "loss rose by {} (spearman {})",
        b.worst_rise,
        b.spearman
    );
    assert!(
        b.final_loss < 0.5 * b.first_loss,
        "{} -> {}",
        b.first_loss,
        b.final_loss
    );
}

#[test]
fn export_import_round_trip() {
    let corpus = two_topic_corpus(2000, 5);
    let words: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::from_tokens(words.iter().cloned());
    let cfg = GloveConfig {
        dim: 6,
        epochs: 30,
        ..GloveConfig::default()
    };
    let (model, _) = train_glove(&corpus, vocab.len(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.txt");
    save_vectors(&path, &model, &vocab).unwrap();
    let (v2, m2) = load_vectors(&path).unwrap();
    assert_eq!(v2.tokens(), vocab.tokens());
    for id in 3..vocab.len() {
        for (a, b) in model.vector(id).iter().zip(m2.vector(id)) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
    assert_eq!(
        export_text(&m2, &v2).unwrap(),
        export_text(&model, &vocab).unwrap()
    );
    let seq = encode(&["w3", "w7", "nope"], &vocab, 5);
    let e = embed_sequence(&m2, &seq).unwrap();
    assert_eq!(e.row(0), m2.vector(6).as_slice());
    assert!(e.row(3).iter().all(|&v| v == 0.0));
}

#[test]
fn import_rejects_malformed_files() {
    assert!(matches!(import_text(""), Err(Error::Parse { .. })));
    assert!(matches!(
        import_text("a 1 2\nb 1\n"),
        Err(Error::Parse { line: 2, .. })
    ));
    assert!(matches!(
        import_text("a 1 x\n"),
        Err(Error::Parse { line: 1, .. })
    ));
    assert!(matches!(import_text("a\n"), Err(Error::Parse { .. })));
    let (v, m) = import_text("a 1 2\na 3 4\n[PAD] 5 6\nb 7 8\n").unwrap();
    assert_eq!(v.len(), 5);
    assert_eq!(m.vector(3), [1.0, 2.0]);
    assert_eq!(m.vector(0), [0.0, 0.0]);
}

#[test]
fn training_is_deterministic() {
    let corpus = two_topic_corpus(1000, 2);
    let cfg = GloveConfig {
        dim: 4,
        epochs: 20,
        seed: 9,
        ..GloveConfig::default()
    };
    let (a, ta) = train_glove(&corpus, 53, &cfg).unwrap();
    let (b, tb) = train_glove(&corpus, 53, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert!(matches!(
        train_glove(&[vec![3]], 53, &cfg),
        Err(Error::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn cooccurrence_is_symmetric_and_positive(
        corpus in prop::collection::vec(prop::collection::vec(0usize..12, 0..15), 0..6),
        window in 1usize..6,
    ) {
        let x = build_cooccurrence(&corpus, 12, window).unwrap();
        for (i, j, v) in x.iter() {
            prop_assert!(v > 0.0);
            prop_assert_eq!(x.get(j, i), v);
            prop_assert!(i >= 3 && j >= 3);
        }
    }
}
