mod common;

use proptest::prelude::*;
use trec_qc::ensemble::{
    concat_features, ensemble_forward, evaluate, lstm_cell_step, lstm_layer_forward, predict_batch,
    train_ensemble, LstmCell, LstmState, TrainConfig,
};
use trec_qc::numerics::{ParamStore, Rng, Tensor};
use trec_qc::tokenizer::{encode, preprocess};
use trec_qc::Error;

use common::{
    ensemble_gradcheck, lstm_oracle_max_diff, scalar_lstm_from, sigmoid, tiny_classifier,
};

fn cell_with(d: usize, u: usize, seed: u64) -> (ParamStore, LstmCell) {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let cell = LstmCell::new(&mut store, "l.", d, u, &mut rng).unwrap();
    for id in cell.param_ids() {
        for v in store.get_mut(id).data_mut() {
            *v = rng.uniform_range(-1.5, 1.5);
        }
    }
    (store, cell)
}

#[test]
fn cell_step_matches_scalar_oracle() {
    assert!(lstm_oracle_max_diff(1000, 17) <= 1e-12);
}

#[test]
fn hand_case() {
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "l.", 1, 1, &mut Rng::new(0)).unwrap();
    for id in cell.param_ids() {
        let fill = if store.name(id).contains(".w_") {
            0.5
        } else {
            0.0
        };
        store.get_mut(id).data_mut().fill(fill);
    }
    let s = lstm_cell_step(&store, &cell, &[1.0], &LstmState::zeros(1)).unwrap();
    let gate = sigmoid(0.5);
    assert!((gate - 0.622459).abs() < 5e-7);
    let c = gate * 0.5f64.tanh();
    assert_eq!(s.c[0], c);
    assert_eq!(s.h[0], gate * c.tanh());
    assert!((s.c[0] - 0.287649).abs() < 5e-7);
    assert!((s.h[0] - 0.174270).abs() < 5e-7);
}

#[test]
fn saturated_gates_preserve_memory() {
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "l.", 2, 3, &mut Rng::new(0)).unwrap();
    for id in cell.param_ids() {
        store.get_mut(id).data_mut().fill(0.0);
    }
    store
        .get_mut(cell.bias("b_if").unwrap())
        .data_mut()
        .fill(100.0);
    store
        .get_mut(cell.bias("b_ii").unwrap())
        .data_mut()
        .fill(-100.0);
    store
        .get_mut(cell.bias("b_io").unwrap())
        .data_mut()
        .fill(100.0);
    let c0 = vec![0.3, -1.2, 2.0];
    let s = lstm_cell_step(
        &store,
        &cell,
        &[5.0, -3.0],
        &LstmState {
            h: vec![0.1; 3],
            c: c0.clone(),
        },
    )
    .unwrap();
    for (a, b) in s.c.iter().zip(&c0) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn layer_matches_repeated_oracle() {
    let (store, cell) = cell_with(3, 4, 2);
    let oracle = scalar_lstm_from(&store, &cell);
    let mut rng = Rng::new(3);
    let t = 6;
    let x: Vec<f64> = (0..t * 3).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    let inputs = Tensor::new(vec![t, 3], x.clone()).unwrap();
    for len in [0, 1, 3, 6] {
        let (hidden, fin) = lstm_layer_forward(&store, &cell, &inputs, len).unwrap();
        let (mut h, mut c) = (vec![0.0; 4], vec![0.0; 4]);
        for step in 0..len {
            let (hn, cn) = oracle.step(&x[step * 3..step * 3 + 3], &h, &c);
            for (a, b) in hidden.row(step).iter().zip(&hn) {
                assert!((a - b).abs() <= 1e-12);
            }
            h = hn;
            c = cn;
        }
        for step in len..t {
            assert!(hidden.row(step).iter().all(|&v| v == 0.0));
        }
        for (a, b) in fin.h.iter().zip(&h).chain(fin.c.iter().zip(&c)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
    assert!(matches!(
        lstm_layer_forward(&store, &cell, &inputs, 7),
        Err(Error::Usage(_))
    ));
    assert!(matches!(
        lstm_cell_step(&store, &cell, &[1.0], &LstmState::zeros(4)),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn composition_matches_oracle() {
    let (qc, ds, _) = tiny_classifier(3, 20);
    let m = &qc.model;
    let l1 = scalar_lstm_from(m.store(), m.lstm1());
    let l2 = scalar_lstm_from(m.store(), m.lstm2());
    let (hw, hb) = m.head();
    let (hw, hb) = (
        m.store().get(hw).data().to_vec(),
        m.store().get(hb).data().to_vec(),
    );
    for ex in ds.examples().iter().take(8) {
        let (se, sg) = qc.encode(&ex.text);
        let feats = concat_features(m, &se, &sg).unwrap();
        let (mut h1, mut c1) = (vec![0.0; 5], vec![0.0; 5]);
        let (mut h2, mut c2) = (vec![0.0; 3], vec![0.0; 3]);
        for t in 0..se.true_length() {
            (h1, c1) = l1.step(feats.row(t), &h1, &c1);
            (h2, c2) = l2.step(&h1, &h2, &c2);
        }
        let logits: Vec<f64> = (0..6)
            .map(|k| hb[k] + (0..3).map(|j| h2[j] * hw[j * 6 + k]).sum::<f64>())
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        let probs = ensemble_forward(m, &se, &sg).unwrap();
        for (k, p) in probs.iter().enumerate() {
            assert!(
                (p - (logits[k] - mx).exp() / z).abs() <= 1e-12,
                "{}",
                ex.text
            );
        }
        let glove_row = m.store().get(m.glove_table()).row(sg.ids()[0]).to_vec();
        assert_eq!(&feats.row(0)[8..], glove_row.as_slice());
    }
}

#[test]
fn ensemble_gradient_matches_finite_differences() {
    let r = ensemble_gradcheck(5, 1e-5);
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn alignment_is_enforced() {
    let (qc, _, _) = tiny_classifier(1, 10);
    let toks = preprocess("who is it ?");
    let e = encode(&toks, &qc.electra_vocab, 16);
    let g = encode(&toks[..2], &qc.glove_vocab, 16);
    assert!(matches!(
        ensemble_forward(&qc.model, &e, &g),
        Err(Error::Alignment(_))
    ));
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let run = || {
        let (mut qc, _, ex) = tiny_classifier(2, 48);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 8,
            lr: 1e-2,
            seed: 3,
            ..TrainConfig::default()
        };
        let before = evaluate(&qc.model, &ex).unwrap().loss;
        let trace = train_ensemble(&mut qc.model, &ex, &ex[..10], &cfg).unwrap();
        (before, trace, qc)
    };
    let (before, t1, q1) = run();
    let (_, t2, q2) = run();
    assert_eq!(t1, t2);
    assert_eq!(q1, q2);
    assert_eq!(t1.rows.len(), 8);
    let after = t1.rows[t1.rows.len() - 2].loss;
    assert!(after < before, "{before} -> {after}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn hidden_state_is_bounded(
        x in prop::collection::vec(-50.0f64..50.0, 3),
        h in prop::collection::vec(-1.0f64..1.0, 4),
        c in prop::collection::vec(-20.0f64..20.0, 4),
        seed in 0u64..1000,
    ) {
        let (store, cell) = cell_with(3, 4, seed);
        let s = lstm_cell_step(&store, &cell, &x, &LstmState { h, c: c.clone() }).unwrap();
        prop_assert!(s.h.iter().all(|v| v.abs() <= 1.0));
        for (cn, co) in s.c.iter().zip(&c) {
            prop_assert!(cn.abs() <= co.abs() + 1.0);
        }
    }

    #[test]
    fn padding_leaves_final_state_unchanged(len in 0usize..6, extra in 0usize..5, seed in 0u64..100) {
        let (store, cell) = cell_with(2, 3, seed);
        let mut rng = Rng::new(seed + 1);
        let x: Vec<f64> = (0..(len + extra) * 2).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let long = Tensor::new(vec![len + extra, 2], x.clone()).unwrap();
        let short = Tensor::new(vec![len.max(1), 2], if len == 0 { vec![9.0; 2] } else { x[..len * 2].to_vec() }).unwrap();
        prop_assume!(len + extra > 0);
        let (_, a) = lstm_layer_forward(&store, &cell, &long, len).unwrap();
        let (_, b) = lstm_layer_forward(&store, &cell, &short, len).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn batch_predictions_match_single(seed in 0u64..4) {
        let (qc, _, ex) = tiny_classifier(seed, 30);
        let batch = predict_batch(&qc.model, &ex).unwrap();
        for (e, b) in ex.iter().zip(&batch) {
            let single = ensemble_forward(&qc.model, &e.electra, &e.glove).unwrap();
            prop_assert_eq!(&single, b);
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
