use proptest::prelude::*;
use regex::Regex;
use trec_qc::tokenizer::{
    build_vocab, encode, preprocess, standardize, tokenize, TokenSeq, Vocab, PAD, UNK,
};

fn regex_tokens(text: &str) -> Vec<String> {
    let re = Regex::new(r"[\p{Alphabetic}\p{N}]+|[^\p{Alphabetic}\p{N}\s]").unwrap();
    re.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

#[test]
fn tokenizer_matches_regex_on_questions() {
    for q in [
        "What is the capital of Canada ?",
        "How far is it from Denver to Aspen ?",
        "Who wrote \"Hamlet\"?",
        "What's the 3rd-largest city in the U.S.?",
        "When did 1,000,000 people visit Ünïcödé-Land (again)?",
        "   spaces\tand\nnewlines   ",
        "",
    ] {
        assert_eq!(tokenize(q), regex_tokens(q), "{q:?}");
    }
}

#[test]
fn preprocess_lowercases_first() {
    assert_eq!(
        preprocess("  Who   IS Bill Gates ?"),
        ["who", "is", "bill", "gates", "?"]
    );
    assert_eq!(standardize("A\t B "), "a b");
}

#[test]
fn encode_pads_and_truncates() {
    let v = Vocab::from_tokens(["a", "b"]);
    let s = encode(&["a", "zzz", "b"], &v, 5);
    assert_eq!(s.ids(), &[3, UNK, 4, PAD, PAD]);
    assert_eq!(s.true_length(), 3);
    let t = encode(&["a", "b", "a"], &v, 2);
    assert_eq!(t.ids(), &[3, 4]);
    assert_eq!(t.true_length(), 2);
    assert!(TokenSeq::new(vec![3, PAD, 4], 3).is_err());
    assert!(TokenSeq::new(vec![3, 4], 3).is_err());
}

#[test]
fn vocab_order_is_frequency_then_token() {
    let corpus = vec![vec!["b", "a", "c"], vec!["c", "a", "c"]];
    let v = build_vocab(&corpus, 1, 100);
    assert_eq!(&v.tokens()[3..], ["c", "a", "b"]);
    let cut = build_vocab(&corpus, 2, 100);
    assert_eq!(&cut.tokens()[3..], ["c", "a"]);
    let small = build_vocab(&corpus, 1, 4);
    assert_eq!(small.len(), 4);
}

proptest! {
    #[test]
    fn tokenizer_agrees_with_regex(text in "\\PC{0,60}") {
        prop_assert_eq!(tokenize(&text), regex_tokens(&text));
    }

    #[test]
    fn vocab_is_a_bijection(words in prop::collection::vec("[a-z]{1,6}", 0..40)) {
        let v = build_vocab(std::slice::from_ref(&words), 1, 10_000);
        for (id, tok) in v.tokens().iter().enumerate() {
            prop_assert_eq!(v.id(tok), id);
            prop_assert_eq!(v.token(id), Some(tok.as_str()));
        }
        for w in &words {
            prop_assert!(v.get(w).is_some());
        }
        let back = Vocab::from_text(&v.to_text()).unwrap();
        prop_assert_eq!(back.tokens(), v.tokens());
    }

    #[test]
    fn encode_invariants(words in prop::collection::vec("[a-c]{1,2}", 0..30), max_len in 1usize..20) {
        let v = Vocab::from_tokens(["a", "b", "c"]);
        let s = encode(&words, &v, max_len);
        prop_assert_eq!(s.max_len(), max_len);
        prop_assert_eq!(s.true_length(), words.len().min(max_len));
        prop_assert!(s.tokens().iter().all(|&i| i != PAD));
        prop_assert!(s.ids()[s.true_length()..].iter().all(|&i| i == PAD));
        let longer = encode(&words, &v, max_len + 7);
        prop_assert_eq!(&longer.tokens()[..s.true_length()], s.tokens());
    }
}
