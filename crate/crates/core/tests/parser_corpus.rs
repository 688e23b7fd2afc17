//! Answer parsing on worked reasoning transcripts and a malformed corpus.

mod common;

use bcrl_core::generation::parse::parse_effort;
use bcrl_core::generation::{parse_next_state, parse_next_state_raw, parse_reward, ParseError};
use bcrl_core::State;

#[test]
fn reasoning_transcript_effort() {
    assert_eq!(parse_effort(&common::data("cot_effort.txt")), Ok(8));
}

#[test]
fn reasoning_transcript_next_state() {
    let spec = common::bundled("study3");
    let text = common::data("cot_next_state.txt");
    assert_eq!(parse_next_state_raw(&text, &spec), Ok(vec![4, 5, 7]));
    // 0..10 in three bins is 0-3 / 4-7 / 8-10; in two bins 0-5 / 6-10
    assert_eq!(
        parse_next_state(&text, &spec),
        Ok(State::new(vec![1, 0, 1]))
    );
}

#[test]
fn malformed_corpus_yields_declared_errors() {
    let s3 = common::bundled("study3");
    let s4 = common::bundled("study4");
    let corpus = common::malformed_corpus();
    assert_eq!(corpus.len(), 30);
    for item in &corpus {
        let spec = if item.study == "study4" { &s4 } else { &s3 };
        let err: ParseError = match item.kind.as_str() {
            "reward" => parse_reward(&item.text, spec).unwrap_err(),
            "next" => parse_next_state(&item.text, spec).unwrap_err(),
            other => panic!("unknown kind {other}"),
        };
        assert_eq!(err.kind(), item.expect, "{:?}", item.text);
    }
}

#[test]
fn last_valid_answer_wins() {
    let spec = common::bundled("study3");
    assert_eq!(parse_effort("effort: 3\nactually, effort: 9"), Ok(9));
    assert_eq!(parse_effort("Effort = 12 ... no, effort: 4"), Ok(4));
    assert_eq!(
        parse_next_state_raw("Was [1, 2, 3], now [4, 5, 6].", &spec),
        Ok(vec![4, 5, 6])
    );
    assert_eq!(
        parse_next_state_raw("[1, 2, 3] then [1, 2]", &spec),
        Ok(vec![1, 2, 3])
    );
}
