//! Text pipeline: tokenization, vocabulary, SQuAD ingestion, and the
//! input-side conditioning mechanisms (sentence selection, answer prompting).

pub mod batch;
pub mod sentence;
pub mod squad;
pub mod vocab;

pub use batch::{
    build_ap_input, make_batch, Batch, TokenizedExample, MAX_ANSWER_LEN, MAX_PASSAGE_LEN,
    MAX_QUESTION_LEN,
};
pub use sentence::{select_answer_sentences, sentence_ranges, SentenceSelection};
pub use squad::{load_split_ids, load_squad, select_split, to_squad_json, RawExample, SquadLoad};
pub use vocab::{token_spans, tokenize, Vocabulary, BOS, EOS, PAD, SEP, UNK};
