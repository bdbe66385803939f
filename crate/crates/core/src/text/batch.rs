//! Model-ready batches: conditioning, truncation, padding, masks.

use serde::{Deserialize, Serialize};

use super::sentence::select_answer_sentences;
use super::squad::RawExample;
use super::vocab::{Vocabulary, BOS, EOS, PAD, SEP};
use crate::model::ConditioningConfig;

/// Truncation limits.
pub const MAX_PASSAGE_LEN: usize = 512;
pub const MAX_QUESTION_LEN: usize = 128;
pub const MAX_ANSWER_LEN: usize = 32;

/// A tokenized record; raw passage/answer text is retained so the
/// sentence-selection mechanism can be applied per conditioning mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub id: String,
    pub passage: String,
    pub question: String,
    pub answer: String,
    /// Byte span of the answer within `passage`.
    pub answer_span: (usize, usize),
    pub passage_ids: Vec<u32>,
    pub question_ids: Vec<u32>,
    pub answer_ids: Vec<u32>,
}

impl TokenizedExample {
    pub fn from_raw(raw: &RawExample, vocab: &Vocabulary) -> Self {
        TokenizedExample {
            id: raw.id.clone(),
            passage: raw.passage.clone(),
            question: raw.question.clone(),
            answer: raw.answer.clone(),
            answer_span: raw.answer_span(),
            passage_ids: vocab.encode(&raw.passage, MAX_PASSAGE_LEN),
            question_ids: vocab.encode(&raw.question, MAX_QUESTION_LEN),
            answer_ids: vocab.encode(&raw.answer, MAX_ANSWER_LEN),
        }
    }
}

/// Prefixes the (truncated) answer to the passage with a separator token,
/// keeping the whole sequence within the passage length limit. The answer
/// prefix itself is never truncated away.
pub fn build_ap_input(answer_ids: &[u32], passage_ids: &[u32], use_sep: bool) -> Vec<u32> {
    let answer = &answer_ids[..answer_ids.len().min(MAX_ANSWER_LEN)];
    let mut out = Vec::with_capacity(MAX_PASSAGE_LEN.min(answer.len() + 1 + passage_ids.len()));
    out.extend_from_slice(answer);
    if use_sep {
        out.push(SEP);
    }
    out.extend_from_slice(passage_ids);
    out.truncate(MAX_PASSAGE_LEN);
    out
}

/// Row-major `[batch, len]` id/mask planes for one model invocation.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub ids: Vec<String>,
    /// Encoder input, `size * src_len`, PAD-padded.
    pub src_ids: Vec<u32>,
    pub src_len: usize,
    /// 1 where `src_ids` is a real token, 0 where padding.
    pub src_mask: Vec<u8>,
    /// Answer tokens for the pooled answer embedding, `size * answer_len`.
    pub answer_ids: Vec<u32>,
    pub answer_len: usize,
    pub answer_mask: Vec<u8>,
    /// Decoder input: BOS followed by the question, `size * tgt_len`.
    pub decoder_ids: Vec<u32>,
    pub tgt_len: usize,
    /// Labels: question followed by EOS, `size * tgt_len`.
    pub label_ids: Vec<u32>,
    /// 1 at positions that count toward the loss.
    pub label_mask: Vec<u8>,
    /// How many examples fell back to the full passage during sentence
    /// selection.
    pub rs_fallbacks: usize,
}

fn pad_plane(rows: &[Vec<u32>], width: usize) -> (Vec<u32>, Vec<u8>) {
    let mut ids = vec![PAD; rows.len() * width];
    let mut mask = vec![0u8; rows.len() * width];
    for (r, row) in rows.iter().enumerate() {
        ids[r * width..r * width + row.len()].copy_from_slice(row);
        mask[r * width..r * width + row.len()].fill(1);
    }
    (ids, mask)
}

/// Assembles a batch: sentence selection first (when `rs`), then answer
/// prompting (when `ap`), then padding to the batch maxima.
pub fn make_batch(
    examples: &[TokenizedExample],
    conditioning: &ConditioningConfig,
    vocab: &Vocabulary,
    ap_sep: bool,
) -> Batch {
    assert!(!examples.is_empty(), "make_batch needs at least one example");
    let mut src_rows = Vec::with_capacity(examples.len());
    let mut ans_rows = Vec::with_capacity(examples.len());
    let mut dec_rows = Vec::with_capacity(examples.len());
    let mut label_rows = Vec::with_capacity(examples.len());
    let mut rs_fallbacks = 0usize;

    for ex in examples {
        let mut passage_ids = if conditioning.rs {
            let sel = select_answer_sentences(&ex.passage, ex.answer_span);
            rs_fallbacks += sel.fallback as usize;
            vocab.encode(&sel.text, MAX_PASSAGE_LEN)
        } else {
            ex.passage_ids.clone()
        };
        if conditioning.ap {
            passage_ids = build_ap_input(&ex.answer_ids, &passage_ids, ap_sep);
        }
        src_rows.push(passage_ids);
        ans_rows.push(ex.answer_ids.clone());

        let question = &ex.question_ids[..ex.question_ids.len().min(MAX_QUESTION_LEN)];
        let mut dec = Vec::with_capacity(question.len() + 1);
        dec.push(BOS);
        dec.extend_from_slice(question);
        dec_rows.push(dec);
        let mut labels = Vec::with_capacity(question.len() + 1);
        labels.extend_from_slice(question);
        labels.push(EOS);
        label_rows.push(labels);
    }

    let src_len = src_rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let answer_len = ans_rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let tgt_len = dec_rows.iter().map(Vec::len).max().unwrap_or(0).max(1);

    let (src_ids, src_mask) = pad_plane(&src_rows, src_len);
    let (answer_ids, answer_mask) = pad_plane(&ans_rows, answer_len);
    let (decoder_ids, _) = pad_plane(&dec_rows, tgt_len);
    let (label_ids, label_mask) = pad_plane(&label_rows, tgt_len);

    Batch {
        size: examples.len(),
        ids: examples.iter().map(|e| e.id.clone()).collect(),
        src_ids,
        src_len,
        src_mask,
        answer_ids,
        answer_len,
        answer_mask,
        decoder_ids,
        tgt_len,
        label_ids,
        label_mask,
        rs_fallbacks,
    }
}
