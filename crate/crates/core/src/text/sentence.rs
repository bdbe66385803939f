//! Related-sentence selection: reduce a passage to the sentences that
//! overlap the answer span.

/// Byte ranges of sentences. A sentence ends at '.', '?' or '!' followed by
/// whitespace (or end of text); surrounding whitespace is excluded.
pub fn sentence_ranges(passage: &str) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start: Option<usize> = None;
    let mut prev_terminal = false;
    for (i, c) in passage.char_indices() {
        if c.is_whitespace() {
            if prev_terminal {
                if let Some(s) = start.take() {
                    ranges.push((s, i));
                }
            }
            if start.is_none() {
                continue;
            }
        } else if start.is_none() {
            start = Some(i);
        }
        prev_terminal = matches!(c, '.' | '?' | '!');
    }
    if let Some(s) = start {
        ranges.push((s, passage.len()));
    }
    ranges
}

/// Result of related-sentence selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceSelection {
    pub text: String,
    /// True when the span could not be used and the full passage was returned.
    pub fallback: bool,
}

/// Returns the passage slice spanning every sentence that overlaps the
/// answer's byte span. An empty or out-of-range span falls back to the whole
/// passage with the fallback flag set.
pub fn select_answer_sentences(passage: &str, span: (usize, usize)) -> SentenceSelection {
    let (a0, a1) = span;
    let usable = a0 < a1 && a1 <= passage.len() && passage.is_char_boundary(a0) && passage.is_char_boundary(a1);
    if usable {
        let overlapping: Vec<(usize, usize)> = sentence_ranges(passage)
            .into_iter()
            .filter(|&(s, e)| s < a1 && a0 < e)
            .collect();
        if let (Some(&(first, _)), Some(&(_, last))) = (overlapping.first(), overlapping.last()) {
            return SentenceSelection {
                text: passage[first..last].to_string(),
                fallback: false,
            };
        }
    }
    log::warn!("answer span {span:?} unusable; falling back to full passage");
    SentenceSelection {
        text: passage.to_string(),
        fallback: true,
    }
}
