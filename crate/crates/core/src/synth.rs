//! Tiny built-in corpus for end-to-end runs and overfitting checks: 16
//! entities, two facts each (home city and job), giving 32 passage/question/
//! answer triples over a vocabulary that fits in 64 ids.

use crate::text::RawExample;

const ENTITIES: [&str; 16] = [
    "mia", "leo", "ana", "tom", "eva", "sam", "ida", "max", "zoe", "ben", "amy", "gus", "lin",
    "rex", "joy", "kai",
];

const CITIES: [&str; 16] = [
    "oslo", "lima", "cairo", "quito", "paris", "tokyo", "delhi", "accra", "sofia", "hanoi",
    "dakar", "milan", "kyoto", "porto", "miami", "tunis",
];

const JOBS: [&str; 16] = [
    "baker", "pilot", "tailor", "farmer", "singer", "diver", "smith", "clerk", "guard", "coach",
    "judge", "miner", "nurse", "poet", "cook", "scout",
];

/// The 32-example corpus. Passages are two sentences about one entity; each
/// example asks about one of the two facts, the answering sentence leads, and
/// every answer appears verbatim in its passage. All 32 passages are distinct,
/// so passage-keyed lookups (the gold oracle) stay unambiguous.
pub fn synthetic_corpus() -> Vec<RawExample> {
    let mut out = Vec::with_capacity(32);
    for i in 0..16 {
        let (who, city, job) = (ENTITIES[i], CITIES[i], JOBS[i]);
        let city_passage = format!("{who} lives in {city} . {who} works as {job} .");
        let job_passage = format!("{who} works as {job} . {who} lives in {city} .");
        out.push(RawExample {
            id: format!("synth-{i:02}-city"),
            answer_start: city_passage.find(city).unwrap(),
            question: format!("where does {who} live ?"),
            answer: city.to_string(),
            passage: city_passage,
        });
        out.push(RawExample {
            id: format!("synth-{i:02}-job"),
            answer_start: job_passage.find(job).unwrap(),
            question: format!("what does {who} work as ?"),
            answer: job.to_string(),
            passage: job_passage,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::text::{tokenize, Vocabulary};

    #[test]
    fn corpus_is_32_examples_with_unique_ids_and_passable_answers() {
        let corpus = synthetic_corpus();
        assert_eq!(corpus.len(), 32);
        let ids: HashSet<&str> = corpus.iter().map(|ex| ex.id.as_str()).collect();
        assert_eq!(ids.len(), 32);
        for ex in &corpus {
            let (s, e) = ex.answer_span();
            assert_eq!(&ex.passage[s..e], ex.answer, "answer span mismatch in {}", ex.id);
            assert!(!tokenize(&ex.question).is_empty());
        }
    }

    #[test]
    fn passages_and_questions_are_unique() {
        let corpus = synthetic_corpus();
        let passages: HashSet<&str> = corpus.iter().map(|ex| ex.passage.as_str()).collect();
        assert_eq!(passages.len(), 32);
        let questions: HashSet<&str> = corpus.iter().map(|ex| ex.question.as_str()).collect();
        assert_eq!(questions.len(), 32);
    }

    #[test]
    fn vocabulary_fits_in_64_ids() {
        let corpus = synthetic_corpus();
        let texts: Vec<String> =
            corpus.iter().flat_map(|ex| [ex.passage.clone(), ex.question.clone()]).collect();
        let vocab = Vocabulary::build(texts.iter().map(String::as_str), 64).unwrap();
        assert!(vocab.size() <= 64, "vocab size {}", vocab.size());
        // Nothing in the corpus should fall back to UNK.
        for ex in &corpus {
            for tok in tokenize(&ex.passage).iter().chain(tokenize(&ex.question).iter()) {
                assert!(vocab.id(tok).is_some(), "missing token {tok:?}");
            }
        }
    }
}
