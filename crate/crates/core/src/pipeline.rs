//! Sentence-level wrapper: split out Latin words, transliterate each, and
//! reinsert everything else (spaces, punctuation, digits, native script)
//! exactly where it was.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{transliterate_word, ModelConfig, ModelParams};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    /// A maximal run of ASCII letters, fed to the model.
    Word,
    /// Everything else, preserved verbatim.
    Passthrough,
}

/// One span of the original sentence. Segments are non-overlapping, ordered,
/// and tile the input exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
    /// Byte offsets `(start, end)` into the original sentence.
    pub span: (usize, usize),
}

/// Splits a sentence into word and passthrough segments. Words are maximal
/// ASCII-letter runs, so hyphenated and mixed-script tokens split apart;
/// casing is preserved here (the model lowercases on encode).
pub fn segment(sentence: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut run_start: Option<(usize, bool)> = None;
    for (i, c) in sentence.char_indices() {
        let is_word = c.is_ascii_alphabetic();
        match run_start {
            Some((_, was_word)) if was_word == is_word => {}
            Some((start, was_word)) => {
                out.push(make_segment(sentence, start, i, was_word));
                run_start = Some((i, is_word));
            }
            None => run_start = Some((i, is_word)),
        }
    }
    if let Some((start, was_word)) = run_start {
        out.push(make_segment(sentence, start, sentence.len(), was_word));
    }
    out
}

fn make_segment(sentence: &str, start: usize, end: usize, is_word: bool) -> Segment {
    Segment {
        kind: if is_word {
            SegmentKind::Word
        } else {
            SegmentKind::Passthrough
        },
        text: sentence[start..end].to_string(),
        span: (start, end),
    }
}

/// Reassembles a sentence, substituting `rendered[i]` for the i-th word
/// segment (zero-based) and copying passthroughs verbatim. A word with no
/// entry is an error naming its one-based position.
pub fn reconstruct(segments: &[Segment], rendered: &HashMap<usize, String>) -> Result<String> {
    let mut out = String::new();
    let mut word_idx = 0usize;
    for seg in segments {
        match seg.kind {
            SegmentKind::Passthrough => out.push_str(&seg.text),
            SegmentKind::Word => {
                let r = rendered
                    .get(&word_idx)
                    .ok_or(Error::UnrenderedWord(word_idx + 1))?;
                out.push_str(r);
                word_idx += 1;
            }
        }
    }
    Ok(out)
}

/// Transliterates every Latin word of `sentence` in place; equivalent to
/// `reconstruct(segment(sentence), {i → transliterate_word(wordᵢ)})`.
pub fn transliterate_sentence(
    params: &ModelParams,
    config: &ModelConfig,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    sentence: &str,
) -> Result<String> {
    let segments = segment(sentence);
    let mut rendered = HashMap::new();
    let mut word_idx = 0usize;
    for seg in &segments {
        if seg.kind == SegmentKind::Word {
            let r = transliterate_word(params, config, src_vocab, tgt_vocab, &seg.text)?;
            rendered.insert(word_idx, r.text);
            word_idx += 1;
        }
    }
    reconstruct(&segments, &rendered)
}
