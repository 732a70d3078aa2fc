//! Character vocabularies and integer encoding for the Latin source side and
//! the Malayalam target side.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::write_atomic;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
/// Ids below this are PAD/UNK; content characters start here.
pub const FIRST_CHAR_ID: usize = 2;

/// Which side of a transliteration pair a vocabulary indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

/// Immutable character↔id mapping. PAD is 0, UNK is 1, content characters
/// occupy ids 2.. in code-point order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    side: Side,
    chars: Vec<char>,
    char_to_id: HashMap<char, usize>,
}

/// A word as padded token ids plus its true (unpadded) length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSeq {
    pub ids: Vec<usize>,
    pub length: usize,
}

impl EncodedSeq {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }
}

impl Vocabulary {
    fn from_sorted_chars(side: Side, chars: Vec<char>) -> Self {
        let char_to_id = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + FIRST_CHAR_ID))
            .collect();
        Vocabulary {
            side,
            chars,
            char_to_id,
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    /// Total entries including PAD and UNK.
    pub fn size(&self) -> usize {
        self.chars.len() + FIRST_CHAR_ID
    }

    /// Content characters in id order (ascending code point).
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.char_to_id.get(&c).copied()
    }

    /// The character behind a content id; `None` for PAD, UNK, or out of range.
    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(FIRST_CHAR_ID)
            .and_then(|i| self.chars.get(i).copied())
    }
}

fn side_text<'a>(pair: &'a crate::data::TranslitPair, side: Side) -> &'a str {
    match side {
        Side::Source => &pair.romanized,
        Side::Target => &pair.native,
    }
}

/// Builds a vocabulary from the chosen side of a pair list: the most frequent
/// characters win the `max_size − 2` content slots (frequency ties go to the
/// lower code point), and ids are then assigned in code-point order.
pub fn build_vocab(
    pairs: &[crate::data::TranslitPair],
    side: Side,
    max_size: usize,
) -> Result<Vocabulary> {
    if pairs.is_empty() {
        return Err(Error::NoTrainingData);
    }
    if max_size < 3 {
        return Err(Error::InvalidArgument(format!(
            "vocabulary max_size must be at least 3, got {max_size}"
        )));
    }
    let mut counts: HashMap<char, u64> = HashMap::new();
    for pair in pairs {
        let text = side_text(pair, side);
        let lowered;
        let text = match side {
            Side::Source => {
                lowered = text.to_lowercase();
                &lowered
            }
            Side::Target => text,
        };
        for c in text.chars() {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(char, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(max_size - FIRST_CHAR_ID);
    let mut chars: Vec<char> = ranked.into_iter().map(|(c, _)| c).collect();
    chars.sort_unstable();
    Ok(Vocabulary::from_sorted_chars(side, chars))
}

/// Encodes a word to `max_len` ids: unknown characters become UNK, overflow is
/// truncated, and the tail is PAD. Source-side input is lowercased first.
pub fn encode(vocab: &Vocabulary, word: &str, max_len: usize) -> Result<EncodedSeq> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("encode max_len must be ≥ 1".into()));
    }
    let lowered;
    let word = match vocab.side {
        Side::Source => {
            lowered = word.to_lowercase();
            lowered.as_str()
        }
        Side::Target => word,
    };
    if word.is_empty() {
        return Err(Error::EmptyToken);
    }
    let mut ids: Vec<usize> = word
        .chars()
        .take(max_len)
        .map(|c| vocab.id_of(c).unwrap_or(UNK_ID))
        .collect();
    let length = ids.len();
    ids.resize(max_len, PAD_ID);
    Ok(EncodedSeq { ids, length })
}

/// Decodes ids back to a string: stops at the first PAD, skips UNK.
pub fn decode(vocab: &Vocabulary, ids: &[usize]) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        if id >= vocab.size() {
            return Err(Error::InvalidTokenId {
                id,
                size: vocab.size(),
            });
        }
        if id == PAD_ID {
            break;
        }
        if id == UNK_ID {
            continue;
        }
        out.push(vocab.char_of(id).expect("content id in range"));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Specials {
    pad: usize,
    unk: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    side: Side,
    specials: Specials,
    chars: Vec<String>,
}

pub fn save_vocab(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let file = VocabFile {
        side: vocab.side,
        specials: Specials {
            pad: PAD_ID,
            unk: UNK_ID,
        },
        chars: vocab.chars.iter().map(|c| c.to_string()).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let bad = |msg: String| Error::BadVocabFile {
        path: path.display().to_string(),
        msg,
    };
    let text = fs::read_to_string(path)?;
    let file: VocabFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if file.specials.pad != PAD_ID || file.specials.unk != UNK_ID {
        return Err(bad(format!(
            "specials must be pad=0, unk=1; got pad={}, unk={}",
            file.specials.pad, file.specials.unk
        )));
    }
    let mut chars = Vec::with_capacity(file.chars.len());
    for (i, entry) in file.chars.iter().enumerate() {
        let mut it = entry.chars();
        let c = it
            .next()
            .ok_or_else(|| bad(format!("chars[{i}] is empty")))?;
        if it.next().is_some() {
            return Err(bad(format!(
                "chars[{i}] {entry:?} is not a single character"
            )));
        }
        chars.push(c);
    }
    for w in chars.windows(2) {
        if w[0] >= w[1] {
            return Err(bad(if w[0] == w[1] {
                format!("duplicate character {:?}", w[0])
            } else {
                "chars not sorted by code point".to_string()
            }));
        }
    }
    Ok(Vocabulary::from_sorted_chars(file.side, chars))
}
