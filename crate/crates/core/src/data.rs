//! Loading, filtering, and splitting word-level transliteration pair datasets
//! in the common two-column (native, romanized) shape.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

/// One training example: a romanized (Latin) word and its native rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslitPair {
    pub romanized: String,
    pub native: String,
}

/// On-disk dataset layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Tsv,
    Csv,
    Jsonl,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(DataFormat::Tsv),
            "csv" => Ok(DataFormat::Csv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!(
                "unknown data format {other:?} (expected tsv, csv, or jsonl)"
            ))),
        }
    }
}

/// Column order for delimited files. The default follows the (ml, en) naming:
/// native script first, romanization second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColumnOrder {
    #[default]
    NativeFirst,
    RomanFirst,
}

impl FromStr for ColumnOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native-first" => Ok(ColumnOrder::NativeFirst),
            "roman-first" => Ok(ColumnOrder::RomanFirst),
            other => Err(Error::InvalidArgument(format!(
                "unknown column order {other:?} (expected native-first or roman-first)"
            ))),
        }
    }
}

fn make_pair(first: &str, second: &str, order: ColumnOrder) -> TranslitPair {
    let (native, romanized) = match order {
        ColumnOrder::NativeFirst => (first, second),
        ColumnOrder::RomanFirst => (second, first),
    };
    TranslitPair {
        romanized: romanized.to_lowercase(),
        native: native.to_string(),
    }
}

/// Reads transliteration pairs from disk, preserving record order and
/// lowercasing the romanized column. Row numbers in errors are 1-based file
/// lines. `has_header` skips one leading record (TSV/CSV only).
pub fn load_pairs(
    path: &Path,
    format: DataFormat,
    has_header: bool,
    order: ColumnOrder,
) -> Result<Vec<TranslitPair>> {
    match format {
        DataFormat::Tsv => load_tsv(path, has_header, order),
        DataFormat::Csv => load_csv(path, has_header, order),
        DataFormat::Jsonl => load_jsonl(path),
    }
}

fn load_tsv(path: &Path, has_header: bool, order: ColumnOrder) -> Result<Vec<TranslitPair>> {
    let text = fs::read_to_string(path)?;
    let skip = usize::from(has_header);
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate().skip(skip) {
        let mut cols = line.split('\t');
        let (first, second) = match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(Error::MissingColumn { row: i + 1 }),
        };
        pairs.push(make_pair(first, second, order));
    }
    Ok(pairs)
}

fn load_csv(path: &Path, has_header: bool, order: ColumnOrder) -> Result<Vec<TranslitPair>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_path(path)?;
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .position()
            .map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::MissingColumn { row });
        }
        pairs.push(make_pair(&record[0], &record[1], order));
    }
    Ok(pairs)
}

fn load_jsonl(path: &Path) -> Result<Vec<TranslitPair>> {
    #[derive(Deserialize)]
    struct Record {
        ml: String,
        en: String,
    }
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::BadRecord {
            row: i + 1,
            msg: e.to_string(),
        })?;
        pairs.push(make_pair(&rec.ml, &rec.en, ColumnOrder::NativeFirst));
    }
    Ok(pairs)
}

/// Why pairs were dropped by [`clean_filter`]. Each rejected pair is counted
/// under exactly one reason, checked in this field order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub empty_field: usize,
    pub non_alpha: usize,
    pub too_long: usize,
    pub oov_target: usize,
}

impl FilterStats {
    pub fn rejected(&self) -> usize {
        self.empty_field + self.non_alpha + self.too_long + self.oov_target
    }
}

/// Keeps pairs whose romanization is non-empty, all `a-z`, and at most
/// `max_src_len` characters. When `target_chars` is given, pairs whose native
/// side uses characters outside it are dropped too.
pub fn clean_filter(
    pairs: Vec<TranslitPair>,
    max_src_len: usize,
    target_chars: Option<&BTreeSet<char>>,
) -> (Vec<TranslitPair>, FilterStats) {
    let mut stats = FilterStats::default();
    let kept = pairs
        .into_iter()
        .filter(|p| {
            if p.romanized.is_empty() || p.native.is_empty() {
                stats.empty_field += 1;
                false
            } else if !p.romanized.chars().all(|c| c.is_ascii_lowercase()) {
                stats.non_alpha += 1;
                false
            } else if p.romanized.chars().count() > max_src_len {
                stats.too_long += 1;
                false
            } else if target_chars
                .is_some_and(|set| p.native.chars().any(|c| !set.contains(&c)))
            {
                stats.oov_target += 1;
                false
            } else {
                true
            }
        })
        .collect();
    (kept, stats)
}

/// A deterministic train/validation partition of a pair list.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<TranslitPair>,
    pub validation: Vec<TranslitPair>,
    pub seed: u64,
    pub ratio: f64,
}

/// Shuffles by `seed` and sends the first ⌈ratio·N⌉ pairs to train.
pub fn split(pairs: Vec<TranslitPair>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::BadSplitRatio);
    }
    if pairs.len() < 2 {
        return Err(Error::TooFewPairs);
    }
    let mut shuffled = pairs;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    // nudge before ceil so 0.8·10 = 8.000000000000002 still lands on 8
    let n_train = ((ratio * shuffled.len() as f64) - 1e-9).ceil() as usize;
    let validation = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        validation,
        seed,
        ratio,
    })
}
