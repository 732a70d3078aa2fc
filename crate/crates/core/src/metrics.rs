//! Transliteration quality metrics: character and word error rates, sentence
//! BLEU, confusion-pair mining, and corpus-level aggregation with CSV/JSON
//! rendering.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

/// Levenshtein distance with unit insert/delete/substitute costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = prev[0];
        prev[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let best = (diag + usize::from(x != y))
                .min(prev[j + 1] + 1)
                .min(prev[j] + 1);
            diag = prev[j + 1];
            prev[j + 1] = best;
        }
    }
    prev[b.len()]
}

fn ref_chars(reference: &str) -> Result<Vec<char>> {
    let chars: Vec<char> = reference.chars().collect();
    if chars.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(chars)
}

/// Character error rate over Unicode code points: edits ÷ reference length.
/// Can exceed 1 for long predictions.
pub fn cer(pred: &str, reference: &str) -> Result<f64> {
    let r = ref_chars(reference)?;
    let p: Vec<char> = pred.chars().collect();
    Ok(edit_distance(&p, &r) as f64 / r.len() as f64)
}

/// CER over extended grapheme clusters instead of code points, for
/// comparison: conjuncts and sign sequences count as single units.
pub fn grapheme_cer(pred: &str, reference: &str) -> Result<f64> {
    let r: Vec<&str> = reference.graphemes(true).collect();
    if r.is_empty() {
        return Err(Error::EmptyReference);
    }
    let p: Vec<&str> = pred.graphemes(true).collect();
    Ok(edit_distance(&p, &r) as f64 / r.len() as f64)
}

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Word error rate over whitespace-delimited tokens: edits ÷ reference
/// token count.
pub fn wer(pred: &str, reference: &str) -> Result<f64> {
    let r = tokens(reference);
    if r.is_empty() {
        return Err(Error::EmptyReference);
    }
    let p = tokens(pred);
    Ok(edit_distance(&p, &r) as f64 / r.len() as f64)
}

fn ngram_counts<'a>(toks: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if toks.len() >= n {
        for gram in toks.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU over whitespace tokens: geometric mean of modified n-gram
/// precisions p₁..p_max_n with add-one smoothing on zero-match orders only
/// (pₙ = mₙ/tₙ when mₙ > 0, else 1/(tₙ+1)), times a brevity penalty
/// exp(1−r/c) when the prediction is shorter than the reference.
pub fn bleu(pred: &str, reference: &str, max_n: usize) -> Result<f64> {
    if max_n == 0 {
        return Err(Error::InvalidArgument("bleu needs max_n ≥ 1".into()));
    }
    let r = tokens(reference);
    if r.is_empty() {
        return Err(Error::EmptyReference);
    }
    let p = tokens(pred);
    if p.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let pred_grams = ngram_counts(&p, n);
        let ref_grams = ngram_counts(&r, n);
        let total: usize = pred_grams.values().sum();
        let matched: usize = pred_grams
            .iter()
            .map(|(gram, &c)| c.min(ref_grams.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if matched > 0 {
            matched as f64 / total as f64
        } else {
            1.0 / (total + 1) as f64
        };
        log_sum += precision.ln();
    }
    let (c, r_len) = (p.len() as f64, r.len() as f64);
    let bp = if c < r_len { (1.0 - r_len / c).exp() } else { 1.0 };
    Ok(bp * (log_sum / max_n as f64).exp())
}

/// Substitution pairs `(ref_char, pred_char) → count` read off one optimal
/// character alignment. The backtrace prefers match > substitute > delete >
/// insert, so the alignment (and the counts) are deterministic.
pub fn confusion_pairs(pred: &str, reference: &str) -> BTreeMap<(char, char), usize> {
    let r: Vec<char> = reference.chars().collect();
    let p: Vec<char> = pred.chars().collect();
    // full DP table: d[i][j] = distance between ref[..i] and pred[..j]
    let cols = p.len() + 1;
    let mut d = vec![0usize; (r.len() + 1) * cols];
    for j in 0..=p.len() {
        d[j] = j;
    }
    for i in 1..=r.len() {
        d[i * cols] = i;
        for j in 1..=p.len() {
            let sub = d[(i - 1) * cols + j - 1] + usize::from(r[i - 1] != p[j - 1]);
            d[i * cols + j] = sub.min(d[(i - 1) * cols + j] + 1).min(d[i * cols + j - 1] + 1);
        }
    }
    let mut pairs = BTreeMap::new();
    let (mut i, mut j) = (r.len(), p.len());
    while i > 0 || j > 0 {
        let here = d[i * cols + j];
        if i > 0 && j > 0 && r[i - 1] == p[j - 1] && here == d[(i - 1) * cols + j - 1] {
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && here == d[(i - 1) * cols + j - 1] + 1 {
            *pairs.entry((r[i - 1], p[j - 1])).or_insert(0) += 1;
            i -= 1;
            j -= 1;
        } else if i > 0 && here == d[(i - 1) * cols + j] + 1 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    pairs
}

/// Per-sentence scores; all three metrics over one prediction/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SentenceScore {
    pub cer: f64,
    pub wer: f64,
    pub bleu: f64,
}

/// Scores one sentence with BLEU order 4.
pub fn sentence_score(pred: &str, reference: &str) -> Result<SentenceScore> {
    Ok(SentenceScore {
        cer: cer(pred, reference)?,
        wer: wer(pred, reference)?,
        bleu: bleu(pred, reference, 4)?,
    })
}

/// Corpus evaluation: per-sentence scores, their arithmetic means (macro
/// average), and pooled confusion counts.
#[derive(Debug, Clone)]
pub struct CorpusReport {
    pub mean_cer: f64,
    pub mean_wer: f64,
    pub mean_bleu: f64,
    pub per_sentence: Vec<SentenceScore>,
    pub confusion: BTreeMap<(char, char), usize>,
}

#[derive(Serialize)]
struct ReportSummary {
    cer_pct: f64,
    wer_pct: f64,
    bleu_pct: f64,
    n: usize,
}

fn pct1(x: f64) -> f64 {
    (x * 1000.0).round() / 10.0
}

pub fn corpus_report(preds: &[&str], refs: &[&str]) -> Result<CorpusReport> {
    if preds.len() != refs.len() {
        return Err(Error::LineCountMismatch {
            pred: preds.len(),
            refs: refs.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no sentences to score".into()));
    }
    let mut per_sentence = Vec::with_capacity(preds.len());
    let mut confusion = BTreeMap::new();
    for (&p, &r) in preds.iter().zip(refs) {
        per_sentence.push(sentence_score(p, r)?);
        for (pair, count) in confusion_pairs(p, r) {
            *confusion.entry(pair).or_insert(0) += count;
        }
    }
    let n = per_sentence.len() as f64;
    Ok(CorpusReport {
        mean_cer: per_sentence.iter().map(|s| s.cer).sum::<f64>() / n,
        mean_wer: per_sentence.iter().map(|s| s.wer).sum::<f64>() / n,
        mean_bleu: per_sentence.iter().map(|s| s.bleu).sum::<f64>() / n,
        per_sentence,
        confusion,
    })
}

impl CorpusReport {
    /// Means as `"CER / WER / BLEU"` percentages with one decimal.
    pub fn summary_line(&self) -> String {
        format!(
            "{:.1} / {:.1} / {:.1}",
            self.mean_cer * 100.0,
            self.mean_wer * 100.0,
            self.mean_bleu * 100.0
        )
    }

    /// One-decimal percent summary as JSON.
    pub fn summary_json(&self) -> String {
        serde_json::to_string(&ReportSummary {
            cer_pct: pct1(self.mean_cer),
            wer_pct: pct1(self.mean_wer),
            bleu_pct: pct1(self.mean_bleu),
            n: self.per_sentence.len(),
        })
        .expect("plain floats and an int always serialize")
    }

    /// Per-sentence scores as CSV, one row per sentence.
    pub fn distribution_csv(&self) -> String {
        let mut out = String::from("index,cer,wer,bleu\n");
        for (i, s) in self.per_sentence.iter().enumerate() {
            out.push_str(&format!("{i},{},{},{}\n", s.cer, s.wer, s.bleu));
        }
        out
    }

    /// Pooled substitution counts as CSV with code points escaped as U+XXXX.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("ref_char,pred_char,count\n");
        for (&(r, p), &count) in &self.confusion {
            out.push_str(&format!("U+{:04X},U+{:04X},{count}\n", r as u32, p as u32));
        }
        out
    }
}

/// Micro-averaged CER: total edits ÷ total reference code points, for
/// comparison with the per-sentence (macro) mean.
pub fn micro_cer(preds: &[&str], refs: &[&str]) -> Result<f64> {
    if preds.len() != refs.len() {
        return Err(Error::LineCountMismatch {
            pred: preds.len(),
            refs: refs.len(),
        });
    }
    let mut edits = 0usize;
    let mut ref_len = 0usize;
    for (&p, &r) in preds.iter().zip(refs) {
        let rc = ref_chars(r)?;
        let pc: Vec<char> = p.chars().collect();
        edits += edit_distance(&pc, &rc);
        ref_len += rc.len();
    }
    if ref_len == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(edits as f64 / ref_len as f64)
}

/// Corpus-level BLEU (pooled n-gram counts and a corpus brevity penalty),
/// for comparison with the sentence-averaged default.
pub fn corpus_bleu(preds: &[&str], refs: &[&str], max_n: usize) -> Result<f64> {
    if max_n == 0 {
        return Err(Error::InvalidArgument("bleu needs max_n ≥ 1".into()));
    }
    if preds.len() != refs.len() {
        return Err(Error::LineCountMismatch {
            pred: preds.len(),
            refs: refs.len(),
        });
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r_len) = (0usize, 0usize);
    for (&pred, &reference) in preds.iter().zip(refs) {
        let r = tokens(reference);
        if r.is_empty() {
            return Err(Error::EmptyReference);
        }
        let p = tokens(pred);
        c += p.len();
        r_len += r.len();
        for n in 1..=max_n {
            let pred_grams = ngram_counts(&p, n);
            let ref_grams = ngram_counts(&r, n);
            total[n - 1] += pred_grams.values().sum::<usize>();
            matched[n - 1] += pred_grams
                .iter()
                .map(|(gram, &cnt)| cnt.min(ref_grams.get(gram).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let p = if matched[n] > 0 {
            matched[n] as f64 / total[n] as f64
        } else {
            1.0 / (total[n] + 1) as f64
        };
        log_sum += p.ln();
    }
    let bp = if (c as f64) < r_len as f64 {
        (1.0 - r_len as f64 / c as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_sum / max_n as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Plain memoized recursion, independent of the DP implementation.
    fn oracle_distance(a: &[u8], b: &[u8]) -> usize {
        fn go(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
            if a.is_empty() {
                return b.len();
            }
            if b.is_empty() {
                return a.len();
            }
            let key = (a.len(), b.len());
            if let Some(&d) = memo.get(&key) {
                return d;
            }
            let sub = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
            let del = go(&a[1..], b, memo) + 1;
            let ins = go(a, &b[1..], memo) + 1;
            let d = sub.min(del).min(ins);
            memo.insert(key, d);
            d
        }
        go(a, b, &mut HashMap::new())
    }

    fn random_word(rng: &mut ChaCha20Rng, max_len: usize) -> Vec<u8> {
        let len = rng.gen_range(0..=max_len);
        (0..len).map(|_| rng.gen_range(b'a'..b'e')).collect()
    }

    #[test]
    fn distance_matches_memoized_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..300 {
            let a = random_word(&mut rng, 12);
            let b = random_word(&mut rng, 12);
            assert_eq!(edit_distance(&a, &b), oracle_distance(&a, &b));
            assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        }
    }

    #[test]
    fn distance_examples() {
        let abc: Vec<char> = "abc".chars().collect();
        assert_eq!(edit_distance::<char>(&[], &abc), 3);
        let kitten: Vec<char> = "kitten".chars().collect();
        let sitting: Vec<char> = "sitting".chars().collect();
        assert_eq!(edit_distance(&kitten, &sitting), 3);
    }

    #[test]
    fn distance_satisfies_triangle_inequality() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for _ in 0..200 {
            let a = random_word(&mut rng, 10);
            let b = random_word(&mut rng, 10);
            let c = random_word(&mut rng, 10);
            assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        }
    }

    #[test]
    fn cer_counts_code_point_edits() {
        assert_eq!(cer("abc", "abc").unwrap(), 0.0);
        assert!((cer("katt", "kat").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cer("", "abc").unwrap(), 1.0);
        assert_eq!(cer("x", "").unwrap_err().to_string(), "empty reference");
    }

    #[test]
    fn grapheme_cer_merges_conjunct_sequences() {
        // ക്ക is three code points (ka, virama, ka) but one grapheme cluster
        assert!((cer("ക", "ക്ക").unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(grapheme_cer("ക", "ക്ക").unwrap(), 1.0);
        assert_eq!(grapheme_cer("ക്ക", "ക്ക").unwrap(), 0.0);
    }

    #[test]
    fn wer_counts_token_edits() {
        assert_eq!(wer("a b c", "a b c").unwrap(), 0.0);
        assert!((wer("a b", "a b c").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wer("x", "   ").unwrap_err().to_string(), "empty reference");
    }

    #[test]
    fn three_scattered_typos_hit_wer_hard_but_cer_lightly() {
        // 5 words, 30 characters including spaces; one substitution in each
        // of three distinct words
        let reference = "abcdef ghijk lmnop qrstu vwxyz";
        assert_eq!(reference.chars().count(), 30);
        let pred = "aXcdef gXijk lmnop qrstX vwxyz";
        assert_eq!(wer(pred, reference).unwrap(), 3.0 / 5.0);
        assert_eq!(cer(pred, reference).unwrap(), 3.0 / 30.0);
    }

    #[test]
    fn bleu_is_one_for_identical_sentences() {
        assert_eq!(bleu("a b c d e", "a b c d e", 4).unwrap(), 1.0);
        // shorter than max_n still saturates via the smoothing rule
        assert_eq!(bleu("a b", "a b", 4).unwrap(), 1.0);
    }

    #[test]
    fn bleu_matches_hand_counted_ngram_precisions() {
        // p = (4/5, 3/4, 2/3, 1/2), BP = 1 → (0.2)^(1/4)
        let b = bleu("a b c d e", "a b c d f", 4).unwrap();
        assert!((b - 0.2f64.powf(0.25)).abs() < 1e-12);
        assert!((b - 0.6687).abs() < 1e-4);
    }

    #[test]
    fn bleu_disjoint_sentences_hit_the_smoothed_floor() {
        // all orders miss: p = (1/6, 1/5, 1/4, 1/3) for 5-token sentences
        let b = bleu("q w x y z", "a b c d f", 4).unwrap();
        let floor = (1.0 / (6.0 * 5.0 * 4.0 * 3.0) as f64).powf(0.25);
        assert!((b - floor).abs() < 1e-12);
        assert!(b > 0.0 && b < 1.0);
    }

    #[test]
    fn bleu_applies_brevity_penalty_to_short_predictions() {
        // perfect 4-token prefix of a 5-token reference: BP = exp(1 − 5/4)
        let b = bleu("a b c d", "a b c d f", 4).unwrap();
        assert!((b - (-0.25f64).exp()).abs() < 1e-12);
        assert_eq!(bleu("", "a b", 4).unwrap(), 0.0);
    }

    #[test]
    fn confusion_reads_substitutions_off_the_alignment() {
        assert!(confusion_pairs("abc", "abc").is_empty());
        let pairs = confusion_pairs("kat", "cat");
        assert_eq!(pairs, BTreeMap::from([(('c', 'k'), 1)]));
        // deterministic preference: two substitutions, not delete+insert
        let swapped = confusion_pairs("ab", "ba");
        assert_eq!(swapped, BTreeMap::from([(('a', 'b'), 1), (('b', 'a'), 1)]));
    }

    #[test]
    fn corpus_confusion_counts_are_order_invariant() {
        let preds = ["kat meow", "dog bork"];
        let refs = ["cat meow", "dog bark"];
        let fwd = corpus_report(&preds, &refs).unwrap().confusion;
        let rev = corpus_report(
            &[preds[1], preds[0]],
            &[refs[1], refs[0]],
        )
        .unwrap()
        .confusion;
        assert_eq!(fwd, rev);
        assert_eq!(fwd, BTreeMap::from([(('a', 'o'), 1), (('c', 'k'), 1)]));
    }

    #[test]
    fn corpus_means_are_arithmetic() {
        // refs of length 10, 20, and 100 code points with 1, 1, and 7
        // substitutions → CERs 0.10, 0.05, 0.07
        let r1 = "abcdefghij";
        let r2 = "abcdefghijklmnopqrst";
        let r3: String = ('a'..='z').cycle().take(100).collect();
        let p1 = "Xbcdefghij";
        let p2 = "Xbcdefghijklmnopqrst";
        let mut p3: Vec<char> = r3.chars().collect();
        for slot in p3.iter_mut().take(7) {
            *slot = 'X';
        }
        let p3: String = p3.into_iter().collect();
        let report = corpus_report(&[p1, p2, &p3], &[r1, r2, &r3]).unwrap();
        assert!((report.mean_cer - (0.10 + 0.05 + 0.07) / 3.0).abs() < 1e-15);
        assert_eq!(report.per_sentence.len(), 3);
    }

    #[test]
    fn single_sentence_report_equals_its_score() {
        let report = corpus_report(&["a b"], &["a b c"]).unwrap();
        let score = sentence_score("a b", "a b c").unwrap();
        assert_eq!(report.mean_cer, score.cer);
        assert_eq!(report.mean_wer, score.wer);
        assert_eq!(report.mean_bleu, score.bleu);
    }

    #[test]
    fn mismatched_line_counts_are_rejected() {
        let err = corpus_report(&["a", "b"], &["a", "b", "c"]).unwrap_err();
        assert_eq!(
            err.to_string(),
            "line count mismatch: 2 predictions vs 3 references"
        );
    }

    #[test]
    fn summary_renders_one_decimal_percents() {
        let mut report = corpus_report(&["a"], &["a"]).unwrap();
        report.mean_cer = 0.074;
        report.mean_wer = 0.345;
        report.mean_bleu = 0.327;
        assert_eq!(report.summary_line(), "7.4 / 34.5 / 32.7");
        assert_eq!(
            report.summary_json(),
            r#"{"cer_pct":7.4,"wer_pct":34.5,"bleu_pct":32.7,"n":1}"#
        );
    }

    #[test]
    fn csv_outputs_have_fixed_headers_and_escaping() {
        let report = corpus_report(&["കx", "ab"], &["ഖx", "ab"]).unwrap();
        let dist = report.distribution_csv();
        assert!(dist.starts_with("index,cer,wer,bleu\n0,0.5,1,"));
        assert_eq!(dist.lines().count(), 3);
        assert_eq!(
            report.confusion_csv(),
            "ref_char,pred_char,count\nU+0D16,U+0D15,1\n"
        );
    }

    #[test]
    fn micro_and_macro_cer_disagree_on_uneven_lengths() {
        let preds = ["Xb", "Xbcdefgh"];
        let refs = ["ab", "abcdefgh"];
        let report = corpus_report(&preds, &refs).unwrap();
        assert!((report.mean_cer - (0.5 + 0.125) / 2.0).abs() < 1e-15);
        assert!((micro_cer(&preds, &refs).unwrap() - 2.0 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn corpus_bleu_pools_counts_across_sentences() {
        assert_eq!(corpus_bleu(&["a b c d"], &["a b c d"], 4).unwrap(), 1.0);
        // pooled: p1 = 9/10, p2 = 7/8, p3 = 5/6, p4 = 3/4, BP = 1
        let preds = ["a b c d e", "a b c d f"];
        let refs = ["a b c d e", "a b c d x"];
        let expected = (9.0 / 10.0 * 7.0 / 8.0 * 5.0 / 6.0 * 3.0 / 4.0f64).powf(0.25);
        assert!((corpus_bleu(&preds, &refs, 4).unwrap() - expected).abs() < 1e-12);
        // differs from the sentence-averaged mean
        let report = corpus_report(&preds, &refs).unwrap();
        assert!((corpus_bleu(&preds, &refs, 4).unwrap() - report.mean_bleu).abs() > 1e-3);
    }
}
