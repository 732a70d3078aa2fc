//! Acceptance suite: the toolkit's load-bearing guarantees checked end to end
//! — metric oracles, gradient correctness, trainability, mask hygiene,
//! checkpoint persistence, run determinism, and report rendering.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use translit_core::checkpoint::{load_checkpoint, save_checkpoint};
use translit_core::data::TranslitPair;
use translit_core::graph::grad_check;
use translit_core::layers::{
    attention_graph, bilstm_graph, dense_graph, lstm_graph, Activation, LstmVars,
};
use translit_core::metrics::{bleu, cer, edit_distance, micro_cer, wer, CorpusReport};
use translit_core::model::{
    forward, init_params, loss_graph, train, transliterate_word, ModelConfig, ModelParams,
    TrainConfig,
};
use translit_core::optim::AdamConfig;
use translit_core::pipeline::{reconstruct, segment, SegmentKind};
use translit_core::tensor::{Parameter, Tensor};
use translit_core::vocab::{build_vocab, EncodedSeq, Side, Vocabulary};

// ---------------------------------------------------------- metric oracles --

/// Textbook top-down Levenshtein with memoization; deliberately not the
/// rolling-row shape the library uses.
fn oracle_distance(a: &[char], b: &[char]) -> usize {
    fn go(
        a: &[char],
        b: &[char],
        i: usize,
        j: usize,
        memo: &mut HashMap<(usize, usize), usize>,
    ) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            let del = go(a, b, i + 1, j, memo);
            let ins = go(a, b, i, j + 1, memo);
            let sub = go(a, b, i + 1, j + 1, memo);
            1 + del.min(ins).min(sub)
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn random_word(rng: &mut ChaCha20Rng, max_len: usize, alphabet: &[char]) -> Vec<char> {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
        .collect()
}

#[test]
fn edit_distance_agrees_with_memoized_recursion_on_1000_pairs() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let alphabet = ['a', 'b', 'c', 'd'];
    for _ in 0..1000 {
        let a = random_word(&mut rng, 12, &alphabet);
        let b = random_word(&mut rng, 12, &alphabet);
        assert_eq!(
            edit_distance(&a, &b),
            oracle_distance(&a, &b),
            "disagreement on {a:?} vs {b:?}"
        );
    }
    assert!(
        start.elapsed().as_secs() < 10,
        "oracle comparison took {:?}",
        start.elapsed()
    );
}

#[test]
fn bleu_hand_case_four_of_five_tokens_match() {
    // unigrams 4/5, bigrams 3/4, trigrams 2/3, 4-grams 1/2 → (1/5)^(1/4)
    let score = bleu("a b c d e", "a b c d f", 4).unwrap();
    assert!((score - 0.6687).abs() <= 1e-4, "got {score}");
}

#[test]
fn three_char_errors_in_three_of_five_words_score_wer_60_cer_10() {
    let reference = "abcdef ghijk lmnop qrstu vwxyz"; // 30 code points
    let prediction = "aXcdef gXijk lmnop qrstX vwxyz";
    let w = wer(prediction, reference).unwrap();
    let c = cer(prediction, reference).unwrap();
    assert_eq!(w, 3.0 / 5.0);
    assert_eq!(c, 3.0 / 30.0);
    assert_eq!(
        format!("{:.1}% / {:.1}%", w * 100.0, c * 100.0),
        "60.0% / 10.0%"
    );
}

// --------------------------------------------------------- gradient checks --

fn rand_param(rng: &mut ChaCha20Rng, name: &str, shape: &[usize]) -> Parameter {
    Parameter::new(name, Tensor::from_fn(shape, |_| rng.gen::<f64>() - 0.5))
}

#[test]
fn every_layer_gradient_matches_central_differences() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let eps = 1e-6;
    let tol = 1e-5;

    let dense_params = vec![
        rand_param(&mut rng, "w", &[3, 4]),
        rand_param(&mut rng, "b", &[4]),
        rand_param(&mut rng, "x", &[2, 3]),
    ];
    let report = grad_check(
        &dense_params,
        |g, vars| {
            let y = dense_graph(g, vars[0], vars[1], vars[2], Activation::None)?;
            Ok(g.sum_all(y))
        },
        eps,
        tol,
    )
    .unwrap();
    assert!(report.passed(), "dense: {:?}", report.failures.first());

    let report = grad_check(
        &dense_params,
        |g, vars| {
            let probs = dense_graph(g, vars[0], vars[1], vars[2], Activation::Softmax)?;
            g.ce_sum(probs, &[1, 3], &[true, true])
        },
        eps,
        tol,
    )
    .unwrap();
    assert!(
        report.passed(),
        "softmax + cross-entropy: {:?}",
        report.failures.first()
    );

    // unused table rows get zero analytic gradient and an exactly-zero
    // numeric difference, so they pass rather than vacuously fail
    let table = vec![rand_param(&mut rng, "table", &[7, 3])];
    let report = grad_check(
        &table,
        |g, vars| {
            let rows = g.gather(vars[0], vec![1, 0, 2, 4])?;
            Ok(g.sum_all(rows))
        },
        eps,
        tol,
    )
    .unwrap();
    assert!(report.passed(), "embedding: {:?}", report.failures.first());

    let lstm_params = vec![
        rand_param(&mut rng, "w", &[3, 16]),
        rand_param(&mut rng, "u", &[4, 16]),
        rand_param(&mut rng, "b", &[16]),
        rand_param(&mut rng, "xs", &[5, 3]),
    ];
    let report = grad_check(
        &lstm_params,
        |g, vars| {
            let p = LstmVars { w: vars[0], u: vars[1], b: vars[2] };
            let zero = g.leaf(Tensor::zeros(&[1, 4]));
            let trace = lstm_graph(g, &p, vars[3], false, zero, zero)?;
            let rows = g.concat_rows(&trace.states)?;
            Ok(g.sum_all(rows))
        },
        eps,
        tol,
    )
    .unwrap();
    assert!(report.passed(), "lstm: {:?}", report.failures.first());

    let bilstm_params = vec![
        rand_param(&mut rng, "fw", &[3, 16]),
        rand_param(&mut rng, "fu", &[4, 16]),
        rand_param(&mut rng, "fb", &[16]),
        rand_param(&mut rng, "bw", &[3, 16]),
        rand_param(&mut rng, "bu", &[4, 16]),
        rand_param(&mut rng, "bb", &[16]),
        rand_param(&mut rng, "xs", &[5, 3]),
    ];
    let report = grad_check(
        &bilstm_params,
        |g, vars| {
            let fwd = LstmVars { w: vars[0], u: vars[1], b: vars[2] };
            let bwd = LstmVars { w: vars[3], u: vars[4], b: vars[5] };
            let h = bilstm_graph(g, &fwd, &bwd, vars[6], 3)?;
            Ok(g.sum_all(h))
        },
        eps,
        tol,
    )
    .unwrap();
    assert!(report.passed(), "bilstm: {:?}", report.failures.first());

    let attn_params = vec![
        rand_param(&mut rng, "q", &[4, 6]),
        rand_param(&mut rng, "k", &[5, 6]),
        rand_param(&mut rng, "v", &[5, 6]),
    ];
    let report = grad_check(
        &attn_params,
        |g, vars| {
            let mask = [true, true, true, false, false];
            let (context, _) = attention_graph(g, vars[0], vars[1], vars[2], &mask)?;
            Ok(g.sum_all(context))
        },
        eps,
        tol,
    )
    .unwrap();
    assert!(report.passed(), "attention: {:?}", report.failures.first());

    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn end_to_end_model_gradient_matches_central_differences() {
    let start = Instant::now();
    let config = ModelConfig {
        max_src_len: 5,
        max_tgt_len: 4,
        emb_dim: 4,
        enc_hidden: 4,
        proj_dim: 5,
        dec_hidden: 5,
        src_vocab: 5,
        tgt_vocab: 5,
    };
    let params = init_params(&config, 31).unwrap();
    let src = EncodedSeq { ids: vec![2, 3, 4, 2], length: 4 };
    let tgt_ids = vec![3, 2, 4, 0];
    let sup = vec![true; 4];
    // eps 1e-4: at 1e-6 the central differences of this ~600-coordinate
    // composite sit on the f64 roundoff floor and the comparison would
    // measure noise instead of correctness
    let report = grad_check(
        params.list(),
        |g, vars| loss_graph(g, vars, &config, &src, &tgt_ids, &sup),
        1e-4,
        1e-5,
    )
    .unwrap();
    assert!(report.passed(), "worst: {:?}", report.failures.first());
    assert!(report.checked > 500, "checked only {}", report.checked);
    assert!(start.elapsed().as_secs() < 60);
}

// ------------------------------------------------------------ overfit test --

/// Fixed bijection from the Latin alphabet into the Malayalam consonant
/// block: 'a' → ക (U+0D15) … 'z' → മ (U+0D2E).
fn mapped_char(c: char) -> char {
    char::from_u32(0x0D15 + (c as u32 - 'a' as u32)).unwrap()
}

fn bijective_corpus(n: usize, seed: u64) -> Vec<TranslitPair> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut words = BTreeSet::new();
    while words.len() < n {
        let len = rng.gen_range(3..=10);
        let word: String = (0..len)
            .map(|_| char::from(b'a' + rng.gen_range(0..26u8)))
            .collect();
        words.insert(word);
    }
    words
        .into_iter()
        .map(|romanized| TranslitPair {
            native: romanized.chars().map(mapped_char).collect(),
            romanized,
        })
        .collect()
}

fn training_scores(
    params: &ModelParams,
    config: &ModelConfig,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    pairs: &[TranslitPair],
) -> (f64, f64) {
    let mut exact = 0usize;
    let mut outputs = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let rendered =
            transliterate_word(params, config, src_vocab, tgt_vocab, &pair.romanized).unwrap();
        if rendered.text == pair.native {
            exact += 1;
        }
        outputs.push(rendered.text);
    }
    let preds: Vec<&str> = outputs.iter().map(String::as_str).collect();
    let refs: Vec<&str> = pairs.iter().map(|p| p.native.as_str()).collect();
    let word_acc = exact as f64 / pairs.len() as f64;
    (word_acc, micro_cer(&preds, &refs).unwrap())
}

#[test]
fn model_overfits_200_bijective_pairs_at_full_width() {
    let start = Instant::now();
    let pairs = bijective_corpus(200, 17);
    let src_vocab = build_vocab(&pairs, Side::Source, 28).unwrap();
    let tgt_vocab = build_vocab(&pairs, Side::Target, 76).unwrap();
    let config = ModelConfig {
        max_src_len: 10,
        max_tgt_len: 11,
        emb_dim: 64,
        enc_hidden: 128,
        proj_dim: 128,
        dec_hidden: 128,
        src_vocab: 28,
        tgt_vocab: 76,
    };
    let mut params = init_params(&config, 3).unwrap();

    // trained in bursts with an early exit so the passing case stays quick;
    // the 300-epoch ceiling is the contract
    let mut total_epochs = 0usize;
    let (mut word_acc, mut train_cer) = (0.0, 1.0);
    for burst in [50, 25, 25, 25, 25, 25, 25, 25, 25, 50] {
        let train_cfg = TrainConfig {
            epochs: burst,
            batch_size: 20,
            adam: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
            seed: 1000 + total_epochs as u64,
            shuffle: true,
        };
        train(&mut params, &config, &train_cfg, &pairs, &[], &src_vocab, &tgt_vocab).unwrap();
        total_epochs += burst;
        (word_acc, train_cer) = training_scores(&params, &config, &src_vocab, &tgt_vocab, &pairs);
        eprintln!(
            "epoch {total_epochs}: word accuracy {:.1}%, CER {:.2}%, {:.0}s",
            word_acc * 100.0,
            train_cer * 100.0,
            start.elapsed().as_secs_f64()
        );
        if word_acc >= 0.99 && train_cer < 0.01 {
            break;
        }
    }

    assert!(total_epochs <= 300);
    assert!(
        word_acc >= 0.99,
        "word accuracy {:.4} after {total_epochs} epochs",
        word_acc
    );
    assert!(train_cer < 0.01, "training CER {:.4}", train_cer);
    assert!(
        start.elapsed().as_secs() < 600,
        "overfit run took {:?}",
        start.elapsed()
    );
}

// -------------------------------------------------------- pipeline masking --

#[test]
fn segmentation_reconstructs_mixed_text_exactly() {
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    let latin = ["amma", "veedu", "nalla", "oru", "kth", "b"];
    let native = ["അമ്മ", "വീട്", "നല്ല"];
    let other = [".", ",", "!", "?", "'", "\"", ";", ":", "-", "123", "42", "…", "—"];
    for _ in 0..1000 {
        let mut sentence = String::new();
        for _ in 0..rng.gen_range(0..12) {
            match rng.gen_range(0..4) {
                0 => sentence.push_str(latin[rng.gen_range(0..latin.len())]),
                1 => sentence.push_str(native[rng.gen_range(0..native.len())]),
                2 => sentence.push_str(other[rng.gen_range(0..other.len())]),
                _ => sentence.push(' '),
            }
        }
        let segments = segment(&sentence);
        let mut rendered = HashMap::new();
        let mut word_idx = 0usize;
        for seg in &segments {
            if seg.kind == SegmentKind::Word {
                rendered.insert(word_idx, seg.text.clone());
                word_idx += 1;
            }
        }
        let rebuilt = reconstruct(&segments, &rendered).unwrap();
        assert_eq!(rebuilt, sentence);
    }
}

#[test]
fn padding_positions_never_influence_the_forward_pass() {
    let config = ModelConfig {
        max_src_len: 6,
        max_tgt_len: 5,
        emb_dim: 8,
        enc_hidden: 8,
        proj_dim: 12,
        dec_hidden: 12,
        src_vocab: 6,
        tgt_vocab: 6,
    };
    let params = init_params(&config, 9).unwrap();
    let base = EncodedSeq { ids: vec![2, 4, 3, 0, 0, 0], length: 3 };
    let reference = forward(&params, &config, &[base.clone()]).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    for trial in 0..20 {
        let mut mutated = base.clone();
        for slot in mutated.ids.iter_mut().skip(base.length) {
            *slot = rng.gen_range(0..config.src_vocab);
        }
        let probs = forward(&params, &config, &[mutated]).unwrap();
        assert_eq!(reference.data(), probs.data(), "trial {trial} diverged");
    }
}

// ---------------------------------------------- persistence + determinism --

#[test]
fn checkpoints_round_trip_and_reject_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tltc");
    let config = ModelConfig {
        max_src_len: 6,
        max_tgt_len: 5,
        emb_dim: 8,
        enc_hidden: 8,
        proj_dim: 12,
        dec_hidden: 12,
        src_vocab: 6,
        tgt_vocab: 6,
    };
    let params = init_params(&config, 13).unwrap();
    save_checkpoint(&path, &config, &params).unwrap();
    let (config2, params2) = load_checkpoint(&path).unwrap();
    assert_eq!(config, config2);

    let src = EncodedSeq { ids: vec![2, 3, 5], length: 3 };
    let before = forward(&params, &config, &[src.clone()]).unwrap();
    let after = forward(&params2, &config2, &[src]).unwrap();
    let drift = before
        .data()
        .iter()
        .zip(after.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(drift < 1e-6, "probabilities drifted by {drift}");

    let good = fs::read(&path).unwrap();

    let bad = dir.path().join("bad");
    fs::write(&bad, b"JUNKJUNKJUNK").unwrap();
    assert_eq!(
        load_checkpoint(&bad).unwrap_err().to_string(),
        "not a checkpoint"
    );

    let mut alien = good.clone();
    alien[4] = 9;
    fs::write(&bad, &alien).unwrap();
    assert_eq!(
        load_checkpoint(&bad).unwrap_err().to_string(),
        "unsupported checkpoint version 9"
    );

    fs::write(&bad, &good[..good.len() - 7]).unwrap();
    assert_eq!(
        load_checkpoint(&bad).unwrap_err().to_string(),
        "truncated checkpoint"
    );
}

fn run_cli(args: &[&str]) {
    let output = Command::new(env!("CARGO_BIN_EXE_translit"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "translit {args:?} failed:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn training_twice_with_one_seed_writes_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let pairs_path = dir.path().join("pairs.tsv");
    let mut tsv = String::new();
    for pair in bijective_corpus(24, 41) {
        tsv.push_str(&format!("{}\t{}\n", pair.native, pair.romanized));
    }
    fs::write(&pairs_path, tsv).unwrap();

    let vocab_dir = dir.path().join("vocab");
    run_cli(&["vocab", "--pairs", path_str(&pairs_path), "--out", path_str(&vocab_dir)]);

    let config_path = dir.path().join("config.json");
    fs::write(
        &config_path,
        r#"{"model":{"emb_dim":6,"enc_hidden":6,"proj_dim":8,"dec_hidden":8},"train":{"epochs":2}}"#,
    )
    .unwrap();

    let first = dir.path().join("a.tltc");
    let second = dir.path().join("b.tltc");
    for out in [&first, &second] {
        run_cli(&[
            "train",
            "--pairs",
            path_str(&pairs_path),
            "--vocab-dir",
            path_str(&vocab_dir),
            "--config",
            path_str(&config_path),
            "--out",
            path_str(out),
            "--seed",
            "42",
            "--train-ratio",
            "0.8",
        ]);
    }
    let a = fs::read(&first).unwrap();
    let b = fs::read(&second).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "checkpoints differ between identical runs");
}

// ------------------------------------------------------------- reporting --

#[test]
fn summary_line_renders_the_results_table_row() {
    let report = CorpusReport {
        mean_cer: 0.074,
        mean_wer: 0.345,
        mean_bleu: 0.327,
        per_sentence: vec![],
        confusion: BTreeMap::new(),
    };
    assert_eq!(report.summary_line(), "7.4 / 34.5 / 32.7");
    assert_eq!(
        report.summary_json(),
        r#"{"cer_pct":7.4,"wer_pct":34.5,"bleu_pct":32.7,"n":0}"#
    );
}
