//! The word-level transliteration model: an attention Bi-LSTM encoder-decoder
//! with a repeat-vector (non-autoregressive) decoder, plus its training loop
//! and greedy decoder.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::TranslitPair;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{attention_graph, bilstm_graph, dense_graph, lstm_graph, Activation, LstmVars};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Parameter, Tensor};
use crate::vocab::{encode, EncodedSeq, Vocabulary, PAD_ID, UNK_ID};

/// Architecture dimensions. The defaults mirror the reference topology:
/// sources up to 57 characters, 64-d embeddings, a 128-per-direction
/// bidirectional encoder (256-d concatenated), 128-d projection and decoder,
/// and a 76-way output softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub emb_dim: usize,
    pub enc_hidden: usize,
    pub proj_dim: usize,
    pub dec_hidden: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            max_src_len: 57,
            max_tgt_len: 64,
            emb_dim: 64,
            enc_hidden: 128,
            proj_dim: 128,
            dec_hidden: 128,
            src_vocab: 28, // a-z plus PAD/UNK
            tgt_vocab: 76,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.max_src_len,
            self.max_tgt_len,
            self.emb_dim,
            self.enc_hidden,
            self.proj_dim,
            self.dec_hidden,
        ];
        if dims.iter().any(|&d| d == 0) || self.src_vocab < 3 || self.tgt_vocab < 3 {
            return Err(Error::InvalidArgument(format!(
                "model config has a non-positive or too-small dimension: {self:?}"
            )));
        }
        if self.proj_dim != self.dec_hidden {
            return Err(Error::InvalidArgument(format!(
                "proj_dim {} must equal dec_hidden {} so attention dot products line up",
                self.proj_dim, self.dec_hidden
            )));
        }
        Ok(())
    }
}

// Parameter slots, in checkpoint order.
const P_EMB: usize = 0;
const P_EF_W: usize = 1;
const P_EF_U: usize = 2;
const P_EF_B: usize = 3;
const P_EB_W: usize = 4;
const P_EB_U: usize = 5;
const P_EB_B: usize = 6;
const P_PROJ_W: usize = 7;
const P_PROJ_B: usize = 8;
const P_DEC_W: usize = 9;
const P_DEC_U: usize = 10;
const P_DEC_B: usize = 11;
const P_OUT_W: usize = 12;
const P_OUT_B: usize = 13;
const PARAM_COUNT: usize = 14;

/// Every trainable tensor of the model, in a fixed order that the checkpoint
/// format and optimizer state both rely on.
#[derive(Debug, Clone)]
pub struct ModelParams {
    list: Vec<Parameter>,
}

/// Tensor names and shapes implied by a config, in parameter order.
pub fn parameter_shapes(config: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
    let (e, h, p, d) = (
        config.emb_dim,
        config.enc_hidden,
        config.proj_dim,
        config.dec_hidden,
    );
    vec![
        ("embedding", vec![config.src_vocab, e]),
        ("enc_fwd.w", vec![e, 4 * h]),
        ("enc_fwd.u", vec![h, 4 * h]),
        ("enc_fwd.b", vec![4 * h]),
        ("enc_bwd.w", vec![e, 4 * h]),
        ("enc_bwd.u", vec![h, 4 * h]),
        ("enc_bwd.b", vec![4 * h]),
        ("proj.w", vec![2 * h, p]),
        ("proj.b", vec![p]),
        ("dec.w", vec![p, 4 * d]),
        ("dec.u", vec![d, 4 * d]),
        ("dec.b", vec![4 * d]),
        ("out.w", vec![d + p, config.tgt_vocab]),
        ("out.b", vec![config.tgt_vocab]),
    ]
}

impl ModelParams {
    /// Wraps an already-shaped parameter list (used by checkpoint loading).
    pub(crate) fn from_list(list: Vec<Parameter>) -> Self {
        debug_assert_eq!(list.len(), PARAM_COUNT);
        ModelParams { list }
    }

    pub fn list(&self) -> &[Parameter] {
        &self.list
    }

    pub fn list_mut(&mut self) -> &mut [Parameter] {
        &mut self.list
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.list {
            p.zero_grad();
        }
    }

    /// Registers every parameter in `g`, returning handles in slot order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.list.iter().map(|p| g.param(p)).collect()
    }
}

fn lstm_vars(vars: &[Var], w: usize, u: usize, b: usize) -> LstmVars {
    LstmVars {
        w: vars[w],
        u: vars[u],
        b: vars[b],
    }
}

/// Glorot-uniform initialization: weights ~ U(−s, s) with
/// s = √(6/(fan_in+fan_out)); biases zero except LSTM forget gates at 1.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut list = Vec::with_capacity(PARAM_COUNT);
    for (name, shape) in parameter_shapes(config) {
        let value = match shape.len() {
            2 => {
                let s = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                Tensor::from_fn(&shape, |_| rng.gen::<f64>() * 2.0 * s - s)
            }
            _ => {
                let mut t = Tensor::zeros(&shape);
                if name.ends_with(".b") && (name.starts_with("enc") || name.starts_with("dec")) {
                    // forget-gate block of the (i,f,g,o) layout
                    let h = shape[0] / 4;
                    for x in &mut t.data_mut()[h..2 * h] {
                        *x = 1.0;
                    }
                }
                t
            }
        };
        list.push(Parameter::new(name, value));
    }
    Ok(ModelParams { list })
}

/// Builds one word's forward pass in `g` over parameter handles from
/// [`ModelParams::bind`], returning the `[max_tgt_len, tgt_vocab]`
/// probability node. Padding positions of the source are never read: the
/// encoder, projection, and attention all run on the first `src.length`
/// positions only.
pub fn probs_graph(
    g: &mut Graph,
    vars: &[Var],
    config: &ModelConfig,
    src: &EncodedSeq,
) -> Result<Var> {
    if vars.len() != PARAM_COUNT {
        return Err(Error::InvalidArgument(format!(
            "expected {PARAM_COUNT} parameter handles, got {}",
            vars.len()
        )));
    }
    if src.length == 0 {
        return Err(Error::EmptyToken);
    }
    if src.length > config.max_src_len {
        return Err(Error::InvalidArgument(format!(
            "source length {} exceeds max_src_len {}",
            src.length, config.max_src_len
        )));
    }
    let t_src = src.length;
    let e = g.gather(vars[P_EMB], src.ids[..t_src].to_vec())?;
    let h = bilstm_graph(
        g,
        &lstm_vars(vars, P_EF_W, P_EF_U, P_EF_B),
        &lstm_vars(vars, P_EB_W, P_EB_U, P_EB_B),
        e,
        t_src,
    )?;
    let p = dense_graph(g, vars[P_PROJ_W], vars[P_PROJ_B], h, Activation::None)?;
    let ctx = g.slice_rows(p, t_src - 1, 1)?;
    let r = g.repeat_rows(ctx, config.max_tgt_len)?;
    let zero = g.leaf(Tensor::zeros(&[1, config.dec_hidden]));
    let trace = lstm_graph(g, &lstm_vars(vars, P_DEC_W, P_DEC_U, P_DEC_B), r, false, zero, zero)?;
    let d = g.concat_rows(&trace.states)?;
    let (a, _weights) = attention_graph(g, d, p, p, &vec![true; t_src])?;
    let u = g.concat_cols(d, a)?;
    dense_graph(g, vars[P_OUT_W], vars[P_OUT_B], u, Activation::Softmax)
}

/// Builds the summed supervised cross entropy for one example: the training
/// objective before batch-mean scaling, also the entry point for whole-model
/// gradient checks.
pub fn loss_graph(
    g: &mut Graph,
    vars: &[Var],
    config: &ModelConfig,
    src: &EncodedSeq,
    tgt_ids: &[usize],
    supervised: &[bool],
) -> Result<Var> {
    let probs = probs_graph(g, vars, config, src)?;
    g.ce_sum(probs, tgt_ids, supervised)
}

/// Evaluates the model on a batch, returning `[B, max_tgt_len, tgt_vocab]`
/// probabilities (each row a distribution).
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &[EncodedSeq],
) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty forward batch".into()));
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let (t, v) = (config.max_tgt_len, config.tgt_vocab);
    let mut data = Vec::with_capacity(batch.len() * t * v);
    for src in batch {
        let probs = probs_graph(&mut g, &vars, config, src)?;
        data.extend_from_slice(g.value(probs).data());
    }
    Tensor::from_vec(vec![batch.len(), t, v], data)
}

/// Training-run settings. `seed` drives shuffling only; parameter
/// initialization has its own seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be ≥ 1".into(),
            ));
        }
        self.adam.validate()
    }
}

/// Loss and accuracy for one completed epoch. Validation fields are `None`
/// when no validation set was given.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_char_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub wall_secs: f64,
}

/// One pair, encoded and ready to train on: tight (unpadded) source ids,
/// padded target ids, and the supervision mask covering the target characters
/// plus one terminating PAD when the width allows it.
struct Example {
    src: EncodedSeq,
    tgt_ids: Vec<usize>,
    sup: Vec<bool>,
    sup_count: usize,
}

fn prepare(
    pairs: &[TranslitPair],
    config: &ModelConfig,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<Vec<Example>> {
    if src_vocab.size() > config.src_vocab || tgt_vocab.size() > config.tgt_vocab {
        return Err(Error::InvalidArgument(format!(
            "vocabulary sizes ({}, {}) exceed model table sizes ({}, {})",
            src_vocab.size(),
            tgt_vocab.size(),
            config.src_vocab,
            config.tgt_vocab
        )));
    }
    pairs
        .iter()
        .map(|pair| {
            let n_src = pair.romanized.chars().count().min(config.max_src_len).max(1);
            let src = encode(src_vocab, &pair.romanized, n_src)?;
            let tgt = encode(tgt_vocab, &pair.native, config.max_tgt_len)?;
            let supervised = (tgt.length + 1).min(config.max_tgt_len);
            let sup: Vec<bool> = (0..config.max_tgt_len).map(|t| t < supervised).collect();
            Ok(Example {
                src,
                tgt_ids: tgt.ids,
                sup,
                sup_count: supervised,
            })
        })
        .collect()
}

fn accumulate_grad(p: &mut Parameter, g: &Tensor) {
    for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

/// Mean supervised cross entropy and per-position accuracy over `examples`,
/// without touching gradients.
fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    examples: &[Example],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut ce_sum = 0.0;
    let mut hits = 0usize;
    let mut count = 0usize;
    for chunk in examples.chunks(batch_size) {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        for ex in chunk {
            let probs = probs_graph(&mut g, &vars, config, &ex.src)?;
            let ce = g.ce_sum(probs, &ex.tgt_ids, &ex.sup)?;
            ce_sum += g.value(ce).item();
            let pred = g.value(probs).argmax_rows();
            for t in 0..ex.sup_count {
                if pred[t] == ex.tgt_ids[t] {
                    hits += 1;
                }
            }
            count += ex.sup_count;
        }
    }
    Ok((ce_sum / count as f64, hits as f64 / count as f64))
}

/// Minimizes supervised cross entropy with Adam. Deterministic for a fixed
/// seed: fixed shuffle order, single-threaded math. Gradients accumulate into
/// `params[i].grad` and are explicitly zeroed after each optimizer step.
pub fn train(
    params: &mut ModelParams,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    train_pairs: &[TranslitPair],
    val_pairs: &[TranslitPair],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<TrainHistory> {
    if train_pairs.is_empty() {
        return Err(Error::NoTrainingData);
    }
    config.validate()?;
    train_cfg.validate()?;
    let examples = prepare(train_pairs, config, src_vocab, tgt_vocab)?;
    let val_examples = prepare(val_pairs, config, src_vocab, tgt_vocab)?;

    let mut adam = Adam::new(train_cfg.adam, params.list());
    let mut rng = ChaCha20Rng::seed_from_u64(train_cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let started = Instant::now();
    let mut history = TrainHistory::default();

    for epoch in 1..=train_cfg.epochs {
        if train_cfg.shuffle {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
        }
        let mut epoch_ce = 0.0;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(train_cfg.batch_size) {
            let mut g = Graph::new();
            let vars = params.bind(&mut g);
            let mut total: Option<Var> = None;
            let mut batch_count = 0usize;
            for &idx in chunk {
                let ex = &examples[idx];
                let ce = loss_graph(&mut g, &vars, config, &ex.src, &ex.tgt_ids, &ex.sup)?;
                total = Some(match total {
                    Some(acc) => g.add(acc, ce)?,
                    None => ce,
                });
                batch_count += ex.sup_count;
            }
            let total = total.expect("non-empty chunk");
            let ce_value = g.value(total).item();
            if !ce_value.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let loss = g.scale(total, 1.0 / batch_count as f64);
            g.backward(loss)?;
            for (slot, var) in vars.iter().enumerate() {
                if let Some(grad) = g.grad(*var) {
                    accumulate_grad(&mut params.list_mut()[slot], grad);
                }
            }
            adam.step(params.list_mut());
            params.zero_grads();
            epoch_ce += ce_value;
            epoch_count += batch_count;
        }
        let train_loss = epoch_ce / epoch_count as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let (val_loss, val_char_acc) = if val_examples.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(params, config, &val_examples, train_cfg.batch_size)?;
            (Some(l), Some(a))
        };
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_char_acc,
        });
    }
    history.wall_secs = started.elapsed().as_secs_f64();
    Ok(history)
}

/// A greedy decode of one word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordRender {
    pub text: String,
    /// True when the input exceeded `max_src_len` and only its prefix was used.
    pub truncated: bool,
}

/// Greedy per-timestep argmax decode: reads all `max_tgt_len` positions,
/// stops at the first PAD, and drops UNK (plus any id with no vocabulary
/// entry). Ties break to the lowest id, so an untrained uniform model yields
/// an empty string.
pub fn transliterate_word(
    params: &ModelParams,
    config: &ModelConfig,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    word: &str,
) -> Result<WordRender> {
    let n_chars = word.chars().count();
    let truncated = n_chars > config.max_src_len;
    let src = encode(src_vocab, word, n_chars.min(config.max_src_len).max(1))?;
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let probs = probs_graph(&mut g, &vars, config, &src)?;
    let pred = g.value(probs).argmax_rows();
    let mut text = String::new();
    for id in pred {
        if id == PAD_ID {
            break;
        }
        if id == UNK_ID {
            continue;
        }
        // ids past the vocabulary's end are softmax slots with no character
        if let Some(c) = tgt_vocab.char_of(id) {
            text.push(c);
        }
    }
    Ok(WordRender { text, truncated })
}
