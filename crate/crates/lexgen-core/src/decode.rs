//! Beam search and greedy decoding over any step model.
//!
//! Hypotheses are scored by length-normalized log-probability
//! logP / len^alpha. The greedy rollout is always injected into the beam's
//! finished pool, so widening the beam can never return a worse top
//! hypothesis than greedy. Ties break by token-id lexicographic order.

use crate::data::vocab::{Vocab, BOS_ID, EOS_ID, PAD_ID};
use crate::model::{bind, decode_logits, encode, BoundIds, ParamSet};
use crate::tensor::{BufId, Scalar, Tape};
use crate::{LexError, Result};

/// A finished decode: generated target ids (terminal ⟨eos⟩ kept when the
/// model emitted one; no leading ⟨bos⟩).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub score: f64,
    pub finished: bool,
}

/// Anything that can score the next token given a ⟨bos⟩-led prefix.
pub trait StepModel {
    fn vocab_size(&self) -> usize;
    fn next_log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub bos: u32,
    pub eos: u32,
    /// Excluded from every expansion; the padding id for real vocabularies.
    pub pad: Option<u32>,
    pub beam_size: usize,
    /// Maximum number of generated tokens including the terminal ⟨eos⟩.
    pub max_len: usize,
    pub length_penalty_alpha: f64,
}

impl DecodeConfig {
    /// The usual setup over the shared vocabulary layout.
    pub fn standard(max_len: usize) -> Self {
        DecodeConfig {
            bos: BOS_ID,
            eos: EOS_ID,
            pad: Some(PAD_ID),
            beam_size: 5,
            max_len,
            length_penalty_alpha: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_len < 1 {
            return Err(LexError::Config(format!(
                "decode max_len must be at least 1, got {}",
                self.max_len
            )));
        }
        if self.beam_size < 1 {
            return Err(LexError::Config("beam_size must be at least 1".into()));
        }
        Ok(())
    }

    fn normalized(&self, logp: f64, len: usize) -> f64 {
        logp / (len as f64).powf(self.length_penalty_alpha)
    }
}

fn compare_desc(a: &(Vec<u32>, f64), b: &(Vec<u32>, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Argmax token per step until ⟨eos⟩ or the length budget.
pub fn greedy(model: &mut dyn StepModel, cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let mut tokens: Vec<u32> = Vec::new();
    let mut logp = 0.0;
    for _ in 0..cfg.max_len {
        let mut prefix = Vec::with_capacity(tokens.len() + 1);
        prefix.push(cfg.bos);
        prefix.extend_from_slice(&tokens);
        let lp = model.next_log_probs(&prefix)?;
        let mut best: Option<(u32, f64)> = None;
        for (id, &l) in lp.iter().enumerate() {
            if Some(id as u32) == cfg.pad || !l.is_finite() {
                continue;
            }
            if best.is_none_or(|(_, bl)| l > bl) {
                best = Some((id as u32, l));
            }
        }
        let (id, l) = best.ok_or_else(|| {
            LexError::Internal("no finite next-token probability to pick from".into())
        })?;
        tokens.push(id);
        logp += l;
        if id == cfg.eos {
            break;
        }
    }
    let score = cfg.normalized(logp, tokens.len());
    // Finished by construction: the loop exits at ⟨eos⟩ or the length cap.
    Ok(Hypothesis { tokens, score, finished: true })
}

/// Standard beam search; returns at most `beam_size` hypotheses sorted by
/// normalized score descending.
pub fn beam_search(model: &mut dyn StepModel, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let vocab = model.vocab_size();
    // (generated tokens, accumulated raw log-probability)
    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    for step in 0..cfg.max_len {
        let mut candidates: Vec<(Vec<u32>, f64)> = Vec::new();
        for (tokens, logp) in &live {
            let mut prefix = Vec::with_capacity(tokens.len() + 1);
            prefix.push(cfg.bos);
            prefix.extend_from_slice(tokens);
            let lp = model.next_log_probs(&prefix)?;
            if lp.len() != vocab {
                return Err(LexError::Shape(format!(
                    "step model returned {} log-probabilities for a vocabulary of {vocab}",
                    lp.len()
                )));
            }
            for (id, &l) in lp.iter().enumerate() {
                if Some(id as u32) == cfg.pad || !l.is_finite() {
                    continue;
                }
                let mut next = Vec::with_capacity(tokens.len() + 1);
                next.extend_from_slice(tokens);
                next.push(id as u32);
                candidates.push((next, logp + l));
            }
        }
        candidates.sort_by(compare_desc);
        candidates.truncate(cfg.beam_size);
        live = Vec::new();
        for (tokens, logp) in candidates {
            let is_last_step = step + 1 == cfg.max_len;
            if tokens.last() == Some(&cfg.eos) || is_last_step {
                finished.push((tokens, logp));
            } else {
                live.push((tokens, logp));
            }
        }
        if live.is_empty() {
            break;
        }
    }

    // The greedy rollout re-queries the model over the same prefixes, so
    // its accumulated score is bitwise comparable with the beam's.
    let g = greedy(model, cfg)?;
    let mut scored: Vec<Hypothesis> = finished
        .into_iter()
        .map(|(tokens, logp)| {
            let score = cfg.normalized(logp, tokens.len());
            Hypothesis { tokens, score, finished: true }
        })
        .collect();
    if !scored.iter().any(|h| h.tokens == g.tokens) {
        scored.push(g);
    }
    scored.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
    });
    scored.truncate(cfg.beam_size);
    if scored.is_empty() {
        return Err(LexError::Internal("beam search produced no hypotheses".into()));
    }
    Ok(scored)
}

// ── transformer adapter ──

/// Holds one growing evaluation tape: the source is encoded once, and each
/// `next_log_probs` call appends a fresh decoder pass over the prefix.
pub struct ModelStepper<S: Scalar> {
    tape: Tape<S>,
    bound: BoundIds,
    enc: BufId,
    vocab_size: usize,
}

impl<S: Scalar> ModelStepper<S> {
    pub fn new(params: &ParamSet<S>, src_ids: &[u32]) -> Result<Self> {
        let mut tape = Tape::new(false, 0);
        let bound = bind(&mut tape, params)?;
        let enc = encode(&mut tape, &bound, src_ids)?;
        Ok(ModelStepper { tape, bound, enc, vocab_size: params.cfg.vocab_size })
    }
}

impl<S: Scalar> StepModel for ModelStepper<S> {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
        let out = decode_logits(&mut self.tape, &self.bound, self.enc, prefix)?;
        let vals = self.tape.value(out.logits);
        let t = prefix.len();
        let row: Vec<f64> =
            vals[(t - 1) * self.vocab_size..t * self.vocab_size].iter().map(|v| v.as_f64()).collect();
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
        Ok(row.iter().map(|x| x - lse).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub text: String,
    pub score: f64,
}

/// Ranked candidate translations for one source phrase.
pub fn predict_topk<S: Scalar>(
    params: &ParamSet<S>,
    vocab: &Vocab,
    tgt_lang: &str,
    source: &str,
    beam_size: usize,
    length_penalty_alpha: f64,
) -> Result<Vec<Prediction>> {
    let src = vocab.prepare_source(tgt_lang, source)?;
    let mut stepper = ModelStepper::new(params, &src)?;
    let cfg = DecodeConfig {
        beam_size,
        length_penalty_alpha,
        // The decoder input is ⟨bos⟩ plus the generated tokens, so leave
        // one position of headroom under the model's sequence limit.
        ..DecodeConfig::standard(params.cfg.max_len - 1)
    };
    let hyps = beam_search(&mut stepper, &cfg)?;
    Ok(hyps
        .into_iter()
        .map(|h| Prediction { text: vocab.decode(&h.tokens), score: h.score })
        .collect())
}
