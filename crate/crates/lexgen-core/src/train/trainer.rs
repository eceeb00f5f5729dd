//! The training loop: token-budget batches over teacher-forced examples,
//! one tape per step, Adam updates, per-epoch validation with early
//! stopping on validation loss, best-checkpoint retention.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::lexicon::LexiconEntry;
use crate::data::vocab::{Vocab, BOS_ID, EOS_ID, PAD_ID};
use crate::model::{bind, example_loss, grad_of, BoundIds, ParamSet};
use crate::tensor::{BufId, Tape};
use crate::train::adam::{adam_step, AdamState};
use crate::train::schedule::lr_schedule;
use crate::util::{derived_seed, fisher_yates, rng_from};
use crate::{LexError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: u64,
    pub label_smoothing: f64,
    pub dropout: f64,
    pub max_tokens_per_batch: usize,
    pub max_updates: u64,
    pub patience_epochs: u32,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            warmup_steps: 4000,
            label_smoothing: 0.1,
            dropout: 0.2,
            max_tokens_per_batch: 1024,
            max_updates: 200_000,
            patience_epochs: 5,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            grad_clip_norm: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset; rates and budgets tuned once on the synthetic
    /// fixture and then frozen.
    pub fn toy() -> Self {
        TrainConfig {
            lr: 1e-3,
            warmup_steps: 200,
            dropout: 0.1,
            max_tokens_per_batch: 512,
            max_updates: 5000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(LexError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(LexError::Config(format!(
                "label_smoothing must be in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LexError::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.max_tokens_per_batch == 0 {
            return Err(LexError::Config("max_tokens_per_batch must be positive".into()));
        }
        if self.max_updates == 0 {
            return Err(LexError::Config("max_updates must be positive".into()));
        }
        if self.patience_epochs == 0 {
            return Err(LexError::Config("patience_epochs must be at least 1".into()));
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(LexError::Config(format!("{name} must be in [0, 1), got {beta}")));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(LexError::Config("adam_eps must be positive".into()));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(LexError::Config(format!(
                    "grad_clip_norm must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// One teacher-forcing pair: encoder input ids (language tag, source
/// characters, ⟨eos⟩) and raw target ids (no ⟨bos⟩/⟨eos⟩; the loss adds
/// them).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl TrainExample {
    /// Token count used for batch budgeting, including ⟨bos⟩/⟨eos⟩.
    pub fn tokens(&self) -> usize {
        self.src.len() + self.tgt.len() + 2
    }
}

/// Expands entries into one example per (source, target) pair; entries
/// with several gold targets become several examples.
pub fn encode_examples(entries: &[LexiconEntry], vocab: &Vocab) -> Result<Vec<TrainExample>> {
    let mut out = Vec::new();
    for e in entries {
        let src = vocab.prepare_source(&e.tgt_lang, &e.source)?;
        for t in &e.targets {
            out.push(TrainExample { src: src.clone(), tgt: vocab.encode_target(t) });
        }
    }
    Ok(out)
}

// ── logging ──

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub step: u64,
    pub val_loss: f64,
    pub val_chrf: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

impl TrainLog {
    pub fn steps_tsv(&self) -> String {
        let mut out = String::from("step\tloss\tlr\tgrad_norm\n");
        for r in &self.steps {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.step, r.loss, r.lr, r.grad_norm));
        }
        out
    }

    pub fn epochs_tsv(&self) -> String {
        let mut out = String::from("epoch\tstep\tval_loss\tval_chrf\n");
        for r in &self.epochs {
            let chrf = r.val_chrf.map_or("-".to_string(), |c| c.to_string());
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.epoch, r.step, r.val_loss, chrf));
        }
        out
    }
}

// ── early stopping ──

/// Tracks strict improvements of a minimized metric and signals a stop
/// after `patience` consecutive non-improving observations.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    best: f64,
    since_improvement: u32,
    patience: u32,
}

impl EarlyStopper {
    pub fn new(patience: u32) -> Self {
        EarlyStopper { best: f64::INFINITY, since_improvement: 0, patience }
    }

    /// Returns (improved, should_stop).
    pub fn observe(&mut self, value: f64) -> (bool, bool) {
        if value < self.best {
            self.best = value;
            self.since_improvement = 0;
            (true, false)
        } else {
            self.since_improvement += 1;
            (false, self.since_improvement >= self.patience)
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

// ── batching ──

/// Shuffles, length-sorts (stable, so ties keep the shuffled order), and
/// greedily packs examples into batches of at most `budget` tokens. An
/// example larger than the whole budget gets a batch of its own. Batch
/// order is shuffled again so epochs do not always present short examples
/// first.
fn make_batches(
    examples: &[TrainExample],
    budget: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    fisher_yates(&mut order, rng);
    order.sort_by_key(|&i| examples[i].tokens());
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut current_tokens = 0usize;
    for i in order {
        let t = examples[i].tokens();
        if !current.is_empty() && current_tokens + t > budget {
            batches.push(std::mem::take(&mut current));
            current_tokens = 0;
        }
        current.push(i);
        current_tokens += t;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    fisher_yates(&mut batches, rng);
    batches
}

/// Token-weighted mean of per-example losses, all recorded on one tape so
/// a single backward pass covers the batch.
fn batch_loss(
    tape: &mut Tape<f64>,
    bound: &BoundIds,
    examples: &[&TrainExample],
    label_smoothing: f64,
) -> Result<(BufId, usize)> {
    let mut parts: Vec<(BufId, usize)> = Vec::with_capacity(examples.len());
    let mut total = 0usize;
    for ex in examples {
        let (loss, n) =
            example_loss(tape, bound, &ex.src, &ex.tgt, label_smoothing, BOS_ID, EOS_ID, PAD_ID)?;
        parts.push((loss, n));
        total += n;
    }
    let mut acc: Option<BufId> = None;
    for (loss, n) in parts {
        let scaled = tape.scale(loss, n as f64 / total as f64)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    Ok((acc.expect("non-empty batch"), total))
}

/// Token-weighted mean loss over a whole example list, without dropout
/// and without gradients.
pub fn dataset_loss(
    params: &ParamSet<f64>,
    examples: &[TrainExample],
    label_smoothing: f64,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(LexError::Config("cannot evaluate loss on zero examples".into()));
    }
    let mut total = 0.0;
    let mut n_total = 0usize;
    for chunk in examples.chunks(64) {
        let mut tape = Tape::new(false, 0);
        let bound = bind(&mut tape, params)?;
        for ex in chunk {
            let (loss, n) = example_loss(
                &mut tape,
                &bound,
                &ex.src,
                &ex.tgt,
                label_smoothing,
                BOS_ID,
                EOS_ID,
                PAD_ID,
            )?;
            total += tape.scalar_value(loss)? * n as f64;
            n_total += n;
        }
    }
    Ok(total / n_total as f64)
}

// ── the loop ──

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxUpdates,
    Patience,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::MaxUpdates => write!(f, "max_updates"),
            StopReason::Patience => write!(f, "patience"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best-validation epoch, not the last one.
    pub params: ParamSet<f64>,
    pub best_val_loss: f64,
    pub best_epoch: u64,
    pub updates: u64,
    pub epochs: u64,
    pub stop_reason: StopReason,
    pub log: TrainLog,
}

/// Per-epoch metric hook: gets the current parameters, returns a score
/// to log next to validation loss.
pub type EpochMetric<'a> = dyn Fn(&ParamSet<f64>) -> Result<f64> + 'a;

/// Trains from the given initial parameters. The model configuration is
/// taken from `init.cfg` with its dropout overridden by the training
/// config. `epoch_chrf`, when present, is evaluated once per epoch on the
/// current parameters and logged alongside validation loss; it never
/// influences stopping.
pub fn train(
    tcfg: &TrainConfig,
    init: ParamSet<f64>,
    train_ex: &[TrainExample],
    valid_ex: &[TrainExample],
    epoch_chrf: Option<&EpochMetric>,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    if train_ex.is_empty() {
        return Err(LexError::Config("training split is empty".into()));
    }
    let mut params = init;
    params.cfg.dropout_p = tcfg.dropout;
    params.cfg.validate()?;

    let mut log = TrainLog::default();
    let val_set: &[TrainExample] = if valid_ex.is_empty() {
        log.warnings
            .push("validation split is empty; validating on the training split".into());
        train_ex
    } else {
        valid_ex
    };

    let mut adam = AdamState::new();
    let mut stopper = EarlyStopper::new(tcfg.patience_epochs);
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0u64;
    let mut step = 0u64;
    let mut epoch = 0u64;
    let mut reason: Option<StopReason> = None;

    while reason.is_none() {
        epoch += 1;
        let mut rng = rng_from(&["epoch", &tcfg.seed.to_string(), &epoch.to_string()]);
        let batches = make_batches(train_ex, tcfg.max_tokens_per_batch, &mut rng);
        let mut exhausted = false;
        for batch in &batches {
            step += 1;
            let lr_t = lr_schedule(step, tcfg.lr, tcfg.warmup_steps);
            let mut tape = Tape::new(
                true,
                derived_seed(&["train-step", &tcfg.seed.to_string(), &step.to_string()]),
            );
            let bound = bind(&mut tape, &params)?;
            let refs: Vec<&TrainExample> = batch.iter().map(|&i| &train_ex[i]).collect();
            let (loss_id, _) = batch_loss(&mut tape, &bound, &refs, tcfg.label_smoothing)?;
            let loss = tape.scalar_value(loss_id)?;
            if !loss.is_finite() {
                return Err(LexError::Internal(format!(
                    "non-finite training loss {loss} at step {step}"
                )));
            }
            tape.backward(loss_id)?;
            let grads: BTreeMap<String, Vec<f64>> = params
                .names()
                .into_iter()
                .map(|name| {
                    let g = grad_of(&tape, &bound, &name).to_vec();
                    (name, g)
                })
                .collect();
            let grad_norm = adam_step(&mut params, &grads, &mut adam, lr_t, tcfg)?;
            log.steps.push(StepRecord { step, loss, lr: lr_t, grad_norm });
            if step >= tcfg.max_updates {
                exhausted = true;
                break;
            }
        }

        let val_loss = dataset_loss(&params, val_set, tcfg.label_smoothing)?;
        if !val_loss.is_finite() {
            return Err(LexError::Internal(format!(
                "non-finite validation loss {val_loss} after epoch {epoch}"
            )));
        }
        let val_chrf = match epoch_chrf {
            Some(f) => Some(f(&params)?),
            None => None,
        };
        log.epochs.push(EpochRecord { epoch, step, val_loss, val_chrf });
        let (improved, stop) = stopper.observe(val_loss);
        if improved {
            best_val = val_loss;
            best_epoch = epoch;
            best = params.clone();
        }
        if exhausted {
            reason = Some(StopReason::MaxUpdates);
        } else if stop {
            reason = Some(StopReason::Patience);
        }
    }

    Ok(TrainOutcome {
        params: best,
        best_val_loss: best_val,
        best_epoch,
        updates: step,
        epochs: epoch,
        stop_reason: reason.expect("loop exits with a reason"),
        log,
    })
}
