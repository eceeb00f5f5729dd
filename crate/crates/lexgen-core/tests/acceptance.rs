//! Acceptance suite: ten verifiable properties of the whole system, from
//! gradient fidelity up through checkpoint round trips. Each test prints
//! one verdict line (visible under `--nocapture`) and fails loudly with
//! the measured evidence when its property does not hold.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lexgen_core::checkpoint::{load_checkpoint, save_checkpoint};
use lexgen_core::data::{
    split_ddst, split_idst, split_iddt, synth_fixture, write_lexicon_string, LexiconEntry,
    SynthConfig, Vocab, BOS_ID, EOS_ID, PAD_ID,
};
use lexgen_core::decode::{beam_search, greedy, predict_topk, DecodeConfig, ModelStepper, StepModel};
use lexgen_core::eval::{chrf_pp, intersection_analysis, precision_at_1, ChrfConfig};
use lexgen_core::model::routing::{dr_forward_probed, DrGatedIds, DrIds};
use lexgen_core::model::transformer::example_loss;
use lexgen_core::model::{bind, decode_logits, encode, grad_of, DrPosition, ModelConfig, ParamSet};
use lexgen_core::tensor::{Tape, Tensor};
use lexgen_core::train::{encode_examples, train, TrainConfig};
use lexgen_core::Result;

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n:2} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn chrf(hyp: &str, refs: &[&str]) -> f64 {
    chrf_pp(hyp, refs, &ChrfConfig::default()).unwrap()
}

/// Greedy top-1 text for every entry under the given parameters.
fn greedy_predictions(
    params: &ParamSet<f64>,
    vocab: &Vocab,
    entries: &[LexiconEntry],
) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let preds = predict_topk(params, vocab, &e.tgt_lang, &e.source, 1, 1.0)?;
        out.push(preds.first().map(|p| p.text.clone()).unwrap_or_default());
    }
    Ok(out)
}

fn mean_chrf(preds: &[String], entries: &[LexiconEntry]) -> f64 {
    let total: f64 = preds
        .iter()
        .zip(entries)
        .map(|(p, e)| {
            let refs: Vec<&str> = e.targets.iter().map(|t| t.as_str()).collect();
            chrf(p, &refs)
        })
        .sum();
    total / entries.len() as f64
}

// ── 1: gradient fidelity ──

#[test]
fn c01_gradient_fidelity() {
    let started = Instant::now();
    let mut cfg = ModelConfig::toy(12);
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.d_gate_hidden = 4;
    cfg.dropout_p = 0.0;
    cfg.dr_position = DrPosition::AfterSan;
    let mut params = ParamSet::<f64>::init(&cfg, 42).unwrap();
    // The gate head starts at exactly zero, which pins every gate to 0.5
    // and silences the gate hidden layer; nudge it so all paths carry
    // gradient signal.
    for (k, v) in params.get_mut("dr.gate.w2").data_mut().iter_mut().enumerate() {
        *v = 0.07 * (k as f64 + 1.0);
    }
    let src: &[u32] = &[1, 5, 7, 9];
    let tgt: &[u32] = &[6, 8, 10];

    let loss_of = |p: &ParamSet<f64>| -> f64 {
        let mut tape: Tape<f64> = Tape::new(false, 0);
        let b = bind(&mut tape, p).unwrap();
        let (loss, _) = example_loss(&mut tape, &b, src, tgt, 0.1, BOS_ID, EOS_ID, PAD_ID).unwrap();
        tape.scalar_value(loss).unwrap()
    };

    let mut tape: Tape<f64> = Tape::new(false, 0);
    let b = bind(&mut tape, &params).unwrap();
    let (loss, _) = example_loss(&mut tape, &b, src, tgt, 0.1, BOS_ID, EOS_ID, PAD_ID).unwrap();
    tape.backward(loss).unwrap();

    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut probed = 0usize;
    let names = params.names();
    for name in &names {
        let analytic = grad_of(&tape, &b, name).to_vec();
        let len = analytic.len();
        // Probe a spread of coordinates across every tensor.
        let picks: BTreeSet<usize> =
            (0..len.min(4)).map(|k| k * (len - 1).max(1) / 3).map(|i| i.min(len - 1)).collect();
        for idx in picks {
            let orig = params.get(name).data()[idx];
            params.get_mut(name).data_mut()[idx] = orig + h;
            let up = loss_of(&params);
            params.get_mut(name).data_mut()[idx] = orig - h;
            let down = loss_of(&params);
            params.get_mut(name).data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = analytic[idx];
            let denom = fd.abs().max(an.abs());
            let rel = if denom < 1e-7 { (fd - an).abs() } else { (fd - an).abs() / denom };
            assert!(
                rel < 1e-4,
                "{name}[{idx}]: finite difference {fd} vs analytic {an} (rel {rel:.3e})"
            );
            worst = worst.max(rel);
            probed += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient fidelity",
        worst < 1e-4 && secs < 60.0,
        &format!(
            "max rel err {worst:.2e} over {probed} coordinates in {} tensors ({secs:.1}s)",
            names.len()
        ),
    );
}

// ── 2: routing-equation oracle ──

#[test]
fn c02_routing_equation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    for draw in 0..100 {
        let t = rng.random_range(1..=6usize);
        let d = 2 * rng.random_range(2..=6usize);
        let gh = rng.random_range(2..=8usize);
        let rand_mat = |rng: &mut ChaCha8Rng, r: usize, c: usize| -> Vec<f64> {
            (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect()
        };
        let z = rand_mat(&mut rng, t, d);
        let f_z = rand_mat(&mut rng, t, d);
        let w_dom = rand_mat(&mut rng, d, d);
        let w_shared = rand_mat(&mut rng, d, d);
        let w1 = rand_mat(&mut rng, d, gh);
        let bias = rand_mat(&mut rng, 1, gh);
        let w2 = rand_mat(&mut rng, gh, 1);

        // Independent plain-arithmetic computation of the routed output.
        let mut plain = vec![0.0; t * d];
        let mut gates_plain = vec![0.0; t];
        for i in 0..t {
            let mut hidden = vec![0.0; gh];
            for (jj, hv) in hidden.iter_mut().enumerate() {
                let mut s = bias[jj];
                for k in 0..d {
                    s += z[i * d + k] * w1[k * gh + jj];
                }
                *hv = s.max(0.0);
            }
            let logit: f64 = hidden.iter().zip(&w2).map(|(h, w)| h * w).sum();
            let g = 1.0 / (1.0 + (-logit).exp());
            gates_plain[i] = g;
            for j in 0..d {
                let mut dom = 0.0;
                let mut sh = 0.0;
                for k in 0..d {
                    dom += f_z[i * d + k] * w_dom[k * d + j];
                    sh += f_z[i * d + k] * w_shared[k * d + j];
                }
                plain[i * d + j] = g * dom + (1.0 - g) * sh;
            }
        }

        let mut tape: Tape<f64> = Tape::new(false, 0);
        let leaf = |tape: &mut Tape<f64>, r: usize, c: usize, data: &[f64]| {
            let t = Tensor::new(vec![r, c], data.to_vec()).unwrap();
            tape.leaf(&t).unwrap()
        };
        let z_id = leaf(&mut tape, t, d, &z);
        let f_id = leaf(&mut tape, t, d, &f_z);
        let ids = DrIds {
            w_shared: leaf(&mut tape, d, d, &w_shared),
            gated: Some(DrGatedIds {
                w_dom: leaf(&mut tape, d, d, &w_dom),
                w1: leaf(&mut tape, d, gh, &w1),
                b: leaf(&mut tape, 1, gh, &bias),
                w2: leaf(&mut tape, gh, 1, &w2),
            }),
        };
        let (out, gate) = dr_forward_probed(&mut tape, z_id, f_id, &ids, 0.0).unwrap();
        let out_v = tape.value(out);
        for (a, p) in out_v.iter().zip(&plain) {
            let diff = (a - p).abs();
            assert!(diff < 1e-6, "draw {draw}: routed output off by {diff}");
            worst = worst.max(diff);
        }
        let gate_v = tape.value(gate.expect("gated mode probes the gate"));
        for (gv, gp) in gate_v.iter().zip(&gates_plain) {
            assert!(*gv > 0.0 && *gv < 1.0, "gate {gv} left (0,1)");
            assert!((gv - gp).abs() < 1e-12);
        }

        // With W_dom == W_shared the mixture collapses: perturbing every
        // gate parameter must leave the output unchanged to 1e-6.
        let mut tape2: Tape<f64> = Tape::new(false, 0);
        let z2 = leaf(&mut tape2, t, d, &z);
        let f2 = leaf(&mut tape2, t, d, &f_z);
        let tied = |tape: &mut Tape<f64>, perturb: f64, rng: &mut ChaCha8Rng| {
            let jitter = |m: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
                m.iter().map(|v| v + perturb * rng.random_range(-1.0..1.0)).collect()
            };
            DrIds {
                w_shared: leaf(tape, d, d, &w_shared),
                gated: Some(DrGatedIds {
                    w_dom: leaf(tape, d, d, &w_shared),
                    w1: leaf(tape, d, gh, &jitter(&w1, rng)),
                    b: leaf(tape, 1, gh, &jitter(&bias, rng)),
                    w2: leaf(tape, gh, 1, &jitter(&w2, rng)),
                }),
            }
        };
        let ids_a = tied(&mut tape2, 0.0, &mut rng);
        let (out_a, _) = dr_forward_probed(&mut tape2, z2, f2, &ids_a, 0.0).unwrap();
        let base = tape2.value(out_a).to_vec();
        let ids_b = tied(&mut tape2, 2.0, &mut rng);
        let (out_b, _) = dr_forward_probed(&mut tape2, z2, f2, &ids_b, 0.0).unwrap();
        let moved = tape2.value(out_b);
        for (a, bv) in base.iter().zip(moved) {
            assert!(
                (a - bv).abs() < 1e-6,
                "tied-weight output moved by {} under gate perturbation",
                (a - bv).abs()
            );
        }
    }
    verdict(
        2,
        "routing-equation oracle",
        true,
        &format!("100 random draws, max deviation {worst:.2e}; gates in (0,1); tied-weight invariance holds"),
    );
}

// ── 3: ablation-mode contracts ──

#[test]
fn c03_ablation_mode_contracts() {
    // A dr_position=none model carries exactly the vanilla parameter set,
    // enumerated here independently.
    let cfg = ModelConfig::toy(24);
    let mut none_cfg = cfg.clone();
    none_cfg.dr_position = DrPosition::None;
    let none_params = ParamSet::<f64>::init(&none_cfg, 3).unwrap();
    let mut expect = vec!["embed".to_string(), "out_proj".to_string()];
    for i in 0..cfg.n_enc_layers {
        for w in ["wq", "wk", "wv", "wo"] {
            expect.push(format!("enc.{i}.san.{w}"));
        }
        for ln in ["ln1", "ln2"] {
            expect.push(format!("enc.{i}.{ln}.gamma"));
            expect.push(format!("enc.{i}.{ln}.beta"));
        }
        for w in ["w1", "b1", "w2", "b2"] {
            expect.push(format!("enc.{i}.ffn.{w}"));
        }
    }
    for i in 0..cfg.n_dec_layers {
        for att in ["san", "can"] {
            for w in ["wq", "wk", "wv", "wo"] {
                expect.push(format!("dec.{i}.{att}.{w}"));
            }
        }
        for ln in ["ln1", "ln2", "ln3"] {
            expect.push(format!("dec.{i}.{ln}.gamma"));
            expect.push(format!("dec.{i}.{ln}.beta"));
        }
        for w in ["w1", "b1", "w2", "b2"] {
            expect.push(format!("dec.{i}.ffn.{w}"));
        }
    }
    expect.sort();
    assert_eq!(none_params.names(), expect, "none-model parameter inventory");

    // A shared_only checkpoint's manifest lists w_shared and no gate
    // tensors; verified on the serialized bytes, not the in-memory set.
    let mut shared_cfg = cfg.clone();
    shared_cfg.dr_position = DrPosition::SharedOnly;
    let shared_params = ParamSet::<f64>::init(&shared_cfg, 3).unwrap();
    let entries = synth_fixture(0, &SynthConfig { n_domains: 2, n_langs: 1, n_pairs_per_cell: 4 }).unwrap();
    let vocab = Vocab::build(&entries).unwrap();
    let mut ck_cfg = shared_cfg.clone();
    ck_cfg.vocab_size = vocab.size();
    let ck_params = ParamSet::<f64>::init(&ck_cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("shared.ckpt");
    save_checkpoint(&ck_params, &vocab, 1, 0.5, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let manifest: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
    let stored: Vec<&str> = manifest["tensors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["name"].as_str().unwrap())
        .collect();
    assert!(stored.contains(&"dr.w_shared"));
    for absent in ["dr.w_dom", "dr.gate.w1", "dr.gate.b", "dr.gate.w2"] {
        assert!(!stored.contains(&absent), "{absent} leaked into a shared_only checkpoint");
    }
    drop(shared_params);

    // after_san and after_can differ on a random-seed witness once the
    // gate head is off zero.
    let logits_for = |dr: DrPosition| -> Vec<f64> {
        let mut c = cfg.clone();
        c.dr_position = dr;
        let mut p = ParamSet::<f64>::init(&c, 9).unwrap();
        for (k, v) in p.get_mut("dr.gate.w2").data_mut().iter_mut().enumerate() {
            *v = 0.2 * (k as f64 + 1.0);
        }
        let mut tape: Tape<f64> = Tape::new(false, 0);
        let b = bind(&mut tape, &p).unwrap();
        let enc = encode(&mut tape, &b, &[1, 4, 7]).unwrap();
        let out = decode_logits(&mut tape, &b, enc, &[2, 6, 11]).unwrap();
        tape.value(out.logits).to_vec()
    };
    let san = logits_for(DrPosition::AfterSan);
    let can = logits_for(DrPosition::AfterCan);
    let max_gap = san
        .iter()
        .zip(&can)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_gap > 1e-9, "placement witness: outputs identical");

    verdict(
        3,
        "ablation-mode contracts",
        true,
        &format!(
            "none == vanilla ({} tensors); shared_only checkpoint carries no gate tensors; placement witness gap {max_gap:.2e}",
            expect.len()
        ),
    );
}

// ── 4: chrf oracle agreement ──

#[test]
fn c04_chrf_oracle() {
    // Reference values computed once with the trusted scorer (word order 1,
    // char order 4, beta 2) and frozen.
    let cases: &[(f64, &str, &[&str])] = &[
        (100.0, "photosynthesis", &["photosynthesis"]),
        (43.66666666666667, "cat sat", &["cat mat"]),
        (100.0, "भक्षकोशिकता", &["भक्षकोशिकता", "फैगोसाइटोसिस"]),
        (7.6923076923077005, "फैगोसाइटोसिस", &["भक्षकोशिकता", "अनादर्श गैस"]),
        (73.32269769769769, "अनादर्श गैस", &["आदर्श गैस"]),
        (95.7240656886605, "ideal gas.", &["ideal gas"]),
        (44.61549318199962, "thermal energy", &["thermal capacity"]),
        (73.54811854811854, "Photosynthesis", &["photosynthesis"]),
        (80.0, "light year", &["lightyear"]),
        (30.952380952380953, "aaaa", &["aa"]),
        (79.11230700856458, "enzyme catalysis reaction", &["enzyme reaction"]),
        (100.0, "blue   whale", &["blue whale"]),
        (94.56504516988386, ",cat sat", &["cat sat"]),
        (70.05099420353659, "non ideal gas", &["आदर्श गैस", "non-ideal gas"]),
    ];
    let mut worst = 0.0f64;
    let mut multi_ref = 0;
    for (want, hyp, refs) in cases {
        if refs.len() > 1 {
            multi_ref += 1;
        }
        let got = chrf(hyp, refs);
        let diff = (got - want).abs();
        assert!(diff < 0.01, "chrf({hyp:?}) = {got}, reference scorer says {want}");
        worst = worst.max(diff);
    }
    assert!(cases.len() >= 10 && multi_ref >= 1);
    assert_eq!(chrf("ideal gas", &["ideal gas"]), 100.0, "exact match");
    let disjoint = chrf("abcd", &["efgh"]);
    assert!(disjoint.abs() < 0.01, "char-disjoint pair scored {disjoint}");
    verdict(
        4,
        "chrf oracle",
        true,
        &format!(
            "{} curated pairs within 0.01 of the reference scorer (max gap {worst:.1e}), {multi_ref} multi-reference; exact=100; disjoint={disjoint:.1e}",
            cases.len()
        ),
    );
}

// ── 5: overfit sanity ──

#[test]
fn c05_overfit_sanity() {
    let started = Instant::now();
    let cfg = SynthConfig { n_domains: 2, n_langs: 2, n_pairs_per_cell: 16 };
    let entries = synth_fixture(0, &cfg).unwrap();
    assert_eq!(entries.len(), 64);
    let vocab = Vocab::build(&entries).unwrap();
    let model_cfg = ModelConfig::toy(vocab.size());
    let mut tcfg = TrainConfig::toy();
    tcfg.max_updates = 2000;
    tcfg.seed = 0;
    let examples = encode_examples(&entries, &vocab).unwrap();
    let init = ParamSet::init(&model_cfg, tcfg.seed).unwrap();
    // Overfit run: validation is the training set itself.
    let outcome = train(&tcfg, init, &examples, &examples, None).unwrap();
    assert!(outcome.updates <= 2000);

    let preds = greedy_predictions(&outcome.params, &vocab, &entries).unwrap();
    let train_chrf = mean_chrf(&preds, &entries);
    let p1 = precision_at_1(&preds, &entries).unwrap();
    let secs = started.elapsed().as_secs_f64();

    // Determinism per seed, demonstrated on a shorter budget.
    let mut short = tcfg.clone();
    short.max_updates = 120;
    let a = train(&short, ParamSet::init(&model_cfg, 0).unwrap(), &examples, &examples, None)
        .unwrap();
    let b = train(&short, ParamSet::init(&model_cfg, 0).unwrap(), &examples, &examples, None)
        .unwrap();
    for name in a.params.names() {
        let av = a.params.get(&name).data();
        let bv = b.params.get(&name).data();
        for (x, y) in av.iter().zip(bv) {
            assert_eq!(x.to_bits(), y.to_bits(), "{name}: rerun diverged");
        }
    }

    verdict(
        5,
        "overfit sanity",
        train_chrf >= 95.0 && p1 >= 0.9 && secs < 300.0,
        &format!(
            "train ChrF++ {train_chrf:.2}, P@1 {p1:.3} after {} updates in {secs:.0}s; rerun bit-identical",
            outcome.updates
        ),
    );
}

// ── 6: routed-vs-shared direction ──

#[test]
fn c06_routing_direction_on_held_out_idst() {
    let started = Instant::now();
    let entries = synth_fixture(0, &SynthConfig::default()).unwrap();
    let splits = split_idst(entries, 0).unwrap();
    let mut all = splits.train.clone();
    all.extend(splits.valid.iter().cloned());
    all.extend(splits.test.iter().cloned());
    let vocab = Vocab::build(&all).unwrap();
    let train_ex = encode_examples(&splits.train, &vocab).unwrap();
    let valid_ex = encode_examples(&splits.valid, &vocab).unwrap();

    let run = |dr: DrPosition, seed: u64| -> f64 {
        let mut model_cfg = ModelConfig::toy(vocab.size());
        model_cfg.dr_position = dr;
        let mut tcfg = TrainConfig::toy();
        tcfg.max_updates = 1500;
        tcfg.seed = seed;
        let init = ParamSet::init(&model_cfg, seed).unwrap();
        let outcome = train(&tcfg, init, &train_ex, &valid_ex, None).unwrap();
        let preds = greedy_predictions(&outcome.params, &vocab, &splits.test).unwrap();
        mean_chrf(&preds, &splits.test)
    };

    let seeds = [0u64, 1, 2];
    let routed: Vec<f64> = seeds.iter().map(|&s| run(DrPosition::AfterSan, s)).collect();
    let shared: Vec<f64> = seeds.iter().map(|&s| run(DrPosition::SharedOnly, s)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let routed_mean = mean(&routed);
    let shared_mean = mean(&shared);
    let margin = routed_mean - shared_mean;
    let secs = started.elapsed().as_secs_f64();
    verdict(
        6,
        "routed-vs-shared direction",
        margin > 0.0,
        &format!(
            "held-out IDST mean test ChrF++ over seeds {seeds:?}: after_san {routed_mean:.2} {routed:.2?} vs shared_only {shared_mean:.2} {shared:.2?}, margin +{margin:.2} ({secs:.0}s)"
        ),
    );
}

// ── 7: beam search equivalence ──

/// Step model with a fixed random log-softmax table per prefix.
struct TableModel {
    vocab: usize,
    seed: u64,
}

impl StepModel for TableModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut h = self.seed;
        for &t in prefix {
            h = h.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits: Vec<f64> = (0..self.vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        Ok(logits.iter().map(|l| l - m - z.ln()).collect())
    }
}

/// Exhaustive enumeration of every finished decode, ranked like the beam:
/// normalized score descending, then token-lexicographic.
fn brute_force(model: &mut dyn StepModel, cfg: &DecodeConfig) -> Vec<(Vec<u32>, f64)> {
    let vocab = model.vocab_size() as u32;
    let mut out: Vec<(Vec<u32>, f64)> = Vec::new();
    // Stack of unfinished prefixes (no eos inside) with raw log-prob.
    let mut stack: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((tokens, logp)) = stack.pop() {
        let mut prefix = Vec::with_capacity(tokens.len() + 1);
        prefix.push(cfg.bos);
        prefix.extend_from_slice(&tokens);
        let lp = model.next_log_probs(&prefix).unwrap();
        for id in 0..vocab {
            if Some(id) == cfg.pad || !lp[id as usize].is_finite() {
                continue;
            }
            let mut next = tokens.clone();
            next.push(id);
            let next_logp = logp + lp[id as usize];
            if id == cfg.eos || next.len() == cfg.max_len {
                let score = next_logp / (next.len() as f64).powf(cfg.length_penalty_alpha);
                out.push((next, score));
            } else {
                stack.push((next, next_logp));
            }
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

#[test]
fn c07_beam_search_equivalence() {
    // Full-order agreement with exhaustive enumeration on random tables.
    let mut checked_orders = 0usize;
    for seed in 0..20u64 {
        for &alpha in &[0.7, 1.0] {
            let mut model = TableModel { vocab: 5, seed };
            let cfg = DecodeConfig {
                bos: 0,
                eos: 1,
                pad: None,
                beam_size: 2000,
                max_len: 4,
                length_penalty_alpha: alpha,
            };
            let truth = brute_force(&mut model, &cfg);
            let beam = beam_search(&mut model, &cfg).unwrap();
            assert_eq!(beam.len(), truth.len(), "seed {seed}: candidate count");
            for (h, (tokens, score)) in beam.iter().zip(&truth) {
                assert_eq!(&h.tokens, tokens, "seed {seed} alpha {alpha}: order mismatch");
                assert!((h.score - score).abs() < 1e-9);
            }
            checked_orders += truth.len();
        }
    }

    // beam-1 equals greedy on 50 random table models.
    for seed in 100..150u64 {
        let mut model = TableModel { vocab: 5, seed };
        let cfg = DecodeConfig {
            bos: 0,
            eos: 1,
            pad: None,
            beam_size: 1,
            max_len: 4,
            length_penalty_alpha: 1.0,
        };
        let g = greedy(&mut model, &cfg).unwrap();
        let b = beam_search(&mut model, &cfg).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].tokens, g.tokens, "seed {seed}: beam-1 != greedy");
        assert!((b[0].score - g.score).abs() < 1e-12);
    }

    // The same two properties on real transformer steppers with a 5-token
    // output space.
    for seed in 0..3u64 {
        let mut cfg = ModelConfig::toy(5);
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.d_ff = 16;
        cfg.d_gate_hidden = 4;
        let params = ParamSet::<f64>::init(&cfg, seed).unwrap();
        let dcfg = DecodeConfig {
            bos: BOS_ID,
            eos: EOS_ID,
            pad: Some(PAD_ID),
            beam_size: 2000,
            max_len: 3,
            length_penalty_alpha: 1.0,
        };
        let truth = {
            let mut stepper = ModelStepper::new(&params, &[1, 4, 2]).unwrap();
            brute_force(&mut stepper, &dcfg)
        };
        let beam = {
            let mut stepper = ModelStepper::new(&params, &[1, 4, 2]).unwrap();
            beam_search(&mut stepper, &dcfg).unwrap()
        };
        for (h, (tokens, score)) in beam.iter().zip(&truth) {
            assert_eq!(&h.tokens, tokens, "transformer seed {seed}: order mismatch");
            assert!((h.score - score).abs() < 1e-9);
        }
        let mut g1 = dcfg.clone();
        g1.beam_size = 1;
        let greedy_hyp = {
            let mut stepper = ModelStepper::new(&params, &[1, 4, 2]).unwrap();
            greedy(&mut stepper, &g1).unwrap()
        };
        let beam1 = {
            let mut stepper = ModelStepper::new(&params, &[1, 4, 2]).unwrap();
            beam_search(&mut stepper, &g1).unwrap()
        };
        assert_eq!(beam1[0].tokens, greedy_hyp.tokens);
    }

    verdict(
        7,
        "beam-search equivalence",
        true,
        &format!(
            "full ranking matches exhaustive enumeration ({checked_orders} candidates over 40 table configs + 3 transformers); beam-1 == greedy on 50 models"
        ),
    );
}

// ── 8: split-regime guarantees ──

fn random_entries(rng: &mut ChaCha8Rng) -> Vec<LexiconEntry> {
    let n_domains = rng.random_range(2..=4usize);
    let n_langs = rng.random_range(1..=3usize);
    let mut entries = Vec::new();
    for d in 0..n_domains {
        for l in 0..n_langs {
            let n = rng.random_range(4..=30usize);
            for k in 0..n {
                entries.push(LexiconEntry {
                    domain: format!("d{d}"),
                    src_lang: "src".into(),
                    tgt_lang: format!("l{l}"),
                    source: format!("w{d}_{l}_{k}"),
                    targets: vec![format!("t{d}_{l}_{k}")],
                });
            }
        }
    }
    entries
}

fn key_set(entries: &[LexiconEntry]) -> BTreeSet<String> {
    entries.iter().map(|e| e.key()).collect()
}

#[test]
fn c08_split_regime_guarantees() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let trials = 1000usize;
    for trial in 0..trials {
        let entries = random_entries(&mut rng);
        let seed = rng.random::<u64>();
        let all_keys = key_set(&entries);
        let domains: BTreeSet<String> = entries.iter().map(|e| e.domain.clone()).collect();
        let langs: BTreeSet<String> = entries.iter().map(|e| e.tgt_lang.clone()).collect();

        // IDST: 80/10/10 within rounding per (domain, lang) group, and the
        // three parts partition the input exactly.
        let s = split_idst(entries.clone(), seed).unwrap();
        let (train_k, valid_k, test_k) = (key_set(&s.train), key_set(&s.valid), key_set(&s.test));
        assert_eq!(train_k.len() + valid_k.len() + test_k.len(), all_keys.len());
        let union: BTreeSet<_> = train_k.union(&valid_k).chain(&test_k).cloned().collect();
        assert_eq!(union, all_keys, "trial {trial}: idst lost or invented entries");
        for d in &domains {
            for l in &langs {
                let count = |v: &[LexiconEntry]| {
                    v.iter().filter(|e| &e.domain == d && &e.tgt_lang == l).count() as f64
                };
                let (tr, va, te) = (count(&s.train), count(&s.valid), count(&s.test));
                let n = tr + va + te;
                if n == 0.0 {
                    continue;
                }
                assert!((te - 0.1 * n).abs() <= 1.0, "trial {trial}: test share {te}/{n}");
                assert!((va - 0.1 * n).abs() <= 1.0, "trial {trial}: valid share {va}/{n}");
                assert!((tr - 0.8 * n).abs() <= 2.0, "trial {trial}: train share {tr}/{n}");
            }
        }
        if trial % 10 == 0 {
            let s2 = split_idst(entries.clone(), seed).unwrap();
            assert_eq!(
                write_lexicon_string(&s.train) + &write_lexicon_string(&s.valid) + &write_lexicon_string(&s.test),
                write_lexicon_string(&s2.train) + &write_lexicon_string(&s2.valid) + &write_lexicon_string(&s2.test),
                "trial {trial}: idst rerun not byte-identical"
            );
        }

        // DDST: held-out domains appear only in test, training domains
        // never leak there.
        let mut domain_list: Vec<String> = domains.iter().cloned().collect();
        let cut = rng.random_range(1..domain_list.len());
        let test_domains = domain_list.split_off(cut);
        let train_domains = domain_list;
        let s = split_ddst(entries.clone(), &train_domains, &test_domains, seed).unwrap();
        for e in s.train.iter().chain(&s.valid) {
            assert!(train_domains.contains(&e.domain), "trial {trial}: ddst leak into train");
        }
        for e in &s.test {
            assert!(test_domains.contains(&e.domain), "trial {trial}: ddst test impurity");
        }
        let test_count = entries.iter().filter(|e| test_domains.contains(&e.domain)).count();
        assert_eq!(s.test.len(), test_count, "trial {trial}: ddst must take whole domains");

        // IDDT: held-out target languages appear only in test, and test
        // domains stay inside the train-side domain set.
        if langs.len() >= 2 {
            let mut lang_list: Vec<String> = langs.iter().cloned().collect();
            let cut = rng.random_range(1..lang_list.len());
            let test_langs = lang_list.split_off(cut);
            let train_langs = lang_list;
            let s = split_iddt(entries.clone(), &train_langs, &test_langs, seed).unwrap();
            for e in s.train.iter().chain(&s.valid) {
                assert!(train_langs.contains(&e.tgt_lang), "trial {trial}: iddt lang leak");
            }
            let train_domains_seen: BTreeSet<&String> =
                s.train.iter().map(|e| &e.domain).collect();
            for e in &s.test {
                assert!(test_langs.contains(&e.tgt_lang), "trial {trial}: iddt test impurity");
                assert!(
                    train_domains_seen.contains(&e.domain),
                    "trial {trial}: iddt test domain outside the training domains"
                );
            }
        }
    }
    verdict(
        8,
        "split-regime guarantees",
        true,
        &format!("{trials} randomized trials per regime: ratios, disjointness, containment, and same-seed byte-identity all hold"),
    );
}

// ── 9: intersection-analysis fixture ──

#[test]
fn c09_intersection_fixture() {
    // Hand-aligned fixture. Training source vocabulary: ideal, gas, mole,
    // fraction, thermal, energy. The six test entries contain exactly six
    // seen source-word instances (ideal, gas, energy, mole, thermal, gas)
    // and four unseen ones (kinetic, enthalpy, entropy, constant). Under
    // the diagonal fallback alignment the predictions below leave one seen
    // word wrong (gas in "gas constant") and two unseen words wrong
    // (enthalpy, entropy), so the hand-computed partition is 5/6 seen
    // correct and 2/4 unseen correct.
    let train = vec![
        entry("chem", "ideal gas", &["आदर्श गैस"]),
        entry("chem", "mole fraction", &["मोल अंश"]),
        entry("chem", "thermal energy", &["तापीय ऊर्जा"]),
    ];
    let test = vec![
        entry("chem", "ideal gas", &["आदर्श गैस"]),
        entry("chem", "kinetic energy", &["गतिज ऊर्जा"]),
        entry("chem", "mole", &["मोल"]),
        entry("chem", "thermal enthalpy", &["तापीय तापांश"]),
        entry("chem", "entropy", &["एन्ट्रापी"]),
        entry("chem", "gas constant", &["गैस नियतांक"]),
    ];
    let predictions = vec![
        "आदर्श गैस".to_string(),   // both words right
        "गतिज ऊर्जा".to_string(),  // both words right
        "मोल".to_string(),          // right
        "तापीय गलत".to_string(),   // thermal right, enthalpy wrong
        "गलत".to_string(),          // entropy wrong
        "गलत नियतांक".to_string(), // gas wrong, constant right
    ];
    let report = intersection_analysis(&train, &test, &predictions, None, None).unwrap();
    assert_eq!(report.intersect_total, 6);
    assert_eq!(report.intersect_correct, 5);
    assert_eq!(report.nonintersect_total, 4);
    assert_eq!(report.nonintersect_correct, 2);
    let p_in = report.p_at_1_intersect.unwrap();
    let p_out = report.p_at_1_nonintersect.unwrap();
    assert_eq!(p_in, 5.0 / 6.0);
    assert_eq!(p_out, 0.5);

    // Transliteration fraction over the correct unseen words, which are
    // kinetic->गतिज and constant->नियतांक. The table marks kinetic's
    // reference as a transliteration and gives constant a different
    // rendering, so half the correct-unseen mass is genuine translation.
    let mut table = std::collections::BTreeMap::new();
    table.insert("kinetic".to_string(), "गतिज".to_string());
    table.insert("constant".to_string(), "कान्स्टन्ट".to_string());
    let with_translit =
        intersection_analysis(&train, &test, &predictions, None, Some(&table)).unwrap();
    assert_eq!(with_translit.non_translit_fraction, Some(0.5));

    verdict(
        9,
        "intersection-analysis fixture",
        true,
        "hand-aligned 6-entry fixture reproduced exactly: P@1 seen 5/6, unseen 2/4, non-transliteration fraction 1/2",
    );
}

fn entry(domain: &str, source: &str, targets: &[&str]) -> LexiconEntry {
    LexiconEntry {
        domain: domain.into(),
        src_lang: "en".into(),
        tgt_lang: "hi".into(),
        source: source.into(),
        targets: targets.iter().map(|s| s.to_string()).collect(),
    }
}

// ── 10: checkpoint round trip ──

#[test]
fn c10_checkpoint_round_trip() {
    let entries = synth_fixture(2, &SynthConfig { n_domains: 2, n_langs: 2, n_pairs_per_cell: 6 }).unwrap();
    let vocab = Vocab::build(&entries).unwrap();
    let cfg = ModelConfig::toy(vocab.size());
    let params = ParamSet::<f64>::init(&cfg, 17).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&params, &vocab, 7, 1.25, &path).unwrap();
    let ck = load_checkpoint(&path).unwrap();

    // Predictions after the round trip are bit-identical, score bits
    // included. (Saving quantizes to f32, so predictions are compared
    // between two loads rather than against the unsaved originals.)
    save_checkpoint(&ck.params, &ck.vocab, ck.step, ck.val_loss, &path).unwrap();
    let ck2 = load_checkpoint(&path).unwrap();
    let mut compared = 0usize;
    for e in entries.iter().take(6) {
        let a = predict_topk(&ck.params, &ck.vocab, &e.tgt_lang, &e.source, 3, 1.0).unwrap();
        let b = predict_topk(&ck2.params, &ck2.vocab, &e.tgt_lang, &e.source, 3, 1.0).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.text, y.text, "prediction text changed across the round trip");
            assert_eq!(x.score.to_bits(), y.score.to_bits(), "score bits changed");
            compared += 1;
        }
    }

    // Corruption in the payload is rejected, as is truncation.
    let good = std::fs::read(&path).unwrap();
    let mut flipped = good.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x01;
    std::fs::write(&path, &flipped).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(err.to_string().contains("hash"), "flip detection: {err}");
    std::fs::write(&path, &good[..good.len() - 9]).unwrap();
    assert!(load_checkpoint(&path).is_err(), "truncated payload accepted");

    verdict(
        10,
        "checkpoint round trip",
        true,
        &format!("{compared} ranked predictions bit-identical after save/load; payload corruption and truncation rejected"),
    );
}
