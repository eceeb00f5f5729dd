//! Command-line interface.
//!
//! Seven subcommands chain the pipeline end to end: synth → split →
//! train → predict → eval, with ablate (the dr-position grid) and
//! analyze (intersection, gate, and transliteration diagnostics) on the
//! side. Reports are TSV-first; human-readable tables go to stderr.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or file
//! error, 3 internal assertion.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::{
    parse_lexicon, split_ddst, split_idst, split_iddt, synth_fixture, write_lexicon,
    DatasetSplits, LexiconEntry, Regime, SynthConfig, Vocab,
};
use crate::decode::predict_topk;
use crate::eval::{
    chrf_pp, evaluate, intersection_analysis, load_alignment_tsv, load_translit_tsv,
    transliteration_rate, ChrfConfig, IntersectionReport,
};
use crate::model::{bind, decode_logits, encode, DrPosition, ModelConfig, ParamSet};
use crate::runconfig::RunConfig;
use crate::tensor::Tape;
use crate::train::{encode_examples, train, TrainConfig, TrainExample, TrainOutcome};
use crate::{LexError, Result};

/// Validation entries sampled for the per-epoch ChrF log line.
const EPOCH_CHRF_SAMPLE: usize = 32;

#[derive(Parser)]
#[command(
    name = "lexgen",
    version,
    about = "Train, decode, and evaluate a domain-routed lexicon translator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the deterministic synthetic multi-domain lexicon.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        domains: usize,
        #[arg(long, default_value_t = 2)]
        langs: usize,
        /// Pairs per (domain, language) cell.
        #[arg(long, default_value_t = 40)]
        pairs: usize,
        /// Output lexicon TSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a lexicon into train/valid/test under one regime.
    Split {
        #[arg(long)]
        lexicon: PathBuf,
        /// idst, ddst, or iddt.
        #[arg(long)]
        regime: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// ddst only: comma-separated training domains.
        #[arg(long, value_delimiter = ',')]
        train_domains: Vec<String>,
        /// ddst only: comma-separated held-out domains.
        #[arg(long, value_delimiter = ',')]
        test_domains: Vec<String>,
        /// iddt only: comma-separated training target languages.
        #[arg(long, value_delimiter = ',')]
        train_langs: Vec<String>,
        /// iddt only: comma-separated held-out target languages.
        #[arg(long, value_delimiter = ',')]
        test_langs: Vec<String>,
        /// Output directory for the split TSVs and provenance sidecar.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a split directory and write the best checkpoint.
    Train {
        /// Run-config TOML; defaults to the toy preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding train.tsv / valid.tsv / test.tsv.
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode ranked candidates for every row of an input lexicon TSV.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        /// Ranked candidates to keep per input row.
        #[arg(long, default_value_t = 3)]
        topk: usize,
        /// Length-normalization exponent.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Output predictions TSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predictions TSV against a reference lexicon.
    Eval {
        /// Predictions TSV produced by `lexgen predict`.
        #[arg(long)]
        pred: PathBuf,
        /// Reference lexicon TSV, same entries in the same order.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Report output directory.
        #[arg(long)]
        report: PathBuf,
        /// Print just this overall number to stdout: chrf, p1, or recall.
        #[arg(long)]
        metric: Option<String>,
        /// Also write report.json.
        #[arg(long)]
        report_json: bool,
        /// Training lexicon; enables the word-intersection table.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Word-alignment TSV for the intersection table.
        #[arg(long)]
        alignments: Option<PathBuf>,
        /// Transliteration table TSV; enables the transliteration tables.
        #[arg(long)]
        translit: Option<PathBuf>,
    },
    /// Train a (dr-position × seed) grid and summarize test scores.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        splits: PathBuf,
        /// Comma-separated: after_san, after_can, shared_only, none.
        #[arg(long, value_delimiter = ',')]
        positions: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Diagnostics: intersection, gates, or translit.
    Analyze {
        #[arg(long)]
        mode: String,
        /// intersection: training lexicon TSV.
        #[arg(long)]
        train: Option<PathBuf>,
        /// intersection: test lexicon TSV.
        #[arg(long)]
        test: Option<PathBuf>,
        /// intersection: predictions TSV for the test lexicon.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// intersection: optional word-alignment TSV.
        #[arg(long)]
        alignments: Option<PathBuf>,
        /// intersection / translit: transliteration table TSV.
        #[arg(long)]
        translit: Option<PathBuf>,
        /// translit / gates: lexicon TSV to analyze.
        #[arg(long)]
        input: Option<PathBuf>,
        /// gates: checkpoint whose gate activations to export.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { seed, domains, langs, pairs, out } => cmd_synth(seed, domains, langs, pairs, &out),
        Cmd::Split {
            lexicon,
            regime,
            seed,
            train_domains,
            test_domains,
            train_langs,
            test_langs,
            out,
        } => cmd_split(
            &lexicon,
            &regime,
            seed,
            &train_domains,
            &test_domains,
            &train_langs,
            &test_langs,
            &out,
        ),
        Cmd::Train { config, splits, out } => cmd_train(config.as_deref(), &splits, &out),
        Cmd::Predict { ckpt, input, beam, topk, alpha, out } => {
            cmd_predict(&ckpt, &input, beam, topk, alpha, &out)
        }
        Cmd::Eval {
            pred,
            reference,
            report,
            metric,
            report_json,
            train,
            alignments,
            translit,
        } => cmd_eval(
            &pred,
            &reference,
            &report,
            metric.as_deref(),
            report_json,
            train.as_deref(),
            alignments.as_deref(),
            translit.as_deref(),
        ),
        Cmd::Ablate { config, splits, positions, seeds, out } => {
            cmd_ablate(config.as_deref(), &splits, &positions, &seeds, &out)
        }
        Cmd::Analyze { mode, train, test, pred, alignments, translit, input, ckpt, out } => {
            cmd_analyze(
                &mode,
                train.as_deref(),
                test.as_deref(),
                pred.as_deref(),
                alignments.as_deref(),
                translit.as_deref(),
                input.as_deref(),
                ckpt.as_deref(),
                &out,
            )
        }
    }
}

// ── synth ──

fn cmd_synth(seed: u64, domains: usize, langs: usize, pairs: usize, out: &Path) -> Result<()> {
    let cfg = SynthConfig { n_domains: domains, n_langs: langs, n_pairs_per_cell: pairs };
    let entries = synth_fixture(seed, &cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_lexicon(out, &entries)?;
    eprintln!(
        "wrote {} entries ({domains} domains x {langs} languages x {pairs} pairs) to {}",
        entries.len(),
        out.display()
    );
    Ok(())
}

// ── split ──

#[allow(clippy::too_many_arguments)]
fn cmd_split(
    lexicon: &Path,
    regime: &str,
    seed: u64,
    train_domains: &[String],
    test_domains: &[String],
    train_langs: &[String],
    test_langs: &[String],
    out: &Path,
) -> Result<()> {
    let regime = Regime::parse(regime)?;
    let domain_flags = !train_domains.is_empty() || !test_domains.is_empty();
    let lang_flags = !train_langs.is_empty() || !test_langs.is_empty();
    let splits = match regime {
        Regime::Idst => {
            if domain_flags || lang_flags {
                return Err(LexError::Usage(
                    "idst takes no domain or language lists".into(),
                ));
            }
            split_idst(parse_lexicon(lexicon)?, seed)?
        }
        Regime::Ddst => {
            if train_domains.is_empty() || test_domains.is_empty() {
                return Err(LexError::Usage(
                    "ddst needs both --train-domains and --test-domains".into(),
                ));
            }
            if lang_flags {
                return Err(LexError::Usage("ddst takes no language lists".into()));
            }
            split_ddst(parse_lexicon(lexicon)?, train_domains, test_domains, seed)?
        }
        Regime::Iddt => {
            if train_langs.is_empty() || test_langs.is_empty() {
                return Err(LexError::Usage(
                    "iddt needs both --train-langs and --test-langs".into(),
                ));
            }
            if domain_flags {
                return Err(LexError::Usage("iddt takes no domain lists".into()));
            }
            split_iddt(parse_lexicon(lexicon)?, train_langs, test_langs, seed)?
        }
    };
    write_split_dir(&splits, out)
}

fn write_split_dir(splits: &DatasetSplits, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_lexicon(&out.join("train.tsv"), &splits.train)?;
    write_lexicon(&out.join("valid.tsv"), &splits.valid)?;
    write_lexicon(&out.join("test.tsv"), &splits.test)?;
    let provenance = serde_json::to_string_pretty(&splits.provenance)
        .map_err(|e| LexError::Internal(format!("provenance serialization failed: {e}")))?;
    std::fs::write(out.join("provenance.json"), provenance + "\n")?;
    for w in &splits.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{}: {} train / {} valid / {} test entries -> {}",
        splits.regime.as_str(),
        splits.train.len(),
        splits.valid.len(),
        splits.test.len(),
        out.display()
    );
    Ok(())
}

fn read_split_dir(dir: &Path) -> Result<(Vec<LexiconEntry>, Vec<LexiconEntry>, Vec<LexiconEntry>)> {
    Ok((
        parse_lexicon(&dir.join("train.tsv"))?,
        parse_lexicon(&dir.join("valid.tsv"))?,
        parse_lexicon(&dir.join("test.tsv"))?,
    ))
}

/// Vocabulary over all three splits, so held-out language tags and any
/// test-only characters exist at decode time.
fn vocab_over_splits(
    train: &[LexiconEntry],
    valid: &[LexiconEntry],
    test: &[LexiconEntry],
) -> Result<Vocab> {
    let mut all = train.to_vec();
    all.extend_from_slice(valid);
    all.extend_from_slice(test);
    Vocab::build(&all)
}

// ── train ──

struct TrainedRun {
    outcome: TrainOutcome,
    vocab: Vocab,
}

fn run_training(
    cfg: &RunConfig,
    model_cfg: &ModelConfig,
    tcfg: &TrainConfig,
    vocab: &Vocab,
    train_ex: &[TrainExample],
    valid_entries: &[LexiconEntry],
    valid_ex: &[TrainExample],
) -> Result<TrainedRun> {
    let init = ParamSet::init(model_cfg, tcfg.seed)?;
    let sample: Vec<&LexiconEntry> = valid_entries.iter().take(EPOCH_CHRF_SAMPLE).collect();
    let alpha = cfg.decode.length_penalty_alpha;
    let chrf_cfg = ChrfConfig::default();
    let epoch_chrf = move |params: &ParamSet<f64>| -> Result<f64> {
        let mut sum = 0.0;
        for e in &sample {
            let preds = predict_topk(params, vocab, &e.tgt_lang, &e.source, 1, alpha)?;
            let top = preds.first().map(|p| p.text.as_str()).unwrap_or("");
            sum += chrf_pp(top, &e.targets, &chrf_cfg)?;
        }
        Ok(sum / sample.len() as f64)
    };
    let hook: Option<&crate::train::EpochMetric> = if valid_entries.is_empty() {
        None
    } else {
        Some(&epoch_chrf)
    };
    let outcome = train(tcfg, init, train_ex, valid_ex, hook)?;
    Ok(TrainedRun { outcome, vocab: vocab.clone() })
}

fn write_training_outputs(
    run: &TrainedRun,
    cfg: &RunConfig,
    splits_dir: &Path,
    out: &Path,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let ckpt_path = out.join("model.ckpt");
    save_checkpoint(
        &run.outcome.params,
        &run.vocab,
        run.outcome.updates,
        run.outcome.best_val_loss,
        &ckpt_path,
    )?;
    std::fs::write(out.join("train_steps.tsv"), run.outcome.log.steps_tsv())?;
    std::fs::write(out.join("train_epochs.tsv"), run.outcome.log.epochs_tsv())?;
    let mut resolved = cfg.resolved(run.vocab.size())?;
    resolved.model = run.outcome.params.cfg.clone();
    resolved.paths.splits_dir = splits_dir.display().to_string();
    resolved.paths.checkpoint = ckpt_path.display().to_string();
    std::fs::write(out.join("resolved_config.toml"), resolved.to_toml()?)?;
    for w in &run.outcome.log.warnings {
        eprintln!("warning: {w}");
    }
    Ok(ckpt_path)
}

fn cmd_train(config: Option<&Path>, splits: &Path, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (train_e, valid_e, test_e) = read_split_dir(splits)?;
    let vocab = vocab_over_splits(&train_e, &valid_e, &test_e)?;
    let model_cfg = cfg.model_config(vocab.size())?;
    let tcfg = cfg.train_config()?;
    let train_ex = encode_examples(&train_e, &vocab)?;
    let valid_ex = encode_examples(&valid_e, &vocab)?;
    let run = run_training(&cfg, &model_cfg, &tcfg, &vocab, &train_ex, &valid_e, &valid_ex)?;
    let ckpt_path = write_training_outputs(&run, &cfg, splits, out)?;
    eprintln!(
        "trained {} updates over {} epochs; best val loss {:.4} at epoch {}; stopped by {}; checkpoint -> {}",
        run.outcome.updates,
        run.outcome.epochs,
        run.outcome.best_val_loss,
        run.outcome.best_epoch,
        run.outcome.stop_reason,
        ckpt_path.display()
    );
    Ok(())
}

// ── predict ──

const PRED_HEADER: &str = "domain\tsrc_lang\ttgt_lang\tsource\trank\tprediction\tscore";

fn cmd_predict(
    ckpt: &Path,
    input: &Path,
    beam: usize,
    topk: usize,
    alpha: f64,
    out: &Path,
) -> Result<()> {
    if topk == 0 {
        return Err(LexError::Usage("--topk must be at least 1".into()));
    }
    let ck = load_checkpoint(ckpt)?;
    let entries = parse_lexicon(input)?;
    let mut unk_count = 0usize;
    let mut text = String::from(PRED_HEADER);
    text.push('\n');
    for e in &entries {
        unk_count += ck.vocab.encode(&e.source).1;
        let preds = predict_topk(&ck.params, &ck.vocab, &e.tgt_lang, &e.source, beam, alpha)?;
        for (rank, p) in preds.iter().take(topk).enumerate() {
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.domain,
                e.src_lang,
                e.tgt_lang,
                e.source,
                rank + 1,
                p.text,
                p.score
            ));
        }
    }
    if unk_count > 0 {
        eprintln!(
            "warning: {unk_count} source characters are outside the checkpoint vocabulary (encoded as the unknown token)"
        );
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, text)?;
    eprintln!("wrote predictions for {} entries to {}", entries.len(), out.display());
    Ok(())
}

/// Parses a predictions TSV back into per-entry ranked lists, grouping
/// consecutive rows that share (domain, src_lang, tgt_lang, source).
fn parse_predictions(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line == PRED_HEADER {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(LexError::parse(
                line_no,
                format!("expected 7 tab-separated columns, found {}", cols.len()),
            ));
        }
        let key = cols[..4].join("\u{1f}");
        let rank: usize = cols[4]
            .parse()
            .map_err(|_| LexError::parse(line_no, format!("bad rank '{}'", cols[4])))?;
        match groups.last_mut() {
            Some((k, preds)) if *k == key => {
                if rank != preds.len() + 1 {
                    return Err(LexError::parse(
                        line_no,
                        format!("rank {rank} out of order (expected {})", preds.len() + 1),
                    ));
                }
                preds.push(cols[5].to_string());
            }
            _ => {
                if rank != 1 {
                    return Err(LexError::parse(
                        line_no,
                        format!("new entry must start at rank 1, found {rank}"),
                    ));
                }
                groups.push((key, vec![cols[5].to_string()]));
            }
        }
    }
    Ok(groups)
}

// ── eval ──

fn intersection_tsv(r: &IntersectionReport) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut s = String::from("key\tvalue\n");
    s.push_str(&format!("intersect_total\t{}\n", r.intersect_total));
    s.push_str(&format!("intersect_correct\t{}\n", r.intersect_correct));
    s.push_str(&format!("nonintersect_total\t{}\n", r.nonintersect_total));
    s.push_str(&format!("nonintersect_correct\t{}\n", r.nonintersect_correct));
    s.push_str(&format!("unaligned\t{}\n", r.unaligned));
    s.push_str(&format!("used_external_alignments\t{}\n", r.used_external_alignments));
    s.push_str(&format!("p_at_1_intersect\t{}\n", opt(r.p_at_1_intersect)));
    s.push_str(&format!("p_at_1_nonintersect\t{}\n", opt(r.p_at_1_nonintersect)));
    s.push_str(&format!("non_translit_fraction\t{}\n", opt(r.non_translit_fraction)));
    s
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    pred: &Path,
    reference: &Path,
    report_dir: &Path,
    metric: Option<&str>,
    report_json: bool,
    train: Option<&Path>,
    alignments: Option<&Path>,
    translit: Option<&Path>,
) -> Result<()> {
    let refs = parse_lexicon(reference)?;
    let groups = parse_predictions(pred)?;
    if groups.len() != refs.len() {
        return Err(LexError::Data(format!(
            "{} prediction groups for {} reference entries",
            groups.len(),
            refs.len()
        )));
    }
    let mut topk = Vec::with_capacity(groups.len());
    for (e, (key, preds)) in refs.iter().zip(&groups) {
        if *key != e.key() {
            return Err(LexError::Data(format!(
                "prediction order does not match the reference file near source '{}'",
                e.source
            )));
        }
        topk.push(preds.clone());
    }
    let mut report = evaluate(&refs, &topk, &ChrfConfig::default())?;

    let translit_table = translit.map(load_translit_tsv).transpose()?;
    if let Some(train_path) = train {
        let train_entries = parse_lexicon(train_path)?;
        let align_map = alignments.map(load_alignment_tsv).transpose()?;
        let top1: Vec<String> = topk.iter().map(|p| p[0].clone()).collect();
        report.intersection = Some(intersection_analysis(
            &train_entries,
            &refs,
            &top1,
            align_map.as_ref(),
            translit_table.as_ref(),
        )?);
    }
    if let Some(table) = &translit_table {
        let pairs: Vec<(String, String)> = refs
            .iter()
            .map(|e| (e.source.clone(), e.targets[0].clone()))
            .collect();
        report.translit = Some(transliteration_rate(&pairs, table));
    }

    std::fs::create_dir_all(report_dir)?;
    std::fs::write(report_dir.join("report.tsv"), report.to_tsv())?;
    if let Some(ir) = &report.intersection {
        std::fs::write(report_dir.join("intersection.tsv"), intersection_tsv(ir))?;
    }
    if let Some(tr) = &report.translit {
        let rate = tr.rate.map_or("-".to_string(), |r| format!("{r:.4}"));
        std::fs::write(
            report_dir.join("translit.tsv"),
            format!("rate\tcovered\tuncovered\n{rate}\t{}\t{}\n", tr.covered, tr.uncovered),
        )?;
    }
    if report_json {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| LexError::Internal(format!("report serialization failed: {e}")))?;
        std::fs::write(report_dir.join("report.json"), json + "\n")?;
    }
    eprint!("{}", report.to_table());
    match metric {
        None => {}
        Some("chrf") => println!("{}", report.overall.chrf),
        Some("p1") => println!("{}", report.overall.p_at_1),
        Some("recall") => println!("{}\t{}", report.overall.r_at_1, report.overall.r_at_3),
        Some(other) => {
            return Err(LexError::Usage(format!(
                "unknown metric '{other}' (expected chrf | p1 | recall)"
            )));
        }
    }
    Ok(())
}

// ── ablate ──

fn thread_cap(grid: usize) -> Result<usize> {
    let n = match std::env::var("LEXGEN_THREADS") {
        Ok(s) => s.parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(|| {
            LexError::Config(format!("LEXGEN_THREADS must be a positive integer, got '{s}'"))
        })?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(n.min(grid).max(1))
}

/// Mean ChrF++ of the top-1 prediction over a set of entries.
fn mean_top1_chrf(
    params: &ParamSet<f64>,
    vocab: &Vocab,
    entries: &[LexiconEntry],
    beam: usize,
    alpha: f64,
) -> Result<f64> {
    if entries.is_empty() {
        return Err(LexError::Data("no entries to score".into()));
    }
    let chrf_cfg = ChrfConfig::default();
    let mut sum = 0.0;
    for e in entries {
        let preds = predict_topk(params, vocab, &e.tgt_lang, &e.source, beam, alpha)?;
        let top = preds.first().map(|p| p.text.as_str()).unwrap_or("");
        sum += chrf_pp(top, &e.targets, &chrf_cfg)?;
    }
    Ok(sum / entries.len() as f64)
}

fn cmd_ablate(
    config: Option<&Path>,
    splits: &Path,
    positions: &[String],
    seeds: &[u64],
    out: &Path,
) -> Result<()> {
    if positions.is_empty() || seeds.is_empty() {
        return Err(LexError::Usage("--positions and --seeds must be non-empty".into()));
    }
    let positions: Vec<DrPosition> =
        positions.iter().map(|s| DrPosition::parse(s)).collect::<Result<_>>()?;
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (train_e, valid_e, test_e) = read_split_dir(splits)?;
    if test_e.is_empty() {
        return Err(LexError::Data("test split is empty; nothing to ablate against".into()));
    }
    let vocab = vocab_over_splits(&train_e, &valid_e, &test_e)?;
    let base_model = cfg.model_config(vocab.size())?;
    let base_train = cfg.train_config()?;
    let train_ex = encode_examples(&train_e, &vocab)?;
    let valid_ex = encode_examples(&valid_e, &vocab)?;

    let grid: Vec<(DrPosition, u64)> = positions
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    std::fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap(grid.len())?)
        .build()
        .map_err(|e| LexError::Internal(format!("worker pool construction failed: {e}")))?;

    let results: Vec<Result<(f64, f64)>> = pool.install(|| {
        use rayon::prelude::*;
        grid.par_iter()
            .map(|&(pos, seed)| {
                let mut model_cfg = base_model.clone();
                model_cfg.dr_position = pos;
                let mut tcfg = base_train.clone();
                tcfg.seed = seed;
                let cell_dir = out.join(format!("{}-s{}", pos.as_str(), seed));
                let run = run_training(
                    &cfg, &model_cfg, &tcfg, &vocab, &train_ex, &valid_e, &valid_ex,
                )?;
                write_training_outputs(&run, &cfg, splits, &cell_dir)?;
                let chrf = mean_top1_chrf(
                    &run.outcome.params,
                    &vocab,
                    &test_e,
                    cfg.decode.beam_size,
                    cfg.decode.length_penalty_alpha,
                )?;
                Ok((run.outcome.best_val_loss, chrf))
            })
            .collect()
    });

    let mut summary = String::from("position\tseed\tval_loss\ttest_chrf\n");
    for ((pos, seed), res) in grid.iter().zip(results) {
        let (val_loss, chrf) = res?;
        summary.push_str(&format!("{}\t{seed}\t{val_loss}\t{chrf}\n", pos.as_str()));
    }
    std::fs::write(out.join("summary.tsv"), &summary)?;
    eprint!("{}", summary.replace('\t', "  "));
    eprintln!("ablation grid of {} cells -> {}", grid.len(), out.display());
    Ok(())
}

// ── analyze ──

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    mode: &str,
    train: Option<&Path>,
    test: Option<&Path>,
    pred: Option<&Path>,
    alignments: Option<&Path>,
    translit: Option<&Path>,
    input: Option<&Path>,
    ckpt: Option<&Path>,
    out: &Path,
) -> Result<()> {
    match mode {
        "intersection" => {
            let (train, test, pred) = match (train, test, pred) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(LexError::Usage(
                        "intersection mode needs --train, --test, and --pred".into(),
                    ));
                }
            };
            let train_entries = parse_lexicon(train)?;
            let test_entries = parse_lexicon(test)?;
            let groups = parse_predictions(pred)?;
            if groups.len() != test_entries.len() {
                return Err(LexError::Data(format!(
                    "{} prediction groups for {} test entries",
                    groups.len(),
                    test_entries.len()
                )));
            }
            let top1: Vec<String> = groups.iter().map(|(_, p)| p[0].clone()).collect();
            let align_map = alignments.map(load_alignment_tsv).transpose()?;
            let table = translit.map(load_translit_tsv).transpose()?;
            let report = intersection_analysis(
                &train_entries,
                &test_entries,
                &top1,
                align_map.as_ref(),
                table.as_ref(),
            )?;
            std::fs::create_dir_all(out)?;
            let tsv = intersection_tsv(&report);
            std::fs::write(out.join("intersection.tsv"), &tsv)?;
            eprint!("{}", tsv.replace('\t', "  "));
            Ok(())
        }
        "translit" => {
            let (input, translit) = match (input, translit) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(LexError::Usage(
                        "translit mode needs --input and --translit".into(),
                    ));
                }
            };
            let entries = parse_lexicon(input)?;
            let table = load_translit_tsv(translit)?;
            let pairs: Vec<(String, String)> = entries
                .iter()
                .map(|e| (e.source.clone(), e.targets[0].clone()))
                .collect();
            let r = transliteration_rate(&pairs, &table);
            std::fs::create_dir_all(out)?;
            let rate = r.rate.map_or("-".to_string(), |x| format!("{x:.4}"));
            let tsv = format!("rate\tcovered\tuncovered\n{rate}\t{}\t{}\n", r.covered, r.uncovered);
            std::fs::write(out.join("translit.tsv"), &tsv)?;
            eprint!("{}", tsv.replace('\t', "  "));
            Ok(())
        }
        "gates" => {
            let (input, ckpt) = match (input, ckpt) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(LexError::Usage("gates mode needs --input and --ckpt".into()));
                }
            };
            let ck = load_checkpoint(ckpt)?;
            let entries = parse_lexicon(input)?;
            let tsv = export_gates(&ck, &entries)?;
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("gates.tsv"), &tsv)?;
            eprintln!("wrote gate activations for {} entries to {}", entries.len(), out.display());
            Ok(())
        }
        other => Err(LexError::Usage(format!(
            "unknown mode '{other}' (expected intersection | gates | translit)"
        ))),
    }
}

/// Teacher-forces each entry's first reference through the decoder and
/// exports the routing-gate value for every (entry, decoder block,
/// target position).
fn export_gates(ck: &Checkpoint, entries: &[LexiconEntry]) -> Result<String> {
    let pos = ck.params.cfg.dr_position;
    if !matches!(pos, DrPosition::AfterSan | DrPosition::AfterCan) {
        return Err(LexError::Usage(format!(
            "checkpoint has dr_position={}, which has no learnable gate to export",
            pos.as_str()
        )));
    }
    let mut out = String::from("entry\tdomain\tsrc_lang\ttgt_lang\tsource\tblock\tpos\ttoken\tgate\n");
    for (idx, e) in entries.iter().enumerate() {
        let src_ids = ck.vocab.prepare_source(&e.tgt_lang, &e.source)?;
        let mut tgt_in = vec![crate::data::BOS_ID];
        tgt_in.extend(ck.vocab.encode_target(&e.targets[0]));
        let mut tape: Tape<f64> = Tape::new(false, 0);
        let bound = bind(&mut tape, &ck.params)?;
        let enc = encode(&mut tape, &bound, &src_ids)?;
        let dec = decode_logits(&mut tape, &bound, enc, &tgt_in)?;
        for (block, gate_id) in dec.gates.iter().enumerate() {
            let gates = tape.value(*gate_id).to_vec();
            if gates.len() != tgt_in.len() {
                return Err(LexError::Internal(format!(
                    "gate column has {} values for {} target positions",
                    gates.len(),
                    tgt_in.len()
                )));
            }
            for (t, g) in gates.iter().enumerate() {
                let token = ck.vocab.decode(&tgt_in[t..=t]);
                out.push_str(&format!(
                    "{idx}\t{}\t{}\t{}\t{}\t{block}\t{t}\t{token}\t{g}\n",
                    e.domain, e.src_lang, e.tgt_lang, e.source
                ));
            }
        }
    }
    Ok(out)
}
