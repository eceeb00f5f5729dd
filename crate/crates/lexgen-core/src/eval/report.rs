//! Aggregated evaluation report over ranked predictions.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::LexiconEntry;
use crate::eval::analysis::{IntersectionReport, TranslitRate};
use crate::eval::chrf::{chrf_pp, ChrfConfig};
use crate::eval::metrics::{precision_at_1, recall_at_k};
use crate::{LexError, Result};

/// Metrics for one (domain, src_lang, tgt_lang) group; the report's
/// overall row uses "all" for every tag.
#[derive(Debug, Clone, Serialize)]
pub struct GroupRow {
    pub domain: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub n: usize,
    pub chrf: f64,
    pub p_at_1: f64,
    pub r_at_1: f64,
    pub r_at_3: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// One row per group, sorted by (domain, src_lang, tgt_lang).
    pub rows: Vec<GroupRow>,
    pub overall: GroupRow,
    pub intersection: Option<IntersectionReport>,
    pub translit: Option<TranslitRate>,
}

fn group_row(
    domain: &str,
    src_lang: &str,
    tgt_lang: &str,
    entries: &[&LexiconEntry],
    topk: &[&Vec<String>],
    cfg: &ChrfConfig,
) -> Result<GroupRow> {
    let owned_entries: Vec<LexiconEntry> = entries.iter().map(|e| (*e).clone()).collect();
    let owned_topk: Vec<Vec<String>> = topk.iter().map(|p| (*p).clone()).collect();
    let top1: Vec<String> = owned_topk.iter().map(|p| p[0].clone()).collect();
    let mut chrf_sum = 0.0;
    for (pred, entry) in top1.iter().zip(&owned_entries) {
        chrf_sum += chrf_pp(pred, &entry.targets, cfg)?;
    }
    Ok(GroupRow {
        domain: domain.to_string(),
        src_lang: src_lang.to_string(),
        tgt_lang: tgt_lang.to_string(),
        n: owned_entries.len(),
        chrf: chrf_sum / owned_entries.len() as f64,
        p_at_1: precision_at_1(&top1, &owned_entries)?,
        r_at_1: recall_at_k(&owned_topk, &owned_entries, 1)?,
        r_at_3: recall_at_k(&owned_topk, &owned_entries, 3)?,
    })
}

/// Scores ranked predictions against their entries: mean ChrF++ of the
/// top-1 prediction, exact-match P@1, and R@1/R@3, per group and
/// overall. Intersection and transliteration tables start empty; callers
/// with the needed side inputs fill them in.
pub fn evaluate(
    entries: &[LexiconEntry],
    topk: &[Vec<String>],
    cfg: &ChrfConfig,
) -> Result<EvalReport> {
    if topk.len() != entries.len() {
        return Err(LexError::Usage(format!(
            "got {} prediction lists for {} entries",
            topk.len(),
            entries.len()
        )));
    }
    if entries.is_empty() {
        return Err(LexError::Usage("evaluate needs at least one entry".into()));
    }
    if let Some(i) = topk.iter().position(|p| p.is_empty()) {
        return Err(LexError::Usage(format!("entry {i} has no predictions")));
    }

    let mut groups: BTreeMap<(String, String, String), Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        groups
            .entry((e.domain.clone(), e.src_lang.clone(), e.tgt_lang.clone()))
            .or_default()
            .push(i);
    }
    let mut rows = Vec::new();
    for ((domain, src, tgt), idxs) in &groups {
        let es: Vec<&LexiconEntry> = idxs.iter().map(|&i| &entries[i]).collect();
        let ps: Vec<&Vec<String>> = idxs.iter().map(|&i| &topk[i]).collect();
        rows.push(group_row(domain, src, tgt, &es, &ps, cfg)?);
    }
    let all_entries: Vec<&LexiconEntry> = entries.iter().collect();
    let all_topk: Vec<&Vec<String>> = topk.iter().collect();
    let overall = group_row("all", "all", "all", &all_entries, &all_topk, cfg)?;
    Ok(EvalReport { rows, overall, intersection: None, translit: None })
}

impl EvalReport {
    fn all_rows(&self) -> Vec<&GroupRow> {
        self.rows.iter().chain(std::iter::once(&self.overall)).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("domain\tsrc_lang\ttgt_lang\tn\tchrf\tp_at_1\tr_at_1\tr_at_3\n");
        for r in self.all_rows() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
                r.domain, r.src_lang, r.tgt_lang, r.n, r.chrf, r.p_at_1, r.r_at_1, r.r_at_3
            ));
        }
        out
    }

    /// Column-aligned rendering for terminals.
    pub fn to_table(&self) -> String {
        let header = ["domain", "src", "tgt", "n", "chrf", "p@1", "r@1", "r@3"];
        let mut cells: Vec<[String; 8]> = vec![header.map(str::to_string)];
        for r in self.all_rows() {
            cells.push([
                r.domain.clone(),
                r.src_lang.clone(),
                r.tgt_lang.clone(),
                r.n.to_string(),
                format!("{:.2}", r.chrf),
                format!("{:.3}", r.p_at_1),
                format!("{:.3}", r.r_at_1),
                format!("{:.3}", r.r_at_3),
            ]);
        }
        let mut widths = [0usize; 8];
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}", w = w))
                .collect();
            out.push_str(&line.join("  "));
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("  "));
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(domain: &str, tgt_lang: &str, source: &str, targets: &[&str]) -> LexiconEntry {
        LexiconEntry {
            domain: domain.into(),
            src_lang: "src".into(),
            tgt_lang: tgt_lang.into(),
            source: source.into(),
            targets: targets.iter().map(|t| t.to_string()).collect(),
        }
    }

    fn fixture() -> (Vec<LexiconEntry>, Vec<Vec<String>>) {
        let entries = vec![
            entry("bio", "l0", "cell", &["कोशिका"]),
            entry("bio", "l0", "enzyme", &["एंजाइम"]),
            entry("bio", "l1", "cell", &["పేషి"]),
            entry("phys", "l0", "ideal gas", &["आदर्श गैस"]),
        ];
        let topk = vec![
            vec!["कोशिका".to_string(), "x".to_string()],
            vec!["junk".to_string(), "एंजाइम".to_string(), "y".to_string()],
            vec!["a".to_string(), "b".to_string(), "పేషి".to_string()],
            vec!["अनादर्श गैस".to_string()],
        ];
        (entries, topk)
    }

    #[test]
    fn perfect_predictions_score_perfectly() {
        let entries = vec![
            entry("bio", "l0", "cell", &["कोशिका"]),
            entry("phys", "l0", "ideal gas", &["आदर्श गैस"]),
        ];
        let topk: Vec<Vec<String>> =
            entries.iter().map(|e| vec![e.targets[0].clone()]).collect();
        let report = evaluate(&entries, &topk, &ChrfConfig::default()).unwrap();
        assert_eq!(report.rows.len(), 2);
        for r in report.all_rows() {
            assert_eq!(r.chrf, 100.0);
            assert_eq!(r.p_at_1, 1.0);
            assert_eq!(r.r_at_1, 1.0);
            assert_eq!(r.r_at_3, 1.0);
        }
        assert_eq!(report.overall.n, 2);
    }

    #[test]
    fn late_rank_hits_show_up_in_recall_but_not_precision() {
        let (entries, topk) = fixture();
        let report = evaluate(&entries, &topk, &ChrfConfig::default()).unwrap();
        let overall = &report.overall;
        assert_eq!(overall.n, 4);
        assert!((overall.p_at_1 - 0.25).abs() < 1e-12);
        assert!((overall.r_at_1 - 0.25).abs() < 1e-12);
        // Entries 2 and 3 hit at ranks 2 and 3; the last entry never hits.
        assert!((overall.r_at_3 - 0.75).abs() < 1e-12);
        assert!(overall.r_at_3 >= overall.r_at_1);
    }

    #[test]
    fn rows_group_and_sort_by_domain_and_languages() {
        let (entries, topk) = fixture();
        let report = evaluate(&entries, &topk, &ChrfConfig::default()).unwrap();
        let keys: Vec<(String, String, String)> = report
            .rows
            .iter()
            .map(|r| (r.domain.clone(), r.src_lang.clone(), r.tgt_lang.clone()))
            .collect();
        assert_eq!(
            keys,
            vec![
                ("bio".into(), "src".into(), "l0".into()),
                ("bio".into(), "src".into(), "l1".into()),
                ("phys".into(), "src".into(), "l0".into()),
            ]
        );
        assert_eq!(report.rows[0].n, 2);
        assert_eq!(report.rows[1].n, 1);
        let total: usize = report.rows.iter().map(|r| r.n).sum();
        assert_eq!(total, report.overall.n);
    }

    #[test]
    fn all_metrics_stay_in_range() {
        let (entries, topk) = fixture();
        let report = evaluate(&entries, &topk, &ChrfConfig::default()).unwrap();
        for r in report.all_rows() {
            assert!((0.0..=100.0).contains(&r.chrf));
            for rate in [r.p_at_1, r.r_at_1, r.r_at_3] {
                assert!((0.0..=1.0).contains(&rate));
            }
        }
    }

    #[test]
    fn tsv_has_a_header_one_row_per_group_and_an_overall_row() {
        let (entries, topk) = fixture();
        let report = evaluate(&entries, &topk, &ChrfConfig::default()).unwrap();
        let tsv = report.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 1 + report.rows.len() + 1);
        for line in &lines {
            assert_eq!(line.split('\t').count(), 8, "bad column count in {line:?}");
        }
        assert!(lines.last().unwrap().starts_with("all\tall\tall\t"));
        let table = report.to_table();
        assert_eq!(table.lines().count(), lines.len() + 1);
    }

    #[test]
    fn shape_mismatches_are_usage_errors() {
        let (entries, mut topk) = fixture();
        assert!(matches!(
            evaluate(&entries, &topk[..3], &ChrfConfig::default()),
            Err(LexError::Usage(_))
        ));
        topk[2].clear();
        assert!(matches!(
            evaluate(&entries, &topk, &ChrfConfig::default()),
            Err(LexError::Usage(_))
        ));
        assert!(matches!(
            evaluate(&[], &[], &ChrfConfig::default()),
            Err(LexError::Usage(_))
        ));
    }
}
