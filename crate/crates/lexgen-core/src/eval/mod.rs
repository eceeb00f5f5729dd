//! Metrics and analyses: ChrF++, exact-match precision and recall,
//! train/test word intersection, transliteration rates.

pub mod analysis;
pub mod chrf;
pub mod metrics;
pub mod report;

pub use analysis::{
    fallback_align, intersection_analysis, load_alignment_tsv, load_translit_tsv,
    transliteration_rate, AlignmentMap, IntersectionReport, TranslitRate, TranslitTable,
};
pub use chrf::{chrf_pp, ChrfConfig};
pub use metrics::{normalize_for_match, precision_at_1, recall_at_k};
pub use report::{evaluate, EvalReport, GroupRow};
