//! Tokenization diagnostics: fertility, relative length deltas, coverage
//! curves, and cross-cluster overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::clustering::ClusterId;
use crate::corpus::{LanguageId, SentenceCorpus};
use crate::error::{Error, Result};
use crate::ulm::UnigramVocab;

/// Average tokens per sentence for one language under one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizationStats {
    pub language: LanguageId,
    pub avg_tokens_per_sentence: f64,
    pub total_tokens: u64,
    pub total_sentences: u64,
}

/// Viterbi-tokenizes every sentence and averages the token counts. An empty
/// corpus reports an average of zero.
pub fn fertility(vocab: &UnigramVocab, corpus: &SentenceCorpus) -> TokenizationStats {
    let mut total_tokens = 0u64;
    for (sentence, mult) in corpus.sentence_counts() {
        total_tokens += vocab.viterbi_tokenize(sentence).len() as u64 * mult;
    }
    let total_sentences = corpus.line_count();
    let avg = if total_sentences == 0 {
        0.0
    } else {
        total_tokens as f64 / total_sentences as f64
    };
    TokenizationStats {
        language: corpus.language().clone(),
        avg_tokens_per_sentence: avg,
        total_tokens,
        total_sentences,
    }
}

/// Percent change in average tokens per sentence from `vocab_a` to
/// `vocab_b` on the same corpus: `100 * (avg_b - avg_a) / avg_a`.
pub fn relative_length_diff(
    vocab_a: &UnigramVocab,
    vocab_b: &UnigramVocab,
    corpus: &SentenceCorpus,
) -> Result<f64> {
    let a = fertility(vocab_a, corpus).avg_tokens_per_sentence;
    let b = fertility(vocab_b, corpus).avg_tokens_per_sentence;
    if a == 0.0 {
        return Err(Error::ZeroBaselineFertility);
    }
    Ok(100.0 * (b - a) / a)
}

/// Cumulative fraction of token occurrences covered by the top-n most
/// frequent tokens, by rank.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCurve {
    points: Vec<(u64, f64)>,
}

impl CoverageCurve {
    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn final_rank(&self) -> u64 {
        self.points.last().map_or(0, |(r, _)| *r)
    }
}

/// Tokenizes the corpus, sorts distinct tokens by descending occurrence
/// count, and accumulates the occurrence fraction by rank.
pub fn coverage_curve(vocab: &UnigramVocab, corpus: &SentenceCorpus) -> Result<CoverageCurve> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let freq = crate::corpus::count_token_frequencies(corpus, vocab);
    let mut counts: Vec<(&str, u64)> = freq.iter().collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let total = freq.total() as f64;
    let mut cum = 0u64;
    let points = counts
        .iter()
        .enumerate()
        .map(|(i, (_, c))| {
            cum += c;
            (i as u64 + 1, cum as f64 / total)
        })
        .collect();
    Ok(CoverageCurve { points })
}

/// Smallest rank whose cumulative fraction reaches `p`.
pub fn utilization_at(curve: &CoverageCurve, p: f64) -> Result<u64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidCoverageFraction(p));
    }
    for &(rank, fraction) in &curve.points {
        if fraction >= p {
            return Ok(rank);
        }
    }
    // Floating accumulation can leave the terminal fraction a hair under 1.
    Ok(curve.final_rank())
}

/// Per-cluster unique-token fractions and the pairwise intersection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    pub unique_fraction: BTreeMap<ClusterId, f64>,
    pub pairwise: BTreeMap<(ClusterId, ClusterId), u64>,
}

/// Computes, for each cluster, the fraction of its tokens absent from every
/// other cluster, plus symmetric pairwise intersection counts.
pub fn overlap_report(
    cluster_vocabs: &BTreeMap<ClusterId, UnigramVocab>,
) -> Result<OverlapReport> {
    if cluster_vocabs.len() < 2 {
        return Err(Error::TooFewVocabs {
            needed: 2,
            got: cluster_vocabs.len(),
        });
    }
    let sets: BTreeMap<ClusterId, BTreeSet<&str>> = cluster_vocabs
        .iter()
        .map(|(&cid, v)| (cid, v.entries().map(|(t, _)| t).collect()))
        .collect();
    let mut unique_fraction = BTreeMap::new();
    for (&cid, set) in &sets {
        let unique = set
            .iter()
            .filter(|t| {
                sets.iter()
                    .all(|(&other, s)| other == cid || !s.contains(**t))
            })
            .count();
        unique_fraction.insert(cid, unique as f64 / set.len() as f64);
    }
    let mut pairwise = BTreeMap::new();
    let ids: Vec<ClusterId> = sets.keys().copied().collect();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let shared = sets[&a].intersection(&sets[&b]).count() as u64;
            pairwise.insert((a, b), shared);
        }
    }
    Ok(OverlapReport {
        unique_fraction,
        pairwise,
    })
}

/// CSV writers for the report files (`fertility.csv`, `coverage.csv`,
/// `overlap.csv`). Schemas are documented in the repository README.
pub mod reports {
    use super::*;

    pub fn write_fertility_csv(
        stats: &[TokenizationStats],
        path: impl AsRef<Path>,
    ) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("language,avg_tokens_per_sentence,total_tokens,total_sentences\n");
        for s in stats {
            out.push_str(&format!(
                "{},{:.6},{},{}\n",
                s.language, s.avg_tokens_per_sentence, s.total_tokens, s.total_sentences
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_coverage_csv(curve: &CoverageCurve, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("rank,cumulative_fraction\n");
        for (rank, fraction) in curve.points() {
            out.push_str(&format!("{rank},{fraction:.9}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_overlap_csv(report: &OverlapReport, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("cluster_a,cluster_b,shared_tokens\n");
        for (&(a, b), shared) in &report.pairwise {
            out.push_str(&format!("{a},{b},{shared}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
