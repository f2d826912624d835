//! Corpus ingestion, normalization, and sampling.
//!
//! Corpora are plain-text files with one sentence per line. On load every
//! sentence is normalized: NFKC composition, whitespace runs collapsed to a
//! single space, then spaces replaced by the word-boundary meta symbol
//! [`META_SYMBOL`], which is also prefixed to the sentence. All downstream
//! tokenization operates on this normalized form.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::ulm::UnigramVocab;

/// Word-boundary meta symbol (U+2581), sentencepiece-style.
pub const META_SYMBOL: char = '\u{2581}';

/// Short language identifier (BCP-47-style tag). Unique within a pipeline run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LanguageId(String);

impl LanguageId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty() {
            return Err(Error::EmptyLanguageId);
        }
        Ok(LanguageId(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Normalizes one raw sentence.
///
/// NFKC-composes, collapses whitespace runs to single spaces, trims, then
/// replaces each space with [`META_SYMBOL`] and prefixes one. The function is
/// idempotent: a sentence already beginning with the meta symbol is treated as
/// marked and is not prefixed again, so normalized corpus files can be
/// reloaded without change.
pub fn normalize_sentence(raw: &str) -> String {
    let composed: String = raw.nfkc().collect();
    let mut out = String::with_capacity(composed.len() + META_SYMBOL.len_utf8());
    let mut pending_space = false;
    for ch in composed.chars() {
        if ch.is_whitespace() {
            if !out.is_empty() {
                pending_space = true;
            }
            continue;
        }
        if pending_space {
            out.push(META_SYMBOL);
            pending_space = false;
        }
        out.push(ch);
    }
    if out.is_empty() {
        return out;
    }
    if out.starts_with(META_SYMBOL) {
        out
    } else {
        let mut prefixed = String::with_capacity(out.len() + META_SYMBOL.len_utf8());
        prefixed.push(META_SYMBOL);
        prefixed.push_str(&out);
        prefixed
    }
}

/// A per-language collection of normalized sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceCorpus {
    language: LanguageId,
    sentences: Vec<String>,
}

impl SentenceCorpus {
    /// Builds a corpus from raw lines, normalizing each and dropping the ones
    /// that normalize to empty.
    pub fn from_raw_lines<I, S>(language: LanguageId, lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let sentences = lines
            .into_iter()
            .map(|l| normalize_sentence(l.as_ref()))
            .filter(|s| !s.is_empty())
            .collect();
        SentenceCorpus {
            language,
            sentences,
        }
    }

    /// Builds a corpus from sentences the caller guarantees are already
    /// normalized (no newlines, no empty lines).
    pub fn from_sentences(language: LanguageId, sentences: Vec<String>) -> Self {
        SentenceCorpus {
            language,
            sentences,
        }
    }

    pub fn language(&self) -> &LanguageId {
        &self.language
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn line_count(&self) -> u64 {
        self.sentences.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Distinct sentences with multiplicities, in sorted order. Trainers and
    /// counters iterate this instead of raw lines so that up-sampled corpora
    /// cost no more than their distinct content.
    pub fn sentence_counts(&self) -> BTreeMap<&str, u64> {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for s in &self.sentences {
            *counts.entry(s.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// Writes the corpus back out, one sentence per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(s);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Loads a UTF-8 corpus file (one sentence per line), normalizing each line
/// and dropping empty ones. Invalid UTF-8 is rejected with the byte offset of
/// the first bad byte.
pub fn load_corpus(path: impl AsRef<Path>, language: LanguageId) -> Result<SentenceCorpus> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::InvalidUtf8 {
        path: path.to_path_buf(),
        byte_offset: e.valid_up_to(),
    })?;
    Ok(SentenceCorpus::from_raw_lines(language, text.lines()))
}

/// Unigram token counts over a tokenized corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(t, c)| (t.as_str(), *c))
    }

    /// Serializes as TSV `token<TAB>count`, sorted by descending count then
    /// token.
    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<(&str, u64)> = self.iter().collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut out = String::new();
        for (token, count) in rows {
            out.push_str(token);
            out.push('\t');
            out.push_str(&count.to_string());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut counts = BTreeMap::new();
        let mut total = 0u64;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let (token, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, lineno, "expected token<TAB>count"))?;
            let count: u64 = count
                .parse()
                .map_err(|_| Error::format(path, lineno, format!("bad count {count:?}")))?;
            if count == 0 {
                return Err(Error::format(path, lineno, "zero count"));
            }
            if counts.insert(token.to_string(), count).is_some() {
                return Err(Error::format(path, lineno, format!("duplicate token {token:?}")));
            }
            total += count;
        }
        Ok(FrequencyTable { counts, total })
    }
}

/// Computes per-language line quotas proportional to `p_i^(1/t)`, where `p_i`
/// is each language's share of the total line mass.
///
/// Quotas are rounded by the largest-remainder method (ties broken by
/// language id) and always sum exactly to `total_lines`. `t = 1` reproduces
/// the proportional split; large `t` approaches the uniform split. The `seed`
/// argument is accepted for interface symmetry with the sampling operations;
/// the rounding rule itself is deterministic and does not consume randomness.
pub fn temperature_sample(
    line_counts: &BTreeMap<LanguageId, u64>,
    t: f64,
    total_lines: u64,
    seed: u64,
) -> Result<BTreeMap<LanguageId, u64>> {
    let _ = seed;
    if line_counts.is_empty() {
        return Err(Error::NoLanguages);
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidTemperature(t));
    }
    if total_lines == 0 {
        return Err(Error::ZeroTotalLines);
    }
    let mass_total: u64 = line_counts.values().sum();
    if mass_total == 0 {
        return Err(Error::EmptyCorpus);
    }

    let exponent = 1.0 / t;
    let weights: Vec<(&LanguageId, f64)> = line_counts
        .iter()
        .map(|(lang, &n)| {
            let p = n as f64 / mass_total as f64;
            (lang, p.powf(exponent))
        })
        .collect();
    let weight_sum: f64 = weights.iter().map(|(_, w)| w).sum();

    largest_remainder(&weights, weight_sum, total_lines)
}

/// Splits `total` into integer parts proportional to `weights`, assigning
/// leftover units by descending fractional remainder (ties by language id).
fn largest_remainder(
    weights: &[(&LanguageId, f64)],
    weight_sum: f64,
    total: u64,
) -> Result<BTreeMap<LanguageId, u64>> {
    let mut quotas = BTreeMap::new();
    let mut remainders: Vec<(&LanguageId, f64)> = Vec::with_capacity(weights.len());
    let mut assigned = 0u64;
    for (lang, w) in weights {
        let ideal = total as f64 * w / weight_sum;
        let base = ideal.floor() as u64;
        quotas.insert((*lang).clone(), base);
        remainders.push((lang, ideal - base as f64));
        assigned += base;
    }
    let mut leftover = total - assigned.min(total);
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    let mut idx = 0;
    while leftover > 0 {
        let lang = remainders[idx % remainders.len()].0;
        *quotas.get_mut(lang).unwrap() += 1;
        leftover -= 1;
        idx += 1;
    }
    Ok(quotas)
}

/// Draws `quota` sentences from the corpus, deterministically for a given
/// seed.
///
/// With `quota <= line_count` this samples without replacement. Beyond that
/// it repeats full passes over the corpus and samples the remainder without
/// replacement, so line multiplicities never differ by more than one.
pub fn draw_sample(corpus: &SentenceCorpus, quota: u64, seed: u64) -> SentenceCorpus {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let n = corpus.line_count();
    let mut sentences = Vec::with_capacity(quota as usize);
    if n == 0 || quota == 0 {
        return SentenceCorpus::from_sentences(corpus.language.clone(), sentences);
    }
    let full_passes = quota / n;
    let remainder = (quota % n) as usize;
    for _ in 0..full_passes {
        sentences.extend(corpus.sentences.iter().cloned());
    }
    if remainder > 0 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..n as usize).collect();
        indices.shuffle(&mut rng);
        indices.truncate(remainder);
        indices.sort_unstable();
        for i in indices {
            sentences.push(corpus.sentences[i].clone());
        }
    }
    SentenceCorpus::from_sentences(corpus.language.clone(), sentences)
}

/// Derives a child seed from a base seed and a salt string, stable across
/// platforms (FNV-1a over the salt, mixed with splitmix64).
pub fn derive_seed(base: u64, salt: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in salt.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Viterbi-tokenizes the corpus and counts token occurrences. Uncovered
/// characters are counted as the vocabulary's unk token.
pub fn count_token_frequencies(corpus: &SentenceCorpus, vocab: &UnigramVocab) -> FrequencyTable {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for (sentence, mult) in corpus.sentence_counts() {
        let seg = vocab.viterbi_tokenize(sentence);
        for piece in seg.pieces() {
            *counts.entry(piece.token.clone()).or_insert(0) += mult;
            total += mult;
        }
    }
    FrequencyTable { counts, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ulm::tests_support::toy_vocab;
    use std::io::Write;

    fn lang(code: &str) -> LanguageId {
        LanguageId::new(code).unwrap()
    }

    #[test]
    fn normalize_composes_and_marks_boundaries() {
        assert_eq!(normalize_sentence("hello world"), "▁hello▁world");
        assert_eq!(normalize_sentence("  a \t b  "), "▁a▁b");
        assert_eq!(normalize_sentence(""), "");
        assert_eq!(normalize_sentence("   "), "");
        // decomposed e + U+0301 composes to U+00E9
        assert_eq!(normalize_sentence("caf\u{65}\u{301}"), "▁caf\u{e9}");
    }

    #[test]
    fn normalize_is_idempotent() {
        for raw in ["hello world", " x ", "a  b   c", "▁already"] {
            let once = normalize_sentence(raw);
            assert_eq!(normalize_sentence(&once), once);
        }
    }

    #[test]
    fn load_corpus_drops_empty_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "hello\n\nworld\n").unwrap();
        let corpus = load_corpus(f.path(), lang("en")).unwrap();
        assert_eq!(corpus.line_count(), 2);
        assert_eq!(corpus.sentences(), ["▁hello", "▁world"]);
    }

    #[test]
    fn load_corpus_accepts_fully_empty_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "\n\n  \n").unwrap();
        let corpus = load_corpus(f.path(), lang("en")).unwrap();
        assert_eq!(corpus.line_count(), 0);
    }

    #[test]
    fn load_corpus_reports_unreadable_files() {
        let err = load_corpus("/nonexistent/corpus.txt", lang("en")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn load_corpus_rejects_invalid_utf8_with_offset() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"ok\n\xff\xfe").unwrap();
        let err = load_corpus(f.path(), lang("en")).unwrap_err();
        match err {
            Error::InvalidUtf8 { byte_offset, .. } => assert_eq!(byte_offset, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_corpus_normalizes_decomposed_accents() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "cafe\u{301}\n").unwrap();
        let corpus = load_corpus(f.path(), lang("fr")).unwrap();
        // Composed form: U+2581 c a f U+00E9
        let chars: Vec<char> = corpus.sentences()[0].chars().collect();
        assert_eq!(chars, vec!['▁', 'c', 'a', 'f', '\u{e9}']);
    }

    fn counts(pairs: &[(&str, u64)]) -> BTreeMap<LanguageId, u64> {
        pairs.iter().map(|(l, n)| (lang(l), *n)).collect()
    }

    #[test]
    fn temperature_one_is_proportional() {
        let q = temperature_sample(&counts(&[("A", 80), ("B", 20)]), 1.0, 100, 0).unwrap();
        assert_eq!(q[&lang("A")], 80);
        assert_eq!(q[&lang("B")], 20);
    }

    #[test]
    fn temperature_two_upsamples_the_small_language() {
        // p^(1/2) = (0.894, 0.447) normalizes to (2/3, 1/3)
        let q = temperature_sample(&counts(&[("A", 80), ("B", 20)]), 2.0, 99, 0).unwrap();
        assert_eq!(q[&lang("A")], 66);
        assert_eq!(q[&lang("B")], 33);
    }

    #[test]
    fn temperature_symmetric_counts_split_evenly() {
        for t in [0.5, 1.0, 2.0, 7.3] {
            let q = temperature_sample(&counts(&[("A", 50), ("B", 50)]), t, 10, 0).unwrap();
            assert_eq!(q[&lang("A")], 5);
            assert_eq!(q[&lang("B")], 5);
        }
    }

    #[test]
    fn temperature_rejects_bad_arguments() {
        let c = counts(&[("A", 1)]);
        assert!(matches!(
            temperature_sample(&c, 0.0, 10, 0),
            Err(Error::InvalidTemperature(_))
        ));
        assert!(matches!(
            temperature_sample(&c, -1.0, 10, 0),
            Err(Error::InvalidTemperature(_))
        ));
        assert!(matches!(
            temperature_sample(&c, 1.0, 0, 0),
            Err(Error::ZeroTotalLines)
        ));
        assert!(matches!(
            temperature_sample(&BTreeMap::new(), 1.0, 10, 0),
            Err(Error::NoLanguages)
        ));
    }

    #[test]
    fn huge_temperature_approaches_uniform() {
        let q = temperature_sample(
            &counts(&[("A", 1_000_000), ("B", 10), ("C", 3)]),
            1e6,
            99,
            0,
        )
        .unwrap();
        for quota in q.values() {
            assert!((*quota as i64 - 33).abs() <= 1, "quotas {q:?}");
        }
        assert_eq!(q.values().sum::<u64>(), 99);
    }

    fn toy_corpus(code: &str, lines: &[&str]) -> SentenceCorpus {
        SentenceCorpus::from_sentences(lang(code), lines.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn draw_sample_full_quota_keeps_every_line() {
        let corpus = toy_corpus("x", &["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let sample = draw_sample(&corpus, 10, 7);
        assert_eq!(sample.line_count(), 10);
        let mut got: Vec<&str> = sample.sentences().iter().map(|s| s.as_str()).collect();
        got.sort_unstable();
        assert_eq!(got, ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
    }

    #[test]
    fn draw_sample_upsamples_with_balanced_multiplicity() {
        let corpus = toy_corpus("x", &["a", "b", "c", "d"]);
        let sample = draw_sample(&corpus, 10, 3);
        assert_eq!(sample.line_count(), 10);
        let m = sample.sentence_counts();
        for line in ["a", "b", "c", "d"] {
            let c = m[line];
            assert!(c == 2 || c == 3, "line {line} occurred {c} times");
        }
    }

    #[test]
    fn draw_sample_zero_quota_is_empty() {
        let corpus = toy_corpus("x", &["a", "b"]);
        assert!(draw_sample(&corpus, 0, 1).is_empty());
    }

    #[test]
    fn draw_sample_is_deterministic() {
        let corpus = toy_corpus("x", &["a", "b", "c", "d", "e"]);
        assert_eq!(draw_sample(&corpus, 3, 9), draw_sample(&corpus, 3, 9));
    }

    #[test]
    fn count_frequencies_counts_viterbi_tokens() {
        let vocab = toy_vocab(&[("a", 0.6), ("b", 0.3)]);
        let corpus = toy_corpus("x", &["ab", "a"]);
        let table = count_token_frequencies(&corpus, &vocab);
        assert_eq!(table.count("a"), 2);
        assert_eq!(table.count("b"), 1);
        assert_eq!(table.total(), 3);
    }

    #[test]
    fn count_frequencies_empty_corpus() {
        let vocab = toy_vocab(&[("a", 0.9)]);
        let corpus = toy_corpus("x", &[]);
        let table = count_token_frequencies(&corpus, &vocab);
        assert!(table.is_empty());
        assert_eq!(table.total(), 0);
    }

    #[test]
    fn count_frequencies_prefers_high_probability_merges() {
        // p(aa) > p(a)^2, so "aa" tokenizes as one piece.
        let vocab = toy_vocab(&[("aa", 0.5), ("a", 0.4)]);
        let corpus = toy_corpus("x", &["aa"]);
        let table = count_token_frequencies(&corpus, &vocab);
        assert_eq!(table.count("aa"), 1);
        assert_eq!(table.count("a"), 0);
        assert_eq!(table.total(), 1);
    }

    #[test]
    fn frequency_table_roundtrip_and_order() {
        let vocab = toy_vocab(&[("a", 0.6), ("b", 0.3)]);
        let corpus = toy_corpus("x", &["ab", "a", "b", "a"]);
        let table = count_token_frequencies(&corpus, &vocab);
        let tsv = table.to_tsv();
        assert_eq!(tsv, "a\t3\nb\t2\n");
        let f = tempfile::NamedTempFile::new().unwrap();
        table.save(f.path()).unwrap();
        assert_eq!(FrequencyTable::load(f.path()).unwrap(), table);
    }

    #[test]
    fn frequency_table_rejects_duplicates() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "a\t3\na\t2\n").unwrap();
        match FrequencyTable::load(f.path()).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quotas_sum_to_total(
                raw in proptest::collection::btree_map("[a-z]{1,4}", 1u64..10_000, 1..8),
                t in 0.2f64..8.0,
                total in 1u64..5_000,
            ) {
                let line_counts: BTreeMap<LanguageId, u64> = raw
                    .into_iter()
                    .map(|(l, n)| (LanguageId::new(l).unwrap(), n))
                    .collect();
                let q = temperature_sample(&line_counts, t, total, 0).unwrap();
                prop_assert_eq!(q.values().sum::<u64>(), total);
                prop_assert_eq!(q.len(), line_counts.len());
            }

            #[test]
            fn frequency_total_equals_summed_segmentation_lengths(
                seed in 0u64..100,
            ) {
                use rand::Rng;
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let alphabet = ['a', 'b', 'c'];
                let lines: Vec<String> = (0..rng.gen_range(1..6))
                    .map(|_| {
                        let len = rng.gen_range(0..6);
                        (0..len)
                            .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
                            .collect()
                    })
                    .filter(|s: &String| !s.is_empty())
                    .collect();
                let corpus = SentenceCorpus::from_sentences(lang("p"), lines);
                let vocab = toy_vocab(&[("a", 0.4), ("ab", 0.3), ("c", 0.2)]);
                let table = count_token_frequencies(&corpus, &vocab);
                let expected: u64 = corpus
                    .sentences()
                    .iter()
                    .map(|s| vocab.viterbi_tokenize(s).len() as u64)
                    .sum();
                prop_assert_eq!(table.total(), expected);
            }

            #[test]
            fn draw_multiplicities_differ_by_at_most_one(
                n in 1u64..40,
                quota in 0u64..200,
                seed in 0u64..1_000,
            ) {
                let lines: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
                let corpus = SentenceCorpus::from_sentences(lang("x"), lines);
                let sample = draw_sample(&corpus, quota, seed);
                prop_assert_eq!(sample.line_count(), quota);
                if quota % n != 0 {
                    let m = sample.sentence_counts();
                    let lo = quota / n;
                    for i in 0..n {
                        let c = m.get(format!("s{i}").as_str()).copied().unwrap_or(0);
                        prop_assert!(c == lo || c == lo + 1);
                    }
                }
            }
        }
    }
}
