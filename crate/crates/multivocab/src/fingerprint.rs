//! Shared lexicon and per-language lexical fingerprints.
//!
//! The shared lexicon is the union of all per-language vocabularies. A
//! language's fingerprint is a dense vector over that lexicon: either a
//! membership indicator or, more informatively, the negative log unigram
//! probability of each of its tokens on its own corpus.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::corpus::{FrequencyTable, LanguageId};
use crate::error::{Error, Result};
use crate::ulm::UnigramVocab;

/// Union of per-language vocabularies, in a fixed sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedLexicon {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl SharedLexicon {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn position(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }
}

/// Builds the shared lexicon from the union of the given vocabularies.
pub fn build_shared_lexicon<'a, I>(vocabs: I) -> Result<SharedLexicon>
where
    I: IntoIterator<Item = &'a UnigramVocab>,
{
    let mut union: BTreeSet<&str> = BTreeSet::new();
    let mut any = false;
    for vocab in vocabs {
        any = true;
        union.extend(vocab.entries().map(|(t, _)| t));
    }
    if !any {
        return Err(Error::NoVocabs);
    }
    let tokens: Vec<String> = union.into_iter().map(str::to_string).collect();
    let index = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    Ok(SharedLexicon { tokens, index })
}

/// Fingerprint weighting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FingerprintMode {
    /// 1.0 for tokens in the language's vocabulary, 0.0 otherwise.
    Binary,
    /// Negative log unigram probability of the token on the language's
    /// corpus; in-vocabulary tokens the tokenizer never produced are smoothed
    /// to `-log(0.5 / total)`.
    NegLogProb,
}

impl fmt::Display for FingerprintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FingerprintMode::Binary => f.write_str("binary"),
            FingerprintMode::NegLogProb => f.write_str("neglogprob"),
        }
    }
}

impl std::str::FromStr for FingerprintMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "binary" => Ok(FingerprintMode::Binary),
            "neglogprob" => Ok(FingerprintMode::NegLogProb),
            other => Err(format!("unknown fingerprint mode {other:?}")),
        }
    }
}

/// Dense vector over the shared lexicon encoding one language's token usage.
/// Entries are zero exactly for tokens outside the language's vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LexicalFingerprint {
    language: LanguageId,
    values: Vec<f64>,
}

impl LexicalFingerprint {
    pub fn language(&self) -> &LanguageId {
        &self.language
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    /// Builds a fingerprint from a raw vector (synthetic inputs, tests).
    pub fn from_parts(language: LanguageId, values: Vec<f64>) -> Self {
        LexicalFingerprint { language, values }
    }
}

/// Builds one language's fingerprint over the shared lexicon.
pub fn build_fingerprint(
    language: LanguageId,
    vocab: &UnigramVocab,
    freq: &FrequencyTable,
    lexicon: &SharedLexicon,
    mode: FingerprintMode,
) -> Result<LexicalFingerprint> {
    let mut values = vec![0.0f64; lexicon.len()];
    let total = freq.total();
    for (token, _) in vocab.entries() {
        let pos = lexicon
            .position(token)
            .ok_or_else(|| Error::TokenNotInLexicon(token.to_string()))?;
        values[pos as usize] = match mode {
            FingerprintMode::Binary => 1.0,
            FingerprintMode::NegLogProb => {
                let count = freq.count(token);
                if count > 0 {
                    -((count as f64 / total as f64).ln())
                } else {
                    -((0.5 / total as f64).ln())
                }
            }
        };
    }
    Ok(LexicalFingerprint { language, values })
}

/// Writes fingerprints as sparse rows:
/// `#fingerprints v1 dim=<D> mode=<m>` then `<lang><TAB>i:v,i:v,…` per
/// language.
pub fn write_fingerprints(
    fingerprints: &[LexicalFingerprint],
    mode: FingerprintMode,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let dim = fingerprints.first().map_or(0, |f| f.dimension());
    let mut out = format!("#fingerprints v1 dim={dim} mode={mode}\n");
    for fp in fingerprints {
        out.push_str(fp.language.as_str());
        out.push('\t');
        let mut first = true;
        for (i, v) in fp.values.iter().enumerate() {
            if *v != 0.0 {
                if !first {
                    out.push(',');
                }
                out.push_str(&format!("{i}:{v:.16e}"));
                first = false;
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the sparse fingerprint format written by [`write_fingerprints`].
pub fn read_fingerprints(path: impl AsRef<Path>) -> Result<(Vec<LexicalFingerprint>, FingerprintMode)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (dim, mode) = match lines.next() {
        Some((_, header)) => {
            let rest = header
                .strip_prefix("#fingerprints v1 dim=")
                .ok_or_else(|| Error::format(path, 1, "bad fingerprint header"))?;
            let (dim, mode) = rest
                .split_once(" mode=")
                .ok_or_else(|| Error::format(path, 1, "bad fingerprint header"))?;
            let dim: usize = dim
                .parse()
                .map_err(|_| Error::format(path, 1, "bad dimension"))?;
            let mode: FingerprintMode = mode
                .parse()
                .map_err(|e: String| Error::format(path, 1, e))?;
            (dim, mode)
        }
        None => return Err(Error::format(path, 1, "empty fingerprint file")),
    };
    let mut fingerprints = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let (lang, pairs) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, lineno, "expected lang<TAB>pairs"))?;
        let mut values = vec![0.0f64; dim];
        if !pairs.is_empty() {
            for pair in pairs.split(',') {
                let (idx, v) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::format(path, lineno, format!("bad pair {pair:?}")))?;
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::format(path, lineno, format!("bad index {idx:?}")))?;
                if idx >= dim {
                    return Err(Error::format(path, lineno, format!("index {idx} out of range")));
                }
                values[idx] = v
                    .parse()
                    .map_err(|_| Error::format(path, lineno, format!("bad value {v:?}")))?;
            }
        }
        fingerprints.push(LexicalFingerprint {
            language: LanguageId::new(lang)?,
            values,
        });
    }
    Ok((fingerprints, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{count_token_frequencies, SentenceCorpus};
    use crate::ulm::tests_support::toy_vocab;
    use crate::ulm::DEFAULT_UNK;

    fn lang(code: &str) -> LanguageId {
        LanguageId::new(code).unwrap()
    }

    #[test]
    fn lexicon_is_the_sorted_union() {
        let v1 = toy_vocab(&[("a", 0.4), ("b", 0.3), ("c", 0.3)]);
        let v2 = toy_vocab(&[("b", 0.3), ("c", 0.3), ("d", 0.4)]);
        let lex = build_shared_lexicon([&v1, &v2]).unwrap();
        // Union includes the shared unk marker.
        let tokens: Vec<&str> = lex.tokens().iter().map(|s| s.as_str()).collect();
        assert_eq!(tokens, [DEFAULT_UNK, "a", "b", "c", "d"]);
        assert_eq!(lex.position("d"), Some(4));
    }

    #[test]
    fn lexicon_of_one_vocab_is_its_token_set() {
        let v = toy_vocab(&[("b", 0.5), ("a", 0.5)]);
        let lex = build_shared_lexicon([&v]).unwrap();
        assert_eq!(lex.len(), v.len());
        for (t, _) in v.entries() {
            assert!(lex.position(t).is_some());
        }
    }

    #[test]
    fn lexicon_union_cardinality_is_bounded() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut vocabs = Vec::new();
        for v in 0..10 {
            let mut tokens: Vec<(String, f64)> = (0..30)
                .map(|i| {
                    let shared = rng.gen_bool(0.3);
                    let t = if shared {
                        format!("shared{}", i % 7)
                    } else {
                        format!("v{v}tok{i}")
                    };
                    (t, -1.0)
                })
                .collect();
            tokens.push((DEFAULT_UNK.to_string(), -1.0));
            tokens.sort_by(|a, b| a.0.cmp(&b.0));
            tokens.dedup_by(|a, b| a.0 == b.0);
            vocabs.push(UnigramVocab::new(tokens, [], DEFAULT_UNK).unwrap());
        }
        let lex = build_shared_lexicon(vocabs.iter()).unwrap();
        let sum: usize = vocabs.iter().map(|v| v.len()).sum();
        assert!(lex.len() < sum, "shared tokens must collapse");

        // Pairwise-disjoint vocabularies (distinct unk markers) hit the bound
        // exactly.
        let disjoint: Vec<UnigramVocab> = (0..5)
            .map(|v| {
                let unk = format!("<unk{v}>");
                let mut tokens: Vec<(String, f64)> =
                    (0..20).map(|i| (format!("d{v}t{i}"), -1.0)).collect();
                tokens.push((unk.clone(), -1.0));
                UnigramVocab::new(tokens, [], unk).unwrap()
            })
            .collect();
        let lex = build_shared_lexicon(disjoint.iter()).unwrap();
        let sum: usize = disjoint.iter().map(|v| v.len()).sum();
        assert_eq!(lex.len(), sum);
    }

    #[test]
    fn lexicon_requires_at_least_one_vocab() {
        assert!(matches!(
            build_shared_lexicon(std::iter::empty::<&UnigramVocab>()),
            Err(Error::NoVocabs)
        ));
    }

    /// The worked example: lexicon [a, b, c], vocab {a, c}, counts {a: 2,
    /// c: 1} of 3 ⇒ values [-ln(2/3), 0, -ln(1/3)].
    #[test]
    fn neglogprob_fingerprint_hand_example() {
        let fixture = fingerprint_fixture();
        let fp = build_fingerprint(
            lang("x"),
            &fixture.vocab,
            &fixture.freq,
            &fixture.lexicon,
            FingerprintMode::NegLogProb,
        )
        .unwrap();
        let pos = |t: &str| fixture.lexicon.position(t).unwrap() as usize;
        assert!((fp.values()[pos("a")] - (-(2.0f64 / 3.0).ln())).abs() < 1e-12);
        assert_eq!(fp.values()[pos("b")], 0.0);
        assert!((fp.values()[pos("c")] - (-(1.0f64 / 3.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn binary_fingerprint_is_the_membership_indicator() {
        let fixture = fingerprint_fixture();
        let fp = build_fingerprint(
            lang("x"),
            &fixture.vocab,
            &fixture.freq,
            &fixture.lexicon,
            FingerprintMode::Binary,
        )
        .unwrap();
        let pos = |t: &str| fixture.lexicon.position(t).unwrap() as usize;
        assert_eq!(fp.values()[pos("a")], 1.0);
        assert_eq!(fp.values()[pos("b")], 0.0);
        assert_eq!(fp.values()[pos("c")], 1.0);
    }

    struct Fixture {
        vocab: UnigramVocab,
        freq: FrequencyTable,
        lexicon: SharedLexicon,
    }

    fn fingerprint_fixture() -> Fixture {
        let vocab = toy_vocab(&[("a", 0.6), ("c", 0.4)]);
        let all = toy_vocab(&[("a", 0.4), ("b", 0.3), ("c", 0.3)]);
        let lexicon = build_shared_lexicon([&all]).unwrap();
        let corpus = SentenceCorpus::from_sentences(
            lang("x"),
            vec!["ac".to_string(), "a".to_string()],
        );
        let freq = count_token_frequencies(&corpus, &vocab);
        assert_eq!(freq.count("a"), 2);
        assert_eq!(freq.count("c"), 1);
        Fixture {
            vocab,
            freq,
            lexicon,
        }
    }

    #[test]
    fn unseen_vocab_tokens_get_smoothed_not_zero() {
        let vocab = toy_vocab(&[("a", 0.5), ("zzz", 0.5)]);
        let lexicon = build_shared_lexicon([&vocab]).unwrap();
        let corpus =
            SentenceCorpus::from_sentences(lang("x"), vec!["aa".to_string()]);
        let freq = count_token_frequencies(&corpus, &vocab);
        let fp = build_fingerprint(lang("x"), &vocab, &freq, &lexicon, FingerprintMode::NegLogProb)
            .unwrap();
        let pos = lexicon.position("zzz").unwrap() as usize;
        assert!((fp.values()[pos] - (-(0.5 / 2.0f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn zero_pattern_matches_binary_support() {
        let fixture = fingerprint_fixture();
        let a = build_fingerprint(
            lang("x"),
            &fixture.vocab,
            &fixture.freq,
            &fixture.lexicon,
            FingerprintMode::NegLogProb,
        )
        .unwrap();
        let b = build_fingerprint(
            lang("x"),
            &fixture.vocab,
            &fixture.freq,
            &fixture.lexicon,
            FingerprintMode::Binary,
        )
        .unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(*x != 0.0, *y != 0.0);
        }
    }

    #[test]
    fn missing_lexicon_token_is_a_pipeline_bug() {
        let vocab = toy_vocab(&[("a", 0.5), ("q", 0.5)]);
        let other = toy_vocab(&[("a", 1.0)]);
        let lexicon = build_shared_lexicon([&other]).unwrap();
        let corpus = SentenceCorpus::from_sentences(lang("x"), vec!["a".to_string()]);
        let freq = count_token_frequencies(&corpus, &vocab);
        assert!(matches!(
            build_fingerprint(lang("x"), &vocab, &freq, &lexicon, FingerprintMode::Binary),
            Err(Error::TokenNotInLexicon(_))
        ));
    }

    #[test]
    fn fingerprint_file_roundtrip() {
        let fixture = fingerprint_fixture();
        let fp = build_fingerprint(
            lang("xx"),
            &fixture.vocab,
            &fixture.freq,
            &fixture.lexicon,
            FingerprintMode::NegLogProb,
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_fingerprints(std::slice::from_ref(&fp), FingerprintMode::NegLogProb, f.path())
            .unwrap();
        let (back, mode) = read_fingerprints(f.path()).unwrap();
        assert_eq!(mode, FingerprintMode::NegLogProb);
        assert_eq!(back, vec![fp]);
    }
}
