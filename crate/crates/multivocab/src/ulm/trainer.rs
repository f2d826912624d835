//! Unigram LM training: seed construction, EM re-estimation, and
//! likelihood-loss pruning.

use std::collections::{BTreeMap, HashMap};

use super::{SentenceLattice, UnigramVocab, DEFAULT_UNK};
use crate::corpus::SentenceCorpus;
use crate::error::{Error, Result};

/// Expected-count floor for tokens with zero posterior mass. Keeps every
/// log-probability finite while stealing a negligible amount of mass.
const EXPECTED_FLOOR: f64 = 1e-100;

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    /// Longest candidate substring, in characters.
    pub max_token_len: usize,
    /// Minimum occurrence count for a multi-character seed candidate.
    pub min_count: u64,
    /// Seed vocabulary size cap.
    pub max_seed_size: usize,
    /// EM iterations between pruning rounds.
    pub em_steps_per_round: usize,
    /// Fraction of removable tokens kept per pruning round.
    pub keep_fraction: f64,
    /// Cumulative character-mass threshold above which characters map to unk.
    pub character_coverage: f64,
    /// Safety cap on EM/prune rounds.
    pub max_rounds: usize,
    /// EM iterations after the final trim.
    pub final_em_steps: usize,
    /// Surface form of the unk token.
    pub unk_token: String,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            max_token_len: 16,
            min_count: 2,
            max_seed_size: 1_000_000,
            em_steps_per_round: 2,
            keep_fraction: 0.8,
            character_coverage: 0.9995,
            max_rounds: 64,
            final_em_steps: 2,
            unk_token: DEFAULT_UNK.to_string(),
        }
    }
}

/// Builds the seed vocabulary: every substring of length `<= max_token_len`
/// occurring at least `min_count` times, scored by `count * length` and
/// truncated to `max_seed_size`. Characters inside the configured cumulative
/// coverage become required; the remainder (and substrings containing them)
/// map to unk.
pub fn make_seed_vocab(corpus: &SentenceCorpus, config: &TrainerConfig) -> Result<UnigramVocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sentence_counts = corpus.sentence_counts();

    let mut char_counts: BTreeMap<char, u64> = BTreeMap::new();
    for (sentence, mult) in &sentence_counts {
        for c in sentence.chars() {
            *char_counts.entry(c).or_insert(0) += mult;
        }
    }
    let total_chars: u64 = char_counts.values().sum();
    let mut by_count: Vec<(char, u64)> = char_counts.into_iter().collect();
    by_count.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let target = ((config.character_coverage * total_chars as f64).ceil() as u64).min(total_chars);
    let mut covered: BTreeMap<char, u64> = BTreeMap::new();
    let mut cum = 0u64;
    for (c, n) in by_count {
        if cum >= target {
            break;
        }
        covered.insert(c, n);
        cum += n;
    }

    // Overlapping substring counts, restricted to covered characters. The
    // word-boundary meta symbol may only appear piece-initially
    // (sentencepiece convention), so candidates never span words.
    let mut substr_counts: HashMap<&str, u64> = HashMap::new();
    for (sentence, mult) in &sentence_counts {
        let offsets: Vec<usize> = sentence
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(sentence.len()))
            .collect();
        let n = offsets.len() - 1;
        let chars: Vec<char> = sentence.chars().collect();
        for start in 0..n {
            let span = config.max_token_len.min(n - start);
            for len in 2..=span {
                let last = chars[start + len - 1];
                if last == crate::corpus::META_SYMBOL || !covered.contains_key(&last) {
                    break;
                }
                if len == 2 && !covered.contains_key(&chars[start]) {
                    break;
                }
                let slice = &sentence[offsets[start]..offsets[start + len]];
                *substr_counts.entry(slice).or_insert(0) += mult;
            }
        }
    }

    let mut candidates: Vec<(&str, u64)> = substr_counts
        .into_iter()
        .filter(|(s, c)| *c >= config.min_count && s.chars().count() >= 2)
        .map(|(s, c)| {
            let score = c * s.chars().count() as u64;
            (s, score)
        })
        .collect();
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let protected = covered.len() + 1;
    let budget = config.max_seed_size.max(protected) - protected;
    candidates.truncate(budget);

    let mut scored: Vec<(String, f64)> = Vec::with_capacity(protected + candidates.len());
    scored.push((config.unk_token.clone(), 1.0));
    for (&c, &n) in &covered {
        scored.push((c.to_string(), n as f64));
    }
    for (s, score) in candidates {
        scored.push((s.to_string(), score as f64));
    }
    let total: f64 = scored.iter().map(|(_, s)| s).sum();
    let entries = scored
        .into_iter()
        .map(|(t, s)| (t, ((s / total).ln()).min(0.0)));
    UnigramVocab::new(entries, covered.keys().copied(), config.unk_token.clone())
}

/// One EM iteration: expected token counts from the full segmentation
/// lattice (forward-backward), re-normalized into new log-probabilities. The
/// token set is unchanged; tokens with zero posterior mass are floored to a
/// negligible probability so all log-probabilities stay finite.
pub fn em_step(corpus: &SentenceCorpus, vocab: &UnigramVocab) -> Result<UnigramVocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut expected = vec![0.0f64; vocab.len()];
    for (sentence, mult) in corpus.sentence_counts() {
        let lattice = SentenceLattice::build(vocab, sentence);
        lattice.accumulate_expected(mult as f64, &mut expected);
    }
    for e in &mut expected {
        if *e < EXPECTED_FLOOR {
            *e = EXPECTED_FLOOR;
        }
    }
    let total: f64 = expected.iter().sum();
    let log_probs = expected
        .into_iter()
        .map(|e| ((e / total).ln()).min(0.0))
        .collect();
    vocab.with_log_probs(log_probs)
}

/// Marginal corpus log-likelihood (sum over all segmentations per
/// sentence); the quantity EM is guaranteed not to decrease.
pub fn corpus_marginal_log_likelihood(corpus: &SentenceCorpus, vocab: &UnigramVocab) -> f64 {
    corpus
        .sentence_counts()
        .iter()
        .map(|(sentence, mult)| {
            *mult as f64 * SentenceLattice::build(vocab, sentence).log_marginal()
        })
        .sum()
}

/// Likelihood loss incurred by removing each removable entry, computed from
/// Viterbi lattice statistics: `freq(x) * (lp(x) - score(best alternative
/// segmentation of x))`. Tokens absent from every Viterbi path cost nothing.
fn removal_losses(corpus: &SentenceCorpus, vocab: &UnigramVocab, removable: &[u32]) -> Vec<f64> {
    let mut freq = vec![0.0f64; vocab.len()];
    for (sentence, mult) in corpus.sentence_counts() {
        let seg = vocab.viterbi_tokenize(sentence);
        for piece in seg.pieces() {
            if let Some((id, _)) = vocab.lookup(&piece.token) {
                freq[id as usize] += mult as f64;
            }
        }
    }
    removable
        .iter()
        .map(|&id| {
            let f = freq[id as usize];
            if f == 0.0 {
                return 0.0;
            }
            let surface = vocab.token_at(id);
            let alt = vocab.viterbi_with_ban(surface, Some(id));
            f * (vocab.log_prob_at(id) - alt.score())
        })
        .collect()
}

fn prune_to_keep(
    corpus: &SentenceCorpus,
    vocab: &UnigramVocab,
    keep_removable: usize,
) -> Result<UnigramVocab> {
    let protected_ids: Vec<u32> = (0..vocab.len() as u32)
        .filter(|&id| is_protected(vocab, id))
        .collect();
    let removable: Vec<u32> = (0..vocab.len() as u32)
        .filter(|&id| !is_protected(vocab, id))
        .collect();
    if keep_removable >= removable.len() {
        return Ok(vocab.renormalized());
    }
    let losses = removal_losses(corpus, vocab, &removable);
    let mut ranked: Vec<(u32, f64)> = removable.into_iter().zip(losses).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| vocab.token_at(a.0).cmp(vocab.token_at(b.0)))
    });
    let mut keep = protected_ids;
    keep.extend(ranked.into_iter().take(keep_removable).map(|(id, _)| id));
    vocab.retain_ids(&keep)
}

fn is_protected(vocab: &UnigramVocab, id: u32) -> bool {
    let token = vocab.token_at(id);
    if token == vocab.unk_token() {
        return true;
    }
    let mut chars = token.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => vocab.required_chars().contains(&c),
        _ => false,
    }
}

/// Prunes the vocabulary to `ceil(keep_fraction * removable)` removable
/// entries ranked by likelihood loss, keeping all protected entries and
/// renormalizing. The protected set (unk plus required characters) always
/// survives regardless of `keep_fraction`.
pub fn prune(
    corpus: &SentenceCorpus,
    vocab: &UnigramVocab,
    keep_fraction: f64,
) -> Result<UnigramVocab> {
    if !(keep_fraction > 0.0 && keep_fraction < 1.0) {
        return Err(Error::InvalidKeepFraction(keep_fraction));
    }
    let removable = vocab.len() - vocab.protected_len().min(vocab.len());
    let keep = (keep_fraction * removable as f64).ceil() as usize;
    prune_to_keep(corpus, vocab, keep)
}

/// Trains a unigram vocabulary of exactly `target_size` entries: seed
/// construction, then alternating EM and pruning rounds until the size falls
/// to the target, a final trim by likelihood-loss rank, and a last EM polish.
pub fn train_unigram(
    corpus: &SentenceCorpus,
    target_size: usize,
    config: &TrainerConfig,
) -> Result<UnigramVocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut vocab = make_seed_vocab(corpus, config)?;
    let protected = vocab.protected_len();
    if target_size < protected {
        return Err(Error::TargetTooSmall {
            target: target_size,
            protected,
        });
    }
    if vocab.len() < target_size {
        return Err(Error::TargetUnreachable {
            target: target_size,
            available: vocab.len(),
        });
    }

    let mut rounds = 0;
    loop {
        for _ in 0..config.em_steps_per_round {
            vocab = em_step(corpus, &vocab)?;
        }
        if vocab.len() <= target_size || rounds >= config.max_rounds {
            break;
        }
        let removable = vocab.len() - protected;
        let mut keep = (config.keep_fraction * removable as f64).ceil() as usize;
        if keep >= removable {
            keep = removable - 1;
        }
        keep = keep.max(target_size - protected);
        vocab = prune_to_keep(corpus, &vocab, keep)?;
        rounds += 1;
    }

    if vocab.len() > target_size {
        vocab = prune_to_keep(corpus, &vocab, target_size - protected)?;
    }
    for _ in 0..config.final_em_steps {
        vocab = em_step(corpus, &vocab)?;
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageId;
    use crate::ulm::tests_support::toy_vocab;

    fn corpus(lines: &[&str]) -> SentenceCorpus {
        SentenceCorpus::from_sentences(
            LanguageId::new("t").unwrap(),
            lines.iter().map(|s| s.to_string()).collect(),
        )
    }

    #[test]
    fn seed_counts_overlapping_substrings() {
        let c = corpus(&["aaa"]);
        let config = TrainerConfig {
            max_token_len: 2,
            max_seed_size: 10,
            ..TrainerConfig::default()
        };
        let vocab = make_seed_vocab(&c, &config).unwrap();
        // "a" occurs 3 times (score 3), "aa" twice (score 4), unk score 1.
        assert!(vocab.contains("a"));
        assert!(vocab.contains("aa"));
        assert!((vocab.prob_sum() - 1.0).abs() < 1e-12);
        let p = |t: &str| vocab.log_prob(t).unwrap().exp();
        assert!((p("a") - 3.0 / 8.0).abs() < 1e-12);
        assert!((p("aa") - 4.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn seed_single_char_fallback() {
        let c = corpus(&["ab"]);
        let config = TrainerConfig {
            max_token_len: 1,
            ..TrainerConfig::default()
        };
        let vocab = make_seed_vocab(&c, &config).unwrap();
        let mut tokens: Vec<&str> = vocab.entries().map(|(t, _)| t).collect();
        tokens.sort_unstable();
        assert_eq!(tokens, [DEFAULT_UNK, "a", "b"]);
    }

    #[test]
    fn seed_sees_meta_prefixed_words_after_normalization() {
        let c = SentenceCorpus::from_raw_lines(LanguageId::new("t").unwrap(), ["xy xy"]);
        let config = TrainerConfig {
            max_token_len: 4,
            ..TrainerConfig::default()
        };
        let vocab = make_seed_vocab(&c, &config).unwrap();
        assert!(vocab.contains("▁xy"), "tokens: {:?}", vocab.entries().collect::<Vec<_>>());
        // score(▁xy) = 2 occurrences × 3 chars = 6, the top candidate
        let best = vocab
            .entries()
            .filter(|(t, _)| *t != DEFAULT_UNK)
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        assert_eq!(best.0, "▁xy");
    }

    #[test]
    fn seed_rejects_empty_corpus() {
        assert!(matches!(
            make_seed_vocab(&corpus(&[]), &TrainerConfig::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn seed_excludes_rare_characters_beyond_coverage() {
        // 'z' occurs once in 2000 chars: outside 0.9995 cumulative coverage.
        let mut lines: Vec<String> = Vec::new();
        for _ in 0..100 {
            lines.push("aaaaaaaaaaaaaaaaaaab".to_string());
        }
        lines.push("za".to_string());
        let c = SentenceCorpus::from_sentences(
            LanguageId::new("t").unwrap(),
            lines,
        );
        let vocab = make_seed_vocab(&c, &TrainerConfig::default()).unwrap();
        assert!(!vocab.contains("z"));
        assert!(vocab.contains("a"));
        let seg = vocab.viterbi_tokenize("za");
        assert!(seg.pieces()[0].is_unk);
    }

    #[test]
    fn em_shifts_mass_to_the_dominant_path() {
        // Uniform {a, b, ab} on "ab": posterior 3/4 for [ab] ⇒ new probs
        // ab=0.6, a=b=0.2 (hand forward-backward).
        let third = 1.0 / 3.0;
        let vocab = toy_vocab(&[("a", third), ("b", third), ("ab", third)]);
        let stepped = em_step(&corpus(&["ab"]), &vocab).unwrap();
        let p = |t: &str| stepped.log_prob(t).unwrap().exp();
        assert!((p("ab") - 0.6).abs() < 1e-9);
        assert!((p("a") - 0.2).abs() < 1e-9);
        assert!((p("b") - 0.2).abs() < 1e-9);
        assert!(stepped.is_normalized(1e-9));
    }

    #[test]
    fn em_fixed_point_is_stable() {
        let third = 1.0 / 3.0;
        let vocab = toy_vocab(&[("a", third), ("b", third), ("ab", third)]);
        let c = corpus(&["ab", "ab"]);
        let mut v = vocab;
        for _ in 0..60 {
            v = em_step(&c, &v).unwrap();
        }
        let again = em_step(&c, &v).unwrap();
        for ((t, lp), (t2, lp2)) in v.entries().zip(again.entries()) {
            assert_eq!(t, t2);
            assert!((lp - lp2).abs() < 1e-9, "token {t}: {lp} vs {lp2}");
        }
    }

    #[test]
    fn em_single_token_corpus_saturates() {
        let vocab = toy_vocab(&[("a", 0.5)]);
        let stepped = em_step(&corpus(&["a"]), &vocab).unwrap();
        assert!(stepped.log_prob("a").unwrap().abs() < 1e-12);
    }

    #[test]
    fn em_is_monotone_in_marginal_likelihood() {
        for seed in 0..20u64 {
            let (c, mut vocab) = random_corpus_and_vocab(seed);
            let mut prev = corpus_marginal_log_likelihood(&c, &vocab);
            for step in 0..10 {
                vocab = em_step(&c, &vocab).unwrap();
                let ll = corpus_marginal_log_likelihood(&c, &vocab);
                assert!(
                    ll >= prev - 1e-9,
                    "seed {seed} step {step}: {ll} < {prev}"
                );
                prev = ll;
            }
        }
    }

    pub(crate) fn random_corpus_and_vocab(seed: u64) -> (SentenceCorpus, UnigramVocab) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let alphabet = ['a', 'b', 'c'];
        let n_lines = rng.gen_range(3..8);
        let lines: Vec<String> = (0..n_lines)
            .map(|_| {
                let len = rng.gen_range(1..=8);
                (0..len)
                    .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
                    .collect()
            })
            .collect();
        let c = SentenceCorpus::from_sentences(LanguageId::new("r").unwrap(), lines);
        let config = TrainerConfig {
            max_token_len: rng.gen_range(2..=4),
            min_count: 1,
            character_coverage: 1.0,
            ..TrainerConfig::default()
        };
        let vocab = make_seed_vocab(&c, &config).unwrap();
        (c, vocab)
    }

    #[test]
    fn prune_drops_the_unused_token_first() {
        let quarter = 0.25;
        let vocab = toy_vocab(&[("a", quarter), ("b", quarter), ("ab", quarter), ("aa", quarter)]);
        let c = corpus(&["ab", "ab"]);
        let pruned = prune(&c, &vocab, 0.5).unwrap();
        assert!(!pruned.contains("aa"), "zero-frequency token should go first");
        assert!(pruned.contains("ab"));
        assert!(pruned.contains("a"));
        assert!(pruned.contains("b"));
        assert!(pruned.is_normalized(1e-9));
    }

    #[test]
    fn prune_high_keep_fraction_removes_at_most_one() {
        let vocab = toy_vocab(&[("a", 0.3), ("b", 0.3), ("ab", 0.2), ("ba", 0.2)]);
        let c = corpus(&["abba"]);
        let pruned = prune(&c, &vocab, 0.999).unwrap();
        assert!(vocab.len() - pruned.len() <= 1);
    }

    #[test]
    fn prune_never_removes_protected_entries() {
        let vocab = toy_vocab(&[("a", 0.3), ("b", 0.2), ("ab", 0.4), ("ba", 0.1)]);
        let c = corpus(&["ab"]);
        // Two removable tokens; keep ceil(0.01 * 2) = 1 of them.
        let pruned = prune(&c, &vocab, 0.01).unwrap();
        assert!(pruned.contains("a"));
        assert!(pruned.contains("b"));
        assert!(pruned.contains(DEFAULT_UNK));
        assert!(pruned.contains("ab"), "the used token survives");
        assert!(!pruned.contains("ba"), "the unused token goes first");
    }

    #[test]
    fn prune_rejects_bad_fraction() {
        let vocab = toy_vocab(&[("a", 0.5)]);
        let c = corpus(&["a"]);
        assert!(matches!(
            prune(&c, &vocab, 0.0),
            Err(Error::InvalidKeepFraction(_))
        ));
        assert!(matches!(
            prune(&c, &vocab, 1.0),
            Err(Error::InvalidKeepFraction(_))
        ));
    }

    #[test]
    fn train_reaches_exact_target_and_learns_the_pattern() {
        let lines: Vec<String> = std::iter::repeat("abab".to_string()).take(100).collect();
        let c = SentenceCorpus::from_sentences(LanguageId::new("t").unwrap(), lines);
        let config = TrainerConfig {
            min_count: 2,
            ..TrainerConfig::default()
        };
        let vocab = train_unigram(&c, 5, &config).unwrap();
        assert_eq!(vocab.len(), 5);
        assert!(vocab.is_normalized(1e-6));
        // The dominant token must cover the corpus in at most 2 pieces.
        let seg = vocab.viterbi_tokenize("abab");
        assert!(seg.len() <= 2, "got {:?}", seg.tokens().collect::<Vec<_>>());
    }

    #[test]
    fn train_with_target_beyond_seed_size_errors() {
        let c = corpus(&["ab", "ab"]);
        let err = train_unigram(&c, 100, &TrainerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::TargetUnreachable { .. }));
    }

    #[test]
    fn train_with_target_at_seed_size_skips_pruning() {
        let c = corpus(&["abc", "abc", "bca"]);
        let config = TrainerConfig {
            min_count: 2,
            max_token_len: 3,
            ..TrainerConfig::default()
        };
        let seed = make_seed_vocab(&c, &config).unwrap();
        let vocab = train_unigram(&c, seed.len(), &config).unwrap();
        assert_eq!(vocab.len(), seed.len());
        let seed_tokens: Vec<&str> = seed.entries().map(|(t, _)| t).collect();
        let out_tokens: Vec<&str> = vocab.entries().map(|(t, _)| t).collect();
        assert_eq!(seed_tokens, out_tokens);
    }

    #[test]
    fn train_degenerate_single_char_corpus() {
        let c = corpus(&["aaaaaaaa"]);
        let config = TrainerConfig {
            min_count: 2,
            ..TrainerConfig::default()
        };
        let vocab = train_unigram(&c, 2, &config).unwrap();
        assert_eq!(vocab.len(), 2);
        assert!(vocab.contains("a"));
        assert!(vocab.log_prob("a").unwrap().exp() > 0.99);
    }

    #[test]
    fn train_rejects_target_below_protected_set() {
        let c = corpus(&["abc"]);
        let config = TrainerConfig {
            min_count: 1,
            ..TrainerConfig::default()
        };
        assert!(matches!(
            train_unigram(&c, 2, &config),
            Err(Error::TargetTooSmall { .. })
        ));
    }

    #[test]
    fn train_is_deterministic() {
        let lines: Vec<String> = (0..50)
            .map(|i| if i % 3 == 0 { "mana mana" } else { "banana man" }.to_string())
            .collect();
        let c = SentenceCorpus::from_raw_lines(
            LanguageId::new("t").unwrap(),
            lines.iter().map(|s| s.as_str()),
        );
        let config = TrainerConfig::default();
        let a = train_unigram(&c, 12, &config).unwrap();
        let b = train_unigram(&c, 12, &config).unwrap();
        assert_eq!(a.to_tsv(), b.to_tsv());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]

            #[test]
            fn prune_respects_the_size_bound(seed in 0u64..200, kf in 0.05f64..0.95) {
                let (c, vocab) = random_corpus_and_vocab(seed);
                let pruned = prune(&c, &vocab, kf).unwrap();
                let protected = vocab.protected_len();
                let removable = vocab.len() - protected;
                let bound = protected + ((kf * removable as f64).ceil() as usize);
                prop_assert!(pruned.len() <= bound.max(protected));
                for &ch in vocab.required_chars() {
                    prop_assert!(pruned.contains(&ch.to_string()));
                }
                prop_assert!(pruned.contains(pruned.unk_token()));
            }
        }
    }
}
