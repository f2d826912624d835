//! Vocabulary capacity allocation driven by average log probability (ALP).
//!
//! ALP scores how well a vocabulary represents a language: the per-sentence
//! average of summed token log unigram probabilities, with the unigram
//! distribution counted on the tokenized corpus itself. Ladders record ALP at
//! several trained vocabulary sizes; a greedy loop then assigns capacity
//! chunks to the language with the largest marginal ALP gain.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterAssignment, ClusterId};
use crate::corpus::{count_token_frequencies, LanguageId, SentenceCorpus};
use crate::error::{Error, Result};
use crate::ulm::{train_unigram, TrainerConfig, UnigramVocab};

/// Average log probability of the corpus under the vocabulary (Eq. ALP):
/// tokenize every sentence, count the unigram distribution over the
/// resulting tokens, then average each sentence's summed token log
/// probability over the number of sentences. Unk pieces contribute through
/// their counted frequency like any other token.
pub fn compute_alp(corpus: &SentenceCorpus, vocab: &UnigramVocab) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let freq = count_token_frequencies(corpus, vocab);
    let total = freq.total() as f64;
    let mut sum = 0.0f64;
    for (sentence, mult) in corpus.sentence_counts() {
        let seg = vocab.viterbi_tokenize(sentence);
        let sentence_lp: f64 = seg
            .pieces()
            .iter()
            .map(|p| (freq.count(&p.token) as f64 / total).ln())
            .sum();
        sum += mult as f64 * sentence_lp;
    }
    Ok(sum / corpus.line_count() as f64)
}

/// ALP measured at increasing trained vocabulary sizes for one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlpLadder {
    language: LanguageId,
    points: Vec<(u32, f64)>,
}

impl AlpLadder {
    pub fn new(language: LanguageId, points: Vec<(u32, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyLadder {
                language: language.to_string(),
            });
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::LadderNotIncreasing);
        }
        if points.iter().any(|(_, alp)| !alp.is_finite()) {
            return Err(Error::EmptyLadder {
                language: language.to_string(),
            });
        }
        Ok(AlpLadder { language, points })
    }

    pub fn language(&self) -> &LanguageId {
        &self.language
    }

    pub fn points(&self) -> &[(u32, f64)] {
        &self.points
    }

    pub fn min_size(&self) -> u64 {
        self.points[0].0 as u64
    }

    pub fn max_size(&self) -> u64 {
        self.points[self.points.len() - 1].0 as u64
    }

    /// ALP at `size`, linearly interpolated between ladder points. `None`
    /// outside the covered range: extrapolation is refused.
    pub fn alp_at(&self, size: u64) -> Option<f64> {
        if size < self.min_size() || size > self.max_size() {
            return None;
        }
        let mut prev = self.points[0];
        for &(s, alp) in &self.points {
            if size == s as u64 {
                return Some(alp);
            }
            if (s as u64) > size {
                let (s0, a0) = (prev.0 as f64, prev.1);
                let (s1, a1) = (s as f64, alp);
                let t = (size as f64 - s0) / (s1 - s0);
                return Some(a0 + t * (a1 - a0));
            }
            prev = (s, alp);
        }
        unreachable!("size within [min, max] always brackets a point")
    }
}

/// Trains a vocabulary at each requested size and records its ALP.
pub fn build_alp_ladder(
    corpus: &SentenceCorpus,
    sizes: &[u32],
    config: &TrainerConfig,
) -> Result<AlpLadder> {
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::LadderNotIncreasing);
    }
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let vocab = train_unigram(corpus, size as usize, config).map_err(|e| {
            Error::LadderTraining {
                size,
                source: Box::new(e),
            }
        })?;
        let alp = compute_alp(corpus, &vocab).map_err(|e| Error::LadderTraining {
            size,
            source: Box::new(e),
        })?;
        points.push((size, alp));
    }
    AlpLadder::new(corpus.language().clone(), points)
}

/// Per-language token budgets summing exactly to a total capacity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapacityAllocation {
    budgets: BTreeMap<LanguageId, u64>,
    total: u64,
}

impl CapacityAllocation {
    pub fn from_budgets(budgets: BTreeMap<LanguageId, u64>) -> Result<Self> {
        if budgets.is_empty() {
            return Err(Error::NoLanguages);
        }
        let total = budgets.values().sum();
        Ok(CapacityAllocation { budgets, total })
    }

    pub fn budgets(&self) -> &BTreeMap<LanguageId, u64> {
        &self.budgets
    }

    pub fn budget(&self, language: &LanguageId) -> Option<u64> {
        self.budgets.get(language).copied()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.budgets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.budgets.is_empty()
    }

    /// Serializes as TSV `language<TAB>budget`, sorted by language.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (lang, budget) in &self.budgets {
            out.push_str(&format!("{lang}\t{budget}\n"));
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
        let mut budgets = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let (lang, budget) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, lineno, "expected language<TAB>budget"))?;
            let budget: u64 = budget
                .parse()
                .map_err(|_| Error::format(path, lineno, format!("bad budget {budget:?}")))?;
            if budgets.insert(LanguageId::new(lang)?, budget).is_some() {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("duplicate language {lang:?}"),
                ));
            }
        }
        CapacityAllocation::from_budgets(budgets)
    }
}

/// Metadata stored beside an allocation table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationMeta {
    pub total: u64,
    pub chunk: u64,
    pub floor: u64,
    pub seed: u64,
}

/// Starts every language at `min_floor` and repeatedly grants `chunk` tokens
/// (the last grant may be smaller) to the language with the largest marginal
/// ALP gain under linear ladder interpolation. Gain ties resolve to the
/// lexicographically smallest language id. A language whose ladder cannot
/// cover its next grant becomes ineligible rather than extrapolated; if no
/// language remains eligible before the total is spent, the allocation
/// fails.
pub fn greedy_allocate(
    ladders: &[AlpLadder],
    total: u64,
    chunk: u64,
    min_floor: u64,
) -> Result<CapacityAllocation> {
    if ladders.is_empty() {
        return Err(Error::NoLanguages);
    }
    if chunk == 0 {
        return Err(Error::ZeroChunk);
    }
    let n = ladders.len() as u64;
    if total < min_floor * n {
        return Err(Error::InfeasibleTotal {
            total,
            floor: min_floor,
            languages: ladders.len(),
        });
    }
    let mut sorted: Vec<&AlpLadder> = ladders.iter().collect();
    sorted.sort_by(|a, b| a.language().cmp(b.language()));
    for pair in sorted.windows(2) {
        if pair[0].language() == pair[1].language() {
            return Err(Error::DuplicateLanguage(pair[0].language().to_string()));
        }
    }
    for ladder in &sorted {
        if ladder.alp_at(min_floor).is_none() {
            return Err(Error::LadderRange {
                language: ladder.language().to_string(),
                needed: min_floor,
                low: ladder.min_size(),
                high: ladder.max_size(),
            });
        }
    }

    let mut budgets: Vec<u64> = vec![min_floor; sorted.len()];
    let mut remaining = total - min_floor * n;
    while remaining > 0 {
        let grant = chunk.min(remaining);
        let mut best: Option<(f64, usize)> = None;
        for (i, ladder) in sorted.iter().enumerate() {
            let here = match ladder.alp_at(budgets[i]) {
                Some(v) => v,
                None => continue,
            };
            let there = match ladder.alp_at(budgets[i] + grant) {
                Some(v) => v,
                None => continue,
            };
            let gain = there - here;
            let better = match best {
                None => true,
                Some((g, _)) => gain > g,
            };
            if better {
                best = Some((gain, i));
            }
        }
        match best {
            Some((_, i)) => {
                budgets[i] += grant;
                remaining -= grant;
            }
            None => return Err(Error::AllocationStuck),
        }
    }

    let budgets: BTreeMap<LanguageId, u64> = sorted
        .iter()
        .zip(budgets)
        .map(|(l, b)| (l.language().clone(), b))
        .collect();
    CapacityAllocation::from_budgets(budgets)
}

/// Rescales budgets to a new total by proportional largest-remainder
/// rounding, then clamps every language up to `min_floor`, taking the
/// deficit proportionally from the above-floor languages. The result always
/// sums exactly to `new_total`.
pub fn rescale(
    allocation: &CapacityAllocation,
    new_total: u64,
    min_floor: u64,
) -> Result<CapacityAllocation> {
    let n = allocation.len() as u64;
    if new_total < min_floor * n {
        return Err(Error::InfeasibleTotal {
            total: new_total,
            floor: min_floor,
            languages: allocation.len(),
        });
    }
    let langs: Vec<&LanguageId> = allocation.budgets.keys().collect();
    let old: Vec<u64> = allocation.budgets.values().copied().collect();
    let old_total = allocation.total as f64;

    // Proportional split with largest-remainder rounding.
    let mut scaled: Vec<u64> = Vec::with_capacity(langs.len());
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(langs.len());
    let mut assigned = 0u64;
    for (i, &b) in old.iter().enumerate() {
        let ideal = b as f64 * new_total as f64 / old_total;
        let base = ideal.floor() as u64;
        scaled.push(base);
        fracs.push((i, ideal - base as f64));
        assigned += base;
    }
    fracs.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| langs[a.0].cmp(langs[b.0]))
    });
    let mut leftover = new_total.saturating_sub(assigned);
    let mut pick = 0usize;
    while leftover > 0 {
        let (i, _) = fracs[pick % fracs.len()];
        scaled[i] += 1;
        leftover -= 1;
        pick += 1;
    }

    // Clamp to the floor; redistribute the deficit from above-floor budgets
    // proportionally to their excess.
    let mut deficit = 0u64;
    for b in &mut scaled {
        if *b < min_floor {
            deficit += min_floor - *b;
            *b = min_floor;
        }
    }
    while deficit > 0 {
        let excess: Vec<u64> = scaled.iter().map(|&b| b.saturating_sub(min_floor)).collect();
        let total_excess: u64 = excess.iter().sum();
        debug_assert!(total_excess >= deficit, "guaranteed by the feasibility check");
        let mut taken = 0u64;
        let mut take_fracs: Vec<(usize, f64)> = Vec::new();
        for (i, &e) in excess.iter().enumerate() {
            if e == 0 {
                continue;
            }
            let ideal = deficit as f64 * e as f64 / total_excess as f64;
            let base = (ideal.floor() as u64).min(e);
            scaled[i] -= base;
            taken += base;
            if ideal - base as f64 > 0.0 && base < e {
                take_fracs.push((i, ideal - base as f64));
            }
        }
        take_fracs.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| langs[a.0].cmp(langs[b.0]))
        });
        let mut rest = deficit - taken;
        for (i, _) in take_fracs {
            if rest == 0 {
                break;
            }
            scaled[i] -= 1;
            rest -= 1;
        }
        deficit = rest;
    }

    let budgets: BTreeMap<LanguageId, u64> = langs
        .into_iter()
        .cloned()
        .zip(scaled)
        .collect();
    CapacityAllocation::from_budgets(budgets)
}

/// Sums member budgets per cluster. Every allocated language must belong to
/// exactly one cluster; the per-cluster capacities then sum to the
/// allocation total.
pub fn cluster_capacity(
    allocation: &CapacityAllocation,
    clusters: &ClusterAssignment,
) -> Result<BTreeMap<ClusterId, u64>> {
    let mut capacities: BTreeMap<ClusterId, u64> = clusters
        .cluster_ids()
        .map(|id| (id, 0u64))
        .collect();
    for (lang, &budget) in &allocation.budgets {
        let cid = clusters
            .cluster_of(lang)
            .ok_or_else(|| Error::LanguageNotClustered(lang.to_string()))?;
        *capacities.get_mut(&cid).unwrap() += budget;
    }
    Ok(capacities)
}

/// Writes all ladders as one JSON document keyed by language.
pub fn save_ladders(ladders: &[AlpLadder], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let map: BTreeMap<&LanguageId, &Vec<(u32, f64)>> = ladders
        .iter()
        .map(|l| (l.language(), &l.points))
        .collect();
    let json = serde_json::to_string_pretty(&map).expect("serializable");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_ladders(path: impl AsRef<Path>) -> Result<Vec<AlpLadder>> {
    let path = path.as_ref();
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, Vec<(u32, f64)>> = serde_json::from_str(&json)
        .map_err(|e| Error::format(path, e.line(), e.to_string()))?;
    map.into_iter()
        .map(|(lang, points)| AlpLadder::new(LanguageId::new(lang)?, points))
        .collect()
}
