//! Per-cluster vocabulary training and the final union-merge.
//!
//! Each cluster trains one vocabulary on the temperature-sampled
//! concatenation of its member corpora at its allocated capacity. Merging
//! takes the union of the cluster vocabularies: duplicate tokens keep their
//! maximum source log-probability, provenance records every contributing
//! cluster, and the merged distribution is renormalized. Special tokens (unk
//! and the word-boundary meta symbol, plus any configured reserved tokens)
//! are pinned to the leading indices so downstream consumers get stable ids.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterAssignment, ClusterId};
use crate::corpus::{
    draw_sample, derive_seed, temperature_sample, LanguageId, SentenceCorpus, META_SYMBOL,
};
use crate::error::{Error, Result};
use crate::ulm::{train_unigram, TrainerConfig, UnigramVocab};

/// Merged multilingual vocabulary with provenance and overlap accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct MultilingualVocab {
    tokens: Vec<String>,
    log_probs: Vec<f64>,
    index: HashMap<String, u32>,
    provenance: Vec<Vec<ClusterId>>,
    special_count: usize,
    overlap_count: u64,
    source_sizes: BTreeMap<ClusterId, u64>,
    unk_token: String,
}

#[derive(Debug, Clone, Default)]
pub struct MergeConfig {
    /// Reserved control tokens pinned after the unk and meta symbols.
    /// Tokens not present in any cluster vocabulary are injected with the
    /// minimum merged log-probability (and empty provenance).
    pub reserved_tokens: Vec<String>,
}

impl MultilingualVocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Entries in merged (index) order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.tokens
            .iter()
            .zip(&self.log_probs)
            .map(|(t, lp)| (t.as_str(), *lp))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn log_prob(&self, token: &str) -> Option<f64> {
        self.index.get(token).map(|&i| self.log_probs[i as usize])
    }

    /// Clusters that contributed the token; empty for injected reserved
    /// tokens.
    pub fn provenance(&self, token: &str) -> Option<&[ClusterId]> {
        self.index
            .get(token)
            .map(|&i| self.provenance[i as usize].as_slice())
    }

    /// Number of duplicate token slots across the source vocabularies:
    /// `sum(|V_c|) - |union|`.
    pub fn overlap_count(&self) -> u64 {
        self.overlap_count
    }

    pub fn source_sizes(&self) -> &BTreeMap<ClusterId, u64> {
        &self.source_sizes
    }

    pub fn unk_token(&self) -> &str {
        &self.unk_token
    }

    pub fn special_count(&self) -> usize {
        self.special_count
    }

    pub fn prob_sum(&self) -> f64 {
        self.log_probs.iter().map(|lp| lp.exp()).sum()
    }

    /// Fraction of each cluster's tokens found in no other cluster.
    pub fn unique_token_fractions(&self) -> BTreeMap<ClusterId, f64> {
        let mut unique: BTreeMap<ClusterId, u64> =
            self.source_sizes.keys().map(|&c| (c, 0u64)).collect();
        for prov in &self.provenance {
            if prov.len() == 1 {
                *unique.get_mut(&prov[0]).unwrap() += 1;
            }
        }
        unique
            .into_iter()
            .map(|(c, u)| (c, u as f64 / self.source_sizes[&c] as f64))
            .collect()
    }

    /// View as a unigram vocabulary for tokenization; single-codepoint
    /// tokens become the required character set.
    pub fn to_unigram(&self) -> Result<UnigramVocab> {
        let required: Vec<char> = self
            .tokens
            .iter()
            .filter_map(|t| {
                let mut cs = t.chars();
                match (cs.next(), cs.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                }
            })
            .collect();
        UnigramVocab::new(
            self.entries().map(|(t, lp)| (t.to_string(), lp)),
            required,
            self.unk_token.clone(),
        )
    }

    fn to_tsv(&self) -> String {
        let mut out = String::from("#ulm-vocab v1\n");
        for (token, lp) in self.entries() {
            out.push_str(&format!("{token}\t{lp:.16e}\n"));
        }
        out
    }
}

/// Builds one training corpus per cluster: temperature sampling over the
/// member corpora's line counts, a seeded draw from each member, then
/// concatenation in sorted member order. Per-member draw seeds derive from
/// `seed`, the cluster id, and the language id.
pub fn build_cluster_corpus(
    clusters: &ClusterAssignment,
    corpora: &BTreeMap<LanguageId, SentenceCorpus>,
    t: f64,
    lines: u64,
    seed: u64,
) -> Result<BTreeMap<ClusterId, SentenceCorpus>> {
    let mut out = BTreeMap::new();
    for cid in clusters.cluster_ids() {
        let members = clusters.members(cid);
        let mut line_counts: BTreeMap<LanguageId, u64> = BTreeMap::new();
        for lang in members {
            let corpus = corpora
                .get(lang)
                .ok_or_else(|| Error::MissingCorpus(lang.to_string()))?;
            line_counts.insert(lang.clone(), corpus.line_count());
        }
        let quotas = temperature_sample(&line_counts, t, lines, seed)?;
        let mut sentences = Vec::with_capacity(lines as usize);
        for lang in members {
            let drawn = draw_sample(
                &corpora[lang],
                quotas[lang],
                derive_seed(seed, &format!("cluster-{cid}-{lang}")),
            );
            sentences.extend(drawn.sentences().iter().cloned());
        }
        let corpus =
            SentenceCorpus::from_sentences(LanguageId::new(format!("c{cid}"))?, sentences);
        out.insert(cid, corpus);
    }
    Ok(out)
}

/// Trains one vocabulary per cluster at its allocated capacity.
pub fn train_cluster_vocabs(
    cluster_corpora: &BTreeMap<ClusterId, SentenceCorpus>,
    capacities: &BTreeMap<ClusterId, u64>,
    config: &TrainerConfig,
) -> Result<BTreeMap<ClusterId, UnigramVocab>> {
    let mut out = BTreeMap::new();
    for (&cid, corpus) in cluster_corpora {
        let capacity = capacities
            .get(&cid)
            .copied()
            .ok_or(Error::MissingClusterCapacity(cid))?;
        let vocab =
            train_unigram(corpus, capacity as usize, config).map_err(|e| Error::ClusterTraining {
                cluster: cid,
                source: Box::new(e),
            })?;
        out.insert(cid, vocab);
    }
    Ok(out)
}

/// Merges cluster vocabularies with the default configuration (no extra
/// reserved tokens).
pub fn merge_vocabs(
    cluster_vocabs: &BTreeMap<ClusterId, UnigramVocab>,
) -> Result<MultilingualVocab> {
    merge_vocabs_with(cluster_vocabs, &MergeConfig::default())
}

pub fn merge_vocabs_with(
    cluster_vocabs: &BTreeMap<ClusterId, UnigramVocab>,
    config: &MergeConfig,
) -> Result<MultilingualVocab> {
    if cluster_vocabs.is_empty() {
        return Err(Error::NoVocabs);
    }
    let unk_token = cluster_vocabs
        .values()
        .next()
        .unwrap()
        .unk_token()
        .to_string();
    for vocab in cluster_vocabs.values() {
        if vocab.unk_token() != unk_token {
            return Err(Error::InconsistentUnk {
                a: unk_token,
                b: vocab.unk_token().to_string(),
            });
        }
    }

    // Union keeping the maximum source log-probability per token.
    let mut union: BTreeMap<&str, (f64, Vec<ClusterId>)> = BTreeMap::new();
    let mut total_sources = 0u64;
    let mut source_sizes = BTreeMap::new();
    for (&cid, vocab) in cluster_vocabs {
        source_sizes.insert(cid, vocab.len() as u64);
        total_sources += vocab.len() as u64;
        for (token, lp) in vocab.entries() {
            union
                .entry(token)
                .and_modify(|(best, prov)| {
                    if lp > *best {
                        *best = lp;
                    }
                    prov.push(cid);
                })
                .or_insert_with(|| (lp, vec![cid]));
        }
    }
    let overlap_count = total_sources - union.len() as u64;
    let min_lp = union
        .values()
        .map(|(lp, _)| *lp)
        .fold(f64::INFINITY, f64::min);

    let mut specials: Vec<String> = vec![unk_token.clone()];
    let meta = META_SYMBOL.to_string();
    if union.contains_key(meta.as_str()) {
        specials.push(meta);
    }
    for reserved in &config.reserved_tokens {
        if !specials.contains(reserved) {
            specials.push(reserved.clone());
        }
    }

    let mut tokens: Vec<String> = Vec::with_capacity(union.len() + specials.len());
    let mut log_probs: Vec<f64> = Vec::new();
    let mut provenance: Vec<Vec<ClusterId>> = Vec::new();
    for special in &specials {
        match union.get(special.as_str()) {
            Some((lp, prov)) => {
                log_probs.push(*lp);
                provenance.push(prov.clone());
            }
            None => {
                log_probs.push(min_lp);
                provenance.push(Vec::new());
            }
        }
        tokens.push(special.clone());
    }
    let special_count = specials.len();

    let mut rest: Vec<(&str, f64, &Vec<ClusterId>)> = union
        .iter()
        .filter(|(t, _)| !specials.iter().any(|s| s == **t))
        .map(|(t, (lp, prov))| (*t, *lp, prov))
        .collect();
    rest.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    for (t, lp, prov) in rest {
        tokens.push(t.to_string());
        log_probs.push(lp);
        provenance.push(prov.clone());
    }

    // Renormalize the merged distribution.
    let max = log_probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = max + log_probs.iter().map(|lp| (lp - max).exp()).sum::<f64>().ln();
    for lp in &mut log_probs {
        *lp = (*lp - log_sum).min(0.0);
    }

    let index = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    Ok(MultilingualVocab {
        tokens,
        log_probs,
        index,
        provenance,
        special_count,
        overlap_count,
        source_sizes,
        unk_token,
    })
}

#[derive(Serialize, Deserialize)]
struct VocabSidecar {
    special_count: usize,
    overlap_count: u64,
    source_sizes: BTreeMap<ClusterId, u64>,
    /// Contributing cluster ids, indexed by token index in the TSV.
    provenance: Vec<Vec<ClusterId>>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    path.with_file_name(name)
}

/// Writes the merged vocabulary as a TSV (same format as unigram vocabulary
/// files, unk first) plus a `<file>.provenance.json` sidecar carrying the
/// per-index provenance and overlap accounting.
pub fn export_vocab(vocab: &MultilingualVocab, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, vocab.to_tsv()).map_err(|e| Error::io(path, e))?;
    let sidecar = VocabSidecar {
        special_count: vocab.special_count,
        overlap_count: vocab.overlap_count,
        source_sizes: vocab.source_sizes.clone(),
        provenance: vocab.provenance.clone(),
    };
    let sc_path = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar).expect("serializable");
    fs::write(&sc_path, json).map_err(|e| Error::io(sc_path, e))
}

/// Reads a vocabulary written by [`export_vocab`]; re-exporting the result
/// is byte-identical.
pub fn import_vocab(path: impl AsRef<Path>) -> Result<MultilingualVocab> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "#ulm-vocab v1")) => {}
        _ => return Err(Error::format(path, 1, "expected '#ulm-vocab v1' header")),
    }
    let mut tokens = Vec::new();
    let mut log_probs = Vec::new();
    let mut index: HashMap<String, u32> = HashMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let (token, lp) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, lineno, "expected token<TAB>log_prob"))?;
        let lp: f64 = lp
            .parse()
            .map_err(|_| Error::format(path, lineno, format!("bad log_prob {lp:?}")))?;
        if index.insert(token.to_string(), tokens.len() as u32).is_some() {
            return Err(Error::format(
                path,
                lineno,
                format!("duplicate token {token:?}"),
            ));
        }
        tokens.push(token.to_string());
        log_probs.push(lp);
    }
    if tokens.is_empty() {
        return Err(Error::format(path, 1, "vocabulary has no entries"));
    }

    let sc_path = sidecar_path(path);
    let json = fs::read_to_string(&sc_path).map_err(|e| Error::io(&sc_path, e))?;
    let sidecar: VocabSidecar = serde_json::from_str(&json)
        .map_err(|e| Error::format(&sc_path, e.line(), e.to_string()))?;
    if sidecar.provenance.len() != tokens.len() {
        return Err(Error::format(
            &sc_path,
            1,
            format!(
                "provenance covers {} tokens but the vocabulary has {}",
                sidecar.provenance.len(),
                tokens.len()
            ),
        ));
    }
    let unk_token = tokens[0].clone();
    Ok(MultilingualVocab {
        tokens,
        log_probs,
        index,
        provenance: sidecar.provenance,
        special_count: sidecar.special_count,
        overlap_count: sidecar.overlap_count,
        source_sizes: sidecar.source_sizes,
        unk_token,
    })
}
