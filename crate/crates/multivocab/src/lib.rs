//! Multilingual subword vocabulary construction.
//!
//! The pipeline trains a unigram LM vocabulary per language, represents each
//! language by a lexical fingerprint over the shared lexicon, clusters
//! lexically similar languages with K-Means, allocates vocabulary capacity
//! per language by greedy marginal ALP gain, trains one vocabulary per
//! cluster at its summed capacity, and merges the cluster vocabularies into
//! a single multilingual token table. An analysis layer reports fertility,
//! token-utilization curves, and cross-cluster overlap.
//!
//! All operations are deterministic given their inputs and seeds.

pub mod analysis;
pub mod assembly;
pub mod capacity;
pub mod clustering;
pub mod corpus;
pub mod error;
pub mod fingerprint;
pub mod ulm;

pub use analysis::{
    coverage_curve, fertility, overlap_report, relative_length_diff, utilization_at,
    CoverageCurve, OverlapReport, TokenizationStats,
};
pub use assembly::{
    build_cluster_corpus, export_vocab, import_vocab, merge_vocabs, merge_vocabs_with,
    train_cluster_vocabs, MergeConfig, MultilingualVocab,
};
pub use capacity::{
    build_alp_ladder, cluster_capacity, compute_alp, greedy_allocate, rescale, AllocationMeta,
    AlpLadder, CapacityAllocation,
};
pub use clustering::{
    best_of_restarts, kmeans, kmeans_traced, kmeans_with_options, ClusterAssignment, ClusterId,
    KMeansOptions, Metric,
};
pub use corpus::{
    count_token_frequencies, derive_seed, draw_sample, load_corpus, normalize_sentence,
    temperature_sample, FrequencyTable, LanguageId, SentenceCorpus, META_SYMBOL,
};
pub use error::{Error, Result};
pub use fingerprint::{
    build_fingerprint, build_shared_lexicon, read_fingerprints, write_fingerprints,
    FingerprintMode, LexicalFingerprint, SharedLexicon,
};
pub use ulm::{
    corpus_marginal_log_likelihood, em_step, make_seed_vocab, prune, train_unigram, Piece,
    Segmentation, TrainerConfig, UnigramVocab, DEFAULT_UNK,
};
