//! The pipeline stages. Stages communicate only through files in the
//! workdir; each run validates its upstream artifacts against the manifest,
//! writes its outputs, and appends a manifest record.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use multivocab::{
    analysis, assembly, best_of_restarts, build_alp_ladder, build_cluster_corpus,
    build_fingerprint, build_shared_lexicon, capacity, cluster_capacity, count_token_frequencies,
    derive_seed, draw_sample, greedy_allocate, load_corpus, read_fingerprints, temperature_sample,
    train_cluster_vocabs, train_unigram, write_fingerprints, AllocationMeta, CapacityAllocation,
    ClusterAssignment, ClusterId, LanguageId, MergeConfig, SentenceCorpus, UnigramVocab,
};

use crate::config::PipelineConfig;
use crate::manifest::{self, hash_file, manifest_key, Manifest, StageRecord};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sample,
    TrainLangs,
    Fingerprint,
    Cluster,
    Ladder,
    Allocate,
    TrainClusters,
    Merge,
    Analyze,
}

pub const ALL_STAGES: [Stage; 9] = [
    Stage::Sample,
    Stage::TrainLangs,
    Stage::Fingerprint,
    Stage::Cluster,
    Stage::Ladder,
    Stage::Allocate,
    Stage::TrainClusters,
    Stage::Merge,
    Stage::Analyze,
];

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Sample => "sample",
            Stage::TrainLangs => "train-langs",
            Stage::Fingerprint => "fingerprint",
            Stage::Cluster => "cluster",
            Stage::Ladder => "ladder",
            Stage::Allocate => "allocate",
            Stage::TrainClusters => "train-clusters",
            Stage::Merge => "merge",
            Stage::Analyze => "analyze",
        };
        f.write_str(name)
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sample" => Ok(Stage::Sample),
            "train-langs" => Ok(Stage::TrainLangs),
            "fingerprint" => Ok(Stage::Fingerprint),
            "cluster" => Ok(Stage::Cluster),
            "ladder" => Ok(Stage::Ladder),
            "allocate" => Ok(Stage::Allocate),
            "train-clusters" => Ok(Stage::TrainClusters),
            "merge" => Ok(Stage::Merge),
            "analyze" => Ok(Stage::Analyze),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

impl Stage {
    /// Which stage produces a workdir-relative artifact (for error hints).
    pub fn producer_of(rel: &str) -> Option<Stage> {
        if rel.starts_with("sampled/") {
            Some(Stage::Sample)
        } else if rel.starts_with("vocabs/") || rel.starts_with("freqs/") {
            Some(Stage::TrainLangs)
        } else if rel == "fingerprints.tsv" {
            Some(Stage::Fingerprint)
        } else if rel.starts_with("clusters.") {
            Some(Stage::Cluster)
        } else if rel == "ladders.json" {
            Some(Stage::Ladder)
        } else if rel.starts_with("allocation.") {
            Some(Stage::Allocate)
        } else if rel.starts_with("cluster_corpora/") || rel.starts_with("cluster_vocabs/") {
            Some(Stage::TrainClusters)
        } else if rel.starts_with("final.vocab.tsv") || rel == "merge.meta.json" {
            Some(Stage::Merge)
        } else if rel.starts_with("reports/") {
            Some(Stage::Analyze)
        } else {
            None
        }
    }
}

/// Everything a stage needs to run.
pub struct StageContext<'a> {
    pub config: &'a PipelineConfig,
    pub workdir: &'a Path,
    pub workers: usize,
}

mod paths {
    use super::*;

    pub fn sampled(workdir: &Path, code: &str) -> PathBuf {
        workdir.join("sampled").join(format!("{code}.txt"))
    }
    pub fn vocab(workdir: &Path, code: &str) -> PathBuf {
        workdir.join("vocabs").join(format!("{code}.vocab.tsv"))
    }
    pub fn freq(workdir: &Path, code: &str) -> PathBuf {
        workdir.join("freqs").join(format!("{code}.freq.tsv"))
    }
    pub fn fingerprints(workdir: &Path) -> PathBuf {
        workdir.join("fingerprints.tsv")
    }
    pub fn clusters_tsv(workdir: &Path) -> PathBuf {
        workdir.join("clusters.tsv")
    }
    pub fn clusters_meta(workdir: &Path) -> PathBuf {
        workdir.join("clusters.meta.json")
    }
    pub fn ladders(workdir: &Path) -> PathBuf {
        workdir.join("ladders.json")
    }
    pub fn allocation_tsv(workdir: &Path) -> PathBuf {
        workdir.join("allocation.tsv")
    }
    pub fn allocation_meta(workdir: &Path) -> PathBuf {
        workdir.join("allocation.meta.json")
    }
    pub fn cluster_corpus(workdir: &Path, cid: ClusterId) -> PathBuf {
        workdir.join("cluster_corpora").join(format!("{cid}.txt"))
    }
    pub fn cluster_vocab(workdir: &Path, cid: ClusterId) -> PathBuf {
        workdir
            .join("cluster_vocabs")
            .join(format!("{cid}.vocab.tsv"))
    }
    pub fn final_vocab(workdir: &Path) -> PathBuf {
        workdir.join("final.vocab.tsv")
    }
    pub fn final_provenance(workdir: &Path) -> PathBuf {
        workdir.join("final.vocab.tsv.provenance.json")
    }
    pub fn merge_meta(workdir: &Path) -> PathBuf {
        workdir.join("merge.meta.json")
    }
    pub fn report(workdir: &Path, name: &str) -> PathBuf {
        workdir.join("reports").join(name)
    }
}

/// Runs one stage end to end: upstream validation, the stage body, output
/// hashing, and the manifest record. Returns the record (with `noop` set
/// when every output was already present and byte-identical).
pub fn run_stage(stage: Stage, ctx: &StageContext) -> Result<StageRecord, CliError> {
    fs::create_dir_all(ctx.workdir)
        .map_err(|e| CliError::Data(format!("cannot create workdir: {e}")))?;
    let mut manifest = Manifest::load(ctx.workdir)?;

    let inputs = stage_inputs(stage, ctx)?;
    let input_hashes = manifest::verify_inputs(&manifest, ctx.workdir, &inputs)?;

    let expected = expected_outputs(stage, ctx)?;
    let before: BTreeMap<String, Option<String>> = expected
        .iter()
        .map(|p| {
            let key = manifest_key(ctx.workdir, p);
            let hash = p.is_file().then(|| hash_file(p)).transpose()?;
            Ok((key, hash))
        })
        .collect::<Result<_, CliError>>()?;

    let outputs = match stage {
        Stage::Sample => stage_sample(ctx)?,
        Stage::TrainLangs => stage_train_langs(ctx)?,
        Stage::Fingerprint => stage_fingerprint(ctx)?,
        Stage::Cluster => stage_cluster(ctx)?,
        Stage::Ladder => stage_ladder(ctx)?,
        Stage::Allocate => stage_allocate(ctx)?,
        Stage::TrainClusters => stage_train_clusters(ctx)?,
        Stage::Merge => stage_merge(ctx)?,
        Stage::Analyze => stage_analyze(ctx)?,
    };

    let mut output_hashes = BTreeMap::new();
    let mut noop = true;
    for path in &outputs {
        let key = manifest_key(ctx.workdir, path);
        let hash = hash_file(path)?;
        match before.get(&key) {
            Some(Some(prev)) if *prev == hash => {}
            _ => noop = false,
        }
        output_hashes.insert(key, hash);
    }

    let record = StageRecord {
        stage: stage.to_string(),
        seed: ctx.config.seed,
        config_hash: ctx.config.hash(),
        inputs: input_hashes,
        outputs: output_hashes,
        noop,
    };
    manifest.records.push(record.clone());
    manifest.save(ctx.workdir)?;
    Ok(record)
}

fn stage_inputs(stage: Stage, ctx: &StageContext) -> Result<Vec<PathBuf>, CliError> {
    let w = ctx.workdir;
    let langs = &ctx.config.languages;
    Ok(match stage {
        Stage::Sample => langs.iter().map(|l| l.corpus.clone()).collect(),
        Stage::TrainLangs | Stage::Ladder => {
            langs.iter().map(|l| paths::sampled(w, &l.code)).collect()
        }
        Stage::Fingerprint => langs
            .iter()
            .flat_map(|l| [paths::vocab(w, &l.code), paths::freq(w, &l.code)])
            .collect(),
        Stage::Cluster => vec![paths::fingerprints(w)],
        Stage::Allocate => vec![paths::ladders(w)],
        Stage::TrainClusters => {
            let mut inputs = vec![
                paths::clusters_tsv(w),
                paths::clusters_meta(w),
                paths::allocation_tsv(w),
            ];
            inputs.extend(langs.iter().map(|l| paths::sampled(w, &l.code)));
            inputs
        }
        Stage::Merge => {
            let mut inputs = vec![paths::clusters_tsv(w), paths::clusters_meta(w)];
            inputs.extend(cluster_ids(ctx)?.into_iter().map(|c| paths::cluster_vocab(w, c)));
            inputs
        }
        Stage::Analyze => {
            let mut inputs = vec![paths::final_vocab(w), paths::final_provenance(w)];
            inputs.extend(langs.iter().map(|l| paths::sampled(w, &l.code)));
            inputs.push(paths::clusters_tsv(w));
            inputs.push(paths::clusters_meta(w));
            inputs.extend(cluster_ids(ctx)?.into_iter().map(|c| paths::cluster_vocab(w, c)));
            inputs
        }
    })
}

/// Output paths a stage is expected to produce (used for noop detection).
fn expected_outputs(stage: Stage, ctx: &StageContext) -> Result<Vec<PathBuf>, CliError> {
    let w = ctx.workdir;
    let langs = &ctx.config.languages;
    Ok(match stage {
        Stage::Sample => langs.iter().map(|l| paths::sampled(w, &l.code)).collect(),
        Stage::TrainLangs => langs
            .iter()
            .flat_map(|l| [paths::vocab(w, &l.code), paths::freq(w, &l.code)])
            .collect(),
        Stage::Fingerprint => vec![paths::fingerprints(w)],
        Stage::Cluster => vec![paths::clusters_tsv(w), paths::clusters_meta(w)],
        Stage::Ladder => vec![paths::ladders(w)],
        Stage::Allocate => vec![paths::allocation_tsv(w), paths::allocation_meta(w)],
        Stage::TrainClusters => {
            let mut outputs = Vec::new();
            for cid in cluster_ids(ctx)? {
                outputs.push(paths::cluster_corpus(w, cid));
                outputs.push(paths::cluster_vocab(w, cid));
            }
            outputs
        }
        Stage::Merge => vec![
            paths::final_vocab(w),
            paths::final_provenance(w),
            paths::merge_meta(w),
        ],
        Stage::Analyze => {
            let mut outputs = vec![
                paths::report(w, "fertility.csv"),
                paths::report(w, "coverage.csv"),
                paths::report(w, "overlap.csv"),
                paths::report(w, "summary.json"),
            ];
            if ctx.config.analysis.baseline_vocab.is_some() {
                outputs.push(paths::report(w, "relative_length.csv"));
            }
            outputs
        }
    })
}

fn cluster_ids(ctx: &StageContext) -> Result<Vec<ClusterId>, CliError> {
    let tsv = paths::clusters_tsv(ctx.workdir);
    if !tsv.is_file() {
        // The ordering guard in verify_inputs reports this precisely.
        return Ok((0..ctx.config.k as u32).map(ClusterId).collect());
    }
    let assignment =
        ClusterAssignment::load(&tsv, paths::clusters_meta(ctx.workdir)).map_err(to_data)?;
    Ok(assignment.cluster_ids().collect())
}

fn to_data(e: multivocab::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    Ok(())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Data(format!("cannot build worker pool: {e}")))
}

fn language_id(code: &str) -> Result<LanguageId, CliError> {
    LanguageId::new(code).map_err(to_data)
}

fn load_sampled(ctx: &StageContext) -> Result<BTreeMap<LanguageId, SentenceCorpus>, CliError> {
    let mut corpora = BTreeMap::new();
    for spec in &ctx.config.languages {
        let lang = language_id(&spec.code)?;
        let corpus =
            load_corpus(paths::sampled(ctx.workdir, &spec.code), lang.clone()).map_err(to_data)?;
        corpora.insert(lang, corpus);
    }
    Ok(corpora)
}

fn stage_sample(ctx: &StageContext) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ctx.config;
    let mut corpora = BTreeMap::new();
    let mut line_counts = BTreeMap::new();
    for spec in &cfg.languages {
        let lang = language_id(&spec.code)?;
        let corpus = load_corpus(&spec.corpus, lang.clone()).map_err(to_data)?;
        line_counts.insert(lang.clone(), corpus.line_count());
        corpora.insert(lang, corpus);
    }
    let quotas = temperature_sample(&line_counts, cfg.temperature, cfg.total_lines, cfg.seed)
        .map_err(to_data)?;
    let mut outputs = Vec::new();
    for (lang, corpus) in &corpora {
        let quota = quotas[lang];
        let sampled = draw_sample(corpus, quota, derive_seed(cfg.seed, &format!("sample-{lang}")));
        let path = paths::sampled(ctx.workdir, lang.as_str());
        ensure_parent(&path)?;
        sampled.save(&path).map_err(to_data)?;
        outputs.push(path);
    }
    Ok(outputs)
}

fn stage_train_langs(ctx: &StageContext) -> Result<Vec<PathBuf>, CliError> {
    let corpora = load_sampled(ctx)?;
    let trainer = ctx.config.trainer.to_trainer_config();
    let target = ctx.config.per_language_vocab_size as usize;
    let jobs: Vec<(&LanguageId, &SentenceCorpus)> = corpora.iter().collect();
    let trained: Vec<(String, UnigramVocab)> = pool(ctx.workers)?.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|(lang, corpus)| {
                let vocab = train_unigram(corpus, target, &trainer)
                    .map_err(|e| CliError::Data(format!("training {lang}: {e}")))?;
                Ok((lang.to_string(), vocab))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let mut outputs = Vec::new();
    for (code, vocab) in trained {
        let vocab_path = paths::vocab(ctx.workdir, &code);
        ensure_parent(&vocab_path)?;
        vocab.save(&vocab_path).map_err(to_data)?;
        let lang = language_id(&code)?;
        let freq = count_token_frequencies(&corpora[&lang], &vocab);
        let freq_path = paths::freq(ctx.workdir, &code);
        ensure_parent(&freq_path)?;
        freq.save(&freq_path).map_err(to_data)?;
        outputs.push(vocab_path);
        outputs.push(freq_path);
    }
    Ok(outputs)
}

fn stage_fingerprint(ctx: &StageContext) -> Result<Vec<PathBuf>, CliError> {
    let mut vocabs = BTreeMap::new();
    let mut freqs = BTreeMap::new();
    for spec in &ctx.config.languages {
        let lang = language_id(&spec.code)?;
        vocabs.insert(
            lang.clone(),
            UnigramVocab::load(paths::vocab(ctx.workdir, &spec.code)).map_err(to_data)?,
        );
        freqs.insert(
            lang,
            multivocab::FrequencyTable::load(paths::freq(ctx.workdir, &spec.code))
                .map_err(to_data)?,
        );
    }
    let lexicon = build_shared_lexicon(vocabs.values()).map_err(to_data)?;
    let mode = ctx.config.mode();
    let mut fingerprints = Vec::new();
    for (lang, vocab) in &vocabs {
        fingerprints.push(
            build_fingerprint(lang.clone(), vocab, &freqs[lang], &lexicon, mode)
                .map_err(to_data)?,
        );
    }
    let path = paths::fingerprints(ctx.workdir);
    write_fingerprints(&fingerprints, mode, &path).map_err(to_data)?;
    Ok(vec![path])
}

fn stage_cluster(ctx: &StageContext) -> Result<Vec<PathBuf>, CliError> {
    let (fingerprints, _) =
        read_fingerprints(paths::fingerprints(ctx.workdir)).map_err(to_data)?;
    let seeds: Vec<u64> = (0..ctx.config.kmeans_restarts)
        .map(|i| derive_seed(ctx.config.seed, &format!("kmeans-{i}")))
        .collect();
    let assignment = best_of_restarts(
        &fingerprints,
        ctx.config.k,
        &seeds,
        ctx.config.kmeans_max_iters,
    )
    .map_err(to_data)?;
    let tsv = paths::clusters_tsv(ctx.workdir);
    let meta = paths::clusters_meta(ctx.workdir);
    assignment.save(&tsv, &meta).map_err(to_data)?;
    Ok(vec![tsv, meta])
}

fn stage_ladder(ctx: &StageContext) -> Result<Vec<PathBuf>, CliError> {
    let corpora = load_sampled(ctx)?;
    let trainer = ctx.config.trainer.to_trainer_config();
    let sizes = &ctx.config.ladder_sizes;
    let jobs: Vec<&SentenceCorpus> = corpora.values().collect();
    let ladders = pool(ctx.workers)?.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|corpus| {
                build_alp_ladder(corpus, sizes, &trainer).map_err(|e| {
                    CliError::Data(format!("ladder for {}: {e}", corpus.language()))
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let path = paths::ladders(ctx.workdir);
    capacity::save_ladders(&ladders, &path).map_err(to_data)?;
    Ok(vec![path])
}

fn stage_allocate(ctx: &StageContext) -> Result<Vec<PathBuf>, CliError> {
    let ladders = capacity::load_ladders(paths::ladders(ctx.workdir)).map_err(to_data)?;
    let allocation = greedy_allocate(
        &ladders,
        ctx.config.capacity,
        ctx.config.chunk,
        ctx.config.floor,
    )
    .map_err(to_data)?;
    let tsv = paths::allocation_tsv(ctx.workdir);
    allocation.save(&tsv).map_err(to_data)?;
    let meta = AllocationMeta {
        total: allocation.total(),
        chunk: ctx.config.chunk,
        floor: ctx.config.floor,
        seed: ctx.config.seed,
    };
    let meta_path = paths::allocation_meta(ctx.workdir);
    let json = serde_json::to_string_pretty(&meta).expect("serializable");
    fs::write(&meta_path, json)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", meta_path.display())))?;
    Ok(vec![tsv, meta_path])
}

fn load_clusters(ctx: &StageContext) -> Result<ClusterAssignment, CliError> {
    ClusterAssignment::load(
        paths::clusters_tsv(ctx.workdir),
        paths::clusters_meta(ctx.workdir),
    )
    .map_err(to_data)
}

fn stage_train_clusters(ctx: &StageContext) -> Result<Vec<PathBuf>, CliError> {
    let clusters = load_clusters(ctx)?;
    let allocation =
        CapacityAllocation::load(paths::allocation_tsv(ctx.workdir)).map_err(to_data)?;
    let capacities = cluster_capacity(&allocation, &clusters).map_err(to_data)?;
    let corpora = load_sampled(ctx)?;
    let lines = ctx.config.cluster_lines.unwrap_or_else(|| {
        clusters
            .clusters()
            .iter()
            .map(|members| {
                members
                    .iter()
                    .map(|l| corpora.get(l).map_or(0, |c| c.line_count()))
                    .sum::<u64>()
            })
            .max()
            .unwrap_or(1)
            .max(1)
    });
    let cluster_corpora = build_cluster_corpus(
        &clusters,
        &corpora,
        ctx.config.temperature,
        lines,
        derive_seed(ctx.config.seed, "cluster-corpus"),
    )
    .map_err(to_data)?;

    let mut outputs = Vec::new();
    for (cid, corpus) in &cluster_corpora {
        let path = paths::cluster_corpus(ctx.workdir, *cid);
        ensure_parent(&path)?;
        corpus.save(&path).map_err(to_data)?;
        outputs.push(path);
    }

    let trainer = ctx.config.trainer.to_trainer_config();
    let jobs: Vec<(&ClusterId, &SentenceCorpus)> = cluster_corpora.iter().collect();
    let trained: Vec<(ClusterId, UnigramVocab)> = pool(ctx.workers)?.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|(cid, corpus)| {
                let capacities_ref = &capacities;
                let single: BTreeMap<ClusterId, SentenceCorpus> =
                    [(**cid, (*corpus).clone())].into_iter().collect();
                let mut out = train_cluster_vocabs(&single, capacities_ref, &trainer)
                    .map_err(|e| CliError::Data(e.to_string()))?;
                Ok((**cid, out.remove(cid).expect("trained")))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    for (cid, vocab) in trained {
        let path = paths::cluster_vocab(ctx.workdir, cid);
        ensure_parent(&path)?;
        vocab.save(&path).map_err(to_data)?;
        outputs.push(path);
    }
    Ok(outputs)
}

#[derive(Serialize)]
struct MergeMeta {
    final_size: usize,
    overlap_count: u64,
    source_sizes: BTreeMap<String, u64>,
    unique_fraction: BTreeMap<String, f64>,
}

fn stage_merge(ctx: &StageContext) -> Result<Vec<PathBuf>, CliError> {
    let clusters = load_clusters(ctx)?;
    let mut cluster_vocabs = BTreeMap::new();
    for cid in clusters.cluster_ids() {
        let vocab =
            UnigramVocab::load(paths::cluster_vocab(ctx.workdir, cid)).map_err(to_data)?;
        cluster_vocabs.insert(cid, vocab);
    }
    let merge_config = MergeConfig {
        reserved_tokens: ctx.config.reserved_tokens.clone(),
    };
    let merged = assembly::merge_vocabs_with(&cluster_vocabs, &merge_config).map_err(to_data)?;
    let vocab_path = paths::final_vocab(ctx.workdir);
    assembly::export_vocab(&merged, &vocab_path).map_err(to_data)?;

    let meta = MergeMeta {
        final_size: merged.len(),
        overlap_count: merged.overlap_count(),
        source_sizes: merged
            .source_sizes()
            .iter()
            .map(|(c, s)| (c.to_string(), *s))
            .collect(),
        unique_fraction: merged
            .unique_token_fractions()
            .into_iter()
            .map(|(c, f)| (c.to_string(), f))
            .collect(),
    };
    let meta_path = paths::merge_meta(ctx.workdir);
    let json = serde_json::to_string_pretty(&meta).expect("serializable");
    fs::write(&meta_path, json)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", meta_path.display())))?;
    Ok(vec![
        vocab_path,
        paths::final_provenance(ctx.workdir),
        meta_path,
    ])
}

#[derive(Serialize)]
struct Summary {
    final_vocab_size: usize,
    overlap_count: u64,
    utilization: BTreeMap<String, u64>,
    unique_fraction: BTreeMap<String, f64>,
    fertility: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_length_pct: Option<BTreeMap<String, f64>>,
}

fn stage_analyze(ctx: &StageContext) -> Result<Vec<PathBuf>, CliError> {
    let merged = assembly::import_vocab(paths::final_vocab(ctx.workdir)).map_err(to_data)?;
    let final_vocab = merged.to_unigram().map_err(to_data)?;
    let corpora = load_sampled(ctx)?;

    // Per-language fertility under the final vocabulary.
    let jobs: Vec<&SentenceCorpus> = corpora.values().collect();
    let vocab_ref = &final_vocab;
    let stats: Vec<analysis::TokenizationStats> = pool(ctx.workers)?.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|corpus| analysis::fertility(vocab_ref, corpus))
            .collect()
    });
    let fertility_path = paths::report(ctx.workdir, "fertility.csv");
    ensure_parent(&fertility_path)?;
    analysis::reports::write_fertility_csv(&stats, &fertility_path).map_err(to_data)?;

    // One coverage curve over the concatenated sampled corpora.
    let mut all_lines = Vec::new();
    for corpus in corpora.values() {
        all_lines.extend(corpus.sentences().iter().cloned());
    }
    let pooled = SentenceCorpus::from_sentences(language_id("all")?, all_lines);
    let curve = analysis::coverage_curve(&final_vocab, &pooled).map_err(to_data)?;
    let coverage_path = paths::report(ctx.workdir, "coverage.csv");
    analysis::reports::write_coverage_csv(&curve, &coverage_path).map_err(to_data)?;
    let mut utilization = BTreeMap::new();
    for &p in &ctx.config.analysis.coverage_points {
        let rank = analysis::utilization_at(&curve, p).map_err(to_data)?;
        utilization.insert(format!("{p}"), rank);
    }

    // Cross-cluster overlap.
    let clusters = load_clusters(ctx)?;
    let mut cluster_vocabs = BTreeMap::new();
    for cid in clusters.cluster_ids() {
        cluster_vocabs.insert(
            cid,
            UnigramVocab::load(paths::cluster_vocab(ctx.workdir, cid)).map_err(to_data)?,
        );
    }
    let overlap_path = paths::report(ctx.workdir, "overlap.csv");
    let unique_fraction: BTreeMap<String, f64> = if cluster_vocabs.len() >= 2 {
        let report = analysis::overlap_report(&cluster_vocabs).map_err(to_data)?;
        analysis::reports::write_overlap_csv(&report, &overlap_path).map_err(to_data)?;
        report
            .unique_fraction
            .iter()
            .map(|(c, f)| (c.to_string(), *f))
            .collect()
    } else {
        // A single cluster has no pairs; write the header only.
        fs::write(&overlap_path, "cluster_a,cluster_b,shared_tokens\n")
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", overlap_path.display())))?;
        BTreeMap::new()
    };

    let mut outputs = vec![fertility_path, coverage_path, overlap_path];

    // Optional baseline comparison.
    let mut relative = None;
    if let Some(baseline_path) = &ctx.config.analysis.baseline_vocab {
        let baseline = UnigramVocab::load(baseline_path).map_err(to_data)?;
        let mut rows = String::from("language,avg_baseline,avg_final,relative_diff_pct\n");
        let mut map = BTreeMap::new();
        for (lang, corpus) in &corpora {
            let base = analysis::fertility(&baseline, corpus);
            let ours = analysis::fertility(&final_vocab, corpus);
            let diff =
                analysis::relative_length_diff(&baseline, &final_vocab, corpus).map_err(to_data)?;
            rows.push_str(&format!(
                "{lang},{:.6},{:.6},{diff:.3}\n",
                base.avg_tokens_per_sentence, ours.avg_tokens_per_sentence
            ));
            map.insert(lang.to_string(), diff);
        }
        let rel_path = paths::report(ctx.workdir, "relative_length.csv");
        fs::write(&rel_path, rows)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", rel_path.display())))?;
        outputs.push(rel_path);
        relative = Some(map);
    }

    let summary = Summary {
        final_vocab_size: merged.len(),
        overlap_count: merged.overlap_count(),
        utilization,
        unique_fraction,
        fertility: stats
            .iter()
            .map(|s| (s.language.to_string(), s.avg_tokens_per_sentence))
            .collect(),
        relative_length_pct: relative,
    };
    let summary_path = paths::report(ctx.workdir, "summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("serializable");
    fs::write(&summary_path, json)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", summary_path.display())))?;
    outputs.push(summary_path);
    Ok(outputs)
}

/// Tokenizes input lines with a vocabulary file, printing one segmentation
/// per line with tokens joined by `delimiter`. Lines are normalized before
/// segmentation; uncovered characters surface as the vocabulary's unk
/// marker.
pub fn tokenize_lines(vocab_path: &Path, text: &str, delimiter: &str) -> Result<String, CliError> {
    let vocab = UnigramVocab::load(vocab_path).map_err(|e| CliError::Data(e.to_string()))?;
    let mut out = String::new();
    for line in text.lines() {
        let normalized = multivocab::normalize_sentence(line);
        let seg = vocab.viterbi_tokenize(&normalized);
        let tokens: Vec<&str> = seg.tokens().collect();
        out.push_str(&tokens.join(delimiter));
        out.push('\n');
    }
    Ok(out)
}
