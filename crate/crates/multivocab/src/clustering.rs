//! K-Means clustering of lexical fingerprints.
//!
//! Lloyd's algorithm with seeded k-means++ initialization. Runs to an
//! assignment fixpoint or `max_iters`; empty clusters are repaired by
//! stealing the point currently farthest from its centroid. All randomness
//! comes from the caller's seed, so results are reproducible.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::corpus::LanguageId;
use crate::error::{Error, Result};
use crate::fingerprint::LexicalFingerprint;

/// Index of a cluster within one assignment.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClusterId(pub u32);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Distance used for assignment and inertia.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Cosine distance (1 - cosine similarity); offered for experimentation.
    Cosine,
}

impl Metric {
    fn distance_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let d = x - y;
                    d * d
                })
                .sum(),
            Metric::Cosine => {
                let d = self.distance(a, b);
                d * d
            }
        }
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => self.distance_sq(a, b).sqrt(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct KMeansOptions {
    pub metric: Metric,
}

/// A partition of the languages into k non-empty clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    clusters: Vec<Vec<LanguageId>>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    /// Member languages per cluster, sorted within each cluster.
    pub fn clusters(&self) -> &[Vec<LanguageId>] {
        &self.clusters
    }

    pub fn members(&self, id: ClusterId) -> &[LanguageId] {
        &self.clusters[id.0 as usize]
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn cluster_ids(&self) -> impl Iterator<Item = ClusterId> {
        (0..self.clusters.len() as u32).map(ClusterId)
    }

    pub fn cluster_of(&self, language: &LanguageId) -> Option<ClusterId> {
        self.clusters
            .iter()
            .position(|members| members.contains(language))
            .map(|i| ClusterId(i as u32))
    }

    /// Serializes as TSV `cluster_id<TAB>language`, sorted.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, members) in self.clusters.iter().enumerate() {
            for lang in members {
                out.push_str(&format!("{i}\t{lang}\n"));
            }
        }
        out
    }

    pub fn save(&self, tsv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
        let tsv_path = tsv_path.as_ref();
        fs::write(tsv_path, self.to_tsv()).map_err(|e| Error::io(tsv_path, e))?;
        let meta_path = meta_path.as_ref();
        let meta = ClusterMeta {
            centroids: self.centroids.clone(),
            inertia: self.inertia,
        };
        let json = serde_json::to_string_pretty(&meta).expect("serializable");
        fs::write(meta_path, json).map_err(|e| Error::io(meta_path, e))
    }

    pub fn load(tsv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<Self> {
        let tsv_path = tsv_path.as_ref();
        let text = fs::read_to_string(tsv_path).map_err(|e| Error::io(tsv_path, e))?;
        let mut by_cluster: BTreeMap<u32, Vec<LanguageId>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let (cid, lang) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(tsv_path, lineno, "expected cluster<TAB>language"))?;
            let cid: u32 = cid
                .parse()
                .map_err(|_| Error::format(tsv_path, lineno, format!("bad cluster id {cid:?}")))?;
            by_cluster
                .entry(cid)
                .or_default()
                .push(LanguageId::new(lang)?);
        }
        let meta_path = meta_path.as_ref();
        let json = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
        let meta: ClusterMeta = serde_json::from_str(&json)
            .map_err(|e| Error::format(meta_path, e.line(), e.to_string()))?;
        let expected: Vec<u32> = (0..by_cluster.len() as u32).collect();
        let found: Vec<u32> = by_cluster.keys().copied().collect();
        if found != expected {
            return Err(Error::format(
                tsv_path,
                1,
                format!("cluster ids must be contiguous from 0, found {found:?}"),
            ));
        }
        Ok(ClusterAssignment {
            clusters: by_cluster.into_values().collect(),
            centroids: meta.centroids,
            inertia: meta.inertia,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ClusterMeta {
    centroids: Vec<Vec<f64>>,
    inertia: f64,
}

/// K-Means with the default Euclidean metric.
pub fn kmeans(
    fingerprints: &[LexicalFingerprint],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterAssignment> {
    kmeans_with_options(fingerprints, k, seed, max_iters, &KMeansOptions::default())
}

pub fn kmeans_with_options(
    fingerprints: &[LexicalFingerprint],
    k: usize,
    seed: u64,
    max_iters: usize,
    options: &KMeansOptions,
) -> Result<ClusterAssignment> {
    kmeans_traced(fingerprints, k, seed, max_iters, options).map(|(a, _)| a)
}

/// As [`kmeans_with_options`], additionally returning the inertia recorded
/// after each assignment pass (non-increasing across Lloyd iterations).
pub fn kmeans_traced(
    fingerprints: &[LexicalFingerprint],
    k: usize,
    seed: u64,
    max_iters: usize,
    options: &KMeansOptions,
) -> Result<(ClusterAssignment, Vec<f64>)> {
    let n = fingerprints.len();
    if k == 0 {
        return Err(Error::ZeroK);
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let dim = fingerprints[0].dimension();
    for fp in fingerprints {
        if fp.dimension() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: fp.dimension(),
            });
        }
    }
    let points: Vec<&[f64]> = fingerprints.iter().map(|f| f.values()).collect();
    let metric = options.metric;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = plus_plus_init(&points, k, metric, &mut rng);
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut inertia_trace = Vec::new();

    for _ in 0..max_iters.max(1) {
        let mut next: Vec<usize> = Vec::with_capacity(n);
        for p in &points {
            let mut best = 0usize;
            let mut best_d = metric.distance_sq(p, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = metric.distance_sq(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            next.push(best);
        }
        repair_empty_clusters(&points, &centroids, &mut next, k, metric);
        inertia_trace.push(total_inertia(&points, &centroids, &next, metric));
        let converged = next == assignment;
        assignment = next;
        if converged {
            break;
        }
        centroids = recompute_centroids(&points, &assignment, k, dim);
    }
    // Report centroids consistent with the final assignment.
    centroids = recompute_centroids(&points, &assignment, k, dim);
    let inertia = total_inertia(&points, &centroids, &assignment, metric);

    let mut clusters: Vec<Vec<LanguageId>> = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        clusters[c].push(fingerprints[i].language().clone());
    }
    for members in &mut clusters {
        members.sort();
    }
    Ok((
        ClusterAssignment {
            clusters,
            centroids,
            inertia,
        },
        inertia_trace,
    ))
}

/// k-means++ seeding: first centroid uniform, each next one sampled with
/// probability proportional to the squared distance to the nearest chosen
/// centroid. Zero total weight (coincident points) falls back to the first
/// non-centroid index.
fn plus_plus_init(
    points: &[&[f64]],
    k: usize,
    metric: Metric,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    chosen.push(rng.gen_range(0..n));
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| metric.distance_sq(p, points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(metric.distance_sq(p, points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

fn recompute_centroids(
    points: &[&[f64]],
    assignment: &[usize],
    k: usize,
    dim: usize,
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(*p) {
            *s += v;
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        if count > 0 {
            for s in sum.iter_mut() {
                *s /= count as f64;
            }
        }
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster,
/// never draining a cluster below one member. Ties resolve to the lowest
/// point index.
fn repair_empty_clusters(
    points: &[&[f64]],
    centroids: &[Vec<f64>],
    assignment: &mut [usize],
    k: usize,
    metric: Metric,
) {
    loop {
        let mut sizes = vec![0usize; k];
        for &c in assignment.iter() {
            sizes[c] += 1;
        }
        let empty = match sizes.iter().position(|&s| s == 0) {
            Some(c) => c,
            None => return,
        };
        let mut farthest: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if sizes[assignment[i]] <= 1 {
                continue;
            }
            let d = metric.distance_sq(p, &centroids[assignment[i]]);
            let better = match farthest {
                None => true,
                Some((_, best)) => d > best,
            };
            if better {
                farthest = Some((i, d));
            }
        }
        let (steal, _) = farthest.expect("k <= n guarantees a donatable point");
        assignment[steal] = empty;
    }
}

fn total_inertia(
    points: &[&[f64]],
    centroids: &[Vec<f64>],
    assignment: &[usize],
    metric: Metric,
) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| metric.distance_sq(p, &centroids[c]))
        .sum()
}

/// Runs one k-means per seed and returns the restart with the lowest
/// inertia; exact ties resolve to the lowest seed.
pub fn best_of_restarts(
    fingerprints: &[LexicalFingerprint],
    k: usize,
    seeds: &[u64],
    max_iters: usize,
) -> Result<ClusterAssignment> {
    if seeds.is_empty() {
        return Err(Error::NoSeeds);
    }
    let mut best: Option<(f64, u64, ClusterAssignment)> = None;
    for &seed in seeds {
        let assignment = kmeans(fingerprints, k, seed, max_iters)?;
        let key = (assignment.inertia(), seed);
        let replace = match &best {
            None => true,
            Some((inertia, s, _)) => key.0 < *inertia || (key.0 == *inertia && key.1 < *s),
        };
        if replace {
            best = Some((key.0, key.1, assignment));
        }
    }
    Ok(best.expect("at least one seed").2)
}
