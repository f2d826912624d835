//! Unigram language model: vocabulary, Viterbi segmentation, and training.
//!
//! A [`UnigramVocab`] maps tokens to log-probabilities. Segmentation finds
//! the token sequence with maximal summed log-probability via dynamic
//! programming; characters not covered by any single-character token fall
//! back to the designated unk token, so every string is segmentable.

mod lattice;
mod trainer;

pub use trainer::{
    corpus_marginal_log_likelihood, em_step, make_seed_vocab, prune, train_unigram, TrainerConfig,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) use lattice::SentenceLattice;

/// Default unk surface marker.
pub const DEFAULT_UNK: &str = "<unk>";

/// Token table with log-probabilities, a protected character set, and a
/// designated unk token.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramVocab {
    tokens: Vec<String>,
    log_probs: Vec<f64>,
    index: HashMap<String, u32>,
    required_chars: BTreeSet<char>,
    unk_token: String,
    unk_id: u32,
    max_token_chars: usize,
}

impl UnigramVocab {
    /// Builds a vocabulary from `(token, log_prob)` entries.
    ///
    /// Every log-probability must be finite and non-positive; the unk token
    /// and every required character must appear among the entries.
    pub fn new<I>(
        entries: I,
        required_chars: impl IntoIterator<Item = char>,
        unk_token: impl Into<String>,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (String, f64)>,
    {
        let mut map: BTreeMap<String, f64> = BTreeMap::new();
        for (token, lp) in entries {
            if token.is_empty() {
                return Err(Error::EmptyToken);
            }
            if !lp.is_finite() || lp > 0.0 {
                return Err(Error::InvalidLogProb {
                    token,
                    log_prob: lp,
                });
            }
            if map.insert(token.clone(), lp).is_some() {
                return Err(Error::DuplicateToken(token));
            }
        }
        let unk_token = unk_token.into();
        if !map.contains_key(&unk_token) {
            return Err(Error::MissingUnk(unk_token));
        }
        let required_chars: BTreeSet<char> = required_chars.into_iter().collect();
        for &c in &required_chars {
            if !map.contains_key(c.to_string().as_str()) {
                return Err(Error::MissingRequiredChar(c));
            }
        }

        let mut tokens = Vec::with_capacity(map.len());
        let mut log_probs = Vec::with_capacity(map.len());
        let mut index = HashMap::with_capacity(map.len());
        let mut max_token_chars = 1;
        for (token, lp) in map {
            index.insert(token.clone(), tokens.len() as u32);
            max_token_chars = max_token_chars.max(token.chars().count());
            tokens.push(token);
            log_probs.push(lp);
        }
        let unk_id = index[&unk_token];
        Ok(UnigramVocab {
            tokens,
            log_probs,
            index,
            required_chars,
            unk_token,
            unk_id,
            max_token_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn log_prob(&self, token: &str) -> Option<f64> {
        self.index.get(token).map(|&i| self.log_probs[i as usize])
    }

    pub fn unk_token(&self) -> &str {
        &self.unk_token
    }

    pub fn unk_log_prob(&self) -> f64 {
        self.log_probs[self.unk_id as usize]
    }

    pub fn required_chars(&self) -> &BTreeSet<char> {
        &self.required_chars
    }

    /// Entries in a fixed (lexicographic) order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.tokens
            .iter()
            .zip(&self.log_probs)
            .map(|(t, lp)| (t.as_str(), *lp))
    }

    /// Number of protected entries: the unk token plus required characters.
    pub fn protected_len(&self) -> usize {
        let unk_is_required_char = self.unk_token.chars().count() == 1
            && self
                .required_chars
                .contains(&self.unk_token.chars().next().unwrap());
        self.required_chars.len() + usize::from(!unk_is_required_char)
    }

    pub(crate) fn token_at(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub(crate) fn log_prob_at(&self, id: u32) -> f64 {
        self.log_probs[id as usize]
    }

    pub(crate) fn lookup(&self, token: &str) -> Option<(u32, f64)> {
        self.index
            .get(token)
            .map(|&i| (i, self.log_probs[i as usize]))
    }

    pub(crate) fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub(crate) fn max_token_chars(&self) -> usize {
        self.max_token_chars
    }

    pub fn prob_sum(&self) -> f64 {
        self.log_probs.iter().map(|lp| lp.exp()).sum()
    }

    /// Whether `sum(exp(log_prob))` is within `tol` of one.
    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.prob_sum() - 1.0).abs() <= tol
    }

    /// Returns a copy with log-probabilities shifted so probabilities sum to
    /// one.
    pub fn renormalized(&self) -> Self {
        let max = self
            .log_probs
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let log_sum = max
            + self
                .log_probs
                .iter()
                .map(|lp| (lp - max).exp())
                .sum::<f64>()
                .ln();
        let mut out = self.clone();
        for lp in &mut out.log_probs {
            *lp = (*lp - log_sum).min(0.0);
        }
        out
    }

    /// Replaces all log-probabilities, keeping the token set. `log_probs`
    /// must be indexed in this vocabulary's entry order.
    pub(crate) fn with_log_probs(&self, log_probs: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(log_probs.len(), self.log_probs.len());
        for (i, lp) in log_probs.iter().enumerate() {
            if !lp.is_finite() || *lp > 0.0 {
                return Err(Error::InvalidLogProb {
                    token: self.tokens[i].clone(),
                    log_prob: *lp,
                });
            }
        }
        let mut out = self.clone();
        out.log_probs = log_probs;
        Ok(out)
    }

    /// Keeps only the given entry ids (which must include the unk token and
    /// required characters), renormalizing the survivors.
    pub(crate) fn retain_ids(&self, keep: &[u32]) -> Result<Self> {
        let entries = keep
            .iter()
            .map(|&id| (self.tokens[id as usize].clone(), self.log_probs[id as usize]));
        let vocab = UnigramVocab::new(
            entries,
            self.required_chars.iter().copied(),
            self.unk_token.clone(),
        )?;
        Ok(vocab.renormalized())
    }

    /// Best-scoring segmentation of `text`.
    ///
    /// Characters with no covering single-character token are emitted as unk
    /// pieces carrying the unk log-probability. Score ties are broken by
    /// fewest tokens, then leftmost-longest.
    pub fn viterbi_tokenize(&self, text: &str) -> Segmentation {
        self.viterbi_with_ban(text, None)
    }

    /// Viterbi score of the best segmentation.
    pub fn sentence_log_prob(&self, text: &str) -> f64 {
        self.viterbi_tokenize(text).score()
    }

    /// Viterbi with one entry excluded from matching; the unk fallback stays
    /// active. Used to evaluate the cost of removing a token.
    pub(crate) fn viterbi_with_ban(&self, text: &str, banned: Option<u32>) -> Segmentation {
        if text.is_empty() {
            return Segmentation {
                pieces: Vec::new(),
                score: 0.0,
            };
        }
        let lattice = SentenceLattice::build_with_ban(self, text, banned);
        let n = lattice.n_chars();

        #[derive(Clone)]
        struct Cell {
            score: f64,
            count: u32,
            back: usize,
            edge: usize,
            reached: bool,
        }
        let mut best = vec![
            Cell {
                score: f64::NEG_INFINITY,
                count: 0,
                back: 0,
                edge: usize::MAX,
                reached: false,
            };
            n + 1
        ];
        best[0].reached = true;
        best[0].score = 0.0;

        // Walks back-pointers to the boundary list [0, .., pos]. Only needed
        // to settle exact score-and-count ties.
        let boundary_chain = |cells: &[Cell], mut pos: usize| -> Vec<usize> {
            let mut chain = vec![pos];
            while pos > 0 {
                pos = cells[pos].back;
                chain.push(pos);
            }
            chain.reverse();
            chain
        };

        for (edge_idx, edge) in lattice.edges().iter().enumerate() {
            let (s, e) = (edge.start, edge.end);
            if !best[s].reached {
                continue;
            }
            let cand_score = best[s].score + edge.log_prob;
            let cand_count = best[s].count + 1;
            let replace = if !best[e].reached {
                true
            } else if cand_score != best[e].score {
                cand_score > best[e].score
            } else if cand_count != best[e].count {
                cand_count < best[e].count
            } else if s != best[e].back {
                // Same score and token count: prefer the segmentation whose
                // first differing boundary lies further right (leftmost
                // token longer).
                let a = boundary_chain(&best, s);
                let b = boundary_chain(&best, best[e].back);
                match a.iter().zip(&b).find(|(x, y)| x != y) {
                    Some((x, y)) => x > y,
                    None => false,
                }
            } else {
                false
            };
            if replace {
                best[e] = Cell {
                    score: cand_score,
                    count: cand_count,
                    back: s,
                    edge: edge_idx,
                    reached: true,
                };
            }
        }

        debug_assert!(best[n].reached, "unk fallback must make every text reachable");
        let mut pieces = Vec::with_capacity(best[n].count as usize);
        let mut pos = n;
        while pos > 0 {
            let cell = &best[pos];
            let edge = &lattice.edges()[cell.edge];
            let surface = lattice.slice(text, edge.start, edge.end).to_string();
            let token = if edge.synthetic_unk {
                self.unk_token.clone()
            } else {
                surface.clone()
            };
            pieces.push(Piece {
                token,
                surface,
                is_unk: edge.synthetic_unk,
            });
            pos = cell.back;
        }
        pieces.reverse();
        Segmentation {
            score: best[n].score,
            pieces,
        }
    }

    /// Serializes as TSV: a `#ulm-vocab v1` header, the unk entry first, then
    /// the remaining entries sorted by descending log-probability and token.
    /// Log-probabilities are printed with 17 significant digits, which
    /// round-trips `f64` exactly.
    pub fn to_tsv(&self) -> String {
        let mut rest: Vec<(&str, f64)> = self
            .entries()
            .filter(|(t, _)| *t != self.unk_token)
            .collect();
        rest.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
        let mut out = String::from("#ulm-vocab v1\n");
        let mut push = |token: &str, lp: f64| {
            out.push_str(token);
            out.push('\t');
            out.push_str(&format!("{lp:.16e}"));
            out.push('\n');
        };
        push(&self.unk_token, self.unk_log_prob());
        for (token, lp) in rest {
            push(token, lp);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Parses the TSV format written by [`UnigramVocab::to_tsv`]. The first
    /// entry is taken as the unk token and every single-codepoint token
    /// becomes a required character.
    pub fn from_tsv(text: &str, origin: impl AsRef<Path>) -> Result<Self> {
        let origin = origin.as_ref();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "#ulm-vocab v1")) => {}
            Some((_, other)) => {
                return Err(Error::format(
                    origin,
                    1,
                    format!("expected '#ulm-vocab v1' header, got {other:?}"),
                ))
            }
            None => return Err(Error::format(origin, 1, "empty vocabulary file")),
        }
        let mut entries: Vec<(String, f64)> = Vec::new();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let (token, lp) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(origin, lineno, "expected token<TAB>log_prob"))?;
            let lp: f64 = lp
                .parse()
                .map_err(|_| Error::format(origin, lineno, format!("bad log_prob {lp:?}")))?;
            if !seen.insert(token.to_string()) {
                return Err(Error::format(
                    origin,
                    lineno,
                    format!("duplicate token {token:?}"),
                ));
            }
            entries.push((token.to_string(), lp));
        }
        if entries.is_empty() {
            return Err(Error::format(origin, 1, "vocabulary has no entries"));
        }
        let unk_token = entries[0].0.clone();
        let required: Vec<char> = entries
            .iter()
            .filter_map(|(t, _)| {
                let mut chars = t.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                }
            })
            .collect();
        UnigramVocab::new(entries, required, unk_token)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }
}

/// One segment of a tokenized sentence. For unk pieces `token` is the unk
/// marker while `surface` is the covered text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub token: String,
    pub surface: String,
    pub is_unk: bool,
}

/// An ordered token decomposition of a sentence together with its score (sum
/// of entry log-probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pieces: Vec<Piece>,
    score: f64,
}

impl Segmentation {
    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Vocabulary tokens in order (unk pieces yield the unk marker).
    pub fn tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.pieces.iter().map(|p| p.token.as_str())
    }

    /// Concatenated surface text; equals the tokenized input.
    pub fn surface(&self) -> String {
        self.pieces.iter().map(|p| p.surface.as_str()).collect()
    }
}
