//! Segmentation lattice over one sentence.
//!
//! Edges are vocabulary tokens occurring at character positions, plus a
//! synthetic one-character unk edge wherever no single-character token covers
//! the position. Edges are enumerated in increasing end order, which lets the
//! Viterbi pass and the forward recursion consume them in one sweep.

use super::UnigramVocab;

#[derive(Debug, Clone)]
pub(crate) struct Edge {
    pub start: usize,
    pub end: usize,
    pub token_id: u32,
    pub log_prob: f64,
    pub synthetic_unk: bool,
}

pub(crate) struct SentenceLattice {
    n_chars: usize,
    /// Byte offsets of char boundaries; length `n_chars + 1`.
    offsets: Vec<usize>,
    /// Sorted by (end, start) ascending.
    edges: Vec<Edge>,
}

impl SentenceLattice {
    pub fn build(vocab: &UnigramVocab, text: &str) -> Self {
        Self::build_with_ban(vocab, text, None)
    }

    pub fn build_with_ban(vocab: &UnigramVocab, text: &str, banned: Option<u32>) -> Self {
        let mut offsets: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
        offsets.push(text.len());
        let n_chars = offsets.len() - 1;
        let max_len = vocab.max_token_chars();

        let mut edges = Vec::new();
        for start in 0..n_chars {
            let mut single_covered = false;
            let span = max_len.min(n_chars - start);
            for len in 1..=span {
                let slice = &text[offsets[start]..offsets[start + len]];
                if let Some((id, lp)) = vocab.lookup(slice) {
                    if Some(id) == banned {
                        continue;
                    }
                    if len == 1 {
                        single_covered = true;
                    }
                    edges.push(Edge {
                        start,
                        end: start + len,
                        token_id: id,
                        log_prob: lp,
                        synthetic_unk: false,
                    });
                }
            }
            if !single_covered {
                edges.push(Edge {
                    start,
                    end: start + 1,
                    token_id: vocab.unk_id(),
                    log_prob: vocab.unk_log_prob(),
                    synthetic_unk: true,
                });
            }
        }
        edges.sort_by(|a, b| a.end.cmp(&b.end).then(a.start.cmp(&b.start)));
        SentenceLattice {
            n_chars,
            offsets,
            edges,
        }
    }

    pub fn n_chars(&self) -> usize {
        self.n_chars
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> &'a str {
        &text[self.offsets[start]..self.offsets[end]]
    }

    /// Log-marginal probability of the sentence: log-sum over all
    /// segmentations of the summed token log-probabilities.
    pub fn log_marginal(&self) -> f64 {
        self.forward()[self.n_chars]
    }

    fn forward(&self) -> Vec<f64> {
        let mut alpha = vec![f64::NEG_INFINITY; self.n_chars + 1];
        alpha[0] = 0.0;
        for edge in &self.edges {
            let contrib = alpha[edge.start] + edge.log_prob;
            alpha[edge.end] = log_add(alpha[edge.end], contrib);
        }
        alpha
    }

    fn backward(&self) -> Vec<f64> {
        let mut beta = vec![f64::NEG_INFINITY; self.n_chars + 1];
        beta[self.n_chars] = 0.0;
        for edge in self.edges.iter().rev() {
            let contrib = edge.log_prob + beta[edge.end];
            beta[edge.start] = log_add(beta[edge.start], contrib);
        }
        beta
    }

    /// Adds `weight` times the posterior expected count of each edge's token
    /// to `expected` (indexed by vocabulary entry id) and returns the
    /// sentence log-marginal.
    pub fn accumulate_expected(&self, weight: f64, expected: &mut [f64]) -> f64 {
        let alpha = self.forward();
        let beta = self.backward();
        let z = alpha[self.n_chars];
        if !z.is_finite() {
            return z;
        }
        for edge in &self.edges {
            let posterior = (alpha[edge.start] + edge.log_prob + beta[edge.end] - z).exp();
            expected[edge.token_id as usize] += weight * posterior;
        }
        z
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
