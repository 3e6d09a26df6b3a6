//! Hidden-word search scored by embedding cosine similarity.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::TaskError;
use crate::policy::Vocabulary;

/// Unit-normalized word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    dim: usize,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    /// Normalizes every vector to unit length. Zero vectors are rejected.
    pub fn new(words: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self, TaskError> {
        if words.len() != vectors.len() {
            return Err(TaskError::Embedding(format!(
                "{} words but {} vectors",
                words.len(),
                vectors.len()
            )));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(TaskError::Embedding("empty table or zero dimension".into()));
        }
        let mut flat = Vec::with_capacity(words.len() * dim);
        let mut index = HashMap::with_capacity(words.len());
        for (i, (w, v)) in words.iter().zip(&vectors).enumerate() {
            if v.len() != dim {
                return Err(TaskError::Embedding(format!("vector for {w:?} has dimension {}", v.len())));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(TaskError::Embedding(format!("vector for {w:?} has norm {norm}")));
            }
            flat.extend(v.iter().map(|x| x / norm));
            if index.insert(w.clone(), i).is_some() {
                return Err(TaskError::Embedding(format!("duplicate word {w:?}")));
            }
        }
        Ok(Self {
            words,
            dim,
            vectors: flat,
            index,
        })
    }

    /// Reads `"V d"` on the first line, then `V` lines of `word f1 … fd`.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, TaskError> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| TaskError::Embedding("missing header".into()))??;
        let mut parts = header.split_whitespace();
        let parse_usize = |s: Option<&str>| -> Result<usize, TaskError> {
            s.and_then(|x| x.parse().ok())
                .ok_or_else(|| TaskError::Embedding(format!("bad header {header:?}")))
        };
        let (count, dim) = (parse_usize(parts.next())?, parse_usize(parts.next())?);
        let mut words = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let word = it.next().unwrap().to_string();
            let v = it
                .map(|x| x.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TaskError::Embedding(format!("line {}: {e}", lineno + 2)))?;
            if v.len() != dim {
                return Err(TaskError::Embedding(format!(
                    "line {}: expected {dim} values, got {}",
                    lineno + 2,
                    v.len()
                )));
            }
            words.push(word);
            vectors.push(v);
        }
        if words.len() != count {
            return Err(TaskError::Embedding(format!("header says {count} words, found {}", words.len())));
        }
        Self::new(words, vectors)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector_at(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.vector_at(i))
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        self.vector_at(a).iter().zip(self.vector_at(b)).map(|(x, y)| x * y).sum()
    }
}

/// Parameters of the planted synthetic landscape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWords {
    pub vocab_size: usize,
    pub dim: usize,
    pub alphabet: usize,
    pub word_len: usize,
    pub clusters: usize,
}

impl Default for SyntheticWords {
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            dim: 16,
            alphabet: 10,
            word_len: 4,
            clusters: 8,
        }
    }
}

impl SyntheticWords {
    /// Words are random strings over the first `alphabet` lowercase letters.
    /// Each vector sums one Gaussian component per (position, letter), a
    /// mixture center keyed by the first letter, and a small per-word noise,
    /// so words one substitution apart share most of their components.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EmbeddingTable, TaskError> {
        let space = (self.alphabet as f64).powi(self.word_len as i32);
        if self.alphabet == 0 || self.alphabet > 26 || (self.vocab_size as f64) > space {
            return Err(TaskError::Embedding(format!(
                "cannot draw {} distinct words of length {} over {} letters",
                self.vocab_size, self.word_len, self.alphabet
            )));
        }
        let gauss = |rng: &mut R, n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };
        let letter_parts: Vec<Vec<f64>> = (0..self.word_len * self.alphabet).map(|_| gauss(rng, self.dim)).collect();
        let centers: Vec<Vec<f64>> = (0..self.clusters.max(1)).map(|_| gauss(rng, self.dim)).collect();

        let mut seen = HashSet::with_capacity(self.vocab_size);
        let mut words = Vec::with_capacity(self.vocab_size);
        while words.len() < self.vocab_size {
            let letters: Vec<usize> = (0..self.word_len).map(|_| rng.gen_range(0..self.alphabet)).collect();
            let w: String = letters.iter().map(|&l| (b'a' + l as u8) as char).collect();
            if seen.insert(w.clone()) {
                words.push((w, letters));
            }
        }
        let mut names = Vec::with_capacity(words.len());
        let mut vectors = Vec::with_capacity(words.len());
        for (w, letters) in words {
            let noise = gauss(rng, self.dim);
            let center = &centers[letters[0] % centers.len()];
            let v: Vec<f64> = (0..self.dim)
                .map(|d| {
                    let positional: f64 = letters
                        .iter()
                        .enumerate()
                        .map(|(p, &l)| letter_parts[p * self.alphabet + l][d])
                        .sum();
                    positional + 0.5 * center[d] + 0.3 * noise[d]
                })
                .collect();
            names.push(w);
            vectors.push(v);
        }
        EmbeddingTable::new(names, vectors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordScore {
    pub score: f64,
    pub optimal: bool,
}

#[derive(Debug, Clone)]
pub struct WordSearchTask {
    table: EmbeddingTable,
    hidden: usize,
    warmstart: Vec<(String, f64)>,
    vocab: Vocabulary,
    max_len: usize,
}

impl WordSearchTask {
    /// Picks a hidden word and `warmstart_count` other scored words.
    pub fn new<R: Rng + ?Sized>(table: EmbeddingTable, warmstart_count: usize, rng: &mut R) -> Result<Self, TaskError> {
        let hidden = rng.gen_range(0..table.len());
        Self::with_hidden(table, hidden, warmstart_count, rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(
        table: EmbeddingTable,
        hidden: usize,
        warmstart_count: usize,
        rng: &mut R,
    ) -> Result<Self, TaskError> {
        if hidden >= table.len() {
            return Err(TaskError::Embedding(format!("hidden index {hidden} out of range")));
        }
        if warmstart_count >= table.len() {
            return Err(TaskError::Embedding("warmstart larger than vocabulary".into()));
        }
        let mut letters: Vec<char> = table.words().iter().flat_map(|w| w.chars()).collect();
        letters.sort_unstable();
        letters.dedup();
        let vocab = Vocabulary::new(letters.iter().map(|c| c.to_string()), "<end>", "")?;
        let max_len = table.words().iter().map(|w| w.chars().count()).max().unwrap_or(1);
        let mut pool: Vec<usize> = (0..table.len()).filter(|&i| i != hidden).collect();
        let picks = rand::seq::index::sample(rng, pool.len(), warmstart_count).into_vec();
        let mut task = Self {
            table,
            hidden,
            warmstart: Vec::new(),
            vocab,
            max_len,
        };
        task.warmstart = picks
            .into_iter()
            .map(|i| {
                let w = task.table.words()[pool[i]].clone();
                let s = task.word_reward(&w).score;
                (w, s)
            })
            .collect();
        pool.clear();
        Ok(task)
    }

    /// Replaces the warmstart set; used to plant specific candidates.
    pub fn set_warmstart(&mut self, words: &[&str]) {
        self.warmstart = words.iter().map(|w| (w.to_string(), self.word_reward(w).score)).collect();
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn hidden_word(&self) -> &str {
        &self.table.words()[self.hidden]
    }

    pub fn warmstart(&self) -> &[(String, f64)] {
        &self.warmstart
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Cosine to the hidden word, 0 outside the table, exactly 1 for the
    /// hidden word itself.
    pub fn word_reward(&self, guess: &str) -> WordScore {
        match self.table.index_of(guess) {
            Some(i) if i == self.hidden => WordScore {
                score: 1.0,
                optimal: true,
            },
            Some(i) => WordScore {
                score: self.table.cosine(i, self.hidden).clamp(-1.0, 1.0),
                optimal: false,
            },
            None => WordScore {
                score: 0.0,
                optimal: false,
            },
        }
    }
}

/// A two-word completion formed from a sorted batch.
#[derive(Debug, Clone, PartialEq)]
pub struct WordPair {
    /// Index (into the batch) of the higher-scoring word.
    pub lead: usize,
    pub partner: usize,
    pub text: String,
    pub score: f64,
}

/// Sorts a scored batch descending and pairs neighbours (1st with 2nd, 3rd
/// with 4th, …). Each pair is rewarded with the larger of its two scores.
/// An odd trailing word is dropped.
pub fn pair_batch(batch: &[(String, f64)]) -> Vec<WordPair> {
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&a, &b| batch[b].1.partial_cmp(&batch[a].1).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order
        .chunks_exact(2)
        .map(|c| WordPair {
            lead: c[0],
            partner: c[1],
            text: format!("{} {}", batch[c[0]].0, batch[c[1]].0),
            score: batch[c[0]].1.max(batch[c[1]].1),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_task(seed: u64) -> WordSearchTask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = SyntheticWords {
            vocab_size: 300,
            dim: 8,
            alphabet: 6,
            word_len: 4,
            clusters: 4,
        }
        .generate(&mut rng)
        .unwrap();
        WordSearchTask::new(table, 20, &mut rng).unwrap()
    }

    #[test]
    fn hidden_word_is_optimal() {
        let t = small_task(1);
        let h = t.hidden_word().to_string();
        assert_eq!(t.word_reward(&h), WordScore { score: 1.0, optimal: true });
        assert_eq!(t.word_reward("zzzz").score, 0.0);
        assert_eq!(t.warmstart().len(), 20);
        assert!(t.warmstart().iter().all(|(w, _)| w != &h));
    }

    #[test]
    fn reward_is_stored_vector_dot_product() {
        let t = small_task(2);
        let hv = t.table().vector(t.hidden_word()).unwrap().to_vec();
        for w in t.table().words().iter().take(100) {
            let dot: f64 = t.table().vector(w).unwrap().iter().zip(&hv).map(|(a, b)| a * b).sum();
            let r = t.word_reward(w).score;
            if w != t.hidden_word() {
                assert!((r - dot).abs() < 1e-15);
                assert!(r < 1.0 && r >= -1.0);
            }
        }
    }

    #[test]
    fn vectors_are_unit_norm() {
        let t = small_task(3);
        for i in 0..t.table().len() {
            let n: f64 = t.table().vector_at(i).iter().map(|x| x * x).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn neighbours_correlate_more_than_random_pairs() {
        let t = small_task(4);
        let table = t.table();
        let words = table.words();
        let mut near = Vec::new();
        let mut far = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for h in 0..30 {
            for (i, a) in words.iter().enumerate() {
                for (j, b) in words.iter().enumerate().skip(i + 1) {
                    let d = a.chars().zip(b.chars()).filter(|(x, y)| x != y).count();
                    let pair = (table.cosine(i, h), table.cosine(j, h));
                    if d == 1 {
                        near.push(pair);
                    } else if rng.gen::<f64>() < 0.01 {
                        far.push(pair);
                    }
                }
            }
        }
        let corr = |v: &[(f64, f64)]| {
            let n = v.len() as f64;
            let (mx, my) = (v.iter().map(|p| p.0).sum::<f64>() / n, v.iter().map(|p| p.1).sum::<f64>() / n);
            let cov: f64 = v.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let vx: f64 = v.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let vy: f64 = v.iter().map(|p| (p.1 - my).powi(2)).sum();
            cov / (vx * vy).sqrt()
        };
        let (cn, cf) = (corr(&near), corr(&far));
        assert!(cn > cf + 0.2, "near {cn} far {cf}");
    }

    #[test]
    fn load_embedding_file() {
        let text = "3 2\ncat 1 0\ndog 0.6 0.8\nemu 0 -2\n";
        let t = EmbeddingTable::load(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.vector("emu").unwrap(), &[0.0, -1.0]);
        assert!((t.cosine(0, 1) - 0.6).abs() < 1e-15);
        assert!(EmbeddingTable::load("2 2\ncat 1 0\n".as_bytes()).is_err());
        assert!(EmbeddingTable::load("1 2\ncat 1\n".as_bytes()).is_err());
        assert!(EmbeddingTable::load("2 1\ncat 1\ncat 2\n".as_bytes()).is_err());
    }

    #[test]
    fn pairs_take_max_score() {
        let batch: Vec<(String, f64)> = [("a", 0.1), ("b", 0.9), ("c", 0.5), ("d", 0.7)]
            .iter()
            .map(|(w, s)| (w.to_string(), *s))
            .collect();
        let pairs = pair_batch(&batch);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].text, "b d");
        assert_eq!(pairs[0].score, 0.9);
        assert_eq!(pairs[1].text, "c a");
        assert_eq!(pairs[1].score, 0.5);
    }
}
