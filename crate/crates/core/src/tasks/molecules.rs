//! Two-objective string task with docking-like and druglikeness-like proxies.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::TaskError;
use crate::policy::Vocabulary;

pub const VINA_MIN: f64 = -13.0;
pub const VINA_MAX: f64 = 0.0;

pub const ALPHABET: [&str; 8] = ["C", "N", "O", "c", "(", ")", "=", "1"];

/// Combined-range scalarization: `1 − minmax(vina + (1 − qed))` over `[−13, 1]`.
pub fn scalarize(vina: f64, qed: f64) -> f64 {
    let combined = vina + (1.0 - qed);
    1.0 - (combined - VINA_MIN) / (1.0 - VINA_MIN)
}

/// Syntactic plausibility in the spirit of SMILES: balanced non-empty
/// branches, paired ring closures, no doubled or dangling bonds.
pub fn is_valid(text: &str) -> bool {
    if text.is_empty() || !text.chars().all(|c| ALPHABET.iter().any(|a| a.starts_with(c))) {
        return false;
    }
    let b = text.as_bytes();
    if matches!(b[0], b'=' | b'(' | b')' | b'1') || matches!(b[b.len() - 1], b'=' | b'(') {
        return false;
    }
    let mut depth = 0i32;
    for (i, &c) in b.iter().enumerate() {
        match c {
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth < 0 || matches!(b[i - 1], b'(' | b'=') {
                    return false;
                }
            }
            b'=' if b[i - 1] == b'=' => return false,
            _ => {}
        }
    }
    depth == 0 && b.iter().filter(|&&c| c == b'1').count() % 2 == 0
}

const BIGRAM_BUCKETS: usize = 16;
const FEATURES: usize = ALPHABET.len() + BIGRAM_BUCKETS + 2;

fn features(text: &str, max_len: usize) -> [f64; FEATURES] {
    let mut x = [0.0; FEATURES];
    let chars: Vec<u8> = text.bytes().collect();
    let n = chars.len() as f64;
    for &c in &chars {
        let i = ALPHABET.iter().position(|a| a.as_bytes()[0] == c).unwrap_or(0);
        x[i] += 1.0 / n;
    }
    if chars.len() > 1 {
        for w in chars.windows(2) {
            let h = (w[0] as usize).wrapping_mul(31).wrapping_add(w[1] as usize) % BIGRAM_BUCKETS;
            x[ALPHABET.len() + h] += 1.0 / (n - 1.0);
        }
    }
    x[FEATURES - 2] = n / max_len as f64;
    x[FEATURES - 1] = (n / max_len as f64).powi(2);
    x
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoleculeScore {
    pub score: f64,
    pub vina: Option<f64>,
    pub qed: Option<f64>,
    pub valid: bool,
    pub repeat: bool,
}

#[derive(Debug, Clone)]
pub struct TwoObjectiveTask {
    vocab: Vocabulary,
    max_len: usize,
    vina_w: Vec<f64>,
    qed_w: Vec<f64>,
    seen: HashSet<String>,
}

impl TwoObjectiveTask {
    /// Proxy weights are drawn from `rng`, so one seed fixes the landscape.
    pub fn new<R: Rng + ?Sized>(max_len: usize, rng: &mut R) -> Result<Self, TaskError> {
        let vocab = Vocabulary::new(ALPHABET.iter().copied(), "<end>", "")?;
        let normal = Normal::new(0.0, 3.0).expect("valid normal");
        let mut draw = || -> Vec<f64> { (0..=FEATURES).map(|_| normal.sample(rng)).collect() };
        let vina_w = draw();
        let qed_w = draw();
        Ok(Self {
            vocab,
            max_len,
            vina_w,
            qed_w,
            seen: HashSet::new(),
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn seen_count(&self) -> usize {
        self.seen.len()
    }

    fn linear(w: &[f64], x: &[f64; FEATURES]) -> f64 {
        w[FEATURES] + x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Docking proxy in `[−13, 0]`; `None` for invalid strings.
    pub fn vina_proxy(&self, text: &str) -> Option<f64> {
        is_valid(text).then(|| VINA_MIN * sigmoid(Self::linear(&self.vina_w, &features(text, self.max_len))))
    }

    /// Druglikeness proxy in `[0, 1]`; `None` for invalid strings.
    pub fn qed_proxy(&self, text: &str) -> Option<f64> {
        is_valid(text).then(|| sigmoid(Self::linear(&self.qed_w, &features(text, self.max_len))))
    }

    /// Scores a string once; invalid strings and repeats score 0.
    pub fn scalarized_reward(&mut self, text: &str) -> MoleculeScore {
        let (vina, qed) = (self.vina_proxy(text), self.qed_proxy(text));
        let repeat = !self.seen.insert(text.to_string());
        let score = match (vina, qed) {
            (Some(v), Some(q)) if !repeat => scalarize(v, q),
            _ => 0.0,
        };
        MoleculeScore {
            score,
            vina,
            qed,
            valid: vina.is_some(),
            repeat,
        }
    }
}
