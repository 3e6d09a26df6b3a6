//! Feature-linear autoregressive softmax policy.
//!
//! Each step scores the next token with `logits = Wᵀ φ(context, prev, pos)`
//! where `φ` is the concatenation of three one-hot blocks: the context kind
//! (task or neighborhood), the previous token, and a clamped position bucket.
//! Because `φ` has exactly three active slots, a logit row is the sum of three
//! rows of `W`, and the gradient of a token log-probability is the outer
//! product `φ ⊗ (onehot(token) − softmax)`.
//!
//! The start-of-sequence sentinel shares the previous-token slot of the end
//! token. Sampling stops at the end token, so the end token never appears as
//! a real predecessor and the two meanings cannot collide.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use thiserror::Error;

/// Number of context kinds in the feature layout.
pub const CONTEXT_KINDS: usize = 2;
/// Default number of position buckets.
pub const DEFAULT_POSITION_BUCKETS: usize = 4;

const MAGIC_PREFIX: &[u8; 3] = b"MGP";
const FORMAT_VERSION: u8 = b'1';

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("vocabulary needs at least 2 tokens, got {0}")]
    VocabularyTooSmall(usize),
    #[error("duplicate vocabulary symbol {0:?}")]
    DuplicateSymbol(String),
    #[error("end token {end} must be the last vocabulary index ({last})")]
    EndTokenPlacement { end: usize, last: usize },
    #[error("token {token} outside vocabulary of size {size}")]
    TokenOutOfVocabulary { token: usize, size: usize },
    #[error("end token at position {0} before the end of the sequence")]
    EndTokenInterior(usize),
    #[error("end token cannot be used as a previous token")]
    EndAsPrevious,
    #[error("position {position} exceeds max length {max_len}")]
    PositionOutOfRange { position: usize, max_len: usize },
    #[error("sequence length {len} exceeds max length {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("invalid policy shape: {0}")]
    BadShape(String),
    #[error("non-finite weight at index {0}")]
    NonFinite(usize),
    #[error("parameter stream has bad magic bytes")]
    BadMagic,
    #[error("parameter stream version {found} is not supported (expected {expected})")]
    VersionMismatch { found: char, expected: char },
    #[error("parameter stream truncated: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("trailing bytes after parameter payload")]
    TrailingBytes,
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for PolicyError {
    fn from(e: std::io::Error) -> Self {
        PolicyError::Io(e.to_string())
    }
}

/// Ordered token alphabet. The end token is always the last symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    joiner: String,
}

impl Vocabulary {
    /// Builds a vocabulary from content symbols; an end symbol is appended.
    /// `joiner` separates symbols when decoding token sequences to text.
    pub fn new<S: Into<String>>(
        symbols: impl IntoIterator<Item = S>,
        end_symbol: &str,
        joiner: &str,
    ) -> Result<Self, PolicyError> {
        let mut tokens: Vec<String> = symbols.into_iter().map(Into::into).collect();
        tokens.push(end_symbol.to_string());
        if tokens.len() < 2 {
            return Err(PolicyError::VocabularyTooSmall(tokens.len()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(PolicyError::DuplicateSymbol(t.clone()));
            }
        }
        Ok(Self {
            tokens,
            index,
            joiner: joiner.to_string(),
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn end_token(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn symbol(&self, token: usize) -> Option<&str> {
        self.tokens.get(token).map(String::as_str)
    }

    pub fn token_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbols(&self) -> &[String] {
        &self.tokens
    }

    /// Text of the symbols before the first end token.
    pub fn decode(&self, tokens: &[usize]) -> String {
        let end = self.end_token();
        let parts: Vec<&str> = tokens
            .iter()
            .take_while(|&&t| t != end)
            .filter_map(|&t| self.symbol(t))
            .collect();
        parts.join(&self.joiner)
    }

    /// Splits `text` into symbols (by the joiner, or per character when the
    /// joiner is empty) and maps each to a token. Unknown symbols yield `None`.
    pub fn encode(&self, text: &str) -> Option<Vec<usize>> {
        if self.joiner.is_empty() {
            text.chars()
                .map(|c| self.token_of(c.encode_utf8(&mut [0u8; 4])))
                .collect()
        } else {
            text.split(self.joiner.as_str())
                .filter(|s| !s.is_empty())
                .map(|s| self.token_of(s))
                .collect()
        }
    }
}

/// Which conditioning context the policy is sampled under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextKind {
    Task,
    Neighborhood,
}

impl ContextKind {
    fn slot(self) -> usize {
        match self {
            ContextKind::Task => 0,
            ContextKind::Neighborhood => 1,
        }
    }
}

/// Conditioning context. The digest summarizes the exemplars a neighborhood
/// context was built from; it is always zero for the task context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContextId {
    kind: ContextKind,
    exemplar_digest: u64,
}

impl ContextId {
    pub const TASK: ContextId = ContextId {
        kind: ContextKind::Task,
        exemplar_digest: 0,
    };

    pub fn task() -> Self {
        Self::TASK
    }

    pub fn neighborhood(exemplar_digest: u64) -> Self {
        Self {
            kind: ContextKind::Neighborhood,
            exemplar_digest,
        }
    }

    pub fn kind(&self) -> ContextKind {
        self.kind
    }

    pub fn exemplar_digest(&self) -> u64 {
        self.exemplar_digest
    }
}

/// FNV-1a digest over a list of token sequences.
pub fn exemplar_digest<'a>(exemplars: impl IntoIterator<Item = &'a [usize]>) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for seq in exemplars {
        feed(seq.len() as u64);
        for &t in seq {
            feed(t as u64);
        }
    }
    h
}

/// Previous-token input of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prev {
    Start,
    Token(usize),
}

/// Indices of the three active feature slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActiveFeatures(pub [usize; 3]);

/// Policy weights `W` of shape `(F × V)` with `F = 2 + V + P`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab_size: usize,
    position_buckets: usize,
    max_len: usize,
    weights: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(vocab_size: usize, position_buckets: usize, max_len: usize) -> Result<Self, PolicyError> {
        let dim = Self::check_shape(vocab_size, position_buckets, max_len)?;
        Ok(Self {
            vocab_size,
            position_buckets,
            max_len,
            weights: vec![0.0; dim * vocab_size],
        })
    }

    pub fn from_weights(
        vocab_size: usize,
        position_buckets: usize,
        max_len: usize,
        weights: Vec<f64>,
    ) -> Result<Self, PolicyError> {
        let dim = Self::check_shape(vocab_size, position_buckets, max_len)?;
        if weights.len() != dim * vocab_size {
            return Err(PolicyError::BadShape(format!(
                "expected {} weights, got {}",
                dim * vocab_size,
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(PolicyError::NonFinite(i));
        }
        Ok(Self {
            vocab_size,
            position_buckets,
            max_len,
            weights,
        })
    }

    /// Small random weights, mostly for tests.
    pub fn random<R: Rng + ?Sized>(
        vocab_size: usize,
        position_buckets: usize,
        max_len: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(vocab_size, position_buckets, max_len)?;
        for w in &mut p.weights {
            *w = scale * (2.0 * rng.gen::<f64>() - 1.0);
        }
        Ok(p)
    }

    fn check_shape(vocab_size: usize, position_buckets: usize, max_len: usize) -> Result<usize, PolicyError> {
        if vocab_size < 2 {
            return Err(PolicyError::VocabularyTooSmall(vocab_size));
        }
        if position_buckets == 0 || max_len == 0 {
            return Err(PolicyError::BadShape(
                "position buckets and max length must be positive".into(),
            ));
        }
        Ok(CONTEXT_KINDS + vocab_size + position_buckets)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn end_token(&self) -> usize {
        self.vocab_size - 1
    }

    pub fn position_buckets(&self) -> usize {
        self.position_buckets
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn feature_dim(&self) -> usize {
        CONTEXT_KINDS + self.vocab_size + self.position_buckets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, feature: usize, token: usize) -> f64 {
        self.weights[feature * self.vocab_size + token]
    }

    /// Returns a copy with `W ← W − step` applied elementwise.
    pub fn apply_step(&self, step: &[f64]) -> Result<Self, PolicyError> {
        if step.len() != self.weights.len() {
            return Err(PolicyError::BadShape("step shape mismatch".into()));
        }
        let weights: Vec<f64> = self.weights.iter().zip(step).map(|(w, s)| w - s).collect();
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(PolicyError::NonFinite(i));
        }
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    pub fn position_bucket(&self, position: usize) -> usize {
        (position * self.position_buckets / self.max_len).min(self.position_buckets - 1)
    }

    pub fn active_features(&self, context: ContextId, prev: Prev, position: usize) -> Result<ActiveFeatures, PolicyError> {
        if position >= self.max_len {
            return Err(PolicyError::PositionOutOfRange {
                position,
                max_len: self.max_len,
            });
        }
        let prev_slot = match prev {
            Prev::Start => self.end_token(),
            Prev::Token(t) if t >= self.vocab_size => {
                return Err(PolicyError::TokenOutOfVocabulary {
                    token: t,
                    size: self.vocab_size,
                })
            }
            Prev::Token(t) if t == self.end_token() => return Err(PolicyError::EndAsPrevious),
            Prev::Token(t) => t,
        };
        Ok(ActiveFeatures([
            context.kind.slot(),
            CONTEXT_KINDS + prev_slot,
            CONTEXT_KINDS + self.vocab_size + self.position_bucket(position),
        ]))
    }

    /// Dense feature vector with exactly three ones.
    pub fn encode_features(&self, context: ContextId, prev: Prev, position: usize) -> Result<Vec<f64>, PolicyError> {
        let active = self.active_features(context, prev, position)?;
        let mut phi = vec![0.0; self.feature_dim()];
        for i in active.0 {
            phi[i] = 1.0;
        }
        Ok(phi)
    }

    fn logits_into(&self, active: ActiveFeatures, out: &mut [f64]) {
        let v = self.vocab_size;
        let [a, b, c] = active.0;
        let (ra, rb, rc) = (&self.weights[a * v..(a + 1) * v], &self.weights[b * v..(b + 1) * v], &self.weights[c * v..(c + 1) * v]);
        for t in 0..v {
            out[t] = ra[t] + rb[t] + rc[t];
        }
    }

    /// Next-token distribution at temperature 1.
    pub fn distribution(&self, context: ContextId, prev: Prev, position: usize) -> Result<Vec<f64>, PolicyError> {
        self.distribution_at(context, prev, position, 1.0)
    }

    pub fn distribution_at(
        &self,
        context: ContextId,
        prev: Prev,
        position: usize,
        temperature: f64,
    ) -> Result<Vec<f64>, PolicyError> {
        check_temperature(temperature)?;
        let active = self.active_features(context, prev, position)?;
        let mut z = vec![0.0; self.vocab_size];
        self.logits_into(active, &mut z);
        softmax_in_place(&mut z, temperature);
        Ok(z)
    }

    /// Autoregressive sample under `context`. Stops after emitting the end
    /// token or at `max_len`.
    pub fn sample<R: Rng + ?Sized>(&self, context: ContextId, temperature: f64, rng: &mut R) -> Result<Vec<usize>, PolicyError> {
        check_temperature(temperature)?;
        let mut tokens = Vec::with_capacity(self.max_len);
        let mut probs = vec![0.0; self.vocab_size];
        let mut prev = Prev::Start;
        for pos in 0..self.max_len {
            let active = self.active_features(context, prev, pos)?;
            self.logits_into(active, &mut probs);
            softmax_in_place(&mut probs, temperature);
            let tok = draw_categorical(&probs, rng);
            tokens.push(tok);
            if tok == self.end_token() {
                break;
            }
            prev = Prev::Token(tok);
        }
        Ok(tokens)
    }

    /// Draws one token at `position` given `prev`, excluding the end token.
    pub fn sample_content_token<R: Rng + ?Sized>(
        &self,
        context: ContextId,
        prev: Prev,
        position: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<usize, PolicyError> {
        let mut probs = self.distribution_at(context, prev, position, temperature)?;
        let end = self.end_token();
        probs[end] = 0.0;
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            // all mass on the end token; fall back to uniform over content
            return Ok(rng.gen_range(0..end));
        }
        for p in &mut probs {
            *p /= total;
        }
        Ok(draw_categorical(&probs, rng))
    }

    /// Checks vocabulary range, length, and end-token placement.
    pub fn validate_sequence(&self, tokens: &[usize]) -> Result<(), PolicyError> {
        if tokens.len() > self.max_len {
            return Err(PolicyError::SequenceTooLong {
                len: tokens.len(),
                max_len: self.max_len,
            });
        }
        for (i, &t) in tokens.iter().enumerate() {
            if t >= self.vocab_size {
                return Err(PolicyError::TokenOutOfVocabulary {
                    token: t,
                    size: self.vocab_size,
                });
            }
            if t == self.end_token() && i + 1 != tokens.len() {
                return Err(PolicyError::EndTokenInterior(i));
            }
        }
        Ok(())
    }

    /// Per-token log-probabilities of `tokens` under `context` at temperature 1.
    pub fn logprobs(&self, context: ContextId, tokens: &[usize]) -> Result<Vec<f64>, PolicyError> {
        self.validate_sequence(tokens)?;
        let mut z = vec![0.0; self.vocab_size];
        let mut out = Vec::with_capacity(tokens.len());
        let mut prev = Prev::Start;
        for (pos, &tok) in tokens.iter().enumerate() {
            let active = self.active_features(context, prev, pos)?;
            self.logits_into(active, &mut z);
            out.push(log_softmax_at(&z, tok));
            prev = Prev::Token(tok);
        }
        Ok(out)
    }

    /// Log-probability of a single step at temperature 1.
    pub fn logprob_step(&self, context: ContextId, prev: Prev, position: usize, token: usize) -> Result<f64, PolicyError> {
        if token >= self.vocab_size {
            return Err(PolicyError::TokenOutOfVocabulary {
                token,
                size: self.vocab_size,
            });
        }
        let active = self.active_features(context, prev, position)?;
        let mut z = vec![0.0; self.vocab_size];
        self.logits_into(active, &mut z);
        Ok(log_softmax_at(&z, token))
    }

    /// Adds `coef · ∂ log π(token | context, prev, pos) / ∂W` to `grad`, and
    /// returns that log-probability.
    pub fn accumulate_logprob_grad(
        &self,
        context: ContextId,
        prev: Prev,
        position: usize,
        token: usize,
        coef: f64,
        grad: &mut [f64],
    ) -> Result<f64, PolicyError> {
        if token >= self.vocab_size {
            return Err(PolicyError::TokenOutOfVocabulary {
                token,
                size: self.vocab_size,
            });
        }
        let active = self.active_features(context, prev, position)?;
        let v = self.vocab_size;
        let mut p = vec![0.0; v];
        self.logits_into(active, &mut p);
        let lp = log_softmax_at(&p, token);
        softmax_in_place(&mut p, 1.0);
        if coef != 0.0 {
            for &f in &active.0 {
                let row = &mut grad[f * v..(f + 1) * v];
                for t in 0..v {
                    let indicator = if t == token { 1.0 } else { 0.0 };
                    row[t] += coef * (indicator - p[t]);
                }
            }
        }
        Ok(lp)
    }

    /// Serializes as `MGP1`, then `V, F, P, maxLen` as little-endian u32,
    /// then `F × V` little-endian f64 weights row-major.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), PolicyError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.weights.len());
        out.extend_from_slice(MAGIC_PREFIX);
        out.push(FORMAT_VERSION);
        for x in [self.vocab_size, self.feature_dim(), self.position_buckets, self.max_len] {
            out.extend_from_slice(&(x as u32).to_le_bytes());
        }
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, PolicyError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        const HEADER: usize = 20;
        if bytes.len() < 4 {
            return Err(PolicyError::Truncated {
                needed: HEADER,
                got: bytes.len(),
            });
        }
        if &bytes[..3] != MAGIC_PREFIX || !bytes[3].is_ascii_digit() {
            return Err(PolicyError::BadMagic);
        }
        if bytes[3] != FORMAT_VERSION {
            return Err(PolicyError::VersionMismatch {
                found: bytes[3] as char,
                expected: FORMAT_VERSION as char,
            });
        }
        if bytes.len() < HEADER {
            return Err(PolicyError::Truncated {
                needed: HEADER,
                got: bytes.len(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (v, f, p, max_len) = (word(0), word(1), word(2), word(3));
        if f != CONTEXT_KINDS + v + p {
            return Err(PolicyError::BadShape(format!(
                "feature dim {f} != 2 + {v} + {p}"
            )));
        }
        let needed = HEADER + 8 * f * v;
        if bytes.len() < needed {
            return Err(PolicyError::Truncated {
                needed,
                got: bytes.len(),
            });
        }
        if bytes.len() > needed {
            return Err(PolicyError::TrailingBytes);
        }
        let weights = bytes[HEADER..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_weights(v, p, max_len, weights)
    }
}

fn check_temperature(t: f64) -> Result<(), PolicyError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(PolicyError::BadTemperature(t))
    }
}

fn softmax_in_place(z: &mut [f64], temperature: f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in z.iter_mut() {
        *x = ((*x - max) / temperature).exp();
        total += *x;
    }
    for x in z.iter_mut() {
        *x /= total;
    }
}

fn log_softmax_at(z: &[f64], token: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    z[token] - lse
}

fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}
