//! Mixed-policy group construction.
//!
//! Each iteration a group is assembled from three sources, in this order:
//! on-policy samples drawn under the task context, greedy reuse of top archive
//! entries, and local proposals around the greedy exemplars (neighborhood
//! mutation or trajectory recombination). Only on-policy and local proposals
//! are new black-box evaluations.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError};
use crate::policy::{exemplar_digest, ContextId, PolicyError, PolicyParams, Prev, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("group size must be positive")]
    EmptyGroup,
    #[error("mix ({alpha}, {beta}, {gamma}) does not sum to group size {n}")]
    MixMismatch {
        alpha: usize,
        beta: usize,
        gamma: usize,
        n: usize,
    },
    #[error("top-k pool size must be at least 1")]
    ZeroTopK,
    #[error("mutation rate must lie in (0, 1], got {0}")]
    BadMutationRate(f64),
    #[error("score already set")]
    ScoreAlreadySet,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

/// Where a completion came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Online,
    Greedy,
    Ns,
    Opro,
    Warmstart,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Online => "online",
            Provenance::Greedy => "greedy",
            Provenance::Ns => "ns",
            Provenance::Opro => "opro",
            Provenance::Warmstart => "warmstart",
        }
    }

    /// Whether completions of this kind are newly generated and cost budget.
    pub fn is_fresh(&self) -> bool {
        matches!(self, Provenance::Online | Provenance::Ns | Provenance::Opro)
    }
}

/// One candidate solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub tokens: Vec<usize>,
    pub text: String,
    provenance: Provenance,
    score: Option<f64>,
    pub born_iteration: usize,
}

impl Completion {
    pub fn new(tokens: Vec<usize>, text: String, provenance: Provenance, born_iteration: usize) -> Self {
        Self {
            tokens,
            text,
            provenance,
            score: None,
            born_iteration,
        }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn score(&self) -> Option<f64> {
        self.score
    }

    /// Sets the reward. A score can be set only once.
    pub fn set_score(&mut self, score: f64) -> Result<(), SamplerError> {
        if self.score.is_some() {
            return Err(SamplerError::ScoreAlreadySet);
        }
        self.score = Some(score);
        Ok(())
    }

    /// A reused copy tagged as a greedy group member.
    pub fn as_greedy(&self) -> Self {
        Self {
            provenance: Provenance::Greedy,
            ..self.clone()
        }
    }
}

/// Composition of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    /// On-policy samples.
    pub alpha: usize,
    /// Greedy samples. When `greedy_in_group` is false they only seed the
    /// local proposals.
    pub beta: usize,
    /// Local (neighborhood or trajectory) proposals.
    pub gamma: usize,
    pub n: usize,
    pub k: usize,
    pub mutation_rate: f64,
    pub greedy_in_group: bool,
}

impl MixSpec {
    /// Training mix: `alpha + beta + gamma = n`.
    pub fn new(alpha: usize, beta: usize, gamma: usize, n: usize, k: usize, mutation_rate: f64) -> Result<Self, SamplerError> {
        let m = Self {
            alpha,
            beta,
            gamma,
            n,
            k,
            mutation_rate,
            greedy_in_group: true,
        };
        m.validate()?;
        Ok(m)
    }

    /// Inference-only mix: greedy draws serve as exemplars and stay out of
    /// the group, so `n = alpha + gamma`.
    pub fn exemplars_only(alpha: usize, exemplars: usize, gamma: usize, k: usize, mutation_rate: f64) -> Result<Self, SamplerError> {
        let m = Self {
            alpha,
            beta: exemplars,
            gamma,
            n: alpha + gamma,
            k,
            mutation_rate,
            greedy_in_group: false,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.n == 0 {
            return Err(SamplerError::EmptyGroup);
        }
        let in_group = self.alpha + self.gamma + if self.greedy_in_group { self.beta } else { 0 };
        if in_group != self.n {
            return Err(SamplerError::MixMismatch {
                alpha: self.alpha,
                beta: self.beta,
                gamma: self.gamma,
                n: self.n,
            });
        }
        if self.k == 0 {
            return Err(SamplerError::ZeroTopK);
        }
        if !(self.mutation_rate > 0.0 && self.mutation_rate <= 1.0) {
            return Err(SamplerError::BadMutationRate(self.mutation_rate));
        }
        Ok(())
    }

    /// Fresh evaluations per iteration once the archive is warm.
    pub fn fresh_per_iteration(&self) -> usize {
        self.alpha + self.gamma
    }
}

/// How local proposals are generated from exemplars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LocalSearch {
    /// Policy-conditioned mutation under the neighborhood context.
    Neighborhood,
    /// Score-weighted positional recombination over the top `m` archive entries.
    Trajectory { top_m: usize },
}

pub fn sample_online<R: Rng + ?Sized>(
    params: &PolicyParams,
    vocab: &Vocabulary,
    count: usize,
    temperature: f64,
    iteration: usize,
    rng: &mut R,
) -> Result<Vec<Completion>, SamplerError> {
    (0..count)
        .map(|_| {
            let tokens = params.sample(ContextId::task(), temperature, rng)?;
            let text = vocab.decode(&tokens);
            Ok(Completion::new(tokens, text, Provenance::Online, iteration))
        })
        .collect()
}

/// Draws `beta` members uniformly from the archive's top `k`; without
/// replacement while `beta` fits in the pool, with replacement beyond it.
pub fn select_greedy<R: Rng + ?Sized>(archive: &Archive, k: usize, beta: usize, rng: &mut R) -> Vec<Completion> {
    if beta == 0 || archive.is_empty() {
        return Vec::new();
    }
    let top = archive.topk(k);
    let picks: Vec<usize> = if beta <= top.len() {
        sample_indices(rng, top.len(), beta).into_vec()
    } else {
        (0..beta).map(|_| rng.gen_range(0..top.len())).collect()
    };
    picks.into_iter().map(|i| top[i].as_greedy()).collect()
}

/// Mutates copies of the exemplars. Every content position is resampled with
/// probability `mutation_rate` from the policy under a single neighborhood
/// context built from all exemplars; the end token is never proposed, so
/// proposals keep their exemplar's length.
pub fn propose_neighborhood<R: Rng + ?Sized>(
    params: &PolicyParams,
    vocab: &Vocabulary,
    exemplars: &[Completion],
    gamma: usize,
    mutation_rate: f64,
    temperature: f64,
    iteration: usize,
    rng: &mut R,
) -> Result<Vec<Completion>, SamplerError> {
    if gamma == 0 || exemplars.is_empty() {
        return Ok(Vec::new());
    }
    let digest = exemplar_digest(exemplars.iter().map(|c| c.tokens.as_slice()));
    let context = ContextId::neighborhood(digest);
    let end = params.end_token();
    let mut out = Vec::with_capacity(gamma);
    for _ in 0..gamma {
        let parent = &exemplars[rng.gen_range(0..exemplars.len())];
        let mut tokens = parent.tokens.clone();
        let mut prev = Prev::Start;
        for pos in 0..tokens.len() {
            if tokens[pos] != end && rng.gen::<f64>() < mutation_rate {
                tokens[pos] = params.sample_content_token(context, prev, pos, temperature, rng)?;
            }
            prev = Prev::Token(tokens[pos]);
        }
        let text = vocab.decode(&tokens);
        out.push(Completion::new(tokens, text, Provenance::Ns, iteration));
    }
    Ok(out)
}

/// Recombines the ranked parents position by position. A proposal takes its
/// length from a score-weighted parent, draws every content position from the
/// parents that reach it (score-weighted), then replaces each content token
/// with a uniform one with probability `mutation_rate`.
pub fn propose_trajectory<R: Rng + ?Sized>(
    vocab: &Vocabulary,
    top: &[Completion],
    gamma: usize,
    mutation_rate: f64,
    iteration: usize,
    rng: &mut R,
) -> Vec<Completion> {
    if gamma == 0 || top.is_empty() {
        return Vec::new();
    }
    let end = vocab.end_token();
    let bodies: Vec<&[usize]> = top
        .iter()
        .map(|c| {
            let n = c.tokens.iter().position(|&t| t == end).unwrap_or(c.tokens.len());
            &c.tokens[..n]
        })
        .collect();
    let weights: Vec<f64> = top.iter().map(|c| c.score().unwrap_or(0.0).max(0.0) + 1e-6).collect();
    let mut out = Vec::with_capacity(gamma);
    for _ in 0..gamma {
        let lead = weighted_choice(&weights, rng);
        let len = bodies[lead].len();
        let ends = top[lead].tokens.last() == Some(&end);
        let mut tokens = Vec::with_capacity(len + 1);
        for pos in 0..len {
            let cands: Vec<usize> = (0..top.len()).filter(|&i| bodies[i].len() > pos).collect();
            let w: Vec<f64> = cands.iter().map(|&i| weights[i]).collect();
            let src = cands[weighted_choice(&w, rng)];
            let mut tok = bodies[src][pos];
            if rng.gen::<f64>() < mutation_rate {
                tok = rng.gen_range(0..end);
            }
            tokens.push(tok);
        }
        if ends {
            tokens.push(end);
        }
        let text = vocab.decode(&tokens);
        out.push(Completion::new(tokens, text, Provenance::Opro, iteration));
    }
    out
}

fn weighted_choice<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// An assembled, not yet scored group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDraft {
    pub members: Vec<Completion>,
    /// True when the archive was empty and greedy/local slots were backfilled
    /// with on-policy samples.
    pub cold_start: bool,
}

impl GroupDraft {
    pub fn fresh_count(&self) -> usize {
        self.members.iter().filter(|c| c.provenance().is_fresh()).count()
    }
}

/// Builds `𝒢_t = online ⊕ greedy ⊕ local`. Missing greedy or local members
/// (empty archive) are replaced by extra on-policy samples so the group
/// always has `mix.n` members. With islands enabled, greedy exemplars come
/// from island selection instead of the global top-k.
#[allow(clippy::too_many_arguments)]
pub fn construct_group<R: Rng + ?Sized, S: Rng + ?Sized>(
    mix: &MixSpec,
    local: LocalSearch,
    params: &PolicyParams,
    vocab: &Vocabulary,
    archive: &mut Archive,
    temperature: f64,
    iteration: usize,
    rng: &mut R,
    select_rng: &mut S,
) -> Result<GroupDraft, SamplerError> {
    mix.validate()?;
    let wanted_exemplars = if mix.gamma > 0 { mix.beta.max(1) } else { mix.beta };
    let exemplars = if archive.is_empty() || wanted_exemplars == 0 {
        Vec::new()
    } else if archive.islands_enabled() {
        let mut v = Vec::with_capacity(wanted_exemplars);
        for _ in 0..wanted_exemplars {
            let pick = archive.island_select(mix.k, select_rng)?;
            v.push(archive.entries()[pick.index].as_greedy());
        }
        v
    } else {
        select_greedy(archive, mix.k, wanted_exemplars, select_rng)
    };
    let cold_start = exemplars.is_empty() && (mix.gamma > 0 || mix.beta > 0);

    let greedy: Vec<Completion> = if mix.greedy_in_group {
        exemplars.iter().take(mix.beta).cloned().collect()
    } else {
        Vec::new()
    };
    let proposals = if exemplars.is_empty() {
        Vec::new()
    } else {
        match local {
            LocalSearch::Neighborhood => propose_neighborhood(
                params,
                vocab,
                &exemplars,
                mix.gamma,
                mix.mutation_rate,
                temperature,
                iteration,
                rng,
            )?,
            LocalSearch::Trajectory { top_m } => {
                let top: Vec<Completion> = archive.topk(top_m.max(1)).into_iter().cloned().collect();
                propose_trajectory(vocab, &top, mix.gamma, mix.mutation_rate, iteration, rng)
            }
        }
    };
    let in_group_greedy = if mix.greedy_in_group { mix.beta } else { 0 };
    let backfill = (in_group_greedy - greedy.len()) + (mix.gamma - proposals.len());
    let online = sample_online(params, vocab, mix.alpha + backfill, temperature, iteration, rng)?;

    let mut members = online;
    members.extend(greedy);
    members.extend(proposals);
    debug_assert_eq!(members.len(), mix.n);
    Ok(GroupDraft { members, cold_start })
}
