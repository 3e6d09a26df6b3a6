//! Completion database with top-k retrieval, budget accounting and an
//! optional island partition.
//!
//! With islands enabled every entry belongs to exactly one island. Inserts go
//! to the island under the cursor; selection walks the islands cyclically;
//! migration copies each island's elite into its ring successor.

use std::cmp::Ordering;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::{Completion, Provenance};

#[derive(Debug, Error, PartialEq)]
pub enum ArchiveError {
    #[error("completion {0} is unscored")]
    Unscored(usize),
    #[error("completion {0} is a greedy reuse and cannot be inserted")]
    GreedyInsert(usize),
    #[error("non-finite score at completion {0}")]
    NonFiniteScore(usize),
    #[error("islands are not enabled")]
    IslandsDisabled,
    #[error("all islands are empty")]
    AllIslandsEmpty,
    #[error("invalid island configuration: {0}")]
    BadIslandConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IslandConfig {
    pub count: usize,
    pub exploit_prob: f64,
    pub migration_interval: usize,
    pub migration_fraction: f64,
}

impl Default for IslandConfig {
    fn default() -> Self {
        Self {
            count: 4,
            exploit_prob: 0.7,
            migration_interval: 10,
            migration_fraction: 0.25,
        }
    }
}

impl IslandConfig {
    pub fn validate(&self) -> Result<(), ArchiveError> {
        if self.count == 0 {
            return Err(ArchiveError::BadIslandConfig("need at least one island".into()));
        }
        if !(0.0..=1.0).contains(&self.exploit_prob) {
            return Err(ArchiveError::BadIslandConfig(format!("exploit probability {}", self.exploit_prob)));
        }
        if !(0.0..=1.0).contains(&self.migration_fraction) {
            return Err(ArchiveError::BadIslandConfig(format!(
                "migration fraction {}",
                self.migration_fraction
            )));
        }
        if self.migration_interval == 0 {
            return Err(ArchiveError::BadIslandConfig("migration interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Islands {
    config: IslandConfig,
    island_of: Vec<usize>,
    cursor: usize,
}

/// Which branch of island selection produced an exemplar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPath {
    Exploit,
    Explore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IslandPick {
    pub index: usize,
    pub island: usize,
    /// Branch chosen by the coin flip.
    pub intended: SelectionPath,
    /// Branch that actually produced the entry after any fallback.
    pub path: SelectionPath,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    entries: Vec<Completion>,
    evaluated: usize,
    best: Option<usize>,
    islands: Option<Islands>,
}

/// Descending score, then earlier birth iteration, then insertion order.
fn rank(entries: &[Completion], a: usize, b: usize) -> Ordering {
    let (sa, sb) = (entries[a].score().unwrap(), entries[b].score().unwrap());
    sb.partial_cmp(&sa)
        .unwrap_or(Ordering::Equal)
        .then(entries[a].born_iteration.cmp(&entries[b].born_iteration))
        .then(a.cmp(&b))
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_islands(config: IslandConfig) -> Result<Self, ArchiveError> {
        config.validate()?;
        Ok(Self {
            islands: Some(Islands {
                config,
                island_of: Vec::new(),
                cursor: 0,
            }),
            ..Self::default()
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Completion] {
        &self.entries
    }

    /// Number of inserted (newly evaluated) completions; migration copies do
    /// not count.
    pub fn evaluated_count(&self) -> usize {
        self.evaluated
    }

    pub fn best(&self) -> Option<&Completion> {
        self.best.map(|i| &self.entries[i])
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best().and_then(Completion::score)
    }

    pub fn islands_enabled(&self) -> bool {
        self.islands.is_some()
    }

    pub fn island_config(&self) -> Option<&IslandConfig> {
        self.islands.as_ref().map(|i| &i.config)
    }

    pub fn island_of(&self, index: usize) -> Option<usize> {
        self.islands.as_ref().map(|i| i.island_of[index])
    }

    pub fn cursor(&self) -> Option<usize> {
        self.islands.as_ref().map(|i| i.cursor)
    }

    pub fn set_cursor(&mut self, island: usize) -> Result<(), ArchiveError> {
        let isl = self.islands.as_mut().ok_or(ArchiveError::IslandsDisabled)?;
        if island >= isl.config.count {
            return Err(ArchiveError::BadIslandConfig(format!("island {island} out of range")));
        }
        isl.cursor = island;
        Ok(())
    }

    /// Entry indices of each island.
    pub fn island_members(&self) -> Result<Vec<Vec<usize>>, ArchiveError> {
        let isl = self.islands.as_ref().ok_or(ArchiveError::IslandsDisabled)?;
        let mut members = vec![Vec::new(); isl.config.count];
        for (i, &j) in isl.island_of.iter().enumerate() {
            members[j].push(i);
        }
        Ok(members)
    }

    /// Adds newly scored completions. Greedy reuses are rejected; the whole
    /// batch is validated before anything is stored.
    pub fn insert(&mut self, completions: Vec<Completion>) -> Result<(), ArchiveError> {
        for (i, c) in completions.iter().enumerate() {
            match c.score() {
                None => return Err(ArchiveError::Unscored(i)),
                Some(s) if !s.is_finite() => return Err(ArchiveError::NonFiniteScore(i)),
                _ => {}
            }
            if c.provenance() == Provenance::Greedy {
                return Err(ArchiveError::GreedyInsert(i));
            }
        }
        self.evaluated += completions.len();
        for c in completions {
            self.push_entry(c, None);
        }
        Ok(())
    }

    fn push_entry(&mut self, c: Completion, island: Option<usize>) {
        let idx = self.entries.len();
        self.entries.push(c);
        if let Some(isl) = self.islands.as_mut() {
            isl.island_of.push(island.unwrap_or(isl.cursor));
        }
        let better = match self.best {
            None => true,
            Some(b) => rank(&self.entries, idx, b) == Ordering::Less,
        };
        if better {
            self.best = Some(idx);
        }
    }

    fn ranked_indices(&self, pool: impl Iterator<Item = usize>) -> Vec<usize> {
        let mut idx: Vec<usize> = pool.collect();
        idx.sort_by(|&a, &b| rank(&self.entries, a, b));
        idx
    }

    pub fn topk_indices(&self, k: usize) -> Vec<usize> {
        let mut idx = self.ranked_indices(0..self.entries.len());
        idx.truncate(k);
        idx
    }

    /// The `k` best entries, best first.
    pub fn topk(&self, k: usize) -> Vec<&Completion> {
        self.topk_indices(k).into_iter().map(|i| &self.entries[i]).collect()
    }

    /// Advances the cursor to the next non-empty island and picks an exemplar
    /// there. With probability `exploit_prob` the pick is uniform over the
    /// island's members that are also in the global top `k`; otherwise (or
    /// when there are none) it is uniform over the island's best
    /// `min(k, ·)` members outside the global top `k`. An island holding only
    /// global top-`k` members falls back to the exploit pool.
    pub fn island_select<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<IslandPick, ArchiveError> {
        let members = self.island_members()?;
        let isl = self.islands.as_ref().unwrap();
        let count = isl.config.count;
        let start = isl.cursor;
        let island = (1..=count)
            .map(|step| (start + step) % count)
            .find(|&j| !members[j].is_empty())
            .ok_or(ArchiveError::AllIslandsEmpty)?;
        let exploit_prob = isl.config.exploit_prob;

        let global: Vec<usize> = self.topk_indices(k.max(1));
        let in_global = |i: &usize| global.contains(i);
        let exploit_pool: Vec<usize> = members[island].iter().copied().filter(in_global).collect();
        let mut explore_pool: Vec<usize> = self.ranked_indices(members[island].iter().copied().filter(|i| !in_global(i)));
        explore_pool.truncate(k.max(1));

        let intended = if rng.gen::<f64>() < exploit_prob {
            SelectionPath::Exploit
        } else {
            SelectionPath::Explore
        };
        let path = match intended {
            SelectionPath::Exploit if !exploit_pool.is_empty() => SelectionPath::Exploit,
            SelectionPath::Explore if explore_pool.is_empty() => SelectionPath::Exploit,
            _ => SelectionPath::Explore,
        };
        let pool = match path {
            SelectionPath::Exploit => &exploit_pool,
            SelectionPath::Explore => &explore_pool,
        };
        let index = pool[rng.gen_range(0..pool.len())];
        self.islands.as_mut().unwrap().cursor = island;
        Ok(IslandPick {
            index,
            island,
            intended,
            path,
        })
    }

    /// Copies the top `⌈fraction · |island j|⌉` entries of every island `j`
    /// into island `(j + 1) mod I`. Returns the number of copies made.
    pub fn migrate(&mut self) -> Result<usize, ArchiveError> {
        let members = self.island_members()?;
        let config = self.islands.as_ref().unwrap().config;
        let mut moves = Vec::new();
        for (j, m) in members.iter().enumerate() {
            let take = (config.migration_fraction * m.len() as f64).ceil() as usize;
            let ranked = self.ranked_indices(m.iter().copied());
            for &i in ranked.iter().take(take) {
                moves.push((i, (j + 1) % config.count));
            }
        }
        for &(i, dest) in &moves {
            let copy = self.entries[i].clone();
            self.push_entry(copy, Some(dest));
        }
        Ok(moves.len())
    }

    /// One JSON object per entry: text, score, provenance, iteration, island.
    pub fn dump_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, c) in self.entries.iter().enumerate() {
            let rec = DumpRecord {
                text: &c.text,
                score: c.score().unwrap_or(f64::NAN),
                provenance: c.provenance(),
                iteration: c.born_iteration,
                island: self.island_of(i),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    text: &'a str,
    score: f64,
    provenance: Provenance,
    iteration: usize,
    island: Option<usize>,
}
