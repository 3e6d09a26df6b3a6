//! Black-box objectives: word search, a two-objective string task, and grid puzzles.

pub mod grids;
pub mod molecules;
pub mod words;

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::policy::{PolicyError, Vocabulary};
use crate::sampler::{Completion, Provenance};

pub use grids::{compute_metrics, DslProgram, GridMetrics, GridTask, ProgramRecord, Split};
pub use molecules::{scalarize, TwoObjectiveTask};
pub use words::{EmbeddingTable, SyntheticWords, WordSearchTask};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("embedding table: {0}")]
    Embedding(String),
    #[error("grid task: {0}")]
    Grid(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Words,
    Molecules,
    Grids,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Words => "words",
            TaskKind::Molecules => "molecules",
            TaskKind::Grids => "grids",
        }
    }
}

/// How to build a task instance. Synthetic parts draw from the
/// task-synthesis stream of the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Embedding file (words) or ARC-format JSON (grids).
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub words: SyntheticWords,
    #[serde(default = "default_molecule_len")]
    pub molecule_max_len: usize,
}

fn default_molecule_len() -> usize {
    24
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            file: None,
            words: SyntheticWords::default(),
            molecule_max_len: default_molecule_len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub score: f64,
    pub optimal: bool,
}

#[derive(Debug, Clone)]
pub enum Task {
    Words(WordSearchTask),
    Molecules(TwoObjectiveTask),
    Grids(GridTask),
}

impl Task {
    pub fn build<R: Rng + ?Sized>(spec: &TaskSpec, warmstart: usize, rng: &mut R) -> Result<Self, TaskError> {
        Ok(match spec.kind {
            TaskKind::Words => {
                let table = match &spec.file {
                    Some(path) => EmbeddingTable::load(std::io::BufReader::new(std::fs::File::open(path)?))?,
                    None => spec.words.generate(rng)?,
                };
                Task::Words(WordSearchTask::new(table, warmstart, rng)?)
            }
            TaskKind::Molecules => Task::Molecules(TwoObjectiveTask::new(spec.molecule_max_len, rng)?),
            TaskKind::Grids => Task::Grids(match &spec.file {
                Some(path) => GridTask::load(path)?,
                None => GridTask::synthesize(rng).0,
            }),
        })
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Task::Words(_) => TaskKind::Words,
            Task::Molecules(_) => TaskKind::Molecules,
            Task::Grids(_) => TaskKind::Grids,
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        match self {
            Task::Words(t) => t.vocabulary(),
            Task::Molecules(t) => t.vocabulary(),
            Task::Grids(t) => t.vocabulary(),
        }
    }

    pub fn max_len(&self) -> usize {
        match self {
            Task::Words(t) => t.max_len(),
            Task::Molecules(t) => t.max_len(),
            Task::Grids(t) => t.max_len(),
        }
    }

    /// Scores decoded text. Grid programs are scored on the training split.
    pub fn evaluate(&mut self, text: &str) -> Evaluation {
        match self {
            Task::Words(t) => {
                let s = t.word_reward(text);
                Evaluation {
                    score: s.score,
                    optimal: s.optimal,
                }
            }
            Task::Molecules(t) => Evaluation {
                score: t.scalarized_reward(text).score,
                optimal: false,
            },
            Task::Grids(t) => {
                let score = t.eval_text(text, Split::Train);
                Evaluation {
                    score,
                    optimal: score == 1.0,
                }
            }
        }
    }

    /// Pre-scored archive seeds; only the word task defines them.
    pub fn warmstart(&self) -> Vec<Completion> {
        let Task::Words(t) = self else { return Vec::new() };
        t.warmstart()
            .iter()
            .filter_map(|(w, s)| {
                let mut tokens = t.vocabulary().encode(w)?;
                if tokens.len() < t.max_len() {
                    tokens.push(t.vocabulary().end_token());
                }
                let mut c = Completion::new(tokens, w.clone(), Provenance::Warmstart, 0);
                c.set_score(*s).ok()?;
                Some(c)
            })
            .collect()
    }
}
