//! Grid-transformation puzzles solved by programs in a tiny DSL.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TaskError;
use crate::policy::Vocabulary;

pub type Grid = Vec<Vec<u8>>;

pub const DEFAULT_STEP_LIMIT: u64 = 10_000;
pub const DEFAULT_MAX_CELLS: usize = 900;
pub const PROGRAM_MAX_LEN: usize = 10;

const OP_WORDS: [&str; 7] = ["identity", "flipH", "flipV", "rot90", "recolor", "translate", "fill_border"];
const OFFSETS: [&str; 5] = ["-2", "-1", "+0", "+1", "+2"];
const COLORS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DslError {
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("operation {op} expects {expected} at argument {arg}")]
    BadArgument { op: &'static str, arg: usize, expected: &'static str },
    #[error("operation {0} is missing arguments")]
    MissingArgument(&'static str),
    #[error("step limit {0} exceeded")]
    StepLimit(u64),
    #[error("grid is empty or ragged")]
    BadGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Identity,
    FlipH,
    FlipV,
    Rot90,
    Recolor(u8, u8),
    Translate(i32, i32),
    FillBorder(u8),
}

impl Op {
    fn apply(&self, g: &Grid) -> Grid {
        let (h, w) = (g.len(), g[0].len());
        match *self {
            Op::Identity => g.clone(),
            Op::FlipH => g.iter().map(|row| row.iter().rev().copied().collect()).collect(),
            Op::FlipV => g.iter().rev().cloned().collect(),
            // clockwise
            Op::Rot90 => (0..w).map(|c| (0..h).rev().map(|r| g[r][c]).collect()).collect(),
            Op::Recolor(a, b) => g
                .iter()
                .map(|row| row.iter().map(|&x| if x == a { b } else { x }).collect())
                .collect(),
            // cyclic, so no fill colour is introduced
            Op::Translate(dx, dy) => (0..h)
                .map(|r| {
                    (0..w)
                        .map(|c| {
                            let sr = (r as i64 - dy as i64).rem_euclid(h as i64) as usize;
                            let sc = (c as i64 - dx as i64).rem_euclid(w as i64) as usize;
                            g[sr][sc]
                        })
                        .collect()
                })
                .collect(),
            Op::FillBorder(col) => (0..h)
                .map(|r| {
                    (0..w)
                        .map(|c| if r == 0 || c == 0 || r + 1 == h || c + 1 == w { col } else { g[r][c] })
                        .collect()
                })
                .collect(),
        }
    }

    fn push_symbols(&self, out: &mut Vec<String>) {
        let off = |d: i32| OFFSETS[(d + 2) as usize].to_string();
        match *self {
            Op::Identity => out.push("identity".into()),
            Op::FlipH => out.push("flipH".into()),
            Op::FlipV => out.push("flipV".into()),
            Op::Rot90 => out.push("rot90".into()),
            Op::Recolor(a, b) => out.extend(["recolor".into(), a.to_string(), b.to_string()]),
            Op::Translate(dx, dy) => out.extend(["translate".into(), off(dx), off(dy)]),
            Op::FillBorder(c) => out.extend(["fill_border".into(), c.to_string()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct DslProgram {
    ops: Vec<Op>,
}

impl DslProgram {
    pub fn new(ops: Vec<Op>) -> Self {
        Self { ops }
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn parse_symbols<S: AsRef<str>>(symbols: &[S]) -> Result<Self, DslError> {
        let mut it = symbols.iter().map(AsRef::as_ref);
        let mut ops = Vec::new();
        let color = |op: &'static str, arg: usize, s: Option<&str>| -> Result<u8, DslError> {
            let s = s.ok_or(DslError::MissingArgument(op))?;
            COLORS
                .iter()
                .position(|c| *c == s)
                .map(|i| i as u8)
                .ok_or(DslError::BadArgument { op, arg, expected: "a colour" })
        };
        let offset = |op: &'static str, arg: usize, s: Option<&str>| -> Result<i32, DslError> {
            let s = s.ok_or(DslError::MissingArgument(op))?;
            OFFSETS
                .iter()
                .position(|c| *c == s)
                .map(|i| i as i32 - 2)
                .ok_or(DslError::BadArgument { op, arg, expected: "an offset" })
        };
        while let Some(sym) = it.next() {
            let op = match sym {
                "identity" => Op::Identity,
                "flipH" => Op::FlipH,
                "flipV" => Op::FlipV,
                "rot90" => Op::Rot90,
                "recolor" => Op::Recolor(color("recolor", 0, it.next())?, color("recolor", 1, it.next())?),
                "translate" => Op::Translate(offset("translate", 0, it.next())?, offset("translate", 1, it.next())?),
                "fill_border" => Op::FillBorder(color("fill_border", 0, it.next())?),
                other => return Err(DslError::UnknownSymbol(other.to_string())),
            };
            ops.push(op);
        }
        Ok(Self { ops })
    }

    /// Whitespace-separated program text.
    pub fn parse(text: &str) -> Result<Self, DslError> {
        Self::parse_symbols(&text.split_whitespace().collect::<Vec<_>>())
    }

    pub fn to_symbols(&self) -> Vec<String> {
        let mut out = Vec::new();
        for op in &self.ops {
            op.push_symbols(&mut out);
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.to_symbols().join(" ")
    }

    /// Each operation costs one step per cell of the grid it reads.
    pub fn run(&self, input: &Grid, step_limit: u64) -> Result<Grid, DslError> {
        check_grid(input)?;
        let mut g = input.clone();
        let mut steps = 0u64;
        for op in &self.ops {
            steps += (g.len() * g[0].len()) as u64;
            if steps > step_limit {
                return Err(DslError::StepLimit(step_limit));
            }
            g = op.apply(&g);
        }
        Ok(g)
    }
}

/// Token vocabulary for programs; symbols are joined with spaces.
pub fn grid_vocabulary() -> Vocabulary {
    let symbols = OP_WORDS.iter().chain(COLORS.iter()).chain(OFFSETS.iter()).copied();
    Vocabulary::new(symbols, "<end>", " ").expect("static vocabulary is valid")
}

fn check_grid(g: &Grid) -> Result<(), DslError> {
    let w = g.first().map_or(0, Vec::len);
    if w == 0 || g.iter().any(|r| r.len() != w) {
        return Err(DslError::BadGrid);
    }
    Ok(())
}

/// Fraction of ground-truth cells reproduced at the same coordinates.
/// Outputs larger than the truth in either dimension score 0.
pub fn pair_score(output: &Grid, truth: &Grid) -> f64 {
    let (th, tw) = (truth.len(), truth.first().map_or(0, Vec::len));
    let (oh, ow) = (output.len(), output.first().map_or(0, Vec::len));
    if oh > th || ow > tw || th * tw == 0 {
        return 0.0;
    }
    let matched: usize = output
        .iter()
        .zip(truth)
        .map(|(o, t)| o.iter().zip(t).filter(|(a, b)| a == b).count())
        .sum();
    matched as f64 / (th * tw) as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPair {
    pub input: Grid,
    pub output: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Deserialize)]
struct TaskFile {
    train: Vec<GridPair>,
    test: Vec<GridPair>,
}

#[derive(Debug, Clone)]
pub struct GridTask {
    train: Vec<GridPair>,
    test: Vec<GridPair>,
    max_cells: usize,
    step_limit: u64,
    vocab: Vocabulary,
}

impl GridTask {
    pub fn new(train: Vec<GridPair>, test: Vec<GridPair>, max_cells: usize, step_limit: u64) -> Result<Self, TaskError> {
        if step_limit == 0 {
            return Err(TaskError::Grid("step limit must be positive".into()));
        }
        if train.is_empty() || test.is_empty() {
            return Err(TaskError::Grid("train and test splits must be non-empty".into()));
        }
        for (i, p) in train.iter().chain(&test).enumerate() {
            for g in [&p.input, &p.output] {
                check_grid(g).map_err(|e| TaskError::Grid(format!("pair {i}: {e}")))?;
                if g.len() * g[0].len() > max_cells {
                    return Err(TaskError::Grid(format!("pair {i}: grid exceeds {max_cells} cells")));
                }
                if g.iter().flatten().any(|&c| c > 9) {
                    return Err(TaskError::Grid(format!("pair {i}: cell value above 9")));
                }
            }
        }
        Ok(Self {
            train,
            test,
            max_cells,
            step_limit,
            vocab: grid_vocabulary(),
        })
    }

    /// Accepts ARC-format JSON.
    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        let f: TaskFile = serde_json::from_str(text).map_err(|e| TaskError::Grid(e.to_string()))?;
        Self::new(f.train, f.test, DEFAULT_MAX_CELLS, DEFAULT_STEP_LIMIT)
    }

    pub fn load(path: &Path) -> Result<Self, TaskError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "train": self.train, "test": self.test }).to_string()
    }

    /// A random program of one to three operations applied to random
    /// inputs: three training pairs and one test pair.
    pub fn synthesize<R: Rng + ?Sized>(rng: &mut R) -> (Self, DslProgram) {
        let len = rng.gen_range(1..=3);
        let program = random_program(rng, len);
        let pair = |rng: &mut R| {
            let input = random_grid(rng, 3..=6, 6);
            let output = program.run(&input, DEFAULT_STEP_LIMIT).expect("small program fits the step limit");
            GridPair { input, output }
        };
        let train = (0..3).map(|_| pair(rng)).collect();
        let test = vec![pair(rng)];
        let task = Self::new(train, test, DEFAULT_MAX_CELLS, DEFAULT_STEP_LIMIT).expect("synthetic task is valid");
        (task, program)
    }

    pub fn with_step_limit(mut self, step_limit: u64) -> Result<Self, TaskError> {
        if step_limit == 0 {
            return Err(TaskError::Grid("step limit must be positive".into()));
        }
        self.step_limit = step_limit;
        Ok(self)
    }

    pub fn train(&self) -> &[GridPair] {
        &self.train
    }

    pub fn test(&self) -> &[GridPair] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[GridPair] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn max_cells(&self) -> usize {
        self.max_cells
    }

    pub fn step_limit(&self) -> u64 {
        self.step_limit
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        PROGRAM_MAX_LEN
    }

    /// Per-pair outputs on a split; `None` when any input fails to run.
    pub fn outputs(&self, program: &DslProgram, split: Split) -> Option<Vec<Grid>> {
        self.split(split)
            .iter()
            .map(|p| program.run(&p.input, self.step_limit).ok())
            .collect()
    }

    /// Mean matched-cell fraction over the split. Unparseable programs
    /// (`None`) and step-limit failures score 0.
    pub fn eval_program(&self, program: Option<&DslProgram>, split: Split) -> f64 {
        let Some(program) = program else { return 0.0 };
        let pairs = self.split(split);
        let total: f64 = pairs
            .iter()
            .map(|p| match program.run(&p.input, self.step_limit) {
                Ok(out) => pair_score(&out, &p.output),
                Err(_) => 0.0,
            })
            .sum();
        total / pairs.len() as f64
    }

    pub fn eval_text(&self, text: &str, split: Split) -> f64 {
        self.eval_program(DslProgram::parse(text).ok().as_ref(), split)
    }

    pub fn record(&self, text: &str) -> ProgramRecord {
        match DslProgram::parse(text) {
            Ok(p) => ProgramRecord {
                train_score: self.eval_program(Some(&p), Split::Train),
                test_outputs: self.outputs(&p, Split::Test),
            },
            Err(_) => ProgramRecord {
                train_score: 0.0,
                test_outputs: None,
            },
        }
    }
}

pub fn random_program<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DslProgram {
    let ops = (0..len)
        .map(|_| match rng.gen_range(0..7) {
            0 => Op::Identity,
            1 => Op::FlipH,
            2 => Op::FlipV,
            3 => Op::Rot90,
            4 => Op::Recolor(rng.gen_range(0..10), rng.gen_range(0..10)),
            5 => Op::Translate(rng.gen_range(-2..=2), rng.gen_range(-2..=2)),
            _ => Op::FillBorder(rng.gen_range(0..10)),
        })
        .collect();
    DslProgram::new(ops)
}

/// Sparse random grid: background 0, other cells from `1..colors`.
pub fn random_grid<R: Rng + ?Sized>(rng: &mut R, side: std::ops::RangeInclusive<usize>, colors: u8) -> Grid {
    let h = rng.gen_range(side.clone());
    let w = rng.gen_range(side);
    (0..h)
        .map(|_| {
            (0..w)
                .map(|_| if rng.gen_bool(0.6) { 0 } else { rng.gen_range(1..colors.max(2)) })
                .collect()
        })
        .collect()
}

/// A scored program with its cached test-split outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramRecord {
    pub train_score: f64,
    pub test_outputs: Option<Vec<Grid>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GridMetrics {
    pub pass_at_2: bool,
    pub oracle: bool,
}

/// pass@2 votes among train-solving programs (ties go to the output seen
/// first); oracle asks whether any program reproduces the test split.
pub fn compute_metrics(records: &[ProgramRecord], task: &GridTask) -> GridMetrics {
    let truth: Vec<Grid> = task.test().iter().map(|p| p.output.clone()).collect();
    let mut counts: HashMap<&Vec<Grid>, (usize, usize)> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.train_score == 1.0 {
            if let Some(out) = &r.test_outputs {
                counts.entry(out).or_insert((0, i)).0 += 1;
            }
        }
    }
    let mut ranked: Vec<(&Vec<Grid>, (usize, usize))> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    GridMetrics {
        pass_at_2: ranked.iter().take(2).any(|(out, _)| **out == truth),
        oracle: records.iter().any(|r| r.test_outputs.as_ref() == Some(&truth)),
    }
}
