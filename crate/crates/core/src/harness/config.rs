use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::archive::IslandConfig;
use crate::grpo::{ClipConfig, Optimizer};
use crate::sampler::{LocalSearch, MixSpec};
use crate::tasks::{TaskKind, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Random,
    Ns,
    Opro,
    Grpo,
    GrpoGreedy,
    Migrate,
    MigrateOpro,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Random,
        Method::Ns,
        Method::Opro,
        Method::Grpo,
        Method::GrpoGreedy,
        Method::Migrate,
        Method::MigrateOpro,
    ];

    /// Methods that update the policy between iterations.
    pub fn is_ttt(&self) -> bool {
        matches!(self, Method::Grpo | Method::GrpoGreedy | Method::Migrate | Method::MigrateOpro)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Ns => "ns",
            Method::Opro => "opro",
            Method::Grpo => "grpo",
            Method::GrpoGreedy => "grpo-greedy",
            Method::Migrate => "migrate",
            Method::MigrateOpro => "migrate-opro",
        }
    }

    fn uses_trajectory(&self) -> bool {
        matches!(self, Method::Opro | Method::MigrateOpro)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Everything that determines a run. Two runs with equal configs produce
/// identical traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub task: TaskSpec,
    pub n: usize,
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    pub k: usize,
    pub budget: usize,
    pub warmstart: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub mu: usize,
    pub eps_low: f64,
    pub eps_high: f64,
    pub temperature: f64,
    pub mutation_rate: f64,
    pub stop_threshold: Option<f64>,
    pub islands: Option<IslandConfig>,
    pub seed: u64,
    /// Position buckets of the policy; `None` gives one bucket per position.
    #[serde(default)]
    pub position_buckets: Option<usize>,
    /// Archive entries shown to trajectory proposals.
    pub opro_top_m: usize,
    /// Word task only: score two words per fresh slot and keep the better one.
    #[serde(default)]
    pub word_pairs: bool,
    #[serde(default)]
    pub bootstrap_params: Option<PathBuf>,
    /// Initial weights are uniform in `[-init_scale, init_scale]`; 0 starts from zeros.
    #[serde(default)]
    pub init_scale: f64,
}

impl RunConfig {
    /// Per-task, per-method defaults. Mixes keep the ratios of the original
    /// experiments; magnitudes such as the learning rate are set for the
    /// toy policy.
    pub fn defaults(task: TaskKind, method: Method) -> Self {
        let (n, mu, k, budget, warmstart, stop) = match task {
            TaskKind::Words => (5, 2, 3, 1000, 20, Some(1.0)),
            TaskKind::Molecules => (5, 1, 1, 200, 0, None),
            TaskKind::Grids => (16, 1, 1, 1024, 0, None),
        };
        let (alpha, beta, gamma, opro_top_m) = match (task, method) {
            (_, Method::Random | Method::Grpo) => (n, 0, 0, 0),
            (TaskKind::Words, Method::Migrate | Method::MigrateOpro) => (0, 1, 4, 10),
            (TaskKind::Words, Method::GrpoGreedy) => (4, 1, 0, 0),
            (TaskKind::Words, Method::Ns) => (0, 1, 5, 0),
            (TaskKind::Words, Method::Opro) => (0, 0, 5, 10),
            (TaskKind::Molecules, Method::Migrate | Method::MigrateOpro) => (2, 1, 2, 5),
            (TaskKind::Molecules, Method::GrpoGreedy) => (4, 1, 0, 0),
            (TaskKind::Molecules, Method::Ns) => (3, 1, 2, 0),
            (TaskKind::Molecules, Method::Opro) => (0, 0, 5, 5),
            (TaskKind::Grids, Method::Migrate | Method::MigrateOpro) => (11, 1, 4, 1),
            (TaskKind::Grids, Method::GrpoGreedy) => (15, 1, 0, 0),
            (TaskKind::Grids, Method::Ns) => (12, 1, 4, 0),
            (TaskKind::Grids, Method::Opro) => (12, 0, 4, 1),
        };
        let n = if method.is_ttt() { n } else { alpha + gamma };
        Self {
            method,
            task: TaskSpec::new(task),
            n,
            alpha,
            beta,
            gamma,
            k,
            budget,
            warmstart,
            lr: 0.5,
            optimizer: OptimizerKind::Sgd,
            mu,
            eps_low: 0.2,
            eps_high: 0.28,
            temperature: 1.0,
            mutation_rate: 0.25,
            stop_threshold: stop,
            islands: None,
            seed: 0,
            position_buckets: None,
            opro_top_m: opro_top_m.max(1),
            word_pairs: false,
            bootstrap_params: None,
            init_scale: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        self.mix()?;
        self.clip()?;
        match self.method {
            Method::Random | Method::Grpo if self.beta != 0 || self.gamma != 0 => {
                return bad(format!("{} requires beta = gamma = 0", self.method.as_str()))
            }
            Method::GrpoGreedy if self.gamma != 0 => return bad("grpo-greedy requires gamma = 0".into()),
            Method::Opro | Method::MigrateOpro if self.gamma > 0 && self.opro_top_m == 0 => {
                return bad("trajectory proposals need opro_top_m >= 1".into())
            }
            _ => {}
        }
        if self.budget <= self.warmstart {
            return bad(format!("budget {} must exceed warmstart {}", self.budget, self.warmstart));
        }
        if self.warmstart > 0 && self.task.kind != TaskKind::Words {
            return bad("only the word task defines warmstart items".into());
        }
        if self.method.is_ttt() && (self.mu == 0 || !(self.lr.is_finite() && self.lr > 0.0)) {
            return bad("mu must be positive and lr positive and finite".into());
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad(format!("init_scale must be non-negative, got {}", self.init_scale));
        }
        if self.position_buckets == Some(0) {
            return bad("position_buckets must be positive".into());
        }
        if self.word_pairs && self.task.kind != TaskKind::Words {
            return bad("word_pairs applies to the word task only".into());
        }
        if let Some(i) = &self.islands {
            i.validate()?;
        }
        Ok(())
    }

    pub fn mix(&self) -> Result<MixSpec, HarnessError> {
        let m = if self.method.is_ttt() {
            MixSpec::new(self.alpha, self.beta, self.gamma, self.n, self.k, self.mutation_rate)?
        } else {
            let m = MixSpec::exemplars_only(self.alpha, self.beta, self.gamma, self.k, self.mutation_rate)?;
            if m.n != self.n {
                return Err(HarnessError::Config(format!(
                    "baseline group size is alpha + gamma = {}, config says {}",
                    m.n, self.n
                )));
            }
            m
        };
        Ok(m)
    }

    pub fn local_search(&self) -> LocalSearch {
        if self.method.uses_trajectory() {
            LocalSearch::Trajectory { top_m: self.opro_top_m }
        } else {
            LocalSearch::Neighborhood
        }
    }

    pub fn clip(&self) -> Result<ClipConfig, HarnessError> {
        Ok(ClipConfig::new(self.eps_low, self.eps_high)?)
    }

    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Sgd => Optimizer::sgd(self.lr),
            OptimizerKind::Adam => Optimizer::adam(self.lr),
        }
    }

    /// Changes `(alpha, beta, gamma)` and keeps `n` consistent with the method.
    pub fn with_mix(mut self, alpha: usize, beta: usize, gamma: usize) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self.gamma = gamma;
        self.n = if self.method.is_ttt() { alpha + beta + gamma } else { alpha + gamma };
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}
