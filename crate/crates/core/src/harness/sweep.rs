//! Grid sweeps over mixes, mutation rate and exploit probability.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::run;
use super::HarnessError;

/// One grid point. Unset fields keep the base config's value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    #[serde(default)]
    pub mutation_rate: Option<f64>,
    /// Island exploit probability; enables default islands when set.
    #[serde(default)]
    pub exploit_prob: Option<f64>,
}

impl SweepPoint {
    pub fn mix(alpha: usize, beta: usize, gamma: usize) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            mutation_rate: None,
            exploit_prob: None,
        }
    }

    pub fn apply(&self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut c = base.clone().with_mix(self.alpha, self.beta, self.gamma);
        c.seed = seed;
        if let Some(m) = self.mutation_rate {
            c.mutation_rate = m;
        }
        if let Some(p) = self.exploit_prob {
            let mut isl = c.islands.unwrap_or_default();
            isl.exploit_prob = p;
            c.islands = Some(isl);
        }
        c
    }

    fn label(&self) -> String {
        format!("({},{},{})", self.alpha, self.beta, self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    pub mutation_rate: f64,
    pub exploit_prob: Option<f64>,
    pub seed: u64,
    pub final_best: f64,
    pub found: bool,
    pub evaluations: usize,
    /// Best-so-far at each checkpoint, `None` before the first evaluation.
    pub checkpoints: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub point: usize,
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    pub runs: usize,
    pub mean_best: f64,
    pub std_best: f64,
    pub found_rate: f64,
    pub checkpoint_mean: Vec<f64>,
    pub checkpoint_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub checkpoints: Vec<usize>,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummaryRow>,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Thread cap from `MIGRATE_THREADS`; unset or invalid means rayon's default.
pub fn thread_cap() -> Option<usize> {
    std::env::var("MIGRATE_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

/// Quarter points of the budget.
pub fn default_checkpoints(budget: usize) -> Vec<usize> {
    (1..=4).map(|q| budget * q / 4).collect()
}

/// Runs every (point, seed) pair. Invalid points are skipped with a
/// warning; rows come back ordered by point, then seed.
pub fn sweep(base: &RunConfig, points: &[SweepPoint], seeds: &[u64], checkpoints: &[usize]) -> Result<SweepResult, HarnessError> {
    if seeds.is_empty() {
        warn!("sweep called with no seeds; returning an empty table");
        return Ok(SweepResult {
            checkpoints: checkpoints.to_vec(),
            ..SweepResult::default()
        });
    }
    let mut jobs = Vec::new();
    for (pi, p) in points.iter().enumerate() {
        match p.apply(base, seeds[0]).validate() {
            Ok(()) => jobs.extend(seeds.iter().map(|&s| (pi, s))),
            Err(e) => warn!("skipping grid point {} {}: {e}", pi, p.label()),
        }
    }
    let exec = || -> Vec<Result<SweepRow, HarnessError>> {
        jobs.par_iter()
            .map(|&(pi, seed)| {
                let cfg = points[pi].apply(base, seed);
                let out = run(&cfg)?;
                let s = &out.trace.summary;
                Ok(SweepRow {
                    point: pi,
                    alpha: cfg.alpha,
                    beta: cfg.beta,
                    gamma: cfg.gamma,
                    mutation_rate: cfg.mutation_rate,
                    exploit_prob: cfg.islands.map(|i| i.exploit_prob),
                    seed,
                    final_best: s.best_score,
                    found: s.found,
                    evaluations: s.evaluations,
                    checkpoints: checkpoints.iter().map(|&c| out.trace.best_at(c)).collect(),
                })
            })
            .collect()
    };
    let results = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(exec),
        None => exec(),
    };
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&rows, checkpoints.len());
    Ok(SweepResult {
        checkpoints: checkpoints.to_vec(),
        rows,
        summary,
    })
}

pub fn summarize(rows: &[SweepRow], n_checkpoints: usize) -> Vec<SweepSummaryRow> {
    let mut points: Vec<usize> = rows.iter().map(|r| r.point).collect();
    points.dedup();
    points
        .into_iter()
        .map(|p| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.point == p).collect();
            let finals: Vec<f64> = group.iter().map(|r| r.final_best).collect();
            let (mean_best, std_best) = mean_std(&finals);
            let (checkpoint_mean, checkpoint_std) = (0..n_checkpoints)
                .map(|c| mean_std(&group.iter().filter_map(|r| r.checkpoints[c]).collect::<Vec<_>>()))
                .unzip();
            SweepSummaryRow {
                point: p,
                alpha: group[0].alpha,
                beta: group[0].beta,
                gamma: group[0].gamma,
                runs: group.len(),
                mean_best,
                std_best,
                found_rate: group.iter().filter(|r| r.found).count() as f64 / group.len() as f64,
                checkpoint_mean,
                checkpoint_std,
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn rows_csv(result: &SweepResult) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "point", "alpha", "beta", "gamma", "mutation_rate", "exploit_prob", "seed", "final_best", "found", "evaluations",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(result.checkpoints.iter().map(|c| format!("best_at_{c}")));
    w.write_record(&header)?;
    for r in &result.rows {
        let mut rec = vec![
            r.point.to_string(),
            r.alpha.to_string(),
            r.beta.to_string(),
            r.gamma.to_string(),
            r.mutation_rate.to_string(),
            fmt_opt(r.exploit_prob),
            r.seed.to_string(),
            r.final_best.to_string(),
            r.found.to_string(),
            r.evaluations.to_string(),
        ];
        rec.extend(r.checkpoints.iter().map(|&c| fmt_opt(c)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

pub fn summary_csv(result: &SweepResult) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["point", "alpha", "beta", "gamma", "runs", "mean_best", "std_best", "found_rate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for c in &result.checkpoints {
        header.push(format!("mean_at_{c}"));
        header.push(format!("std_at_{c}"));
    }
    w.write_record(&header)?;
    for s in &result.summary {
        let mut rec = vec![
            s.point.to_string(),
            s.alpha.to_string(),
            s.beta.to_string(),
            s.gamma.to_string(),
            s.runs.to_string(),
            s.mean_best.to_string(),
            s.std_best.to_string(),
            s.found_rate.to_string(),
        ];
        for (m, sd) in s.checkpoint_mean.iter().zip(&s.checkpoint_std) {
            rec.push(m.to_string());
            rec.push(sd.to_string());
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}
