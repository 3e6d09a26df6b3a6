use std::path::Path;
use std::time::Instant;

use log::{debug, info, warn};

use super::config::RunConfig;
use super::trace::{
    csv_string, jsonl_string, svg_string, write_files_atomically, CsvRow, IterationRecord, NewCompletion, RunStatus,
    Summary, Trace,
};
use super::HarnessError;
use crate::archive::Archive;
use crate::grpo::{update_policy, Group, LossReport};
use crate::policy::PolicyParams;
use crate::rng::{self, ISLANDS, POLICY_INIT, SAMPLING, TASK_SYNTHESIS};
use crate::sampler::{construct_group, sample_online, Completion};
use crate::tasks::words::pair_batch;
use crate::tasks::{compute_metrics, Task, TaskKind};

/// Final state of a run next to its trace.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Trace,
    pub params: PolicyParams,
    pub archive: Archive,
    pub task: Task,
}

/// Builds the task from the config's task-synthesis stream and runs it.
pub fn run(config: &RunConfig) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let task = Task::build(&config.task, config.warmstart, &mut rng::stream(config.seed, TASK_SYNTHESIS))?;
    run_with_task(config, task)
}

/// Policy-updating methods (grpo, grpo-greedy, migrate, migrate-opro).
pub fn run_search(config: &RunConfig) -> Result<RunOutcome, HarnessError> {
    if !config.method.is_ttt() {
        return Err(HarnessError::Config(format!("{} does not train the policy", config.method.as_str())));
    }
    run(config)
}

/// Inference-only baselines (random, ns, opro).
pub fn run_baseline(config: &RunConfig) -> Result<RunOutcome, HarnessError> {
    if config.method.is_ttt() {
        return Err(HarnessError::Config(format!("{} is not a baseline", config.method.as_str())));
    }
    run(config)
}

fn initial_params(config: &RunConfig, task: &Task) -> Result<PolicyParams, HarnessError> {
    let v = task.vocabulary().size();
    let max_len = task.max_len();
    let buckets = config.position_buckets.unwrap_or(max_len);
    if let Some(path) = &config.bootstrap_params {
        let p = PolicyParams::load(std::fs::File::open(path)?)?;
        if p.vocab_size() != v || p.max_len() != max_len {
            return Err(HarnessError::Config(format!(
                "bootstrap parameters have V={} maxLen={}, task needs V={v} maxLen={max_len}",
                p.vocab_size(),
                p.max_len()
            )));
        }
        return Ok(p);
    }
    if config.init_scale > 0.0 {
        let mut r = rng::stream(config.seed, POLICY_INIT);
        return Ok(PolicyParams::random(v, buckets, max_len, config.init_scale, &mut r)?);
    }
    Ok(PolicyParams::zeros(v, buckets, max_len)?)
}

fn mean_report(reports: &[LossReport]) -> (f64, f64, f64) {
    let n = reports.len() as f64;
    let sum = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    (sum(|r| r.loss), sum(|r| r.clip_low_frac), sum(|r| r.clip_high_frac))
}

fn new_entry(c: &Completion) -> NewCompletion {
    NewCompletion {
        text: c.text.clone(),
        score: c.score().unwrap_or(0.0),
        provenance: c.provenance(),
    }
}

/// Runs the budgeted loop on a prepared task: build the group, score its
/// fresh members, archive them, stop on the threshold, then update the
/// policy (training methods only).
pub fn run_with_task(config: &RunConfig, mut task: Task) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let start = Instant::now();
    let vocab = task.vocabulary().clone();
    let mut params = initial_params(config, &task)?;
    let mix = config.mix()?;
    let local = config.local_search();
    let clip = config.clip()?;
    let mut optimizer = config.optimizer();
    let mut sampling = rng::stream(config.seed, SAMPLING);
    let mut selection = rng::stream(config.seed, ISLANDS);
    let mut archive = match config.islands {
        Some(c) => Archive::with_islands(c)?,
        None => Archive::new(),
    };
    let pairs = config.word_pairs && task.kind() == TaskKind::Words;
    let reached = |best: Option<f64>| matches!((config.stop_threshold, best), (Some(t), Some(b)) if b >= t);

    let mut records = Vec::new();
    let mut found = false;
    let mut status = RunStatus::Complete;
    let mut updates = 0;

    let warm = task.warmstart();
    if !warm.is_empty() {
        found = warm.iter().any(|c| task.evaluate(&c.text).optimal);
        let new: Vec<NewCompletion> = warm.iter().map(new_entry).collect();
        if let Some(isl) = config.islands {
            for (i, c) in warm.into_iter().enumerate() {
                archive.set_cursor(i % isl.count)?;
                archive.insert(vec![c])?;
            }
            archive.set_cursor(0)?;
        } else {
            archive.insert(warm)?;
        }
        records.push(IterationRecord {
            iteration: 0,
            evaluations: archive.evaluated_count(),
            best_so_far: archive.best_score().unwrap_or(f64::NEG_INFINITY),
            loss: None,
            clip_low_frac: None,
            clip_high_frac: None,
            group_size: 0,
            cold_start: false,
            new,
        });
        if reached(archive.best_score()) {
            status = RunStatus::Stopped;
        }
    }

    let mut t = 0;
    while status == RunStatus::Complete && archive.evaluated_count() < config.budget {
        t += 1;
        let draft = construct_group(
            &mix,
            local,
            &params,
            &vocab,
            &mut archive,
            config.temperature,
            t,
            &mut sampling,
            &mut selection,
        )?;
        let mut members = draft.members;
        let fresh: Vec<usize> = (0..members.len()).filter(|&i| members[i].provenance().is_fresh()).collect();
        let remaining = config.budget - archive.evaluated_count();

        // Words scored this iteration, in evaluation order.
        let mut batch: Vec<Completion> = Vec::new();
        let truncated;
        if pairs {
            let partners = sample_online(&params, &vocab, fresh.len(), config.temperature, t, &mut sampling)?;
            let words: Vec<Completion> = fresh
                .iter()
                .zip(partners)
                .flat_map(|(&i, p)| [members[i].clone(), p])
                .collect();
            truncated = words.len() > remaining;
            for mut w in words.into_iter().take(remaining) {
                let e = task.evaluate(&w.text);
                found |= e.optimal;
                w.set_score(e.score)?;
                batch.push(w);
            }
            if !truncated {
                let scored: Vec<(String, f64)> = batch.iter().map(|c| (c.text.clone(), c.score().unwrap())).collect();
                for (slot, pair) in fresh.iter().zip(pair_batch(&scored)) {
                    members[*slot] = batch[pair.lead].clone();
                }
            }
        } else {
            truncated = fresh.len() > remaining;
            for &i in fresh.iter().take(remaining) {
                let e = task.evaluate(&members[i].text);
                found |= e.optimal;
                members[i].set_score(e.score)?;
                batch.push(members[i].clone());
            }
        }
        let new: Vec<NewCompletion> = batch.iter().map(new_entry).collect();
        archive.insert(batch)?;
        let best = archive.best_score();
        let mut record = IterationRecord {
            iteration: t,
            evaluations: archive.evaluated_count(),
            best_so_far: best.unwrap_or(f64::NEG_INFINITY),
            loss: None,
            clip_low_frac: None,
            clip_high_frac: None,
            group_size: members.len(),
            cold_start: draft.cold_start,
            new,
        };

        if truncated {
            debug!("iteration {t}: budget exhausted mid-group, skipping update");
        } else if reached(best) {
            status = RunStatus::Stopped;
        } else if config.method.is_ttt() {
            let outcome = Group::new(members, &params, t)
                .and_then(|g| update_policy(&params, &g, clip, &mut optimizer, config.mu));
            match outcome {
                Ok((p, reports)) => {
                    params = p;
                    updates += 1;
                    let (loss, lo, hi) = mean_report(&reports);
                    record.loss = Some(loss);
                    record.clip_low_frac = Some(lo);
                    record.clip_high_frac = Some(hi);
                }
                Err(e) => {
                    warn!("iteration {t}: update failed: {e}");
                    status = RunStatus::Error(e.to_string());
                }
            }
        }
        if let Some(isl) = config.islands {
            if status == RunStatus::Complete && t % isl.migration_interval == 0 {
                let copies = archive.migrate()?;
                debug!("iteration {t}: migrated {copies} entries");
            }
        }
        records.push(record);
    }

    let grid_metrics = match &task {
        Task::Grids(g) => {
            let programs: Vec<_> = records
                .iter()
                .flat_map(|r| r.new.iter())
                .map(|c| g.record(&c.text))
                .collect();
            Some(compute_metrics(&programs, g))
        }
        _ => None,
    };
    let best = archive.best();
    let summary = Summary {
        found,
        best_score: best.and_then(Completion::score).unwrap_or(f64::NEG_INFINITY),
        best_text: best.map(|c| c.text.clone()).unwrap_or_default(),
        evaluations: archive.evaluated_count(),
        iterations: t,
        updates,
        wall_time_secs: start.elapsed().as_secs_f64(),
        status,
        grid_metrics,
    };
    info!(
        "{} seed {}: best {:.4} after {} evaluations ({:?})",
        config.method.as_str(),
        config.seed,
        summary.best_score,
        summary.evaluations,
        summary.status
    );
    Ok(RunOutcome {
        trace: Trace { records, summary },
        params,
        archive,
        task,
    })
}

/// Writes the full run directory: traces, archive, parameters, best
/// completion, summary and config. Nothing is written if any file fails.
pub fn write_run_outputs(outcome: &RunOutcome, config: &RunConfig, dir: &Path) -> Result<(), HarnessError> {
    let trace = &outcome.trace;
    let rows: Vec<CsvRow> = trace.records.iter().map(CsvRow::from).collect();
    let mut archive = Vec::new();
    outcome.archive.dump_jsonl(&mut archive)?;
    let files = vec![
        ("trace.csv".to_string(), csv_string(&rows)?.into_bytes()),
        ("trace.jsonl".to_string(), jsonl_string(&trace.records)?.into_bytes()),
        ("trace.svg".to_string(), svg_string(&[(config.method.as_str(), &trace.records)]).into_bytes()),
        ("archive.jsonl".to_string(), archive),
        ("params.mgp".to_string(), outcome.params.to_bytes()),
        ("best.txt".to_string(), format!("{}\n", trace.summary.best_text).into_bytes()),
        ("summary.json".to_string(), serde_json::to_string_pretty(&trace.summary)?.into_bytes()),
        ("config.json".to_string(), config.to_json().into_bytes()),
    ];
    write_files_atomically(dir, &files)?;
    Ok(())
}
