//! Initialize a grid run from the parameters of the most similar solved run.

use std::path::{Path, PathBuf};

use log::warn;

use super::config::RunConfig;
use super::HarnessError;
use crate::tasks::{DslProgram, GridTask, Split};

/// A finished run that can lend its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Donor {
    pub name: String,
    pub program: String,
    pub params_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapChoice {
    pub config: RunConfig,
    /// Index into the donor list, `None` on fallback.
    pub chosen: Option<usize>,
    /// Train-split reward of each donor's program; `None` if unparseable.
    pub rewards: Vec<Option<f64>>,
}

/// Reads run directories (as written by `write_run_outputs`) under `dir`,
/// in name order. Directories without `best.txt` and `params.mgp` are skipped.
pub fn load_donors(dir: &Path) -> Result<Vec<Donor>, HarnessError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut donors = Vec::new();
    for d in entries {
        let (best, params) = (d.join("best.txt"), d.join("params.mgp"));
        if !(best.is_file() && params.is_file()) {
            warn!("skipping {}: missing best.txt or params.mgp", d.display());
            continue;
        }
        donors.push(Donor {
            name: d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            program: std::fs::read_to_string(&best)?.trim().to_string(),
            params_path: params,
        });
    }
    Ok(donors)
}

/// Scores every donor program on the new task's training pairs and points
/// the config at the parameters of the best one (earliest on ties). Falls
/// back to fresh parameters when no donor program parses.
pub fn bootstrap_nearest(unsolved: &GridTask, base: &RunConfig, donors: &[Donor]) -> BootstrapChoice {
    let rewards: Vec<Option<f64>> = donors
        .iter()
        .map(|d| {
            DslProgram::parse(&d.program)
                .ok()
                .map(|p| unsolved.eval_program(Some(&p), Split::Train))
        })
        .collect();
    let mut chosen: Option<usize> = None;
    for (i, r) in rewards.iter().enumerate() {
        if let Some(r) = r {
            if chosen.map_or(true, |c| *r > rewards[c].unwrap()) {
                chosen = Some(i);
            }
        }
    }
    let mut config = base.clone();
    match chosen {
        Some(i) => config.bootstrap_params = Some(donors[i].params_path.clone()),
        None => {
            warn!("no donor program parses; starting from fresh parameters");
            config.bootstrap_params = None;
        }
    }
    BootstrapChoice { config, chosen, rewards }
}
