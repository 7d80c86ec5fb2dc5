//! Seeded experiment runs and their output directory.
//!
//! ```text
//! <out>/manifest.toml          effective configuration
//! <out>/metrics.csv            algorithm,env,seed,feedback,step,return
//! <out>/seed-<s>/record.json   run record with config hash and wall clock
//! <out>/seed-<s>/preferences.jsonl
//! <out>/seed-<s>/trajectories.jsonl
//! <out>/seed-<s>/checkpoint/   network snapshots and temperatures
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use pb2_core::config::RunConfig;
use pb2_core::envs::Trajectory;
use pb2_core::population::{stream, substream, Experiment, RunRecord};
use pb2_core::teacher::{OracleTeacher, Teacher};
use serde::{Deserialize, Serialize};

use crate::formats::{
    metric_rows, trajectory_records, write_jsonl, write_metrics, Checkpoint, MetricRow,
    PreferenceLine,
};
use crate::human::Hub;
use crate::manifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub record: RunRecord,
    pub wall_clock_secs: f64,
    /// Relative path of the preference dataset.
    pub preferences: String,
}

/// The simulated teacher a manifest asks for, on its own seed substream.
pub fn oracle_for(config: &RunConfig, seed: u64) -> OracleTeacher {
    OracleTeacher::new(
        config.epsilon,
        config.strict_threshold,
        substream(seed, stream::TEACHER, 0),
    )
}

/// Copies the trainer's progress into the hub.
pub fn publish(hub: &Hub, exp: &Experiment) {
    let mut s = hub.lock();
    s.progress = exp.progress();
    s.recent = exp
        .agents()
        .iter()
        .filter_map(|a| a.latest_trajectory())
        .collect();
    s.metrics = metric_rows(&exp.record());
}

/// Runs one seed to completion and writes its artifacts under `dir`.
pub fn run_seed(
    config: &RunConfig,
    seed: u64,
    teacher: &mut dyn Teacher,
    hub: Option<Arc<Hub>>,
    dir: &Path,
) -> Result<SeedSummary> {
    let started = Instant::now();
    let mut exp = Experiment::new(config.clone(), seed)?;
    let mut record = match &hub {
        Some(h) => exp.run_observed(teacher, &mut |e| publish(h, e))?,
        None => exp.run(teacher)?,
    };
    record.config_hash = manifest::config_hash(config)?;
    let summary = SeedSummary {
        record,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        preferences: "preferences.jsonl".into(),
    };
    write_seed(&exp, &summary, dir)?;
    Ok(summary)
}

fn write_seed(exp: &Experiment, summary: &SeedSummary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_jsonl(
        &dir.join(&summary.preferences),
        exp.preferences().iter().map(PreferenceLine::from),
    )?;
    let mut episodes: BTreeMap<(usize, u64), &Trajectory> = exp
        .queried_trajectories()
        .iter()
        .map(|(k, v)| (*k, v))
        .collect();
    let latest: Vec<Trajectory> = exp
        .agents()
        .iter()
        .filter_map(|a| a.latest_trajectory())
        .collect();
    for t in &latest {
        episodes.entry((t.agent_id, t.episode)).or_insert(t);
    }
    write_jsonl(
        &dir.join("trajectories.jsonl"),
        episodes.values().flat_map(|t| trajectory_records(t, true)),
    )?;
    Checkpoint::of(exp).save(&dir.join("checkpoint"))?;
    fs::write(
        dir.join("record.json"),
        serde_json::to_string_pretty(summary)? + "\n",
    )?;
    Ok(())
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Runs every seed of `config` with the simulated teacher and writes the
/// manifest and combined metrics into `out`.
pub fn run_all(config: &RunConfig, out: &Path) -> Result<Vec<SeedSummary>> {
    config.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    manifest::save(config, &out.join("manifest.toml"))?;
    let mut summaries = Vec::new();
    let mut rows: Vec<MetricRow> = Vec::new();
    for &seed in &config.seeds {
        log::info!(
            "{} on {}: seed {seed}",
            config.algorithm.name(),
            config.env.name()
        );
        let mut teacher = oracle_for(config, seed);
        let s = run_seed(config, seed, &mut teacher, None, &seed_dir(out, seed))?;
        rows.extend(metric_rows(&s.record));
        summaries.push(s);
        write_metrics(&out.join("metrics.csv"), &rows)?;
    }
    Ok(summaries)
}

/// Every `metrics.csv` below `dir`, in path order.
pub fn collect_metrics(dir: &Path) -> Result<Vec<MetricRow>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "metrics.csv") {
                files.push(path);
            }
        }
    }
    files.sort();
    let mut rows = Vec::new();
    for f in files {
        rows.extend(crate::formats::read_metrics(&f)?);
    }
    Ok(rows)
}
