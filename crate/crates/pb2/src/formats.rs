//! On-disk formats: trajectory and preference JSONL, metrics CSV and
//! network checkpoints.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use pb2_core::envs::Trajectory;
use pb2_core::nn::Mlp;
use pb2_core::population::{Experiment, RunRecord};
use pb2_core::rewardmodel::{Label, PreferenceRecord, SegmentRef, TeacherTag};
use pb2_core::sac::SacAgent;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

/// One environment step of the trajectory export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub agent_id: usize,
    pub episode: u64,
    pub t: usize,
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    /// Withheld when serving a human teacher.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_gt: Option<f64>,
}

pub fn trajectory_records(traj: &Trajectory, with_reward: bool) -> Vec<TrajectoryRecord> {
    traj.steps
        .iter()
        .map(|s| TrajectoryRecord {
            agent_id: traj.agent_id,
            episode: traj.episode,
            t: s.t,
            s: s.state.clone(),
            a: s.action.clone(),
            r_gt: with_reward.then_some(s.reward_gt),
        })
        .collect()
}

/// Planar positions of the states `start..start + len` of one exported
/// episode, which is what a segment reference resolves to.
pub fn segment_points(records: &[TrajectoryRecord], seg: &SegmentRef) -> Result<Vec<[f32; 2]>> {
    let mut steps: Vec<&TrajectoryRecord> = records
        .iter()
        .filter(|r| r.agent_id == seg.agent_id && r.episode == seg.episode)
        .filter(|r| r.t >= seg.start as usize && r.t < (seg.start + seg.len) as usize)
        .collect();
    steps.sort_by_key(|r| r.t);
    if steps.len() != seg.len as usize {
        bail!(
            "segment {seg:?} resolves to {} of {} steps in the trajectory export",
            steps.len(),
            seg.len
        );
    }
    Ok(steps.iter().map(|r| [r.s[0], r.s[1]]).collect())
}

/// One line of the preference dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceLine {
    pub iter: u32,
    pub teacher: TeacherTag,
    pub seg0_ref: SegmentRef,
    pub seg1_ref: SegmentRef,
    pub y: Label,
}

impl From<&PreferenceRecord> for PreferenceLine {
    fn from(p: &PreferenceRecord) -> Self {
        Self {
            iter: p.iter,
            teacher: p.teacher,
            seg0_ref: p.seg0.source,
            seg1_ref: p.seg1.source,
            y: p.label,
        }
    }
}

/// One evaluation point of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub algorithm: String,
    pub env: String,
    pub seed: u64,
    pub feedback: usize,
    pub step: u64,
    #[serde(rename = "return")]
    pub ret: f64,
}

pub fn metric_rows(record: &RunRecord) -> Vec<MetricRow> {
    record
        .points
        .iter()
        .map(|p| MetricRow {
            algorithm: record.algorithm.name().to_string(),
            env: record.env.name().to_string(),
            seed: record.seed,
            feedback: p.feedback,
            step: p.step,
            ret: p.ret,
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r =
        BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// Networks and temperatures of every agent, keyed by agent id.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub agents: BTreeMap<usize, AgentCheckpoint>,
    pub reward: Vec<Mlp<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentCheckpoint {
    pub actor: Mlp<f32>,
    pub critics: [Mlp<f32>; 2],
    pub targets: [Mlp<f32>; 2],
    pub log_alpha: f32,
}

impl AgentCheckpoint {
    pub fn of(sac: &SacAgent<f32>) -> Self {
        Self {
            actor: sac.actor().clone(),
            critics: sac.critics().clone(),
            targets: sac.targets().clone(),
            log_alpha: sac.log_alpha(),
        }
    }

    /// Loads the stored parameters into an agent of the same shape.
    pub fn restore(&self, sac: &mut SacAgent<f32>) -> Result<()> {
        sac.actor_mut().copy_params_from(&self.actor)?;
        for k in 0..2 {
            sac.critics_mut()[k].copy_params_from(&self.critics[k])?;
            sac.targets_mut()[k].copy_params_from(&self.targets[k])?;
        }
        sac.set_log_alpha(self.log_alpha);
        Ok(())
    }
}

impl Checkpoint {
    pub fn of(exp: &Experiment) -> Self {
        Self {
            agents: exp
                .agents()
                .iter()
                .map(|a| (a.id, AgentCheckpoint::of(&a.sac)))
                .collect(),
            reward: exp.reward_model().members().to_vec(),
        }
    }

    /// Writes `agent-<id>.{actor,critic-k,target-k}.snap`, `reward-<m>.snap`
    /// and `temperature.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut temps = BTreeMap::new();
        for (id, a) in &self.agents {
            fs::write(
                dir.join(format!("agent-{id}.actor.snap")),
                a.actor.to_bytes(),
            )?;
            for k in 0..2 {
                fs::write(
                    dir.join(format!("agent-{id}.critic-{k}.snap")),
                    a.critics[k].to_bytes(),
                )?;
                fs::write(
                    dir.join(format!("agent-{id}.target-{k}.snap")),
                    a.targets[k].to_bytes(),
                )?;
            }
            temps.insert(id.to_string(), a.log_alpha);
        }
        for (m, net) in self.reward.iter().enumerate() {
            fs::write(dir.join(format!("reward-{m}.snap")), net.to_bytes())?;
        }
        fs::write(
            dir.join("temperature.json"),
            serde_json::to_string_pretty(&Temperatures { log_alpha: temps })? + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(dir.join("temperature.json")).context("reading temperature.json")?;
        let temps: Temperatures = serde_json::from_str(&text)?;
        let snap = |name: String| -> Result<Mlp<f32>> {
            let bytes = fs::read(dir.join(&name)).with_context(|| format!("reading {name}"))?;
            Mlp::from_bytes(&bytes).with_context(|| format!("decoding {name}"))
        };
        let mut agents = BTreeMap::new();
        for (id, log_alpha) in temps.log_alpha {
            let id: usize = id.parse().context("agent id in temperature.json")?;
            agents.insert(
                id,
                AgentCheckpoint {
                    actor: snap(format!("agent-{id}.actor.snap"))?,
                    critics: [
                        snap(format!("agent-{id}.critic-0.snap"))?,
                        snap(format!("agent-{id}.critic-1.snap"))?,
                    ],
                    targets: [
                        snap(format!("agent-{id}.target-0.snap"))?,
                        snap(format!("agent-{id}.target-1.snap"))?,
                    ],
                    log_alpha,
                },
            );
        }
        let mut reward = Vec::new();
        while dir.join(format!("reward-{}.snap", reward.len())).exists() {
            reward.push(snap(format!("reward-{}.snap", reward.len()))?);
        }
        Ok(Self { agents, reward })
    }
}

#[derive(Serialize, Deserialize)]
struct Temperatures {
    log_alpha: BTreeMap<String, f32>,
}
