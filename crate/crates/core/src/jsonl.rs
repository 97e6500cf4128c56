//! JSON Lines readers and writers for instructions and trajectories.
//!
//! Trajectory records carry the instruction's identity and limits but not its
//! environment configuration; [`attach_configs`] rejoins them with the
//! instruction file by id.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::{Step, TaskInstruction, TaskKind, Termination, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("trajectory {0} has no matching instruction")]
    MissingInstruction(String),
}

#[derive(Serialize)]
struct TrajectoryOut<'a> {
    id: &'a str,
    task_kind: TaskKind,
    instruction: &'a str,
    max_steps: u32,
    context_budget: usize,
    reward: f64,
    termination: Termination,
    steps: &'a [Step],
}

#[derive(Deserialize)]
struct TrajectoryIn {
    id: String,
    task_kind: TaskKind,
    instruction: String,
    max_steps: u32,
    context_budget: usize,
    reward: f64,
    termination: Termination,
    steps: Vec<Step>,
}

/// One trajectory as a single JSON line (no trailing newline).
pub fn trajectory_to_line(t: &Trajectory) -> String {
    let rec = TrajectoryOut {
        id: &t.instruction.id,
        task_kind: t.instruction.task_kind,
        instruction: &t.instruction.instruction_text,
        max_steps: t.instruction.max_steps,
        context_budget: t.instruction.context_budget,
        reward: t.reward,
        termination: t.termination,
        steps: &t.steps,
    };
    serde_json::to_string(&rec).expect("trajectory serialization cannot fail")
}

/// Parses one trajectory line. The instruction's `env_config` comes back as
/// `null`.
pub fn trajectory_from_line(line: &str) -> Result<Trajectory, serde_json::Error> {
    let rec: TrajectoryIn = serde_json::from_str(line)?;
    Ok(Trajectory {
        instruction: TaskInstruction {
            id: rec.id,
            task_kind: rec.task_kind,
            instruction_text: rec.instruction,
            env_config: serde_json::Value::Null,
            max_steps: rec.max_steps,
            context_budget: rec.context_budget,
        },
        steps: rec.steps,
        reward: rec.reward,
        termination: rec.termination,
    })
}

pub fn trajectories_to_string(trajs: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajs {
        out.push_str(&trajectory_to_line(t));
        out.push('\n');
    }
    out
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<(), JsonlError> {
    write_string(path, &trajectories_to_string(trajs))
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, JsonlError> {
    read_lines(path, trajectory_from_line)
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialization cannot fail"));
        out.push('\n');
    }
    write_string(path, &out)
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    read_lines(path, |l| serde_json::from_str(l))
}

/// Restores `env_config` on trajectories read back from JSONL.
pub fn attach_configs(trajs: &mut [Trajectory], instructions: &[TaskInstruction]) -> Result<(), JsonlError> {
    let by_id: BTreeMap<&str, &TaskInstruction> = instructions.iter().map(|u| (u.id.as_str(), u)).collect();
    for t in trajs.iter_mut() {
        let u = by_id
            .get(t.instruction.id.as_str())
            .ok_or_else(|| JsonlError::MissingInstruction(t.instruction.id.clone()))?;
        t.instruction.env_config = u.env_config.clone();
    }
    Ok(())
}

pub(crate) fn write_string(path: &Path, content: &str) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(content.as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn read_lines<T>(
    path: &Path,
    mut parse: impl FnMut(&str) -> Result<T, serde_json::Error>,
) -> Result<Vec<T>, JsonlError> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Io {
            path: shown.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line).map_err(|source| JsonlError::Parse {
            path: shown.clone(),
            line: n + 1,
            source,
        })?);
    }
    Ok(out)
}
