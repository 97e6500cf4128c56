//! Evaluation harness: teacher-free rollouts scored by average reward and
//! completion rate, plus the noisy-versus-corrected comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{TaskInstruction, TaskKind, Trajectory};
use crate::par::ordered_map;
use crate::policy::{NoiseSchedule, NoisyPolicy, Policy};
use crate::synthesis::{run_episode, SynthesisError};
use crate::teacher::OracleTeacher;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub average_reward: f64,
    pub completion_rate: f64,
    pub n_instructions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub policy: String,
    pub seed: u64,
    pub one_shot: bool,
    /// Step limit and context budget per task kind, from the instructions.
    pub limits: BTreeMap<TaskKind, (u32, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: BTreeMap<TaskKind, TaskScore>,
    /// Mean of the per-task average rewards.
    pub overall_average: f64,
    /// Completed episodes over all episodes, pooled across tasks.
    pub pooled_completion_rate: f64,
    /// Instructions dropped because the remote endpoint failed.
    pub excluded: usize,
    pub run_manifest: EvalManifest,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no instructions to evaluate")]
    Empty,
    #[error("every instruction failed on the remote endpoint; first error: {0}")]
    AllExcluded(String),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

/// Reward an episode counts for: zero whenever a limit ended it.
pub fn scored_reward(t: &Trajectory) -> f64 {
    if t.termination.zeroes_reward() {
        0.0
    } else {
        t.reward
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores finished trajectories.
pub fn aggregate(trajs: &[Trajectory], excluded: usize, run_manifest: EvalManifest) -> EvalReport {
    let mut by_kind: BTreeMap<TaskKind, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajs {
        by_kind.entry(t.kind()).or_default().push(t);
    }
    let completed = |t: &Trajectory| t.termination.is_completion();
    let per_task: BTreeMap<TaskKind, TaskScore> = by_kind
        .into_iter()
        .map(|(kind, ts)| {
            let score = TaskScore {
                average_reward: mean(ts.iter().map(|t| scored_reward(t))),
                completion_rate: ts.iter().filter(|t| completed(t)).count() as f64 / ts.len() as f64,
                n_instructions: ts.len(),
            };
            (kind, score)
        })
        .collect();
    EvalReport {
        overall_average: mean(per_task.values().map(|s| s.average_reward)),
        pooled_completion_rate: if trajs.is_empty() {
            0.0
        } else {
            trajs.iter().filter(|t| completed(t)).count() as f64 / trajs.len() as f64
        },
        per_task,
        excluded,
        run_manifest,
    }
}

/// Runs `policy` without a teacher over every instruction.
pub fn run_eval(
    policy: &dyn Policy,
    instructions: &[TaskInstruction],
    seed: u64,
    one_shot: bool,
    parallelism: usize,
) -> Result<(EvalReport, Vec<Trajectory>), EvalError> {
    if instructions.is_empty() {
        return Err(EvalError::Empty);
    }
    let results = ordered_map(instructions, parallelism, |u| run_episode(u, policy, None));
    let mut trajs = Vec::new();
    let mut excluded = Vec::new();
    for (u, r) in instructions.iter().zip(results) {
        match r {
            Ok(ep) => trajs.push(ep.trajectory),
            Err(SynthesisError::Remote(e)) => {
                log::error!("{}: excluded from evaluation: {e}", u.id);
                excluded.push(e.to_string());
            }
            Err(e) => return Err(e.into()),
        }
    }
    if trajs.is_empty() {
        return Err(EvalError::AllExcluded(excluded.swap_remove(0)));
    }
    trajs.sort_by(|a, b| a.id().cmp(b.id()));
    let limits = instructions
        .iter()
        .map(|u| (u.task_kind, (u.max_steps, u.context_budget)))
        .collect();
    let manifest = EvalManifest {
        policy: policy.describe(),
        seed,
        one_shot,
        limits,
    };
    Ok((aggregate(&trajs, excluded.len(), manifest), trajs))
}

/// Aligned plain-text table: task, avg reward, completion rate, n.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>10} {:>15} {:>6}",
        "task", "avg reward", "completion rate", "n"
    );
    let mut total = 0;
    for (kind, s) in &report.per_task {
        total += s.n_instructions;
        let _ = writeln!(
            out,
            "{:<10} {:>10.4} {:>15.4} {:>6}",
            kind.as_str(),
            s.average_reward,
            s.completion_rate,
            s.n_instructions
        );
    }
    let _ = writeln!(
        out,
        "{:<10} {:>10.4} {:>15.4} {:>6}",
        "overall", report.overall_average, report.pooled_completion_rate, total
    );
    if report.excluded > 0 {
        let _ = writeln!(out, "excluded after remote failures: {}", report.excluded);
    }
    out
}

/// Average reward of a noisy policy alone and of the same policy with oracle
/// corrections, on identical seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherBenefit {
    pub noisy_alone: f64,
    pub corrected: f64,
}

impl TeacherBenefit {
    pub fn holds(&self) -> bool {
        self.corrected > self.noisy_alone
    }
}

pub fn teacher_benefit(
    instructions: &[TaskInstruction],
    schedule: NoiseSchedule,
    parallelism: usize,
) -> Result<TeacherBenefit, SynthesisError> {
    let policy = NoisyPolicy::new(schedule);
    let run = |teacher: bool| -> Result<f64, SynthesisError> {
        let eps = ordered_map(instructions, parallelism, |u| {
            run_episode(u, &policy, teacher.then_some(&OracleTeacher as _))
        });
        let rewards = eps
            .into_iter()
            .map(|e| e.map(|e| scored_reward(&e.trajectory)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(mean(rewards.into_iter()))
    };
    Ok(TeacherBenefit {
        noisy_alone: run(false)?,
        corrected: run(true)?,
    })
}
