//! Shared domain types: task instructions, steps, trajectories, teacher verdicts
//! and the dataset split produced by the pipeline.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Family of environment a task belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Household,
    Shopping,
    /// Reserved for third-party environments; no simulator ships for it.
    Science,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Household, TaskKind::Shopping, TaskKind::Science];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Household => "household",
            TaskKind::Shopping => "shopping",
            TaskKind::Science => "science",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "household" => Ok(TaskKind::Household),
            "shopping" => Ok(TaskKind::Shopping),
            "science" => Ok(TaskKind::Science),
            other => Err(format!("unknown task kind `{other}`")),
        }
    }
}

/// One agent task: the instruction shown to the policy plus the environment
/// parameters needed to instantiate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstruction {
    pub id: String,
    pub task_kind: TaskKind,
    pub instruction_text: String,
    /// Opaque per-environment parameters; each environment parses its own schema.
    pub env_config: serde_json::Value,
    pub max_steps: u32,
    /// Transcript budget in characters.
    pub context_budget: usize,
}

impl TaskInstruction {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push("instruction id is empty".to_string());
        }
        if self.max_steps < 1 {
            out.push(format!("instruction {}: max_steps must be >= 1", self.id));
        }
        if self.context_budget < 1 {
            out.push(format!("instruction {}: context_budget must be >= 1", self.id));
        }
        out
    }
}

/// Who produced a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOrigin {
    Golden,
    BasePolicy,
    TeacherCorrection,
}

/// One (thought, action, observation) triple.
///
/// `delta` is the learnable flag: `true` for steps that contribute to the
/// training loss, `false` for steps the teacher marked as erroneous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    #[serde(rename = "i")]
    pub index: u32,
    pub thought: String,
    pub action: String,
    pub observation: String,
    pub delta: bool,
    pub origin: StepOrigin,
}

impl Step {
    pub fn new(
        index: u32,
        thought: impl Into<String>,
        action: impl Into<String>,
        observation: impl Into<String>,
        origin: StepOrigin,
    ) -> Self {
        Step {
            index,
            thought: thought.into(),
            action: action.into(),
            observation: observation.into(),
            delta: true,
            origin,
        }
    }

    pub fn is_error(&self) -> bool {
        !self.delta
    }
}

/// Why an episode stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The environment finished the episode with full reward.
    Success,
    /// The environment finished the episode with a graded reward below 1.
    EnvDonePartial,
    StepLimit,
    ContextLimit,
    /// The episode was abandoned (unusable model output or a runaway error streak).
    Aborted,
}

impl Termination {
    /// Terminations that force a zero reward.
    pub fn zeroes_reward(self) -> bool {
        matches!(
            self,
            Termination::StepLimit | Termination::ContextLimit | Termination::Aborted
        )
    }

    /// Terminations reached through the environment's own `done` signal.
    pub fn is_completion(self) -> bool {
        matches!(self, Termination::Success | Termination::EnvDonePartial)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub instruction: TaskInstruction,
    pub steps: Vec<Step>,
    pub reward: f64,
    pub termination: Termination,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn id(&self) -> &str {
        &self.instruction.id
    }

    pub fn kind(&self) -> TaskKind {
        self.instruction.task_kind
    }

    pub fn error_count(&self) -> usize {
        self.steps.iter().filter(|s| s.is_error()).count()
    }

    pub fn error_indices(&self) -> Vec<u32> {
        self.steps.iter().filter(|s| s.is_error()).map(|s| s.index).collect()
    }
}

/// Checks every trajectory invariant and returns one message per violation.
pub fn validate_trajectory(traj: &Trajectory) -> Vec<String> {
    let mut out = traj.instruction.validate();
    let n = traj.steps.len();

    for (pos, step) in traj.steps.iter().enumerate() {
        let expected = pos as u32 + 1;
        if step.index != expected {
            out.push(format!(
                "step at position {pos} has index {} (expected {expected})",
                step.index
            ));
        }
        if step.thought.trim().is_empty() {
            out.push(format!("step {}: thought is empty", step.index));
        }
        if step.action.trim().is_empty() {
            out.push(format!("step {}: action is empty", step.index));
        }
        if !step.delta && step.origin != StepOrigin::BasePolicy {
            out.push(format!(
                "step {}: {:?} step cannot be marked erroneous",
                step.index, step.origin
            ));
        }
        if !step.delta && pos + 1 < n {
            let next = &traj.steps[pos + 1];
            if next.origin != StepOrigin::TeacherCorrection {
                out.push(format!(
                    "step {}: erroneous step is not followed by a teacher correction",
                    step.index
                ));
            }
        }
    }

    if !(0.0..=1.0).contains(&traj.reward) || traj.reward.is_nan() {
        out.push(format!("reward {} outside [0, 1]", traj.reward));
    }
    if traj.termination.zeroes_reward() && traj.reward != 0.0 {
        out.push(format!(
            "termination {:?} requires reward 0, found {}",
            traj.termination, traj.reward
        ));
    }
    let full = traj.reward == 1.0;
    let success = traj.termination == Termination::Success;
    if full != success {
        out.push(format!(
            "reward {} inconsistent with termination {:?}",
            traj.reward, traj.termination
        ));
    }
    out
}

/// Teacher judgment of one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Correct,
    Error(ErrorReport),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub error_content: String,
    pub error_reason: String,
    pub reflection: String,
    pub corrective_action: String,
}

impl ErrorReport {
    pub fn is_complete(&self) -> bool {
        [
            &self.error_content,
            &self.error_reason,
            &self.reflection,
            &self.corrective_action,
        ]
        .iter()
        .all(|s| !s.trim().is_empty())
    }
}

/// Stage outputs: all golden trajectories, the half used to train the base
/// agent, the tasks whose golden trajectories were held back, and the kept
/// self-reflected trajectories.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub all: Vec<Trajectory>,
    pub d1: Vec<Trajectory>,
    pub d2_instructions: Vec<TaskInstruction>,
    pub dr: Vec<Trajectory>,
}

impl DatasetSplit {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let all: BTreeSet<&str> = self.all.iter().map(|t| t.id()).collect();
        let d1: BTreeSet<&str> = self.d1.iter().map(|t| t.id()).collect();
        let d2: BTreeSet<&str> = self.d2_instructions.iter().map(|u| u.id.as_str()).collect();
        if all.len() != self.all.len() {
            out.push("duplicate ids in the golden set".to_string());
        }
        if let Some(id) = d1.difference(&all).next() {
            out.push(format!("d1 trajectory {id} is not in the golden set"));
        }
        if let Some(id) = d1.intersection(&d2).next() {
            out.push(format!("task {id} is in both d1 and d2"));
        }
        let union: BTreeSet<&str> = d1.union(&d2).copied().collect();
        if union != all {
            out.push("d1 and d2 do not cover the golden set".to_string());
        }
        for t in &self.dr {
            if t.reward != 1.0 {
                out.push(format!("dr trajectory {} has reward {}", t.id(), t.reward));
            }
            if t.error_count() == 0 {
                out.push(format!("dr trajectory {} has no marked error", t.id()));
            }
        }
        out
    }
}
