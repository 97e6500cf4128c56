//! Text environments: the contract every simulator implements, the two
//! built-in desk-scale simulators and the seeded task generator.

pub mod generate;
pub mod household;
pub mod shopping;

use crate::model::{TaskInstruction, TaskKind};

pub use generate::{generate_corpus, CorpusSpec};
pub use household::HouseholdEnv;
pub use shopping::ShoppingEnv;

/// Observation returned for any action the environment cannot execute.
pub const NOTHING_HAPPENS: &str = "Nothing happens.";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("task kind {found} does not match the {expected} environment")]
    KindMismatch { expected: TaskKind, found: TaskKind },
    #[error("no built-in environment for task kind {0}")]
    Unsupported(TaskKind),
    #[error("step called before reset")]
    NotReset,
    #[error("episode already finished")]
    StepAfterDone,
    #[error("step budget of {0} actions exhausted")]
    StepBudgetExhausted(u32),
    #[error("no plan reaches the goal: {0}")]
    PlanNotFound(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: String,
    pub done: bool,
    pub reward: f64,
}

impl StepResult {
    fn ongoing(observation: impl Into<String>) -> Self {
        StepResult {
            observation: observation.into(),
            done: false,
            reward: 0.0,
        }
    }
}

/// One step of a golden plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStep {
    pub thought: String,
    pub action: String,
}

impl PlanStep {
    fn new(thought: impl Into<String>, action: impl Into<String>) -> Self {
        PlanStep {
            thought: thought.into(),
            action: action.into(),
        }
    }
}

/// A partially observable text environment.
///
/// Implementations are deterministic: the same config and action sequence
/// always produce the same observations, rewards and done flags.
pub trait Environment: Send {
    fn kind(&self) -> TaskKind;

    /// Loads the instruction's config into the initial latent state and
    /// returns the opening observation.
    fn reset(&mut self, instruction: &TaskInstruction) -> Result<String, EnvError>;

    fn step(&mut self, action: &str) -> Result<StepResult, EnvError>;

    /// Shortest known plan from the current latent state to the goal. Empty
    /// once the episode is done.
    fn plan_from_current(&self) -> Result<Vec<PlanStep>, EnvError>;

    /// Alternative actions used to corrupt `action` for noise injection.
    fn corruptions(&self, action: &str, kind: crate::policy::ErrorKind) -> Vec<String>;

    fn step_count(&self) -> u32;

    fn is_done(&self) -> bool;
}

/// Fresh, un-reset environment for a task kind.
pub fn env_for(kind: TaskKind) -> Result<Box<dyn Environment>, EnvError> {
    match kind {
        TaskKind::Household => Ok(Box::new(HouseholdEnv::default())),
        TaskKind::Shopping => Ok(Box::new(ShoppingEnv::default())),
        TaskKind::Science => Err(EnvError::Unsupported(kind)),
    }
}

/// Environment already reset to the instruction's initial state.
pub fn fresh_env(instruction: &TaskInstruction) -> Result<(Box<dyn Environment>, String), EnvError> {
    let mut env = env_for(instruction.task_kind)?;
    let obs = env.reset(instruction)?;
    Ok((env, obs))
}

/// Plan from the initial state that reaches reward 1 within `max_steps`.
pub fn golden_plan(instruction: &TaskInstruction) -> Result<Vec<PlanStep>, EnvError> {
    let (env, _) = fresh_env(instruction)?;
    let plan = env.plan_from_current()?;
    if plan.len() > instruction.max_steps as usize {
        return Err(EnvError::PlanNotFound(format!(
            "plan needs {} steps but the budget is {}",
            plan.len(),
            instruction.max_steps
        )));
    }
    Ok(plan)
}

/// Task requirement text shown to policies and teachers, one asset per kind.
pub fn task_requirements(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Household => include_str!("../../assets/prompts/v1/household.txt"),
        TaskKind::Shopping => include_str!("../../assets/prompts/v1/shopping.txt"),
        TaskKind::Science => include_str!("../../assets/prompts/v1/science.txt"),
    }
}

/// Task-specific judging considerations for the remote teacher prompt.
pub fn teacher_considerations(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Household => include_str!("../../assets/prompts/v1/household_considerations.txt"),
        TaskKind::Shopping => include_str!("../../assets/prompts/v1/shopping_considerations.txt"),
        TaskKind::Science => include_str!("../../assets/prompts/v1/science_considerations.txt"),
    }
}

pub const PROMPT_ASSET_VERSION: &str = "v1";

fn check_kind(expected: TaskKind, instruction: &TaskInstruction) -> Result<(), EnvError> {
    if instruction.task_kind != expected {
        return Err(EnvError::KindMismatch {
            expected,
            found: instruction.task_kind,
        });
    }
    Ok(())
}
