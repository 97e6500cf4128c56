//! Acting policies behind one `decide` contract: a scripted planner, a noisy
//! scripted policy that injects seeded mistakes, and a remote chat model.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chat::{ChatBackend, ChatMessage, ChatRequest, RemoteConfig, RemoteError, Role};
use crate::env::{env_for, EnvError, Environment, PlanStep};
use crate::model::{Step, TaskInstruction, TaskKind};
use crate::react::{parse_react, render_react, MalformedReact, ACTION_MARKER, THOUGHT_MARKER};
use crate::seeding::rng_for;
use crate::teacher::is_reflection;

/// One completed turn as the policy sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryTurn {
    pub thought: String,
    pub action: String,
    pub observation: String,
}

impl From<&Step> for HistoryTurn {
    fn from(s: &Step) -> Self {
        HistoryTurn {
            thought: s.thought.clone(),
            action: s.action.clone(),
            observation: s.observation.clone(),
        }
    }
}

pub fn history_of(steps: &[Step]) -> Vec<HistoryTurn> {
    steps.iter().map(HistoryTurn::from).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub task_requirements: &'a str,
    pub instruction: &'a TaskInstruction,
    pub history: &'a [HistoryTurn],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub thought: String,
    pub action: String,
}

impl From<PlanStep> for Decision {
    fn from(p: PlanStep) -> Self {
        Decision {
            thought: p.thought,
            action: p.action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("malformed ReAct output: {0}")]
    Malformed(#[from] MalformedReact),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub trait Policy: Send + Sync {
    fn decide(&self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError>;

    /// Short identity recorded in run manifests.
    fn describe(&self) -> String;
}

/// Chat transcript for a policy call: the task requirements as the system
/// message, the instruction as the first user message, then one assistant
/// message per (thought, action) and one user message per observation.
pub fn transcript(task_requirements: &str, instruction_text: &str, history: &[HistoryTurn]) -> Vec<ChatMessage> {
    let mut out = Vec::with_capacity(2 + 2 * history.len());
    out.push(ChatMessage::new(Role::System, task_requirements));
    out.push(ChatMessage::new(Role::User, instruction_text));
    for turn in history {
        out.push(ChatMessage::new(
            Role::Assistant,
            render_turn(&turn.thought, &turn.action),
        ));
        out.push(ChatMessage::new(Role::User, turn.observation.clone()));
    }
    out
}

/// ReAct rendering that never fails; fields `render_react` rejects are written
/// through verbatim.
pub fn render_turn(thought: &str, action: &str) -> String {
    render_react(thought, action)
        .unwrap_or_else(|_| format!("{THOUGHT_MARKER} {}\n{ACTION_MARKER} {}", thought.trim(), action.trim()))
}

/// Size of a transcript in characters, the unit of `context_budget`.
pub fn transcript_chars(messages: &[ChatMessage]) -> usize {
    messages.iter().map(|m| m.content.chars().count()).sum()
}

const IDLE_THOUGHT: &str = "I believe the task is already complete. Let me look around to check.";
const IDLE_ACTION: &str = "look";

fn unbounded(instruction: &TaskInstruction) -> Result<Box<dyn Environment>, EnvError> {
    let mut env = env_for(instruction.task_kind)?;
    let mut u = instruction.clone();
    u.max_steps = u32::MAX;
    env.reset(&u)?;
    Ok(env)
}

fn next_step(env: &dyn Environment) -> Result<PlanStep, EnvError> {
    Ok(env.plan_from_current()?.into_iter().next().unwrap_or_else(|| PlanStep {
        thought: IDLE_THOUGHT.into(),
        action: IDLE_ACTION.into(),
    }))
}

/// Follows the golden plan from the state reached by replaying the history.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy;

impl Policy for ScriptedPolicy {
    fn decide(&self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
        let mut env = unbounded(ctx.instruction)?;
        for turn in ctx.history {
            let _ = env.step(&turn.action);
        }
        Ok(next_step(env.as_ref())?.into())
    }

    fn describe(&self) -> String {
        "scripted".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    WrongObject,
    WrongLocation,
    PrematureTerminal,
}

impl ErrorKind {
    /// `self` first, then the remaining kinds as fallbacks.
    fn fallback_order(self) -> [ErrorKind; 3] {
        use ErrorKind::*;
        match self {
            WrongObject => [WrongObject, WrongLocation, PrematureTerminal],
            WrongLocation => [WrongLocation, WrongObject, PrematureTerminal],
            PrematureTerminal => [PrematureTerminal, WrongLocation, WrongObject],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub seed: u64,
    pub error_rate: f64,
    pub error_kind: ErrorKind,
}

/// Scripted policy that, with probability `error_rate` per step, replaces the
/// planned action by a corruption of it.
///
/// The policy believes its corrupted actions had their intended effect, so an
/// uncorrected mistake derails the rest of the episode. A teacher correction
/// in the history resynchronises that belief with what actually happened.
#[derive(Debug, Clone)]
pub struct NoisyPolicy {
    pub schedule: NoiseSchedule,
}

impl NoisyPolicy {
    pub fn new(schedule: NoiseSchedule) -> Self {
        NoisyPolicy { schedule }
    }

    /// Action emitted at history position `k` given the believed state, and
    /// whether it was a corruption.
    fn emit(
        &self,
        instruction: &TaskInstruction,
        belief: &dyn Environment,
        k: usize,
    ) -> Result<(PlanStep, Option<String>), EnvError> {
        let intended = next_step(belief)?;
        let mut rng = rng_for(self.schedule.seed, &format!("{}/{k}", instruction.id));
        if rng.random::<f64>() >= self.schedule.error_rate {
            return Ok((intended, None));
        }
        let corrupted = self
            .schedule
            .error_kind
            .fallback_order()
            .into_iter()
            .map(|kind| belief.corruptions(&intended.action, kind))
            .find(|alts| !alts.is_empty())
            .map(|alts| alts[rng.random_range(0..alts.len())].clone());
        Ok((intended, corrupted))
    }
}

impl Policy for NoisyPolicy {
    fn decide(&self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
        let history = ctx.history;
        let mut belief = unbounded(ctx.instruction)?;
        let resync = history.iter().rposition(|t| is_reflection(&t.thought));
        let start = resync.map_or(0, |i| i + 1);
        for turn in &history[..start] {
            let _ = belief.step(&turn.action);
        }
        for (k, turn) in history.iter().enumerate().skip(start) {
            let (intended, corrupted) = self.emit(ctx.instruction, belief.as_ref(), k)?;
            let believed = if corrupted.is_some() {
                intended.action
            } else {
                turn.action.clone()
            };
            let _ = belief.step(&believed);
        }
        let (intended, corrupted) = self.emit(ctx.instruction, belief.as_ref(), history.len())?;
        Ok(Decision {
            thought: intended.thought,
            action: corrupted.unwrap_or(intended.action),
        })
    }

    fn describe(&self) -> String {
        format!(
            "noisy(seed={}, error_rate={}, error_kind={:?})",
            self.schedule.seed, self.schedule.error_rate, self.schedule.error_kind
        )
    }
}

/// Worked example prepended to the system prompt in one-shot mode.
pub fn one_shot_example(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Household => include_str!("../assets/prompts/v1/household_example.txt"),
        TaskKind::Shopping => include_str!("../assets/prompts/v1/shopping_example.txt"),
        TaskKind::Science => include_str!("../assets/prompts/v1/science_example.txt"),
    }
}

/// Policy served by an OpenAI-compatible chat endpoint.
pub struct RemotePolicy {
    backend: Arc<dyn ChatBackend>,
    config: RemoteConfig,
    one_shot: bool,
}

impl RemotePolicy {
    pub fn new(backend: Arc<dyn ChatBackend>, config: RemoteConfig, one_shot: bool) -> Self {
        RemotePolicy {
            backend,
            config,
            one_shot,
        }
    }

    pub fn messages(&self, ctx: &PolicyContext<'_>) -> Vec<ChatMessage> {
        let system = if self.one_shot {
            format!(
                "{}\n\nHere is an example:\n{}",
                ctx.task_requirements.trim_end(),
                one_shot_example(ctx.instruction.task_kind).trim_end()
            )
        } else {
            ctx.task_requirements.to_string()
        };
        transcript(&system, &ctx.instruction.instruction_text, ctx.history)
    }
}

impl Policy for RemotePolicy {
    fn decide(&self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
        let req = ChatRequest::new(&self.config.model, self.messages(ctx), self.config.max_tokens);
        let reply = self.backend.complete(&req)?;
        let parsed = parse_react(&reply)?;
        if parsed.lenient {
            log::debug!("policy reply for {} had extra content", ctx.instruction.id);
        }
        Ok(Decision {
            thought: parsed.thought,
            action: parsed.action,
        })
    }

    fn describe(&self) -> String {
        format!("remote({})", self.config.model)
    }
}
