//! Step-level judging: an oracle teacher that knows the golden plan, a remote
//! teacher prompted over chat, and the conversion of an error report into a
//! first-person correction step.

use std::sync::Arc;

use crate::chat::{ChatBackend, ChatMessage, ChatRequest, RemoteConfig, RemoteError, Role};
use crate::env::{env_for, teacher_considerations, EnvError, Environment};
use crate::model::{ErrorReport, TaskInstruction, Verdict};
use crate::policy::HistoryTurn;
use crate::react::{render_react, Field, InvalidField};

/// Everything a teacher sees when judging the latest executed step.
#[derive(Debug, Clone, Copy)]
pub struct JudgeRequest<'a> {
    pub task_requirements: &'a str,
    pub instruction: &'a TaskInstruction,
    /// Turns before the candidate step.
    pub history: &'a [HistoryTurn],
    pub thought: &'a str,
    pub action: &'a str,
    /// Environment response to `action`.
    pub observation: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TeacherError {
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("teacher reply is neither an affirmative nor a complete error report: {0:?}")]
    Unparseable(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub trait Teacher: Send + Sync {
    /// Judges one step without touching the caller's environment or history.
    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Verdict, TeacherError>;

    fn describe(&self) -> String;
}

fn replay(instruction: &TaskInstruction, actions: &[&str]) -> Result<Box<dyn Environment>, EnvError> {
    let mut env = env_for(instruction.task_kind)?;
    let mut u = instruction.clone();
    u.max_steps = u32::MAX;
    env.reset(&u)?;
    for a in actions {
        if env.is_done() {
            break;
        }
        env.step(a)?;
    }
    Ok(env)
}

/// Judges against the golden plan computed from the true latent state.
#[derive(Debug, Clone, Default)]
pub struct OracleTeacher;

impl Teacher for OracleTeacher {
    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Verdict, TeacherError> {
        let mut actions: Vec<&str> = req.history.iter().map(|t| t.action.as_str()).collect();
        let before = replay(req.instruction, &actions)?;
        let Some(expected) = before.plan_from_current()?.into_iter().next() else {
            return Ok(Verdict::Correct);
        };
        if expected.action == req.action.trim() {
            return Ok(Verdict::Correct);
        }
        actions.push(req.action);
        let after = replay(req.instruction, &actions)?;
        let Some(fix) = after.plan_from_current()?.into_iter().next() else {
            // The deviation finished the episode; nothing left to correct.
            return Ok(Verdict::Correct);
        };
        Ok(Verdict::Error(ErrorReport {
            error_content: format!(
                "I chose \"{}\", which does not move me toward the goal.",
                req.action.trim()
            ),
            error_reason: format!("the right step at that point was \"{}\".", expected.action),
            reflection: fix.thought,
            corrective_action: fix.action,
        }))
    }

    fn describe(&self) -> String {
        "oracle".into()
    }
}

/// Opening sentence of every correction thought; policies use it to tell
/// corrections apart from their own steps.
pub const REFLECTION_OPENER: &str = "Wait, I made a mistake.";

pub fn is_reflection(thought: &str) -> bool {
    thought.trim_start().starts_with(REFLECTION_OPENER)
}

fn sentence(s: &str) -> String {
    let mut out = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if !out.ends_with(['.', '!', '?']) {
        out.push('.');
    }
    out
}

fn capitalized(s: String) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

/// Lowercases the first letter unless the word is "I" or looks like an
/// acronym.
fn decapitalized(s: String) -> String {
    let mut chars = s.chars();
    let (Some(first), second) = (chars.next(), chars.next()) else {
        return s;
    };
    let keep = second.is_none_or(|c| !c.is_lowercase());
    if keep {
        return s;
    }
    first.to_lowercase().chain(s.chars().skip(1)).collect()
}

/// Turns an error report into the (thought, action) of a correction step.
pub fn reformat_correction(report: &ErrorReport) -> Result<(String, String), InvalidField> {
    if [&report.error_content, &report.error_reason, &report.reflection]
        .iter()
        .any(|s| s.trim().is_empty())
    {
        return Err(InvalidField::Empty(Field::Thought));
    }
    let thought = format!(
        "{REFLECTION_OPENER} {} This was wrong because {} {}",
        capitalized(sentence(&report.error_content)),
        decapitalized(sentence(&report.error_reason)),
        capitalized(sentence(&report.reflection)),
    );
    let action = report.corrective_action.trim().to_string();
    render_react(&thought, &action)?;
    Ok((thought, action))
}

const LABELS: [&str; 4] = ["ERROR", "REASON", "REFLECTION", "ACTION"];

fn is_affirmative(reply: &str) -> bool {
    let t = reply
        .trim()
        .trim_end_matches(['.', '!', '"', '\''])
        .trim_start_matches(['"', '\'']);
    t.eq_ignore_ascii_case("yes")
}

fn label_of(line: &str, lenient: bool) -> Option<(usize, &str)> {
    let candidate = if lenient { line.trim() } else { line };
    let (label, rest) = candidate.split_once(':')?;
    let label = if lenient { label.trim() } else { label };
    LABELS
        .iter()
        .position(|l| {
            if lenient {
                l.eq_ignore_ascii_case(label)
            } else {
                *l == label
            }
        })
        .map(|i| (i, rest))
}

fn extract(reply: &str, lenient: bool) -> Option<ErrorReport> {
    let mut fields: [Option<String>; 4] = Default::default();
    let mut current = None;
    for line in reply.lines() {
        if let Some((i, rest)) = label_of(line, lenient) {
            if fields[i].is_some() {
                return None;
            }
            fields[i] = Some(rest.trim().to_string());
            current = Some(i);
        } else if let Some(i) = current {
            let f = fields[i].as_mut().expect("current field is set");
            if !line.trim().is_empty() {
                if !f.is_empty() {
                    f.push('\n');
                }
                f.push_str(line.trim());
            }
        }
    }
    let [Some(c), Some(r), Some(f), Some(a)] = fields else {
        return None;
    };
    let report = ErrorReport {
        error_content: c,
        error_reason: r,
        reflection: f,
        corrective_action: a,
    };
    report.is_complete().then_some(report)
}

/// Parses a teacher reply: a bare "yes" is Correct, otherwise the four
/// labeled fields must all be present. One repair pass accepts labels in any
/// case and with surrounding whitespace.
pub fn parse_verdict(reply: &str) -> Result<Verdict, TeacherError> {
    if is_affirmative(reply) {
        return Ok(Verdict::Correct);
    }
    extract(reply, false)
        .or_else(|| extract(reply, true))
        .map(Verdict::Error)
        .ok_or_else(|| TeacherError::Unparseable(reply.to_string()))
}

const TEACHER_ROLE: &str = "You are an experienced teacher supervising an agent that is learning to solve interactive tasks. \
For every step the agent takes you judge whether its thought and action are correct and reasonable given the task and the interaction so far.";

const OUTPUT_FORMAT: &str = "If the latest step is correct and reasonable, reply with exactly: yes\n\
Otherwise reply with these four lines and nothing else, written in the first person as if you were the agent:\n\
ERROR: what the mistake in the latest step was\n\
REASON: why it was a mistake\n\
REFLECTION: what should be done instead and why\n\
ACTION: the single corrected action, in the exact action syntax of the task";

/// Teacher served by an OpenAI-compatible chat endpoint.
pub struct RemoteTeacher {
    backend: Arc<dyn ChatBackend>,
    config: RemoteConfig,
}

impl RemoteTeacher {
    pub fn new(backend: Arc<dyn ChatBackend>, config: RemoteConfig) -> Self {
        RemoteTeacher { backend, config }
    }

    pub fn messages(req: &JudgeRequest<'_>) -> Vec<ChatMessage> {
        let system = format!(
            "{TEACHER_ROLE}\n\nThe agent was given these task requirements:\n{}\n\nWhen judging, consider:\n{}",
            req.task_requirements.trim_end(),
            teacher_considerations(req.instruction.task_kind).trim_end(),
        );
        let mut user = format!(
            "Instruction:\n{}\n\nInteraction history:\n",
            req.instruction.instruction_text
        );
        if req.history.is_empty() {
            user.push_str("(none)\n");
        }
        for (i, t) in req.history.iter().enumerate() {
            user.push_str(&format!(
                "Step {}:\nThought: {}\nAction: {}\nObservation: {}\n",
                i + 1,
                t.thought,
                t.action,
                t.observation
            ));
        }
        user.push_str(&format!(
            "\nLatest step:\nThought: {}\nAction: {}\nObservation: {}\n\n{OUTPUT_FORMAT}",
            req.thought, req.action, req.observation
        ));
        vec![
            ChatMessage::new(Role::System, system),
            ChatMessage::new(Role::User, user),
        ]
    }
}

impl Teacher for RemoteTeacher {
    fn judge(&self, req: &JudgeRequest<'_>) -> Result<Verdict, TeacherError> {
        let request = ChatRequest::new(&self.config.model, Self::messages(req), self.config.max_tokens);
        parse_verdict(&self.backend.complete(&request)?)
    }

    fn describe(&self) -> String {
        format!("remote({})", self.config.model)
    }
}
