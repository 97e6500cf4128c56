//! Conversion of trajectories into multi-turn training samples with per-step
//! loss flags, plus reference loss sums over those flags.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::chat::Role;
use crate::env::task_requirements;
use crate::model::{TaskKind, Trajectory};
use crate::policy::render_turn;
use crate::seeding::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Every assistant turn is learnable.
    Full,
    /// Assistant turns the teacher marked as errors are excluded from the loss.
    PartialMask,
}

impl std::str::FromStr for MaskMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(MaskMode::Full),
            "partial_mask" => Ok(MaskMode::PartialMask),
            other => Err(format!("unknown mask mode `{other}` (expected full or partial_mask)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    D1,
    Dr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub role: Role,
    pub content: String,
    pub learn: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub task_kind: TaskKind,
    pub source: Source,
    pub error_steps: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub sample_id: String,
    pub segments: Vec<Segment>,
    pub meta: SampleMeta,
}

impl SftSample {
    pub fn assistant_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.role == Role::Assistant)
    }
}

/// Lays a trajectory out as system, instruction, then one assistant turn and
/// one observation turn per step. Only assistant turns can carry loss.
pub fn build_sft_sample(traj: &Trajectory, mode: MaskMode, source: Source) -> SftSample {
    let u = &traj.instruction;
    let mut segments = vec![
        Segment {
            role: Role::System,
            content: task_requirements(u.task_kind).to_string(),
            learn: false,
        },
        Segment {
            role: Role::User,
            content: u.instruction_text.clone(),
            learn: false,
        },
    ];
    for s in &traj.steps {
        segments.push(Segment {
            role: Role::Assistant,
            content: render_turn(&s.thought, &s.action),
            learn: match mode {
                MaskMode::Full => true,
                MaskMode::PartialMask => s.delta,
            },
        });
        segments.push(Segment {
            role: Role::User,
            content: s.observation.clone(),
            learn: false,
        });
    }
    SftSample {
        sample_id: u.id.clone(),
        segments,
        meta: SampleMeta {
            task_kind: u.task_kind,
            source,
            error_steps: traj.error_indices(),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// (segment index, contribution) for every learnable segment.
    pub per_segment: Vec<(usize, f64)>,
    /// Assistant segments excluded from the loss.
    pub masked_count: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("log-probability provider returned {value} > 0 for segment {index}")]
    PositiveLogProb { index: usize, value: f64 },
}

/// Negative log-likelihood summed over learnable segments. `logprob_of`
/// receives all segments and the index of the one to score, and returns its
/// summed log-probability given the preceding segments.
pub fn reference_loss(
    sample: &SftSample,
    mut logprob_of: impl FnMut(&[Segment], usize) -> f64,
) -> Result<LossReport, LossError> {
    let mut per_segment = Vec::new();
    let mut masked_count = 0;
    for (i, seg) in sample.segments.iter().enumerate() {
        if seg.role != Role::Assistant {
            continue;
        }
        if !seg.learn {
            masked_count += 1;
            continue;
        }
        let value = logprob_of(&sample.segments, i);
        if value > 0.0 {
            return Err(LossError::PositiveLogProb { index: i, value });
        }
        per_segment.push((i, -value));
    }
    Ok(LossReport {
        total: per_segment.iter().map(|(_, c)| c).sum(),
        per_segment,
        masked_count,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssembleError {
    #[error("instruction id {0} appears more than once across the inputs")]
    DuplicateId(String),
}

/// Golden trajectories in full mode plus reflection trajectories in
/// partial-mask mode, shuffled with `seed`.
pub fn assemble_training_set(d1: &[Trajectory], dr: &[Trajectory], seed: u64) -> Result<Vec<SftSample>, AssembleError> {
    assemble_with_modes(d1, dr, MaskMode::PartialMask, seed)
}

/// As [`assemble_training_set`] but with an explicit mode for the reflection
/// set; `Full` gives the unmasked ablation input.
pub fn assemble_with_modes(
    d1: &[Trajectory],
    dr: &[Trajectory],
    dr_mode: MaskMode,
    seed: u64,
) -> Result<Vec<SftSample>, AssembleError> {
    let mut seen = BTreeSet::new();
    for t in d1.iter().chain(dr) {
        if !seen.insert(t.id()) {
            return Err(AssembleError::DuplicateId(t.id().to_string()));
        }
    }
    let mut out: Vec<SftSample> = d1
        .iter()
        .map(|t| build_sft_sample(t, MaskMode::Full, Source::D1))
        .chain(dr.iter().map(|t| build_sft_sample(t, dr_mode, Source::Dr)))
        .collect();
    out.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    out.shuffle(&mut rng_for(seed, "training-set"));
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct MessageRecord {
    role: Role,
    content: String,
    loss: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaRecord {
    error_steps: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainingRecord {
    id: String,
    source: Source,
    messages: Vec<MessageRecord>,
    meta: MetaRecord,
}

/// One line of the training file: id, source, messages with loss flags, meta.
pub fn training_line(sample: &SftSample) -> String {
    let rec = TrainingRecord {
        id: sample.sample_id.clone(),
        source: sample.meta.source,
        messages: sample
            .segments
            .iter()
            .map(|s| MessageRecord {
                role: s.role,
                content: s.content.clone(),
                loss: s.learn,
            })
            .collect(),
        meta: MetaRecord {
            error_steps: sample.meta.error_steps.clone(),
        },
    };
    serde_json::to_string(&rec).expect("training record serializes")
}

pub fn training_jsonl(samples: &[SftSample]) -> String {
    samples.iter().map(|s| training_line(s) + "\n").collect()
}

/// A parsed training line, for consumers and audits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingLine {
    pub id: String,
    pub source: Source,
    pub messages: Vec<(Role, String, bool)>,
    pub error_steps: Vec<u32>,
}

pub fn parse_training_line(line: &str) -> Result<TrainingLine, serde_json::Error> {
    let rec: TrainingRecord = serde_json::from_str(line)?;
    Ok(TrainingLine {
        id: rec.id,
        source: rec.source,
        messages: rec.messages.into_iter().map(|m| (m.role, m.content, m.loss)).collect(),
        error_steps: rec.meta.error_steps,
    })
}

/// Recommended fine-tuning settings, carried in the mask manifest only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecipe {
    pub base_model: String,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub epochs: u32,
    pub lr_schedule: String,
    /// Retraining starts from the base model, not the stage-one agent.
    pub start_from: String,
}

impl Default for TrainingRecipe {
    fn default() -> Self {
        TrainingRecipe {
            base_model: "base-agent".into(),
            batch_size: 32,
            learning_rate: 3e-5,
            epochs: 4,
            lr_schedule: "cosine".into(),
            start_from: "base".into(),
        }
    }
}
