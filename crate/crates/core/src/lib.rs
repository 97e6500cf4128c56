//! Self-reflected trajectory synthesis for text-based agents.
//!
//! A base policy acts in a text environment while a teacher judges every step.
//! Steps judged wrong are marked and followed by a first-person correction;
//! successful runs with few such marks become training data in which the
//! marked steps carry no loss.

pub mod chat;
pub mod env;
pub mod eval;
pub mod jsonl;
pub mod masking;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod policy;
pub mod react;
pub mod seeding;
pub mod synthesis;
pub mod teacher;

pub use model::{
    validate_trajectory, DatasetSplit, ErrorReport, Step, StepOrigin, TaskInstruction, TaskKind, Termination,
    Trajectory, Verdict,
};
