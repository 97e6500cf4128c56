//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers or strings and returns a JSON string; failures come back as
//! `{"error": "..."}`. Seeds are u32 so they stay ordinary JS numbers.

use serde_json::{json, Value};
use trajmend::env::{generate_corpus, CorpusSpec};
use trajmend::eval::teacher_benefit;
use trajmend::masking::{build_sft_sample, MaskMode, Source};
use trajmend::policy::{ErrorKind, NoiseSchedule, NoisyPolicy};
use trajmend::react::parse_react;
use trajmend::synthesis::run_episode;
use trajmend::teacher::OracleTeacher;
use trajmend::{TaskInstruction, TaskKind};
use wasm_bindgen::prelude::*;

fn error_kind(name: &str) -> Result<ErrorKind, String> {
    serde_json::from_value(Value::String(name.to_string())).map_err(|_| format!("unknown error kind `{name}`"))
}

fn one_task(kind: &str, seed: u64) -> Result<TaskInstruction, String> {
    let kind: TaskKind = kind.parse().map_err(|e: String| e)?;
    let spec = CorpusSpec {
        seed,
        household: usize::from(kind == TaskKind::Household),
        shopping: usize::from(kind == TaskKind::Shopping),
        ..Default::default()
    };
    generate_corpus(&spec)
        .map_err(|e| e.to_string())?
        .pop()
        .ok_or_else(|| format!("no built-in environment for {kind}"))
}

fn respond(r: Result<Value, String>) -> String {
    r.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

/// Runs one teacher-monitored episode on a generated task and returns its
/// steps together with the loss flag each assistant turn gets under
/// partial masking.
#[wasm_bindgen]
pub fn synthesize(kind: &str, task_seed: u32, noise_seed: u32, error_rate: f64, error_kind_name: &str) -> String {
    respond((|| {
        let task = one_task(kind, task_seed.into())?;
        let policy = NoisyPolicy::new(NoiseSchedule {
            seed: noise_seed.into(),
            error_rate: error_rate.clamp(0.0, 1.0),
            error_kind: error_kind(error_kind_name)?,
        });
        let ep = run_episode(&task, &policy, Some(&OracleTeacher)).map_err(|e| e.to_string())?;
        let t = &ep.trajectory;
        let sample = build_sft_sample(t, MaskMode::PartialMask, Source::Dr);
        let steps: Vec<Value> = t
            .steps
            .iter()
            .zip(sample.assistant_segments())
            .map(|(s, seg)| {
                json!({
                    "index": s.index,
                    "thought": s.thought,
                    "action": s.action,
                    "observation": s.observation,
                    "delta": s.delta,
                    "origin": s.origin,
                    "loss": seg.learn,
                })
            })
            .collect();
        Ok(json!({
            "id": task.id,
            "instruction": task.instruction_text,
            "max_steps": task.max_steps,
            "steps": steps,
            "reward": t.reward,
            "termination": t.termination,
            "errors": t.error_count(),
        }))
    })())
}

/// Average reward with and without oracle corrections over `tasks` generated
/// tasks per kind, at `points` evenly spaced error rates from 0 to 1.
#[wasm_bindgen]
pub fn teacher_sweep(corpus_seed: u32, noise_seed: u32, tasks: u32, points: u32, error_kind_name: &str) -> String {
    respond((|| {
        let kind = error_kind(error_kind_name)?;
        let n = tasks.clamp(1, 200) as usize;
        let corpus = generate_corpus(&CorpusSpec {
            seed: corpus_seed.into(),
            household: n,
            shopping: n,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let points = points.clamp(2, 21);
        let mut rows = Vec::new();
        for p in 0..points {
            let rate = f64::from(p) / f64::from(points - 1);
            let b = teacher_benefit(
                &corpus,
                NoiseSchedule {
                    seed: noise_seed.into(),
                    error_rate: rate,
                    error_kind: kind,
                },
                1,
            )
            .map_err(|e| e.to_string())?;
            rows.push(json!({ "error_rate": rate, "noisy": b.noisy_alone, "corrected": b.corrected }));
        }
        Ok(Value::Array(rows))
    })())
}

/// Parses a model reply in the two-field format.
#[wasm_bindgen]
pub fn parse_reply(text: &str) -> String {
    respond(
        parse_react(text)
            .map(|p| json!({ "thought": p.thought, "action": p.action, "lenient": p.lenient }))
            .map_err(|e| e.to_string()),
    )
}
