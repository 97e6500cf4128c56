//! Trajectory production: golden runs, the per-task corpus split, the
//! teacher-monitored interaction loop and the filter for the reflection set.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::chat::RemoteError;
use crate::env::{fresh_env, golden_plan, task_requirements, EnvError, NOTHING_HAPPENS, PROMPT_ASSET_VERSION};
use crate::model::{
    validate_trajectory, Step, StepOrigin, TaskInstruction, TaskKind, Termination, Trajectory, Verdict,
};
use crate::par::ordered_map;
use crate::policy::{transcript, transcript_chars, HistoryTurn, Policy, PolicyContext, PolicyError};
use crate::react::render_react;
use crate::seeding::rng_for;
use crate::teacher::{reformat_correction, JudgeRequest, Teacher, TeacherError};

/// Corrections that leave the environment unchanged this many times in a row
/// abort the episode.
pub const CONSECUTIVE_ERROR_CAP: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error("task kind {0} has no trajectories")]
    EmptyTask(TaskKind),
    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("no error threshold configured for task kind {0}")]
    MissingThreshold(TaskKind),
    #[error("golden run for {id} did not succeed: {detail}")]
    GoldenFailed { id: String, detail: String },
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl From<PolicyError> for SynthesisError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Remote(r) => SynthesisError::Remote(r),
            PolicyError::Env(e) => SynthesisError::Env(e),
            PolicyError::Malformed(m) => SynthesisError::Env(EnvError::Config(m.to_string())),
        }
    }
}

/// Executes the golden plan of an instruction as a trajectory.
pub fn golden_trajectory(instruction: &TaskInstruction) -> Result<Trajectory, SynthesisError> {
    let plan = golden_plan(instruction)?;
    let (mut env, _) = fresh_env(instruction)?;
    let mut steps = Vec::with_capacity(plan.len());
    let mut reward = 0.0;
    for (i, p) in plan.into_iter().enumerate() {
        let r = env.step(&p.action)?;
        steps.push(Step::new(
            i as u32 + 1,
            p.thought,
            p.action,
            r.observation,
            StepOrigin::Golden,
        ));
        reward = r.reward;
    }
    let traj = Trajectory {
        instruction: instruction.clone(),
        steps,
        reward,
        termination: Termination::Success,
    };
    let failed = |detail: String| SynthesisError::GoldenFailed {
        id: instruction.id.clone(),
        detail,
    };
    if !env.is_done() || reward != 1.0 {
        return Err(failed(format!("plan ended with reward {reward}")));
    }
    let chars = transcript_chars(&transcript(
        task_requirements(instruction.task_kind),
        &instruction.instruction_text,
        &crate::policy::history_of(&traj.steps),
    ));
    if chars > instruction.context_budget {
        return Err(failed(format!(
            "transcript of {chars} chars exceeds the context budget"
        )));
    }
    match validate_trajectory(&traj).first() {
        Some(v) => Err(failed(v.clone())),
        None => Ok(traj),
    }
}

/// Golden trajectories for a whole corpus, in input order.
pub fn golden_corpus(instructions: &[TaskInstruction], parallelism: usize) -> Result<Vec<Trajectory>, SynthesisError> {
    ordered_map(instructions, parallelism, golden_trajectory)
        .into_iter()
        .collect()
}

/// Per-task seeded split: `round(fraction * count)` trajectories of each kind
/// (ties to even) go to the first set, the rest to the second. Both keep the
/// input order.
pub fn split_dataset(
    golden: &[Trajectory],
    kinds: &[TaskKind],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>), SynthesisError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SynthesisError::InvalidFraction(fraction));
    }
    let mut chosen = BTreeSet::new();
    for &kind in kinds {
        let mut idx: Vec<usize> = (0..golden.len()).filter(|&i| golden[i].kind() == kind).collect();
        if idx.is_empty() {
            return Err(SynthesisError::EmptyTask(kind));
        }
        let take = (fraction * idx.len() as f64).round_ties_even() as usize;
        idx.shuffle(&mut rng_for(seed, &format!("split/{kind}")));
        chosen.extend(idx.into_iter().take(take));
    }
    let (d1, d2) = golden
        .iter()
        .enumerate()
        .filter(|(_, t)| kinds.contains(&t.kind()))
        .partition::<Vec<_>, _>(|(i, _)| chosen.contains(i));
    let strip = |v: Vec<(usize, &Trajectory)>| v.into_iter().map(|(_, t)| t.clone()).collect();
    Ok((strip(d1), strip(d2)))
}

/// Result of one monitored (or unmonitored) episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trajectory: Trajectory,
    /// Why the episode was aborted, if it was.
    pub failure: Option<String>,
    /// Indices of steps the teacher could not judge.
    pub unjudged: Vec<u32>,
}

fn zero_if_limited(reward: f64, termination: Termination) -> f64 {
    if termination.zeroes_reward() {
        0.0
    } else {
        reward
    }
}

/// Runs one episode. With a teacher, every base-policy step that does not end
/// the episode is judged; an error is marked on the step and followed by the
/// teacher's correction, which is executed and counts against the step budget.
/// Without a teacher this is a plain evaluation rollout.
pub fn run_episode(
    instruction: &TaskInstruction,
    policy: &dyn Policy,
    teacher: Option<&dyn Teacher>,
) -> Result<Episode, SynthesisError> {
    let requirements = task_requirements(instruction.task_kind);
    let (mut env, _) = fresh_env(instruction)?;
    let mut steps: Vec<Step> = Vec::new();
    let mut history: Vec<HistoryTurn> = Vec::new();
    let mut unjudged = Vec::new();
    let mut failure = None;
    let mut reward = 0.0;
    let mut streak = 0;

    let over_budget = |history: &[HistoryTurn]| {
        transcript_chars(&transcript(requirements, &instruction.instruction_text, history)) > instruction.context_budget
    };
    let finish = |r: f64| {
        if r == 1.0 {
            Termination::Success
        } else {
            Termination::EnvDonePartial
        }
    };

    let termination = loop {
        if env.step_count() >= instruction.max_steps {
            break Termination::StepLimit;
        }
        let ctx = PolicyContext {
            task_requirements: requirements,
            instruction,
            history: &history,
        };
        let decision = match policy.decide(&ctx) {
            Ok(d) => d,
            Err(PolicyError::Malformed(m)) => {
                failure = Some(format!("policy output rejected: {m}"));
                break Termination::Aborted;
            }
            Err(e) => return Err(e.into()),
        };
        if let Err(e) = render_react(&decision.thought, &decision.action) {
            failure = Some(format!("policy output rejected: {e}"));
            break Termination::Aborted;
        }
        let r = env.step(&decision.action)?;
        let index = steps.len() as u32 + 1;
        steps.push(Step::new(
            index,
            decision.thought.trim(),
            decision.action.trim(),
            r.observation.clone(),
            StepOrigin::BasePolicy,
        ));
        history.push(HistoryTurn::from(steps.last().expect("just pushed")));
        if over_budget(&history) {
            break Termination::ContextLimit;
        }
        if r.done {
            reward = r.reward;
            break finish(r.reward);
        }
        let Some(teacher) = teacher else { continue };

        let req = JudgeRequest {
            task_requirements: requirements,
            instruction,
            history: &history[..history.len() - 1],
            thought: &steps[steps.len() - 1].thought,
            action: &steps[steps.len() - 1].action,
            observation: &r.observation,
        };
        let report = match teacher.judge(&req) {
            Ok(Verdict::Correct) => {
                streak = 0;
                continue;
            }
            Ok(Verdict::Error(report)) => report,
            Err(TeacherError::Unparseable(reply)) => {
                log::warn!("{}: step {index} left unjudged, reply {reply:?}", instruction.id);
                unjudged.push(index);
                continue;
            }
            Err(TeacherError::Remote(e)) => return Err(e.into()),
            Err(TeacherError::Env(e)) => return Err(e.into()),
        };
        let (thought, action) = match reformat_correction(&report) {
            Ok(pair) => pair,
            Err(e) => {
                log::warn!(
                    "{}: step {index} left unjudged, unusable correction: {e}",
                    instruction.id
                );
                unjudged.push(index);
                continue;
            }
        };
        steps.last_mut().expect("just pushed").delta = false;
        if env.step_count() >= instruction.max_steps {
            break Termination::StepLimit;
        }
        let r = env.step(&action)?;
        streak = if r.observation == NOTHING_HAPPENS {
            streak + 1
        } else {
            0
        };
        steps.push(Step::new(
            steps.len() as u32 + 1,
            thought,
            action,
            r.observation.clone(),
            StepOrigin::TeacherCorrection,
        ));
        history.push(HistoryTurn::from(steps.last().expect("just pushed")));
        if over_budget(&history) {
            break Termination::ContextLimit;
        }
        if r.done {
            reward = r.reward;
            break finish(r.reward);
        }
        if streak >= CONSECUTIVE_ERROR_CAP {
            failure = Some(format!("{streak} consecutive corrections had no effect"));
            break Termination::Aborted;
        }
    };

    Ok(Episode {
        trajectory: Trajectory {
            instruction: instruction.clone(),
            steps,
            reward: zero_if_limited(reward, termination),
            termination,
        },
        failure,
        unjudged,
    })
}

/// Keeps successful trajectories that contain between one and the per-kind
/// cap of teacher-marked errors.
pub fn filter_self_reflected(
    trajs: &[Trajectory],
    max_errors_by_kind: &BTreeMap<TaskKind, usize>,
) -> Result<Vec<Trajectory>, SynthesisError> {
    let mut kept = Vec::new();
    for t in trajs {
        let cap = *max_errors_by_kind
            .get(&t.kind())
            .ok_or(SynthesisError::MissingThreshold(t.kind()))?;
        let errors = t.error_count();
        if t.reward == 1.0 && errors >= 1 && errors <= cap {
            kept.push(t.clone());
        }
    }
    Ok(kept)
}

/// Default error caps per task kind.
pub fn default_error_caps() -> BTreeMap<TaskKind, usize> {
    BTreeMap::from([
        (TaskKind::Household, 2),
        (TaskKind::Science, 2),
        (TaskKind::Shopping, 1),
    ])
}

/// One instruction that produced no usable trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthFailure {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SynthesisOutcome {
    /// Every finished trajectory, sorted by instruction id.
    pub synthesized: Vec<Trajectory>,
    pub failures: Vec<SynthFailure>,
    pub kept: Vec<Trajectory>,
    pub unjudged_steps: usize,
    /// Failures caused by an unreachable or misbehaving endpoint.
    pub transport_failures: usize,
}

/// Runs the monitored loop over every instruction and filters the result.
/// Instructions whose episode errors out are recorded as failures instead of
/// aborting the run.
pub fn run_synthesis(
    instructions: &[TaskInstruction],
    policy: &dyn Policy,
    teacher: &dyn Teacher,
    caps: &BTreeMap<TaskKind, usize>,
    parallelism: usize,
) -> Result<SynthesisOutcome, SynthesisError> {
    let results = ordered_map(instructions, parallelism, |u| run_episode(u, policy, Some(teacher)));
    let mut out = SynthesisOutcome::default();
    for (u, r) in instructions.iter().zip(results) {
        match r {
            Ok(ep) => {
                out.unjudged_steps += ep.unjudged.len();
                if let Some(reason) = ep.failure {
                    out.failures.push(SynthFailure {
                        id: u.id.clone(),
                        reason,
                    });
                }
                out.synthesized.push(ep.trajectory);
            }
            Err(e) => {
                if matches!(e, SynthesisError::Remote(_)) {
                    out.transport_failures += 1;
                }
                log::error!("{}: synthesis failed: {e}", u.id);
                out.failures.push(SynthFailure {
                    id: u.id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    out.synthesized.sort_by(|a, b| a.id().cmp(b.id()));
    out.failures.sort_by(|a, b| a.id.cmp(&b.id));
    out.kept = filter_self_reflected(&out.synthesized, caps)?;
    Ok(out)
}

/// Trajectory count the original large-scale run reported keeping; carried in
/// manifests for comparison only.
pub const REFERENCE_KEPT_COUNT: usize = 708;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCounts {
    pub golden_in: usize,
    pub d1: usize,
    pub d2: usize,
    pub synthesized: usize,
    pub failed: usize,
    pub kept: usize,
    pub unjudged_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub corpus_seed: u64,
    pub split_seed: u64,
    pub split_fraction: f64,
    pub policy: String,
    pub teacher: String,
    pub max_errors_by_kind: BTreeMap<TaskKind, usize>,
    pub consecutive_error_cap: usize,
    pub prompt_asset_version: String,
    pub counts: SynthCounts,
    pub reference_kept_count: usize,
}

impl SynthManifest {
    pub fn new(
        corpus_seed: u64,
        split_seed: u64,
        split_fraction: f64,
        policy: &dyn Policy,
        teacher: &dyn Teacher,
        max_errors_by_kind: BTreeMap<TaskKind, usize>,
        counts: SynthCounts,
    ) -> Self {
        SynthManifest {
            corpus_seed,
            split_seed,
            split_fraction,
            policy: policy.describe(),
            teacher: teacher.describe(),
            max_errors_by_kind,
            consecutive_error_cap: CONSECUTIVE_ERROR_CAP,
            prompt_asset_version: PROMPT_ASSET_VERSION.into(),
            counts,
            reference_kept_count: REFERENCE_KEPT_COUNT,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::household::tests::vase_task;
    use crate::env::{generate_corpus, CorpusSpec};
    use crate::model::fixtures;
    use crate::policy::{ErrorKind, NoiseSchedule, NoisyPolicy, ScriptedPolicy};
    use crate::teacher::OracleTeacher;

    fn noisy(seed: u64, rate: f64) -> NoisyPolicy {
        NoisyPolicy::new(NoiseSchedule {
            seed,
            error_rate: rate,
            error_kind: ErrorKind::WrongLocation,
        })
    }

    fn golden_of(kind: TaskKind, n: usize) -> Vec<Trajectory> {
        (0..n)
            .map(|i| {
                let mut t = fixtures::success(&format!("{kind}-{i:04}"), 2);
                t.instruction.task_kind = kind;
                t
            })
            .collect()
    }

    /// Round-half-to-even computed on integers: n/2 when n is even,
    /// otherwise (n-1)/2 or (n+1)/2, whichever is even.
    fn half_oracle(n: usize) -> usize {
        let (q, odd) = (n / 2, n % 2 == 1);
        if odd && q % 2 == 1 {
            q + 1
        } else {
            q
        }
    }

    #[test]
    fn split_sizes_match_rounding_oracle() {
        for n in [1, 2, 3, 5, 7, 8, 10, 1016, 3119] {
            let g = golden_of(TaskKind::Household, n);
            let (d1, d2) = split_dataset(&g, &[TaskKind::Household], 0.5, 4).unwrap();
            assert_eq!(d1.len(), half_oracle(n), "n={n}");
            assert_eq!(d1.len() + d2.len(), n);
        }
        assert_eq!(half_oracle(3119), 1560);
        assert_eq!(half_oracle(7), 4);
    }

    #[test]
    fn split_is_per_task_disjoint_and_deterministic() {
        let mut g = golden_of(TaskKind::Household, 10);
        g.extend(golden_of(TaskKind::Shopping, 8));
        let kinds = [TaskKind::Household, TaskKind::Shopping];
        let (d1, d2) = split_dataset(&g, &kinds, 0.5, 1).unwrap();
        assert_eq!(d1.iter().filter(|t| t.kind() == TaskKind::Household).count(), 5);
        assert_eq!(d1.iter().filter(|t| t.kind() == TaskKind::Shopping).count(), 4);
        let a: BTreeSet<&str> = d1.iter().map(|t| t.id()).collect();
        let b: BTreeSet<&str> = d2.iter().map(|t| t.id()).collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 18);
        assert_eq!((d1.clone(), d2.clone()), split_dataset(&g, &kinds, 0.5, 1).unwrap());
        assert_ne!(d1, split_dataset(&g, &kinds, 0.5, 2).unwrap().0);
    }

    #[test]
    fn split_rejects_empty_kind_and_bad_fraction() {
        let g = golden_of(TaskKind::Household, 4);
        assert_eq!(
            split_dataset(&g, &[TaskKind::Household, TaskKind::Shopping], 0.5, 0),
            Err(SynthesisError::EmptyTask(TaskKind::Shopping))
        );
        assert!(matches!(
            split_dataset(&g, &[TaskKind::Household], 1.0, 0),
            Err(SynthesisError::InvalidFraction(_))
        ));
    }

    #[test]
    fn noisy_vase_run_is_corrected() {
        let u = vase_task();
        let ep = run_episode(&u, &noisy(3, 0.4), Some(&OracleTeacher)).unwrap();
        let t = &ep.trajectory;
        assert!(t.error_count() >= 1);
        assert_eq!(t.reward, 1.0);
        assert!(validate_trajectory(t).is_empty(), "{:?}", validate_trajectory(t));
        for (i, s) in t.steps.iter().enumerate() {
            if s.is_error() {
                assert_eq!(t.steps[i + 1].origin, StepOrigin::TeacherCorrection);
            }
        }
    }

    #[test]
    fn zero_rate_equals_golden() {
        let u = vase_task();
        let ep = run_episode(&u, &noisy(3, 0.0), Some(&OracleTeacher)).unwrap();
        let g = golden_trajectory(&u).unwrap();
        assert_eq!(ep.trajectory.error_count(), 0);
        let acts = |t: &Trajectory| -> Vec<(String, String, String)> {
            t.steps
                .iter()
                .map(|s| (s.thought.clone(), s.action.clone(), s.observation.clone()))
                .collect()
        };
        assert_eq!(acts(&ep.trajectory), acts(&g));
    }

    #[test]
    fn tight_budget_hits_step_limit() {
        let mut u = vase_task();
        u.max_steps = 2;
        let ep = run_episode(&u, &ScriptedPolicy, None).unwrap();
        assert_eq!(ep.trajectory.termination, Termination::StepLimit);
        assert_eq!(ep.trajectory.reward, 0.0);
        assert_eq!(ep.trajectory.len(), 2);
    }

    #[test]
    fn tiny_context_budget_hits_context_limit() {
        let mut u = vase_task();
        u.context_budget = 10;
        let ep = run_episode(&u, &ScriptedPolicy, None).unwrap();
        assert_eq!(ep.trajectory.termination, Termination::ContextLimit);
        assert_eq!(ep.trajectory.reward, 0.0);
    }

    #[test]
    fn filter_keeps_exactly_reflected_successes() {
        let caps = default_error_caps();
        let mut trajs = vec![];
        for errors in 0..4 {
            let mut t = fixtures::success(&format!("h{errors}"), 8);
            for k in 0..errors {
                t.steps[2 * k].origin = StepOrigin::BasePolicy;
                t.steps[2 * k].delta = false;
                t.steps[2 * k + 1].origin = StepOrigin::TeacherCorrection;
            }
            trajs.push(t);
        }
        let kept: Vec<usize> = filter_self_reflected(&trajs, &caps)
            .unwrap()
            .iter()
            .map(|t| t.error_count())
            .collect();
        assert_eq!(kept, [1, 2]);

        let mut shop = trajs[2].clone();
        shop.instruction.task_kind = TaskKind::Shopping;
        assert!(filter_self_reflected(&[shop], &caps).unwrap().is_empty());

        let mut partial = trajs[1].clone();
        partial.reward = 0.8;
        partial.termination = Termination::EnvDonePartial;
        assert!(filter_self_reflected(&[partial], &caps).unwrap().is_empty());

        let only_household = BTreeMap::from([(TaskKind::Household, 2)]);
        let mut s = trajs[0].clone();
        s.instruction.task_kind = TaskKind::Shopping;
        assert_eq!(
            filter_self_reflected(&[s], &only_household),
            Err(SynthesisError::MissingThreshold(TaskKind::Shopping))
        );
    }

    #[test]
    fn synthesis_is_deterministic_across_parallelism() {
        let corpus = generate_corpus(&CorpusSpec {
            seed: 21,
            household: 15,
            shopping: 10,
            ..Default::default()
        })
        .unwrap();
        let p = noisy(5, 0.4);
        let caps = default_error_caps();
        let a = run_synthesis(&corpus, &p, &OracleTeacher, &caps, 1).unwrap();
        let b = run_synthesis(&corpus, &p, &OracleTeacher, &caps, 4).unwrap();
        assert_eq!(a.synthesized, b.synthesized);
        assert_eq!(a.kept, b.kept);
        assert!(!a.kept.is_empty());
        for t in &a.kept {
            assert!(validate_trajectory(t).is_empty());
        }
    }
}
