//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;
use trajmend::chat::{HttpChatClient, RemoteConfig};
use trajmend::env::{fresh_env, generate_corpus, CorpusSpec};
use trajmend::eval::{aggregate, teacher_benefit, EvalManifest};
use trajmend::jsonl::read_trajectories;
use trajmend::masking::{build_sft_sample, parse_training_line, reference_loss, MaskMode, Source};
use trajmend::model::{validate_trajectory, Step, StepOrigin, TaskInstruction, TaskKind, Termination, Trajectory};
use trajmend::pipeline::{Overrides, Pipeline, D1_FILE, DR_FILE, TRAIN_FILE};
use trajmend::policy::{ErrorKind, NoiseSchedule, NoisyPolicy, RemotePolicy};
use trajmend::react::{parse_react, render_react, Field, MalformedReact};
use trajmend::seeding::rng_for;
use trajmend::synthesis::{filter_self_reflected, run_episode, run_synthesis, split_dataset};
use trajmend::teacher::{JudgeRequest, OracleTeacher, RemoteTeacher, Teacher};
use trajmend::Verdict;

/// Absolute tolerance for loss identities.
const LOSS_TOL: f64 = 1e-12;
const NOISE_SEED: u64 = 17;
const ERROR_RATE: f64 = 0.4;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn instruction(id: &str, kind: TaskKind) -> TaskInstruction {
    TaskInstruction {
        id: id.to_string(),
        task_kind: kind,
        instruction_text: format!("Your task is to: finish {id}."),
        env_config: Value::Null,
        max_steps: 40,
        context_budget: 100_000,
    }
}

/// Structurally valid trajectory of `n` steps with an error at each position
/// in `errors` (each followed by a correction).
fn trajectory(id: &str, kind: TaskKind, n: usize, errors: &[usize], reward: f64) -> Trajectory {
    let mut steps: Vec<Step> = (0..n)
        .map(|i| {
            Step::new(
                i as u32 + 1,
                format!("thought {i}"),
                format!("act {i}"),
                format!("obs {i}"),
                StepOrigin::BasePolicy,
            )
        })
        .collect();
    for &e in errors {
        steps[e].delta = false;
        steps[e + 1].origin = StepOrigin::TeacherCorrection;
    }
    let termination = if reward == 1.0 {
        Termination::Success
    } else if reward > 0.0 {
        Termination::EnvDonePartial
    } else {
        Termination::StepLimit
    };
    Trajectory {
        instruction: instruction(id, kind),
        steps,
        reward,
        termination,
    }
}

fn random_trajectory(rng: &mut impl Rng, id: &str) -> Trajectory {
    let n = rng.random_range(1..12);
    let mut errors = vec![];
    let mut i = 0;
    while i + 1 < n {
        if rng.random_bool(0.25) {
            errors.push(i);
            i += 1;
        }
        i += 1;
    }
    trajectory(id, TaskKind::Household, n, &errors, 1.0)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_for(1, "acceptance/loss");
    let (mut clean, mut masked_total) = (0, 0);
    for k in 0..200 {
        let t = random_trajectory(&mut rng, &format!("t{k}"));
        let provider_seed = rng.random::<u64>();
        let provider = |_: &[trajmend::masking::Segment], i: usize| -> f64 {
            let mut r = rng_for(provider_seed, &i.to_string());
            -r.random::<f64>() * 10.0
        };
        let sft =
            reference_loss(&build_sft_sample(&t, MaskMode::Full, Source::Dr), provider).map_err(|e| e.to_string())?;
        let pm = reference_loss(&build_sft_sample(&t, MaskMode::PartialMask, Source::Dr), provider)
            .map_err(|e| e.to_string())?;
        // Assistant turn j sits at segment 2 + 2j.
        let masked: f64 = t
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.delta)
            .map(|(j, _)| -provider(&[], 2 + 2 * j))
            .sum();
        if t.steps.iter().all(|s| s.delta) {
            clean += 1;
            ensure((sft.total - pm.total).abs() <= LOSS_TOL, || {
                format!("t{k}: clean trajectory has L_SFT {} != L_PM {}", sft.total, pm.total)
            })?;
        } else {
            masked_total += 1;
        }
        ensure((sft.total - pm.total - masked).abs() <= LOSS_TOL, || {
            format!("t{k}: difference {} != masked sum {masked}", sft.total - pm.total)
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    ensure(clean > 0 && masked_total > 0, || {
        "sample lacks one of the two cases".into()
    })?;
    Ok(format!(
        "200 trajectories ({clean} clean, {masked_total} with masks) in {elapsed:.2?}"
    ))
}

const PIPELINE_CONFIG: &str = r#"
[corpus]
seed = 42
household = 40
shopping = 20

[policy]
kind = "noisy"
seed = 3
error_rate = 0.4
error_kind = "wrong_location"

[teacher]
kind = "oracle"

[synthesis]
split_fraction = 0.5
split_seed = 7

[masking]
seed = 11
mode = "partial_mask"
sequential = true

[eval]
seed = 5
household = 10
shopping = 5
"#;

fn run_pipeline(dir: &Path, parallelism: usize) -> Result<(), String> {
    let p = Pipeline::from_toml(
        PIPELINE_CONFIG,
        &Overrides {
            out: Some(dir.to_path_buf()),
            parallelism: Some(parallelism),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    p.run_all().map(|_| ()).map_err(|e| e.to_string())
}

fn criterion_2() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(dir.path(), 2)?;
    let mut steps: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for f in [D1_FILE, DR_FILE] {
        for t in read_trajectories(&dir.path().join(f)).map_err(|e| e.to_string())? {
            steps.insert(t.id().to_string(), t.steps.iter().map(|s| s.delta).collect());
        }
    }
    let mut scanned = 0;
    let mut violations = 0;
    for name in [TRAIN_FILE, "train_stage1.jsonl", "train_stage2.jsonl"] {
        let text = std::fs::read_to_string(dir.path().join(name)).map_err(|e| e.to_string())?;
        for line in text.lines() {
            let rec = parse_training_line(line).map_err(|e| e.to_string())?;
            let deltas = steps.get(&rec.id).ok_or_else(|| format!("{}: unknown id", rec.id))?;
            let assistant: Vec<bool> = rec
                .messages
                .iter()
                .filter(|(role, _, _)| *role == trajmend::chat::Role::Assistant)
                .map(|(_, _, loss)| *loss)
                .collect();
            ensure(assistant.len() == deltas.len(), || {
                format!("{}: turn count mismatch", rec.id)
            })?;
            violations += assistant
                .iter()
                .zip(deltas)
                .filter(|(loss, delta)| **loss && !**delta)
                .count();
            scanned += 1;
        }
    }
    let masked: usize = steps.values().map(|d| d.iter().filter(|x| !**x).count()).sum();
    ensure(violations == 0, || format!("{violations} learnable error turns"))?;
    ensure(masked > 0, || "no error steps to check".into())?;
    Ok(format!("{scanned} records scanned, {masked} error steps, 0 violations"))
}

fn criterion_3() -> Outcome {
    let caps: BTreeMap<TaskKind, usize> = BTreeMap::from([
        (TaskKind::Household, 2),
        (TaskKind::Science, 2),
        (TaskKind::Shopping, 1),
    ]);
    let kinds = [TaskKind::Household, TaskKind::Shopping, TaskKind::Science];
    let rewards = [0.0, 0.5, 1.0];
    let mut set = vec![];
    for i in 0..40 {
        let errors = i % 4;
        let reward = rewards[(i / 4) % 3];
        let kind = kinds[i % 3];
        let positions: Vec<usize> = (0..errors).map(|e| 2 * e).collect();
        set.push(trajectory(&format!("c{i:02}"), kind, 8, &positions, reward));
    }
    for t in &set {
        let v = validate_trajectory(t);
        ensure(v.is_empty(), || format!("{} invalid fixture: {v:?}", t.id()))?;
    }
    let expected: BTreeSet<String> = set
        .iter()
        .filter(|t| {
            let cap = match t.kind() {
                TaskKind::Shopping => 1,
                _ => 2,
            };
            t.reward == 1.0 && (1..=cap).contains(&t.error_count())
        })
        .map(|t| t.id().to_string())
        .collect();
    let kept: BTreeSet<String> = filter_self_reflected(&set, &caps)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|t| t.id().to_string())
        .collect();
    let false_keeps = kept.difference(&expected).count();
    let false_drops = expected.difference(&kept).count();
    ensure(false_keeps == 0 && false_drops == 0, || {
        format!("{false_keeps} false keeps, {false_drops} false drops")
    })?;
    Ok(format!("kept {} of 40, zero false keeps or drops", kept.len()))
}

fn big_corpus() -> Result<Vec<TaskInstruction>, String> {
    generate_corpus(&CorpusSpec {
        seed: 2024,
        household: 100,
        shopping: 50,
        ..Default::default()
    })
    .map_err(|e| e.to_string())
}

fn schedule() -> NoiseSchedule {
    NoiseSchedule {
        seed: NOISE_SEED,
        error_rate: ERROR_RATE,
        error_kind: ErrorKind::WrongLocation,
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let corpus = big_corpus()?;
    let policy = NoisyPolicy::new(schedule());
    let caps = trajmend::synthesis::default_error_caps();
    let out = run_synthesis(&corpus, &policy, &OracleTeacher, &caps, 4).map_err(|e| e.to_string())?;
    ensure(!out.kept.is_empty(), || "kept set is empty".into())?;
    for t in &out.kept {
        let v = validate_trajectory(t);
        ensure(v.is_empty(), || format!("{}: {v:?}", t.id()))?;
        for (i, s) in t.steps.iter().enumerate() {
            if !s.delta {
                ensure(
                    t.steps.get(i + 1).map(|n| n.origin) == Some(StepOrigin::TeacherCorrection),
                    || format!("{}: error step {} not followed by a correction", t.id(), s.index),
                )?;
            }
        }
        let (mut env, _) = fresh_env(&t.instruction).map_err(|e| e.to_string())?;
        let mut reward = 0.0;
        for s in &t.steps {
            reward = env.step(&s.action).map_err(|e| e.to_string())?.reward;
        }
        ensure(env.is_done() && reward == 1.0, || {
            format!("{}: replay reward {reward}", t.id())
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} synthesized, {} kept, all valid and replaying to reward 1, in {elapsed:.2?}",
        out.synthesized.len(),
        out.kept.len()
    ))
}

fn criterion_5() -> Outcome {
    let corpus = big_corpus()?;
    let b = teacher_benefit(&corpus, schedule(), 4).map_err(|e| e.to_string())?;
    ensure(b.noisy_alone <= 0.7, || {
        format!("noisy alone averages {}", b.noisy_alone)
    })?;
    ensure(b.corrected == 1.0, || format!("corrected averages {}", b.corrected))?;
    ensure(b.holds(), || "corrected is not strictly higher".into())?;
    Ok(format!(
        "noisy alone {:.4}, corrected {:.4}",
        b.noisy_alone, b.corrected
    ))
}

/// round(n / 2) with ties to even, on integers.
fn half_to_even(n: usize) -> usize {
    let (q, r) = (n / 2, n % 2);
    if r == 0 || q % 2 == 0 {
        q
    } else {
        q + 1
    }
}

fn criterion_6() -> Outcome {
    let mut summary = vec![];
    for n in [7usize, 8, 1016, 3119] {
        let golden: Vec<Trajectory> = (0..n)
            .flat_map(|i| {
                [
                    trajectory(&format!("h{i:05}"), TaskKind::Household, 1, &[], 1.0),
                    trajectory(&format!("s{i:05}"), TaskKind::Shopping, 1, &[], 1.0),
                ]
            })
            .collect();
        let kinds = [TaskKind::Household, TaskKind::Shopping];
        let (d1, d2) = split_dataset(&golden, &kinds, 0.5, 99).map_err(|e| e.to_string())?;
        for kind in kinds {
            let got = d1.iter().filter(|t| t.kind() == kind).count();
            ensure(got == half_to_even(n), || {
                format!("n={n} {kind}: {got} != {}", half_to_even(n))
            })?;
        }
        let a: BTreeSet<&str> = d1.iter().map(|t| t.id()).collect();
        let b: BTreeSet<&str> = d2.iter().map(|t| t.id()).collect();
        let all: BTreeSet<&str> = golden.iter().map(|t| t.id()).collect();
        ensure(a.is_disjoint(&b), || format!("n={n}: overlap"))?;
        ensure(a.union(&b).copied().collect::<BTreeSet<_>>() == all, || {
            format!("n={n}: not covering")
        })?;
        let again = split_dataset(&golden, &kinds, 0.5, 99).map_err(|e| e.to_string())?;
        ensure(again == (d1.clone(), d2.clone()), || {
            format!("n={n}: not deterministic")
        })?;
        summary.push(format!("{n}->{}", half_to_even(n)));
    }
    Ok(format!("per-task sizes {}", summary.join(", ")))
}

fn criterion_7() -> Outcome {
    let manifest = EvalManifest {
        policy: "fixture".into(),
        seed: 0,
        one_shot: false,
        limits: BTreeMap::new(),
    };
    let fixture = [
        trajectory("e1", TaskKind::Household, 2, &[], 1.0),
        trajectory("e2", TaskKind::Household, 2, &[], 0.0),
        trajectory("e3", TaskKind::Household, 2, &[], 0.5),
        trajectory("e4", TaskKind::Household, 2, &[], 0.75),
    ];
    let r = aggregate(&fixture, 0, manifest.clone());
    let h = &r.per_task[&TaskKind::Household];
    ensure(h.average_reward == 0.5625, || format!("average {}", h.average_reward))?;
    // e2 hit the step limit: three of four completed.
    ensure(h.completion_rate == 0.75, || {
        format!("completion {}", h.completion_rate)
    })?;

    let mut step_limited = trajectory("l1", TaskKind::Shopping, 2, &[], 0.9);
    step_limited.termination = Termination::StepLimit;
    let mut context_limited = trajectory("l2", TaskKind::Shopping, 2, &[], 0.9);
    context_limited.termination = Termination::ContextLimit;
    let done = trajectory("l3", TaskKind::Shopping, 2, &[], 0.5);
    let r = aggregate(&[step_limited, context_limited, done], 0, manifest);
    let s = &r.per_task[&TaskKind::Shopping];
    ensure(s.average_reward == 0.5 / 3.0, || {
        format!("limited runs counted: {}", s.average_reward)
    })?;
    ensure(s.completion_rate == 1.0 / 3.0, || {
        format!("completion {}", s.completion_rate)
    })?;
    Ok("0.5625 average, limited runs score 0, completion counts exact".into())
}

fn criterion_8() -> Outcome {
    let mut rng = rng_for(8, "acceptance/react");
    let printable = |rng: &mut rand_chacha::ChaCha8Rng, max: usize| -> String {
        let len = rng.random_range(1..max);
        (0..len).map(|_| rng.random_range(b' '..=b'~') as char).collect()
    };
    let mut checked = 0;
    while checked < 1000 {
        let mut thought = printable(&mut rng, 60);
        if rng.random_bool(0.3) {
            thought.push('\n');
            thought.push_str(&printable(&mut rng, 30));
        }
        let action = printable(&mut rng, 30);
        let Ok(text) = render_react(&thought, &action) else {
            // Blank or marker-bearing fields are outside the renderable domain.
            continue;
        };
        let p = parse_react(&text).map_err(|e| format!("{text:?}: {e}"))?;
        ensure(p.thought == thought.trim() && p.action == action.trim(), || {
            format!("{text:?} changed")
        })?;
        checked += 1;
    }
    let cases = [
        ("Action: go to room A", MalformedReact::MissingMarker(Field::Thought)),
        ("Thought: go\nAction:   ", MalformedReact::EmptyField(Field::Action)),
        ("Action: go to room A\nThought: first", MalformedReact::OutOfOrder),
    ];
    for (text, want) in cases {
        let got = parse_react(text);
        ensure(got.as_ref().err() == Some(&want), || {
            format!("{text:?}: got {got:?}, want {want:?}")
        })?;
    }
    Ok("1000 round trips, three malformed classes diagnosed".into())
}

fn dir_contents(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
        out.insert(entry.file_name().to_string_lossy().into_owned(), bytes);
    }
    Ok(out)
}

fn criterion_9() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(a.path(), 1)?;
    run_pipeline(b.path(), 4)?;
    let (x, y) = (dir_contents(a.path())?, dir_contents(b.path())?);
    ensure(x.keys().eq(y.keys()), || {
        format!("file sets differ: {:?} vs {:?}", x.keys(), y.keys())
    })?;
    for (name, bytes) in &x {
        ensure(&y[name] == bytes, || format!("{name} differs"))?;
    }
    Ok(format!("{} artifacts byte-identical across runs", x.len()))
}

/// Minimal chat-completions stub that records request bodies.
struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<Value>>>,
}

fn start_stub() -> Result<Stub, String> {
    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let url = format!("http://{}/v1", listener.local_addr().map_err(|e| e.to_string())?);
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = requests.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let reply = if req["model"] == "stub-teacher" {
                "yes"
            } else {
                "Thought: I should look around first.\nAction: look"
            };
            seen.lock().expect("stub lock").push(req);
            let payload =
                serde_json::json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}).to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            );
        }
    });
    Ok(Stub { url, requests })
}

fn criterion_10() -> Outcome {
    let stub = start_stub()?;
    let cfg = |model: &str| RemoteConfig {
        base_url: stub.url.clone(),
        model: model.into(),
        backoff_ms: 10,
        ..RemoteConfig::default()
    };
    let client = |c: &RemoteConfig| -> Result<Arc<HttpChatClient>, String> {
        Ok(Arc::new(HttpChatClient::new(c).map_err(|e| e.to_string())?))
    };
    let policy_cfg = cfg("stub-policy");
    let teacher_cfg = cfg("stub-teacher");
    let policy = RemotePolicy::new(client(&policy_cfg)?, policy_cfg, false);
    let teacher = RemoteTeacher::new(client(&teacher_cfg)?, teacher_cfg);

    let mut task = generate_corpus(&CorpusSpec {
        seed: 10,
        household: 1,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?
    .remove(0);
    task.max_steps = 3;
    let direct = teacher
        .judge(&JudgeRequest {
            task_requirements: "requirements",
            instruction: &task,
            history: &[],
            thought: "t",
            action: "look",
            observation: "o",
        })
        .map_err(|e| e.to_string())?;
    ensure(direct == Verdict::Correct, || format!("bare yes parsed as {direct:?}"))?;

    let ep = run_episode(&task, &policy, Some(&teacher)).map_err(|e| e.to_string())?;
    ensure(ep.trajectory.error_count() == 0 && ep.trajectory.len() == 3, || {
        format!("unexpected episode: {:?}", ep.trajectory.steps)
    })?;

    let requests = stub.requests.lock().map_err(|e| e.to_string())?.clone();
    ensure(requests.len() == 1 + 3 + 3, || {
        format!("{} requests recorded", requests.len())
    })?;
    let mut policy_calls = 0;
    for req in &requests {
        ensure(req["temperature"].as_f64() == Some(0.0), || {
            format!("temperature {}", req["temperature"])
        })?;
        let roles: Vec<&str> = req["messages"]
            .as_array()
            .ok_or("messages missing")?
            .iter()
            .map(|m| m["role"].as_str().unwrap_or("?"))
            .collect();
        if req["model"] == "stub-teacher" {
            ensure(roles == ["system", "user"], || format!("teacher roles {roles:?}"))?;
            continue;
        }
        ensure(req["messages"][1]["content"] == task.instruction_text.as_str(), || {
            "first user message is not the instruction".into()
        })?;
        let mut want = vec!["system", "user"];
        for _ in 0..policy_calls {
            want.extend(["assistant", "user"]);
        }
        ensure(roles == want, || format!("policy call {policy_calls}: roles {roles:?}"))?;
        policy_calls += 1;
    }
    Ok(format!(
        "{} requests at temperature 0, bare yes -> Correct, role layout conforms",
        requests.len()
    ))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("loss identity", criterion_1),
        ("masking soundness", criterion_2),
        ("filter exactness", criterion_3),
        ("synthesis structure", criterion_4),
        ("teacher benefit", criterion_5),
        ("split correctness", criterion_6),
        ("eval arithmetic", criterion_7),
        ("react round trip", criterion_8),
        ("determinism", criterion_9),
        ("remote protocol", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
