//! File-based pipeline stages driven by one TOML config: generate the corpus,
//! synthesize reflection trajectories, build training files, evaluate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chat::{ChatBackend, RemoteConfig, RemoteError};
use crate::env::{generate_corpus, CorpusSpec};
use crate::eval::{render_table, run_eval};
use crate::jsonl::{
    attach_configs, read_records, read_trajectories, write_records, write_string, write_trajectories, JsonlError,
};
use crate::masking::{assemble_with_modes, training_jsonl, MaskMode, TrainingRecipe};
use crate::model::{TaskInstruction, TaskKind, Trajectory};
use crate::policy::{ErrorKind, NoiseSchedule, NoisyPolicy, Policy, RemotePolicy, ScriptedPolicy};
use crate::synthesis::{golden_corpus, run_synthesis, split_dataset, SynthCounts, SynthManifest};
use crate::teacher::{OracleTeacher, RemoteTeacher, Teacher};

pub const INSTRUCTIONS_FILE: &str = "instructions.jsonl";
pub const GOLDEN_FILE: &str = "golden.jsonl";
pub const D1_FILE: &str = "d1.jsonl";
pub const D2_FILE: &str = "d2.jsonl";
pub const SYNTHESIZED_FILE: &str = "synthesized.jsonl";
pub const DR_FILE: &str = "dr.jsonl";
pub const FAILURES_FILE: &str = "synth_failures.jsonl";
pub const SYNTH_MANIFEST_FILE: &str = "synth_manifest.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TRAIN_STAGE1_FILE: &str = "train_stage1.jsonl";
pub const TRAIN_STAGE2_FILE: &str = "train_stage2.jsonl";
pub const MASK_MANIFEST_FILE: &str = "mask_manifest.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const EVAL_TABLE_FILE: &str = "eval_report.txt";
pub const EVAL_TRAJECTORIES_FILE: &str = "eval_trajectories.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Scripted,
    Noisy,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    pub seed: u64,
    pub error_rate: f64,
    pub error_kind: ErrorKind,
    pub one_shot: bool,
    pub remote: RemoteConfig,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            kind: PolicyKind::Noisy,
            seed: 0,
            error_rate: 0.4,
            error_kind: ErrorKind::WrongLocation,
            one_shot: false,
            remote: RemoteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    Oracle,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub kind: TeacherKind,
    pub remote: RemoteConfig,
}

impl Default for TeacherSection {
    fn default() -> Self {
        TeacherSection {
            kind: TeacherKind::Oracle,
            remote: RemoteConfig {
                model: "teacher".into(),
                ..RemoteConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    pub split_fraction: f64,
    pub split_seed: u64,
    pub max_errors: BTreeMap<TaskKind, usize>,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        SynthesisSection {
            split_fraction: 0.5,
            split_seed: 0,
            max_errors: crate::synthesis::default_error_caps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingSection {
    pub seed: u64,
    pub mode: MaskMode,
    /// Also write the two-stage variant: golden set first, reflection set second.
    pub sequential: bool,
    pub recipe: TrainingRecipe,
}

impl Default for MaskingSection {
    fn default() -> Self {
        MaskingSection {
            seed: 0,
            mode: MaskMode::PartialMask,
            sequential: false,
            recipe: TrainingRecipe::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub seed: u64,
    pub household: usize,
    pub shopping: usize,
    /// Policy under evaluation; the `[policy]` section when absent.
    pub policy: Option<PolicySection>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            seed: 1,
            household: 20,
            shopping: 10,
            policy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub corpus: CorpusSpec,
    pub policy: PolicySection,
    pub teacher: TeacherSection,
    pub synthesis: SynthesisSection,
    pub masking: MaskingSection,
    pub eval: EvalSection,
}

/// Command-line adjustments layered on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub mode: Option<MaskMode>,
    pub one_shot: bool,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("synthesis kept no trajectories ({0})")]
    ZeroYield(String),
}

impl PipelineError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Runtime(_) => 2,
            PipelineError::ZeroYield(_) => 3,
        }
    }
}

impl From<JsonlError> for PipelineError {
    fn from(e: JsonlError) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Runtime(e.to_string())
}

/// Config plus overrides, ready to run.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    pub parallelism: usize,
}

impl Pipeline {
    pub fn from_toml(text: &str, ov: &Overrides) -> Result<Self, PipelineError> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(seed) = ov.seed {
            config.corpus.seed = seed;
            config.policy.seed = seed;
            config.synthesis.split_seed = seed;
            config.masking.seed = seed;
            config.eval.seed = seed;
            if let Some(p) = config.eval.policy.as_mut() {
                p.seed = seed;
            }
        }
        if let Some(mode) = ov.mode {
            config.masking.mode = mode;
        }
        if ov.one_shot {
            config.policy.one_shot = true;
            if let Some(p) = config.eval.policy.as_mut() {
                p.one_shot = true;
            }
        }
        let out_dir = ov
            .out
            .clone()
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let parallelism = ov.parallelism.or(config.parallelism).unwrap_or(1).max(1);
        let p = Pipeline {
            config,
            out_dir,
            parallelism,
        };
        p.check()?;
        Ok(p)
    }

    pub fn from_file(path: &Path, ov: &Overrides) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, ov)
    }

    fn check(&self) -> Result<(), PipelineError> {
        let c = &self.config;
        let bad = |m: String| Err(PipelineError::Config(m));
        for p in std::iter::once(&c.policy).chain(c.eval.policy.as_ref()) {
            if !(0.0..=1.0).contains(&p.error_rate) {
                return bad(format!("error_rate must lie in [0, 1], got {}", p.error_rate));
            }
        }
        if !(c.synthesis.split_fraction > 0.0 && c.synthesis.split_fraction < 1.0) {
            return bad(format!(
                "split_fraction must lie strictly between 0 and 1, got {}",
                c.synthesis.split_fraction
            ));
        }
        for kind in self.kinds() {
            if !c.synthesis.max_errors.contains_key(&kind) {
                return bad(format!("synthesis.max_errors has no entry for {kind}"));
            }
        }
        Ok(())
    }

    fn kinds(&self) -> Vec<TaskKind> {
        let c = &self.config.corpus;
        [(TaskKind::Household, c.household), (TaskKind::Shopping, c.shopping)]
            .into_iter()
            .filter(|(_, n)| *n > 0)
            .map(|(k, _)| k)
            .collect()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Generates the instruction corpus and its golden trajectories.
    pub fn gen(&self) -> Result<String, PipelineError> {
        let spec = &self.config.corpus;
        if spec.household + spec.shopping == 0 {
            return Err(PipelineError::Config("empty corpus: every task count is 0".into()));
        }
        let instructions = generate_corpus(spec).map_err(runtime)?;
        let golden = golden_corpus(&instructions, self.parallelism).map_err(runtime)?;
        write_records(&self.path(INSTRUCTIONS_FILE), &instructions)?;
        write_trajectories(&self.path(GOLDEN_FILE), &golden)?;
        Ok(format!(
            "generated {} instructions and {} golden trajectories in {}",
            instructions.len(),
            golden.len(),
            self.out_dir.display()
        ))
    }

    fn instructions(&self) -> Result<Vec<TaskInstruction>, PipelineError> {
        Ok(read_records(&self.path(INSTRUCTIONS_FILE))?)
    }

    fn read_with_configs(
        &self,
        name: &str,
        instructions: &[TaskInstruction],
    ) -> Result<Vec<Trajectory>, PipelineError> {
        let mut trajs = read_trajectories(&self.path(name))?;
        attach_configs(&mut trajs, instructions)?;
        Ok(trajs)
    }

    /// Splits the golden corpus, runs the monitored loop over the held-back
    /// half and keeps the reflection trajectories.
    pub fn synth(&self) -> Result<String, PipelineError> {
        let c = &self.config;
        let instructions = self.instructions()?;
        let golden = self.read_with_configs(GOLDEN_FILE, &instructions)?;
        let (d1, d2) = split_dataset(
            &golden,
            &self.kinds(),
            c.synthesis.split_fraction,
            c.synthesis.split_seed,
        )
        .map_err(runtime)?;
        let u2: Vec<TaskInstruction> = d2.iter().map(|t| t.instruction.clone()).collect();
        let policy = build_policy(&c.policy)?;
        let teacher = build_teacher(&c.teacher)?;
        let outcome = run_synthesis(
            &u2,
            policy.as_ref(),
            teacher.as_ref(),
            &c.synthesis.max_errors,
            self.parallelism,
        )
        .map_err(runtime)?;

        write_trajectories(&self.path(D1_FILE), &d1)?;
        write_trajectories(&self.path(D2_FILE), &d2)?;
        write_trajectories(&self.path(SYNTHESIZED_FILE), &outcome.synthesized)?;
        write_trajectories(&self.path(DR_FILE), &outcome.kept)?;
        write_records(&self.path(FAILURES_FILE), &outcome.failures)?;
        let counts = SynthCounts {
            golden_in: golden.len(),
            d1: d1.len(),
            d2: d2.len(),
            synthesized: outcome.synthesized.len(),
            failed: outcome.failures.len(),
            kept: outcome.kept.len(),
            unjudged_steps: outcome.unjudged_steps,
        };
        let manifest = SynthManifest::new(
            c.corpus.seed,
            c.synthesis.split_seed,
            c.synthesis.split_fraction,
            policy.as_ref(),
            teacher.as_ref(),
            c.synthesis.max_errors.clone(),
            counts.clone(),
        );
        write_string(&self.path(SYNTH_MANIFEST_FILE), &pretty(&manifest))?;

        let summary = format!(
            "synthesized {} of {} held-back tasks, kept {}, {} failed",
            counts.synthesized, counts.d2, counts.kept, counts.failed
        );
        if outcome.synthesized.is_empty() && !u2.is_empty() {
            let first = outcome.failures.first().map(|f| f.reason.as_str()).unwrap_or("");
            return Err(PipelineError::Runtime(format!(
                "every synthesis attempt failed: {first}"
            )));
        }
        if outcome.kept.is_empty() {
            return Err(PipelineError::ZeroYield(summary));
        }
        Ok(summary)
    }

    /// Builds the training files from the golden half and the kept set.
    pub fn mask(&self) -> Result<String, PipelineError> {
        let c = &self.config.masking;
        let instructions = self.instructions()?;
        let d1 = self.read_with_configs(D1_FILE, &instructions)?;
        let dr = self.read_with_configs(DR_FILE, &instructions)?;
        let samples = assemble_with_modes(&d1, &dr, c.mode, c.seed).map_err(runtime)?;
        write_string(&self.path(TRAIN_FILE), &training_jsonl(&samples))?;
        let mut files = vec![TRAIN_FILE.to_string()];
        if c.sequential {
            let stage1 = assemble_with_modes(&d1, &[], c.mode, c.seed).map_err(runtime)?;
            let stage2 = assemble_with_modes(&[], &dr, c.mode, c.seed).map_err(runtime)?;
            write_string(&self.path(TRAIN_STAGE1_FILE), &training_jsonl(&stage1))?;
            write_string(&self.path(TRAIN_STAGE2_FILE), &training_jsonl(&stage2))?;
            files.extend([TRAIN_STAGE1_FILE.to_string(), TRAIN_STAGE2_FILE.to_string()]);
        }
        let masked_segments: usize = samples
            .iter()
            .map(|s| s.assistant_segments().filter(|a| !a.learn).count())
            .sum();
        let manifest = MaskManifest {
            seed: c.seed,
            dr_mode: c.mode,
            samples: samples.len(),
            from_d1: d1.len(),
            from_dr: dr.len(),
            masked_segments,
            files,
            recipe: c.recipe.clone(),
        };
        write_string(&self.path(MASK_MANIFEST_FILE), &pretty(&manifest))?;
        Ok(format!(
            "wrote {} training samples ({masked_segments} masked turns)",
            samples.len()
        ))
    }

    /// Evaluates the configured policy on a freshly generated held-out set.
    pub fn eval(&self) -> Result<String, PipelineError> {
        let c = &self.config;
        let spec = CorpusSpec {
            seed: c.eval.seed,
            household: c.eval.household,
            shopping: c.eval.shopping,
            id_prefix: "test-".into(),
            ..c.corpus.clone()
        };
        if spec.household + spec.shopping == 0 {
            return Err(PipelineError::Config(
                "empty evaluation set: every task count is 0".into(),
            ));
        }
        let tests = generate_corpus(&spec).map_err(runtime)?;
        let section = c.eval.policy.as_ref().unwrap_or(&c.policy);
        let policy = build_policy(section)?;
        let (report, trajs) =
            run_eval(policy.as_ref(), &tests, c.eval.seed, section.one_shot, self.parallelism).map_err(runtime)?;
        write_trajectories(&self.path(EVAL_TRAJECTORIES_FILE), &trajs)?;
        write_string(&self.path(EVAL_REPORT_FILE), &pretty(&report))?;
        let table = render_table(&report);
        write_string(&self.path(EVAL_TABLE_FILE), &table)?;
        Ok(table)
    }

    /// All four stages in order. A zero-yield synthesis still lets the later
    /// stages run, and is reported at the end.
    pub fn run_all(&self) -> Result<String, PipelineError> {
        let mut out = vec![self.gen()?];
        let deferred = match self.synth() {
            Ok(s) => {
                out.push(s);
                None
            }
            Err(PipelineError::ZeroYield(s)) => {
                out.push(s.clone());
                Some(PipelineError::ZeroYield(s))
            }
            Err(e) => return Err(e),
        };
        out.push(self.mask()?);
        out.push(self.eval()?);
        match deferred {
            Some(e) => Err(e),
            None => Ok(out.join("\n")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskManifest {
    pub seed: u64,
    pub dr_mode: MaskMode,
    pub samples: usize,
    pub from_d1: usize,
    pub from_dr: usize,
    pub masked_segments: usize,
    pub files: Vec<String>,
    pub recipe: TrainingRecipe,
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("manifest serializes") + "\n"
}

fn backend(cfg: &RemoteConfig) -> Result<Arc<dyn ChatBackend>, PipelineError> {
    #[cfg(feature = "remote")]
    {
        crate::chat::HttpChatClient::new(cfg)
            .map(|c| Arc::new(c) as Arc<dyn ChatBackend>)
            .map_err(|e| match e {
                RemoteError::Config(m) => PipelineError::Config(m),
                other => runtime(other),
            })
    }
    #[cfg(not(feature = "remote"))]
    {
        let _ = cfg;
        Err(PipelineError::Config(
            RemoteError::Config("built without remote support".into()).to_string(),
        ))
    }
}

pub fn build_policy(section: &PolicySection) -> Result<Box<dyn Policy>, PipelineError> {
    Ok(match section.kind {
        PolicyKind::Scripted => Box::new(ScriptedPolicy),
        PolicyKind::Noisy => Box::new(NoisyPolicy::new(NoiseSchedule {
            seed: section.seed,
            error_rate: section.error_rate,
            error_kind: section.error_kind,
        })),
        PolicyKind::Remote => Box::new(RemotePolicy::new(
            backend(&section.remote)?,
            section.remote.clone(),
            section.one_shot,
        )),
    })
}

pub fn build_teacher(section: &TeacherSection) -> Result<Box<dyn Teacher>, PipelineError> {
    Ok(match section.kind {
        TeacherKind::Oracle => Box::new(OracleTeacher),
        TeacherKind::Remote => Box::new(RemoteTeacher::new(backend(&section.remote)?, section.remote.clone())),
    })
}
