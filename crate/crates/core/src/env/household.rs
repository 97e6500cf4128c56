//! Household simulator: a handful of places, some portable objects and a goal
//! of the form "object X placed in receptacle Y", optionally heated or cooled
//! first.
//!
//! Action grammar: `go to <place>`, `take <object>`, `put <object> in <place>`,
//! `heat <object> with microwave`, `cool <object> with fridge`, `look`,
//! `inventory`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{check_kind, EnvError, Environment, PlanStep, StepResult, NOTHING_HAPPENS};
use crate::model::{TaskInstruction, TaskKind};
use crate::policy::ErrorKind;

pub const MAX_LOCATIONS: usize = 8;
pub const MICROWAVE: &str = "microwave";
pub const FRIDGE: &str = "fridge";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modifier {
    Heated,
    Cooled,
}

impl Modifier {
    fn appliance(self) -> &'static str {
        match self {
            Modifier::Heated => MICROWAVE,
            Modifier::Cooled => FRIDGE,
        }
    }

    fn verb(self) -> &'static str {
        match self {
            Modifier::Heated => "heat",
            Modifier::Cooled => "cool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub name: String,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HouseholdGoal {
    pub object: String,
    pub receptacle: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modifier: Option<Modifier>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HouseholdConfig {
    pub locations: Vec<String>,
    pub objects: Vec<PlacedObject>,
    pub goal: HouseholdGoal,
}

impl HouseholdConfig {
    pub fn check(&self) -> Result<(), EnvError> {
        let err = |m: String| Err(EnvError::Config(m));
        if self.locations.is_empty() || self.locations.len() > MAX_LOCATIONS {
            return err(format!(
                "expected 1..={MAX_LOCATIONS} locations, found {}",
                self.locations.len()
            ));
        }
        let locs: BTreeSet<&str> = self.locations.iter().map(String::as_str).collect();
        if locs.len() != self.locations.len() {
            return err("duplicate location names".into());
        }
        let mut names = BTreeSet::new();
        for o in &self.objects {
            if !names.insert(o.name.as_str()) {
                return err(format!("duplicate object `{}`", o.name));
            }
            if !locs.contains(o.location.as_str()) {
                return err(format!("object `{}` placed at unknown `{}`", o.name, o.location));
            }
        }
        if !names.contains(self.goal.object.as_str()) {
            return err(format!("goal object `{}` does not exist", self.goal.object));
        }
        if !locs.contains(self.goal.receptacle.as_str()) {
            return err(format!("goal receptacle `{}` does not exist", self.goal.receptacle));
        }
        if let Some(m) = self.goal.modifier {
            if !locs.contains(m.appliance()) {
                return err(format!("goal needs a {} but none exists", m.appliance()));
            }
        }
        Ok(())
    }

    pub fn task_sentence(&self) -> String {
        let g = &self.goal;
        match g.modifier {
            None => format!("put the {} in the {}", g.object, g.receptacle),
            Some(m) => format!("{} the {} and put it in the {}", m.verb(), g.object, g.receptacle),
        }
    }

    pub fn scene(&self) -> String {
        format!(
            "You are in the middle of a house. Looking around, you see: {}.",
            self.locations.join(", ")
        )
    }
}

#[derive(Debug, Clone)]
struct World {
    cfg: HouseholdConfig,
    agent_at: Option<String>,
    /// object -> place; `None` while carried.
    object_at: BTreeMap<String, Option<String>>,
    heated: BTreeSet<String>,
    cooled: BTreeSet<String>,
}

impl World {
    fn new(cfg: HouseholdConfig) -> Self {
        let object_at = cfg
            .objects
            .iter()
            .map(|o| (o.name.clone(), Some(o.location.clone())))
            .collect();
        World {
            cfg,
            agent_at: None,
            object_at,
            heated: BTreeSet::new(),
            cooled: BTreeSet::new(),
        }
    }

    fn is_location(&self, s: &str) -> bool {
        self.cfg.locations.iter().any(|l| l == s)
    }

    fn holding(&self, obj: &str) -> bool {
        matches!(self.object_at.get(obj), Some(None))
    }

    fn objects_at(&self, loc: &str) -> Vec<&str> {
        self.object_at
            .iter()
            .filter(|(_, at)| at.as_deref() == Some(loc))
            .map(|(o, _)| o.as_str())
            .collect()
    }

    fn describe(&self, loc: &str) -> String {
        let objs = self.objects_at(loc);
        if objs.is_empty() {
            "You see nothing there.".to_string()
        } else {
            let items: Vec<String> = objs.iter().map(|o| format!("a {o}")).collect();
            format!("You see {}.", items.join(", "))
        }
    }

    fn goal_satisfied(&self) -> bool {
        let g = &self.cfg.goal;
        let placed = self.object_at.get(&g.object).and_then(|a| a.as_deref()) == Some(g.receptacle.as_str());
        let modified = match g.modifier {
            None => true,
            Some(Modifier::Heated) => self.heated.contains(&g.object),
            Some(Modifier::Cooled) => self.cooled.contains(&g.object),
        };
        placed && modified
    }

    /// Applies an action; `None` means it was not executable.
    fn apply(&mut self, action: &str) -> Option<String> {
        let a = action.trim();
        if a == "look" {
            return Some(match &self.agent_at {
                None => self.cfg.scene(),
                Some(l) => format!("You are at the {l}. {}", self.describe(l)),
            });
        }
        if a == "inventory" {
            let held: Vec<&str> = self
                .object_at
                .iter()
                .filter(|(_, at)| at.is_none())
                .map(|(o, _)| o.as_str())
                .collect();
            return Some(if held.is_empty() {
                "You are not carrying anything.".to_string()
            } else {
                format!("You are carrying: {}.", held.join(", "))
            });
        }
        if let Some(loc) = a.strip_prefix("go to ") {
            let loc = loc.trim();
            if !self.is_location(loc) {
                return None;
            }
            if self.agent_at.as_deref() == Some(loc) {
                return Some(format!("You are already at the {loc}. {}", self.describe(loc)));
            }
            self.agent_at = Some(loc.to_string());
            return Some(format!("You arrive at the {loc}. {}", self.describe(loc)));
        }
        if let Some(obj) = a.strip_prefix("take ") {
            let obj = obj.trim();
            let here = self.agent_at.clone()?;
            let at = self.object_at.get_mut(obj)?;
            if at.as_deref() != Some(here.as_str()) {
                return None;
            }
            *at = None;
            return Some(format!("You pick up the {obj} from the {here}."));
        }
        if let Some(rest) = a.strip_prefix("put ") {
            let (obj, loc) = rest.split_once(" in ")?;
            let (obj, loc) = (obj.trim(), loc.trim());
            if !self.holding(obj) || self.agent_at.as_deref() != Some(loc) {
                return None;
            }
            self.object_at.insert(obj.to_string(), Some(loc.to_string()));
            return Some(format!("You put the {obj} in the {loc}."));
        }
        for m in [Modifier::Heated, Modifier::Cooled] {
            let prefix = format!("{} ", m.verb());
            let suffix = format!(" with {}", m.appliance());
            if let Some(obj) = a.strip_prefix(&prefix).and_then(|r| r.strip_suffix(&suffix)) {
                let obj = obj.trim();
                if !self.holding(obj) || self.agent_at.as_deref() != Some(m.appliance()) {
                    return None;
                }
                match m {
                    Modifier::Heated => self.heated.insert(obj.to_string()),
                    Modifier::Cooled => self.cooled.insert(obj.to_string()),
                };
                return Some(format!("You {} the {obj} using the {}.", m.verb(), m.appliance()));
            }
        }
        None
    }

    fn plan(&self) -> Result<Vec<PlanStep>, EnvError> {
        let g = &self.cfg.goal;
        let obj = g.object.as_str();
        if self.goal_satisfied() {
            return Ok(vec![PlanStep::new(
                format!(
                    "The {obj} already seems to be in the {}. Let me look to confirm.",
                    g.receptacle
                ),
                "look",
            )]);
        }
        let mut plan = Vec::new();
        let mut at = self.agent_at.clone();
        if !self.holding(obj) {
            let loc = self
                .object_at
                .get(obj)
                .cloned()
                .flatten()
                .ok_or_else(|| EnvError::PlanNotFound(format!("`{obj}` is nowhere")))?;
            if at.as_deref() != Some(loc.as_str()) {
                plan.push(PlanStep::new(
                    format!("I need to find the {obj} first."),
                    format!("go to {loc}"),
                ));
                at = Some(loc.clone());
            }
            plan.push(PlanStep::new(
                format!("The {obj} is here in the {loc}. I will pick it up."),
                format!("take {obj}"),
            ));
        }
        let needs_modifier = match g.modifier {
            Some(Modifier::Heated) => !self.heated.contains(obj),
            Some(Modifier::Cooled) => !self.cooled.contains(obj),
            None => false,
        };
        if let (true, Some(m)) = (needs_modifier, g.modifier) {
            let app = m.appliance();
            if at.as_deref() != Some(app) {
                plan.push(PlanStep::new(
                    format!("Now I need to {} the {obj}, so I should go to the {app}.", m.verb()),
                    format!("go to {app}"),
                ));
                at = Some(app.to_string());
            }
            plan.push(PlanStep::new(
                format!("I am at the {app} holding the {obj}. I will {} it.", m.verb()),
                format!("{} {obj} with {app}", m.verb()),
            ));
        }
        if at.as_deref() != Some(g.receptacle.as_str()) {
            plan.push(PlanStep::new(
                format!("Now I can bring the {obj} to the {}.", g.receptacle),
                format!("go to {}", g.receptacle),
            ));
        }
        plan.push(PlanStep::new(
            format!("I will put the {obj} in the {} to finish the task.", g.receptacle),
            format!("put {obj} in {}", g.receptacle),
        ));
        Ok(plan)
    }
}

#[derive(Debug, Default)]
pub struct HouseholdEnv {
    world: Option<World>,
    max_steps: u32,
    steps: u32,
    done: bool,
}

impl HouseholdEnv {
    fn world(&self) -> Result<&World, EnvError> {
        self.world.as_ref().ok_or(EnvError::NotReset)
    }
}

impl Environment for HouseholdEnv {
    fn kind(&self) -> TaskKind {
        TaskKind::Household
    }

    fn reset(&mut self, instruction: &TaskInstruction) -> Result<String, EnvError> {
        check_kind(TaskKind::Household, instruction)?;
        let cfg: HouseholdConfig =
            serde_json::from_value(instruction.env_config.clone()).map_err(|e| EnvError::Config(e.to_string()))?;
        cfg.check()?;
        let scene = cfg.scene();
        self.world = Some(World::new(cfg));
        self.max_steps = instruction.max_steps;
        self.steps = 0;
        self.done = false;
        Ok(scene)
    }

    fn step(&mut self, action: &str) -> Result<StepResult, EnvError> {
        if self.world.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        if self.steps >= self.max_steps {
            return Err(EnvError::StepBudgetExhausted(self.max_steps));
        }
        self.steps += 1;
        let world = self.world.as_mut().expect("checked above");
        match world.apply(action) {
            None => Ok(StepResult::ongoing(NOTHING_HAPPENS)),
            Some(obs) => {
                if world.goal_satisfied() {
                    self.done = true;
                    Ok(StepResult {
                        observation: format!("{obs} The task is complete."),
                        done: true,
                        reward: 1.0,
                    })
                } else {
                    Ok(StepResult::ongoing(obs))
                }
            }
        }
    }

    fn plan_from_current(&self) -> Result<Vec<PlanStep>, EnvError> {
        if self.done {
            return Ok(vec![]);
        }
        self.world()?.plan()
    }

    fn corruptions(&self, action: &str, kind: ErrorKind) -> Vec<String> {
        let Ok(w) = self.world() else { return vec![] };
        let a = action.trim();
        let places = |skip: &[&str]| -> Vec<String> {
            w.cfg
                .locations
                .iter()
                .filter(|l| !skip.contains(&l.as_str()))
                .cloned()
                .collect()
        };
        let others = |obj: &str| -> Vec<String> { w.object_at.keys().filter(|o| *o != obj).cloned().collect() };
        match kind {
            ErrorKind::WrongLocation => {
                if let Some(loc) = a.strip_prefix("go to ") {
                    let here = w.agent_at.as_deref().unwrap_or("");
                    places(&[loc, here]).into_iter().map(|l| format!("go to {l}")).collect()
                } else if let Some((obj, loc)) = a.strip_prefix("put ").and_then(|r| r.split_once(" in ")) {
                    places(&[loc])
                        .into_iter()
                        .map(|l| format!("put {obj} in {l}"))
                        .collect()
                } else {
                    vec![]
                }
            }
            ErrorKind::WrongObject => {
                if let Some(obj) = a.strip_prefix("take ") {
                    others(obj).into_iter().map(|o| format!("take {o}")).collect()
                } else if let Some((obj, loc)) = a.strip_prefix("put ").and_then(|r| r.split_once(" in ")) {
                    others(obj).into_iter().map(|o| format!("put {o} in {loc}")).collect()
                } else {
                    [Modifier::Heated, Modifier::Cooled]
                        .iter()
                        .find_map(|m| {
                            let obj = a
                                .strip_prefix(&format!("{} ", m.verb()))?
                                .strip_suffix(&format!(" with {}", m.appliance()))?;
                            Some(
                                others(obj)
                                    .into_iter()
                                    .map(|o| format!("{} {o} with {}", m.verb(), m.appliance()))
                                    .collect(),
                            )
                        })
                        .unwrap_or_default()
                }
            }
            ErrorKind::PrematureTerminal => {
                let g = &w.cfg.goal;
                let finish = format!("put {} in {}", g.object, g.receptacle);
                if a == finish {
                    vec![]
                } else {
                    vec![finish]
                }
            }
        }
    }

    fn step_count(&self) -> u32 {
        self.steps
    }

    fn is_done(&self) -> bool {
        self.done
    }
}
