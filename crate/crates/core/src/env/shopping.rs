//! Shopping simulator: a small catalog behind a keyword search page.
//!
//! Action grammar: `search[<term>]`, `click[<item title>]`, `buy now`.
//! Buying ends the episode with a graded reward: the fraction of required
//! attributes the item carries, halved when the price exceeds the ceiling.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{check_kind, EnvError, Environment, PlanStep, StepResult, NOTHING_HAPPENS};
use crate::model::{TaskInstruction, TaskKind};
use crate::policy::ErrorKind;

pub const MAX_CATALOG: usize = 50;
pub const SEARCH_PAGE: &str = "You are on the search page.";
pub const BUY: &str = "buy now";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub title: String,
    pub tags: BTreeSet<String>,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    pub attributes: BTreeSet<String>,
    pub price_ceiling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShoppingConfig {
    pub catalog: Vec<CatalogItem>,
    /// Search term -> catalog indices, in display order.
    pub query_index: BTreeMap<String, Vec<usize>>,
    pub requirement: Requirement,
}

/// Reward for purchasing `item` under `req`.
pub fn purchase_reward(item: &CatalogItem, req: &Requirement) -> f64 {
    if req.attributes.is_empty() {
        return 0.0;
    }
    let matched = req.attributes.iter().filter(|a| item.tags.contains(*a)).count();
    let fraction = matched as f64 / req.attributes.len() as f64;
    if item.price <= req.price_ceiling {
        fraction
    } else {
        fraction * 0.5
    }
}

impl ShoppingConfig {
    pub fn satisfies(&self, idx: usize) -> bool {
        purchase_reward(&self.catalog[idx], &self.requirement) == 1.0
    }

    /// Lowest-index satisfying item reachable by search, with the broadest
    /// term that lists it (first in term order on ties).
    pub fn target(&self) -> Option<(usize, &str)> {
        (0..self.catalog.len()).filter(|&i| self.satisfies(i)).find_map(|i| {
            let mut best: Option<(&String, usize)> = None;
            for (term, items) in &self.query_index {
                if items.contains(&i) && best.is_none_or(|(_, n)| items.len() > n) {
                    best = Some((term, items.len()));
                }
            }
            best.map(|(term, _)| (i, term.as_str()))
        })
    }

    pub fn check(&self) -> Result<(), EnvError> {
        let err = |m: String| Err(EnvError::Config(m));
        if self.catalog.is_empty() || self.catalog.len() > MAX_CATALOG {
            return err(format!(
                "catalog must hold 1..={MAX_CATALOG} items, found {}",
                self.catalog.len()
            ));
        }
        let titles: BTreeSet<&str> = self.catalog.iter().map(|c| c.title.as_str()).collect();
        if titles.len() != self.catalog.len() {
            return err("duplicate item titles".into());
        }
        if self.catalog.iter().any(|c| !(c.price.is_finite() && c.price >= 0.0)) {
            return err("item prices must be finite and non-negative".into());
        }
        for (term, items) in &self.query_index {
            if term.trim().is_empty() || term != &term.to_lowercase() {
                return err(format!("search term `{term}` must be non-empty lowercase"));
            }
            if let Some(bad) = items.iter().find(|&&i| i >= self.catalog.len()) {
                return err(format!("search term `{term}` lists unknown item {bad}"));
            }
        }
        if self.requirement.attributes.is_empty() {
            return err("requirement lists no attributes".into());
        }
        if !(0..self.catalog.len()).any(|i| self.satisfies(i)) {
            return err("no catalog item satisfies the requirement".into());
        }
        if self.target().is_none() {
            return err("no search term reaches a satisfying item".into());
        }
        Ok(())
    }

    pub fn describe_requirement(&self) -> String {
        let attrs: Vec<&str> = self.requirement.attributes.iter().map(String::as_str).collect();
        format!(
            "i am looking for an item that is {}, and price lower than {:.2} dollars",
            attrs.join(", "),
            self.requirement.price_ceiling
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Page {
    Search,
    Results {
        term: String,
        items: Vec<usize>,
    },
    Item {
        idx: usize,
        term: String,
        items: Vec<usize>,
    },
}

#[derive(Debug, Default)]
pub struct ShoppingEnv {
    cfg: Option<ShoppingConfig>,
    page: Option<Page>,
    max_steps: u32,
    steps: u32,
    done: bool,
}

fn bracket<'a>(action: &'a str, verb: &str) -> Option<&'a str> {
    action
        .strip_prefix(verb)?
        .strip_prefix('[')?
        .strip_suffix(']')
        .map(str::trim)
}

impl ShoppingEnv {
    fn cfg(&self) -> Result<&ShoppingConfig, EnvError> {
        self.cfg.as_ref().ok_or(EnvError::NotReset)
    }

    fn results_text(cfg: &ShoppingConfig, term: &str, items: &[usize]) -> String {
        if items.is_empty() {
            return format!("No results found for \"{term}\".");
        }
        let mut out = format!("Results for \"{term}\":");
        for (n, &i) in items.iter().enumerate() {
            let it = &cfg.catalog[i];
            out.push_str(&format!("\n[{}] {} - ${:.2}", n + 1, it.title, it.price));
        }
        out
    }

    fn item_text(it: &CatalogItem) -> String {
        let tags: Vec<&str> = it.tags.iter().map(String::as_str).collect();
        format!("{}\nPrice: ${:.2}\nAttributes: {}", it.title, it.price, tags.join(", "))
    }

    fn listed(&self) -> Option<(&str, &[usize])> {
        match self.page.as_ref()? {
            Page::Results { term, items } | Page::Item { term, items, .. } => Some((term.as_str(), items.as_slice())),
            Page::Search => None,
        }
    }
}

impl Environment for ShoppingEnv {
    fn kind(&self) -> TaskKind {
        TaskKind::Shopping
    }

    fn reset(&mut self, instruction: &TaskInstruction) -> Result<String, EnvError> {
        check_kind(TaskKind::Shopping, instruction)?;
        let cfg: ShoppingConfig =
            serde_json::from_value(instruction.env_config.clone()).map_err(|e| EnvError::Config(e.to_string()))?;
        cfg.check()?;
        self.cfg = Some(cfg);
        self.page = Some(Page::Search);
        self.max_steps = instruction.max_steps;
        self.steps = 0;
        self.done = false;
        Ok(SEARCH_PAGE.to_string())
    }

    fn step(&mut self, action: &str) -> Result<StepResult, EnvError> {
        if self.cfg.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        if self.steps >= self.max_steps {
            return Err(EnvError::StepBudgetExhausted(self.max_steps));
        }
        self.steps += 1;
        let a = action.trim();
        let cfg = self.cfg.as_ref().expect("checked above");

        if let Some(term) = bracket(a, "search") {
            let term = term.to_lowercase();
            if term.is_empty() {
                return Ok(StepResult::ongoing(NOTHING_HAPPENS));
            }
            let items = cfg.query_index.get(&term).cloned().unwrap_or_default();
            let obs = Self::results_text(cfg, &term, &items);
            self.page = Some(Page::Results { term, items });
            return Ok(StepResult::ongoing(obs));
        }
        if let Some(title) = bracket(a, "click") {
            let Some((term, items)) = self.listed() else {
                return Ok(StepResult::ongoing(NOTHING_HAPPENS));
            };
            let Some(&idx) = items.iter().find(|&&i| cfg.catalog[i].title == title) else {
                return Ok(StepResult::ongoing(NOTHING_HAPPENS));
            };
            let page = Page::Item {
                idx,
                term: term.to_string(),
                items: items.to_vec(),
            };
            let obs = Self::item_text(&cfg.catalog[idx]);
            self.page = Some(page);
            return Ok(StepResult::ongoing(obs));
        }
        if a == BUY {
            if let Some(Page::Item { idx, .. }) = self.page {
                let item = &cfg.catalog[idx];
                let reward = purchase_reward(item, &cfg.requirement);
                self.done = true;
                return Ok(StepResult {
                    observation: format!("Thank you for shopping with us! You bought: {}.", item.title),
                    done: true,
                    reward,
                });
            }
        }
        Ok(StepResult::ongoing(NOTHING_HAPPENS))
    }

    fn plan_from_current(&self) -> Result<Vec<PlanStep>, EnvError> {
        if self.done {
            return Ok(vec![]);
        }
        let cfg = self.cfg()?;
        let (target, term) = cfg
            .target()
            .ok_or_else(|| EnvError::PlanNotFound("no reachable satisfying item".into()))?;
        let item = &cfg.catalog[target];
        let attrs: Vec<&str> = cfg.requirement.attributes.iter().map(String::as_str).collect();
        let search = PlanStep::new(
            format!(
                "I should search for {term} to find an item that is {}.",
                attrs.join(", ")
            ),
            format!("search[{term}]"),
        );
        let click = PlanStep::new(
            format!(
                "The {} matches what I need and should be under {:.2} dollars. Let me open it.",
                item.title, cfg.requirement.price_ceiling
            ),
            format!("click[{}]", item.title),
        );
        let buy = PlanStep::new(
            format!(
                "This item has every attribute I need and costs {:.2} dollars, so I will buy it.",
                item.price
            ),
            BUY,
        );
        let plan = match self.page.as_ref().ok_or(EnvError::NotReset)? {
            Page::Item { idx, .. } if *idx == target => vec![buy],
            Page::Results { items, .. } | Page::Item { items, .. } if items.contains(&target) => {
                vec![click, buy]
            }
            _ => vec![search, click, buy],
        };
        Ok(plan)
    }

    fn corruptions(&self, action: &str, kind: ErrorKind) -> Vec<String> {
        let Ok(cfg) = self.cfg() else { return vec![] };
        let a = action.trim();
        match kind {
            ErrorKind::WrongLocation => match bracket(a, "search") {
                Some(term) => cfg
                    .query_index
                    .keys()
                    .filter(|t| t.as_str() != term)
                    .map(|t| format!("search[{t}]"))
                    .collect(),
                None => vec![],
            },
            ErrorKind::WrongObject => match (bracket(a, "click"), self.listed()) {
                (Some(title), Some((_, items))) => items
                    .iter()
                    .map(|&i| cfg.catalog[i].title.as_str())
                    .filter(|t| *t != title)
                    .map(|t| format!("click[{t}]"))
                    .collect(),
                _ => vec![],
            },
            ErrorKind::PrematureTerminal if a != BUY => vec![BUY.to_string()],
            ErrorKind::PrematureTerminal => vec![],
        }
    }

    fn step_count(&self) -> u32 {
        self.steps
    }

    fn is_done(&self) -> bool {
        self.done
    }
}
