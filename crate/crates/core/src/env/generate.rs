//! Seeded generation of distinct, solvable task instructions.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::household::{HouseholdConfig, HouseholdGoal, Modifier, PlacedObject, FRIDGE, MICROWAVE};
use super::shopping::{CatalogItem, Requirement, ShoppingConfig};
use super::{golden_plan, EnvError};
use crate::model::{TaskInstruction, TaskKind};
use crate::seeding::rng_for;

const ROOMS: [&str; 4] = ["room A", "room B", "room C", "room D"];
const RECEPTACLES: [&str; 7] = ["safe", "drawer", "shelf", "cabinet", "countertop", "sofa", "desk"];
const OBJECTS: [&str; 12] = [
    "vase",
    "key",
    "apple",
    "mug",
    "book",
    "pen",
    "plate",
    "egg",
    "bowl",
    "cellphone",
    "potato",
    "tomato",
];

const COLORS: [&str; 5] = ["red", "blue", "green", "black", "white"];
const MATERIALS: [&str; 4] = ["cotton", "wool", "leather", "polyester"];
const STYLES: [&str; 4] = ["long-sleeve", "slim-fit", "waterproof", "lightweight"];
const PRODUCTS: [&str; 5] = ["shirt", "jacket", "shoes", "bag", "hat"];

/// How many tasks of each kind to generate, and their limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub household: usize,
    pub shopping: usize,
    pub household_max_steps: u32,
    pub shopping_max_steps: u32,
    pub context_budget: usize,
    /// Prefix for generated ids, so held-out sets never collide with the corpus.
    pub id_prefix: String,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 0,
            household: 0,
            shopping: 0,
            household_max_steps: 30,
            shopping_max_steps: 10,
            context_budget: 16_000,
            id_prefix: String::new(),
        }
    }
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<TaskInstruction>, EnvError> {
    let mut out = Vec::with_capacity(spec.household + spec.shopping);
    let mut seen = BTreeSet::new();

    let mut rng = rng_for(spec.seed, "household");
    let mut n = 0;
    while n < spec.household {
        let cfg = household_config(&mut rng);
        let env_config = serde_json::to_value(&cfg).expect("config serializes");
        if !seen.insert(env_config.to_string()) {
            continue;
        }
        let u = TaskInstruction {
            id: format!("{}household-{n:04}", spec.id_prefix),
            task_kind: TaskKind::Household,
            instruction_text: format!("{}\nYour task is to: {}.", cfg.scene(), cfg.task_sentence()),
            env_config,
            max_steps: spec.household_max_steps,
            context_budget: spec.context_budget,
        };
        golden_plan(&u)?;
        out.push(u);
        n += 1;
    }

    let mut rng = rng_for(spec.seed, "shopping");
    let mut n = 0;
    while n < spec.shopping {
        let cfg = shopping_config(&mut rng);
        let env_config = serde_json::to_value(&cfg).expect("config serializes");
        if !seen.insert(env_config.to_string()) {
            continue;
        }
        let u = TaskInstruction {
            id: format!("{}shopping-{n:04}", spec.id_prefix),
            task_kind: TaskKind::Shopping,
            instruction_text: cfg.describe_requirement(),
            env_config,
            max_steps: spec.shopping_max_steps,
            context_budget: spec.context_budget,
        };
        golden_plan(&u)?;
        out.push(u);
        n += 1;
    }
    Ok(out)
}

pub fn household_config(rng: &mut impl Rng) -> HouseholdConfig {
    let modifier = match rng.random_range(0..5) {
        0 => Some(Modifier::Heated),
        1 => Some(Modifier::Cooled),
        _ => None,
    };
    let n_locations = rng.random_range(4..=7);
    let mut pool: Vec<&str> = ROOMS.iter().chain(RECEPTACLES.iter()).copied().collect();
    pool.shuffle(rng);
    let mut locations: Vec<String> = pool[..n_locations].iter().map(|s| s.to_string()).collect();
    match modifier {
        Some(Modifier::Heated) => locations.push(MICROWAVE.into()),
        Some(Modifier::Cooled) => locations.push(FRIDGE.into()),
        None => {}
    }

    let n_objects = rng.random_range(2..=4);
    let names: Vec<&str> = OBJECTS.choose_multiple(rng, n_objects).copied().collect();
    let objects: Vec<PlacedObject> = names
        .iter()
        .map(|name| PlacedObject {
            name: name.to_string(),
            location: locations[..n_locations].choose(rng).expect("non-empty").clone(),
        })
        .collect();
    let goal_obj = &objects[0];
    let receptacle = locations[..n_locations]
        .iter()
        .filter(|l| **l != goal_obj.location)
        .collect::<Vec<_>>()
        .choose(rng)
        .map(|s| s.to_string())
        .expect("at least four locations");
    HouseholdConfig {
        goal: HouseholdGoal {
            object: goal_obj.name.clone(),
            receptacle,
            modifier,
        },
        locations,
        objects,
    }
}

pub fn shopping_config(rng: &mut impl Rng) -> ShoppingConfig {
    let products: Vec<&str> = PRODUCTS.choose_multiple(rng, 2).copied().collect();
    let n_items = rng.random_range(6..=12);
    let mut catalog: Vec<CatalogItem> = Vec::new();
    let mut titles = BTreeSet::new();
    while catalog.len() < n_items {
        let color = *COLORS.choose(rng).expect("non-empty");
        let material = *MATERIALS.choose(rng).expect("non-empty");
        let style = *STYLES.choose(rng).expect("non-empty");
        let product = *products.choose(rng).expect("non-empty");
        let title = format!("{color} {material} {style} {product}");
        if !titles.insert(title.clone()) {
            continue;
        }
        let cents: u32 = rng.random_range(500..8000);
        catalog.push(CatalogItem {
            title,
            tags: [color, material, style, product]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            price: f64::from(cents) / 100.0,
        });
    }

    let mut query_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, item) in catalog.iter().enumerate() {
        for tag in &item.tags {
            if products.contains(&tag.as_str()) || COLORS.contains(&tag.as_str()) {
                query_index.entry(tag.clone()).or_default().push(i);
            }
        }
    }

    // The target shares its product term with at least one other item.
    let target = (0..catalog.len())
        .find(|&i| {
            let product = products.iter().find(|p| catalog[i].tags.contains(**p)).expect("tagged");
            query_index[*product].len() >= 2
        })
        .unwrap_or(0);
    let t = &catalog[target];
    let product = products
        .iter()
        .find(|p| t.tags.contains(**p))
        .expect("tagged")
        .to_string();
    let mut extra: Vec<&String> = t.tags.iter().filter(|g| **g != product).collect();
    extra.shuffle(rng);
    let n_extra = rng.random_range(1..=2);
    let mut attributes: BTreeSet<String> = extra[..n_extra].iter().map(|s| s.to_string()).collect();
    attributes.insert(product);
    let price_ceiling = (t.price.ceil() + f64::from(rng.random_range(0..15u32))).max(1.0);

    ShoppingConfig {
        catalog,
        query_index,
        requirement: Requirement {
            attributes,
            price_ceiling,
        },
    }
}
