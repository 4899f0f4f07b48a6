//! Seeded generator for symbolic scene-graph datasets.
//!
//! A [`WorldSpec`] lists object classes (with attribute pools and size ranges)
//! and weighted scene recipes that place objects relative to each other and
//! wire up relations. The default `WorldSpec` is the cat/dog/grass/collar world with
//! `chair` as the held-out rare class: chairs only show up as context for
//! base-class objects.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{scene_frequencies, BoundingBox, ClassEntry, DetectionDataset, ObjectInstance, Rarity, Relation, Scene};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub rarity: Rarity,
    pub attributes: Vec<String>,
    /// Box width range in scene units.
    pub width: (f64, f64),
    pub height: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Placement {
    /// Anywhere in the scene.
    Free,
    /// Resting on the bottom edge.
    Ground,
    /// Bottom edge sunk into object `of` by a fraction of its height drawn
    /// from `sink`.
    OnTop { of: usize, sink: (f64, f64) },
    /// Centered inside object `of` at relative position `at`.
    Inside { of: usize, at: (f64, f64) },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeObject {
    pub class: String,
    pub placement: Placement,
    /// `(predicate, index of target object in the recipe)`.
    #[serde(default)]
    pub relations: Vec<(String, usize)>,
    /// Probability that the object is emitted at all.
    #[serde(default = "one")]
    pub probability: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub name: String,
    pub weight: f64,
    pub objects: Vec<RecipeObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub width: f64,
    pub height: f64,
    pub classes: Vec<ClassSpec>,
    pub recipes: Vec<SceneRecipe>,
    /// Inclusive range of attributes sampled per object.
    pub attributes_per_object: (usize, usize),
}

impl WorldSpec {
    pub fn class(&self, name: &str) -> Option<&ClassSpec> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Every class name and attribute word, classes first, in declaration order.
    pub fn vocabulary(&self) -> (Vec<String>, Vec<String>) {
        let classes = self.classes.iter().map(|c| c.name.clone()).collect();
        let mut attrs: Vec<String> = Vec::new();
        for c in &self.classes {
            for a in &c.attributes {
                if !attrs.contains(a) {
                    attrs.push(a.clone());
                }
            }
        }
        (classes, attrs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.recipes.is_empty() || self.classes.is_empty() {
            return Err(Error::EmptyWorld);
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Config("world extent must be positive".into()));
        }
        let (lo, hi) = self.attributes_per_object;
        if lo > hi {
            return Err(Error::Config("attributes_per_object range is inverted".into()));
        }
        for r in &self.recipes {
            if !(r.weight > 0.0) {
                return Err(Error::Config(format!("recipe {} has non-positive weight", r.name)));
            }
            for (i, o) in r.objects.iter().enumerate() {
                if self.class(&o.class).is_none() {
                    return Err(Error::Config(format!("recipe {} uses unknown class {}", r.name, o.class)));
                }
                let anchor = match o.placement {
                    Placement::OnTop { of, .. } | Placement::Inside { of, .. } => Some(of),
                    _ => None,
                };
                if anchor.is_some_and(|a| a >= i) {
                    return Err(Error::Config(format!(
                        "recipe {}: object {i} must be placed relative to an earlier object",
                        r.name
                    )));
                }
                if o.relations.iter().any(|(_, t)| *t >= r.objects.len() || *t == i) {
                    return Err(Error::Config(format!("recipe {}: bad relation target", r.name)));
                }
            }
        }
        Ok(())
    }
}

fn class(name: &str, rarity: Rarity, attrs: &[&str], width: (f64, f64), height: (f64, f64)) -> ClassSpec {
    ClassSpec {
        name: name.into(),
        rarity,
        attributes: attrs.iter().map(|s| s.to_string()).collect(),
        width,
        height,
    }
}

fn place(class: &str, placement: Placement, relations: &[(&str, usize)], probability: f64) -> RecipeObject {
    RecipeObject {
        class: class.into(),
        placement,
        relations: relations.iter().map(|(p, t)| (p.to_string(), *t)).collect(),
        probability,
    }
}

impl Default for WorldSpec {
    fn default() -> Self {
        use Placement::*;
        let classes = vec![
            class("cat", Rarity::Frequent, &["orange", "striped", "fluffy", "grey", "tabby"], (18.0, 26.0), (16.0, 24.0)),
            class("dog", Rarity::Frequent, &["brown", "furry", "spotted", "golden", "shaggy"], (28.0, 40.0), (22.0, 32.0)),
            class("grass", Rarity::Common, &["green", "tall", "lush", "dry"], (50.0, 80.0), (14.0, 24.0)),
            class("collar", Rarity::Common, &["red", "leather", "blue", "studded"], (7.0, 10.0), (4.0, 6.0)),
            class("chair", Rarity::Rare, &["wooden", "metal", "wicker", "padded"], (34.0, 46.0), (38.0, 52.0)),
        ];
        let recipes = vec![
            SceneRecipe {
                name: "cat_in_chair".into(),
                weight: 1.5,
                objects: vec![
                    place("chair", Free, &[], 1.0),
                    place("cat", OnTop { of: 0, sink: (0.45, 0.9) }, &[("on", 0)], 1.0),
                ],
            },
            SceneRecipe {
                name: "cat_on_chair".into(),
                weight: 1.5,
                objects: vec![
                    place("chair", Free, &[], 1.0),
                    place("cat", OnTop { of: 0, sink: (0.05, 0.35) }, &[("on", 0)], 1.0),
                ],
            },
            SceneRecipe {
                name: "lone_cat".into(),
                weight: 1.5,
                objects: vec![place("cat", Free, &[], 1.0)],
            },
            SceneRecipe {
                name: "dog_on_grass".into(),
                weight: 2.0,
                objects: vec![
                    place("grass", Ground, &[], 1.0),
                    place("dog", OnTop { of: 0, sink: (0.2, 0.6) }, &[("on", 0)], 1.0),
                    place("collar", Inside { of: 1, at: (0.5, 0.35) }, &[("on", 1)], 0.7),
                ],
            },
            SceneRecipe {
                name: "cat_and_dog".into(),
                weight: 1.0,
                objects: vec![
                    place("grass", Ground, &[], 1.0),
                    place("dog", OnTop { of: 0, sink: (0.2, 0.6) }, &[("on", 0)], 1.0),
                    place("cat", OnTop { of: 0, sink: (0.2, 0.6) }, &[("on", 0)], 1.0),
                    place("collar", Inside { of: 1, at: (0.5, 0.35) }, &[("on", 1)], 0.5),
                ],
            },
            SceneRecipe {
                name: "lone_chair".into(),
                weight: 0.5,
                objects: vec![place("chair", Free, &[], 1.0)],
            },
        ];
        WorldSpec {
            width: 100.0,
            height: 100.0,
            classes,
            recipes,
            attributes_per_object: (2, 3),
        }
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Shift an interval of length `len` starting at `start` into `[0, limit]`.
fn fit(start: f64, len: f64, limit: f64) -> f64 {
    start.max(0.0).min((limit - len).max(0.0))
}

fn place_box(spec: &WorldSpec, cls: &ClassSpec, placement: &Placement, placed: &[Option<BoundingBox>], rng: &mut Rng) -> Result<BoundingBox> {
    let w = uniform(rng, cls.width).min(spec.width);
    let h = uniform(rng, cls.height).min(spec.height);
    let (x0, y0) = match placement {
        Placement::Free => (rng.random_range(0.0..=spec.width - w), rng.random_range(0.0..=spec.height - h)),
        Placement::Ground => {
            let y1 = spec.height - uniform(rng, (0.0, 4.0));
            (rng.random_range(0.0..=spec.width - w), y1 - h)
        }
        Placement::OnTop { of, sink } => {
            let base = anchor(placed, *of)?;
            let cx = uniform(rng, (base.x0 + 0.3 * base.width(), base.x1 - 0.3 * base.width()));
            let y1 = base.y0 + uniform(rng, *sink) * base.height();
            (cx - w * 0.5, y1 - h)
        }
        Placement::Inside { of, at } => {
            let base = anchor(placed, *of)?;
            let cx = base.x0 + at.0 * base.width() + uniform(rng, (-0.1, 0.1)) * base.width();
            let cy = base.y0 + at.1 * base.height();
            (cx - w * 0.5, cy - h * 0.5)
        }
    };
    let x0 = fit(x0, w, spec.width);
    let y0 = fit(y0, h, spec.height);
    BoundingBox::new(x0, y0, x0 + w, y0 + h)
}

fn anchor(placed: &[Option<BoundingBox>], of: usize) -> Result<BoundingBox> {
    placed
        .get(of)
        .copied()
        .flatten()
        .ok_or_else(|| Error::Config(format!("anchor object {of} was not placed")))
}

fn weighted_recipe<'a>(spec: &'a WorldSpec, rng: &mut Rng) -> &'a SceneRecipe {
    let total: f64 = spec.recipes.iter().map(|r| r.weight).sum();
    let mut u = rng.random_range(0.0..total);
    for r in &spec.recipes {
        if u < r.weight {
            return r;
        }
        u -= r.weight;
    }
    spec.recipes.last().expect("validated non-empty")
}

/// Generate `count` scenes. Object ids are globally unique (`<scene>-o<k>`).
pub fn generate_scenes(spec: &WorldSpec, count: usize, seed: u64, id_prefix: &str) -> Result<Vec<Scene>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::EmptyWorld);
    }
    let mut rng = derive_rng(seed, &format!("scenes/{id_prefix}"));
    let mut scenes = Vec::with_capacity(count);
    for n in 0..count {
        let recipe = weighted_recipe(spec, &mut rng);
        let scene_id = format!("{id_prefix}{n:05}");
        let mut placed: Vec<Option<BoundingBox>> = Vec::with_capacity(recipe.objects.len());
        let mut ids: Vec<Option<String>> = Vec::with_capacity(recipe.objects.len());
        let mut objects: Vec<ObjectInstance> = Vec::new();
        for (k, ro) in recipe.objects.iter().enumerate() {
            let anchored_missing = match ro.placement {
                Placement::OnTop { of, .. } | Placement::Inside { of, .. } => placed[of].is_none(),
                _ => false,
            };
            if anchored_missing || rng.random::<f64>() >= ro.probability {
                placed.push(None);
                ids.push(None);
                continue;
            }
            let cls = spec.class(&ro.class).expect("validated class");
            let bbox = place_box(spec, cls, &ro.placement, &placed, &mut rng)?;
            let (lo, hi) = spec.attributes_per_object;
            let n_attr = rng.random_range(lo..=hi).min(cls.attributes.len());
            let attributes: Vec<String> = cls.attributes.choose_multiple(&mut rng, n_attr).cloned().collect();
            let id = format!("{scene_id}-o{k}");
            placed.push(Some(bbox));
            ids.push(Some(id.clone()));
            objects.push(ObjectInstance {
                id,
                class_name: cls.name.clone(),
                attributes,
                relations: Vec::new(),
                bbox,
            });
        }
        // Relations are wired once every object has an id.
        let mut emitted = 0;
        for (k, ro) in recipe.objects.iter().enumerate() {
            if ids[k].is_none() {
                continue;
            }
            for (pred, t) in &ro.relations {
                if let Some(target) = &ids[*t] {
                    objects[emitted].relations.push(Relation {
                        predicate: pred.clone(),
                        target: target.clone(),
                    });
                }
            }
            emitted += 1;
        }
        scenes.push(Scene {
            id: scene_id,
            width: spec.width,
            height: spec.height,
            objects,
        });
    }
    Ok(scenes)
}

/// Wrap scenes into a dataset whose catalog covers every class in `spec`.
/// Frequencies are image-level; classes absent from the scenes get the
/// smallest representable positive share `1 / (2 · #scenes)`.
pub fn build_dataset(spec: &WorldSpec, scenes: Vec<Scene>) -> Result<DetectionDataset> {
    let freq: HashMap<String, f64> = scene_frequencies(&scenes);
    let floor = 1.0 / (2.0 * scenes.len().max(1) as f64);
    let catalog = spec
        .classes
        .iter()
        .map(|c| ClassEntry {
            name: c.name.clone(),
            frequency: freq.get(&c.name).copied().unwrap_or(floor).max(floor),
            rarity: c.rarity,
        })
        .collect();
    DetectionDataset::new(scenes, catalog)
}
