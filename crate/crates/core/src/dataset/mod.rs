//! Symbolic detection datasets: scenes made of annotated objects with
//! attributes, relations and boxes, plus the class catalog that carries
//! frequencies and rarity tags.

mod geometry;
mod io;
mod sampling;
pub mod synth;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geometry::{crop_scene, crop_with_margin, MarginConvention};
pub use io::{load_catalog, load_dataset, load_scenes, save_catalog, save_dataset, save_scenes};
pub use sampling::{repeat_factor_epoch, rfs_repeat_factor, scene_repeat_factor, RFS_THRESHOLD};

/// Axis-aligned box in `[x0, y0, x1, y1]` form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BoundingBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidBox(format!("non-finite coordinates {self}")));
        }
        if !(self.x0 < self.x1 && self.y0 < self.y1) {
            return Err(Error::InvalidBox(format!("non-positive extent {self}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5)
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Overlap with `region` as a fraction of this box's own area.
    pub fn fraction_inside(&self, region: &BoundingBox) -> f64 {
        self.intersection_area(region) / self.area()
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    /// Coordinates divided by the scene extent.
    pub fn normalized(&self, width: f64, height: f64) -> [f64; 4] {
        [
            self.x0 / width,
            self.y0 / height,
            self.x1 / width,
            self.y1 / height,
        ]
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x0, self.y0, self.x1, self.y1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub predicate: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectInstance {
    pub id: String,
    #[serde(rename = "class")]
    pub class_name: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// A symbolic image: the scene graph stands in for pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<ObjectInstance>,
}

impl Scene {
    pub fn bounds(&self) -> BoundingBox {
        BoundingBox {
            x0: 0.0,
            y0: 0.0,
            x1: self.width,
            y1: self.height,
        }
    }

    pub fn object(&self, id: &str) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0 && self.height.is_finite() && self.height > 0.0)
        {
            return Err(Error::Integrity(format!(
                "scene {}: extent {}x{} must be positive",
                self.id, self.width, self.height
            )));
        }
        let mut ids = HashSet::new();
        for obj in &self.objects {
            if !ids.insert(obj.id.as_str()) {
                return Err(Error::Integrity(format!(
                    "scene {}: duplicate object id {}",
                    self.id, obj.id
                )));
            }
        }
        let bounds = self.bounds();
        for obj in &self.objects {
            if obj.class_name.trim().is_empty() {
                return Err(Error::Integrity(format!(
                    "scene {}: object {} has an empty class name",
                    self.id, obj.id
                )));
            }
            obj.bbox.validate()?;
            if !bounds.contains(&obj.bbox) {
                return Err(Error::Integrity(format!(
                    "scene {}: object {} box {} lies outside the scene",
                    self.id, obj.id, obj.bbox
                )));
            }
            for rel in &obj.relations {
                if !ids.contains(rel.target.as_str()) {
                    return Err(Error::Integrity(format!(
                        "scene {}: object {} relation {:?} targets unknown object {}",
                        self.id, obj.id, rel.predicate, rel.target
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rarity {
    Frequent,
    Common,
    Rare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    #[serde(rename = "class")]
    pub name: String,
    pub frequency: f64,
    pub rarity: Rarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionDataset {
    pub scenes: Vec<Scene>,
    pub class_catalog: Vec<ClassEntry>,
}

impl DetectionDataset {
    /// Build a dataset, checking every scene and catalog invariant.
    pub fn new(scenes: Vec<Scene>, class_catalog: Vec<ClassEntry>) -> Result<Self> {
        let ds = DetectionDataset {
            scenes,
            class_catalog,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for entry in &self.class_catalog {
            if entry.name.trim().is_empty() {
                return Err(Error::Integrity("catalog entry with empty class name".into()));
            }
            if !names.insert(entry.name.as_str()) {
                return Err(Error::Integrity(format!(
                    "duplicate catalog class {}",
                    entry.name
                )));
            }
            if !(entry.frequency > 0.0 && entry.frequency <= 1.0) {
                return Err(Error::InvalidFrequency(entry.frequency));
            }
        }
        let mut scene_ids = HashSet::new();
        for scene in &self.scenes {
            if !scene_ids.insert(scene.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate scene id {}", scene.id)));
            }
            scene.validate()?;
            for obj in &scene.objects {
                if !names.contains(obj.class_name.as_str()) {
                    return Err(Error::Integrity(format!(
                        "scene {}: object {} has class {} missing from the catalog",
                        scene.id, obj.id, obj.class_name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn class_entry(&self, name: &str) -> Option<&ClassEntry> {
        self.class_catalog.iter().find(|c| c.name == name)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.class_catalog.iter().map(|c| c.name.clone()).collect()
    }

    pub fn rarity_map(&self) -> HashMap<String, Rarity> {
        self.class_catalog
            .iter()
            .map(|c| (c.name.clone(), c.rarity))
            .collect()
    }

    pub fn num_objects(&self) -> usize {
        self.scenes.iter().map(|s| s.objects.len()).sum()
    }

    /// Catalog restricted to non-rare classes: the base vocabulary a detector
    /// is allowed to see annotations for.
    pub fn base_classes(&self) -> Vec<ClassEntry> {
        self.class_catalog
            .iter()
            .filter(|c| c.rarity != Rarity::Rare)
            .cloned()
            .collect()
    }
}

/// Image-level class frequencies (fraction of scenes containing each class).
pub fn scene_frequencies(scenes: &[Scene]) -> HashMap<String, f64> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for scene in scenes {
        let present: HashSet<&str> = scene.objects.iter().map(|o| o.class_name.as_str()).collect();
        for c in present {
            *counts.entry(c.to_string()).or_default() += 1;
        }
    }
    let n = scenes.len().max(1) as f64;
    counts
        .into_iter()
        .map(|(k, v)| (k, v as f64 / n))
        .collect()
}
