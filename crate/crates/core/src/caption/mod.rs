//! Pseudo caption label generation.
//!
//! For every annotated object: crop the scene around the object's box with a
//! context margin, hand the cropped scene graph to a captioner (optionally
//! forcing the class name as the output prefix), and collect `K` distinct
//! captions.

mod grammar;
mod remote;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{crop_scene, crop_with_margin, DetectionDataset, MarginConvention, ObjectInstance, Scene};
use crate::embedding::normalize_label;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::rng::derive_seed;

pub use grammar::MockCaptioner;
pub use remote::{CaptionResponse, RemoteCaptioner};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleCondition {
    SceneDescription,
    AttributeDescription,
    RelationDescription,
    #[default]
    RegionDescription,
}

/// Wire and in-process request for one object's captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    /// Scene restricted to the crop, boxes in crop coordinates.
    pub scene_crop: Scene,
    #[serde(rename = "prefix")]
    pub output_prefix: Option<String>,
    pub style: StyleCondition,
    pub num_captions: usize,
    pub seed: u64,
}

impl CaptionRequest {
    pub fn validate(&self) -> Result<()> {
        if self.num_captions == 0 {
            return Err(Error::Config("num_captions must be at least 1".into()));
        }
        if self
            .output_prefix
            .as_ref()
            .is_some_and(|p| p.trim().is_empty())
        {
            return Err(Error::Config("output prefix must be a non-empty class name".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoCaption {
    pub text: String,
    pub object_id: String,
}

pub trait Captioner: Sync {
    fn caption(&self, request: &CaptionRequest) -> Result<Vec<String>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptionConfig {
    /// Distinct captions per object.
    pub k: usize,
    pub margin: f64,
    pub margin_convention: MarginConvention,
    pub use_prefix: bool,
    /// Minimum fraction of an object's own area inside the crop for it to be
    /// visible to the captioner.
    pub visibility: f64,
    pub style: StyleCondition,
    /// Total captions requested per object may not exceed `oversample · k`.
    pub oversample: usize,
}

impl Default for CaptionConfig {
    fn default() -> Self {
        CaptionConfig {
            k: 16,
            margin: 0.2,
            margin_convention: MarginConvention::Total,
            use_prefix: true,
            visibility: 0.25,
            style: StyleCondition::RegionDescription,
            oversample: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionStats {
    pub objects: usize,
    pub captions: usize,
    /// Captions not starting with the object's class name. Dropped when the
    /// prefix is enforced, only counted otherwise.
    pub prefix_violations: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabels {
    pub captions: BTreeMap<String, Vec<PseudoCaption>>,
    pub stats: CaptionStats,
}

/// Build the captioner request for one object: margin crop, visible context,
/// and the class name as prefix when enforced.
pub fn crop_request(scene: &Scene, object: &ObjectInstance, cfg: &CaptionConfig, seed: u64) -> Result<CaptionRequest> {
    let margin = cfg.margin_convention.effective(cfg.margin);
    let crop = crop_with_margin(&object.bbox, scene.width, scene.height, margin)?;
    Ok(CaptionRequest {
        scene_crop: crop_scene(scene, &crop, cfg.visibility)?,
        output_prefix: cfg.use_prefix.then(|| object.class_name.clone()),
        style: cfg.style,
        num_captions: cfg.k,
        seed,
    })
}

fn starts_with_word(text: &str, prefix: &str) -> bool {
    let text = normalize_label(text);
    let prefix = normalize_label(prefix);
    text.strip_prefix(&prefix)
        .is_some_and(|rest| rest.chars().next().is_none_or(|c| !c.is_alphanumeric()))
}

fn caption_object(
    scene: &Scene,
    object: &ObjectInstance,
    captioner: &dyn Captioner,
    cfg: &CaptionConfig,
    seed: u64,
) -> Result<(Vec<PseudoCaption>, CaptionStats)> {
    let mut request = crop_request(scene, object, cfg, seed)?;
    let mut stats = CaptionStats {
        objects: 1,
        ..CaptionStats::default()
    };
    let mut seen = HashSet::new();
    let mut kept = Vec::with_capacity(cfg.k);
    let budget = cfg.oversample.max(1) * cfg.k;
    let mut requested = 0;
    let mut attempt = 0;
    while kept.len() < cfg.k && requested < budget {
        let ask = cfg.k - kept.len();
        request.num_captions = ask;
        request.seed = derive_seed(seed, &format!("{}/{attempt}", object.id));
        let texts = captioner.caption(&request).map_err(|e| match e {
            Error::InsufficientDiversity { got, .. } => Error::InsufficientDiversity {
                object_id: object.id.clone(),
                got: got.max(kept.len()),
            },
            Error::CaptionerUnavailable(msg) => Error::CaptionerUnavailable(format!("object {}: {msg}", object.id)),
            other => other,
        })?;
        requested += ask;
        attempt += 1;
        for text in texts {
            if !starts_with_word(&text, &object.class_name) {
                stats.prefix_violations += 1;
                if cfg.use_prefix {
                    continue;
                }
            }
            if !seen.insert(normalize_label(&text)) {
                stats.duplicates += 1;
                continue;
            }
            if kept.len() < cfg.k {
                kept.push(PseudoCaption {
                    text,
                    object_id: object.id.clone(),
                });
            }
        }
    }
    if kept.len() < cfg.k {
        return Err(Error::InsufficientDiversity {
            object_id: object.id.clone(),
            got: kept.len(),
        });
    }
    stats.captions = kept.len();
    Ok((kept, stats))
}

/// Generate `cfg.k` distinct pseudo captions for every object whose class is
/// in `classes` (all objects when `None`). Objects are captioned in parallel;
/// each object's randomness is derived from `seed` and its id, so the output
/// does not depend on scheduling.
pub fn generate_pseudo_labels(
    dataset: &DetectionDataset,
    captioner: &dyn Captioner,
    cfg: &CaptionConfig,
    seed: u64,
    classes: Option<&HashSet<String>>,
) -> Result<PseudoLabels> {
    if cfg.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let jobs: Vec<(&Scene, &ObjectInstance)> = dataset
        .scenes
        .iter()
        .flat_map(|s| s.objects.iter().map(move |o| (s, o)))
        .filter(|(_, o)| classes.is_none_or(|c| c.contains(&o.class_name)))
        .collect();
    let mut ids = HashSet::new();
    for (_, o) in &jobs {
        if !ids.insert(o.id.as_str()) {
            return Err(Error::Integrity(format!(
                "object id {} is not unique across scenes",
                o.id
            )));
        }
    }
    let results: Vec<(Vec<PseudoCaption>, CaptionStats)> = jobs
        .par_iter()
        .map(|(scene, object)| caption_object(scene, object, captioner, cfg, seed))
        .collect::<Result<_>>()?;
    let mut out = PseudoLabels::default();
    for ((_, object), (caps, st)) in jobs.iter().zip(results) {
        out.stats.objects += st.objects;
        out.stats.captions += st.captions;
        out.stats.prefix_violations += st.prefix_violations;
        out.stats.duplicates += st.duplicates;
        out.captions.insert(object.id.clone(), caps);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionRecord {
    object_id: String,
    captions: Vec<String>,
}

pub fn save_pseudo_labels(labels: &BTreeMap<String, Vec<PseudoCaption>>, path: &Path) -> Result<()> {
    let records: Vec<CaptionRecord> = labels
        .iter()
        .map(|(id, caps)| CaptionRecord {
            object_id: id.clone(),
            captions: caps.iter().map(|c| c.text.clone()).collect(),
        })
        .collect();
    jsonl::write(path, &records)
}

pub fn load_pseudo_labels(path: &Path) -> Result<BTreeMap<String, Vec<PseudoCaption>>> {
    let records: Vec<CaptionRecord> = jsonl::read(path)?;
    let mut out = BTreeMap::new();
    for r in records {
        let caps = r
            .captions
            .into_iter()
            .map(|text| PseudoCaption {
                text,
                object_id: r.object_id.clone(),
            })
            .collect();
        if out.insert(r.object_id.clone(), caps).is_some() {
            return Err(Error::Integrity(format!("duplicate object id {}", r.object_id)));
        }
    }
    Ok(out)
}
