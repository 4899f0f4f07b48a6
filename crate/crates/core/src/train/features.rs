use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{crop_scene, crop_with_margin, BoundingBox, DetectionDataset, Scene};
use crate::embedding::{ConceptWorld, TextEncoder};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::rng::{derive_rng, Rng};

/// Candidate region with its stand-in backbone feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionProposal {
    pub scene_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub feature: Vec<f64>,
    pub is_gt: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_object_id: Option<String>,
}

/// Fixed linear map from the text latent space (D) to feature space (F).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub data: Vec<f64>,
}

impl Projection {
    /// Gaussian entries scaled by `1/sqrt(cols)`; full column rank with
    /// probability one when `rows >= cols`.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        if rows < cols || cols == 0 {
            return Err(Error::Config(format!(
                "feature dimension {rows} must be at least the embedding dimension {cols}"
            )));
        }
        let mut rng = derive_rng(seed, "projection");
        let scale = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| scale * { let v: f64 = StandardNormal.sample(&mut rng); v })
            .collect::<Vec<f64>>();
        Ok(Projection { rows, cols, data })
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Projection {
            rows: dim,
            cols: dim,
            data,
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.cols)
            .map(|row| crate::embedding::dot(row, v))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub dim: usize,
    pub noise_sigma: f64,
    pub distractors_per_scene: usize,
    /// Margin of the context window blended into each object's feature.
    pub context_margin: f64,
    pub visibility: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dim: 96,
            noise_sigma: 0.05,
            distractors_per_scene: 2,
            context_margin: 0.5,
            visibility: 0.25,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("feature dim must be positive and noise non-negative".into()));
        }
        if !(self.context_margin >= 0.0 && (0.0..1.0).contains(&self.visibility)) {
            return Err(Error::Config("invalid context margin or visibility".into()));
        }
        Ok(())
    }
}

/// Classes other than the object's own that are visible around it.
pub fn context_classes(scene: &Scene, object_index: usize, margin: f64, visibility: f64) -> Result<Vec<String>> {
    let object = &scene.objects[object_index];
    let crop = crop_with_margin(&object.bbox, scene.width, scene.height, margin)?;
    let view = crop_scene(scene, &crop, visibility)?;
    let classes: BTreeSet<String> = view
        .objects
        .iter()
        .filter(|o| o.id != object.id && o.class_name != object.class_name)
        .map(|o| o.class_name.clone())
        .collect();
    Ok(classes.into_iter().collect())
}

fn distractor_box(scene: &Scene, rng: &mut Rng) -> BoundingBox {
    let w = rng.random_range(0.1..0.5) * scene.width;
    let h = rng.random_range(0.1..0.5) * scene.height;
    let x0 = rng.random_range(0.0..scene.width - w);
    let y0 = rng.random_range(0.0..scene.height - h);
    BoundingBox {
        x0,
        y0,
        x1: x0 + w,
        y1: y0 + h,
    }
}

/// One proposal per annotated object plus seeded background distractors per
/// scene. Object features are the projected oracle mix of the object's
/// class, its attributes and the classes visible in its context window.
pub fn synthesize_features(
    dataset: &DetectionDataset,
    world: &ConceptWorld,
    projection: &Projection,
    cfg: &FeatureConfig,
    seed: u64,
) -> Result<Vec<RegionProposal>> {
    cfg.validate()?;
    if projection.rows != cfg.dim || projection.cols != world.dim() {
        return Err(Error::Shape(format!(
            "projection is {}x{}, expected {}x{}",
            projection.rows,
            projection.cols,
            cfg.dim,
            world.dim()
        )));
    }
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    for scene in &dataset.scenes {
        let mut rng = derive_rng(seed, &format!("features/{}", scene.id));
        for (k, object) in scene.objects.iter().enumerate() {
            let context = context_classes(scene, k, cfg.context_margin, cfg.visibility)?;
            let context: Vec<&str> = context.iter().map(String::as_str).collect();
            let attributes: Vec<&str> = object.attributes.iter().map(String::as_str).collect();
            let mixed = world.mix(Some(&object.class_name), &context, &attributes, world.weights())?;
            let mut feature = projection.apply(mixed.as_slice());
            feature.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            out.push(RegionProposal {
                scene_id: scene.id.clone(),
                bbox: object.bbox,
                feature,
                is_gt: true,
                gt_object_id: Some(object.id.clone()),
            });
        }
        for _ in 0..cfg.distractors_per_scene {
            let bbox = distractor_box(scene, &mut rng);
            let direction: Vec<f64> = (0..world.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let direction = crate::embedding::EmbeddingVector::normalize(direction)?;
            let mut feature = projection.apply(direction.as_slice());
            feature.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            out.push(RegionProposal {
                scene_id: scene.id.clone(),
                bbox,
                feature,
                is_gt: false,
                gt_object_id: None,
            });
        }
    }
    Ok(out)
}

pub fn save_proposals(proposals: &[RegionProposal], path: &Path) -> Result<()> {
    jsonl::write(path, proposals)
}

pub fn load_proposals(path: &Path) -> Result<Vec<RegionProposal>> {
    jsonl::read(path)
}
