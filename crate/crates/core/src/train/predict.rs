use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LinearHead, RegionProposal};
use crate::dataset::BoundingBox;
use crate::embedding::{EmbeddingVector, TextEncoder};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::labels::PromptTemplate;
use crate::matching::ScoreParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Mean of the per-template probabilities.
    #[default]
    Probability,
    /// Probability against the renormalized mean template embedding.
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub score: ScoreParams,
    /// Detections scoring below this are dropped.
    pub score_threshold: f64,
    pub ensemble: EnsembleMode,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            score: ScoreParams::default(),
            score_threshold: 0.0,
            ensemble: EnsembleMode::Probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub scene_id: String,
    #[serde(rename = "class")]
    pub class_name: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

fn class_prompts(
    class_names: &[String],
    templates: &[PromptTemplate],
    encoder: &dyn TextEncoder,
    mode: EnsembleMode,
) -> Result<Vec<Vec<EmbeddingVector>>> {
    if templates.is_empty() {
        return Err(Error::Config("no prompt templates".into()));
    }
    class_names
        .iter()
        .map(|c| {
            let prompts = templates
                .iter()
                .map(|t| encoder.encode(&t.render(c)))
                .collect::<Result<Vec<_>>>()?;
            Ok(match mode {
                EnsembleMode::Probability => prompts,
                EnsembleMode::Embedding => {
                    let mut acc = vec![0.0; encoder.dim()];
                    for p in &prompts {
                        acc.iter_mut().zip(p.as_slice()).for_each(|(a, v)| *a += v);
                    }
                    vec![EmbeddingVector::normalize(acc)?]
                }
            })
        })
        .collect()
}

/// Score every proposal against every class with prompt ensembling. Output
/// is grouped by class (in `class_names` order) with scores descending.
pub fn predict(
    head: &LinearHead,
    proposals: &[RegionProposal],
    class_names: &[String],
    templates: &[PromptTemplate],
    encoder: &dyn TextEncoder,
    cfg: &PredictConfig,
) -> Result<Vec<Detection>> {
    cfg.score.validate()?;
    let prompts = class_prompts(class_names, templates, encoder, cfg.ensemble)?;
    let mut per_class: Vec<Vec<Detection>> = vec![Vec::new(); class_names.len()];
    for p in proposals {
        let e = head.embed(&p.feature)?;
        let bbox = head.predict_box(&p.bbox, &p.feature)?;
        for (c, class_prompts) in prompts.iter().enumerate() {
            let total: f64 = class_prompts
                .iter()
                .map(|t| cfg.score.probability(e.cosine(t)))
                .sum();
            let score = total / class_prompts.len() as f64;
            if score >= cfg.score_threshold {
                per_class[c].push(Detection {
                    scene_id: p.scene_id.clone(),
                    class_name: class_names[c].clone(),
                    bbox,
                    score,
                });
            }
        }
    }
    let mut out = Vec::new();
    for mut dets in per_class {
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        out.extend(dets);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryHit {
    pub proposal_index: usize,
    pub scene_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Highest-scoring proposal for a free-text query; the first one wins ties.
pub fn query_top1(
    head: &LinearHead,
    proposals: &[RegionProposal],
    query: &str,
    encoder: &dyn TextEncoder,
    params: &ScoreParams,
) -> Result<QueryHit> {
    if proposals.is_empty() {
        return Err(Error::EmptyProposals);
    }
    let q = encoder.encode(query)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in proposals.iter().enumerate() {
        let s = params.probability(head.embed(&p.feature)?.cosine(&q));
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (i, score) = best.expect("non-empty");
    let p = &proposals[i];
    Ok(QueryHit {
        proposal_index: i,
        scene_id: p.scene_id.clone(),
        bbox: head.predict_box(&p.bbox, &p.feature)?,
        score,
    })
}

pub fn save_detections(detections: &[Detection], path: &Path) -> Result<()> {
    jsonl::write(path, detections)
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    jsonl::read(path)
}
