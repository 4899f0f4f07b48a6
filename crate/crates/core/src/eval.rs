//! COCO-style box AP over IoU thresholds 0.50:0.05:0.95.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::{BoundingBox, DetectionDataset, Rarity};
use crate::error::{Error, Result};
use crate::train::Detection;

pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    /// AP averaged over thresholds, for classes with at least one ground truth.
    pub per_class_ap: BTreeMap<String, f64>,
    pub ap: f64,
    /// Mean over rare classes with ground truth; 0 when there are none.
    pub ap_rare: f64,
    pub thresholds: Vec<f64>,
}

/// 101-point interpolated AP from a score-ordered TP/FP sequence.
pub fn interpolated_ap(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        if h {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    // Monotone precision envelope from the right.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = 0.0;
    let mut k = 0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        while k < recall.len() && recall[k] < level {
            k += 1;
        }
        if k < recall.len() {
            total += precision[k];
        }
    }
    total / 101.0
}

/// Greedy matching of score-sorted detections to the unmatched ground truth
/// of highest IoU in the same scene; a detection is a hit when that IoU
/// reaches `threshold`.
fn match_class(dets: &[&Detection], gts: &HashMap<&str, Vec<BoundingBox>>, threshold: f64) -> Vec<bool> {
    let mut used: HashMap<&str, Vec<bool>> = gts.iter().map(|(k, v)| (*k, vec![false; v.len()])).collect();
    dets.iter()
        .map(|d| {
            let Some(boxes) = gts.get(d.scene_id.as_str()) else {
                return false;
            };
            let flags = used.get_mut(d.scene_id.as_str()).expect("same keys");
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in boxes.iter().enumerate() {
                if flags[j] {
                    continue;
                }
                let iou = d.bbox.iou(g);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, iou)) if iou >= threshold => {
                    flags[j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

pub fn evaluate_ap(detections: &[Detection], ground_truth: &DetectionDataset, thresholds: &[f64]) -> Result<ApReport> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Config("IoU thresholds must be non-empty and within [0, 1]".into()));
    }
    let rarity = ground_truth.rarity_map();
    if let Some(d) = detections.iter().find(|d| !rarity.contains_key(&d.class_name)) {
        return Err(Error::UnknownClass(d.class_name.clone()));
    }
    let mut gts: BTreeMap<&str, HashMap<&str, Vec<BoundingBox>>> = BTreeMap::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for scene in &ground_truth.scenes {
        for o in &scene.objects {
            gts.entry(o.class_name.as_str())
                .or_default()
                .entry(scene.id.as_str())
                .or_default()
                .push(o.bbox);
            *counts.entry(o.class_name.as_str()).or_default() += 1;
        }
    }
    let mut per_class_ap = BTreeMap::new();
    for (class, class_gts) in &gts {
        let mut dets: Vec<&Detection> = detections.iter().filter(|d| d.class_name == *class).collect();
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mean = thresholds
            .iter()
            .map(|&t| interpolated_ap(&match_class(&dets, class_gts, t), counts[class]))
            .sum::<f64>()
            / thresholds.len() as f64;
        per_class_ap.insert(class.to_string(), mean);
    }
    let mean_of = |vals: Vec<f64>| {
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let ap = mean_of(per_class_ap.values().copied().collect());
    let ap_rare = mean_of(
        per_class_ap
            .iter()
            .filter(|(c, _)| rarity.get(c.as_str()) == Some(&Rarity::Rare))
            .map(|(_, v)| *v)
            .collect(),
    );
    Ok(ApReport {
        per_class_ap,
        ap,
        ap_rare,
        thresholds: thresholds.to_vec(),
    })
}
