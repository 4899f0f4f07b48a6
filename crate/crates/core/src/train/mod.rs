//! Region features, the linear open-vocabulary head, its training loop and
//! prompt-ensembled inference.

mod features;
mod head;
mod predict;

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{repeat_factor_epoch, scene_frequencies, scene_repeat_factor, DetectionDataset, RFS_THRESHOLD};
use crate::embedding::{
    gather_negatives, normalize_label, sample_negative_classes, EmbeddingVector, EncodingCache, MemoryBank,
    TextEncoder,
};
use crate::error::{Error, Result};
use crate::labels::{mean_embedding_label, sample_target_label, LabelSet, PromptTemplate};
use crate::matching::{
    classification_loss_masked, giou_with_grad, hungarian_match, l1_with_grad, pair_cost, CostWeights, ScoreParams,
};
use crate::rng::{derive_rng, Rng};

pub use features::{
    context_classes, load_proposals, save_proposals, synthesize_features, FeatureConfig, Projection, RegionProposal,
};
pub use head::{decode_box, LinearHead, MAX_LOG_SCALE};
pub use predict::{
    load_detections, predict, query_top1, save_detections, Detection, EnsembleMode, PredictConfig, QueryHit,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// One sampled label per object per step, from its pseudo caption set.
    #[default]
    Pcl,
    /// Mean prompt embedding of the object's class.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Negatives {
    /// `n` classes drawn by square-root frequency, clamped to the base
    /// classes not positive in the step.
    SqrtFreq { n: usize },
    /// Recent target labels kept across steps.
    MemoryBank { capacity: usize, replace: usize },
}

impl Negatives {
    pub fn default_for(mode: TrainMode) -> Self {
        match mode {
            TrainMode::Pcl => Negatives::MemoryBank {
                capacity: 200,
                replace: 10,
            },
            TrainMode::Baseline => Negatives::SqrtFreq { n: 50 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxLossWeights {
    pub l1: f64,
    pub giou: f64,
}

impl Default for BoxLossWeights {
    fn default() -> Self {
        BoxLossWeights { l1: 5.0, giou: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Mode default when unset.
    pub negatives: Option<Negatives>,
    pub steps: usize,
    /// Scenes per micro-batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier for the box parameters.
    pub box_lr_scale: f64,
    pub momentum: f64,
    /// Step at which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_step: Option<usize>,
    pub lr_decay_factor: f64,
    /// Micro-batches accumulated per optimizer step.
    pub accumulate: usize,
    /// Repeat-factor sampling; mode default (baseline only) when unset.
    pub rfs: Option<bool>,
    pub rfs_threshold: f64,
    pub init_scale: f64,
    /// Ignore, rather than penalize, columns whose labels came from objects
    /// of the query's own class (other than its matched target).
    pub mask_same_class: bool,
    pub score: ScoreParams,
    pub cost: CostWeights,
    pub box_loss: BoxLossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Pcl,
            negatives: None,
            steps: 2000,
            batch_size: 32,
            learning_rate: 0.05,
            box_lr_scale: 0.01,
            momentum: 0.9,
            lr_decay_step: None,
            lr_decay_factor: 0.1,
            accumulate: 1,
            rfs: None,
            rfs_threshold: RFS_THRESHOLD,
            init_scale: 1.0,
            mask_same_class: true,
            score: ScoreParams::default(),
            cost: CostWeights::default(),
            box_loss: BoxLossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.steps == 0 || self.batch_size == 0 || self.accumulate == 0 {
            return bad("steps, batch_size and accumulate must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.box_lr_scale >= 0.0 && self.box_lr_scale.is_finite()) {
            return bad("box_lr_scale must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must lie in (0, 1]");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be finite and non-negative");
        }
        if let Negatives::MemoryBank { capacity: 0, .. } = self.negatives() {
            return bad("memory bank capacity must be positive");
        }
        self.score.validate()
    }

    pub fn negatives(&self) -> Negatives {
        self.negatives.unwrap_or(Negatives::default_for(self.mode))
    }

    pub fn use_rfs(&self) -> bool {
        self.rfs.unwrap_or(self.mode == TrainMode::Baseline)
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        match self.lr_decay_step {
            Some(s) if step >= s => self.learning_rate * self.lr_decay_factor,
            _ => self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStats {
    pub pseudo_draws: u64,
    pub manual_draws: u64,
    pub matched: u64,
    pub columns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: LinearHead,
    /// Loss per optimizer step.
    pub trace: Vec<f64>,
    pub stats: TrainStats,
}

pub struct TrainInputs<'a> {
    pub dataset: &'a DetectionDataset,
    pub proposals: &'a [RegionProposal],
    pub label_sets: &'a [LabelSet],
    pub encoder: &'a dyn TextEncoder,
    /// Prompt templates averaged into baseline class targets.
    pub baseline_templates: &'a [PromptTemplate],
}

struct Gt {
    object_id: String,
    class_name: String,
    /// Normalized `[x0, y0, x1, y1]`.
    bbox: [f64; 4],
}

struct Sample {
    width: f64,
    height: f64,
    queries: Vec<usize>,
    gts: Vec<Gt>,
}

struct Sampler {
    factors: Vec<f64>,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn next(&mut self, rng: &mut Rng) -> usize {
        while self.pos >= self.order.len() {
            self.order = repeat_factor_epoch(&self.factors, rng);
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Classes with a non-rare catalog entry: the only annotations training sees.
fn trainable_classes(dataset: &DetectionDataset) -> HashSet<String> {
    dataset.base_classes().into_iter().map(|c| c.name).collect()
}

fn build_samples(inputs: &TrainInputs, trainable: &HashSet<String>) -> Result<Vec<Sample>> {
    let mut by_scene: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, p) in inputs.proposals.iter().enumerate() {
        by_scene.entry(p.scene_id.as_str()).or_default().push(i);
    }
    let mut samples = Vec::new();
    for scene in &inputs.dataset.scenes {
        let excluded: HashSet<&str> = scene
            .objects
            .iter()
            .filter(|o| !trainable.contains(&o.class_name))
            .map(|o| o.id.as_str())
            .collect();
        let queries: Vec<usize> = by_scene
            .get(scene.id.as_str())
            .map(|v| {
                v.iter()
                    .copied()
                    .filter(|&i| {
                        inputs.proposals[i]
                            .gt_object_id
                            .as_deref()
                            .is_none_or(|id| !excluded.contains(id))
                    })
                    .collect()
            })
            .unwrap_or_default();
        let gts: Vec<Gt> = scene
            .objects
            .iter()
            .filter(|o| trainable.contains(&o.class_name))
            .map(|o| Gt {
                object_id: o.id.clone(),
                class_name: o.class_name.clone(),
                bbox: o.bbox.normalized(scene.width, scene.height),
            })
            .collect();
        if queries.len() < gts.len() {
            return Err(Error::InfeasibleMatch {
                queries: queries.len(),
                gts: gts.len(),
            });
        }
        if queries.is_empty() {
            continue;
        }
        samples.push(Sample {
            width: scene.width,
            height: scene.height,
            queries,
            gts,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyProposals);
    }
    Ok(samples)
}

struct Columns {
    embeddings: Vec<EmbeddingVector>,
    /// Classes of the objects each column's labels were drawn for.
    sources: Vec<HashSet<String>>,
    index: HashMap<Vec<u64>, usize>,
}

impl Columns {
    fn new() -> Self {
        Columns {
            embeddings: Vec::new(),
            sources: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Column of `e`, merging bit-identical embeddings.
    fn insert(&mut self, e: &EmbeddingVector, sources: impl IntoIterator<Item = String>) -> usize {
        let key = e.bit_key();
        let c = match self.index.get(&key) {
            Some(&c) => c,
            None => {
                self.embeddings.push(e.clone());
                self.sources.push(HashSet::new());
                self.index.insert(key, self.embeddings.len() - 1);
                self.embeddings.len() - 1
            }
        };
        self.sources[c].extend(sources);
        c
    }
}

struct Grads {
    w_embed: Vec<f64>,
    w_box: Vec<f64>,
    bias_box: [f64; 4],
}

impl Grads {
    fn zeros(head: &LinearHead) -> Self {
        Grads {
            w_embed: vec![0.0; head.w_embed.len()],
            w_box: vec![0.0; head.w_box.len()],
            bias_box: [0.0; 4],
        }
    }
}

/// Train `head` on the annotated non-rare objects of `inputs.dataset`.
/// Deterministic given the configuration seed.
pub fn train(mut head: LinearHead, inputs: &TrainInputs, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    head.validate()?;
    if head.embed_dim != inputs.encoder.dim() {
        return Err(Error::Shape(format!(
            "head embeds into {} dimensions, encoder produces {}",
            head.embed_dim,
            inputs.encoder.dim()
        )));
    }
    if let Some(p) = inputs.proposals.iter().find(|p| p.feature.len() != head.feature_dim) {
        return Err(Error::Shape(format!(
            "proposal feature dimension {} vs head input {}",
            p.feature.len(),
            head.feature_dim
        )));
    }
    let trainable = trainable_classes(inputs.dataset);
    let samples = build_samples(inputs, &trainable)?;

    let labels: HashMap<&str, &LabelSet> = inputs.label_sets.iter().map(|l| (l.object_id.as_str(), l)).collect();
    let mut class_targets: HashMap<String, EmbeddingVector> = HashMap::new();
    match cfg.mode {
        TrainMode::Pcl => {
            for gt in samples.iter().flat_map(|s| &s.gts) {
                match labels.get(gt.object_id.as_str()) {
                    Some(set) if !set.is_empty() => {}
                    Some(_) => return Err(Error::EmptyLabelSet),
                    None => return Err(Error::Config(format!("no label set for object {}", gt.object_id))),
                }
            }
        }
        TrainMode::Baseline => {
            let mut names: Vec<&String> = trainable.iter().collect();
            names.sort();
            for c in names {
                let e = mean_embedding_label(c, inputs.baseline_templates, inputs.encoder)?;
                class_targets.insert(c.clone(), e);
            }
        }
    }
    let base_catalog = inputs.dataset.base_classes();

    let mut rng = derive_rng(cfg.seed, "train");
    let factors = if cfg.use_rfs() {
        let freqs: HashMap<String, f64> = scene_frequencies(&inputs.dataset.scenes)
            .into_iter()
            .filter(|(c, _)| trainable.contains(c))
            .collect();
        let by_id: HashMap<&str, &crate::dataset::Scene> =
            inputs.dataset.scenes.iter().map(|s| (s.id.as_str(), s)).collect();
        samples
            .iter()
            .map(|s| {
                let scene_id = &inputs.proposals[s.queries[0]].scene_id;
                scene_repeat_factor(by_id[scene_id.as_str()], &freqs, cfg.rfs_threshold)
            })
            .collect::<Result<Vec<f64>>>()?
    } else {
        vec![1.0; samples.len()]
    };
    let mut sampler = Sampler {
        factors,
        order: Vec::new(),
        pos: 0,
    };
    let mut bank = match cfg.negatives() {
        Negatives::MemoryBank { capacity, replace } => Some(MemoryBank::new(capacity, replace)),
        Negatives::SqrtFreq { .. } => None,
    };
    let mut cache = EncodingCache::new(inputs.encoder);
    // Normalized label text -> classes of the objects it was drawn for.
    let mut label_sources: HashMap<String, HashSet<String>> = HashMap::new();

    let fd = head.feature_dim;
    let mut velocity = Grads::zeros(&head);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut stats = TrainStats::default();
    let mut micro_step: u64 = 0;

    for step in 0..cfg.steps {
        let mut grads = Grads::zeros(&head);
        let mut step_loss = 0.0;
        for _ in 0..cfg.accumulate {
            let batch: Vec<usize> = (0..cfg.batch_size).map(|_| sampler.next(&mut rng)).collect();

            // Targets: one column per distinct embedding, positives first.
            let mut columns = Columns::new();
            let mut batch_targets: Vec<(String, EmbeddingVector)> = Vec::new();
            let mut gt_cols: Vec<Vec<usize>> = Vec::with_capacity(batch.len());
            for &si in &batch {
                let mut cols = Vec::with_capacity(samples[si].gts.len());
                for gt in &samples[si].gts {
                    let (text, e) = match cfg.mode {
                        TrainMode::Pcl => {
                            let (text, pseudo) = sample_target_label(labels[gt.object_id.as_str()], &mut rng)?;
                            if pseudo {
                                stats.pseudo_draws += 1;
                            } else {
                                stats.manual_draws += 1;
                            }
                            (text.to_string(), cache.encode(text)?)
                        }
                        TrainMode::Baseline => (gt.class_name.clone(), class_targets[&gt.class_name].clone()),
                    };
                    let key = normalize_label(&text);
                    label_sources.entry(key).or_default().insert(gt.class_name.clone());
                    cols.push(columns.insert(&e, [gt.class_name.clone()]));
                    batch_targets.push((text, e));
                }
                gt_cols.push(cols);
            }
            match cfg.negatives() {
                Negatives::MemoryBank { .. } => {
                    let bank = bank.as_ref().expect("bank configured");
                    let positives: HashSet<String> = batch_targets.iter().map(|(t, _)| t.clone()).collect();
                    for (text, e) in gather_negatives(bank, &batch_targets, &positives) {
                        let sources = label_sources.get(&normalize_label(&text)).cloned().unwrap_or_default();
                        columns.insert(&e, sources);
                    }
                }
                Negatives::SqrtFreq { n } => {
                    let positives: HashSet<String> = batch
                        .iter()
                        .flat_map(|&si| samples[si].gts.iter().map(|g| g.class_name.clone()))
                        .collect();
                    let available = base_catalog.iter().filter(|c| !positives.contains(&c.name)).count();
                    for c in sample_negative_classes(&base_catalog, &positives, n.min(available), &mut rng)? {
                        let e = match class_targets.get(&c) {
                            Some(e) => e.clone(),
                            None => mean_embedding_label(&c, inputs.baseline_templates, inputs.encoder)?,
                        };
                        columns.insert(&e, [c]);
                    }
                }
            }
            stats.columns += columns.embeddings.len() as u64;

            // Forward pass over every query of the batch.
            let mut z: Vec<Vec<f64>> = Vec::new();
            let mut feats: Vec<&[f64]> = Vec::new();
            let mut y: Vec<Vec<bool>> = Vec::new();
            let mut ignore: Vec<Vec<bool>> = Vec::new();
            let mut box_terms: Vec<(usize, [f64; 4], [[f64; 4]; 4], [f64; 4], (f64, f64))> = Vec::new();
            for (bi, &si) in batch.iter().enumerate() {
                let s = &samples[si];
                let base = z.len();
                let mut pred_boxes = Vec::with_capacity(s.queries.len());
                for &qi in &s.queries {
                    let p = &inputs.proposals[qi];
                    let zq = head.embed_raw(&p.feature)?;
                    if !crate::embedding::l2_norm(&zq).is_finite() {
                        return Err(Error::TrainingDiverged { step });
                    }
                    z.push(zq);
                    feats.push(&p.feature);
                    y.push(vec![false; columns.embeddings.len()]);
                    ignore.push(vec![false; columns.embeddings.len()]);
                    let (b, jac) = decode_box(&p.bbox, &head.box_deltas(&p.feature)?);
                    pred_boxes.push((b.normalized(s.width, s.height), jac));
                }
                if s.gts.is_empty() {
                    continue;
                }
                let mut cost = vec![vec![0.0; s.gts.len()]; s.queries.len()];
                for (qi, row) in cost.iter_mut().enumerate() {
                    let zq = &z[base + qi];
                    let norm = crate::embedding::l2_norm(zq);
                    for (g, c) in row.iter_mut().enumerate() {
                        let t = &columns.embeddings[gt_cols[bi][g]];
                        let cos = if norm > 0.0 {
                            crate::embedding::dot(zq, t.as_slice()) / norm
                        } else {
                            0.0
                        };
                        *c = pair_cost(cfg.score.probability(cos), &pred_boxes[qi].0, &s.gts[g].bbox, &cfg.cost);
                    }
                }
                let m = hungarian_match(&cost)?;
                for (qi, g) in m.assignment {
                    y[base + qi][gt_cols[bi][g]] = true;
                    if cfg.mask_same_class {
                        let class = &s.gts[g].class_name;
                        for (j, src) in columns.sources.iter().enumerate() {
                            ignore[base + qi][j] = j != gt_cols[bi][g] && src.contains(class);
                        }
                    }
                    let (pn, jac) = pred_boxes[qi];
                    box_terms.push((base + qi, pn, jac, s.gts[g].bbox, (s.width, s.height)));
                }
            }
            stats.matched += box_terms.len() as u64;

            let (cls_loss, gz) = classification_loss_masked(&z, &columns.embeddings, &y, Some(&ignore), &cfg.score)?;
            let scale = 1.0 / cfg.accumulate as f64;
            for (r, g) in gz.iter().enumerate() {
                let f = feats[r];
                for (k, gk) in g.iter().enumerate() {
                    let c = gk * scale;
                    if c != 0.0 {
                        let row = &mut grads.w_embed[k * fd..(k + 1) * fd];
                        row.iter_mut().zip(f).for_each(|(w, x)| *w += c * x);
                    }
                }
            }
            let mut box_loss = 0.0;
            if !box_terms.is_empty() {
                let inv = 1.0 / box_terms.len() as f64;
                for (r, pn, jac, gn, (w, h)) in &box_terms {
                    let (l1, gl1) = l1_with_grad(pn, gn);
                    let (gi, ggi) = giou_with_grad(pn, gn);
                    box_loss += inv * (cfg.box_loss.l1 * l1 + cfg.box_loss.giou * (1.0 - gi));
                    let dims = [*w, *h, *w, *h];
                    let mut d_abs = [0.0; 4];
                    for k in 0..4 {
                        d_abs[k] = inv * (cfg.box_loss.l1 * gl1[k] - cfg.box_loss.giou * ggi[k]) / dims[k];
                    }
                    let f = feats[*r];
                    for j in 0..4 {
                        let dd: f64 = (0..4).map(|k| jac[k][j] * d_abs[k]).sum::<f64>() * scale;
                        if dd != 0.0 {
                            grads.bias_box[j] += dd;
                            let row = &mut grads.w_box[j * fd..(j + 1) * fd];
                            row.iter_mut().zip(f).for_each(|(w, x)| *w += dd * x);
                        }
                    }
                }
            }
            step_loss += (cls_loss + box_loss) * scale;

            if let Some(bank) = bank.as_mut() {
                let fresh: Vec<(String, EmbeddingVector)> = batch_targets
                    .into_iter()
                    .map(|(t, e)| (normalize_label(&t), e))
                    .collect();
                bank.update(&fresh, micro_step);
            }
            micro_step += 1;
        }
        if !step_loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        trace.push(step_loss);

        let lr = cfg.learning_rate_at(step);
        let mu = cfg.momentum;
        let apply = |p: &mut [f64], v: &mut [f64], g: &[f64], lr: f64| {
            for ((pk, vk), gk) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *vk = mu * *vk + gk;
                *pk -= lr * *vk;
            }
        };
        let box_lr = lr * cfg.box_lr_scale;
        apply(&mut head.w_embed, &mut velocity.w_embed, &grads.w_embed, lr);
        apply(&mut head.w_box, &mut velocity.w_box, &grads.w_box, box_lr);
        apply(&mut head.bias_box, &mut velocity.bias_box, &grads.bias_box, box_lr);
        if head.w_embed.iter().chain(&head.w_box).chain(&head.bias_box).any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged { step });
        }
    }
    Ok(TrainOutcome { head, trace, stats })
}
