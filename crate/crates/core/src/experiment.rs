//! End-to-end desk-scale experiments: seeded world, pseudo labels, training
//! in either mode, and evaluation on a held-out scene set.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::caption::{generate_pseudo_labels, CaptionConfig, Captioner, MockCaptioner, PseudoLabels};
use crate::dataset::synth::{build_dataset, generate_scenes, WorldSpec};
use crate::dataset::DetectionDataset;
use crate::embedding::{ConceptWorld, MixingWeights};
use crate::error::{Error, Result};
use crate::eval::{evaluate_ap, ApReport, IOU_THRESHOLDS};
use crate::matching::ScoreParams;
use crate::labels::{assemble_label_set, default_templates_7, default_templates_80, LabelSet, PromptTemplate};
use crate::rng::{derive_rng, derive_seed};
use crate::train::{
    predict, query_top1, synthesize_features, train, FeatureConfig, LinearHead, PredictConfig, Projection, RegionProposal,
    TrainConfig, TrainInputs, TrainMode, TrainStats,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub k_total: usize,
    pub manual_fraction: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            k_total: 20,
            manual_fraction: 0.2,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_total == 0 || !(0.0..=1.0).contains(&self.manual_fraction) {
            return Err(Error::Config("k_total must be positive and manual_fraction in [0, 1]".into()));
        }
        Ok(())
    }

    /// Largest number of pseudo labels a set can need.
    pub fn max_pseudo(&self) -> usize {
        self.k_total - (self.k_total as f64 * self.manual_fraction).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSpec,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub embed_dim: usize,
    pub mixing: MixingWeights,
    pub features: FeatureConfig,
    pub caption: CaptionConfig,
    pub labels: LabelConfig,
    pub train: TrainConfig,
    pub predict: PredictConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldSpec::default(),
            train_scenes: 300,
            test_scenes: 200,
            embed_dim: 64,
            mixing: MixingWeights::default(),
            features: FeatureConfig::default(),
            caption: CaptionConfig::default(),
            labels: LabelConfig::default(),
            train: TrainConfig::default(),
            predict: PredictConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.train_scenes == 0 || self.test_scenes == 0 {
            return Err(Error::EmptyWorld);
        }
        self.features.validate()?;
        self.labels.validate()?;
        self.train.validate()
    }
}

/// Seeded world shared by every variant of one experiment seed.
pub struct World {
    pub concepts: ConceptWorld,
    pub train: DetectionDataset,
    pub test: DetectionDataset,
    pub train_proposals: Vec<RegionProposal>,
    pub test_proposals: Vec<RegionProposal>,
}

pub fn build_world(cfg: &ExperimentConfig, seed: u64) -> Result<World> {
    cfg.validate()?;
    let (classes, attributes) = cfg.world.vocabulary();
    let concepts = ConceptWorld::generate(
        &classes,
        &attributes,
        cfg.embed_dim,
        cfg.mixing,
        derive_seed(seed, "concepts"),
    )?;
    let scene_seed = derive_seed(seed, "scenes");
    let train = build_dataset(&cfg.world, generate_scenes(&cfg.world, cfg.train_scenes, scene_seed, "train-")?)?;
    let test = build_dataset(&cfg.world, generate_scenes(&cfg.world, cfg.test_scenes, scene_seed, "test-")?)?;
    let projection = Projection::random(cfg.features.dim, cfg.embed_dim, derive_seed(seed, "projection"))?;
    let feature_seed = derive_seed(seed, "features");
    let train_proposals = synthesize_features(&train, &concepts, &projection, &cfg.features, feature_seed)?;
    let test_proposals = synthesize_features(&test, &concepts, &projection, &cfg.features, feature_seed)?;
    Ok(World {
        concepts,
        train,
        test,
        train_proposals,
        test_proposals,
    })
}

/// Pseudo captions for every non-rare object of `dataset`.
pub fn caption_base_objects(
    dataset: &DetectionDataset,
    captioner: &dyn Captioner,
    caption: &CaptionConfig,
    labels: &LabelConfig,
    seed: u64,
) -> Result<PseudoLabels> {
    let base: HashSet<String> = dataset.base_classes().into_iter().map(|c| c.name).collect();
    let mut cfg = *caption;
    cfg.k = cfg.k.max(labels.max_pseudo());
    generate_pseudo_labels(dataset, captioner, &cfg, derive_seed(seed, "captions"), Some(&base))
}

/// One label set per captioned object; each object's draw is seeded by its id.
pub fn build_label_sets(
    dataset: &DetectionDataset,
    pseudo: &PseudoLabels,
    templates: &[PromptTemplate],
    labels: &LabelConfig,
    seed: u64,
) -> Result<Vec<LabelSet>> {
    let label_seed = derive_seed(seed, "labels");
    let mut out = Vec::new();
    for scene in &dataset.scenes {
        for o in &scene.objects {
            let Some(caps) = pseudo.captions.get(&o.id) else {
                continue;
            };
            let texts: Vec<String> = caps.iter().map(|c| c.text.clone()).collect();
            let mut rng = derive_rng(label_seed, &o.id);
            out.push(assemble_label_set(
                &o.id,
                &texts,
                &o.class_name,
                templates,
                labels.k_total,
                labels.manual_fraction,
                &mut rng,
            )?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: ApReport,
    pub trace: Vec<f64>,
    pub stats: TrainStats,
    pub head: LinearHead,
}

/// Train on `world.train` with the given label sets and evaluate on
/// `world.test` with the seven evaluation prompts.
pub fn train_and_evaluate(cfg: &ExperimentConfig, world: &World, label_sets: &[LabelSet], seed: u64) -> Result<RunOutcome> {
    let head = LinearHead::new(cfg.embed_dim, cfg.features.dim, cfg.train.init_scale, derive_seed(seed, "head"));
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(seed, "train");
    let templates_80 = default_templates_80();
    let inputs = TrainInputs {
        dataset: &world.train,
        proposals: &world.train_proposals,
        label_sets,
        encoder: &world.concepts,
        baseline_templates: &templates_80,
    };
    let outcome = train(head, &inputs, &train_cfg)?;
    let classes = world.test.class_names();
    let detections = predict(
        &outcome.head,
        &world.test_proposals,
        &classes,
        &default_templates_7(),
        &world.concepts,
        &cfg.predict,
    )?;
    let report = evaluate_ap(&detections, &world.test, &IOU_THRESHOLDS)?;
    Ok(RunOutcome {
        report,
        trace: outcome.trace,
        stats: outcome.stats,
        head: outcome.head,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let world = build_world(cfg, seed)?;
    run_on_world(cfg, &world, seed)
}

fn run_on_world(cfg: &ExperimentConfig, world: &World, seed: u64) -> Result<RunOutcome> {
    let label_sets = match cfg.train.mode {
        TrainMode::Pcl => {
            let pseudo = caption_base_objects(&world.train, &MockCaptioner, &cfg.caption, &cfg.labels, seed)?;
            build_label_sets(&world.train, &pseudo, &default_templates_7(), &cfg.labels, seed)?
        }
        TrainMode::Baseline => Vec::new(),
    };
    train_and_evaluate(cfg, world, &label_sets, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoPrefix,
    NoManual,
    MarginZero,
    SingleLabel,
    Baseline,
}

impl Variant {
    pub const ABLATIONS: [Variant; 4] = [Variant::NoPrefix, Variant::NoManual, Variant::MarginZero, Variant::SingleLabel];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full PCL",
            Variant::NoPrefix => "no prefix",
            Variant::NoManual => "no manual prompts",
            Variant::MarginZero => "margin 0",
            Variant::SingleLabel => "K_total=1",
            Variant::Baseline => "baseline",
        }
    }

    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => cfg.train.mode = TrainMode::Pcl,
            Variant::NoPrefix => {
                cfg.train.mode = TrainMode::Pcl;
                cfg.caption.use_prefix = false;
            }
            Variant::NoManual => {
                cfg.train.mode = TrainMode::Pcl;
                cfg.labels.manual_fraction = 0.0;
            }
            Variant::MarginZero => {
                cfg.train.mode = TrainMode::Pcl;
                cfg.caption.margin = 0.0;
            }
            Variant::SingleLabel => {
                cfg.train.mode = TrainMode::Pcl;
                cfg.labels.k_total = 1;
            }
            Variant::Baseline => cfg.train.mode = TrainMode::Baseline,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub ap_rare: Vec<f64>,
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<VariantResult>,
}

impl ComparisonTable {
    pub fn row(&self, v: Variant) -> Option<&VariantResult> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Seeds on which `v`'s ap_rare satisfies `pred(v_ap_rare, reference_ap_rare)`.
    pub fn count_seeds(&self, v: Variant, reference: Variant, pred: impl Fn(f64, f64) -> bool) -> usize {
        match (self.row(v), self.row(reference)) {
            (Some(a), Some(b)) => a.ap_rare.iter().zip(&b.ap_rare).filter(|(x, y)| pred(**x, **y)).count(),
            _ => 0,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<20} {:>9} {:>9}  per-seed APr\n", "variant", "mean APr", "mean AP"));
        for r in &self.rows {
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            let seeds: Vec<String> = r.ap_rare.iter().map(|v| format!("{v:.3}")).collect();
            out.push_str(&format!(
                "{:<20} {:>9.4} {:>9.4}  {}\n",
                r.variant.name(),
                mean(&r.ap_rare),
                mean(&r.ap),
                seeds.join(" ")
            ));
        }
        out
    }
}

/// Run every variant on every seed; worlds are shared across variants of
/// the same seed.
pub fn compare_variants(base: &ExperimentConfig, variants: &[Variant], seeds: &[u64]) -> Result<ComparisonTable> {
    let mut rows: Vec<VariantResult> = variants
        .iter()
        .map(|&variant| VariantResult {
            variant,
            ap_rare: Vec::new(),
            ap: Vec::new(),
        })
        .collect();
    for &seed in seeds {
        let world = build_world(base, seed)?;
        for (i, v) in variants.iter().enumerate() {
            let cfg = v.apply(base);
            let out = run_on_world(&cfg, &world, seed)?;
            rows[i].ap_rare.push(out.report.ap_rare);
            rows[i].ap.push(out.report.ap);
        }
    }
    Ok(ComparisonTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Fraction of (cat-with-chair, lone-cat) test proposal pairs for which
/// `query` ranks the cat that shares its scene with a chair first.
pub fn query_preference(head: &LinearHead, world: &World, query: &str, params: &ScoreParams) -> Result<f64> {
    let mut with_chair = Vec::new();
    let mut lone = Vec::new();
    for scene in &world.test.scenes {
        let has_chair = scene.objects.iter().any(|o| o.class_name == "chair");
        for o in scene.objects.iter().filter(|o| o.class_name == "cat") {
            let Some(p) = world
                .test_proposals
                .iter()
                .find(|p| p.gt_object_id.as_deref() == Some(o.id.as_str()))
            else {
                continue;
            };
            if has_chair {
                with_chair.push(p.clone());
            } else if scene.objects.len() == 1 {
                lone.push(p.clone());
            }
        }
    }
    let pairs = with_chair.len().min(lone.len());
    if pairs == 0 {
        return Err(Error::EmptyProposals);
    }
    let mut wins = 0usize;
    for (a, b) in with_chair.into_iter().zip(lone) {
        let hit = query_top1(head, &[a, b], query, &world.concepts, params)?;
        if hit.proposal_index == 0 {
            wins += 1;
        }
    }
    Ok(wins as f64 / pairs as f64)
}
