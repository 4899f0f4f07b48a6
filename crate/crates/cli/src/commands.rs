//! One function per pipeline stage. Each receives a validated config.

use std::fs;
use std::path::{Path, PathBuf};

use pcl_core::caption::{save_pseudo_labels, CaptionStats};
use pcl_core::dataset::{load_dataset, save_dataset, DetectionDataset};
use pcl_core::embedding::ConceptWorld;
use pcl_core::eval::{evaluate_ap, ApReport, IOU_THRESHOLDS};
use pcl_core::experiment::{build_label_sets, build_world, caption_base_objects, compare_variants, ComparisonTable};
use pcl_core::labels::{load_label_sets, save_label_sets};
use pcl_core::rng::derive_seed;
use pcl_core::train::{
    load_proposals, predict, query_top1, save_detections, save_proposals, train, LinearHead, QueryHit,
    RegionProposal, TrainInputs, TrainMode, TrainStats,
};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, EXIT_EMPTY};

pub const WORLD_FILE: &str = "world.json";
pub const TRAIN_PROPOSALS: &str = "proposals-train.jsonl";
pub const TEST_PROPOSALS: &str = "proposals-test.jsonl";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const LABEL_STATS_FILE: &str = "label-stats.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRACE_FILE: &str = "trace.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const ABLATION_FILE: &str = "ablation.json";

fn require(path: &Path, what: &str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::missing(format!("{what} not found at {}", path.display())))
    }
}

fn create_out(cfg: &PipelineConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::missing(format!("{}: {e}", cfg.out.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::missing(format!("{}: {e}", path.display())))
}

fn load_world(cfg: &PipelineConfig) -> Result<ConceptWorld, CliError> {
    Ok(ConceptWorld::load(&require(&cfg.out.join(WORLD_FILE), "concept world")?)?)
}

fn load_ds(dir: &Path, what: &str) -> Result<DetectionDataset, CliError> {
    Ok(load_dataset(&require(dir, what)?)?)
}

fn load_props(path: &Path, what: &str) -> Result<Vec<RegionProposal>, CliError> {
    Ok(load_proposals(&require(path, what)?)?)
}

pub fn gen_world(cfg: &PipelineConfig) -> Result<String, CliError> {
    let world = build_world(&cfg.experiment, cfg.seed)?;
    create_out(cfg)?;
    world.concepts.save(&cfg.out.join(WORLD_FILE))?;
    save_dataset(&world.train, &cfg.train_dir())?;
    save_dataset(&world.test, &cfg.test_dir())?;
    save_proposals(&world.train_proposals, &cfg.out.join(TRAIN_PROPOSALS))?;
    save_proposals(&world.test_proposals, &cfg.out.join(TEST_PROPOSALS))?;
    Ok(format!(
        "train scenes: {}\ntest scenes: {}\ntrain objects: {}\ntest objects: {}",
        world.train.scenes.len(),
        world.test.scenes.len(),
        world.train.num_objects(),
        world.test.num_objects()
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelStats {
    pub objects_processed: usize,
    pub captions_generated: usize,
    pub prefix_violations: usize,
    pub prefix_violations_dropped: usize,
    pub duplicates: usize,
    pub label_sets: usize,
}

pub fn gen_labels(cfg: &PipelineConfig) -> Result<String, CliError> {
    let train_ds = load_ds(&cfg.train_dir(), "training dataset")?;
    let templates = cfg.templates()?;
    let captioner = cfg.captioner();
    let e = &cfg.experiment;
    let pseudo = caption_base_objects(&train_ds, captioner.as_ref(), &e.caption, &e.labels, cfg.seed)?;
    let sets = build_label_sets(&train_ds, &pseudo, &templates, &e.labels, cfg.seed)?;
    let CaptionStats {
        objects,
        captions,
        prefix_violations,
        duplicates,
    } = pseudo.stats;
    let stats = LabelStats {
        objects_processed: objects,
        captions_generated: captions,
        prefix_violations,
        prefix_violations_dropped: if e.caption.use_prefix { prefix_violations } else { 0 },
        duplicates,
        label_sets: sets.len(),
    };
    create_out(cfg)?;
    save_pseudo_labels(&pseudo.captions, &cfg.out.join(CAPTIONS_FILE))?;
    save_label_sets(&sets, &cfg.out.join(LABELS_FILE))?;
    write_json(&cfg.out.join(LABEL_STATS_FILE), &stats)?;
    Ok(format!(
        "objects processed: {}\ncaptions generated: {}\nprefix violations: {}\nprefix violations dropped: {}\nlabel sets: {}",
        stats.objects_processed,
        stats.captions_generated,
        stats.prefix_violations,
        stats.prefix_violations_dropped,
        stats.label_sets
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TraceFile {
    pub mode: TrainMode,
    pub loss: Vec<f64>,
    pub stats: TrainStats,
}

pub fn train_cmd(cfg: &PipelineConfig) -> Result<String, CliError> {
    let e = &cfg.experiment;
    let train_ds = load_ds(&cfg.train_dir(), "training dataset")?;
    let proposals = load_props(&cfg.out.join(TRAIN_PROPOSALS), "training proposals")?;
    let world = load_world(cfg)?;
    let label_sets = match e.train.mode {
        TrainMode::Pcl => load_label_sets(&require(&cfg.out.join(LABELS_FILE), "label sets")?)?,
        TrainMode::Baseline => Vec::new(),
    };
    let baseline_templates = cfg.baseline_templates()?;
    let head = LinearHead::new(e.embed_dim, e.features.dim, e.train.init_scale, derive_seed(cfg.seed, "head"));
    let mut train_cfg = e.train.clone();
    train_cfg.seed = derive_seed(cfg.seed, "train");
    let inputs = TrainInputs {
        dataset: &train_ds,
        proposals: &proposals,
        label_sets: &label_sets,
        encoder: &world,
        baseline_templates: &baseline_templates,
    };
    let outcome = train(head, &inputs, &train_cfg)?;
    outcome.head.save(&cfg.out.join(MODEL_FILE))?;
    let trace = TraceFile {
        mode: e.train.mode,
        loss: outcome.trace,
        stats: outcome.stats,
    };
    write_json(&cfg.out.join(TRACE_FILE), &trace)?;
    let first = trace.loss.first().copied().unwrap_or(f64::NAN);
    let last = trace.loss.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "mode: {:?}\nsteps: {}\nloss: {first:.6} -> {last:.6}",
        e.train.mode,
        trace.loss.len()
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub report: ApReport,
    pub config_fingerprint: String,
    pub seed: u64,
}

pub fn eval_cmd(cfg: &PipelineConfig) -> Result<String, CliError> {
    let head = LinearHead::load(&require(&cfg.out.join(MODEL_FILE), "model")?)?;
    let test_ds = load_ds(&cfg.test_dir(), "evaluation dataset")?;
    let proposals = load_props(&cfg.out.join(TEST_PROPOSALS), "evaluation proposals")?;
    let world = load_world(cfg)?;
    let templates = cfg.templates()?;
    let detections = predict(
        &head,
        &proposals,
        &test_ds.class_names(),
        &templates,
        &world,
        &cfg.experiment.predict,
    )?;
    let report = evaluate_ap(&detections, &test_ds, &IOU_THRESHOLDS)?;
    save_detections(&detections, &cfg.out.join(DETECTIONS_FILE))?;
    let file = ReportFile {
        report,
        config_fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
    };
    write_json(&cfg.out.join(REPORT_FILE), &file)?;
    let mut lines: Vec<String> = file
        .report
        .per_class_ap
        .iter()
        .map(|(c, v)| format!("AP[{c}]: {v:.4}"))
        .collect();
    lines.push(format!("ap: {:.4}", file.report.ap));
    lines.push(format!("ap_rare: {:.4}", file.report.ap_rare));
    Ok(lines.join("\n"))
}

pub fn query_cmd(cfg: &PipelineConfig, text: &str, scene: Option<&str>) -> Result<String, CliError> {
    let head = LinearHead::load(&require(&cfg.out.join(MODEL_FILE), "model")?)?;
    let world = load_world(cfg)?;
    let mut proposals = load_props(&cfg.out.join(TEST_PROPOSALS), "evaluation proposals")?;
    if let Some(id) = scene {
        proposals.retain(|p| p.scene_id == id);
    }
    if proposals.is_empty() {
        return Err(CliError::new(EXIT_EMPTY, "no proposals to rank"));
    }
    let hit: QueryHit = query_top1(&head, &proposals, text, &world, &cfg.experiment.predict.score)?;
    serde_json::to_string(&hit).map_err(|e| CliError::config(e.to_string()))
}

pub fn ablate(cfg: &PipelineConfig) -> Result<String, CliError> {
    let table: ComparisonTable = compare_variants(&cfg.experiment, &cfg.ablate.variants, &cfg.ablate.seeds)?;
    create_out(cfg)?;
    write_json(&cfg.out.join(ABLATION_FILE), &table)?;
    Ok(table.render().trim_end().to_string())
}
