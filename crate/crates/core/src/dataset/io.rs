//! Dataset persistence: a directory holding `scenes.jsonl` (one scene per
//! line) and `catalog.jsonl` (one class record per line).

use std::fs;
use std::path::Path;

use super::{ClassEntry, DetectionDataset, Scene};
use crate::error::{Error, Result};
use crate::jsonl;

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const CATALOG_FILE: &str = "catalog.jsonl";

pub fn save_scenes(scenes: &[Scene], path: &Path) -> Result<()> {
    jsonl::write(path, scenes)
}

/// Parse a scene file, validating each scene's internal integrity.
pub fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    let scenes: Vec<Scene> = jsonl::read(path)?;
    for scene in &scenes {
        scene.validate()?;
    }
    Ok(scenes)
}

pub fn save_catalog(catalog: &[ClassEntry], path: &Path) -> Result<()> {
    jsonl::write(path, catalog)
}

pub fn load_catalog(path: &Path) -> Result<Vec<ClassEntry>> {
    jsonl::read(path)
}

pub fn save_dataset(dataset: &DetectionDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_scenes(&dataset.scenes, &dir.join(SCENES_FILE))?;
    save_catalog(&dataset.class_catalog, &dir.join(CATALOG_FILE))
}

pub fn load_dataset(dir: &Path) -> Result<DetectionDataset> {
    let scenes = load_scenes(&dir.join(SCENES_FILE))?;
    let catalog = load_catalog(&dir.join(CATALOG_FILE))?;
    DetectionDataset::new(scenes, catalog)
}
