//! Manual prompt templates, per-object label sets mixing pseudo captions with
//! manual prompts, and training-time target sampling.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingVector, TextEncoder};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::rng::Rng;

pub const PLACEHOLDER: &str = "{}";

/// Default evaluation prompts. Replaceable through a template file.
pub const DEFAULT_TEMPLATES_7: [&str; 7] = [
    "a photo of a {}",
    "a photo of the {}",
    "a photo of one {}",
    "itap of a {}",
    "a bad photo of the {}",
    "a origami {}",
    "art of the {}",
];

/// The 80-prompt set averaged into the baseline's class embedding.
pub const DEFAULT_TEMPLATES_80: [&str; 80] = [
    "a bad photo of a {}.",
    "a photo of many {}.",
    "a sculpture of a {}.",
    "a photo of the hard to see {}.",
    "a low resolution photo of the {}.",
    "a rendering of a {}.",
    "graffiti of a {}.",
    "a bad photo of the {}.",
    "a cropped photo of the {}.",
    "a tattoo of a {}.",
    "the embroidered {}.",
    "a photo of a hard to see {}.",
    "a bright photo of a {}.",
    "a photo of a clean {}.",
    "a photo of a dirty {}.",
    "a dark photo of the {}.",
    "a drawing of a {}.",
    "a photo of my {}.",
    "the plastic {}.",
    "a photo of the cool {}.",
    "a close-up photo of a {}.",
    "a black and white photo of the {}.",
    "a painting of the {}.",
    "a painting of a {}.",
    "a pixelated photo of the {}.",
    "a sculpture of the {}.",
    "a bright photo of the {}.",
    "a cropped photo of a {}.",
    "a plastic {}.",
    "a photo of the dirty {}.",
    "a jpeg corrupted photo of a {}.",
    "a blurry photo of the {}.",
    "a photo of the {}.",
    "a good photo of the {}.",
    "a rendering of the {}.",
    "a {} in a video game.",
    "a photo of one {}.",
    "a doodle of a {}.",
    "a close-up photo of the {}.",
    "a photo of a {}.",
    "the origami {}.",
    "the {} in a video game.",
    "a sketch of a {}.",
    "a doodle of the {}.",
    "a origami {}.",
    "a low resolution photo of a {}.",
    "the toy {}.",
    "a rendition of the {}.",
    "a photo of the clean {}.",
    "a photo of a large {}.",
    "a rendition of a {}.",
    "a photo of a nice {}.",
    "a photo of a weird {}.",
    "a blurry photo of a {}.",
    "a cartoon {}.",
    "art of a {}.",
    "a sketch of the {}.",
    "a embroidered {}.",
    "a pixelated photo of a {}.",
    "itap of the {}.",
    "a jpeg corrupted photo of the {}.",
    "a good photo of a {}.",
    "a plushie {}.",
    "a photo of the nice {}.",
    "a photo of the small {}.",
    "a photo of the weird {}.",
    "the cartoon {}.",
    "art of the {}.",
    "a drawing of the {}.",
    "a photo of the large {}.",
    "a black and white photo of a {}.",
    "the plushie {}.",
    "a dark photo of a {}.",
    "itap of a {}.",
    "graffiti of the {}.",
    "a toy {}.",
    "itap of my {}.",
    "a photo of a cool {}.",
    "a photo of a small {}.",
    "a tattoo of the {}.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub fn new(pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        if pattern.matches(PLACEHOLDER).count() != 1 {
            return Err(Error::InvalidTemplate(pattern));
        }
        Ok(PromptTemplate(pattern))
    }

    pub fn render(&self, class_name: &str) -> String {
        self.0.replacen(PLACEHOLDER, class_name, 1)
    }

    pub fn pattern(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        PromptTemplate::new(s)
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> Self {
        t.0
    }
}

fn templates_from(list: &[&str]) -> Vec<PromptTemplate> {
    list.iter()
        .map(|p| PromptTemplate::new(*p).expect("built-in template"))
        .collect()
}

pub fn default_templates_7() -> Vec<PromptTemplate> {
    templates_from(&DEFAULT_TEMPLATES_7)
}

pub fn default_templates_80() -> Vec<PromptTemplate> {
    templates_from(&DEFAULT_TEMPLATES_80)
}

/// One template per non-blank line.
pub fn load_templates(path: &Path) -> Result<Vec<PromptTemplate>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| PromptTemplate::new(l.trim_end()))
        .collect()
}

pub fn save_templates(templates: &[PromptTemplate], path: &Path) -> Result<()> {
    let mut text = String::new();
    for t in templates {
        text.push_str(t.pattern());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Render `n` prompts for `class_name`. Templates are drawn without
/// replacement while `n` fits the list, uniformly with replacement otherwise.
pub fn render_manual_prompts(
    class_name: &str,
    templates: &[PromptTemplate],
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<String>> {
    if templates.is_empty() {
        return Err(Error::Config("no prompt templates".into()));
    }
    if n <= templates.len() {
        let mut picked: Vec<&PromptTemplate> = templates.choose_multiple(rng, n).collect();
        picked.shuffle(rng);
        Ok(picked.into_iter().map(|t| t.render(class_name)).collect())
    } else {
        Ok((0..n)
            .map(|_| templates.choose(rng).expect("non-empty").render(class_name))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSet {
    pub object_id: String,
    pub pseudo: Vec<String>,
    pub manual: Vec<String>,
}

impl LabelSet {
    pub fn len(&self) -> usize {
        self.pseudo.len() + self.manual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Number of manual labels for a set of `k_total`. Integral products are
/// used as is; a fractional part becomes the probability of one extra
/// manual label, so `k_total = 1, fraction = 0.2` yields a manual label one
/// time in five.
pub fn manual_count(k_total: usize, manual_fraction: f64, rng: &mut Rng) -> usize {
    let expected = k_total as f64 * manual_fraction;
    let nearest = expected.round();
    if (expected - nearest).abs() < 1e-9 {
        return nearest as usize;
    }
    let whole = expected.floor();
    let extra = rng.random::<f64>() < expected - whole;
    whole as usize + usize::from(extra)
}

pub fn assemble_label_set(
    object_id: &str,
    pseudo: &[String],
    class_name: &str,
    templates: &[PromptTemplate],
    k_total: usize,
    manual_fraction: f64,
    rng: &mut Rng,
) -> Result<LabelSet> {
    if !(0.0..=1.0).contains(&manual_fraction) {
        return Err(Error::Config(format!(
            "manual fraction {manual_fraction} outside [0, 1]"
        )));
    }
    if k_total == 0 {
        return Err(Error::Config("k_total must be at least 1".into()));
    }
    let n_manual = manual_count(k_total, manual_fraction, rng).min(k_total);
    let n_pseudo = k_total - n_manual;
    if pseudo.len() < n_pseudo {
        return Err(Error::InsufficientLabels {
            needed: n_pseudo,
            got: pseudo.len(),
        });
    }
    let picked: Vec<String> = pseudo.choose_multiple(rng, n_pseudo).cloned().collect();
    let manual = if n_manual == 0 {
        Vec::new()
    } else {
        render_manual_prompts(class_name, templates, n_manual, rng)?
    };
    Ok(LabelSet {
        object_id: object_id.to_string(),
        pseudo: picked,
        manual,
    })
}

/// Uniform draw over all labels of the set. The flag is true for pseudo
/// caption labels.
pub fn sample_target_label<'a>(set: &'a LabelSet, rng: &mut Rng) -> Result<(&'a str, bool)> {
    let n = set.len();
    if n == 0 {
        return Err(Error::EmptyLabelSet);
    }
    let i = rng.random_range(0..n);
    Ok(if i < set.pseudo.len() {
        (set.pseudo[i].as_str(), true)
    } else {
        (set.manual[i - set.pseudo.len()].as_str(), false)
    })
}

/// Mean of the class's prompt embeddings, renormalized.
pub fn mean_embedding_label(
    class_name: &str,
    templates: &[PromptTemplate],
    encoder: &dyn TextEncoder,
) -> Result<EmbeddingVector> {
    if templates.is_empty() {
        return Err(Error::Config("no prompt templates".into()));
    }
    let mut acc = vec![0.0; encoder.dim()];
    for t in templates {
        let v = encoder.encode(&t.render(class_name))?;
        if v.dim() != acc.len() {
            return Err(Error::Shape(format!(
                "encoder returned dimension {}, expected {}",
                v.dim(),
                acc.len()
            )));
        }
        acc.iter_mut().zip(v.as_slice()).for_each(|(a, x)| *a += x);
    }
    let n = templates.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    EmbeddingVector::normalize(acc).map_err(|_| {
        Error::DegenerateEmbedding(format!("prompt embeddings for {class_name:?} average to zero"))
    })
}

pub fn save_label_sets(sets: &[LabelSet], path: &Path) -> Result<()> {
    jsonl::write(path, sets)
}

pub fn load_label_sets(path: &Path) -> Result<Vec<LabelSet>> {
    jsonl::read(path)
}
