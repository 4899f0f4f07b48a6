//! The concept oracle: a deterministic text encoder over a synthetic concept
//! space. A caption's embedding is a weighted mix of its subject, the objects
//! it mentions and its attribute words, so a caption such as "dog on a chair"
//! lands between the `dog` and `chair` class embeddings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{dot, l2_norm, EmbeddingVector, TextEncoder};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Largest allowed pairwise cosine between base concept vectors.
pub const MAX_BASE_COSINE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptKind {
    Class,
    Attribute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingWeights {
    /// Subject weight.
    pub alpha: f64,
    /// Weight of each mentioned object.
    pub beta: f64,
    /// Weight of each attribute word.
    pub gamma: f64,
}

impl Default for MixingWeights {
    fn default() -> Self {
        MixingWeights {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Concept {
    kind: ConceptKind,
    vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptWorld {
    dim: usize,
    weights: MixingWeights,
    concepts: BTreeMap<String, Concept>,
}

impl ConceptWorld {
    /// Draw one base vector per concept from a seeded isotropic Gaussian.
    /// When `dim` covers all concepts the vectors are orthonormalized;
    /// otherwise draws are rejected until every pairwise cosine is at most
    /// [`MAX_BASE_COSINE`].
    pub fn generate(
        classes: &[String],
        attributes: &[String],
        dim: usize,
        weights: MixingWeights,
        seed: u64,
    ) -> Result<Self> {
        if !(weights.alpha > weights.beta && weights.beta > 0.0 && weights.gamma > 0.0) {
            return Err(Error::Config(format!(
                "mixing weights must satisfy alpha > beta > 0 and gamma > 0, got {weights:?}"
            )));
        }
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let names: Vec<(&String, ConceptKind)> = classes
            .iter()
            .map(|c| (c, ConceptKind::Class))
            .chain(attributes.iter().map(|a| (a, ConceptKind::Attribute)))
            .collect();
        if names.is_empty() {
            return Err(Error::EmptyWorld);
        }
        let mut rng = derive_rng(seed, "concept-world");
        let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(names.len());
        let orthonormal = dim >= names.len();
        for _ in &names {
            let mut tries = 0;
            let v = loop {
                let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                if orthonormal {
                    for u in &accepted {
                        let p = dot(&v, u);
                        v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
                    }
                }
                let n = l2_norm(&v);
                if n < 1e-8 {
                    continue;
                }
                v.iter_mut().for_each(|x| *x /= n);
                if orthonormal || accepted.iter().all(|u| dot(&v, u) <= MAX_BASE_COSINE) {
                    break v;
                }
                tries += 1;
                if tries > 10_000 {
                    return Err(Error::Config(format!(
                        "cannot place {} concepts in dimension {dim} with pairwise cosine <= {MAX_BASE_COSINE}",
                        names.len()
                    )));
                }
            };
            accepted.push(v);
        }
        let mut concepts = BTreeMap::new();
        for ((name, kind), v) in names.into_iter().zip(accepted) {
            let key = name.to_lowercase();
            if concepts.contains_key(&key) {
                return Err(Error::Config(format!("duplicate concept {name}")));
            }
            concepts.insert(
                key,
                Concept {
                    kind,
                    vector: EmbeddingVector::normalize(v)?,
                },
            );
        }
        Ok(ConceptWorld {
            dim,
            weights,
            concepts,
        })
    }

    pub fn weights(&self) -> MixingWeights {
        self.weights
    }

    pub fn contains(&self, name: &str) -> bool {
        self.concepts.contains_key(&name.to_lowercase())
    }

    pub fn kind(&self, name: &str) -> Option<ConceptKind> {
        self.concepts.get(&name.to_lowercase()).map(|c| c.kind)
    }

    /// Base vector of a concept.
    pub fn concept(&self, name: &str) -> Option<&EmbeddingVector> {
        self.concepts.get(&name.to_lowercase()).map(|c| &c.vector)
    }

    pub fn names(&self, kind: ConceptKind) -> Vec<&str> {
        self.concepts
            .iter()
            .filter(|(_, c)| c.kind == kind)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    /// Normalized mix of a subject class, other mentioned classes and attribute
    /// words. Mentions are summed in name order so the result does not depend
    /// on mention order.
    pub fn mix(
        &self,
        subject: Option<&str>,
        mentioned: &[&str],
        attributes: &[&str],
        weights: MixingWeights,
    ) -> Result<EmbeddingVector> {
        let mut acc = vec![0.0; self.dim];
        let mut any = false;
        let mut add = |name: &str, w: f64| -> Result<()> {
            let c = self
                .concept(name)
                .ok_or_else(|| Error::UnknownConcepts(name.to_string()))?;
            acc.iter_mut()
                .zip(c.as_slice())
                .for_each(|(a, v)| *a += w * v);
            any = true;
            Ok(())
        };
        if let Some(s) = subject {
            add(s, weights.alpha)?;
        }
        let mut mentioned: Vec<&str> = mentioned.to_vec();
        mentioned.sort_unstable();
        for m in mentioned {
            add(m, weights.beta)?;
        }
        let mut attributes: Vec<&str> = attributes.to_vec();
        attributes.sort_unstable();
        for a in attributes {
            add(a, weights.gamma)?;
        }
        if !any {
            return Err(Error::UnknownConcepts(String::new()));
        }
        EmbeddingVector::normalize(acc)
    }

    /// Parse a caption into (subject, mentioned classes, attributes). The first
    /// class word is the subject; unknown words are ignored.
    pub fn parse(&self, caption: &str) -> (Option<String>, Vec<String>, Vec<String>) {
        let mut subject = None;
        let mut mentioned = Vec::new();
        let mut attributes = Vec::new();
        for token in caption
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let token = token.to_lowercase();
            match self.kind(&token) {
                Some(ConceptKind::Class) if subject.is_none() => subject = Some(token),
                Some(ConceptKind::Class) => mentioned.push(token),
                Some(ConceptKind::Attribute) => attributes.push(token),
                None => {}
            }
        }
        (subject, mentioned, attributes)
    }

    pub fn oracle_encode(&self, caption: &str) -> Result<EmbeddingVector> {
        let (subject, mentioned, attributes) = self.parse(caption);
        if subject.is_none() && attributes.is_empty() {
            return Err(Error::UnknownConcepts(caption.to_string()));
        }
        let mentioned: Vec<&str> = mentioned.iter().map(String::as_str).collect();
        let attributes: Vec<&str> = attributes.iter().map(String::as_str).collect();
        self.mix(subject.as_deref(), &mentioned, &attributes, self.weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Format(format!("cannot serialize world: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let world: ConceptWorld = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if world.concepts.values().any(|c| c.vector.dim() != world.dim) {
            return Err(Error::Format(format!(
                "{}: concept vector dimension differs from {}",
                path.display(),
                world.dim
            )));
        }
        Ok(world)
    }
}

impl TextEncoder for ConceptWorld {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        self.oracle_encode(text)
    }
}
