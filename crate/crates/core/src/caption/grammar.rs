//! Deterministic grammar captioner over a cropped scene graph.

use rand::seq::SliceRandom;

use super::{CaptionRequest, Captioner, StyleCondition};
use crate::dataset::ObjectInstance;
use crate::error::{Error, Result};
use crate::rng::seeded;

const BARE_PREFIXED: &[&str] = &[
    "{s}",
    "{s} in the picture",
    "{s} in view",
    "{s} in the scene",
    "{s} shown here",
    "{s} up close",
    "{s} in the frame",
    "{s} in this photo",
    "{s} visible here",
    "{s} in the image",
];
const BARE_FREE: &[&str] = &[
    "a {s}",
    "the {s}",
    "{s} in the picture",
    "this is a {s}",
    "a {s} in view",
    "one {s}",
    "a {s} here",
    "a photo with a {s}",
    "an image of a {s}",
    "a picture of the {s}",
];
const NEAR_FORMS: &[&str] = &["near", "next to", "beside"];
const ARTICLES: &[&str] = &["a", "the"];

fn surface_forms(predicate: &str) -> Vec<String> {
    match predicate {
        "on" => ["on", "sitting on", "standing on", "lying on", "resting on", "running on"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        "wearing" => vec!["wearing".into(), "with".into()],
        other => vec![other.to_string()],
    }
}

fn indefinite(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn article(art: &str, next: &str) -> &'static str {
    if art == "a" {
        indefinite(next)
    } else {
        "the"
    }
}

/// Captioner that enumerates every production of a small region-description
/// grammar and returns a seeded shuffle of them.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockCaptioner;

impl MockCaptioner {
    /// All distinct productions for the request, in canonical order.
    pub fn productions(request: &CaptionRequest) -> Result<Vec<String>> {
        let style = request.style;
        match style {
            StyleCondition::RegionDescription | StyleCondition::AttributeDescription => {}
            other => return Err(Error::NotImplementedStyle(format!("{other:?}"))),
        }
        let crop = &request.scene_crop;
        let subject: Option<&ObjectInstance> = match &request.output_prefix {
            Some(prefix) => crop
                .objects
                .iter()
                .filter(|o| o.class_name.eq_ignore_ascii_case(prefix))
                .max_by(|a, b| a.bbox.area().total_cmp(&b.bbox.area()).then(b.id.cmp(&a.id))),
            None => crop
                .objects
                .iter()
                .max_by(|a, b| a.bbox.area().total_cmp(&b.bbox.area()).then(b.id.cmp(&a.id))),
        };
        let prefixed = request.output_prefix.is_some();
        let s: String = match (&request.output_prefix, subject) {
            (Some(p), _) => p.to_lowercase(),
            (None, Some(o)) => o.class_name.to_lowercase(),
            (None, None) => return Ok(Vec::new()),
        };
        let attributes: Vec<String> = subject
            .map(|o| o.attributes.iter().map(|a| a.to_lowercase()).collect())
            .unwrap_or_default();

        let mut out: Vec<String> = Vec::new();
        let mut push = |text: String| {
            if !out.contains(&text) {
                out.push(text);
            }
        };
        let bare = if prefixed { BARE_PREFIXED } else { BARE_FREE };
        for form in bare {
            push(form.replace("{s}", &s));
        }
        for a in &attributes {
            if prefixed {
                push(format!("{s} that is {a}"));
                push(format!("{s} looking {a}"));
                push(format!("{s}, {a}"));
                push(format!("{s} is {a}"));
                push(format!("{s}, looking {a}"));
            } else {
                push(format!("{a} {s}"));
                push(format!("{} {a} {s}", indefinite(a)));
                push(format!("the {a} {s}"));
                push(format!("{s} that is {a}"));
                push(format!("a very {a} {s}"));
            }
        }
        for (i, a) in attributes.iter().enumerate() {
            for b in &attributes[i + 1..] {
                if prefixed {
                    push(format!("{s} that is {a} and {b}"));
                } else {
                    push(format!("{a} {b} {s}"));
                }
            }
        }
        if style == StyleCondition::AttributeDescription {
            return Ok(out);
        }

        let Some(subject) = subject else {
            return Ok(out);
        };
        let mut related: Vec<&str> = Vec::new();
        for rel in &subject.relations {
            let Some(target) = crop.object(&rel.target) else {
                continue;
            };
            related.push(target.id.as_str());
            let t = target.class_name.to_lowercase();
            for form in surface_forms(&rel.predicate) {
                for art in ARTICLES {
                    let art = article(art, &t);
                    if prefixed {
                        push(format!("{s} {form} {art} {t}"));
                    } else {
                        push(format!("{} {s} {form} {art} {t}", indefinite(&s)));
                    }
                    for a in &attributes {
                        if prefixed {
                            push(format!("{s}, {a}, {form} {art} {t}"));
                        } else {
                            push(format!("{} {a} {s} {form} {art} {t}", indefinite(a)));
                        }
                    }
                }
            }
        }
        for other in &crop.objects {
            if other.id == subject.id || related.contains(&other.id.as_str()) {
                continue;
            }
            let v = other.class_name.to_lowercase();
            if v == s {
                continue;
            }
            for form in NEAR_FORMS {
                for art in ARTICLES {
                    let art = article(art, &v);
                    if prefixed {
                        push(format!("{s} {form} {art} {v}"));
                    } else {
                        push(format!("{} {s} {form} {art} {v}", indefinite(&s)));
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Captioner for MockCaptioner {
    fn caption(&self, request: &CaptionRequest) -> Result<Vec<String>> {
        request.validate()?;
        let mut all = Self::productions(request)?;
        if all.len() < request.num_captions {
            return Err(Error::InsufficientDiversity {
                object_id: String::new(),
                got: all.len(),
            });
        }
        all.shuffle(&mut seeded(request.seed));
        all.truncate(request.num_captions);
        Ok(all)
    }
}
