//! Open-vocabulary scoring, the set-prediction classification loss with its
//! analytic gradient, box losses, matching costs and bipartite assignment.

mod boxes;
mod hungarian;

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, l2_norm, EmbeddingVector};
use crate::error::{Error, Result};

pub use boxes::{giou, giou_with_grad, l1_with_grad};
pub use hungarian::{hungarian_match, MatchResult};

/// Fixed affine map from cosine similarity to logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreParams {
    pub logit_scale: f64,
    pub logit_shift: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams {
            logit_scale: 25.0,
            logit_shift: -0.3,
        }
    }
}

impl ScoreParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0 && self.logit_shift.is_finite()) {
            return Err(Error::Config(format!(
                "invalid score parameters a={} b={}",
                self.logit_scale, self.logit_shift
            )));
        }
        Ok(())
    }

    pub fn logit(&self, cosine: f64) -> f64 {
        self.logit_scale * cosine.clamp(-1.0, 1.0) + self.logit_shift
    }

    pub fn probability(&self, cosine: f64) -> f64 {
        sigmoid(self.logit(cosine))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy of `sigmoid(logit)` against `y`.
pub fn bce_with_logit(logit: f64, y: bool) -> f64 {
    softplus(logit) - if y { logit } else { 0.0 }
}

/// Cosine similarity of two raw vectors.
pub fn raw_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("dimensions {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if !(na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite()) {
        return Err(Error::DegenerateEmbedding("zero-norm vector in score".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn score(pred: &EmbeddingVector, target: &EmbeddingVector, params: &ScoreParams) -> Result<f64> {
    Ok(params.probability(raw_cosine(pred.as_slice(), target.as_slice())?))
}

/// Loss `(1/N) sum_i sum_j BCE(p_ij, y_ij)` and its gradient with respect to
/// the raw (unnormalized) predicted embeddings.
pub fn classification_loss(
    preds: &[Vec<f64>],
    targets: &[EmbeddingVector],
    y: &[Vec<bool>],
    params: &ScoreParams,
) -> Result<(f64, Vec<Vec<f64>>)> {
    classification_loss_masked(preds, targets, y, None, params)
}

/// [`classification_loss`] where cells flagged in `ignore` contribute
/// neither loss nor gradient. The normalization stays `1/N`.
pub fn classification_loss_masked(
    preds: &[Vec<f64>],
    targets: &[EmbeddingVector],
    y: &[Vec<bool>],
    ignore: Option<&[Vec<bool>]>,
    params: &ScoreParams,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = preds.len();
    if let Some(mask) = ignore {
        if mask.len() != n || mask.iter().any(|r| r.len() != targets.len()) {
            return Err(Error::Shape("ignore mask does not match the label matrix".into()));
        }
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{n} predictions but {} label rows", y.len())));
    }
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let dim = preds[0].len();
    for (i, row) in y.iter().enumerate() {
        if row.len() != targets.len() {
            return Err(Error::Shape(format!(
                "label row {i} has {} columns, expected {}",
                row.len(),
                targets.len()
            )));
        }
    }
    if let Some(p) = preds.iter().find(|p| p.len() != dim) {
        return Err(Error::Shape(format!("prediction dimension {} vs {dim}", p.len())));
    }
    if let Some(t) = targets.iter().find(|t| t.dim() != dim) {
        return Err(Error::Shape(format!("target dimension {} vs {dim}", t.dim())));
    }

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(n);
    for (i, (z, row)) in preds.iter().zip(y).enumerate() {
        let skip = ignore.map(|m| m[i].as_slice());
        let norm = l2_norm(z);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateEmbedding("zero-norm prediction".into()));
        }
        let u: Vec<f64> = z.iter().map(|v| v / norm).collect();
        let mut g = vec![0.0; dim];
        let mut radial = 0.0;
        for (j, (t, &label)) in targets.iter().zip(row).enumerate() {
            if skip.is_some_and(|m| m[j]) {
                continue;
            }
            let t = t.as_slice();
            let cos = dot(&u, t);
            let logit = params.logit_scale * cos + params.logit_shift;
            loss += bce_with_logit(logit, label);
            let coef = (sigmoid(logit) - if label { 1.0 } else { 0.0 }) * params.logit_scale;
            g.iter_mut().zip(t).for_each(|(gk, tk)| *gk += coef * tk);
            radial += coef * cos;
        }
        let s = inv_n / norm;
        g.iter_mut()
            .zip(&u)
            .for_each(|(gk, uk)| *gk = s * (*gk - radial * uk));
        grads.push(g);
    }
    Ok((loss * inv_n, grads))
}

/// Weights of the class, L1 and GIoU terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub class: f64,
    pub l1: f64,
    pub giou: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            class: 2.0,
            l1: 5.0,
            giou: 2.0,
        }
    }
}

/// Cost of pairing a prediction with a ground truth from a precomputed score
/// and boxes in normalized `[x0, y0, x1, y1]` form.
pub fn pair_cost(score: f64, pred_box: &[f64; 4], gt_box: &[f64; 4], weights: &CostWeights) -> f64 {
    let l1: f64 = pred_box.iter().zip(gt_box).map(|(a, b)| (a - b).abs()).sum();
    let g = boxes::giou_raw(pred_box, gt_box);
    -weights.class * score + weights.l1 * l1 - weights.giou * g
}

/// Matching cost with boxes already normalized by the scene extent.
pub fn matching_cost(
    pred: (&EmbeddingVector, &crate::dataset::BoundingBox),
    gt: (&EmbeddingVector, &crate::dataset::BoundingBox),
    weights: &CostWeights,
    params: &ScoreParams,
) -> Result<f64> {
    pred.1.validate()?;
    gt.1.validate()?;
    let s = score(pred.0, gt.0, params)?;
    Ok(pair_cost(s, &pred.1.to_array(), &gt.1.to_array(), weights))
}
