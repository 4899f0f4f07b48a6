use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::BoundingBox;
use crate::embedding::{dot, EmbeddingVector};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Log-scale deltas are clamped to this magnitude when decoding boxes.
pub const MAX_LOG_SCALE: f64 = 4.0;

/// Linear detection head: an embedding projection compared against text
/// embeddings, and box deltas relative to the proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearHead {
    pub embed_dim: usize,
    pub feature_dim: usize,
    /// Row-major `embed_dim x feature_dim`.
    pub w_embed: Vec<f64>,
    /// Row-major `4 x feature_dim`.
    pub w_box: Vec<f64>,
    pub bias_box: [f64; 4],
}

impl LinearHead {
    /// Gaussian embedding weights with standard deviation `scale/sqrt(F)`,
    /// zero box weights.
    pub fn new(embed_dim: usize, feature_dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = derive_rng(seed, "head");
        let std = scale / (feature_dim as f64).sqrt();
        let w_embed = (0..embed_dim * feature_dim)
            .map(|_| std * { let v: f64 = StandardNormal.sample(&mut rng); v })
            .collect::<Vec<f64>>();
        LinearHead {
            embed_dim,
            feature_dim,
            w_embed,
            w_box: vec![0.0; 4 * feature_dim],
            bias_box: [0.0; 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_embed.len() != self.embed_dim * self.feature_dim
            || self.w_box.len() != 4 * self.feature_dim
        {
            return Err(Error::Shape("head parameter sizes do not match its dimensions".into()));
        }
        let finite = self
            .w_embed
            .iter()
            .chain(&self.w_box)
            .chain(&self.bias_box)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Format("head has non-finite parameters".into()));
        }
        Ok(())
    }

    fn check(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.feature_dim {
            return Err(Error::Shape(format!(
                "feature dimension {} vs head input {}",
                feature.len(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// Unnormalized predicted embedding `W_embed · f`.
    pub fn embed_raw(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.check(feature)?;
        Ok(self
            .w_embed
            .chunks_exact(self.feature_dim)
            .map(|row| dot(row, feature))
            .collect())
    }

    pub fn embed(&self, feature: &[f64]) -> Result<EmbeddingVector> {
        EmbeddingVector::normalize(self.embed_raw(feature)?)
    }

    pub fn box_deltas(&self, feature: &[f64]) -> Result<[f64; 4]> {
        self.check(feature)?;
        let mut d = self.bias_box;
        for (k, row) in self.w_box.chunks_exact(self.feature_dim).enumerate() {
            d[k] += dot(row, feature);
        }
        Ok(d)
    }

    pub fn predict_box(&self, proposal: &BoundingBox, feature: &[f64]) -> Result<BoundingBox> {
        let (b, _) = decode_box(proposal, &self.box_deltas(feature)?);
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Format(format!("cannot serialize head: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let head: LinearHead = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        head.validate()?;
        Ok(head)
    }
}

/// Apply deltas `(dx, dy, dw, dh)` to a proposal: the center moves by
/// `(dx·w, dy·h)`, the size scales by `exp(dw), exp(dh)`. Returns the box and
/// the Jacobian of `[x0, y0, x1, y1]` with respect to the deltas.
pub fn decode_box(proposal: &BoundingBox, d: &[f64; 4]) -> (BoundingBox, [[f64; 4]; 4]) {
    let (w, h) = (proposal.width(), proposal.height());
    let clamp = |v: f64| v.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE);
    let (sw, sh) = (clamp(d[2]), clamp(d[3]));
    // Written relative to the proposal edges so zero deltas reproduce it exactly.
    let grow_w = 0.5 * w * sw.exp_m1();
    let grow_h = 0.5 * h * sh.exp_m1();
    let (dx, dy) = (d[0] * w, d[1] * h);
    let b = BoundingBox {
        x0: proposal.x0 + dx - grow_w,
        y0: proposal.y0 + dy - grow_h,
        x1: proposal.x1 + dx + grow_w,
        y1: proposal.y1 + dy + grow_h,
    };
    let dw = if sw == d[2] { 0.5 * w * sw.exp() } else { 0.0 };
    let dh = if sh == d[3] { 0.5 * h * sh.exp() } else { 0.0 };
    let jac = [
        [w, 0.0, -dw, 0.0],
        [0.0, h, 0.0, -dh],
        [w, 0.0, dw, 0.0],
        [0.0, h, 0.0, dh],
    ];
    (b, jac)
}
